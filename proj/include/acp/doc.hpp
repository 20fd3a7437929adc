#pragma once

#include "acp/common.hpp"
#include "acp/decimal.hpp"

#include <concepts>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace acp {

/// Tree document: maps with text keys, sequences, text, 64-bit integers,
/// booleans and fixed-point decimals. Map keys are kept in UTF-8 byte order
/// (std::char_traits<char> compares as unsigned char), which is exactly the
/// canonical key order.
class Doc {
 public:
  using Seq = std::vector<Doc>;
  using Map = std::map<std::string, Doc, std::less<>>;

  enum class Kind { Bool, Int, Decimal, Text, Seq, Map };

  Doc() : value_(Map{}) {}
  Doc(bool b) : value_(b) {}
  template <std::integral T>
    requires(!std::same_as<T, bool>)
  Doc(T v) : value_(static_cast<std::int64_t>(v)) {}
  Doc(Decimal d) : value_(d) {}
  Doc(std::string s) : value_(std::move(s)) {}
  Doc(std::string_view s) : value_(std::string(s)) {}
  Doc(const char* s) : value_(std::string(s)) {}
  Doc(Seq s) : value_(std::move(s)) {}
  Doc(Map m) : value_(std::move(m)) {}

  static Doc map() { return Doc(Map{}); }
  static Doc seq() { return Doc(Seq{}); }

  Kind kind() const { return static_cast<Kind>(value_.index()); }
  bool is_map() const { return kind() == Kind::Map; }
  bool is_seq() const { return kind() == Kind::Seq; }
  bool is_text() const { return kind() == Kind::Text; }
  bool is_int() const { return kind() == Kind::Int; }
  bool is_number() const { return kind() == Kind::Int || kind() == Kind::Decimal; }

  // Accessors throw EncodingError on a kind mismatch.
  bool as_bool() const;
  std::int64_t as_int() const;
  Decimal as_decimal() const;  // integers widen to decimals
  const std::string& as_text() const;
  const Seq& as_seq() const;
  Seq& as_seq();
  const Map& as_map() const;
  Map& as_map();

  /// Inserts a key; throws EncodingError if it is already present.
  Doc& set(std::string key, Doc value);
  /// Inserts or replaces.
  Doc& put(std::string key, Doc value);
  Doc& push(Doc value);

  const Doc* find(std::string_view key) const;
  /// Throws EncodingError("missing field <key>").
  const Doc& at(std::string_view key) const;
  bool contains(std::string_view key) const { return find(key) != nullptr; }

  /// Structural equality; numbers compare by value (2 == 2.0).
  friend bool operator==(const Doc& a, const Doc& b);

 private:
  std::variant<bool, std::int64_t, Decimal, std::string, Seq, Map> value_;
};

/// Byte-deterministic text encoding: sorted keys, no whitespace, canonical
/// decimals, minimal string escaping. Throws EncodingError on invalid UTF-8.
std::string canonical_encode(const Doc& doc);
inline Bytes canonical_bytes(const Doc& doc) {
  std::string s = canonical_encode(doc);
  return Bytes(s.begin(), s.end());
}

/// Strict decoder: accepts only canonical encodings, so
/// canonical_encode(canonical_decode(b)) == b for every accepted b.
Doc canonical_decode(std::string_view text);

/// Lenient reader for hand-written files (scenario files, edited cards):
/// whitespace and any key order allowed; duplicate keys, floats with more
/// than six fractional digits and exponents are rejected. Errors carry the
/// 1-based line number in the detail text ("line N: ...").
Doc parse_document(std::string_view text);

/// Indented rendering for humans; parse_document reads it back.
std::string pretty(const Doc& doc);

}  // namespace acp

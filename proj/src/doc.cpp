#include "acp/doc.hpp"

#include <charconv>

namespace acp {

namespace {

[[noreturn]] void kind_error(const char* want) {
  throw Error(Errc::EncodingError, std::string("expected ") + want);
}

}  // namespace

bool Doc::as_bool() const {
  if (auto* b = std::get_if<bool>(&value_)) return *b;
  kind_error("boolean");
}

std::int64_t Doc::as_int() const {
  if (auto* i = std::get_if<std::int64_t>(&value_)) return *i;
  if (auto* d = std::get_if<Decimal>(&value_); d && d->is_integral()) return d->integral_part();
  kind_error("integer");
}

Decimal Doc::as_decimal() const {
  if (auto* d = std::get_if<Decimal>(&value_)) return *d;
  if (auto* i = std::get_if<std::int64_t>(&value_)) {
    if (*i > INT64_MAX / Decimal::kScale || *i < INT64_MIN / Decimal::kScale) kind_error("decimal in range");
    return Decimal::from_int(*i);
  }
  kind_error("decimal");
}

const std::string& Doc::as_text() const {
  if (auto* s = std::get_if<std::string>(&value_)) return *s;
  kind_error("text");
}

const Doc::Seq& Doc::as_seq() const {
  if (auto* s = std::get_if<Seq>(&value_)) return *s;
  kind_error("sequence");
}

Doc::Seq& Doc::as_seq() {
  if (auto* s = std::get_if<Seq>(&value_)) return *s;
  kind_error("sequence");
}

const Doc::Map& Doc::as_map() const {
  if (auto* m = std::get_if<Map>(&value_)) return *m;
  kind_error("map");
}

Doc::Map& Doc::as_map() {
  if (auto* m = std::get_if<Map>(&value_)) return *m;
  kind_error("map");
}

Doc& Doc::set(std::string key, Doc value) {
  auto [it, inserted] = as_map().emplace(std::move(key), std::move(value));
  if (!inserted) throw Error(Errc::EncodingError, "duplicate key " + it->first);
  return *this;
}

Doc& Doc::put(std::string key, Doc value) {
  as_map().insert_or_assign(std::move(key), std::move(value));
  return *this;
}

Doc& Doc::push(Doc value) {
  as_seq().push_back(std::move(value));
  return *this;
}

const Doc* Doc::find(std::string_view key) const {
  const auto& m = as_map();
  auto it = m.find(key);
  return it == m.end() ? nullptr : &it->second;
}

const Doc& Doc::at(std::string_view key) const {
  if (const Doc* d = find(key)) return *d;
  throw Error(Errc::EncodingError, "missing field " + std::string(key));
}

bool operator==(const Doc& a, const Doc& b) {
  if (a.is_number() && b.is_number()) {
    if (a.kind() == Doc::Kind::Int && b.kind() == Doc::Kind::Int) return a.as_int() == b.as_int();
    const Doc& dec = a.kind() == Doc::Kind::Decimal ? a : b;
    const Doc& other = a.kind() == Doc::Kind::Decimal ? b : a;
    if (other.kind() == Doc::Kind::Decimal) return a.as_decimal() == b.as_decimal();
    Decimal d = dec.as_decimal();
    return d.is_integral() && d.integral_part() == other.as_int();
  }
  return a.value_ == b.value_;
}

// ---------------------------------------------------------------------------
// encoding

namespace {

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xe0) == 0xc0) {
      len = 2;
      cp = c & 0x1f;
    } else if ((c & 0xf0) == 0xe0) {
      len = 3;
      cp = c & 0x0f;
    } else if ((c & 0xf8) == 0xf0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xc0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3f);
    }
    // overlong forms, surrogates, out of range
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) || cp > 0x10ffff ||
        (cp >= 0xd800 && cp <= 0xdfff)) {
      return false;
    }
    i += len;
  }
  return true;
}

void encode_text(std::string& out, std::string_view s) {
  if (!valid_utf8(s)) throw Error(Errc::EncodingError, "text is not valid UTF-8");
  static constexpr char kHex[] = "0123456789abcdef";
  out.push_back('"');
  for (char ch : s) {
    auto c = static_cast<unsigned char>(ch);
    switch (ch) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20) {
          out += "\\u00";
          out.push_back(kHex[c >> 4]);
          out.push_back(kHex[c & 0xf]);
        } else {
          out.push_back(ch);
        }
    }
  }
  out.push_back('"');
}

void encode_into(std::string& out, const Doc& d) {
  switch (d.kind()) {
    case Doc::Kind::Bool: out += d.as_bool() ? "true" : "false"; break;
    case Doc::Kind::Int: out += std::to_string(d.as_int()); break;
    case Doc::Kind::Decimal: out += d.as_decimal().to_string(); break;
    case Doc::Kind::Text: encode_text(out, d.as_text()); break;
    case Doc::Kind::Seq: {
      out.push_back('[');
      bool first = true;
      for (const auto& item : d.as_seq()) {
        if (!first) out.push_back(',');
        first = false;
        encode_into(out, item);
      }
      out.push_back(']');
      break;
    }
    case Doc::Kind::Map: {
      out.push_back('{');
      bool first = true;
      for (const auto& [k, v] : d.as_map()) {
        if (!first) out.push_back(',');
        first = false;
        encode_text(out, k);
        out.push_back(':');
        encode_into(out, v);
      }
      out.push_back('}');
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// parsing

class Parser {
 public:
  Parser(std::string_view text, bool lenient) : text_(text), lenient_(lenient) {}

  Doc parse_all() {
    skip_ws();
    Doc d = parse_value(0);
    skip_ws();
    if (pos_ != text_.size()) fail("trailing characters");
    return d;
  }

 private:
  static constexpr int kMaxDepth = 64;

  [[noreturn]] void fail(const std::string& what) const {
    std::size_t line = 1;
    for (std::size_t i = 0; i < pos_ && i < text_.size(); ++i) {
      if (text_[i] == '\n') ++line;
    }
    throw Error(Errc::EncodingError, "line " + std::to_string(line) + ": " + what);
  }

  void skip_ws() {
    if (!lenient_) return;
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == ' ' || c == '\n' || c == '\r' || c == '\t') {
        ++pos_;
      } else if (c == '#') {  // comment to end of line, lenient files only
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void expect(char c) {
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  bool consume_literal(std::string_view lit) {
    if (text_.substr(pos_, lit.size()) == lit) {
      pos_ += lit.size();
      return true;
    }
    return false;
  }

  Doc parse_value(int depth) {
    if (depth > kMaxDepth) fail("nesting too deep");
    char c = peek();
    if (c == '{') return parse_map(depth);
    if (c == '[') return parse_seq(depth);
    if (c == '"') return Doc(parse_string());
    if (consume_literal("true")) return Doc(true);
    if (consume_literal("false")) return Doc(false);
    if (c == '-' || (c >= '0' && c <= '9')) return parse_number();
    fail("unexpected character");
  }

  Doc parse_map(int depth) {
    expect('{');
    Doc out = Doc::map();
    skip_ws();
    if (peek() == '}') {
      ++pos_;
      return out;
    }
    for (;;) {
      skip_ws();
      std::string key = parse_string();
      skip_ws();
      expect(':');
      skip_ws();
      Doc v = parse_value(depth + 1);
      if (out.contains(key)) fail("duplicate key '" + key + "'");
      out.set(std::move(key), std::move(v));
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      expect('}');
      return out;
    }
  }

  Doc parse_seq(int depth) {
    expect('[');
    Doc out = Doc::seq();
    skip_ws();
    if (peek() == ']') {
      ++pos_;
      return out;
    }
    for (;;) {
      skip_ws();
      out.push(parse_value(depth + 1));
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      expect(']');
      return out;
    }
  }

  static void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    } else {
      out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
    }
  }

  std::uint32_t parse_hex4() {
    if (pos_ + 4 > text_.size()) fail("short \\u escape");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      char h = text_[pos_++];
      v <<= 4;
      if (h >= '0' && h <= '9') v |= static_cast<std::uint32_t>(h - '0');
      else if (h >= 'a' && h <= 'f') v |= static_cast<std::uint32_t>(h - 'a' + 10);
      else if (h >= 'A' && h <= 'F') v |= static_cast<std::uint32_t>(h - 'A' + 10);
      else fail("bad \\u escape");
    }
    return v;
  }

  std::string parse_string() {
    expect('"');
    std::string out;
    for (;;) {
      if (pos_ >= text_.size()) fail("unterminated string");
      char c = text_[pos_++];
      if (c == '"') break;
      if (static_cast<unsigned char>(c) < 0x20) fail("raw control character in string");
      if (c != '\\') {
        out.push_back(c);
        continue;
      }
      if (pos_ >= text_.size()) fail("unterminated escape");
      char e = text_[pos_++];
      switch (e) {
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        case '/': out.push_back('/'); break;
        case 'b': out.push_back('\b'); break;
        case 'f': out.push_back('\f'); break;
        case 'n': out.push_back('\n'); break;
        case 'r': out.push_back('\r'); break;
        case 't': out.push_back('\t'); break;
        case 'u': {
          std::uint32_t cp = parse_hex4();
          if (cp >= 0xd800 && cp <= 0xdbff) {
            if (!consume_literal("\\u")) fail("lone surrogate");
            std::uint32_t lo = parse_hex4();
            if (lo < 0xdc00 || lo > 0xdfff) fail("bad surrogate pair");
            cp = 0x10000 + ((cp - 0xd800) << 10) + (lo - 0xdc00);
          } else if (cp >= 0xdc00 && cp <= 0xdfff) {
            fail("lone surrogate");
          }
          append_utf8(out, cp);
          break;
        }
        default: fail("bad escape");
      }
    }
    if (!valid_utf8(out)) fail("string is not valid UTF-8");
    return out;
  }

  Doc parse_number() {
    std::size_t start = pos_;
    if (peek() == '-') ++pos_;
    while (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9') ++pos_;
    bool has_point = false;
    if (peek() == '.') {
      has_point = true;
      ++pos_;
      while (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9') ++pos_;
    }
    if (peek() == 'e' || peek() == 'E') fail("exponents are not allowed");
    std::string_view tok = text_.substr(start, pos_ - start);
    std::string_view digits = tok.front() == '-' ? tok.substr(1) : tok;
    if (digits.empty() || digits.front() == '.') fail("bad number");
    if (digits.size() > 1 && digits[0] == '0' && digits[1] != '.') fail("leading zero");
    if (!has_point) {
      std::int64_t v = 0;
      auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size()) fail("integer out of range");
      return Doc(v);
    }
    try {
      return Doc(Decimal::parse(tok));
    } catch (const Error&) {
      fail("decimal must have at most 6 fractional digits");
    }
  }

  std::string_view text_;
  bool lenient_;
  std::size_t pos_ = 0;
};

void pretty_into(std::string& out, const Doc& d, int indent) {
  auto pad = [&](int n) { out.append(static_cast<std::size_t>(n) * 2, ' '); };
  if (d.is_map() && !d.as_map().empty()) {
    out += "{\n";
    bool first = true;
    for (const auto& [k, v] : d.as_map()) {
      if (!first) out += ",\n";
      first = false;
      pad(indent + 1);
      out += canonical_encode(Doc(k));
      out += ": ";
      pretty_into(out, v, indent + 1);
    }
    out += "\n";
    pad(indent);
    out += "}";
  } else if (d.is_seq() && !d.as_seq().empty()) {
    out += "[\n";
    bool first = true;
    for (const auto& v : d.as_seq()) {
      if (!first) out += ",\n";
      first = false;
      pad(indent + 1);
      pretty_into(out, v, indent + 1);
    }
    out += "\n";
    pad(indent);
    out += "]";
  } else {
    out += canonical_encode(d);
  }
}

}  // namespace

std::string canonical_encode(const Doc& doc) {
  std::string out;
  encode_into(out, doc);
  return out;
}

Doc canonical_decode(std::string_view text) {
  Doc d = Parser(text, false).parse_all();
  if (canonical_encode(d) != text) throw Error(Errc::EncodingError, "input is not in canonical form");
  return d;
}

Doc parse_document(std::string_view text) { return Parser(text, true).parse_all(); }

std::string pretty(const Doc& doc) {
  std::string out;
  pretty_into(out, doc, 0);
  out += "\n";
  return out;
}

}  // namespace acp

#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>

namespace acp {

/// Fixed-point decimal with six fractional digits, stored as an integer count
/// of millionths. Protocol documents never carry binary floating point.
class Decimal {
 public:
  static constexpr std::int64_t kScale = 1'000'000;
  static constexpr int kMaxFractionDigits = 6;

  constexpr Decimal() = default;
  static constexpr Decimal from_micros(std::int64_t micros) {
    Decimal d;
    d.micros_ = micros;
    return d;
  }
  static constexpr Decimal from_int(std::int64_t whole) { return from_micros(whole * kScale); }

  /// Parses "-12.345", "0.050000", "7". At most six fractional digits,
  /// no exponent, no leading '+'.
  static Decimal parse(std::string_view text);

  /// num/den rounded half-to-even to six places. den must be > 0.
  static Decimal from_ratio(std::int64_t num, std::int64_t den);

  constexpr std::int64_t micros() const { return micros_; }
  constexpr bool is_integral() const { return micros_ % kScale == 0; }
  constexpr std::int64_t integral_part() const { return micros_ / kScale; }

  /// Canonical rendering: no trailing zeros, no trailing '.', "-0" never appears.
  std::string to_string() const;
  double to_double() const { return static_cast<double>(micros_) / kScale; }

  friend constexpr Decimal operator+(Decimal a, Decimal b) { return from_micros(a.micros_ + b.micros_); }
  friend constexpr Decimal operator-(Decimal a, Decimal b) { return from_micros(a.micros_ - b.micros_); }
  /// Product rounded half-to-even to six places.
  friend Decimal operator*(Decimal a, Decimal b);

  friend constexpr auto operator<=>(Decimal, Decimal) = default;
  friend constexpr bool operator==(Decimal, Decimal) = default;

 private:
  std::int64_t micros_ = 0;
};

Decimal clamp(Decimal v, Decimal lo, Decimal hi);

}  // namespace acp

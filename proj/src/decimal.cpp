#include "acp/decimal.hpp"

#include "acp/common.hpp"

#include <limits>

namespace acp {

Decimal Decimal::parse(std::string_view text) {
  auto fail = [&] { return Error(Errc::EncodingError, "bad decimal '" + std::string(text) + "'"); };
  if (text.empty()) throw fail();
  std::size_t i = 0;
  bool negative = false;
  if (text[0] == '-') {
    negative = true;
    i = 1;
  }
  if (i >= text.size()) throw fail();
  constexpr std::int64_t kMax = std::numeric_limits<std::int64_t>::max() / kScale;
  std::int64_t whole = 0;
  std::size_t digits = 0;
  for (; i < text.size() && text[i] != '.'; ++i, ++digits) {
    char c = text[i];
    if (c < '0' || c > '9') throw fail();
    if (whole > (kMax - (c - '0')) / 10) throw fail();
    whole = whole * 10 + (c - '0');
  }
  if (digits == 0) throw fail();
  std::int64_t frac = 0;
  int frac_digits = 0;
  if (i < text.size()) {
    ++i;  // '.'
    if (i >= text.size()) throw fail();
    for (; i < text.size(); ++i, ++frac_digits) {
      char c = text[i];
      if (c < '0' || c > '9') throw fail();
      if (frac_digits >= kMaxFractionDigits) throw fail();
      frac = frac * 10 + (c - '0');
    }
  }
  for (int k = frac_digits; k < kMaxFractionDigits; ++k) frac *= 10;
  std::int64_t micros = whole * kScale + frac;
  return from_micros(negative ? -micros : micros);
}

Decimal Decimal::from_ratio(std::int64_t num, std::int64_t den) {
  if (den <= 0) throw std::invalid_argument("Decimal::from_ratio denominator must be positive");
  __int128 scaled = static_cast<__int128>(num) * kScale;
  __int128 q = scaled / den;
  __int128 r = scaled % den;
  if (r < 0) {
    r += den;
    q -= 1;
  }
  // half-to-even on the remainder
  __int128 twice = 2 * r;
  if (twice > den || (twice == den && (q & 1) != 0)) q += 1;
  return from_micros(static_cast<std::int64_t>(q));
}

Decimal operator*(Decimal a, Decimal b) {
  __int128 p = static_cast<__int128>(a.micros()) * b.micros();
  __int128 q = p / Decimal::kScale;
  __int128 r = p % Decimal::kScale;
  if (r < 0) {
    r += Decimal::kScale;
    q -= 1;
  }
  __int128 twice = 2 * r;
  if (twice > Decimal::kScale || (twice == Decimal::kScale && (q & 1) != 0)) q += 1;
  return Decimal::from_micros(static_cast<std::int64_t>(q));
}

std::string Decimal::to_string() const {
  std::int64_t m = micros_;
  bool negative = m < 0;
  // |INT64_MIN| is not representable; widen.
  unsigned long long mag = negative ? 0ULL - static_cast<unsigned long long>(m) : static_cast<unsigned long long>(m);
  unsigned long long whole = mag / kScale;
  unsigned long long frac = mag % kScale;
  std::string out = negative ? "-" : "";
  out += std::to_string(whole);
  if (frac != 0) {
    std::string f = std::to_string(frac);
    f.insert(0, static_cast<std::size_t>(kMaxFractionDigits) - f.size(), '0');
    while (!f.empty() && f.back() == '0') f.pop_back();
    out += '.';
    out += f;
  }
  return out;
}

Decimal clamp(Decimal v, Decimal lo, Decimal hi) {
  if (v < lo) return lo;
  if (hi < v) return hi;
  return v;
}

}  // namespace acp

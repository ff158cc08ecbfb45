#pragma once

#include <charconv>
#include <compare>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <string_view>

#include "pica/error.hpp"

namespace pica {

// Exact signed rational with a 64-bit numerator and positive denominator,
// always stored in lowest terms. Grade arithmetic runs on this type; doubles
// appear only once a value enters a distance or statistics computation.
class Rational {
 public:
  constexpr Rational() = default;
  constexpr Rational(std::int64_t value) : num_(value) {}  // NOLINT(implicit)
  Rational(std::int64_t num, std::int64_t den) { assign(num, den); }

  std::int64_t num() const noexcept { return num_; }
  std::int64_t den() const noexcept { return den_; }

  double to_double() const noexcept {
    return static_cast<double>(num_) / static_cast<double>(den_);
  }
  bool is_zero() const noexcept { return num_ == 0; }
  bool is_negative() const noexcept { return num_ < 0; }

  // Accepts "3", "-0.25", "9/2". Exponent notation is rejected.
  static Rational parse(std::string_view text);
  // Converts through the shortest round-trip decimal form, so 0.1 becomes 1/10.
  static Rational from_double(double value);

  // Terminating decimals print as decimals ("4.5"); everything else as "p/q".
  std::string to_string() const;

  friend Rational operator+(const Rational& a, const Rational& b) {
    return from_wide(wide(a.num_) * b.den_ + wide(b.num_) * a.den_, wide(a.den_) * b.den_);
  }
  friend Rational operator-(const Rational& a, const Rational& b) {
    return from_wide(wide(a.num_) * b.den_ - wide(b.num_) * a.den_, wide(a.den_) * b.den_);
  }
  friend Rational operator*(const Rational& a, const Rational& b) {
    return from_wide(wide(a.num_) * b.num_, wide(a.den_) * b.den_);
  }
  friend Rational operator/(const Rational& a, const Rational& b) {
    if (b.num_ == 0) fail(ErrorKind::InvalidArgument, "rational division by zero");
    return from_wide(wide(a.num_) * b.den_, wide(a.den_) * b.num_);
  }
  Rational operator-() const { return from_wide(-wide(num_), den_); }
  Rational& operator+=(const Rational& o) { return *this = *this + o; }
  Rational& operator-=(const Rational& o) { return *this = *this - o; }

  friend bool operator==(const Rational& a, const Rational& b) = default;
  friend std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
    return wide(a.num_) * b.den_ <=> wide(b.num_) * a.den_;
  }

  friend std::ostream& operator<<(std::ostream& os, const Rational& r) {
    return os << r.to_string();
  }

 private:
  using Wide = __int128;
  static Wide wide(std::int64_t v) { return static_cast<Wide>(v); }

  static Wide wide_gcd(Wide a, Wide b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
      Wide t = a % b;
      a = b;
      b = t;
    }
    return a;
  }

  static Rational from_wide(Wide num, Wide den) {
    if (den == 0) fail(ErrorKind::InvalidArgument, "rational with zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    Wide g = wide_gcd(num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
    constexpr Wide lo = INT64_MIN;
    constexpr Wide hi = INT64_MAX;
    if (num < lo || num > hi || den > hi) fail(ErrorKind::InvalidArgument, "rational overflow");
    Rational r;
    r.num_ = static_cast<std::int64_t>(num);
    r.den_ = static_cast<std::int64_t>(den);
    return r;
  }

  void assign(std::int64_t num, std::int64_t den) { *this = from_wide(num, den); }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

inline Rational Rational::parse(std::string_view text) {
  auto bad = [&]() -> Rational {
    fail(ErrorKind::Parse, "not a rational number: '" + std::string(text) + "'");
  };
  auto trim = [](std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
  };
  std::string_view s = trim(text);
  if (s.empty()) return bad();

  if (auto slash = s.find('/'); slash != std::string_view::npos) {
    Rational n = parse(s.substr(0, slash));
    Rational d = parse(s.substr(slash + 1));
    if (d.is_zero()) return bad();
    return n / d;
  }

  bool negative = false;
  if (s.front() == '-' || s.front() == '+') {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  std::string_view whole = s;
  std::string_view frac;
  if (auto dot = s.find('.'); dot != std::string_view::npos) {
    whole = s.substr(0, dot);
    frac = s.substr(dot + 1);
  }
  if (whole.empty() && frac.empty()) return bad();
  for (char c : whole)
    if (c < '0' || c > '9') return bad();
  for (char c : frac)
    if (c < '0' || c > '9') return bad();
  // Trailing zeros carry no value and would only risk overflow.
  while (!frac.empty() && frac.back() == '0') frac.remove_suffix(1);
  if (frac.size() > 18) return bad();

  std::int64_t w = 0;
  if (!whole.empty()) {
    auto [ptr, ec] = std::from_chars(whole.data(), whole.data() + whole.size(), w);
    if (ec != std::errc{} || ptr != whole.data() + whole.size()) return bad();
  }
  Rational value(w);
  if (!frac.empty()) {
    std::int64_t f = 0;
    auto [ptr, ec] = std::from_chars(frac.data(), frac.data() + frac.size(), f);
    if (ec != std::errc{}) return bad();
    std::int64_t scale = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) scale *= 10;
    value += Rational(f, scale);
  }
  return negative ? -value : value;
}

inline Rational Rational::from_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed);
  if (ec != std::errc{}) fail(ErrorKind::InvalidArgument, "cannot represent number as rational");
  return parse(std::string_view(buf, static_cast<std::size_t>(ptr - buf)));
}

inline std::string Rational::to_string() const {
  std::int64_t d = den_;
  int twos = 0, fives = 0;
  while (d % 2 == 0) d /= 2, ++twos;
  while (d % 5 == 0) d /= 5, ++fives;
  if (d != 1) return std::to_string(num_) + "/" + std::to_string(den_);
  if (den_ == 1) return std::to_string(num_);

  int digits = twos > fives ? twos : fives;
  Wide scale = 1;
  for (int i = 0; i < digits; ++i) scale *= 10;
  Wide scaled = wide(num_) * (scale / den_);
  bool negative = scaled < 0;
  if (negative) scaled = -scaled;
  Wide whole = scaled / scale;
  Wide frac = scaled % scale;
  std::string frac_text(static_cast<std::size_t>(digits), '0');
  for (int i = digits - 1; i >= 0; --i) {
    frac_text[static_cast<std::size_t>(i)] = static_cast<char>('0' + static_cast<int>(frac % 10));
    frac /= 10;
  }
  return (negative ? "-" : "") + std::to_string(static_cast<std::int64_t>(whole)) + "." + frac_text;
}

}  // namespace pica

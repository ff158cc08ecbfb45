#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "pica/error.hpp"

// Statistics kernel: Student-t and normal distribution functions, two-sample
// t-test, Mann-Whitney U, and OLS slope inference. Self-contained on purpose;
// the test suite checks it against Boost.Math and brute-force oracles.
namespace pica::stats {

// ---- special functions ------------------------------------------------------

namespace detail {

// Modified Lentz evaluation of the incomplete-beta continued fraction.
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (a <= 0 || b <= 0) fail(ErrorKind::InvalidArgument, "incomplete beta needs a, b > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0))
    return std::exp(log_front) * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - std::exp(log_front) * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

// P(|T| >= |t|) for Student's t with `df` degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
  if (df <= 0) fail(ErrorKind::InvalidArgument, "degrees of freedom must be positive");
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return 0.0;
  return std::clamp(incomplete_beta(0.5 * df, 0.5, df / (df + t * t)), 0.0, 1.0);
}

inline double student_t_cdf(double t, double df) {
  const double tail = 0.5 * student_t_two_sided_p(t, df);
  return t >= 0 ? 1.0 - tail : tail;
}

// Inverse of student_t_cdf for p in (0, 1).
inline double student_t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) fail(ErrorKind::InvalidArgument, "quantile probability must lie in (0, 1)");
  if (p == 0.5) return 0.0;
  const double sign = p > 0.5 ? 1.0 : -1.0;
  const double two_sided = 2.0 * (p > 0.5 ? 1.0 - p : p);
  double lo = 0.0, hi = 1.0;
  while (student_t_two_sided_p(hi, df) > two_sided) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_two_sided_p(mid, df) > two_sided ? lo : hi) = mid;
  }
  return sign * 0.5 * (lo + hi);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double normal_two_sided_p(double z) { return std::erfc(std::fabs(z) / std::sqrt(2.0)); }

// ---- descriptive ------------------------------------------------------------

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Unbiased sample variance (n - 1 denominator), two-pass.
inline double sample_variance(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / static_cast<double>(xs.size() - 1);
}

// Linear-interpolation quantile on sorted data (the R type-7 definition).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) fail(ErrorKind::InvalidArgument, "quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct BoxplotSummary {
  std::size_t n = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
  double whisker_low = 0, whisker_high = 0;  // most extreme data within 1.5 IQR
  std::vector<double> outliers;
};

inline BoxplotSummary boxplot(std::vector<double> xs) {
  if (xs.empty()) fail(ErrorKind::InvalidArgument, "boxplot of empty sample");
  std::sort(xs.begin(), xs.end());
  BoxplotSummary b;
  b.n = xs.size();
  b.min = xs.front();
  b.max = xs.back();
  b.q1 = quantile_sorted(xs, 0.25);
  b.median = quantile_sorted(xs, 0.5);
  b.q3 = quantile_sorted(xs, 0.75);
  b.mean = mean(xs);
  const double iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * iqr, hi_fence = b.q3 + 1.5 * iqr;
  b.whisker_low = b.max;
  b.whisker_high = b.min;
  for (double x : xs) {
    if (x < lo_fence || x > hi_fence) {
      b.outliers.push_back(x);
    } else {
      b.whisker_low = std::min(b.whisker_low, x);
      b.whisker_high = std::max(b.whisker_high, x);
    }
  }
  return b;
}

struct Histogram {
  double low = -1.0, high = 1.0, width = 0.1;
  std::vector<std::size_t> counts;
  std::size_t underflow = 0, overflow = 0;
};

// Fixed-width bins, closed on the left except the last bin which also takes
// `high`. Values outside [low, high] are tallied separately.
inline Histogram histogram(std::span<const double> xs, double low = -1.0, double high = 1.0, double width = 0.1) {
  Histogram h{low, high, width, {}, 0, 0};
  const auto bins = static_cast<std::size_t>(std::llround((high - low) / width));
  h.counts.assign(bins, 0);
  for (double x : xs) {
    if (x < low) {
      ++h.underflow;
    } else if (x > high) {
      ++h.overflow;
    } else {
      // Round-to-nearest guards against 0.3/0.1 = 2.9999...
      double pos = (x - low) / width;
      auto k = static_cast<std::size_t>(std::floor(pos + 1e-9));
      if (k >= bins) k = bins - 1;
      ++h.counts[k];
    }
  }
  return h;
}

// ---- hypothesis tests -------------------------------------------------------

enum class Method { StudentT, WelchT, MannWhitneyU, SlopeT };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::StudentT: return "student_t";
    case Method::WelchT: return "welch_t";
    case Method::MannWhitneyU: return "mann_whitney_u";
    case Method::SlopeT: return "slope_t";
  }
  return "?";
}

struct TestResult {
  Method method = Method::StudentT;
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n_x = 0, n_y = 0;
  double mean_x = 0.0, mean_y = 0.0;
  double df = 0.0;          // t-tests only
  double rank_sum_x = 0.0;  // Mann-Whitney only
  double z = 0.0;           // Mann-Whitney normal approximation only
  bool exact = false;       // Mann-Whitney exact distribution used
  bool degenerate = false;  // zero variance forced the p-value
};

enum class Variance { Pooled, Welch };

namespace detail {
inline bool effectively_zero(double variance, std::span<const double> x, std::span<const double> y) {
  double scale = 0.0;
  for (double v : x) scale = std::max(scale, std::fabs(v));
  for (double v : y) scale = std::max(scale, std::fabs(v));
  const double tol = 64.0 * std::numeric_limits<double>::epsilon() * std::max(scale, 1e-300);
  return variance <= tol * tol;
}
}  // namespace detail

// Two-sided two-sample t-test. Pooled variance unless `variance` is Welch.
inline TestResult two_sample_t_test(std::span<const double> x, std::span<const double> y,
                                    Variance variance = Variance::Pooled) {
  if (x.size() < 2 || y.size() < 2) fail(ErrorKind::InvalidArgument, "t-test needs at least two values per sample");
  TestResult r;
  r.method = variance == Variance::Pooled ? Method::StudentT : Method::WelchT;
  r.n_x = x.size();
  r.n_y = y.size();
  r.mean_x = mean(x);
  r.mean_y = mean(y);
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  const double vx = sample_variance(x), vy = sample_variance(y);
  const double diff = r.mean_x - r.mean_y;

  double se2 = 0.0;
  if (variance == Variance::Pooled) {
    r.df = nx + ny - 2.0;
    const double pooled = ((nx - 1.0) * vx + (ny - 1.0) * vy) / r.df;
    se2 = pooled * (1.0 / nx + 1.0 / ny);
  } else {
    const double ax = vx / nx, ay = vy / ny;
    se2 = ax + ay;
    r.df = se2 > 0 ? se2 * se2 / (ax * ax / (nx - 1.0) + ay * ay / (ny - 1.0)) : nx + ny - 2.0;
  }

  if (detail::effectively_zero(se2, x, y)) {
    if (diff == 0.0) {
      r.statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.statistic = std::copysign(std::numeric_limits<double>::infinity(), diff);
      r.p_value = 0.0;
      r.degenerate = true;
    }
    return r;
  }
  r.statistic = diff / std::sqrt(se2);
  r.p_value = student_t_two_sided_p(r.statistic, r.df);
  return r;
}

namespace detail {

// Midranks of the pooled sample; also returns the tie-correction term
// sum(t^3 - t) over tie groups.
inline std::vector<double> midranks(std::span<const double> pooled, double& tie_term) {
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> ranks(pooled.size());
  tie_term = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  return ranks;
}

// Number of rank arrangements giving each U value for sample sizes (m, n):
// the coefficients of the Gaussian binomial [m+n choose m].
inline std::vector<double> u_distribution(std::size_t m, std::size_t n) {
  // table[i][j] holds the distribution for sizes (i, j); built row by row.
  std::vector<std::vector<std::vector<double>>> table(m + 1, std::vector<std::vector<double>>(n + 1));
  for (std::size_t i = 0; i <= m; ++i) {
    for (std::size_t j = 0; j <= n; ++j) {
      if (i == 0 || j == 0) {
        table[i][j] = {1.0};
        continue;
      }
      // Largest element is from x (contributes j to U) or from y.
      std::vector<double> dist(i * j + 1, 0.0);
      const auto& from_x = table[i - 1][j];
      const auto& from_y = table[i][j - 1];
      for (std::size_t u = 0; u < from_x.size(); ++u) dist[u + j] += from_x[u];
      for (std::size_t u = 0; u < from_y.size(); ++u) dist[u] += from_y[u];
      table[i][j] = std::move(dist);
    }
  }
  return table[m][n];
}

}  // namespace detail

inline constexpr std::size_t kExactMannWhitneyLimit = 12;

// Two-sided Mann-Whitney U. The statistic is U for x (pairs with x > y, ties
// counting one half). Exact null distribution for tie-free samples with
// n_x + n_y <= 12; otherwise the tie-corrected normal approximation with
// continuity correction.
inline TestResult mann_whitney_u(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) fail(ErrorKind::InvalidArgument, "Mann-Whitney needs non-empty samples");
  TestResult r;
  r.method = Method::MannWhitneyU;
  r.n_x = x.size();
  r.n_y = y.size();
  r.mean_x = mean(x);
  r.mean_y = mean(y);

  std::vector<double> pooled(x.begin(), x.end());
  pooled.insert(pooled.end(), y.begin(), y.end());
  double tie_term = 0.0;
  const auto ranks = detail::midranks(pooled, tie_term);
  r.rank_sum_x = std::accumulate(ranks.begin(), ranks.begin() + static_cast<std::ptrdiff_t>(x.size()), 0.0);
  const double m = static_cast<double>(x.size()), n = static_cast<double>(y.size());
  const double big_n = m + n;
  r.statistic = r.rank_sum_x - m * (m + 1.0) / 2.0;

  if (tie_term == 0.0 && x.size() + y.size() <= kExactMannWhitneyLimit) {
    r.exact = true;
    const auto dist = detail::u_distribution(x.size(), y.size());
    const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
    const auto u = static_cast<std::size_t>(std::llround(r.statistic));
    double lower = 0.0, upper = 0.0;
    for (std::size_t k = 0; k < dist.size(); ++k) {
      if (k <= u) lower += dist[k];
      if (k >= u) upper += dist[k];
    }
    r.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / total);
    return r;
  }

  const double mu = m * n / 2.0;
  const double var = m * n / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
  if (var <= 0.0) {
    r.p_value = 1.0;
    return r;
  }
  const double shifted = std::max(0.0, std::fabs(r.statistic - mu) - 0.5);
  r.z = std::copysign(shifted / std::sqrt(var), r.statistic - mu);
  r.p_value = std::min(1.0, normal_two_sided_p(r.z));
  return r;
}

// ---- regression -------------------------------------------------------------

struct RegressionResult {
  double slope = 0.0, intercept = 0.0;
  double slope_stderr = 0.0;
  double t_statistic = 0.0;
  double p_value = 1.0;
  double ci_low = 0.0, ci_high = 0.0;  // 95% two-sided for the slope
  std::size_t n = 0;
  double df = 0.0;
  double residual_variance = 0.0;
  double mean_x = 0.0, sxx = 0.0;  // kept for mean-response bands
  bool degenerate = false;         // zero residual variance with nonzero slope
};

inline RegressionResult slope_test(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) fail(ErrorKind::InvalidArgument, "slope test needs paired samples");
  if (xs.size() < 3) fail(ErrorKind::InvalidArgument, "slope test needs at least three points");
  RegressionResult r;
  r.n = xs.size();
  r.df = static_cast<double>(r.n) - 2.0;
  r.mean_x = mean(xs);
  const double my = mean(ys);
  double sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - r.mean_x, dy = ys[i] - my;
    r.sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (r.sxx == 0.0) fail(ErrorKind::InvalidArgument, "degenerate abscissa");
  r.slope = sxy / r.sxx;
  r.intercept = my - r.slope * r.mean_x;
  double sse = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (r.intercept + r.slope * xs[i]);
    sse += e * e;
  }
  r.residual_variance = sse / r.df;
  r.slope_stderr = std::sqrt(r.residual_variance / r.sxx);

  const bool flat = syy == 0.0;
  const bool perfect = flat || sse <= 1e-24 * syy;
  if (perfect) {
    r.residual_variance = 0.0;
    r.slope_stderr = 0.0;
    r.ci_low = r.ci_high = r.slope;
    if (flat || r.slope == 0.0) {
      r.slope = 0.0;
      r.t_statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.t_statistic = std::copysign(std::numeric_limits<double>::infinity(), r.slope);
      r.p_value = 0.0;
      r.degenerate = true;
    }
    return r;
  }
  r.t_statistic = r.slope / r.slope_stderr;
  r.p_value = student_t_two_sided_p(r.t_statistic, r.df);
  const double crit = student_t_quantile(0.975, r.df);
  r.ci_low = r.slope - crit * r.slope_stderr;
  r.ci_high = r.slope + crit * r.slope_stderr;
  return r;
}

struct BandPoint {
  double x = 0, fit = 0, lower = 0, upper = 0;
};

// Pointwise 95% confidence band for the mean response at each x.
inline std::vector<BandPoint> mean_response_band(const RegressionResult& r, std::span<const double> at) {
  std::vector<BandPoint> out;
  if (r.df <= 0) return out;
  const double crit = student_t_quantile(0.975, r.df);
  const double s = std::sqrt(r.residual_variance);
  for (double x : at) {
    const double fit = r.intercept + r.slope * x;
    const double se = s * std::sqrt(1.0 / static_cast<double>(r.n) + (x - r.mean_x) * (x - r.mean_x) / r.sxx);
    out.push_back({x, fit, fit - crit * se, fit + crit * se});
  }
  return out;
}

}  // namespace pica::stats

#pragma once

// Descriptive statistics used by the analytics reports.

#include <algorithm>
#include <cmath>
#include <span>
#include <string_view>
#include <vector>

#include "mrbanks/core.hpp"

namespace mrbanks::stats {

// How a difference between two probability estimates is expressed in
// standard-deviation units.
enum class SdPolicy : std::uint8_t {
  quadrature,    // (a - b) / sqrt(a.sd^2 + b.sd^2)
  first_sd,      // (a - b) / a.sd
  pooled_two_proportion,  // classic pooled two-sample z-test
};

inline constexpr std::string_view to_string(SdPolicy p) {
  switch (p) {
    case SdPolicy::quadrature: return "quadrature";
    case SdPolicy::first_sd: return "first_sd";
    case SdPolicy::pooled_two_proportion: return "pooled_two_proportion";
  }
  return "?";
}

inline double sd_units(const ProbEstimate& a, const ProbEstimate& b,
                       SdPolicy policy = SdPolicy::quadrature) {
  if (a.n == 0 && b.n == 0 && a.sd == 0.0 && b.sd == 0.0)
    fail(ErrorCode::empty_sample, "neither estimate carries a sample");
  const double diff = a.p - b.p;
  double denom = 0.0;
  switch (policy) {
    case SdPolicy::quadrature: denom = std::sqrt(a.sd * a.sd + b.sd * b.sd); break;
    case SdPolicy::first_sd: denom = a.sd; break;
    case SdPolicy::pooled_two_proportion: {
      if (a.n == 0 || b.n == 0) fail(ErrorCode::empty_sample, "pooled policy needs two samples");
      const double na = static_cast<double>(a.n), nb = static_cast<double>(b.n);
      const double pooled = (a.p * na + b.p * nb) / (na + nb);
      denom = std::sqrt(pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb));
      break;
    }
  }
  if (diff == 0.0) return 0.0;
  if (denom == 0.0) return diff > 0 ? INFINITY : -INFINITY;
  return diff / denom;
}

// Sample quantile with linear interpolation between order statistics
// (Hyndman-Fan type 7). `sorted` must be ascending.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) fail(ErrorCode::empty_sample, "quantile of empty sample");
  if (q <= 0.0) return sorted.front();
  if (q >= 1.0) return sorted.back();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, q);
}

struct Quartiles {
  double q1 = 0.0, q2 = 0.0, q3 = 0.0;
  std::size_t n = 0;
};

inline Quartiles quartiles(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return {quantile_sorted(values, 0.25), quantile_sorted(values, 0.5), quantile_sorted(values, 0.75),
          values.size()};
}

inline double mean(std::span<const double> v) {
  if (v.empty()) fail(ErrorCode::empty_sample, "mean of empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Standard error of the mean (sample sd / sqrt(n)).
inline double standard_error(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double intercept_stderr = 0.0;
  std::size_t n = 0;
};

// Ordinary least squares of y on x with the usual homoscedastic errors.
inline LinearFit ols(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::invalid_argument, "ols: length mismatch");
  if (x.size() < 3) fail(ErrorCode::empty_sample, "ols needs at least 3 points");
  const double n = static_cast<double>(x.size());
  const double mx = mean(x), my = mean(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) fail(ErrorCode::invalid_argument, "ols: regressor has no variance");
  LinearFit f;
  f.n = x.size();
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - (f.intercept + f.slope * x[i]);
    ssr += e * e;
  }
  const double sigma2 = ssr / (n - 2.0);
  f.slope_stderr = std::sqrt(sigma2 / sxx);
  f.intercept_stderr = std::sqrt(sigma2 * (1.0 / n + mx * mx / sxx));
  return f;
}

}  // namespace mrbanks::stats

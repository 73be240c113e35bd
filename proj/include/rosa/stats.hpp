#pragma once

#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <span>

#include "rosa/error.hpp"

namespace rosa::stats {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Upper tail 1 - Phi(x), accurate for large x.
inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

/// Standard normal quantile z_p.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("normal_quantile: p must lie in (0, 1)");
  static const boost::math::normal_distribution<double> std_normal;
  return boost::math::quantile(std_normal, p);
}

inline double mean(std::span<const double> xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

/// Coefficient of determination 1 - SS_res / SS_tot of `predicted` against
/// `observed`. NaN when observed has zero variance.
inline double r_squared(std::span<const double> observed, std::span<const double> predicted) {
  if (observed.size() != predicted.size())
    throw InvalidArgument("r_squared: length mismatch");
  const double m = mean(observed);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double e = observed[i] - predicted[i];
    const double c = observed[i] - m;
    ss_res += e * e;
    ss_tot += c * c;
  }
  if (ss_tot == 0.0) return std::nan("");
  return 1.0 - ss_res / ss_tot;
}

}  // namespace rosa::stats

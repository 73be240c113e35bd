#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <utility>

#include "rosa/designs/trial_design.hpp"
#include "rosa/stats.hpp"

namespace rosa {

/// Joint law of two binary outcomes given both margins and their Pearson
/// correlation. The two-by-two table is fully determined by (p, q, rho).
class BivariateBernoulli {
 public:
  BivariateBernoulli(double p, double q, double rho) {
    if (!(p >= 0.0 && p <= 1.0 && q >= 0.0 && q <= 1.0))
      throw InvalidArgument("bivariate Bernoulli: margins must lie in [0, 1]");
    p11_ = p * q + rho * std::sqrt(p * (1.0 - p) * q * (1.0 - q));
    const double lo = std::max(0.0, p + q - 1.0);
    const double hi = std::min(p, q);
    // small slack so that triples sitting exactly on a bound are accepted
    constexpr double slack = 1e-12;
    if (p11_ < lo - slack) {
      std::ostringstream os;
      os << "bivariate Bernoulli infeasible: P(Y=1,S=1)=" << p11_
         << " below Frechet lower bound max(0, p+q-1)=" << lo;
      throw InvalidArgument(os.str());
    }
    if (p11_ > hi + slack) {
      std::ostringstream os;
      os << "bivariate Bernoulli infeasible: P(Y=1,S=1)=" << p11_
         << " above Frechet upper bound min(p, q)=" << hi;
      throw InvalidArgument(os.str());
    }
    p11_ = std::clamp(p11_, lo, hi);
    p10_ = p - p11_;
    p01_ = q - p11_;
  }

  double p11() const noexcept { return p11_; }
  double p10() const noexcept { return p10_; }
  double p01() const noexcept { return p01_; }
  double p00() const noexcept { return 1.0 - p11_ - p10_ - p01_; }

  /// Returns (y, s).
  std::pair<int, int> operator()(Rng& rng) const {
    const double u = uniform01(rng);
    if (u < p11_) return {1, 1};
    if (u < p11_ + p10_) return {1, 0};
    if (u < p11_ + p10_ + p01_) return {0, 1};
    return {0, 0};
  }

 private:
  double p11_ = 0.0, p10_ = 0.0, p01_ = 0.0;
};

inline std::pair<int, int> sample_bivariate_bernoulli(double p, double q, double rho, Rng& rng) {
  return BivariateBernoulli(p, q, rho)(rng);
}

/// Two-arm, two-stage trial with a binary primary outcome Y and a binary
/// auxiliary outcome S used for a conditional-power futility look.
struct AuxInterimConfig {
  int N0 = 100, N1 = 100;  // planned per-arm totals
  int n0 = 50, n1 = 50;    // per-arm patients with S observed at the interim
  double alpha = 0.05;
  double cp_cutoff = 0.5;
  // Expected patients enrolled per unit enrollment rate while waiting for the
  // interim S outcomes. 0 reproduces the plain n0 + n1 stopping sample size.
  double interim_delay = 0.0;

  void validate() const {
    if (!(0 < n0 && n0 < N0 && 0 < n1 && n1 < N1))
      throw InvalidArgument("aux-interim: need 0 < n_a < N_a for both arms");
    if (!(alpha > 0.0 && alpha < 0.5)) throw InvalidArgument("aux-interim: alpha must lie in (0, 0.5)");
    if (!(cp_cutoff > 0.0 && cp_cutoff < 1.0))
      throw InvalidArgument("aux-interim: cp_cutoff must lie in (0, 1)");
    if (!(interim_delay >= 0.0)) throw InvalidArgument("aux-interim: interim_delay must be >= 0");
  }
};

/// Information fraction t_S = (1/N1 + 1/N0) / (1/n1 + 1/n0).
inline double information_fraction(const AuxInterimConfig& cfg) {
  return (1.0 / cfg.N1 + 1.0 / cfg.N0) / (1.0 / cfg.n1 + 1.0 / cfg.n0);
}

/// CP(t) = 1 - Phi((z_{1-alpha} - z_interim sqrt(t)) / sqrt(1 - t)).
inline double conditional_power(double z_interim, double t, double alpha) {
  const double z = stats::normal_quantile(1.0 - alpha);
  return 1.0 - stats::normal_cdf((z - z_interim * std::sqrt(t)) / std::sqrt(1.0 - t));
}

/// Two-sample z statistic for proportions with pooled variance. Returns 0
/// when the pooled proportion is 0 or 1 (no information).
inline double pooled_z(int successes1, int n1, int successes0, int n0) {
  const double pooled = static_cast<double>(successes1 + successes0) / (n1 + n0);
  const double var = pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n0);
  if (var <= 0.0) return 0.0;
  return (static_cast<double>(successes1) / n1 - static_cast<double>(successes0) / n0) /
         std::sqrt(var);
}

class AuxInterim final : public TrialDesign {
 public:
  enum Dim : std::size_t { e, p0, p1, q0, q1, rho0, rho1 };

  explicit AuxInterim(AuxInterimConfig cfg = {})
      : cfg_((cfg.validate(), cfg)),
        t_s_(rosa::information_fraction(cfg)),
        z_crit_(stats::normal_quantile(1.0 - cfg.alpha)) {}

  std::string name() const override { return "aux-interim"; }

  ParameterSpace parameter_space() const override {
    return ParameterSpace({"e", "p0", "p1", "q0", "q1", "rho0", "rho1"},
                          {0.2, 0.2, 0.2, 0.2, 0.2, 0.0, 0.0},
                          {1.0, 0.4, 0.4, 0.4, 0.4, 0.6, 0.6});
  }

  OcSchema oc_schema() const override {
    return {{"power", "sample_size"}, {OcKind::probability, OcKind::count}};
  }

  void check_scenario(const Scenario& theta) const override {
    TrialDesign::check_scenario(theta);
    BivariateBernoulli(theta[p0], theta[q0], theta[rho0]);
    BivariateBernoulli(theta[p1], theta[q1], theta[rho1]);
  }

  void simulate_into(const Scenario& theta, Rng& rng, std::span<double> out) const override {
    const BivariateBernoulli arm0(theta[p0], theta[q0], theta[rho0]);
    const BivariateBernoulli arm1(theta[p1], theta[q1], theta[rho1]);

    // Interim cohort: paired (Y, S) for the first n_a patients of each arm.
    int y0 = 0, s0 = 0, y1 = 0, s1 = 0;
    for (int i = 0; i < cfg_.n0; ++i) {
      auto [y, s] = arm0(rng);
      y0 += y;
      s0 += s;
    }
    for (int i = 0; i < cfg_.n1; ++i) {
      auto [y, s] = arm1(rng);
      y1 += y;
      s1 += s;
    }

    const double z_s = pooled_z(s1, cfg_.n1, s0, cfg_.n0);
    const double cp = conditional_power(z_s, t_s_, cfg_.alpha);
    if (cp < cfg_.cp_cutoff) {
      int overrun = 0;
      if (cfg_.interim_delay > 0.0) {
        const int room = (cfg_.N0 - cfg_.n0) + (cfg_.N1 - cfg_.n1);
        std::poisson_distribution<int> arrivals(theta[e] * cfg_.interim_delay);
        overrun = std::min(room, arrivals(rng));
      }
      out[0] = 0.0;
      out[1] = static_cast<double>(cfg_.n0 + cfg_.n1 + overrun);
      return;
    }

    // Only Y matters after the interim, so draw it from its margin.
    for (int i = cfg_.n0; i < cfg_.N0; ++i) y0 += bernoulli(rng, theta[p0]);
    for (int i = cfg_.n1; i < cfg_.N1; ++i) y1 += bernoulli(rng, theta[p1]);
    const double z_y = pooled_z(y1, cfg_.N1, y0, cfg_.N0);
    out[0] = z_y > z_crit_ ? 1.0 : 0.0;
    out[1] = static_cast<double>(cfg_.N0 + cfg_.N1);
  }

  const AuxInterimConfig& config() const noexcept { return cfg_; }
  double information_fraction() const noexcept { return t_s_; }

 private:
  AuxInterimConfig cfg_;
  double t_s_;
  double z_crit_;
};

}  // namespace rosa

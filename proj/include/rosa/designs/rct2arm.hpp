#pragma once

#include <cmath>

#include "rosa/designs/trial_design.hpp"
#include "rosa/stats.hpp"

namespace rosa {

/// Two-arm randomized trial with a normal outcome analysed by a one-sided
/// z-test. The single unknown parameter is the treatment effect.
struct TwoArmRctConfig {
  int n = 30;
  double sigma = 30.0;
  double alpha = 0.05;
  double effect_lower = -5.0;
  double effect_upper = 25.0;

  void validate() const {
    if (n < 2 || n % 2 != 0) throw InvalidArgument("rct2arm: n must be even and >= 2");
    if (!(sigma > 0.0)) throw InvalidArgument("rct2arm: sigma must be positive");
    if (!(alpha > 0.0 && alpha < 0.5)) throw InvalidArgument("rct2arm: alpha must lie in (0, 0.5)");
    if (!(effect_lower < effect_upper)) throw InvalidArgument("rct2arm: empty effect range");
  }

  /// Mean of the test statistic per unit of effect. The standard error is
  /// taken as sigma / sqrt(n).
  double drift_per_effect() const { return std::sqrt(static_cast<double>(n)) / sigma; }
};

/// Closed-form rejection probability Phi(theta sqrt(n) / sigma - z_{1-alpha}).
inline double rct_power_exact(double effect, const TwoArmRctConfig& cfg) {
  return stats::normal_cdf(effect * cfg.drift_per_effect() -
                           stats::normal_quantile(1.0 - cfg.alpha));
}

/// Effect size at which the rejection probability equals `target_power`.
inline double rct_power_inverse(double target_power, const TwoArmRctConfig& cfg) {
  if (!(target_power > 0.0 && target_power < 1.0))
    throw InvalidArgument("rct_power_inverse: target power must lie strictly inside (0, 1)");
  return (stats::normal_quantile(target_power) + stats::normal_quantile(1.0 - cfg.alpha)) /
         cfg.drift_per_effect();
}

class TwoArmRct final : public TrialDesign {
 public:
  explicit TwoArmRct(TwoArmRctConfig cfg = {})
      : cfg_(cfg), z_crit_((cfg.validate(), stats::normal_quantile(1.0 - cfg.alpha))) {}

  std::string name() const override { return "rct2arm"; }

  ParameterSpace parameter_space() const override {
    return ParameterSpace({"theta"}, {cfg_.effect_lower}, {cfg_.effect_upper});
  }

  OcSchema oc_schema() const override { return {{"power"}, {OcKind::probability}}; }

  void simulate_into(const Scenario& theta, Rng& rng, std::span<double> out) const override {
    const double z = std_normal(rng) + theta[0] * cfg_.drift_per_effect();
    out[0] = z > z_crit_ ? 1.0 : 0.0;
  }

  const TwoArmRctConfig& config() const noexcept { return cfg_; }

 private:
  TwoArmRctConfig cfg_;
  double z_crit_;
};

}  // namespace rosa

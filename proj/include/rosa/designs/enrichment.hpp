#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "rosa/designs/trial_design.hpp"
#include "rosa/stats.hpp"

namespace rosa {

/// Mixing probability for the comonotone/independent mixture of two
/// exponentials. Exponentials form a scale family, so the comonotone pair
/// t2 = t1 * rate1 / rate2 has Pearson correlation exactly one and the
/// mixture correlation equals the mixing probability for any rates.
inline double comonotone_mixing_probability(double /*rate1*/, double /*rate2*/, double rho) {
  return rho;
}

/// Draws (t1, t2) with exponential margins and Pearson correlation rho.
inline std::pair<double, double> sample_correlated_exponentials(double rate1, double rate2,
                                                                double rho, Rng& rng) {
  if (!(rate1 > 0.0 && rate2 > 0.0))
    throw InvalidArgument("correlated exponentials: rates must be positive");
  if (!(rho >= 0.0 && rho < 1.0))
    throw InvalidArgument("correlated exponentials: rho must lie in [0, 1)");
  const double t1 = exponential(rng, rate1);
  if (uniform01(rng) < comonotone_mixing_probability(rate1, rate2, rho))
    return {t1, t1 * rate1 / rate2};
  return {t1, exponential(rng, rate2)};
}

/// Right-censored observation for a two-arm log-rank test.
struct SurvivalRecord {
  double time;
  bool event;
  bool treated;
};

struct LogRankResult {
  double z = 0.0;  // (O - E) / sqrt(V) for the treated arm; negative favours treatment
  int events = 0;
  double variance = 0.0;
};

/// Two-arm log-rank statistic. Sorts `records` in place by time.
inline LogRankResult log_rank(std::vector<SurvivalRecord>& records) {
  std::sort(records.begin(), records.end(),
            [](const SurvivalRecord& a, const SurvivalRecord& b) { return a.time < b.time; });
  double at_risk_t = 0.0, at_risk = static_cast<double>(records.size());
  for (const auto& r : records) at_risk_t += r.treated ? 1.0 : 0.0;

  LogRankResult out;
  double o_minus_e = 0.0;
  std::size_t i = 0;
  while (i < records.size()) {
    const double t = records[i].time;
    double d = 0.0, d_t = 0.0, leaving = 0.0, leaving_t = 0.0;
    for (; i < records.size() && records[i].time == t; ++i) {
      leaving += 1.0;
      if (records[i].treated) leaving_t += 1.0;
      if (records[i].event) {
        d += 1.0;
        if (records[i].treated) d_t += 1.0;
      }
    }
    if (d > 0.0) {
      const double frac = at_risk_t / at_risk;
      o_minus_e += d_t - d * frac;
      if (at_risk > 1.0)
        out.variance += d * frac * (1.0 - frac) * (at_risk - d) / (at_risk - 1.0);
      out.events += static_cast<int>(d);
    }
    at_risk -= leaving;
    at_risk_t -= leaving_t;
  }
  if (out.variance > 0.0) out.z = o_minus_e / std::sqrt(out.variance);
  return out;
}

/// Hazard ratio from a log-rank statistic, exp(z sqrt(4 / events)).
inline double hazard_ratio_estimate(const LogRankResult& lr) {
  if (lr.events == 0) return 1.0;
  return std::exp(lr.z * std::sqrt(4.0 / lr.events));
}

/// omega1 Phi^{-1}(1 - p1) + omega2 Phi^{-1}(1 - p2).
inline double inverse_normal_combination(double p1, double p2, double omega1, double omega2) {
  return omega1 * stats::normal_quantile(1.0 - p1) + omega2 * stats::normal_quantile(1.0 - p2);
}

struct EnrichmentConfig {
  int stage1_n = 120;
  int stage2_n = 70;
  int os_events_final = 110;
  double hr_plus_threshold = 0.6;
  double hr_overall_threshold = 0.8;
  double omega1 = 1.0 / std::sqrt(2.0);
  double omega2 = 1.0 / std::sqrt(2.0);
  double control_median_pfs_months = 4.0;
  double control_median_os_months = 12.0;
  double z_crit = 1.96;
  double branch_d_alpha = 0.0125;  // one-sided level for each hypothesis in branch D

  void validate() const {
    if (stage1_n < 2 || stage2_n < 1) throw InvalidArgument("enrichment: stage sizes too small");
    if (os_events_final < 1 || os_events_final > stage1_n + stage2_n)
      throw InvalidArgument("enrichment: os_events_final must lie in [1, stage1_n + stage2_n]");
    auto in_open = [](double x) { return x > 0.0 && x < 1.5; };
    if (!in_open(hr_plus_threshold) || !in_open(hr_overall_threshold))
      throw InvalidArgument("enrichment: HR thresholds must lie in (0, 1.5)");
    if (!(omega1 > 0.0 && omega2 > 0.0) ||
        std::abs(omega1 * omega1 + omega2 * omega2 - 1.0) > 1e-9)
      throw InvalidArgument("enrichment: weights must be positive with omega1^2 + omega2^2 = 1");
    if (!(control_median_pfs_months > 0.0 && control_median_os_months > 0.0))
      throw InvalidArgument("enrichment: control medians must be positive");
    if (!(branch_d_alpha > 0.0 && branch_d_alpha < 0.5))
      throw InvalidArgument("enrichment: branch_d_alpha must lie in (0, 0.5)");
  }
};

/// Interim decision of the enrichment design.
enum class EnrichmentBranch {
  enrich_positive,  // A: continue in biomarker-positive patients only
  overall_only,     // B: continue in everyone, test the overall population
  futility,         // C: stop
  both,             // D: continue in everyone, test both populations
};

inline EnrichmentBranch classify_branch(double hr_plus, double hr_overall,
                                        const EnrichmentConfig& cfg = {}) {
  const bool plus_promising = hr_plus < cfg.hr_plus_threshold;
  const bool overall_promising = hr_overall < cfg.hr_overall_threshold;
  if (plus_promising && !overall_promising) return EnrichmentBranch::enrich_positive;
  if (!plus_promising && overall_promising) return EnrichmentBranch::overall_only;
  if (!plus_promising && !overall_promising) return EnrichmentBranch::futility;
  return EnrichmentBranch::both;
}

/// Two-stage adaptive enrichment trial with a PFS-based interim and an OS
/// final analysis using the inverse-normal combination of stage-wise
/// log-rank statistics. Time is measured in months.
class Enrichment final : public TrialDesign {
 public:
  enum Dim : std::size_t {
    recruit_rate,  // patients per week
    prevalence,
    hr_pfs_pos,
    hr_pfs_neg,
    hr_os_pos,
    hr_os_neg,
    corr_pos,
    corr_neg
  };

  struct Outcome {
    EnrichmentBranch branch;
    bool reject_positive = false;
    bool reject_overall = false;
    double hr_plus = 1.0;
    double hr_overall = 1.0;
  };

  explicit Enrichment(EnrichmentConfig cfg = {})
      : cfg_((cfg.validate(), cfg)),
        z_crit_d_(stats::normal_quantile(1.0 - cfg.branch_d_alpha)) {}

  std::string name() const override { return "enrichment"; }

  ParameterSpace parameter_space() const override {
    return ParameterSpace({"recruit_rate", "prevalence", "hr_pfs_pos", "hr_pfs_neg", "hr_os_pos",
                           "hr_os_neg", "corr_pos", "corr_neg"},
                          {0.5, 0.15, 0.5, 0.6, 0.7, 0.8, 0.3, 0.2},
                          {1.0, 0.25, 1.2, 1.2, 1.2, 1.2, 0.6, 0.7});
  }

  OcSchema oc_schema() const override {
    return {{"enrich_positive", "enroll_all", "no_rejection"},
            {OcKind::probability, OcKind::probability, OcKind::probability}};
  }

  void simulate_into(const Scenario& theta, Rng& rng, std::span<double> out) const override {
    const Outcome o = simulate_trial(theta, rng);
    out[0] = o.branch == EnrichmentBranch::enrich_positive ? 1.0 : 0.0;
    out[1] = (o.branch == EnrichmentBranch::overall_only || o.branch == EnrichmentBranch::both)
                 ? 1.0
                 : 0.0;
    out[2] = (o.reject_positive || o.reject_overall) ? 0.0 : 1.0;
  }

  Outcome simulate_trial(const Scenario& theta, Rng& rng) const {
    constexpr double weeks_per_month = 52.0 / 12.0;
    const double rate = theta[recruit_rate] * weeks_per_month;
    std::vector<Patient> patients;
    patients.reserve(static_cast<std::size_t>(cfg_.stage1_n + cfg_.stage2_n));

    double clock = 0.0;
    for (int i = 0; i < cfg_.stage1_n; ++i) {
      clock += exponential(rng, rate);
      const bool positive = bernoulli(rng, theta[prevalence]);
      patients.push_back(make_patient(theta, rng, clock, positive, 1));
    }
    const double t_interim = clock;

    std::vector<SurvivalRecord> scratch;
    auto pfs_at_interim = [&](bool positives_only) {
      scratch.clear();
      for (const auto& p : patients) {
        if (positives_only && !p.positive) continue;
        const double follow = t_interim - p.entry;
        scratch.push_back({std::min(p.pfs, follow), p.pfs <= follow, p.treated});
      }
      return hazard_ratio_estimate(log_rank(scratch));
    };

    Outcome out;
    out.hr_plus = pfs_at_interim(true);
    out.hr_overall = pfs_at_interim(false);
    out.branch = classify_branch(out.hr_plus, out.hr_overall, cfg_);
    if (out.branch == EnrichmentBranch::futility) return out;

    // Stage 2 accrual. Under enrichment only positive patients are enrolled,
    // so they arrive at the positive-subgroup rate.
    const bool enrich = out.branch == EnrichmentBranch::enrich_positive;
    const double stage2_rate = enrich ? rate * theta[prevalence] : rate;
    for (int i = 0; i < cfg_.stage2_n; ++i) {
      clock += exponential(rng, stage2_rate);
      const bool positive = enrich || bernoulli(rng, theta[prevalence]);
      patients.push_back(make_patient(theta, rng, clock, positive, 2));
    }

    const double t_final = std::max(clock, final_analysis_time(patients));

    auto stage_z = [&](int stage, bool positives_only) {
      scratch.clear();
      for (const auto& p : patients) {
        if (p.stage != stage || (positives_only && !p.positive)) continue;
        const double follow = t_final - p.entry;
        scratch.push_back({std::min(p.os, follow), p.os <= follow, p.treated});
      }
      // evidence of benefit is a negative log-rank z
      return -log_rank(scratch).z;
    };
    auto combined = [&](bool positives_only) {
      return cfg_.omega1 * stage_z(1, positives_only) + cfg_.omega2 * stage_z(2, positives_only);
    };

    switch (out.branch) {
      case EnrichmentBranch::enrich_positive:
        out.reject_positive = combined(true) > cfg_.z_crit;
        break;
      case EnrichmentBranch::overall_only:
        out.reject_overall = combined(false) > cfg_.z_crit;
        break;
      case EnrichmentBranch::both:
        out.reject_positive = combined(true) > z_crit_d_;
        out.reject_overall = combined(false) > z_crit_d_;
        break;
      case EnrichmentBranch::futility: break;
    }
    return out;
  }

  const EnrichmentConfig& config() const noexcept { return cfg_; }

 private:
  struct Patient {
    double entry;
    double pfs;
    double os;
    bool positive;
    bool treated;
    int stage;
  };

  Patient make_patient(const Scenario& theta, Rng& rng, double entry, bool positive,
                       int stage) const {
    const bool treated = bernoulli(rng, 0.5);
    double pfs_rate = std::log(2.0) / cfg_.control_median_pfs_months;
    double os_rate = std::log(2.0) / cfg_.control_median_os_months;
    if (treated) {
      pfs_rate *= positive ? theta[hr_pfs_pos] : theta[hr_pfs_neg];
      os_rate *= positive ? theta[hr_os_pos] : theta[hr_os_neg];
    }
    const double rho = positive ? theta[corr_pos] : theta[corr_neg];
    auto [pfs, os] = sample_correlated_exponentials(pfs_rate, os_rate, rho, rng);
    return {entry, pfs, os, positive, treated, stage};
  }

  /// Calendar time of the os_events_final-th death among enrolled patients.
  double final_analysis_time(const std::vector<Patient>& patients) const {
    std::vector<double> deaths;
    deaths.reserve(patients.size());
    for (const auto& p : patients) deaths.push_back(p.entry + p.os);
    const auto k = static_cast<std::size_t>(cfg_.os_events_final - 1);
    std::nth_element(deaths.begin(), deaths.begin() + static_cast<std::ptrdiff_t>(k), deaths.end());
    return deaths[k];
  }

  EnrichmentConfig cfg_;
  double z_crit_d_;
};

}  // namespace rosa

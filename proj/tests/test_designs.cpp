#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "rosa/designs/aux_interim.hpp"
#include "rosa/designs/enrichment.hpp"
#include "rosa/designs/rct2arm.hpp"

using namespace rosa;

namespace {

double phi_ref(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
constexpr double z95 = 1.6448536269514722;

double binom_se(double p, double n) { return std::sqrt(p * (1 - p) / n); }

}  // namespace

// ---- two-arm RCT

TEST(Rct2Arm, ClosedFormMatchesReference) {
  const TwoArmRctConfig cfg;
  for (double th = -5; th <= 25; th += 1.5)
    EXPECT_NEAR(rct_power_exact(th, cfg), phi_ref(th * std::sqrt(30.0) / 30.0 - z95), 1e-15);
  EXPECT_NEAR(rct_power_exact(0.0, cfg), 0.05, 1e-15);
  EXPECT_GT(rct_power_exact(25.0, cfg), 0.995);
  EXPECT_LT(rct_power_exact(-5.0, cfg), 0.01);
}

TEST(Rct2Arm, InverseRoundTrip) {
  const TwoArmRctConfig cfg;
  EXPECT_NEAR(rct_power_inverse(0.5, cfg), 30.0 * z95 / std::sqrt(30.0), 1e-12);
  EXPECT_NEAR(rct_power_inverse(0.5, cfg), 9.009, 5e-4);
  for (double p = 0.01; p < 1.0; p += 0.049)
    EXPECT_NEAR(rct_power_exact(rct_power_inverse(p, cfg), cfg), p, 1e-12);
  EXPECT_THROW(rct_power_inverse(0.0, cfg), InvalidArgument);
  EXPECT_THROW(rct_power_inverse(1.0, cfg), InvalidArgument);
}

TEST(Rct2Arm, ConfigValidation) {
  EXPECT_THROW(TwoArmRct(TwoArmRctConfig{.n = 31}), InvalidArgument);
  EXPECT_THROW(TwoArmRct(TwoArmRctConfig{.sigma = 0}), InvalidArgument);
  EXPECT_THROW(TwoArmRct(TwoArmRctConfig{.alpha = 0.5}), InvalidArgument);
}

TEST(Rct2Arm, SimulationMatchesClosedFormOnGrid) {
  const TwoArmRct d;
  const int reps = 20000;
  Rng rng = make_stream(11, {});
  std::vector<double> out(1);
  for (int g = 0; g < 20; ++g) {
    const double th = -5.0 + 30.0 * g / 19.0;
    const double p = rct_power_exact(th, d.config());
    int hits = 0;
    for (int m = 0; m < reps; ++m) {
      d.simulate_into(Scenario{{th}}, rng, out);
      ASSERT_TRUE(out[0] == 0.0 || out[0] == 1.0);
      hits += static_cast<int>(out[0]);
    }
    const double se = std::max(binom_se(p, reps), 1.0 / reps);
    EXPECT_NEAR(hits / double(reps), p, 3 * se) << "theta " << th;
  }
}

TEST(Rct2Arm, LevelUnderNullAtOneMillion) {
  const TwoArmRct d;
  Rng rng = make_stream(12, {});
  std::vector<double> out(1);
  long hits = 0;
  const long n = 1000000;
  for (long m = 0; m < n; ++m) {
    d.simulate_into(Scenario{{0.0}}, rng, out);
    hits += static_cast<long>(out[0]);
  }
  EXPECT_NEAR(hits / double(n), 0.05, 0.001);
}

TEST(Rct2Arm, SameSeedSameSequence) {
  const TwoArmRct d;
  Rng a = make_stream(5, {1}), b = make_stream(5, {1});
  for (int i = 0; i < 1000; ++i)
    EXPECT_EQ(d.simulate_once(Scenario{{9.0}}, a).values, d.simulate_once(Scenario{{9.0}}, b).values);
}

// ---- bivariate Bernoulli

TEST(BivariateBernoulli, CellsFromClosedForm) {
  const BivariateBernoulli indep(0.3, 0.6, 0.0);
  EXPECT_NEAR(indep.p11(), 0.18, 1e-15);
  const BivariateBernoulli b(0.2, 0.4, 0.6);
  EXPECT_NEAR(b.p11(), 0.08 + 0.6 * std::sqrt(0.16 * 0.24), 1e-15);
  EXPECT_NEAR(b.p11(), 0.1976, 5e-5);
  EXPECT_NEAR(b.p11() + b.p10(), 0.2, 1e-15);
  EXPECT_NEAR(b.p11() + b.p01(), 0.4, 1e-15);
  EXPECT_NEAR(b.p00() + b.p10() + b.p01() + b.p11(), 1.0, 1e-15);
}

TEST(BivariateBernoulli, InfeasibleTriplesNameTheBound) {
  try {
    BivariateBernoulli(0.1, 0.9, 0.9);
    FAIL() << "expected an error";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("upper bound min(p, q)"), std::string::npos);
  }
  try {
    BivariateBernoulli(0.5, 0.5, -1.5);
    FAIL() << "expected an error";
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("lower bound max(0, p+q-1)"), std::string::npos);
  }
  EXPECT_THROW(BivariateBernoulli(1.2, 0.5, 0.0), InvalidArgument);
}

TEST(BivariateBernoulli, EmpiricalCellsAndCorrelation) {
  Rng pick = make_stream(21, {});
  const int n = 1000000;
  int tested = 0;
  while (tested < 10) {
    const double p = uniform(pick, 0.1, 0.9), q = uniform(pick, 0.1, 0.9), rho = uniform(pick, -0.5, 0.8);
    const double p11 = p * q + rho * std::sqrt(p * (1 - p) * q * (1 - q));
    if (p11 < std::max(0.0, p + q - 1) || p11 > std::min(p, q)) continue;
    ++tested;
    const BivariateBernoulli b(p, q, rho);
    Rng rng = make_stream(22, {static_cast<std::uint64_t>(tested)});
    long c11 = 0, cy = 0, cs = 0;
    for (int i = 0; i < n; ++i) {
      auto [y, s] = b(rng);
      c11 += y * s;
      cy += y;
      cs += s;
    }
    EXPECT_NEAR(c11 / double(n), p11, 3 * binom_se(p11, n));
    EXPECT_NEAR(cy / double(n), p, 4 * binom_se(p, n));
    EXPECT_NEAR(cs / double(n), q, 4 * binom_se(q, n));
    const double my = cy / double(n), ms = cs / double(n);
    const double r = (c11 / double(n) - my * ms) / std::sqrt(my * (1 - my) * ms * (1 - ms));
    EXPECT_NEAR(r, rho, 0.01);
  }
}

// ---- auxiliary-outcome interim design

TEST(AuxInterim, InformationFractionAndConditionalPower) {
  AuxInterimConfig cfg;
  EXPECT_NEAR(information_fraction(cfg), 0.5, 1e-15);
  cfg.n0 = 25;
  EXPECT_NEAR(information_fraction(cfg), (0.01 + 0.01) / (0.02 + 0.04), 1e-15);
  const double t = 0.5;
  EXPECT_NEAR(conditional_power(z95 / std::sqrt(t), t, 0.05), 0.5, 1e-12);
  // reference: 1 - Phi((z - Z sqrt t) / sqrt(1 - t))
  for (double z : {-1.0, 0.0, 0.7, 2.5})
    EXPECT_NEAR(conditional_power(z, 0.3, 0.05), 1 - phi_ref((z95 - z * std::sqrt(0.3)) / std::sqrt(0.7)), 1e-14);
}

TEST(AuxInterim, PooledZ) {
  // 30/50 vs 20/50: pooled 0.5, se sqrt(0.25 * 0.04) = 0.1
  EXPECT_NEAR(pooled_z(30, 50, 20, 50), 2.0, 1e-12);
  EXPECT_EQ(pooled_z(0, 50, 0, 50), 0.0);
  EXPECT_EQ(pooled_z(50, 50, 50, 50), 0.0);
}

TEST(AuxInterim, ConfigValidation) {
  EXPECT_THROW(AuxInterim(AuxInterimConfig{.n0 = 100}), InvalidArgument);
  EXPECT_THROW(AuxInterim(AuxInterimConfig{.cp_cutoff = 1.0}), InvalidArgument);
  EXPECT_THROW(AuxInterim(AuxInterimConfig{.alpha = 0.0}), InvalidArgument);
}

TEST(AuxInterim, OutputsAreIndicatorAndSampleSize) {
  const AuxInterim d;
  Rng rng = make_stream(31, {});
  const Scenario th{{0.5, 0.3, 0.35, 0.3, 0.4, 0.5, 0.5}};
  std::vector<double> out(2);
  for (int i = 0; i < 5000; ++i) {
    d.simulate_into(th, rng, out);
    ASSERT_TRUE(out[0] == 0.0 || out[0] == 1.0);
    ASSERT_TRUE(out[1] == 100.0 || out[1] == 200.0);
    if (out[1] == 100.0) ASSERT_EQ(out[0], 0.0);
  }
}

TEST(AuxInterim, LevelConservativeUnderNull) {
  const AuxInterim d;
  const Scenario th{{0.5, 0.3, 0.3, 0.3, 0.3, 0.3, 0.3}};
  Rng rng = make_stream(32, {});
  std::vector<double> out(2);
  const int n = 100000;
  int rej = 0;
  for (int i = 0; i < n; ++i) {
    d.simulate_into(th, rng, out);
    rej += static_cast<int>(out[0]);
  }
  EXPECT_LE(rej / double(n), 0.05 + 3 * binom_se(0.05, n));
}

TEST(AuxInterim, InfeasibleScenarioRejected) {
  const AuxInterim d;
  EXPECT_THROW(d.check_scenario(Scenario{{0.5, 0.2, 0.2}}), InvalidArgument);
  EXPECT_THROW(d.check_scenario(Scenario{{0.5, 0.1, 0.2, 0.9, 0.4, 0.9, 0.0}}), InvalidArgument);
  EXPECT_NO_THROW(d.check_scenario(Scenario{{0.5, 0.2, 0.2, 0.4, 0.4, 0.6, 0.6}}));
}

// ---- enrichment design

TEST(Enrichment, CorrelatedExponentialMomentsAndCorrelation) {
  Rng rng = make_stream(41, {});
  const int n = 1000000;
  for (auto [r1, r2] : {std::pair{0.2, 0.2}, std::pair{0.1733, 0.0578}}) {
    double s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0;
    for (int i = 0; i < n; ++i) {
      auto [a, b] = sample_correlated_exponentials(r1, r2, 0.5, rng);
      s1 += a;
      s2 += b;
      s11 += a * a;
      s22 += b * b;
      s12 += a * b;
    }
    const double m1 = s1 / n, m2 = s2 / n;
    EXPECT_NEAR(m1, 1 / r1, 0.005 / r1);
    EXPECT_NEAR(m2, 1 / r2, 0.005 / r2);
    const double c = (s12 / n - m1 * m2) / std::sqrt((s11 / n - m1 * m1) * (s22 / n - m2 * m2));
    EXPECT_NEAR(c, 0.5, 0.01);
  }
  EXPECT_EQ(comonotone_mixing_probability(0.3, 0.3, 0.0), 0.0);
  EXPECT_THROW(sample_correlated_exponentials(0.1, 0.1, 1.0, rng), InvalidArgument);
  EXPECT_THROW(sample_correlated_exponentials(0.0, 0.1, 0.2, rng), InvalidArgument);
}

// Largest gap between the empirical CDF and 1 - exp(-rate x).
static double ks_stat(std::vector<double> x, double rate) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = 1 - std::exp(-rate * x[i]);
    d = std::max({d, (i + 1) / n - f, f - i / n});
  }
  return d;
}

TEST(Enrichment, KolmogorovSmirnovOnMarginals) {
  Rng rng = make_stream(42, {});
  const int n = 100000;
  const double r1 = 0.17, r2 = 0.05;
  std::vector<double> a(n), b(n);
  for (int i = 0; i < n; ++i) std::tie(a[i], b[i]) = sample_correlated_exponentials(r1, r2, 0.45, rng);
  // asymptotic critical value at level 0.001
  const double crit = 1.9495 / std::sqrt(double(n));
  EXPECT_LT(ks_stat(a, r1), crit);
  EXPECT_LT(ks_stat(b, r2), crit);
}

TEST(Enrichment, BranchClassification) {
  EXPECT_EQ(classify_branch(0.55, 0.85), EnrichmentBranch::enrich_positive);
  EXPECT_EQ(classify_branch(0.7, 0.7), EnrichmentBranch::overall_only);
  EXPECT_EQ(classify_branch(0.7, 0.9), EnrichmentBranch::futility);
  EXPECT_EQ(classify_branch(0.5, 0.7), EnrichmentBranch::both);
  EXPECT_EQ(classify_branch(0.6, 0.8), EnrichmentBranch::futility);
}

// Direct definition: at each distinct event time, count who is at risk.
static double log_rank_reference(const std::vector<SurvivalRecord>& recs) {
  std::vector<double> times;
  for (const auto& r : recs)
    if (r.event) times.push_back(r.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  double oe = 0, v = 0;
  for (double t : times) {
    double n = 0, n1 = 0, d = 0, d1 = 0;
    for (const auto& r : recs) {
      if (r.time >= t) {
        n += 1;
        n1 += r.treated;
      }
      if (r.time == t && r.event) {
        d += 1;
        d1 += r.treated;
      }
    }
    oe += d1 - d * n1 / n;
    if (n > 1) v += d * (n1 / n) * (1 - n1 / n) * (n - d) / (n - 1);
  }
  return oe / std::sqrt(v);
}

TEST(Enrichment, LogRankMatchesDirectDefinition) {
  Rng rng = make_stream(43, {});
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<SurvivalRecord> recs;
    for (int i = 0; i < 80; ++i) {
      const bool treated = bernoulli(rng, 0.5);
      // rounding creates ties
      const double t = std::round(exponential(rng, treated ? 0.07 : 0.1) * 2) / 2 + 0.5;
      recs.push_back({std::min(t, 12.0), t <= 12.0, treated});
    }
    const double ref = log_rank_reference(recs);
    auto copy = recs;
    const auto lr = log_rank(copy);
    EXPECT_NEAR(lr.z, ref, 1e-12);
    int ev = 0;
    for (const auto& r : recs) ev += r.event;
    EXPECT_EQ(lr.events, ev);
  }
  std::vector<SurvivalRecord> none{{1.0, false, true}, {2.0, false, false}};
  const auto lr = log_rank(none);
  EXPECT_EQ(lr.z, 0.0);
  EXPECT_EQ(hazard_ratio_estimate(lr), 1.0);
}

TEST(Enrichment, SchoenfeldHazardRatioAndCombination) {
  EXPECT_NEAR(hazard_ratio_estimate(LogRankResult{-2.0, 100, 25.0}), std::exp(-2.0 * 0.2), 1e-15);
  const double w = 1 / std::sqrt(2.0);
  EXPECT_NEAR(inverse_normal_combination(0.05, 0.05, w, w), 2 * w * z95, 1e-12);
  EXPECT_NEAR(inverse_normal_combination(0.5, 0.5, w, w), 0.0, 1e-15);
}

TEST(Enrichment, ConfigValidation) {
  EXPECT_THROW(Enrichment(EnrichmentConfig{.omega1 = 0.5}), InvalidArgument);
  EXPECT_THROW(Enrichment(EnrichmentConfig{.os_events_final = 1000}), InvalidArgument);
  EXPECT_THROW(Enrichment(EnrichmentConfig{.hr_plus_threshold = 1.5}), InvalidArgument);
  EXPECT_THROW(Enrichment(EnrichmentConfig{.control_median_os_months = 0}), InvalidArgument);
}

TEST(Enrichment, BranchesPartitionAndGlobalNull) {
  const Enrichment d;
  const Scenario null_th{{0.75, 0.2, 1.0, 1.0, 1.0, 1.0, 0.45, 0.45}};
  Rng rng = make_stream(44, {});
  const int n = 10000;
  double f3 = 0;
  int counts[4] = {0, 0, 0, 0};
  std::vector<double> out(3);
  for (int i = 0; i < n; ++i) {
    Rng copy = rng;
    const auto o = d.simulate_trial(null_th, copy);
    d.simulate_into(null_th, rng, out);
    ++counts[static_cast<int>(o.branch)];
    ASSERT_LE(out[0] + out[1], 1.0);
    ASSERT_EQ(out[0] == 1.0, o.branch == EnrichmentBranch::enrich_positive);
    ASSERT_EQ(out[0] + out[1] == 0.0, o.branch == EnrichmentBranch::futility);
    if (o.branch == EnrichmentBranch::futility) ASSERT_EQ(out[2], 1.0);
    f3 += out[2];
  }
  EXPECT_EQ(counts[0] + counts[1] + counts[2] + counts[3], n);
  EXPECT_GE(f3 / n, 0.90);
}

TEST(Enrichment, StrongEffectRejectsOften) {
  const Enrichment d;
  const Scenario th{{1.0, 0.25, 0.5, 0.6, 0.7, 0.8, 0.45, 0.45}};
  Rng rng = make_stream(45, {});
  std::vector<double> out(3);
  double f3 = 0;
  for (int i = 0; i < 2000; ++i) {
    d.simulate_into(th, rng, out);
    f3 += out[2];
  }
  // Strongest OS effects in the box (0.7, 0.8): clearly below the null rate.
  EXPECT_LT(f3 / 2000, 0.85);
}

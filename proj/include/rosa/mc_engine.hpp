#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rosa/designs/trial_design.hpp"
#include "rosa/parallel.hpp"
#include "rosa/sampling.hpp"

namespace rosa {

/// Monte Carlo OC estimates at a list of scenarios.
struct TrainingSet {
  std::string design;
  OcSchema schema;
  std::vector<Scenario> scenarios;
  std::vector<OcVector> oc_means;
  std::vector<OcVector> mc_se;
  std::size_t reps = 0;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return scenarios.size(); }
};

/// Averages `reps` simulated trials at every scenario. Trial m of scenario j
/// draws from its own stream seeded by (seed, j, m), so the result is
/// bit-identical for any number of worker threads.
inline TrainingSet estimate_ocs(const TrialDesign& design, const std::vector<Scenario>& scenarios,
                                std::size_t reps, std::uint64_t seed, std::size_t threads = 1) {
  if (reps == 0) throw InvalidArgument("estimate_ocs: reps must be >= 1");
  const auto schema = design.oc_schema();
  const std::size_t R = schema.size();

  TrainingSet ts;
  ts.design = design.name();
  ts.schema = schema;
  ts.scenarios = scenarios;
  ts.reps = reps;
  ts.seed = seed;
  ts.oc_means.assign(scenarios.size(), OcVector{std::vector<double>(R)});
  ts.mc_se.assign(scenarios.size(), OcVector{std::vector<double>(R)});

  parallel_for(scenarios.size(), threads, [&](std::size_t j) {
    const Scenario& theta = scenarios[j];
    try {
      design.check_scenario(theta);
      std::vector<double> phi(R), sum(R, 0.0), sum_sq(R, 0.0);
      for (std::size_t m = 0; m < reps; ++m) {
        Rng rng = make_stream(seed, {j, m});
        design.simulate_into(theta, rng, phi);
        for (std::size_t r = 0; r < R; ++r) {
          sum[r] += phi[r];
          sum_sq[r] += phi[r] * phi[r];
        }
      }
      const double M = static_cast<double>(reps);
      for (std::size_t r = 0; r < R; ++r) {
        const double mean = sum[r] / M;
        ts.oc_means[j].values[r] = mean;
        if (reps > 1) {
          const double var = std::max(0.0, (sum_sq[r] - M * mean * mean) / (M - 1.0));
          ts.mc_se[j].values[r] = std::sqrt(var / M);
        }
      }
    } catch (const std::exception& e) {
      throw InvalidArgument("scenario " + std::to_string(j) + ": " + e.what());
    }
  });
  return ts;
}

/// Fresh uniform scenarios with independent MC estimates, for surrogate
/// validation. `seed` must differ from the training seed.
inline TrainingSet validation_estimates(const TrialDesign& design, std::size_t count,
                                        std::size_t reps, const ParameterSpace& space,
                                        std::uint64_t seed, std::size_t threads = 1) {
  auto scenarios = uniform_sample(CloudSpec{count, space, derive_seed(seed, {0x7A1})});
  return estimate_ocs(design, scenarios, reps, derive_seed(seed, {0x7A2}), threads);
}

}  // namespace rosa

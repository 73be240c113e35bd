#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rosa/model.hpp"
#include "rosa/random.hpp"

namespace rosa {

/// One simulated realization of the per-trial OC contributions.
struct OcContribution {
  std::vector<double> values;
};

/// A simulatable trial design. Implementations must be deterministic given
/// the scenario and the state of `rng`, and must not hold mutable state, so
/// a single instance can be shared by all workers.
class TrialDesign {
 public:
  virtual ~TrialDesign() = default;

  virtual std::string name() const = 0;
  virtual ParameterSpace parameter_space() const = 0;
  virtual OcSchema oc_schema() const = 0;

  /// Writes R contributions for one simulated trial into `out`.
  virtual void simulate_into(const Scenario& theta, Rng& rng, std::span<double> out) const = 0;

  /// Throws InvalidArgument if the scenario cannot be simulated (e.g. an
  /// infeasible joint distribution). Called once per scenario by the engine.
  virtual void check_scenario(const Scenario& theta) const {
    if (theta.size() != parameter_space().dim())
      throw InvalidArgument(name() + ": scenario has wrong dimension");
  }

  OcContribution simulate_once(const Scenario& theta, Rng& rng) const {
    OcContribution c{std::vector<double>(oc_schema().size())};
    simulate_into(theta, rng, c.values);
    return c;
  }
};

using DesignPtr = std::shared_ptr<const TrialDesign>;

}  // namespace rosa

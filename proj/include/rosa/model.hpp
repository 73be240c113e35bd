#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "rosa/error.hpp"

namespace rosa {

/// Box of unknown parameters. Fixed dimensions stay part of the coordinate
/// system so restricted and unrestricted scenarios remain comparable.
class ParameterSpace {
 public:
  ParameterSpace() = default;

  ParameterSpace(std::vector<std::string> names, std::vector<double> lower,
                 std::vector<double> upper,
                 std::vector<std::optional<double>> fixed = {})
      : names_(std::move(names)),
        lower_(std::move(lower)),
        upper_(std::move(upper)),
        fixed_(std::move(fixed)) {
    if (fixed_.empty()) fixed_.resize(names_.size());
    check();
  }

  std::size_t dim() const noexcept { return names_.size(); }

  std::size_t free_dim() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(fixed_.begin(), fixed_.end(), [](auto& f) { return !f.has_value(); }));
  }

  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::vector<double>& lower() const noexcept { return lower_; }
  const std::vector<double>& upper() const noexcept { return upper_; }
  const std::vector<std::optional<double>>& fixed() const noexcept { return fixed_; }

  double lower(std::size_t i) const { return lower_.at(i); }
  double upper(std::size_t i) const { return upper_.at(i); }
  double range(std::size_t i) const { return upper_.at(i) - lower_.at(i); }
  bool is_fixed(std::size_t i) const { return fixed_.at(i).has_value(); }
  bool is_restricted() const noexcept { return free_dim() != dim(); }

  std::optional<std::size_t> index_of(const std::string& name) const {
    auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names_.begin());
  }

  /// Same box with every fixed value dropped.
  ParameterSpace unrestricted() const { return ParameterSpace(names_, lower_, upper_); }

  bool contains(std::span<const double> theta) const {
    if (theta.size() != dim()) return false;
    for (std::size_t i = 0; i < dim(); ++i) {
      if (!(theta[i] >= lower_[i] && theta[i] <= upper_[i])) return false;
      if (fixed_[i] && theta[i] != *fixed_[i]) return false;
    }
    return true;
  }

  friend bool operator==(const ParameterSpace&, const ParameterSpace&) = default;

 private:
  void check() const {
    if (names_.empty()) throw InvalidArgument("ParameterSpace: needs at least one dimension");
    if (lower_.size() != names_.size() || upper_.size() != names_.size() ||
        fixed_.size() != names_.size())
      throw InvalidArgument("ParameterSpace: names, bounds and fixed values differ in length");
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!seen.insert(names_[i]).second)
        throw InvalidArgument("ParameterSpace: duplicate dimension '" + names_[i] + "'");
      if (!std::isfinite(lower_[i]) || !std::isfinite(upper_[i]))
        throw InvalidArgument("ParameterSpace: bounds of '" + names_[i] + "' must be finite");
      if (fixed_[i]) {
        if (!(lower_[i] <= *fixed_[i] && *fixed_[i] <= upper_[i]))
          throw InvalidArgument("ParameterSpace: fixed value of '" + names_[i] +
                                "' lies outside its bounds");
      } else if (!(lower_[i] < upper_[i])) {
        throw InvalidArgument("ParameterSpace: '" + names_[i] + "' needs lower < upper");
      }
    }
  }

  std::vector<std::string> names_;
  std::vector<double> lower_;
  std::vector<double> upper_;
  std::vector<std::optional<double>> fixed_;
};

struct Scenario {
  std::vector<double> theta;

  std::size_t size() const noexcept { return theta.size(); }
  double operator[](std::size_t i) const { return theta[i]; }
  friend bool operator==(const Scenario&, const Scenario&) = default;
};

/// Unordered collection of K scenarios; losses never depend on member order.
struct ScenarioSet {
  std::vector<Scenario> scenarios;

  std::size_t size() const noexcept { return scenarios.size(); }
  const Scenario& operator[](std::size_t k) const { return scenarios[k]; }
  Scenario& operator[](std::size_t k) { return scenarios[k]; }
  auto begin() const { return scenarios.begin(); }
  auto end() const { return scenarios.end(); }
  friend bool operator==(const ScenarioSet&, const ScenarioSet&) = default;
};

enum class OcKind { probability, count, duration, other };

inline const char* to_string(OcKind k) {
  switch (k) {
    case OcKind::probability: return "probability";
    case OcKind::count: return "count";
    case OcKind::duration: return "duration";
    case OcKind::other: return "other";
  }
  return "other";
}

inline OcKind oc_kind_from_string(const std::string& s) {
  if (s == "probability") return OcKind::probability;
  if (s == "count") return OcKind::count;
  if (s == "duration") return OcKind::duration;
  if (s == "other") return OcKind::other;
  throw InvalidArgument("unknown OC kind '" + s + "'");
}

/// Names and kinds of the R operating characteristics a design reports.
struct OcSchema {
  std::vector<std::string> names;
  std::vector<OcKind> kinds;

  std::size_t size() const noexcept { return names.size(); }
  friend bool operator==(const OcSchema&, const OcSchema&) = default;
};

/// One value per OC. The schema travels separately so that large OC tables
/// do not repeat names per row.
struct OcVector {
  std::vector<double> values;

  std::size_t size() const noexcept { return values.size(); }
  double operator[](std::size_t r) const { return values[r]; }
  friend bool operator==(const OcVector&, const OcVector&) = default;
};

inline bool oc_in_range(const OcVector& v, const OcSchema& schema) {
  if (v.size() != schema.size()) return false;
  for (std::size_t r = 0; r < v.size(); ++r) {
    const double x = v[r];
    if (!std::isfinite(x)) return false;
    switch (schema.kinds[r]) {
      case OcKind::probability:
        if (x < 0.0 || x > 1.0) return false;
        break;
      case OcKind::count:
      case OcKind::duration:
        if (x < 0.0) return false;
        break;
      case OcKind::other: break;
    }
  }
  return true;
}

struct SensitivityReport {
  ParameterSpace space;
  OcSchema schema;
  ScenarioSet scenario_set;
  std::vector<OcVector> surrogate_ocs;
  std::vector<OcVector> mc_ocs;        // empty when no fresh MC was run
  std::vector<OcVector> mc_se;         // standard errors of mc_ocs
  double achieved_loss = 0.0;
  std::vector<double> marginal_losses;  // length R
  Scenario witness;
  std::uint64_t seed = 0;
  std::string config_digest;
};

/// Returns `space` with the given dimensions pinned.
inline ParameterSpace make_restriction(const ParameterSpace& space,
                                       const std::map<std::string, double>& assignments) {
  auto fixed = space.fixed();
  for (const auto& [name, value] : assignments) {
    auto idx = space.index_of(name);
    if (!idx) throw InvalidArgument("make_restriction: unknown dimension '" + name + "'");
    if (!(space.lower(*idx) <= value && value <= space.upper(*idx)))
      throw InvalidArgument("make_restriction: value for '" + name + "' outside [" +
                            std::to_string(space.lower(*idx)) + ", " +
                            std::to_string(space.upper(*idx)) + "]");
    fixed[*idx] = value;
  }
  return ParameterSpace(space.names(), space.lower(), space.upper(), std::move(fixed));
}

/// Projects onto the box; fixed coordinates take their fixed value.
inline Scenario clamp_to_space(std::span<const double> theta, const ParameterSpace& space) {
  if (theta.size() != space.dim())
    throw InvalidArgument("clamp_to_space: expected " + std::to_string(space.dim()) +
                          " coordinates, got " + std::to_string(theta.size()));
  Scenario s{std::vector<double>(theta.begin(), theta.end())};
  for (std::size_t i = 0; i < space.dim(); ++i) {
    if (space.is_fixed(i))
      s.theta[i] = *space.fixed()[i];
    else
      s.theta[i] = std::clamp(s.theta[i], space.lower(i), space.upper(i));
  }
  return s;
}

/// Throws if a scenario violates its space. Intended for tests and debug checks.
inline void validate_scenario(const Scenario& s, const ParameterSpace& space) {
  if (!space.contains(s.theta)) throw InvalidArgument("scenario lies outside its parameter space");
}

inline void validate_set(const ScenarioSet& set, const ParameterSpace& space) {
  if (set.size() == 0) throw InvalidArgument("scenario set must contain at least one scenario");
  for (const auto& s : set) validate_scenario(s, space);
}

}  // namespace rosa

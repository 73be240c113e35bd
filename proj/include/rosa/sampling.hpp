#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "rosa/model.hpp"
#include "rosa/random.hpp"

namespace rosa {

struct LhsPlan {
  std::size_t points = 1000;
  ParameterSpace space;
  std::uint64_t seed = 0;
};

struct CloudSpec {
  std::size_t size = 100000;
  ParameterSpace space;
  std::uint64_t seed = 0;
};

/// Latin hypercube sample: each free dimension has exactly one point in each
/// of the `points` equal-width strata, jittered uniformly inside the stratum,
/// with independent stratum permutations per dimension. Each dimension draws
/// from its own substream.
inline std::vector<Scenario> lhs_sample(const LhsPlan& plan) {
  const auto& space = plan.space;
  const std::size_t n = plan.points;
  if (n == 0) throw InvalidArgument("lhs_sample: need at least one point");
  std::vector<Scenario> out(n, Scenario{std::vector<double>(space.dim())});
  std::vector<std::size_t> strata(n);
  for (std::size_t i = 0; i < space.dim(); ++i) {
    if (space.is_fixed(i)) {
      for (auto& s : out) s.theta[i] = *space.fixed()[i];
      continue;
    }
    Rng rng = make_stream(plan.seed, {0x1A5, i});
    std::iota(strata.begin(), strata.end(), std::size_t{0});
    // Fisher-Yates with our own uniform so results do not depend on the
    // standard library's shuffle implementation.
    for (std::size_t j = n; j > 1; --j) {
      const auto k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(j));
      std::swap(strata[j - 1], strata[std::min(k, j - 1)]);
    }
    const double width = space.range(i) / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
      const double v = space.lower(i) + width * (static_cast<double>(strata[j]) + uniform01(rng));
      out[j].theta[i] = std::min(v, space.upper(i));
    }
  }
  return out;
}

/// Independent uniform points over the free dimensions of the space.
inline std::vector<Scenario> uniform_sample(const CloudSpec& spec) {
  const auto& space = spec.space;
  std::vector<Scenario> out(spec.size, Scenario{std::vector<double>(space.dim())});
  for (std::size_t i = 0; i < space.dim(); ++i) {
    if (space.is_fixed(i)) {
      for (auto& s : out) s.theta[i] = *space.fixed()[i];
      continue;
    }
    Rng rng = make_stream(spec.seed, {0xC10D, i});
    for (auto& s : out) s.theta[i] = uniform(rng, space.lower(i), space.upper(i));
  }
  return out;
}

}  // namespace rosa

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "rosa/loss.hpp"
#include "rosa/parallel.hpp"
#include "rosa/sampling.hpp"

namespace rosa {

enum class CoolingSchedule { geometric, piecewise_constant };

/// Which members a proposal perturbs: every scenario at once, or one member
/// chosen uniformly at random.
enum class MoveKind { all, single };

struct SaConfig {
  std::size_t K = 3;
  std::size_t iterations = 1'000'000;  // hard cap; the schedule usually ends first
  double t0 = 1000.0;
  double cooling = 0.8;
  double t_min = 0.1;
  CoolingSchedule schedule = CoolingSchedule::piecewise_constant;
  std::size_t steps_per_temperature = 50;
  double proposal_sd = 0.05;  // fraction of each dimension's range
  // Proposal sd at the end of the run; decays geometrically from
  // proposal_sd. Negative keeps it constant.
  double proposal_sd_final = -1.0;
  MoveKind move = MoveKind::all;
  std::uint64_t seed = 0;
  ParameterSpace space;  // candidate space

  void validate() const {
    if (K == 0) throw InvalidArgument("SA: K must be >= 1");
    if (!(cooling > 0.0 && cooling < 1.0)) throw InvalidArgument("SA: cooling factor must lie in (0, 1)");
    if (!(t0 > 0.0 && t_min > 0.0 && t_min < t0)) throw InvalidArgument("SA: need 0 < T_min < T0");
    if (!(proposal_sd >= 0.0)) throw InvalidArgument("SA: proposal sd must be >= 0");
    if (schedule == CoolingSchedule::piecewise_constant && steps_per_temperature == 0)
      throw InvalidArgument("SA: steps_per_temperature must be >= 1");
    if (space.dim() == 0) throw InvalidArgument("SA: candidate space is empty");
  }

  double temperature(std::size_t i) const {
    const double level = schedule == CoolingSchedule::geometric
                             ? static_cast<double>(i)
                             : static_cast<double>(i / steps_per_temperature);
    // repeated multiplication keeps T_{i+1} = r T_i exact
    double t = t0;
    for (double l = 0; l < level; l += 1.0) t *= cooling;
    return t;
  }

  /// Number of iterations the run performs.
  std::size_t planned_iterations() const {
    std::size_t levels = 0;
    for (double t = t0; t >= t_min; t *= cooling) ++levels;
    const std::size_t n = schedule == CoolingSchedule::geometric ? levels : levels * steps_per_temperature;
    return std::min(n, iterations);
  }

  double proposal_sd_at(std::size_t i, std::size_t planned) const {
    if (proposal_sd_final < 0.0 || proposal_sd == 0.0 || planned <= 1) return proposal_sd;
    const double frac = static_cast<double>(i) / static_cast<double>(planned - 1);
    return proposal_sd * std::pow(proposal_sd_final / proposal_sd, frac);
  }
};

struct SaRecord {
  std::size_t iteration;
  double temperature;
  double current_loss;
  double proposal_loss;
  bool accepted;
};

struct SaTrace {
  std::vector<SaRecord> records;
  ScenarioSet initial_set;
  double initial_loss = 0.0;
  ScenarioSet final_set;  // state of the chain after the last iteration
  double final_loss = 0.0;
  ScenarioSet best_set;  // best state ever visited
  double best_loss = 0.0;
  std::uint64_t seed = 0;
};

/// Acceptance probability of moving from `current` to `proposal` at temperature T.
inline double accept_probability(double current_loss, double proposal_loss, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("accept_probability: temperature must be positive");
  if (proposal_loss <= current_loss) return 1.0;
  return std::min(1.0, std::exp((current_loss - proposal_loss) / temperature));
}

inline Scenario perturb_scenario(const Scenario& s, const ParameterSpace& space, double sd_fraction,
                                 Rng& rng) {
  Scenario out = s;
  for (std::size_t i = 0; i < space.dim(); ++i) {
    if (space.is_fixed(i)) continue;
    out.theta[i] += sd_fraction * space.range(i) * std_normal(rng);
  }
  return clamp_to_space(out.theta, space);
}

/// Gaussian noise on every free coordinate of every member, then clamping.
inline ScenarioSet perturb(const ScenarioSet& set, const SaConfig& cfg, Rng& rng,
                           std::optional<double> sd_fraction = std::nullopt) {
  const double sd = sd_fraction.value_or(cfg.proposal_sd);
  ScenarioSet out;
  out.scenarios.reserve(set.size());
  for (const auto& s : set) out.scenarios.push_back(perturb_scenario(s, cfg.space, sd, rng));
  return out;
}

inline ScenarioSet random_set(const ParameterSpace& space, std::size_t K, std::uint64_t seed) {
  return ScenarioSet{uniform_sample(CloudSpec{K, space, seed})};
}

/// One simulated-annealing chain started from uniform draws over the
/// candidate space.
inline SaTrace sa_run(const LossEvaluator& evaluator, const SaConfig& cfg) {
  cfg.validate();
  SaTrace trace;
  trace.seed = cfg.seed;
  Rng rng = make_stream(cfg.seed, {0x5A});
  auto tracker = evaluator.tracker();

  ScenarioSet current = random_set(cfg.space, cfg.K, derive_seed(cfg.seed, {0x1417}));
  double current_loss = tracker->reset(current);
  trace.initial_set = current;
  trace.initial_loss = current_loss;
  trace.best_set = current;
  trace.best_loss = current_loss;

  const std::size_t planned = cfg.planned_iterations();
  trace.records.reserve(planned);
  double T = cfg.t0;
  for (std::size_t i = 0; i < planned; ++i) {
    if (i > 0 && (cfg.schedule == CoolingSchedule::geometric || i % cfg.steps_per_temperature == 0))
      T *= cfg.cooling;
    const double sd = cfg.proposal_sd_at(i, planned);
    double proposal_loss;
    ScenarioSet proposal;
    std::size_t moved = 0;
    Scenario moved_to;
    if (cfg.move == MoveKind::single) {
      moved = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(cfg.K)), cfg.K - 1);
      moved_to = perturb_scenario(current[moved], cfg.space, sd, rng);
      proposal_loss = tracker->propose_replace(moved, moved_to);
    } else {
      proposal = perturb(current, cfg, rng, sd);
      proposal_loss = tracker->propose(proposal);
    }
    bool accepted = proposal_loss <= current_loss;
    if (!accepted) accepted = uniform01(rng) <= accept_probability(current_loss, proposal_loss, T);
    trace.records.push_back({i, T, current_loss, proposal_loss, accepted});
    if (accepted) {
      tracker->accept();
      if (cfg.move == MoveKind::single)
        current[moved] = std::move(moved_to);
      else
        current = std::move(proposal);
      current_loss = proposal_loss;
      if (current_loss < trace.best_loss) {
        trace.best_loss = current_loss;
        trace.best_set = current;
      }
    }
  }
  trace.final_set = current;
  trace.final_loss = current_loss;
  return trace;
}

struct ChainSummary {
  double min_loss = 0.0;
  double median_loss = 0.0;
  double max_loss = 0.0;
  double relative_spread = 0.0;  // (max - min) / min over best-ever losses
  bool spread_flag = false;      // true when relative_spread > 10%
  std::size_t best_chain = 0;
};

struct ReplicateResult {
  std::vector<SaTrace> chains;
  ChainSummary summary;

  const SaTrace& best() const { return chains[summary.best_chain]; }
};

inline ChainSummary summarize_chains(const std::vector<SaTrace>& chains) {
  ChainSummary s;
  std::vector<double> losses;
  for (const auto& c : chains) losses.push_back(c.best_loss);
  s.best_chain = static_cast<std::size_t>(std::min_element(losses.begin(), losses.end()) - losses.begin());
  std::vector<double> sorted = losses;
  std::sort(sorted.begin(), sorted.end());
  s.min_loss = sorted.front();
  s.max_loss = sorted.back();
  const std::size_t n = sorted.size();
  s.median_loss = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  s.relative_spread = s.min_loss > 0.0 ? (s.max_loss - s.min_loss) / s.min_loss
                                       : (s.max_loss > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
  s.spread_flag = s.relative_spread > 0.10;
  return s;
}

/// Independent chains with the given seeds, run in parallel.
inline ReplicateResult sa_replicates(const LossEvaluator& evaluator, const SaConfig& cfg,
                                     const std::vector<std::uint64_t>& seeds, std::size_t threads = 1) {
  if (seeds.size() < 2) throw InvalidArgument("sa_replicates: need at least two chains");
  ReplicateResult out;
  out.chains.resize(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t c) {
    SaConfig chain_cfg = cfg;
    chain_cfg.seed = seeds[c];
    out.chains[c] = sa_run(evaluator, chain_cfg);
  });
  out.summary = summarize_chains(out.chains);
  return out;
}

/// Chains seeded from cfg.seed and the chain index.
inline ReplicateResult sa_replicates(const LossEvaluator& evaluator, const SaConfig& cfg,
                                     std::size_t n_chains, std::size_t threads = 1) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t c = 0; c < n_chains; ++c) seeds.push_back(derive_seed(cfg.seed, {0xC4A1, c}));
  return sa_replicates(evaluator, cfg, seeds, threads);
}

struct BruteForceResult {
  ScenarioSet best_set;
  double loss = 0.0;
  std::size_t subsets = 0;
};

inline double binomial_coefficient(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(c);
}

/// Exhaustive search over K-subsets of `candidates`; ties keep the first
/// subset in lexicographic order.
inline BruteForceResult brute_force_select(const std::vector<Scenario>& candidates, std::size_t K,
                                           const OcCache& cache, const Surrogate& surrogate,
                                           const LossSpec& spec, double budget = 1e7) {
  const std::size_t n = candidates.size();
  if (K == 0 || K > n) throw InvalidArgument("brute_force_select: need 1 <= K <= number of candidates");
  if (binomial_coefficient(n, K) > budget)
    throw InvalidArgument("brute_force_select: combinatorial budget exceeded");
  const std::size_t N = cache.size(), R = cache.R;
  const auto factors = spec.factors();

  // dist[c * N + i]: metric between candidate c and cloud row i
  std::vector<double> dist(n * N);
  std::vector<double> center(R);
  for (std::size_t c = 0; c < n; ++c) {
    surrogate.predict_into(candidates[c].theta, center);
    for (std::size_t i = 0; i < N; ++i) {
      const auto row = cache.row(i);
      double d = 0.0;
      for (std::size_t r = 0; r < R; ++r) d += factors[r] * std::abs(row[r] - center[r]);
      dist[c * N + i] = d;
    }
  }

  BruteForceResult out;
  out.loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> idx(K), best_idx;
  for (std::size_t k = 0; k < K; ++k) idx[k] = k;
  for (;;) {
    double worst = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double nearest = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K; ++k) nearest = std::min(nearest, dist[idx[k] * N + i]);
      worst = std::max(worst, nearest);
    }
    ++out.subsets;
    if (worst < out.loss) {
      out.loss = worst;
      best_idx = idx;
    }
    // next combination in lexicographic order
    std::size_t k = K;
    while (k > 0 && idx[k - 1] == n - K + (k - 1)) --k;
    if (k == 0) break;
    ++idx[k - 1];
    for (std::size_t j = k; j < K; ++j) idx[j] = idx[j - 1] + 1;
  }
  for (auto c : best_idx) out.best_set.scenarios.push_back(candidates[c]);
  return out;
}

struct SweepRow {
  std::size_t K = 0;
  double best_loss = 0.0;     // best over chains
  double cleaned_loss = 0.0;  // running minimum over increasing K
  double relative_spread = 0.0;
  ScenarioSet best_set;
};

/// Runs replicate chains for every K and reports the best loss per K. The
/// cleaned column is the running minimum in K, which is non-increasing.
inline std::vector<SweepRow> k_sweep(const LossEvaluator& evaluator, const SaConfig& cfg_template,
                                     std::vector<std::size_t> Ks, std::size_t n_chains,
                                     std::size_t threads = 1) {
  if (Ks.empty()) throw InvalidArgument("k_sweep: no K values");
  std::sort(Ks.begin(), Ks.end());
  std::vector<SweepRow> rows;
  double running = std::numeric_limits<double>::infinity();
  for (std::size_t K : Ks) {
    SaConfig cfg = cfg_template;
    cfg.K = K;
    cfg.seed = derive_seed(cfg_template.seed, {0x5EE9, K});
    auto rep = sa_replicates(evaluator, cfg, n_chains, threads);
    SweepRow row;
    row.K = K;
    row.best_loss = rep.summary.min_loss;
    running = std::min(running, row.best_loss);
    row.cleaned_loss = running;
    row.relative_spread = rep.summary.relative_spread;
    row.best_set = rep.best().best_set;
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Smallest K whose cleaned loss does not exceed `threshold`.
inline std::optional<std::size_t> min_k_for_threshold(const std::vector<SweepRow>& rows, double threshold) {
  for (const auto& r : rows)
    if (r.cleaned_loss <= threshold) return r.K;
  return std::nullopt;
}

}  // namespace rosa

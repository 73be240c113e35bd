#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rosa/model.hpp"
#include "rosa/parallel.hpp"
#include "rosa/surrogate.hpp"

namespace rosa {

/// Only the worst-case (minimax) coverage loss is implemented. The tag keeps
/// room for an expectation-type loss over a prior.
enum class LossKind { minimax };

/// Weights and per-OC divisors of the metric
/// D(a, b) = sum_r w_r |a_r - b_r| / scale_r.
struct LossSpec {
  std::vector<double> weights;
  std::vector<double> scales;  // empty means all ones
  LossKind kind = LossKind::minimax;

  static LossSpec uniform(std::size_t R) { return {std::vector<double>(R, 1.0 / static_cast<double>(R)), {}}; }

  /// Weight one on OC r, unit scaling.
  static LossSpec marginal(std::size_t R, std::size_t r) {
    if (r >= R) throw InvalidArgument("marginal loss: OC index out of range");
    LossSpec s{std::vector<double>(R, 0.0), {}};
    s.weights[r] = 1.0;
    return s;
  }

  std::size_t size() const noexcept { return weights.size(); }

  void validate() const {
    if (weights.empty()) throw InvalidArgument("LossSpec: no weights");
    double sum = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0)) throw InvalidArgument("LossSpec: weights must be non-negative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("LossSpec: weights must sum to one");
    if (!scales.empty()) {
      if (scales.size() != weights.size()) throw InvalidArgument("LossSpec: scales length mismatch");
      for (double s : scales)
        if (!(s > 0.0)) throw InvalidArgument("LossSpec: scales must be positive");
    }
  }

  /// w_r / scale_r, the factor applied to |a_r - b_r|.
  std::vector<double> factors() const {
    std::vector<double> f = weights;
    if (!scales.empty())
      for (std::size_t r = 0; r < f.size(); ++r) f[r] /= scales[r];
    return f;
  }
};

inline double metric_d(std::span<const double> a, std::span<const double> b, const LossSpec& spec) {
  if (a.size() != b.size() || a.size() != spec.size())
    throw InvalidArgument("metric_d: OC vectors and weights must have equal length");
  double d = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r) {
    const double s = spec.scales.empty() ? 1.0 : spec.scales[r];
    d += spec.weights[r] * std::abs(a[r] - b[r]) / s;
  }
  return d;
}

inline double metric_d(const OcVector& a, const OcVector& b, const LossSpec& spec) {
  return metric_d(std::span<const double>(a.values), std::span<const double>(b.values), spec);
}

/// Surrogate OCs precomputed over the finite cloud.
struct OcCache {
  std::vector<Scenario> cloud;
  std::vector<double> oc;  // cloud.size() x R, row-major
  std::size_t R = 0;

  std::size_t size() const noexcept { return cloud.size(); }
  std::span<const double> row(std::size_t i) const { return {oc.data() + i * R, R}; }
};

inline OcCache build_cache(const Surrogate& surrogate, std::vector<Scenario> cloud,
                           std::size_t threads = 1) {
  OcCache c;
  c.R = surrogate.output_dim();
  c.oc = surrogate.predict_matrix(cloud, threads);
  c.cloud = std::move(cloud);
  return c;
}

/// Default divisors: 1 for probability OCs, the range over the cache for the
/// others (1 if that range is zero).
inline std::vector<double> default_scales(const OcSchema& schema, const OcCache& cache) {
  std::vector<double> s(schema.size(), 1.0);
  for (std::size_t r = 0; r < schema.size(); ++r) {
    if (schema.kinds[r] == OcKind::probability || cache.size() == 0) continue;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < cache.size(); ++i) {
      lo = std::min(lo, cache.row(i)[r]);
      hi = std::max(hi, cache.row(i)[r]);
    }
    if (hi > lo) s[r] = hi - lo;
  }
  return s;
}

struct LossResult {
  double loss = 0.0;
  std::size_t witness_index = 0;  // cloud row attaining the max
  Scenario witness;
};

/// max over cloud rows of min over centers of D, given center OCs
/// (K x R, row-major). Ties resolve to the first cloud row.
inline LossResult cover_loss(const OcCache& cache, std::span<const double> centers,
                             std::span<const double> factors, std::size_t threads = 1) {
  const std::size_t R = cache.R;
  const std::size_t K = centers.size() / R;
  if (K == 0) throw InvalidArgument("loss: empty scenario set");
  const std::size_t N = cache.size();
  const std::size_t chunks = std::min<std::size_t>(std::max<std::size_t>(1, resolve_threads(threads)), std::max<std::size_t>(N, 1));
  std::vector<double> chunk_best(chunks, -1.0);
  std::vector<std::size_t> chunk_idx(chunks, 0);
  const std::size_t per = (N + chunks - 1) / chunks;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t begin = c * per, end = std::min(N, begin + per);
    for (std::size_t i = begin; i < end; ++i) {
      const double* row = cache.oc.data() + i * R;
      double nearest = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < K; ++k) {
        const double* ck = centers.data() + k * R;
        double d = 0.0;
        for (std::size_t r = 0; r < R; ++r) d += factors[r] * std::abs(row[r] - ck[r]);
        nearest = std::min(nearest, d);
      }
      if (nearest > chunk_best[c]) {
        chunk_best[c] = nearest;
        chunk_idx[c] = i;
      }
    }
  });
  LossResult out{-1.0, 0, {}};
  for (std::size_t c = 0; c < chunks; ++c)
    if (chunk_best[c] > out.loss) {
      out.loss = chunk_best[c];
      out.witness_index = chunk_idx[c];
    }
  if (N == 0) out.loss = 0.0;
  else out.witness = cache.cloud[out.witness_index];
  return out;
}

inline LossResult loss_hat(const ScenarioSet& set, const OcCache& cache, const Surrogate& surrogate,
                           const LossSpec& spec, std::size_t threads = 1) {
  if (set.size() == 0) throw InvalidArgument("loss_hat: empty scenario set");
  if (spec.size() != cache.R) throw InvalidArgument("loss_hat: weights do not match OC count");
  std::vector<double> centers(set.size() * cache.R);
  for (std::size_t k = 0; k < set.size(); ++k)
    surrogate.predict_into(set[k].theta, std::span<double>(centers).subspan(k * cache.R, cache.R));
  return cover_loss(cache, centers, spec.factors(), threads);
}

inline LossResult marginal_loss(const ScenarioSet& set, const OcCache& cache,
                                const Surrogate& surrogate, std::size_t r, std::size_t threads = 1) {
  return loss_hat(set, cache, surrogate, LossSpec::marginal(cache.R, r), threads);
}

inline double utility(const ScenarioSet& set, const OcCache& cache, const Surrogate& surrogate,
                      const LossSpec& spec) {
  return -loss_hat(set, cache, surrogate, spec).loss;
}

/// Loss of a candidate set, with optional fast paths for proposals that
/// change one member. Implementations are single-chain, mutable state.
class LossTracker {
 public:
  virtual ~LossTracker() = default;
  /// Makes `set` current and returns its loss.
  virtual double reset(const ScenarioSet& set) = 0;
  /// Loss of `set` as a proposal; current state is unchanged until accept().
  virtual double propose(const ScenarioSet& set) = 0;
  /// Loss of current set with member k replaced by `s`.
  virtual double propose_replace(std::size_t k, const Scenario& s) = 0;
  virtual void accept() = 0;
};

/// Objective handed to the annealer: full evaluation plus a tracker factory.
class LossEvaluator {
 public:
  virtual ~LossEvaluator() = default;
  virtual double evaluate(const ScenarioSet& set) const = 0;
  virtual std::unique_ptr<LossTracker> tracker() const;
};

/// Tracker that re-evaluates from scratch.
class FullLossTracker final : public LossTracker {
 public:
  explicit FullLossTracker(const LossEvaluator& eval) : eval_(eval) {}
  double reset(const ScenarioSet& set) override {
    current_ = set;
    return eval_.evaluate(current_);
  }
  double propose(const ScenarioSet& set) override {
    pending_ = set;
    return eval_.evaluate(pending_);
  }
  double propose_replace(std::size_t k, const Scenario& s) override {
    pending_ = current_;
    pending_[k] = s;
    return eval_.evaluate(pending_);
  }
  void accept() override { current_ = pending_; }

 private:
  const LossEvaluator& eval_;
  ScenarioSet current_, pending_;
};

inline std::unique_ptr<LossTracker> LossEvaluator::tracker() const {
  return std::make_unique<FullLossTracker>(*this);
}

/// Minimax coverage loss over an OC cache. Its tracker keeps, per cloud row,
/// the nearest and second-nearest center so that single-member proposals
/// cost O(N R) instead of O(N K R).
class CoverLossEvaluator final : public LossEvaluator {
 public:
  CoverLossEvaluator(std::shared_ptr<const OcCache> cache, SurrogatePtr surrogate, LossSpec spec)
      : cache_(std::move(cache)), surrogate_(std::move(surrogate)), spec_(std::move(spec)) {
    spec_.validate();
    if (spec_.size() != cache_->R) throw InvalidArgument("loss: weights do not match OC count");
    factors_ = spec_.factors();
  }

  double evaluate(const ScenarioSet& set) const override {
    return loss_hat(set, *cache_, *surrogate_, spec_).loss;
  }

  std::unique_ptr<LossTracker> tracker() const override;

  const OcCache& cache() const noexcept { return *cache_; }
  const Surrogate& surrogate() const noexcept { return *surrogate_; }
  const LossSpec& spec() const noexcept { return spec_; }
  std::span<const double> factors() const noexcept { return factors_; }

 private:
  std::shared_ptr<const OcCache> cache_;
  SurrogatePtr surrogate_;
  LossSpec spec_;
  std::vector<double> factors_;
};

class CoverLossTracker final : public LossTracker {
 public:
  explicit CoverLossTracker(const CoverLossEvaluator& eval) : eval_(eval) {}

  double reset(const ScenarioSet& set) override {
    load(set, cur_);
    return cur_.loss;
  }

  double propose(const ScenarioSet& set) override {
    pending_full_ = true;
    load(set, pend_);
    return pend_.loss;
  }

  double propose_replace(std::size_t k, const Scenario& s) override {
    pending_full_ = false;
    pend_k_ = k;
    const std::size_t R = eval_.cache().R, N = eval_.cache().size();
    pend_center_.resize(R);
    eval_.surrogate().predict_into(s.theta, pend_center_);
    pend_scenario_ = s;
    pend_dist_.resize(N);
    const double* oc = eval_.cache().oc.data();
    const double* f = eval_.factors().data();
    const double* c = pend_center_.data();
    const double* best = cur_.best.data();
    const double* second = cur_.second.data();
    const std::size_t* best_idx = cur_.best_idx.data();
    double* out = pend_dist_.data();
    double worst = 0.0;
    if (R == 1) {
      const double f0 = f[0], c0 = c[0];
      for (std::size_t i = 0; i < N; ++i) {
        const double d = f0 * std::abs(oc[i] - c0);
        out[i] = d;
        const double other = best_idx[i] == k ? second[i] : best[i];
        worst = std::max(worst, std::min(other, d));
      }
    } else {
      for (std::size_t i = 0; i < N; ++i) {
        const double* row = oc + i * R;
        double d = 0.0;
        for (std::size_t r = 0; r < R; ++r) d += f[r] * std::abs(row[r] - c[r]);
        out[i] = d;
        const double other = best_idx[i] == k ? second[i] : best[i];
        worst = std::max(worst, std::min(other, d));
      }
    }
    pend_loss_ = worst;
    return worst;
  }

  void accept() override {
    if (pending_full_) {
      std::swap(cur_, pend_);
      return;
    }
    const std::size_t k = pend_k_, R = eval_.cache().R, K = cur_.set.size();
    cur_.set[k] = pend_scenario_;
    std::copy(pend_center_.begin(), pend_center_.end(), cur_.centers.begin() + static_cast<std::ptrdiff_t>(k * R));
    for (std::size_t i = 0; i < eval_.cache().size(); ++i) {
      const double d = pend_dist_[i];
      if (cur_.best_idx[i] == k) {
        // still nearest if no farther than the runner-up; otherwise the new
        // runner-up is unknown
        if (d <= cur_.second[i]) cur_.best[i] = d;
        else rescan(i, K, cur_);
      } else if (cur_.second_idx[i] == k) {
        if (d < cur_.best[i]) {
          cur_.second[i] = cur_.best[i];
          cur_.second_idx[i] = cur_.best_idx[i];
          cur_.best[i] = d;
          cur_.best_idx[i] = k;
        } else if (d <= cur_.second[i]) {
          cur_.second[i] = d;
        } else {
          rescan(i, K, cur_);
        }
      } else if (d < cur_.best[i]) {
        cur_.second[i] = cur_.best[i];
        cur_.second_idx[i] = cur_.best_idx[i];
        cur_.best[i] = d;
        cur_.best_idx[i] = k;
      } else if (d < cur_.second[i]) {
        cur_.second[i] = d;
        cur_.second_idx[i] = k;
      }
    }
    cur_.loss = pend_loss_;
  }

 private:
  struct State {
    ScenarioSet set;
    std::vector<double> centers;
    std::vector<double> best, second;
    std::vector<std::size_t> best_idx, second_idx;
    double loss = 0.0;
  };

  double dist(std::size_t i, const double* center) const {
    const auto row = eval_.cache().row(i);
    const auto f = eval_.factors();
    double d = 0.0;
    for (std::size_t r = 0; r < row.size(); ++r) d += f[r] * std::abs(row[r] - center[r]);
    return d;
  }

  void rescan(std::size_t i, std::size_t K, State& st) const {
    const std::size_t R = eval_.cache().R;
    double b = std::numeric_limits<double>::infinity(), s = b;
    std::size_t bi = 0, si = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double d = dist(i, st.centers.data() + k * R);
      if (d < b) {
        s = b;
        si = bi;
        b = d;
        bi = k;
      } else if (d < s) {
        s = d;
        si = k;
      }
    }
    st.best[i] = b;
    st.second[i] = s;
    st.best_idx[i] = bi;
    st.second_idx[i] = K > 1 ? si : K;  // K means "no second center"
  }

  void load(const ScenarioSet& set, State& st) const {
    if (set.size() == 0) throw InvalidArgument("loss: empty scenario set");
    const std::size_t R = eval_.cache().R, N = eval_.cache().size(), K = set.size();
    st.set = set;
    st.centers.resize(K * R);
    for (std::size_t k = 0; k < K; ++k)
      eval_.surrogate().predict_into(set[k].theta, std::span<double>(st.centers).subspan(k * R, R));
    st.best.resize(N);
    st.second.resize(N);
    st.best_idx.resize(N);
    st.second_idx.resize(N);
    double worst = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      rescan(i, K, st);
      worst = std::max(worst, st.best[i]);
    }
    st.loss = worst;
  }

  const CoverLossEvaluator& eval_;
  State cur_, pend_;
  bool pending_full_ = false;
  std::size_t pend_k_ = 0;
  std::vector<double> pend_center_, pend_dist_;
  Scenario pend_scenario_;
  double pend_loss_ = 0.0;
};

inline std::unique_ptr<LossTracker> CoverLossEvaluator::tracker() const {
  return std::make_unique<CoverLossTracker>(*this);
}

}  // namespace rosa

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rosa/mc_engine.hpp"
#include "rosa/model.hpp"
#include "rosa/parallel.hpp"
#include "rosa/random.hpp"
#include "rosa/stats.hpp"

namespace rosa {

/// Fitted map from scenarios to OC vectors. Implementations are immutable
/// after construction and safe to call concurrently.
class Surrogate {
 public:
  virtual ~Surrogate() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual const OcSchema& schema() const = 0;

  /// Evaluates one raw (unscaled) input into `out` (length R).
  virtual void predict_into(std::span<const double> theta, std::span<double> out) const = 0;

  std::size_t output_dim() const { return schema().size(); }

  OcVector predict(const Scenario& theta) const {
    check_dim(theta);
    OcVector v{std::vector<double>(output_dim())};
    predict_into(theta.theta, v.values);
    return v;
  }

  std::vector<OcVector> predict(const std::vector<Scenario>& thetas,
                                std::size_t threads = 1) const {
    for (const auto& t : thetas) check_dim(t);
    std::vector<OcVector> out(thetas.size(), OcVector{std::vector<double>(output_dim())});
    parallel_for(thetas.size(), threads,
                 [&](std::size_t i) { predict_into(thetas[i].theta, out[i].values); });
    return out;
  }

  /// Row-major |thetas| x R matrix of predictions.
  std::vector<double> predict_matrix(const std::vector<Scenario>& thetas,
                                     std::size_t threads = 1) const {
    for (const auto& t : thetas) check_dim(t);
    const std::size_t R = output_dim();
    std::vector<double> out(thetas.size() * R);
    parallel_for(thetas.size(), threads, [&](std::size_t i) {
      predict_into(thetas[i].theta, std::span<double>(out).subspan(i * R, R));
    });
    return out;
  }

 protected:
  void check_dim(const Scenario& t) const {
    if (t.size() != input_dim())
      throw InvalidArgument("surrogate: expected " + std::to_string(input_dim()) +
                            "-dimensional input, got " + std::to_string(t.size()));
  }
};

using SurrogatePtr = std::shared_ptr<const Surrogate>;

struct MlpArchitecture {
  std::vector<int> hidden{8, 64, 64};
};

struct MlpTrainConfig {
  std::size_t max_epochs = 2000;
  std::size_t patience = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double lr_decay = 0.0;  // step size lr / (1 + lr_decay * epoch)
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct MlpTrainingRecord {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double train_loss = 0.0;
  double holdout_loss = 0.0;
  std::uint64_t seed = 0;
  std::vector<bool> constant_outputs;  // OCs that were constant in the training data
};

/// How a network output is turned into an OC value.
enum class HeadKind { logistic, affine, constant };

struct OutputHead {
  HeadKind kind = HeadKind::affine;
  double offset = 0.0;  // affine: y = offset + scale * z;  constant: y = offset
  double scale = 1.0;
};

struct DenseLayer {
  int in = 0;
  int out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> biases;
};

/// Feed-forward ReLU network with per-dimension input scaling to [0, 1] and a
/// per-OC output head (logistic for probabilities, affine otherwise).
class MlpSurrogate final : public Surrogate {
 public:
  MlpSurrogate() = default;

  MlpSurrogate(OcSchema schema, std::vector<DenseLayer> layers, std::vector<double> in_offset,
               std::vector<double> in_scale, std::vector<OutputHead> heads,
               MlpTrainingRecord record = {})
      : schema_(std::move(schema)),
        layers_(std::move(layers)),
        in_offset_(std::move(in_offset)),
        in_scale_(std::move(in_scale)),
        heads_(std::move(heads)),
        record_(std::move(record)) {
    check_shapes();
  }

  /// He-initialised network for the given shapes; used by fit() and tests.
  static MlpSurrogate initialise(const OcSchema& schema, std::size_t input_dim,
                                 const MlpArchitecture& arch, std::uint64_t seed) {
    std::vector<int> widths{static_cast<int>(input_dim)};
    widths.insert(widths.end(), arch.hidden.begin(), arch.hidden.end());
    widths.push_back(static_cast<int>(schema.size()));
    Rng rng = make_stream(seed, {0x1417});
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      DenseLayer L{widths[l], widths[l + 1], {}, {}};
      if (L.in <= 0 || L.out <= 0) throw InvalidArgument("mlp: layer widths must be positive");
      const double sd = std::sqrt(2.0 / L.in);
      L.weights.resize(static_cast<std::size_t>(L.in * L.out));
      for (auto& w : L.weights) w = sd * std_normal(rng);
      L.biases.assign(static_cast<std::size_t>(L.out), 0.0);
      layers.push_back(std::move(L));
    }
    std::vector<OutputHead> heads(schema.size());
    for (std::size_t r = 0; r < schema.size(); ++r)
      heads[r].kind = schema.kinds[r] == OcKind::probability ? HeadKind::logistic : HeadKind::affine;
    return MlpSurrogate(schema, std::move(layers), std::vector<double>(input_dim, 0.0),
                        std::vector<double>(input_dim, 1.0), std::move(heads));
  }

  std::string kind() const override { return "mlp"; }
  std::size_t input_dim() const override { return in_offset_.size(); }
  const OcSchema& schema() const override { return schema_; }

  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }
  std::vector<DenseLayer>& mutable_layers() noexcept { return layers_; }
  const std::vector<double>& input_offset() const noexcept { return in_offset_; }
  const std::vector<double>& input_scale() const noexcept { return in_scale_; }
  const std::vector<OutputHead>& heads() const noexcept { return heads_; }
  const MlpTrainingRecord& record() const noexcept { return record_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& L : layers_) n += L.weights.size() + L.biases.size();
    return n;
  }

  std::size_t max_width() const {
    std::size_t w = input_dim();
    for (const auto& L : layers_) w = std::max(w, static_cast<std::size_t>(L.out));
    return w;
  }

  /// Raw network output (pre-head) for an already-scaled input. Summation
  /// order is fixed per neuron, so batching never changes results.
  void forward_scaled(std::span<const double> x, std::span<double> z, std::vector<double>& a,
                      std::vector<double>& b) const {
    a.assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      b.assign(L.biases.begin(), L.biases.end());
      for (int i = 0; i < L.in; ++i) {
        const double xi = a[static_cast<std::size_t>(i)];
        if (xi == 0.0) continue;
        for (int j = 0; j < L.out; ++j)
          b[static_cast<std::size_t>(j)] += L.weights[static_cast<std::size_t>(j * L.in + i)] * xi;
      }
      if (l + 1 < layers_.size())
        for (auto& v : b) v = v > 0.0 ? v : 0.0;
      std::swap(a, b);
    }
    std::copy(a.begin(), a.end(), z.begin());
  }

  double apply_head(std::size_t r, double z) const {
    const auto& h = heads_[r];
    switch (h.kind) {
      case HeadKind::logistic: return 1.0 / (1.0 + std::exp(-z));
      case HeadKind::affine: return h.offset + h.scale * z;
      case HeadKind::constant: return h.offset;
    }
    return z;
  }

  void predict_into(std::span<const double> theta, std::span<double> out) const override {
    thread_local std::vector<double> x, a, b;
    x.resize(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i)
      x[i] = (theta[i] - in_offset_[i]) * in_scale_[i];
    forward_scaled(x, out, a, b);
    for (std::size_t r = 0; r < out.size(); ++r) out[r] = apply_head(r, out[r]);
  }

  /// Mean squared error on scaled targets over a batch of scaled inputs
  /// (rows of `x`), with its gradient flattened layer by layer as
  /// [W_0, b_0, W_1, b_1, ...]. Constant heads contribute nothing.
  /// `out_weights` multiplies each output's squared error (default 1).
  double loss_and_gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y_scaled,
                           std::vector<double>* grad, std::span<const double> out_weights = {}) const {
    using Mat = Eigen::MatrixXd;
    using RowMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    const auto n_layers = layers_.size();
    std::vector<Mat> acts;  // acts[l]: input to layer l (B x in)
    std::vector<Mat> pre;   // pre-activations of hidden layers
    acts.reserve(n_layers + 1);
    acts.push_back(x);
    for (std::size_t l = 0; l < n_layers; ++l) {
      const auto& L = layers_[l];
      RowMap W(L.weights.data(), L.out, L.in);
      Eigen::Map<const Eigen::RowVectorXd> bias(L.biases.data(), L.out);
      Mat h = (acts.back() * W.transpose()).rowwise() + bias;
      if (l + 1 < n_layers) {
        pre.push_back(h);
        acts.push_back(h.cwiseMax(0.0));
      } else {
        acts.push_back(std::move(h));
      }
    }
    const Mat& z = acts.back();
    const auto B = static_cast<double>(x.rows());
    const auto R = static_cast<Eigen::Index>(heads_.size());
    double active = 0.0;
    for (const auto& h : heads_) active += h.kind == HeadKind::constant ? 0.0 : 1.0;
    const double norm = B * std::max(active, 1.0);

    Mat delta(z.rows(), R);
    double loss = 0.0;
    for (Eigen::Index r = 0; r < R; ++r) {
      const auto& h = heads_[static_cast<std::size_t>(r)];
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        double pred = z(i, r), dpred = 1.0;
        if (h.kind == HeadKind::logistic) {
          pred = 1.0 / (1.0 + std::exp(-z(i, r)));
          dpred = pred * (1.0 - pred);
        } else if (h.kind == HeadKind::constant) {
          delta(i, r) = 0.0;
          continue;
        }
        const double w = out_weights.empty() ? 1.0 : out_weights[static_cast<std::size_t>(r)];
        const double e = pred - y_scaled(i, r);
        loss += w * e * e;
        delta(i, r) = 2.0 * w * e * dpred / norm;
      }
    }
    loss /= norm;
    if (!grad) return loss;

    grad->assign(parameter_count(), 0.0);
    std::vector<std::size_t> offsets(n_layers);
    std::size_t off = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      offsets[l] = off;
      off += layers_[l].weights.size() + layers_[l].biases.size();
    }
    for (std::size_t l = n_layers; l-- > 0;) {
      const auto& L = layers_[l];
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gW(
          grad->data() + offsets[l], L.out, L.in);
      Eigen::Map<Eigen::RowVectorXd> gb(grad->data() + offsets[l] + L.weights.size(), L.out);
      gW = delta.transpose() * acts[l];
      gb = delta.colwise().sum();
      if (l > 0) {
        RowMap W(L.weights.data(), L.out, L.in);
        Mat back = delta * W;
        delta = back.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
      }
    }
    return loss;
  }

  /// Flattened parameters in the same order as the gradient.
  std::vector<double> parameters() const {
    std::vector<double> p;
    p.reserve(parameter_count());
    for (const auto& L : layers_) {
      p.insert(p.end(), L.weights.begin(), L.weights.end());
      p.insert(p.end(), L.biases.begin(), L.biases.end());
    }
    return p;
  }

  void set_parameters(std::span<const double> p) {
    if (p.size() != parameter_count()) throw InvalidArgument("mlp: parameter count mismatch");
    std::size_t k = 0;
    for (auto& L : layers_) {
      for (auto& w : L.weights) w = p[k++];
      for (auto& b : L.biases) b = p[k++];
    }
  }

  /// Maps a raw OC value to the scale the network is trained on.
  double scale_target(std::size_t r, double y) const {
    const auto& h = heads_[r];
    if (h.kind == HeadKind::affine) return (y - h.offset) / h.scale;
    return y;
  }

  std::vector<double> scale_input(std::span<const double> theta) const {
    std::vector<double> x(theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) x[i] = (theta[i] - in_offset_[i]) * in_scale_[i];
    return x;
  }

 private:
  void check_shapes() const {
    if (layers_.empty()) throw InvalidArgument("mlp: no layers");
    if (in_offset_.size() != in_scale_.size()) throw InvalidArgument("mlp: scaler size mismatch");
    if (static_cast<std::size_t>(layers_.front().in) != in_offset_.size())
      throw InvalidArgument("mlp: first layer width does not match input dimension");
    if (static_cast<std::size_t>(layers_.back().out) != schema_.size() ||
        heads_.size() != schema_.size())
      throw InvalidArgument("mlp: output width does not match OC schema");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& L = layers_[l];
      if (L.weights.size() != static_cast<std::size_t>(L.in * L.out) ||
          L.biases.size() != static_cast<std::size_t>(L.out))
        throw InvalidArgument("mlp: layer " + std::to_string(l) + " has inconsistent shapes");
      if (l > 0 && layers_[l - 1].out != L.in)
        throw InvalidArgument("mlp: layer " + std::to_string(l) + " input width mismatch");
    }
  }

  OcSchema schema_;
  std::vector<DenseLayer> layers_;
  std::vector<double> in_offset_, in_scale_;
  std::vector<OutputHead> heads_;
  MlpTrainingRecord record_;

  friend MlpSurrogate fit_mlp(const TrainingSet&, const MlpArchitecture&, const MlpTrainConfig&);
};

namespace detail {

/// Row order that depends only on content, so that fitting is invariant to
/// permutations of the training rows.
inline std::vector<std::size_t> canonical_order(const TrainingSet& train) {
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& ta = train.scenarios[a].theta;
    const auto& tb = train.scenarios[b].theta;
    if (ta != tb) return ta < tb;
    return train.oc_means[a].values < train.oc_means[b].values;
  });
  return idx;
}

inline void seeded_shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t j = v.size(); j > 1; --j) {
    const auto k = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(j)), j - 1);
    std::swap(v[j - 1], v[k]);
  }
}

}  // namespace detail

/// Trains an MLP on (theta, OC mean) pairs by minibatch Adam on the scaled
/// mean squared error, keeping the parameters with the best holdout loss.
inline MlpSurrogate fit_mlp(const TrainingSet& train, const MlpArchitecture& arch = {},
                            const MlpTrainConfig& cfg = {}) {
  const std::size_t J = train.size();
  if (J < 50) throw InvalidArgument("fit: need at least 50 training scenarios, got " + std::to_string(J));
  if (cfg.batch_size == 0 || cfg.max_epochs == 0) throw InvalidArgument("fit: empty training schedule");
  const std::size_t d = train.scenarios.front().size();
  const std::size_t R = train.schema.size();

  MlpSurrogate model = MlpSurrogate::initialise(train.schema, d, arch, cfg.seed);

  // Input scaler from the observed training range.
  for (std::size_t i = 0; i < d; ++i) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : train.scenarios) {
      lo = std::min(lo, s.theta[i]);
      hi = std::max(hi, s.theta[i]);
    }
    if (!(hi > lo))
      throw InvalidArgument("fit: input dimension " + std::to_string(i) + " has zero range");
    model.in_offset_[i] = lo;
    model.in_scale_[i] = 1.0 / (hi - lo);
  }
  // Output heads. Constant targets bypass the network entirely.
  model.record_.constant_outputs.assign(R, false);
  for (std::size_t r = 0; r < R; ++r) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& y : train.oc_means) {
      lo = std::min(lo, y.values[r]);
      hi = std::max(hi, y.values[r]);
    }
    auto& h = model.heads_[r];
    if (!(hi > lo)) {
      h = {HeadKind::constant, lo, 1.0};
      model.record_.constant_outputs[r] = true;
    } else if (h.kind == HeadKind::affine) {
      h.offset = lo;
      h.scale = hi - lo;
    }
  }

  auto order = detail::canonical_order(train);

  // Start every head at its mean target with small output weights, so no
  // logistic head begins saturated.
  {
    auto& last = model.layers_.back();
    for (auto& w : last.weights) w *= 0.1;
    for (std::size_t r = 0; r < R; ++r) {
      double mean = 0.0;
      for (const auto j : order) mean += model.scale_target(r, train.oc_means[j].values[r]);
      mean /= static_cast<double>(J);
      if (model.heads_[r].kind == HeadKind::logistic) {
        const double p = std::clamp(mean, 1e-3, 1.0 - 1e-3);
        mean = std::log(p / (1.0 - p));
      }
      last.biases[r] = mean;
    }
  }

  Rng split_rng = make_stream(cfg.seed, {0x5B11});
  detail::seeded_shuffle(order, split_rng);
  const auto n_hold = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(cfg.holdout_fraction * static_cast<double>(J))));
  std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> fit_rows(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());

  auto build = [&](const std::vector<std::size_t>& rows, Eigen::MatrixXd& x, Eigen::MatrixXd& y) {
    x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(d));
    y.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(R));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto xs = model.scale_input(train.scenarios[rows[k]].theta);
      for (std::size_t i = 0; i < d; ++i) x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = xs[i];
      for (std::size_t r = 0; r < R; ++r)
        y(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) =
            model.scale_target(r, train.oc_means[rows[k]].values[r]);
    }
  };
  Eigen::MatrixXd x_fit, y_fit, x_hold, y_hold;
  build(fit_rows, x_fit, y_fit);
  build(hold, x_hold, y_hold);

  // Each output's error is divided by the variance of its training targets
  // so that small-valued OCs are not swamped by the others.
  std::vector<double> out_w(R, 1.0);
  for (std::size_t r = 0; r < R; ++r) {
    const auto col = y_fit.col(static_cast<Eigen::Index>(r));
    const double var = (col.array() - col.mean()).square().mean();
    if (var > 0.0) out_w[r] = 1.0 / var;
  }
  const double w_mean = std::accumulate(out_w.begin(), out_w.end(), 0.0) / static_cast<double>(R);
  for (auto& w : out_w) w /= w_mean;

  const std::size_t P = model.parameter_count();
  std::vector<double> params = model.parameters(), m1(P, 0.0), m2(P, 0.0), grad;
  std::vector<double> best = params;
  double best_hold = model.loss_and_gradient(x_hold, y_hold, nullptr, out_w);
  std::size_t best_epoch = 0, since_best = 0, step = 0, epoch = 0;
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  Rng batch_rng = make_stream(cfg.seed, {0xBA7C});
  std::vector<std::size_t> perm(fit_rows.size());
  Eigen::MatrixXd xb, yb;
  double train_loss = 0.0;
  for (epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    detail::seeded_shuffle(perm, batch_rng);
    const double lr = cfg.learning_rate / (1.0 + cfg.lr_decay * static_cast<double>(epoch - 1));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < perm.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(perm.size(), start + cfg.batch_size);
      const auto nb = static_cast<Eigen::Index>(end - start);
      xb.resize(nb, x_fit.cols());
      yb.resize(nb, y_fit.cols());
      for (std::size_t k = start; k < end; ++k) {
        xb.row(static_cast<Eigen::Index>(k - start)) = x_fit.row(static_cast<Eigen::Index>(perm[k]));
        yb.row(static_cast<Eigen::Index>(k - start)) = y_fit.row(static_cast<Eigen::Index>(perm[k]));
      }
      const double l = model.loss_and_gradient(xb, yb, &grad, out_w);
      if (!std::isfinite(l))
        throw NumericalError("fit: non-finite training loss at epoch " + std::to_string(epoch));
      epoch_loss += l * static_cast<double>(nb);
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      for (std::size_t p = 0; p < P; ++p) {
        m1[p] = beta1 * m1[p] + (1.0 - beta1) * grad[p];
        m2[p] = beta2 * m2[p] + (1.0 - beta2) * grad[p] * grad[p];
        params[p] -= lr * (m1[p] / c1) / (std::sqrt(m2[p] / c2) + eps);
      }
      model.set_parameters(params);
    }
    train_loss = epoch_loss / static_cast<double>(perm.size());
    const double h = model.loss_and_gradient(x_hold, y_hold, nullptr, out_w);
    if (!std::isfinite(h))
      throw NumericalError("fit: non-finite holdout loss at epoch " + std::to_string(epoch));
    if (h < best_hold) {
      best_hold = h;
      best = params;
      best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.set_parameters(best);
  model.record_.epochs_run = std::min(epoch, cfg.max_epochs);
  model.record_.best_epoch = best_epoch;
  model.record_.train_loss = model.loss_and_gradient(x_fit, y_fit, nullptr, out_w);
  model.record_.holdout_loss = best_hold;
  model.record_.seed = cfg.seed;
  (void)train_loss;
  return model;
}

/// Central-difference check of the backpropagated gradient of the training
/// loss at `probe` inputs (raw scenarios) against random OC targets. Returns
/// the largest relative error over `n_weights` randomly chosen parameters.
inline double gradient_check(const MlpSurrogate& model, const std::vector<Scenario>& probe,
                             std::size_t n_weights = 100, double step = 1e-5,
                             std::uint64_t seed = 0) {
  const auto B = static_cast<Eigen::Index>(probe.size());
  const auto d = static_cast<Eigen::Index>(model.input_dim());
  const auto R = static_cast<Eigen::Index>(model.output_dim());
  Rng rng = make_stream(seed, {0x6C4E});
  Eigen::MatrixXd x(B, d), y(B, R);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto xs = model.scale_input(probe[static_cast<std::size_t>(i)].theta);
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = xs[static_cast<std::size_t>(j)];
    for (Eigen::Index r = 0; r < R; ++r) y(i, r) = uniform01(rng);
  }
  std::vector<double> grad;
  model.loss_and_gradient(x, y, &grad);

  MlpSurrogate probe_model = model;
  auto params = model.parameters();
  double worst = 0.0;
  for (std::size_t k = 0; k < n_weights; ++k) {
    const auto p = std::min(static_cast<std::size_t>(uniform01(rng) * static_cast<double>(params.size())),
                            params.size() - 1);
    const double orig = params[p];
    params[p] = orig + step;
    probe_model.set_parameters(params);
    const double up = probe_model.loss_and_gradient(x, y, nullptr);
    params[p] = orig - step;
    probe_model.set_parameters(params);
    const double down = probe_model.loss_and_gradient(x, y, nullptr);
    params[p] = orig;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(grad[p]), 1e-7});
    worst = std::max(worst, std::abs(numeric - grad[p]) / denom);
  }
  return worst;
}

/// Average of several MLPs fitted to the same data from different seeds.
class MlpEnsembleSurrogate final : public Surrogate {
 public:
  explicit MlpEnsembleSurrogate(std::vector<MlpSurrogate> members) : members_(std::move(members)) {
    if (members_.empty()) throw InvalidArgument("mlp ensemble: no members");
    for (const auto& m : members_)
      if (m.input_dim() != members_.front().input_dim() || m.schema().names != members_.front().schema().names)
        throw InvalidArgument("mlp ensemble: members disagree on shapes");
  }

  std::string kind() const override { return "mlp-ensemble"; }
  std::size_t input_dim() const override { return members_.front().input_dim(); }
  const OcSchema& schema() const override { return members_.front().schema(); }
  const std::vector<MlpSurrogate>& members() const noexcept { return members_; }

  void predict_into(std::span<const double> theta, std::span<double> out) const override {
    thread_local std::vector<double> tmp;
    tmp.resize(out.size());
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& m : members_) {
      m.predict_into(theta, tmp);
      for (std::size_t r = 0; r < out.size(); ++r) out[r] += tmp[r];
    }
    const double n = static_cast<double>(members_.size());
    for (auto& v : out) v /= n;
  }

 private:
  std::vector<MlpSurrogate> members_;
};

/// `n` networks on the same data; member e uses seed derive_seed(cfg.seed, {e}).
inline MlpEnsembleSurrogate fit_mlp_ensemble(const TrainingSet& train, const MlpArchitecture& arch,
                                             const MlpTrainConfig& cfg, std::size_t n) {
  if (n == 0) throw InvalidArgument("fit: ensemble size must be >= 1");
  std::vector<MlpSurrogate> members;
  for (std::size_t e = 0; e < n; ++e) {
    MlpTrainConfig c = cfg;
    c.seed = derive_seed(cfg.seed, {e});
    members.push_back(fit_mlp(train, arch, c));
  }
  return MlpEnsembleSurrogate(std::move(members));
}

/// Predicts the OC mean of the closest training scenario (Euclidean distance
/// after scaling each input to [0, 1]); ties go to the earliest row.
class NearestNeighborSurrogate final : public Surrogate {
 public:
  NearestNeighborSurrogate(OcSchema schema, std::vector<Scenario> inputs, std::vector<OcVector> outputs)
      : schema_(std::move(schema)), inputs_(std::move(inputs)), outputs_(std::move(outputs)) {
    if (inputs_.empty() || inputs_.size() != outputs_.size())
      throw InvalidArgument("nearest: need matching, nonempty inputs and outputs");
    const std::size_t d = inputs_.front().size();
    offset_.assign(d, 0.0);
    scale_.assign(d, 1.0);
    for (std::size_t i = 0; i < d; ++i) {
      double lo = std::numeric_limits<double>::infinity(), hi = -lo;
      for (const auto& s : inputs_) {
        lo = std::min(lo, s.theta[i]);
        hi = std::max(hi, s.theta[i]);
      }
      offset_[i] = lo;
      scale_[i] = hi > lo ? 1.0 / (hi - lo) : 1.0;
    }
    scaled_.reserve(inputs_.size() * d);
    for (const auto& s : inputs_)
      for (std::size_t i = 0; i < d; ++i) scaled_.push_back((s.theta[i] - offset_[i]) * scale_[i]);
  }

  explicit NearestNeighborSurrogate(const TrainingSet& train)
      : NearestNeighborSurrogate(train.schema, train.scenarios, train.oc_means) {}

  std::string kind() const override { return "nearest"; }
  std::size_t input_dim() const override { return offset_.size(); }
  const OcSchema& schema() const override { return schema_; }
  const std::vector<Scenario>& inputs() const noexcept { return inputs_; }
  const std::vector<OcVector>& outputs() const noexcept { return outputs_; }

  void predict_into(std::span<const double> theta, std::span<double> out) const override {
    const std::size_t d = input_dim();
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < inputs_.size(); ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = (theta[i] - offset_[i]) * scale_[i] - scaled_[j * d + i];
        acc += diff * diff;
      }
      if (acc < best_d) {
        best_d = acc;
        best = j;
      }
    }
    std::copy(outputs_[best].values.begin(), outputs_[best].values.end(), out.begin());
  }

 private:
  OcSchema schema_;
  std::vector<Scenario> inputs_;
  std::vector<OcVector> outputs_;
  std::vector<double> offset_, scale_, scaled_;
};

/// Agreement between surrogate predictions and independent MC estimates.
struct ValidationReport {
  std::vector<double> r2;       // NaN for an OC with constant MC estimates
  std::vector<double> rmse;
  std::vector<double> max_abs_diff;
  std::vector<Scenario> scenarios;
  std::vector<OcVector> observed;   // MC estimates
  std::vector<OcVector> predicted;  // surrogate

  /// Smallest per-OC R^2, ignoring OCs whose R^2 is undefined.
  double min_r2() const {
    double m = std::numeric_limits<double>::infinity();
    for (double v : r2)
      if (std::isfinite(v)) m = std::min(m, v);
    return m;
  }
};

inline ValidationReport validate(const Surrogate& model, const TrainingSet& val,
                                 std::size_t threads = 1) {
  ValidationReport rep;
  rep.scenarios = val.scenarios;
  rep.observed = val.oc_means;
  rep.predicted = model.predict(val.scenarios, threads);
  const std::size_t R = model.output_dim();
  std::vector<double> obs(val.size()), pred(val.size());
  for (std::size_t r = 0; r < R; ++r) {
    double sse = 0.0, mx = 0.0;
    for (std::size_t j = 0; j < val.size(); ++j) {
      obs[j] = rep.observed[j][r];
      pred[j] = rep.predicted[j][r];
      const double e = pred[j] - obs[j];
      sse += e * e;
      mx = std::max(mx, std::abs(e));
    }
    rep.r2.push_back(stats::r_squared(obs, pred));
    rep.rmse.push_back(val.size() ? std::sqrt(sse / static_cast<double>(val.size())) : 0.0);
    rep.max_abs_diff.push_back(mx);
  }
  return rep;
}

}  // namespace rosa

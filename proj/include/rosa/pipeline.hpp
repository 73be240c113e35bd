#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "rosa/anneal.hpp"
#include "rosa/designs/aux_interim.hpp"
#include "rosa/designs/enrichment.hpp"
#include "rosa/designs/rct2arm.hpp"
#include "rosa/io.hpp"
#include "rosa/loss.hpp"
#include "rosa/mc_engine.hpp"
#include "rosa/sampling.hpp"
#include "rosa/surrogate.hpp"

namespace rosa {

using io::json;

// ---- exact App 1 oracle ------------------------------------------------------

struct ExactApp1Solution {
  std::size_t K = 0;
  std::vector<double> targets;  // (2k - 1) / (2K)
  std::vector<double> thetas;   // effects attaining the targets
  double loss = 0.0;            // 1 / (2K)
};

inline ExactApp1Solution exact_app1(std::size_t K, const TwoArmRctConfig& cfg = {}) {
  if (K == 0) throw InvalidArgument("exact_app1: K must be >= 1");
  ExactApp1Solution s;
  s.K = K;
  for (std::size_t k = 1; k <= K; ++k) {
    const double t = (2.0 * static_cast<double>(k) - 1.0) / (2.0 * static_cast<double>(K));
    s.targets.push_back(t);
    s.thetas.push_back(rct_power_inverse(t, cfg));
  }
  s.loss = 1.0 / (2.0 * static_cast<double>(K));
  return s;
}

// ---- configuration -------------------------------------------------------------

struct PipelineParams {
  std::size_t train_points = 1000;     // J
  std::size_t train_reps = 200;        // M
  std::size_t validation_points = 200; // J'
  std::size_t validation_reps = 500;   // M'
  std::size_t report_reps = 0;         // fresh MC reps per reported scenario; 0 means M'
  std::size_t cloud_size = 100000;
  double validation_gate = 0.90;
  std::string surrogate = "mlp";  // or "nearest"
};

struct AnnealParams {
  SaConfig sa;  // K, schedule and proposal settings; space and seed are filled per run
  std::size_t chains = 20;
  std::size_t trace_stride = 1;  // write every n-th iteration to trace-<chain>.csv
};

struct LossParams {
  std::vector<double> weights;  // empty: uniform
  std::string scales_mode = "auto";  // "auto", "unit" or "explicit"
  std::vector<double> scales;
};

struct SweepParams {
  std::vector<std::size_t> Ks{2, 5, 10, 15};
  std::optional<double> threshold;
};

struct RunConfig {
  std::string design;
  TwoArmRctConfig rct;
  AuxInterimConfig aux;
  EnrichmentConfig enrichment;
  std::map<std::string, std::pair<double, double>> bounds;  // overrides of the design's box
  std::map<std::string, double> restrict;
  PipelineParams pipeline;
  MlpArchitecture arch;
  MlpTrainConfig mlp;
  std::size_t mlp_ensemble = 1;  // networks averaged by the surrogate
  LossParams loss;
  AnnealParams anneal;
  SweepParams sweep;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::string out_dir = "out";
};

namespace detail {

/// Reads keys out of one JSON object and rejects anything left unread.
class SectionReader {
 public:
  SectionReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": wrong type");
    }
  }

  const json* section(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + where(it.key()) + "'");
  }

  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline const char* to_string(CoolingSchedule s) {
  return s == CoolingSchedule::geometric ? "geometric" : "piecewise";
}
inline const char* to_string(MoveKind m) { return m == MoveKind::single ? "single" : "all"; }

}  // namespace detail

inline RunConfig parse_config(const json& root) {
  using detail::SectionReader;
  RunConfig c;
  SectionReader top(root, "");
  top.get("design", c.design);
  if (c.design.empty()) throw ConfigError("config: 'design' is required");
  if (c.design != "rct2arm" && c.design != "aux-interim" && c.design != "enrichment")
    throw ConfigError("config: unknown design '" + c.design + "'");
  top.get("seed", c.seed);
  top.get("threads", c.threads);
  top.get("out_dir", c.out_dir);

  if (auto* s = top.section("rct2arm")) {
    SectionReader r(*s, "rct2arm");
    r.get("n", c.rct.n);
    r.get("sigma", c.rct.sigma);
    r.get("alpha", c.rct.alpha);
    r.get("effect_lower", c.rct.effect_lower);
    r.get("effect_upper", c.rct.effect_upper);
    r.finish();
  }
  if (auto* s = top.section("aux-interim")) {
    SectionReader r(*s, "aux-interim");
    r.get("N0", c.aux.N0);
    r.get("N1", c.aux.N1);
    r.get("n0", c.aux.n0);
    r.get("n1", c.aux.n1);
    r.get("alpha", c.aux.alpha);
    r.get("cp_cutoff", c.aux.cp_cutoff);
    r.get("interim_delay", c.aux.interim_delay);
    r.finish();
  }
  if (auto* s = top.section("enrichment")) {
    SectionReader r(*s, "enrichment");
    auto& e = c.enrichment;
    r.get("stage1_n", e.stage1_n);
    r.get("stage2_n", e.stage2_n);
    r.get("os_events_final", e.os_events_final);
    r.get("hr_plus_threshold", e.hr_plus_threshold);
    r.get("hr_overall_threshold", e.hr_overall_threshold);
    r.get("omega1", e.omega1);
    r.get("omega2", e.omega2);
    r.get("control_median_pfs_months", e.control_median_pfs_months);
    r.get("control_median_os_months", e.control_median_os_months);
    r.get("z_crit", e.z_crit);
    r.get("branch_d_alpha", e.branch_d_alpha);
    r.finish();
  }
  if (auto* s = top.section("space")) {
    SectionReader r(*s, "space");
    if (auto* b = r.section("bounds")) {
      if (!b->is_object()) throw ConfigError("space.bounds must be an object");
      for (auto it = b->begin(); it != b->end(); ++it) {
        const auto& v = it.value();
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
          throw ConfigError("space.bounds." + it.key() + " must be [lower, upper]");
        c.bounds[it.key()] = {v[0].get<double>(), v[1].get<double>()};
      }
    }
    if (auto* f = r.section("restrict")) {
      if (!f->is_object()) throw ConfigError("space.restrict must be an object");
      for (auto it = f->begin(); it != f->end(); ++it) {
        if (!it.value().is_number()) throw ConfigError("space.restrict." + it.key() + " must be a number");
        c.restrict[it.key()] = it.value().get<double>();
      }
    }
    r.finish();
  }
  if (auto* s = top.section("pipeline")) {
    SectionReader r(*s, "pipeline");
    auto& p = c.pipeline;
    r.get("train_points", p.train_points);
    r.get("train_reps", p.train_reps);
    r.get("validation_points", p.validation_points);
    r.get("validation_reps", p.validation_reps);
    r.get("report_reps", p.report_reps);
    r.get("cloud_size", p.cloud_size);
    r.get("validation_gate", p.validation_gate);
    r.get("surrogate", p.surrogate);
    r.finish();
    if (p.surrogate != "mlp" && p.surrogate != "nearest")
      throw ConfigError("pipeline.surrogate must be 'mlp' or 'nearest'");
    if (p.train_points == 0 || p.train_reps == 0 || p.validation_points == 0 || p.validation_reps == 0 ||
        p.cloud_size == 0)
      throw ConfigError("pipeline: point and replicate counts must be positive");
  }
  if (auto* s = top.section("mlp")) {
    SectionReader r(*s, "mlp");
    r.get("hidden", c.arch.hidden);
    r.get("max_epochs", c.mlp.max_epochs);
    r.get("patience", c.mlp.patience);
    r.get("batch_size", c.mlp.batch_size);
    r.get("learning_rate", c.mlp.learning_rate);
    r.get("lr_decay", c.mlp.lr_decay);
    r.get("holdout_fraction", c.mlp.holdout_fraction);
    r.get("ensemble", c.mlp_ensemble);
    r.finish();
    if (c.mlp_ensemble == 0) throw ConfigError("mlp.ensemble must be >= 1");
  }
  if (auto* s = top.section("loss")) {
    SectionReader r(*s, "loss");
    std::string kind = "minimax";
    r.get("kind", kind);
    if (kind != "minimax") throw ConfigError("loss.kind: only 'minimax' is supported");
    r.get("weights", c.loss.weights);
    if (auto* sc = r.section("scales")) {
      if (sc->is_string()) {
        c.loss.scales_mode = sc->get<std::string>();
        if (c.loss.scales_mode != "auto" && c.loss.scales_mode != "unit")
          throw ConfigError("loss.scales must be 'auto', 'unit' or an array");
      } else if (sc->is_array()) {
        c.loss.scales_mode = "explicit";
        try {
          c.loss.scales = sc->get<std::vector<double>>();
        } catch (const json::exception&) {
          throw ConfigError("loss.scales: wrong type");
        }
      } else {
        throw ConfigError("loss.scales must be 'auto', 'unit' or an array");
      }
    }
    r.finish();
  }
  if (auto* s = top.section("anneal")) {
    SectionReader r(*s, "anneal");
    auto& a = c.anneal.sa;
    r.get("K", a.K);
    r.get("chains", c.anneal.chains);
    r.get("trace_stride", c.anneal.trace_stride);
    r.get("iterations", a.iterations);
    r.get("t0", a.t0);
    r.get("cooling", a.cooling);
    r.get("t_min", a.t_min);
    std::string schedule = detail::to_string(a.schedule), move = detail::to_string(a.move);
    r.get("schedule", schedule);
    r.get("steps_per_temperature", a.steps_per_temperature);
    r.get("proposal_sd", a.proposal_sd);
    r.get("proposal_sd_final", a.proposal_sd_final);
    r.get("move", move);
    r.finish();
    if (schedule == "geometric") a.schedule = CoolingSchedule::geometric;
    else if (schedule == "piecewise") a.schedule = CoolingSchedule::piecewise_constant;
    else throw ConfigError("anneal.schedule must be 'geometric' or 'piecewise'");
    if (move == "all") a.move = MoveKind::all;
    else if (move == "single") a.move = MoveKind::single;
    else throw ConfigError("anneal.move must be 'all' or 'single'");
    if (c.anneal.chains < 2) throw ConfigError("anneal.chains must be >= 2");
    if (c.anneal.trace_stride == 0) throw ConfigError("anneal.trace_stride must be >= 1");
  }
  if (auto* s = top.section("sweep")) {
    SectionReader r(*s, "sweep");
    r.get("Ks", c.sweep.Ks);
    if (auto* t = r.section("threshold")) {
      if (!t->is_null()) {
        if (!t->is_number()) throw ConfigError("sweep.threshold must be a number");
        c.sweep.threshold = t->get<double>();
      }
    }
    r.finish();
    if (c.sweep.Ks.empty()) throw ConfigError("sweep.Ks must not be empty");
    for (auto K : c.sweep.Ks)
      if (K == 0) throw ConfigError("sweep.Ks entries must be >= 1");
  }
  top.finish();

  try {
    c.rct.validate();
    c.aux.validate();
    c.enrichment.validate();
    SaConfig probe = c.anneal.sa;
    probe.space = ParameterSpace({"x"}, {0.0}, {1.0});
    probe.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = io::read_json(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return parse_config(j);
}

/// Canonical form with every default filled in. Threads and output directory
/// are excluded so they never change a digest.
inline json canonical(const RunConfig& c) {
  const auto& a = c.anneal.sa;
  json bounds = json::object(), restrict = json::object();
  for (const auto& [k, v] : c.bounds) bounds[k] = {v.first, v.second};
  for (const auto& [k, v] : c.restrict) restrict[k] = v;
  json j = {
      {"design", c.design},
      {"seed", c.seed},
      {"space", {{"bounds", bounds}, {"restrict", restrict}}},
      {"pipeline",
       {{"train_points", c.pipeline.train_points},
        {"train_reps", c.pipeline.train_reps},
        {"validation_points", c.pipeline.validation_points},
        {"validation_reps", c.pipeline.validation_reps},
        {"report_reps", c.pipeline.report_reps},
        {"cloud_size", c.pipeline.cloud_size},
        {"validation_gate", c.pipeline.validation_gate},
        {"surrogate", c.pipeline.surrogate}}},
      {"mlp",
       {{"hidden", c.arch.hidden},
        {"max_epochs", c.mlp.max_epochs},
        {"patience", c.mlp.patience},
        {"batch_size", c.mlp.batch_size},
        {"learning_rate", c.mlp.learning_rate},
        {"lr_decay", c.mlp.lr_decay},
        {"holdout_fraction", c.mlp.holdout_fraction},
        {"ensemble", c.mlp_ensemble}}},
      {"loss",
       {{"kind", "minimax"},
        {"weights", c.loss.weights},
        {"scales", c.loss.scales_mode == "explicit" ? json(c.loss.scales) : json(c.loss.scales_mode)}}},
      {"anneal",
       {{"K", a.K},
        {"chains", c.anneal.chains},
        {"trace_stride", c.anneal.trace_stride},
        {"iterations", a.iterations},
        {"t0", a.t0},
        {"cooling", a.cooling},
        {"t_min", a.t_min},
        {"schedule", detail::to_string(a.schedule)},
        {"steps_per_temperature", a.steps_per_temperature},
        {"proposal_sd", a.proposal_sd},
        {"proposal_sd_final", a.proposal_sd_final},
        {"move", detail::to_string(a.move)}}},
      {"sweep", {{"Ks", c.sweep.Ks}, {"threshold", c.sweep.threshold ? json(*c.sweep.threshold) : json(nullptr)}}}};
  if (c.design == "rct2arm")
    j["rct2arm"] = {{"n", c.rct.n},
                    {"sigma", c.rct.sigma},
                    {"alpha", c.rct.alpha},
                    {"effect_lower", c.rct.effect_lower},
                    {"effect_upper", c.rct.effect_upper}};
  else if (c.design == "aux-interim")
    j["aux-interim"] = {{"N0", c.aux.N0},       {"N1", c.aux.N1},
                        {"n0", c.aux.n0},       {"n1", c.aux.n1},
                        {"alpha", c.aux.alpha}, {"cp_cutoff", c.aux.cp_cutoff},
                        {"interim_delay", c.aux.interim_delay}};
  else {
    const auto& e = c.enrichment;
    j["enrichment"] = {{"stage1_n", e.stage1_n},
                       {"stage2_n", e.stage2_n},
                       {"os_events_final", e.os_events_final},
                       {"hr_plus_threshold", e.hr_plus_threshold},
                       {"hr_overall_threshold", e.hr_overall_threshold},
                       {"omega1", e.omega1},
                       {"omega2", e.omega2},
                       {"control_median_pfs_months", e.control_median_pfs_months},
                       {"control_median_os_months", e.control_median_os_months},
                       {"z_crit", e.z_crit},
                       {"branch_d_alpha", e.branch_d_alpha}};
  }
  return j;
}

inline std::string config_digest(const RunConfig& c) { return io::digest(canonical(c)); }

inline DesignPtr make_design(const RunConfig& c) {
  if (c.design == "rct2arm") return std::make_shared<TwoArmRct>(c.rct);
  if (c.design == "aux-interim") return std::make_shared<AuxInterim>(c.aux);
  if (c.design == "enrichment") return std::make_shared<Enrichment>(c.enrichment);
  throw ConfigError("unknown design '" + c.design + "'");
}

/// The design's box with any configured bound overrides.
inline ParameterSpace full_space(const RunConfig& c, const TrialDesign& design) {
  const auto base = design.parameter_space();
  std::vector<double> lo = base.lower(), hi = base.upper();
  for (const auto& [name, b] : c.bounds) {
    const auto i = base.index_of(name);
    if (!i) throw ConfigError("space.bounds: unknown dimension '" + name + "'");
    lo[*i] = b.first;
    hi[*i] = b.second;
  }
  try {
    return ParameterSpace(base.names(), lo, hi);
  } catch (const Error& e) {
    throw ConfigError(std::string("space.bounds: ") + e.what());
  }
}

// ---- run context ---------------------------------------------------------------

enum class Stage { train, fit, validate, select, report };

inline const char* to_string(Stage s) {
  switch (s) {
    case Stage::train: return "train";
    case Stage::fit: return "fit";
    case Stage::validate: return "validate";
    case Stage::select: return "select";
    case Stage::report: return "report";
  }
  return "?";
}

/// Runs `f`, tagging any library error with the stage name.
template <class F>
auto in_stage(Stage s, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const ValidationGateError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(to_string(s), e.what());
  }
}

struct ValidationOutcome {
  ValidationReport report;
  bool passed = false;
  double min_r2 = 0.0;
};

struct Selection {
  std::size_t K = 0;
  ReplicateResult replicates;
  LossSpec spec;
};

struct RestrictionRow {
  std::size_t K = 0;
  double loss_full = 0.0, loss_restricted = 0.0;
  double cleaned_full = 0.0, cleaned_restricted = 0.0;
};

struct MarginalRow {
  std::size_t K = 0;
  std::size_t r = 0;
  double loss_own = 0.0;    // L_r(S_r)
  double loss_joint = 0.0;  // L_r(S)
  double relative_difference = 0.0;  // (L_r(S) - L_r(S_r)) / L_r(S_r)
};

/// A configured run. Stage outputs live in `out_dir`; stages reuse persisted
/// intermediates whose stage digest matches and recompute otherwise.
class Run {
 public:
  explicit Run(RunConfig cfg)
      : cfg_(std::move(cfg)),
        design_(make_design(cfg_)),
        space_(full_space(cfg_, *design_)),
        digest_(config_digest(cfg_)) {
    try {
      candidates_ = make_restriction(space_, cfg_.restrict);
    } catch (const Error& e) {
      throw ConfigError(std::string("space.restrict: ") + e.what());
    }
  }

  const RunConfig& config() const noexcept { return cfg_; }
  const TrialDesign& design() const noexcept { return *design_; }
  const ParameterSpace& space() const noexcept { return space_; }
  const ParameterSpace& candidate_space() const noexcept { return candidates_; }
  const std::string& digest() const noexcept { return digest_; }
  std::filesystem::path out_dir() const { return cfg_.out_dir; }
  std::size_t threads() const noexcept { return cfg_.threads; }
  io::Provenance provenance() const { return {digest_, cfg_.seed}; }

  std::uint64_t stage_seed(Stage s) const { return derive_seed(cfg_.seed, {static_cast<std::uint64_t>(s) + 1}); }

  // Stage digests cover only the settings each stage depends on.
  std::string train_digest() const {
    const auto c = canonical(cfg_);
    json j = {{"design", c["design"]}, {"seed", cfg_.seed}, {"bounds", c["space"]["bounds"]},
              {"train_points", cfg_.pipeline.train_points}, {"train_reps", cfg_.pipeline.train_reps}};
    j["design_config"] = c[cfg_.design];
    return io::digest(j);
  }
  std::string fit_digest() const {
    const auto c = canonical(cfg_);
    return io::digest({{"train", train_digest()}, {"surrogate", cfg_.pipeline.surrogate}, {"mlp", c["mlp"]}});
  }
  std::string validate_digest() const {
    return io::digest({{"fit", fit_digest()},
                       {"points", cfg_.pipeline.validation_points},
                       {"reps", cfg_.pipeline.validation_reps},
                       {"gate", cfg_.pipeline.validation_gate}});
  }
  std::string select_digest() const {
    const auto c = canonical(cfg_);
    return io::digest({{"fit", fit_digest()},
                       {"cloud", cfg_.pipeline.cloud_size},
                       {"loss", c["loss"]},
                       {"anneal", c["anneal"]},
                       {"restrict", c["space"]["restrict"]}});
  }

  // ---- stage computations (no file IO) ----

  TrainingSet compute_training() const {
    return in_stage(Stage::train, [&] {
      const auto seed = stage_seed(Stage::train);
      auto scen = lhs_sample(LhsPlan{cfg_.pipeline.train_points, space_, derive_seed(seed, {1})});
      return estimate_ocs(*design_, scen, cfg_.pipeline.train_reps, derive_seed(seed, {2}), threads());
    });
  }

  SurrogatePtr compute_fit(const TrainingSet& train) const {
    return in_stage(Stage::fit, [&]() -> SurrogatePtr {
      if (cfg_.pipeline.surrogate == "nearest") return std::make_shared<NearestNeighborSurrogate>(train);
      MlpTrainConfig tc = cfg_.mlp;
      tc.seed = stage_seed(Stage::fit);
      if (cfg_.mlp_ensemble > 1)
        return std::make_shared<MlpEnsembleSurrogate>(fit_mlp_ensemble(train, cfg_.arch, tc, cfg_.mlp_ensemble));
      return std::make_shared<MlpSurrogate>(fit_mlp(train, cfg_.arch, tc));
    });
  }

  ValidationOutcome compute_validation(const Surrogate& model) const {
    return in_stage(Stage::validate, [&] {
      const auto val = validation_estimates(*design_, cfg_.pipeline.validation_points,
                                            cfg_.pipeline.validation_reps, space_, stage_seed(Stage::validate),
                                            threads());
      ValidationOutcome v;
      v.report = validate(model, val, threads());
      v.min_r2 = v.report.min_r2();
      v.passed = v.min_r2 >= cfg_.pipeline.validation_gate;
      return v;
    });
  }

  std::shared_ptr<const OcCache> compute_cache(const Surrogate& model) const {
    return in_stage(Stage::select, [&] {
      auto cloud = uniform_sample(CloudSpec{cfg_.pipeline.cloud_size, space_, derive_seed(stage_seed(Stage::select), {1})});
      return std::make_shared<const OcCache>(build_cache(model, std::move(cloud), threads()));
    });
  }

  /// The configured loss: weights default to uniform; "auto" scales divide
  /// non-probability OCs by their range over the cache.
  LossSpec loss_spec(const OcCache& cache) const {
    const auto schema = design_->oc_schema();
    LossSpec s = cfg_.loss.weights.empty() ? LossSpec::uniform(schema.size()) : LossSpec{cfg_.loss.weights, {}};
    if (cfg_.loss.scales_mode == "auto") s.scales = default_scales(schema, cache);
    else if (cfg_.loss.scales_mode == "explicit") s.scales = cfg_.loss.scales;
    if (s.size() != schema.size())
      throw ConfigError("loss.weights: expected " + std::to_string(schema.size()) + " entries");
    try {
      s.validate();
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    return s;
  }

  SaConfig sa_config(std::size_t K, const ParameterSpace& candidates, std::uint64_t seed) const {
    SaConfig sa = cfg_.anneal.sa;
    sa.K = K;
    sa.space = candidates;
    sa.seed = seed;
    return sa;
  }

  Selection compute_selection(std::size_t K, const SurrogatePtr& model, const std::shared_ptr<const OcCache>& cache,
                              const LossSpec& spec, const ParameterSpace& candidates) const {
    return in_stage(Stage::select, [&] {
      CoverLossEvaluator eval(cache, model, spec);
      const auto seed = derive_seed(stage_seed(Stage::select), {2, K});
      Selection s;
      s.K = K;
      s.spec = spec;
      s.replicates = sa_replicates(eval, sa_config(K, candidates, seed), cfg_.anneal.chains, threads());
      return s;
    });
  }

  SensitivityReport compute_report(const Selection& sel, const Surrogate& model, const OcCache& cache) const {
    return in_stage(Stage::report, [&] {
      SensitivityReport rep;
      rep.space = space_;
      rep.schema = design_->oc_schema();
      rep.seed = cfg_.seed;
      rep.config_digest = digest_;
      rep.scenario_set = sel.replicates.best().best_set;
      auto& sc = rep.scenario_set.scenarios;
      std::vector<OcVector> pred;
      for (const auto& s : sc) pred.push_back(model.predict(s));
      // rows ordered by surrogate OC vector, then by theta
      std::vector<std::size_t> order(sc.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (pred[a].values != pred[b].values) return pred[a].values < pred[b].values;
        return sc[a].theta < sc[b].theta;
      });
      ScenarioSet sorted;
      for (auto i : order) {
        sorted.scenarios.push_back(sc[i]);
        rep.surrogate_ocs.push_back(pred[i]);
      }
      rep.scenario_set = std::move(sorted);

      const auto lr = loss_hat(rep.scenario_set, cache, model, sel.spec, threads());
      rep.achieved_loss = lr.loss;
      rep.witness = lr.witness;
      for (std::size_t r = 0; r < rep.schema.size(); ++r)
        rep.marginal_losses.push_back(marginal_loss(rep.scenario_set, cache, model, r, threads()).loss);

      const std::size_t reps = cfg_.pipeline.report_reps ? cfg_.pipeline.report_reps : cfg_.pipeline.validation_reps;
      const auto fresh = estimate_ocs(*design_, rep.scenario_set.scenarios, reps, stage_seed(Stage::report), threads());
      rep.mc_ocs = fresh.oc_means;
      rep.mc_se = fresh.mc_se;
      return rep;
    });
  }

  // ---- file-backed stages ----

  TrainingSet train() const {
    const auto files = io::TrainingSetFiles::at(out_dir(), "train");
    if (matches(files.sidecar, train_digest()) && std::filesystem::exists(files.scenarios) &&
        std::filesystem::exists(files.ocs))
      return in_stage(Stage::train, [&] { return io::load_training_set(files); });
    auto ts = compute_training();
    io::save_training_set(ts, space_.names(), files, provenance(), {{"stage_digest", train_digest()}});
    return ts;
  }

  SurrogatePtr fit() const {
    const auto path = out_dir() / "model.json";
    if (matches(path, fit_digest()))
      return in_stage(Stage::fit, [&] { return io::surrogate_from_json(io::read_json(path).at("model")); });
    const auto ts = train();
    auto model = compute_fit(ts);
    io::write_json(path, {{"config_digest", digest_},
                          {"seed", cfg_.seed},
                          {"stage_digest", fit_digest()},
                          {"model", io::surrogate_to_json(*model)}});
    return model;
  }

  /// Writes validation.csv / validation.json. Throws ValidationGateError when
  /// the gate fails and `force` is false.
  ValidationOutcome validate_stage(const SurrogatePtr& model, bool force) const {
    const auto csv = out_dir() / "validation.csv", js = out_dir() / "validation.json";
    ValidationOutcome v;
    if (matches(js, validate_digest()) && std::filesystem::exists(csv)) {
      const auto j = io::read_json(js);
      v.passed = j.at("passed").get<bool>();
      v.min_r2 = j.at("min_r2").is_null() ? std::nan("") : j.at("min_r2").get<double>();
      for (const auto& o : j.at("summary").at("per_oc")) {
        v.report.r2.push_back(o.at("r2").is_null() ? std::nan("") : o.at("r2").get<double>());
        v.report.rmse.push_back(o.at("rmse").get<double>());
        v.report.max_abs_diff.push_back(o.at("max_abs_diff").get<double>());
      }
    } else {
      v = compute_validation(*model);
      const auto schema = design_->oc_schema();
      io::write_text(csv, io::validation_csv(v.report, space_.names(), schema, provenance()));
      io::write_json(js, {{"config_digest", digest_},
                          {"seed", cfg_.seed},
                          {"stage_digest", validate_digest()},
                          {"gate", cfg_.pipeline.validation_gate},
                          {"min_r2", std::isfinite(v.min_r2) ? json(v.min_r2) : json(nullptr)},
                          {"passed", v.passed},
                          {"summary", io::to_json(v.report, schema)}});
    }
    if (!v.passed && !force)
      throw ValidationGateError("validation gate failed: min R^2 " + io::fmt(v.min_r2) + " < " +
                                io::fmt(cfg_.pipeline.validation_gate) + " (use --force to continue)");
    return v;
  }

  /// Surrogate that has passed (or been forced past) validation.
  SurrogatePtr validated_model(bool force) const {
    auto model = fit();
    validate_stage(model, force);
    return model;
  }

  Selection select_stage(bool force) const {
    auto model = validated_model(force);
    auto cache = compute_cache(*model);
    const auto spec = in_stage(Stage::select, [&] { return loss_spec(*cache); });
    auto sel = compute_selection(cfg_.anneal.sa.K, model, cache, spec, candidates_);
    write_selection(sel);
    return sel;
  }

  SensitivityReport run_pipeline(bool force) const {
    auto model = validated_model(force);
    auto cache = compute_cache(*model);
    const auto spec = in_stage(Stage::select, [&] { return loss_spec(*cache); });
    auto sel = compute_selection(cfg_.anneal.sa.K, model, cache, spec, candidates_);
    write_selection(sel);
    auto rep = compute_report(sel, *model, *cache);
    write_report(rep, sel, *cache);
    return rep;
  }

  std::vector<SweepRow> sweep(bool force) const {
    auto model = validated_model(force);
    auto cache = compute_cache(*model);
    const auto spec = in_stage(Stage::select, [&] { return loss_spec(*cache); });
    auto rows = in_stage(Stage::select, [&] {
      CoverLossEvaluator eval(cache, model, spec);
      return k_sweep(eval, sa_config(cfg_.anneal.sa.K, candidates_, derive_seed(stage_seed(Stage::select), {3})),
                     cfg_.sweep.Ks, cfg_.anneal.chains, threads());
    });
    std::string s = io::provenance_line(provenance()) + "K,best_loss,cleaned_loss,relative_spread,spread_flag\n";
    for (const auto& r : rows)
      s += std::to_string(r.K) + "," + io::fmt(r.best_loss) + "," + io::fmt(r.cleaned_loss) + "," +
           io::fmt(r.relative_spread) + "," + (r.relative_spread > 0.10 ? "1" : "0") + "\n";
    io::write_text(out_dir() / "sweep.csv", s);
    json j = {{"config_digest", digest_}, {"seed", cfg_.seed}, {"rows", json::array()}};
    for (const auto& r : rows)
      j["rows"].push_back({{"K", r.K}, {"best_loss", r.best_loss}, {"cleaned_loss", r.cleaned_loss},
                           {"relative_spread", r.relative_spread}, {"best_set", io::to_json(r.best_set)}});
    if (cfg_.sweep.threshold) {
      j["threshold"] = *cfg_.sweep.threshold;
      const auto k = min_k_for_threshold(rows, *cfg_.sweep.threshold);
      j["min_K_for_threshold"] = k ? json(*k) : json(nullptr);
    }
    io::write_json(out_dir() / "sweep.json", j);
    return rows;
  }

  /// Best loss per K with candidates from the full box and from the
  /// restriction. Both are measured on the same full-box cloud and use the
  /// same chain seeds.
  std::vector<RestrictionRow> compare_restriction(bool force) const {
    auto model = validated_model(force);
    auto cache = compute_cache(*model);
    const auto spec = in_stage(Stage::select, [&] { return loss_spec(*cache); });
    std::vector<std::size_t> Ks = cfg_.sweep.Ks;
    std::sort(Ks.begin(), Ks.end());
    std::vector<RestrictionRow> rows;
    double run_full = std::numeric_limits<double>::infinity(), run_res = run_full;
    for (auto K : Ks) {
      RestrictionRow row;
      row.K = K;
      row.loss_full = compute_selection(K, model, cache, spec, space_).replicates.summary.min_loss;
      row.loss_restricted = compute_selection(K, model, cache, spec, candidates_).replicates.summary.min_loss;
      run_full = std::min(run_full, row.loss_full);
      run_res = std::min(run_res, row.loss_restricted);
      row.cleaned_full = run_full;
      row.cleaned_restricted = run_res;
      rows.push_back(row);
    }
    std::string s = io::provenance_line(provenance()) +
                    "K,loss_full,loss_restricted,cleaned_full,cleaned_restricted,difference\n";
    for (const auto& r : rows)
      s += std::to_string(r.K) + "," + io::fmt(r.loss_full) + "," + io::fmt(r.loss_restricted) + "," +
           io::fmt(r.cleaned_full) + "," + io::fmt(r.cleaned_restricted) + "," +
           io::fmt(r.loss_restricted - r.loss_full) + "\n";
    io::write_text(out_dir() / "restriction.csv", s);
    return rows;
  }

  /// For each K: S under the configured loss and S_r under each marginal
  /// loss, all with the same chain seeds.
  std::vector<MarginalRow> compare_marginals(bool force, bool* all_small = nullptr) const {
    auto model = validated_model(force);
    auto cache = compute_cache(*model);
    const auto spec = in_stage(Stage::select, [&] { return loss_spec(*cache); });
    const std::size_t R = design_->oc_schema().size();
    std::vector<std::size_t> Ks = cfg_.sweep.Ks;
    std::sort(Ks.begin(), Ks.end());
    std::vector<MarginalRow> rows;
    bool small = true;
    for (auto K : Ks) {
      const auto joint = compute_selection(K, model, cache, spec, candidates_).replicates.best().best_set;
      for (std::size_t r = 0; r < R; ++r) {
        const auto own = compute_selection(K, model, cache, LossSpec::marginal(R, r), candidates_);
        MarginalRow row;
        row.K = K;
        row.r = r;
        row.loss_own = own.replicates.summary.min_loss;
        row.loss_joint = marginal_loss(joint, *cache, *model, r, threads()).loss;
        row.relative_difference =
            row.loss_own > 0.0 ? (row.loss_joint - row.loss_own) / row.loss_own : (row.loss_joint > 0.0 ? 1.0 : 0.0);
        small = small && row.relative_difference < 0.10;
        rows.push_back(row);
      }
    }
    const auto names = design_->oc_schema().names;
    std::string s = io::provenance_line(provenance()) + "K,oc,loss_own,loss_joint,relative_difference\n";
    for (const auto& r : rows)
      s += std::to_string(r.K) + "," + names[r.r] + "," + io::fmt(r.loss_own) + "," + io::fmt(r.loss_joint) + "," +
           io::fmt(r.relative_difference) + "\n";
    s += "# all_relative_differences_below_10pct=" + std::string(small ? "1" : "0") + "\n";
    io::write_text(out_dir() / "marginals.csv", s);
    if (all_small) *all_small = small;
    return rows;
  }

 private:
  bool matches(const std::filesystem::path& sidecar, const std::string& stage_digest) const {
    if (!std::filesystem::exists(sidecar)) return false;
    try {
      const auto j = io::read_json(sidecar);
      return j.value("stage_digest", std::string{}) == stage_digest;
    } catch (const Error&) {
      return false;
    }
  }

  void write_selection(const Selection& sel) const {
    const auto& rep = sel.replicates;
    json chains = json::array();
    for (std::size_t c = 0; c < rep.chains.size(); ++c) {
      const auto& t = rep.chains[c];
      io::write_text(out_dir() / ("trace-" + std::to_string(c) + ".csv"),
                     io::trace_csv(t, provenance(), cfg_.anneal.trace_stride));
      chains.push_back({{"chain", c},
                        {"seed", t.seed},
                        {"initial_loss", t.initial_loss},
                        {"final_loss", t.final_loss},
                        {"best_loss", t.best_loss},
                        {"best_set", io::to_json(t.best_set)}});
    }
    io::write_json(out_dir() / "selection.json",
                   {{"config_digest", digest_},
                    {"seed", cfg_.seed},
                    {"stage_digest", select_digest()},
                    {"K", sel.K},
                    {"weights", sel.spec.weights},
                    {"scales", sel.spec.scales},
                    {"best_chain", rep.summary.best_chain},
                    {"best_loss", rep.summary.min_loss},
                    {"median_loss", rep.summary.median_loss},
                    {"max_loss", rep.summary.max_loss},
                    {"relative_spread", rep.summary.relative_spread},
                    {"spread_flag", rep.summary.spread_flag},
                    {"best_set", io::to_json(rep.best().best_set)},
                    {"chains", chains}});
  }

  void write_report(const SensitivityReport& rep, const Selection& sel, const OcCache& cache) const {
    const std::size_t K = rep.scenario_set.size(), R = rep.schema.size();
    // Voronoi cells in OC space: radius and population per reported scenario
    std::vector<double> centers(K * R);
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t r = 0; r < R; ++r) centers[k * R + r] = rep.surrogate_ocs[k].values[r];
    const auto f = sel.spec.factors();
    std::vector<double> radius(K, 0.0);
    std::vector<std::size_t> count(K, 0);
    for (std::size_t i = 0; i < cache.size(); ++i) {
      const auto row = cache.row(i);
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t k = 0; k < K; ++k) {
        double d = 0.0;
        for (std::size_t r = 0; r < R; ++r) d += f[r] * std::abs(row[r] - centers[k * R + r]);
        if (d < best) {
          best = d;
          arg = k;
        }
      }
      radius[arg] = std::max(radius[arg], best);
      ++count[arg];
    }

    std::vector<std::string> header = rep.space.names();
    for (const auto& n : rep.schema.names) header.push_back(n);
    for (const auto& n : rep.schema.names) header.push_back(n + "_se");
    for (const auto& n : rep.schema.names) header.push_back(n + "_surrogate");
    header.insert(header.end(), {"cell_radius", "cell_size", "set_loss"});
    std::string s = io::provenance_line(provenance()) + io::join(header);
    json rows = json::array();
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<std::string> cells;
      for (double v : rep.scenario_set[k].theta) cells.push_back(io::fmt(v));
      for (double v : rep.mc_ocs[k].values) cells.push_back(io::fmt(v));
      for (double v : rep.mc_se[k].values) cells.push_back(io::fmt(v));
      for (double v : rep.surrogate_ocs[k].values) cells.push_back(io::fmt(v));
      cells.push_back(io::fmt(radius[k]));
      cells.push_back(std::to_string(count[k]));
      cells.push_back(io::fmt(rep.achieved_loss));
      s += io::join(cells);
      rows.push_back({{"theta", rep.scenario_set[k].theta},
                      {"mc", rep.mc_ocs[k].values},
                      {"mc_se", rep.mc_se[k].values},
                      {"surrogate", rep.surrogate_ocs[k].values},
                      {"cell_radius", radius[k]},
                      {"cell_size", count[k]}});
    }
    io::write_text(out_dir() / "report.csv", s);
    io::write_json(out_dir() / "report.json",
                   {{"config_digest", digest_},
                    {"seed", rep.seed},
                    {"design", design_->name()},
                    {"config", canonical(cfg_)},
                    {"space", io::to_json(rep.space)},
                    {"candidate_space", io::to_json(candidates_)},
                    {"schema", io::to_json(rep.schema)},
                    {"K", K},
                    {"achieved_loss", rep.achieved_loss},
                    {"marginal_losses", rep.marginal_losses},
                    {"witness", rep.witness.theta},
                    {"weights", sel.spec.weights},
                    {"scales", sel.spec.scales},
                    {"chain_summary",
                     {{"chains", sel.replicates.chains.size()},
                      {"best_loss", sel.replicates.summary.min_loss},
                      {"median_loss", sel.replicates.summary.median_loss},
                      {"max_loss", sel.replicates.summary.max_loss},
                      {"relative_spread", sel.replicates.summary.relative_spread},
                      {"spread_flag", sel.replicates.summary.spread_flag}}},
                    {"scenarios", rows}});
  }

  RunConfig cfg_;
  DesignPtr design_;
  ParameterSpace space_;
  ParameterSpace candidates_;
  std::string digest_;
};

/// Oracle table for the two-arm design: one row per (K, k).
inline std::string oracle_app1_csv(const std::vector<std::size_t>& Ks, const TwoArmRctConfig& cfg,
                                   const io::Provenance& p) {
  std::string s = io::provenance_line(p) + "K,k,target_power,theta,exact_loss\n";
  for (auto K : Ks) {
    const auto sol = exact_app1(K, cfg);
    for (std::size_t k = 0; k < K; ++k)
      s += std::to_string(K) + "," + std::to_string(k + 1) + "," + io::fmt(sol.targets[k]) + "," +
           io::fmt(sol.thetas[k]) + "," + io::fmt(sol.loss) + "\n";
  }
  return s;
}

}  // namespace rosa

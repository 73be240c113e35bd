#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rosa/anneal.hpp"
#include "rosa/mc_engine.hpp"
#include "rosa/model.hpp"
#include "rosa/surrogate.hpp"

namespace rosa::io {

using json = nlohmann::json;

/// FNV-1a, 64 bit. Stable across platforms, used for config digests.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Digest of a JSON value. Objects are key-sorted, so the dump is canonical.
inline std::string digest(const json& j) { return hex64(fnv1a(j.dump())); }

/// Shortest decimal form that round-trips a double.
inline std::string fmt(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

struct Provenance {
  std::string config_digest;
  std::uint64_t seed = 0;
};

inline std::string provenance_line(const Provenance& p) {
  return "# rosa config_digest=" + p.config_digest + " seed=" + std::to_string(p.seed) + "\n";
}

/// Simple CSV table. Lines starting with '#' are comments.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return c;
    throw InvalidArgument("CSV: missing column '" + name + "'");
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto cells = split_csv_line(line);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
    } else {
      if (cells.size() != t.header.size())
        throw InvalidArgument(path.string() + ": row has " + std::to_string(cells.size()) +
                              " cells, header has " + std::to_string(t.header.size()));
      t.rows.push_back(std::move(cells));
    }
  }
  if (!have_header) throw InvalidArgument(path.string() + ": empty CSV");
  return t;
}

inline double parse_double(const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw InvalidArgument("CSV: not a number: '" + s + "'");
  }
  if (used != s.size()) throw InvalidArgument("CSV: not a number: '" + s + "'");
  return v;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidArgument("cannot write " + path.string());
  out << text;
}

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidArgument(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

template <class Row>
std::string join(const Row& cells) {
  std::string s;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) s += ',';
    s += cells[i];
  }
  return s + "\n";
}

// ---- scenarios ----------------------------------------------------------

inline std::string scenarios_csv(const std::vector<std::string>& dim_names,
                                 const std::vector<Scenario>& scenarios, const Provenance& p) {
  std::string s = provenance_line(p) + join(dim_names);
  for (const auto& sc : scenarios) {
    std::vector<std::string> cells;
    for (double v : sc.theta) cells.push_back(fmt(v));
    s += join(cells);
  }
  return s;
}

inline std::vector<Scenario> read_scenarios_csv(const std::filesystem::path& path,
                                                const std::vector<std::string>& dim_names) {
  const auto t = read_csv(path);
  std::vector<std::size_t> cols;
  for (const auto& n : dim_names) cols.push_back(t.column(n));
  std::vector<Scenario> out;
  for (const auto& row : t.rows) {
    Scenario s;
    for (auto c : cols) s.theta.push_back(parse_double(row[c]));
    out.push_back(std::move(s));
  }
  return out;
}

// ---- schema / space -----------------------------------------------------

inline json to_json(const OcSchema& s) {
  json kinds = json::array();
  for (auto k : s.kinds) kinds.push_back(to_string(k));
  return {{"names", s.names}, {"kinds", kinds}};
}

inline OcSchema schema_from_json(const json& j) {
  OcSchema s;
  s.names = j.at("names").get<std::vector<std::string>>();
  for (const auto& k : j.at("kinds")) s.kinds.push_back(oc_kind_from_string(k.get<std::string>()));
  if (s.names.size() != s.kinds.size()) throw InvalidArgument("schema: names/kinds length mismatch");
  return s;
}

inline json to_json(const ParameterSpace& sp) {
  json dims = json::array();
  for (std::size_t i = 0; i < sp.dim(); ++i) {
    json d = {{"name", sp.names()[i]}, {"lower", sp.lower(i)}, {"upper", sp.upper(i)}};
    if (sp.is_fixed(i)) d["fixed"] = *sp.fixed()[i];
    dims.push_back(d);
  }
  return dims;
}

inline json to_json(const Scenario& s) { return s.theta; }

// ---- training sets --------------------------------------------------------

/// Files: <stem>_scenarios.csv, <stem>_ocs.csv, <stem>.json.
struct TrainingSetFiles {
  std::filesystem::path scenarios, ocs, sidecar;

  static TrainingSetFiles at(const std::filesystem::path& dir, const std::string& stem) {
    return {dir / (stem + "_scenarios.csv"), dir / (stem + "_ocs.csv"), dir / (stem + ".json")};
  }
};

inline void save_training_set(const TrainingSet& ts, const std::vector<std::string>& dim_names,
                              const TrainingSetFiles& files, const Provenance& p,
                              const json& extra = json::object()) {
  write_text(files.scenarios, scenarios_csv(dim_names, ts.scenarios, p));
  std::vector<std::string> header = ts.schema.names;
  for (const auto& n : ts.schema.names) header.push_back("se_" + n);
  std::string s = provenance_line(p) + join(header);
  for (std::size_t j = 0; j < ts.size(); ++j) {
    std::vector<std::string> cells;
    for (double v : ts.oc_means[j].values) cells.push_back(fmt(v));
    for (double v : ts.mc_se[j].values) cells.push_back(fmt(v));
    s += join(cells);
  }
  write_text(files.ocs, s);
  json side = {{"design", ts.design}, {"reps", ts.reps}, {"seed", ts.seed},
               {"count", ts.size()},  {"schema", to_json(ts.schema)},
               {"dim_names", dim_names}, {"config_digest", p.config_digest}};
  for (auto it = extra.begin(); it != extra.end(); ++it) side[it.key()] = it.value();
  write_json(files.sidecar, side);
}

inline TrainingSet load_training_set(const TrainingSetFiles& files) {
  const json side = read_json(files.sidecar);
  TrainingSet ts;
  ts.design = side.at("design").get<std::string>();
  ts.reps = side.at("reps").get<std::size_t>();
  ts.seed = side.at("seed").get<std::uint64_t>();
  ts.schema = schema_from_json(side.at("schema"));
  ts.scenarios = read_scenarios_csv(files.scenarios, side.at("dim_names").get<std::vector<std::string>>());
  const auto t = read_csv(files.ocs);
  for (const auto& row : t.rows) {
    OcVector m, se;
    for (const auto& n : ts.schema.names) {
      m.values.push_back(parse_double(row[t.column(n)]));
      se.values.push_back(parse_double(row[t.column("se_" + n)]));
    }
    ts.oc_means.push_back(std::move(m));
    ts.mc_se.push_back(std::move(se));
  }
  if (ts.oc_means.size() != ts.scenarios.size())
    throw InvalidArgument("training set: scenario and OC files differ in length");
  return ts;
}

// ---- surrogates -----------------------------------------------------------

inline const char* to_string(HeadKind k) {
  switch (k) {
    case HeadKind::logistic: return "logistic";
    case HeadKind::affine: return "affine";
    case HeadKind::constant: return "constant";
  }
  return "affine";
}

inline HeadKind head_kind_from_string(const std::string& s) {
  if (s == "logistic") return HeadKind::logistic;
  if (s == "affine") return HeadKind::affine;
  if (s == "constant") return HeadKind::constant;
  throw InvalidArgument("unknown output head '" + s + "'");
}

inline json to_json(const MlpSurrogate& m) {
  json layers = json::array();
  std::vector<int> widths{static_cast<int>(m.input_dim())};
  for (const auto& L : m.layers()) {
    layers.push_back({{"in", L.in}, {"out", L.out}, {"weights", L.weights}, {"biases", L.biases}});
    widths.push_back(L.out);
  }
  json heads = json::array();
  for (const auto& h : m.heads())
    heads.push_back({{"kind", to_string(h.kind)}, {"offset", h.offset}, {"scale", h.scale}});
  const auto& rec = m.record();
  return {{"kind", "mlp"},
          {"activation", "relu"},
          {"layout", "row-major (out x in)"},
          {"widths", widths},
          {"schema", to_json(m.schema())},
          {"input_offset", m.input_offset()},
          {"input_scale", m.input_scale()},
          {"heads", heads},
          {"layers", layers},
          {"training",
           {{"epochs_run", rec.epochs_run},
            {"best_epoch", rec.best_epoch},
            {"train_loss", rec.train_loss},
            {"holdout_loss", rec.holdout_loss},
            {"seed", rec.seed},
            {"constant_outputs", rec.constant_outputs}}}};
}

inline json to_json(const NearestNeighborSurrogate& m) {
  json inputs = json::array(), outputs = json::array();
  for (const auto& s : m.inputs()) inputs.push_back(s.theta);
  for (const auto& o : m.outputs()) outputs.push_back(o.values);
  return {{"kind", "nearest"}, {"schema", to_json(m.schema())}, {"inputs", inputs}, {"outputs", outputs}};
}

inline json to_json(const MlpEnsembleSurrogate& m) {
  json members = json::array();
  for (const auto& x : m.members()) members.push_back(to_json(x));
  return {{"kind", "mlp-ensemble"}, {"schema", to_json(m.schema())}, {"members", members}};
}

inline json surrogate_to_json(const Surrogate& s) {
  if (auto* mlp = dynamic_cast<const MlpSurrogate*>(&s)) return to_json(*mlp);
  if (auto* ens = dynamic_cast<const MlpEnsembleSurrogate*>(&s)) return to_json(*ens);
  if (auto* nn = dynamic_cast<const NearestNeighborSurrogate*>(&s)) return to_json(*nn);
  throw InvalidArgument("cannot serialize surrogate of kind '" + s.kind() + "'");
}

inline SurrogatePtr surrogate_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "mlp" && kind != "mlp-ensemble" && kind != "nearest")
    throw InvalidArgument("unknown surrogate kind '" + kind + "'");
  const auto schema = schema_from_json(j.at("schema"));
  if (kind == "mlp-ensemble") {
    std::vector<MlpSurrogate> members;
    for (const auto& m : j.at("members")) {
      if (m.at("kind") != "mlp") throw InvalidArgument("mlp-ensemble: member is not an mlp");
      members.push_back(*std::static_pointer_cast<const MlpSurrogate>(surrogate_from_json(m)));
    }
    return std::make_shared<MlpEnsembleSurrogate>(std::move(members));
  }
  if (kind == "mlp") {
    std::vector<DenseLayer> layers;
    for (const auto& L : j.at("layers"))
      layers.push_back({L.at("in").get<int>(), L.at("out").get<int>(),
                        L.at("weights").get<std::vector<double>>(), L.at("biases").get<std::vector<double>>()});
    std::vector<OutputHead> heads;
    for (const auto& h : j.at("heads"))
      heads.push_back({head_kind_from_string(h.at("kind").get<std::string>()), h.at("offset").get<double>(),
                       h.at("scale").get<double>()});
    MlpTrainingRecord rec;
    if (j.contains("training")) {
      const auto& t = j.at("training");
      rec.epochs_run = t.value("epochs_run", std::size_t{0});
      rec.best_epoch = t.value("best_epoch", std::size_t{0});
      rec.train_loss = t.value("train_loss", 0.0);
      rec.holdout_loss = t.value("holdout_loss", 0.0);
      rec.seed = t.value("seed", std::uint64_t{0});
      rec.constant_outputs = t.value("constant_outputs", std::vector<bool>{});
    }
    return std::make_shared<MlpSurrogate>(schema, std::move(layers),
                                          j.at("input_offset").get<std::vector<double>>(),
                                          j.at("input_scale").get<std::vector<double>>(), std::move(heads), rec);
  }
  if (kind == "nearest") {
    std::vector<Scenario> inputs;
    std::vector<OcVector> outputs;
    for (const auto& x : j.at("inputs")) inputs.push_back({x.get<std::vector<double>>()});
    for (const auto& y : j.at("outputs")) outputs.push_back({y.get<std::vector<double>>()});
    return std::make_shared<NearestNeighborSurrogate>(schema, std::move(inputs), std::move(outputs));
  }
  throw InvalidArgument("unknown surrogate kind '" + kind + "'");
}

// ---- validation / traces ---------------------------------------------------

/// Scatter data: theta columns, MC columns, surrogate columns.
inline std::string validation_csv(const ValidationReport& rep, const std::vector<std::string>& dim_names,
                                  const OcSchema& schema, const Provenance& p) {
  std::vector<std::string> header = dim_names;
  for (const auto& n : schema.names) header.push_back(n + "_mc");
  for (const auto& n : schema.names) header.push_back(n + "_surrogate");
  std::string s = provenance_line(p) + join(header);
  for (std::size_t j = 0; j < rep.scenarios.size(); ++j) {
    std::vector<std::string> cells;
    for (double v : rep.scenarios[j].theta) cells.push_back(fmt(v));
    for (double v : rep.observed[j].values) cells.push_back(fmt(v));
    for (double v : rep.predicted[j].values) cells.push_back(fmt(v));
    s += join(cells);
  }
  return s;
}

inline json to_json(const ValidationReport& rep, const OcSchema& schema) {
  json per = json::array();
  for (std::size_t r = 0; r < schema.size(); ++r) {
    json o = {{"oc", schema.names[r]}, {"rmse", rep.rmse[r]}, {"max_abs_diff", rep.max_abs_diff[r]}};
    o["r2"] = std::isfinite(rep.r2[r]) ? json(rep.r2[r]) : json(nullptr);
    per.push_back(o);
  }
  return {{"points", rep.scenarios.size()}, {"per_oc", per}};
}

/// Every `stride`-th record, plus the last one.
inline std::string trace_csv(const SaTrace& t, const Provenance& p, std::size_t stride = 1) {
  if (stride == 0) throw InvalidArgument("trace_csv: stride must be >= 1");
  std::string s = provenance_line(p) + "iteration,temperature,current_loss,proposal_loss,accepted\n";
  for (const auto& r : t.records)
    if (r.iteration % stride == 0 || r.iteration + 1 == t.records.size())
      s += std::to_string(r.iteration) + "," + fmt(r.temperature) + "," + fmt(r.current_loss) + "," +
         fmt(r.proposal_loss) + "," + (r.accepted ? "1" : "0") + "\n";
  return s;
}

inline json to_json(const ScenarioSet& set) {
  json a = json::array();
  for (const auto& s : set) a.push_back(s.theta);
  return a;
}

inline ScenarioSet set_from_json(const json& j) {
  ScenarioSet set;
  for (const auto& s : j) set.scenarios.push_back({s.get<std::vector<double>>()});
  return set;
}

}  // namespace rosa::io

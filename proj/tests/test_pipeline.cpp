#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "rosa/pipeline.hpp"

using namespace rosa;
namespace fs = std::filesystem;
using io::json;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("rosa_test_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

json tiny_rct() {
  return json::parse(R"({
    "design": "rct2arm",
    "seed": 77,
    "pipeline": {"train_points": 80, "train_reps": 40, "validation_points": 40,
                 "validation_reps": 200, "report_reps": 500, "cloud_size": 600,
                 "validation_gate": 0.5},
    "mlp": {"hidden": [8, 8], "max_epochs": 400, "patience": 40, "batch_size": 16, "learning_rate": 0.01},
    "anneal": {"K": 2, "chains": 3, "t0": 0.01, "t_min": 0.0001, "steps_per_temperature": 10,
               "proposal_sd": 0.05, "move": "single", "trace_stride": 5},
    "sweep": {"Ks": [1, 2, 3], "threshold": 0.3}
  })");
}

std::map<std::string, std::string> read_dir(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[e.path().filename().string()] = ss.str();
  }
  return out;
}

RunConfig with_dir(json j, const fs::path& dir, std::size_t threads = 1) {
  auto c = parse_config(j);
  c.out_dir = dir.string();
  c.threads = threads;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ROSA_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(ExactApp1, TargetsThetasAndLoss) {
  const auto s3 = exact_app1(3);
  EXPECT_NEAR(s3.targets[0], 1.0 / 6, 1e-15);
  EXPECT_NEAR(s3.targets[1], 0.5, 1e-15);
  EXPECT_NEAR(s3.targets[2], 5.0 / 6, 1e-15);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(rct_power_exact(s3.thetas[k], {}), s3.targets[k], 1e-10);
  EXPECT_NEAR(exact_app1(10).loss, 0.050, 1e-15);
  EXPECT_NEAR(exact_app1(30).loss, 0.0167, 5e-5);
  const auto s30 = exact_app1(30);
  for (std::size_t k = 1; k < 30; ++k) EXPECT_GT(s30.targets[k], s30.targets[k - 1]);
  EXPECT_THROW(exact_app1(0), InvalidArgument);
}

TEST(Config, UnknownKeysAreErrors) {
  auto j = tiny_rct();
  j["anneal"]["temperature"] = 5;
  try {
    parse_config(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("unknown key 'anneal.temperature'"), std::string::npos);
  }
  j = tiny_rct();
  j["colour"] = "blue";
  EXPECT_THROW(parse_config(j), ConfigError);
  j = tiny_rct();
  j["design"] = "crossover";
  EXPECT_THROW(parse_config(j), ConfigError);
  j = tiny_rct();
  j["pipeline"]["train_points"] = "many";
  EXPECT_THROW(parse_config(j), ConfigError);
  j = tiny_rct();
  j["anneal"]["cooling"] = 1.5;
  EXPECT_THROW(parse_config(j), ConfigError);
  j = tiny_rct();
  j["rct2arm"] = {{"n", 31}};
  EXPECT_THROW(parse_config(j), ConfigError);
  EXPECT_THROW(parse_config(json::parse(R"({"seed": 1})")), ConfigError);
}

TEST(Config, DigestIgnoresThreadsAndOutDirAndFillsDefaults) {
  auto a = parse_config(tiny_rct());
  auto b = a;
  b.threads = 8;
  b.out_dir = "/elsewhere";
  EXPECT_EQ(config_digest(a), config_digest(b));
  b.seed = 78;
  EXPECT_NE(config_digest(a), config_digest(b));
  // spelling out a default does not change the digest
  auto j = tiny_rct();
  j["rct2arm"] = {{"sigma", 30}};
  EXPECT_EQ(config_digest(parse_config(j)), config_digest(a));
}

TEST(Config, BadRestrictionOrBounds) {
  auto j = tiny_rct();
  j["space"] = {{"restrict", {{"gamma", 1.0}}}};
  EXPECT_THROW(rosa::Run(parse_config(j)), ConfigError);
  j["space"] = {{"bounds", {{"theta", {3.0, 1.0}}}}};
  EXPECT_THROW(rosa::Run(parse_config(j)), ConfigError);
}

TEST(Config, ShippedConfigsParse) {
  for (const char* name : {"app1.json", "app2.json", "app2_restricted.json", "app3.json"}) {
    const auto c = load_config(fs::path(ROSA_CONFIG_DIR) / name);
    EXPECT_NO_THROW(rosa::Run{c}) << name;
  }
}

TEST(Pipeline, EndToEndIsByteIdenticalAcrossThreadCounts) {
  const auto d1 = scratch("det1"), d2 = scratch("det3");
  const rosa::Run r1(with_dir(tiny_rct(), d1, 1));
  const rosa::Run r2(with_dir(tiny_rct(), d2, 3));
  const auto rep = r1.run_pipeline(false);
  r2.run_pipeline(false);
  r1.sweep(false);
  r2.sweep(false);
  const auto f1 = read_dir(d1), f2 = read_dir(d2);
  ASSERT_EQ(f1.size(), f2.size());
  for (const auto& [name, content] : f1) EXPECT_EQ(content, f2.at(name)) << name;
  for (const char* name : {"report.csv", "report.json", "sweep.csv", "validation.csv", "trace-0.csv",
                           "train_scenarios.csv", "model.json", "selection.json"})
    EXPECT_TRUE(f1.count(name)) << name;

  // every output carries the digest
  for (const auto& [name, content] : f1) EXPECT_NE(content.find(r1.digest()), std::string::npos) << name;

  // report invariants
  EXPECT_EQ(rep.scenario_set.size(), 2u);
  EXPECT_GE(rep.achieved_loss, 0.0);
  EXPECT_EQ(rep.marginal_losses.size(), 1u);
  validate_set(rep.scenario_set, r1.space());
  for (std::size_t k = 0; k < rep.mc_ocs.size(); ++k) {
    EXPECT_GE(rep.mc_ocs[k][0], 0.0);
    EXPECT_LE(rep.mc_ocs[k][0], 1.0);
    EXPECT_GE(rep.mc_se[k][0], 0.0);
  }
}

TEST(Pipeline, RerunReusesStagesAndReproducesFiles) {
  const auto dir = scratch("resume");
  const rosa::Run run(with_dir(tiny_rct(), dir));
  run.run_pipeline(false);
  const auto before = read_dir(dir);
  const auto t_train = fs::last_write_time(dir / "train_ocs.csv");
  const auto t_model = fs::last_write_time(dir / "model.json");
  run.run_pipeline(false);
  EXPECT_EQ(fs::last_write_time(dir / "train_ocs.csv"), t_train);
  EXPECT_EQ(fs::last_write_time(dir / "model.json"), t_model);
  const auto after = read_dir(dir);
  for (const auto& [name, content] : before) EXPECT_EQ(content, after.at(name)) << name;

  // a changed annealing setting keeps the training set
  auto j = tiny_rct();
  j["anneal"]["K"] = 3;
  rosa::Run(with_dir(j, dir)).run_pipeline(false);
  EXPECT_EQ(fs::last_write_time(dir / "train_ocs.csv"), t_train);
}

TEST(Pipeline, ValidationGate) {
  auto j = tiny_rct();
  j["pipeline"]["validation_gate"] = 1.01;
  const auto dir = scratch("gate");
  const rosa::Run run(with_dir(j, dir));
  EXPECT_THROW(run.run_pipeline(false), ValidationGateError);
  EXPECT_TRUE(fs::exists(dir / "validation.csv"));
  EXPECT_FALSE(fs::exists(dir / "report.csv"));
  EXPECT_NO_THROW(run.run_pipeline(true));
  EXPECT_TRUE(fs::exists(dir / "report.csv"));
}

TEST(Pipeline, StageErrorsNameTheStage) {
  auto j = tiny_rct();
  j["pipeline"]["train_points"] = 20;  // too few for the network
  const rosa::Run run(with_dir(j, scratch("stage")));
  try {
    run.fit();
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "fit");
  }
}

TEST(Pipeline, RestrictionAndMarginalComparisons) {
  auto j = json::parse(R"({
    "design": "aux-interim",
    "seed": 5,
    "space": {"restrict": {"e": 0.5, "p0": 0.3, "q0": 0.3}},
    "pipeline": {"train_points": 60, "train_reps": 20, "validation_points": 20,
                 "validation_reps": 20, "report_reps": 20, "cloud_size": 400,
                 "surrogate": "nearest", "validation_gate": -10},
    "anneal": {"K": 2, "chains": 2, "t0": 0.01, "t_min": 0.001, "steps_per_temperature": 10, "move": "single"},
    "sweep": {"Ks": [1, 3]}
  })");
  const auto dir = scratch("restrict");
  const rosa::Run run(with_dir(j, dir));
  EXPECT_EQ(run.candidate_space().free_dim(), 4u);
  EXPECT_FALSE(run.space().is_restricted());
  const auto rows = run.compare_restriction(false);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) {
    EXPECT_LE(r.cleaned_full, r.loss_full);
    EXPECT_LE(r.cleaned_restricted, r.loss_restricted);
  }
  EXPECT_LE(rows[1].cleaned_full, rows[0].cleaned_full);
  EXPECT_TRUE(fs::exists(dir / "restriction.csv"));

  bool small = false;
  const auto m = run.compare_marginals(false, &small);
  EXPECT_EQ(m.size(), 4u);
  for (const auto& r : m) {
    EXPECT_GE(r.loss_own, 0.0);
    EXPECT_GE(r.loss_joint, 0.0);
  }
  EXPECT_TRUE(fs::exists(dir / "marginals.csv"));

  // an empty restriction gives identical columns
  j["space"]["restrict"] = json::object();
  const rosa::Run plain(with_dir(j, scratch("restrict_none")));
  for (const auto& r : plain.compare_restriction(false)) EXPECT_EQ(r.loss_full, r.loss_restricted);
}

TEST(Cli, ExitCodesAndOutputs) {
  const auto dir = scratch("cli");
  auto j = tiny_rct();
  io::write_json(dir / "ok.json", j);
  j["pipeline"]["validation_gate"] = 1.01;
  io::write_json(dir / "gate.json", j);
  j = tiny_rct();
  j["mystery"] = 1;
  io::write_json(dir / "bad.json", j);

  const std::string out = "--out-dir " + (dir / "out").string();
  EXPECT_EQ(run_cli("--config " + (dir / "ok.json").string() + " " + out + " report"), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "report.csv"));
  EXPECT_EQ(run_cli("--config " + (dir / "ok.json").string() + " " + out + " oracle-app1"), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "oracle-app1.csv"));

  const std::string gate_out = "--out-dir " + (dir / "gate").string();
  EXPECT_EQ(run_cli("--config " + (dir / "gate.json").string() + " " + gate_out + " validate"), 2);
  EXPECT_EQ(run_cli("--config " + (dir / "gate.json").string() + " " + gate_out + " --force select"), 0);
  EXPECT_EQ(run_cli("--config " + (dir / "bad.json").string() + " report"), 1);
  EXPECT_EQ(run_cli("--config " + (dir / "missing.json").string() + " report"), 1);
  EXPECT_EQ(run_cli("report"), 1);

  // --seed overrides the configured seed and lands in the outputs
  const std::string seed_out = "--out-dir " + (dir / "seeded").string();
  EXPECT_EQ(run_cli("--config " + (dir / "ok.json").string() + " " + seed_out + " --seed 4242 --threads 2 train"), 0);
  std::ifstream in(dir / "seeded" / "train_scenarios.csv");
  std::string first;
  std::getline(in, first);
  EXPECT_NE(first.find("seed=4242"), std::string::npos);
}

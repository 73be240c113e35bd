#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "rosa/pipeline.hpp"

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> out_dir;
  bool force = false;
};

rosa::Run make_run(const GlobalOptions& g) {
  if (g.config.empty()) throw rosa::ConfigError("--config is required");
  auto cfg = rosa::load_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  if (g.out_dir) cfg.out_dir = *g.out_dir;
  return rosa::Run(std::move(cfg));
}

void print_report(const rosa::SensitivityReport& rep) {
  std::cout << "achieved loss " << rosa::io::fmt(rep.achieved_loss) << " with K = " << rep.scenario_set.size()
            << "\n";
  for (std::size_t k = 0; k < rep.scenario_set.size(); ++k) {
    std::cout << "  theta = [";
    for (std::size_t i = 0; i < rep.scenario_set[k].theta.size(); ++i)
      std::cout << (i ? ", " : "") << rosa::io::fmt(rep.scenario_set[k].theta[i]);
    std::cout << "]  OC(MC) = [";
    for (std::size_t r = 0; r < rep.mc_ocs[k].values.size(); ++r)
      std::cout << (r ? ", " : "") << rosa::io::fmt(rep.mc_ocs[k].values[r]);
    std::cout << "]\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scenario selection for clinical trial sensitivity reports"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the configured root seed");
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_flag("--force", g.force, "Continue past a failed validation gate");

  auto* train = app.add_subcommand("train", "Latin hypercube design and MC estimates");
  auto* fit = app.add_subcommand("fit", "Fit the surrogate to the training set");
  auto* validate = app.add_subcommand("validate", "Independent validation of the surrogate");
  auto* select = app.add_subcommand("select", "Replicate annealing chains for the configured K");
  auto* sweep = app.add_subcommand("sweep", "Best loss over the configured list of K");
  auto* restriction = app.add_subcommand("compare-restriction", "Full versus restricted candidate space");
  auto* marginals = app.add_subcommand("compare-marginals", "Marginal losses of joint and per-OC selections");
  auto* oracle = app.add_subcommand("oracle-app1", "Exact optimum for the two-arm design");
  auto* report = app.add_subcommand("report", "Run every stage and write the report");
  for (auto* sub : {train, fit, validate, select, sweep, restriction, marginals, oracle, report})
    sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    auto run = make_run(g);
    std::filesystem::create_directories(run.out_dir());
    if (*train) {
      const auto ts = run.train();
      std::cout << "training set: " << ts.size() << " scenarios x " << ts.reps << " reps\n";
    } else if (*fit) {
      const auto model = run.fit();
      std::cout << "surrogate: " << model->kind() << "\n";
    } else if (*validate) {
      const auto model = run.fit();
      const auto v = run.validate_stage(model, g.force);
      std::cout << "validation min R^2 " << rosa::io::fmt(v.min_r2) << (v.passed ? " (pass)" : " (forced)") << "\n";
    } else if (*select) {
      const auto sel = run.select_stage(g.force);
      std::cout << "best loss " << rosa::io::fmt(sel.replicates.summary.min_loss) << ", chain spread "
                << rosa::io::fmt(sel.replicates.summary.relative_spread)
                << (sel.replicates.summary.spread_flag ? " (above 10%: chains disagree)" : "") << "\n";
    } else if (*sweep) {
      for (const auto& r : run.sweep(g.force))
        std::cout << "K = " << r.K << ": loss " << rosa::io::fmt(r.cleaned_loss) << "\n";
    } else if (*restriction) {
      for (const auto& r : run.compare_restriction(g.force))
        std::cout << "K = " << r.K << ": full " << rosa::io::fmt(r.loss_full) << ", restricted "
                  << rosa::io::fmt(r.loss_restricted) << "\n";
    } else if (*marginals) {
      bool small = false;
      const auto rows = run.compare_marginals(g.force, &small);
      std::cout << rows.size() << " rows; all relative differences below 10%: " << (small ? "yes" : "no") << "\n";
    } else if (*oracle) {
      if (run.config().design != "rct2arm") throw rosa::ConfigError("oracle-app1 needs design 'rct2arm'");
      rosa::io::write_text(run.out_dir() / "oracle-app1.csv",
                           rosa::oracle_app1_csv(run.config().sweep.Ks, run.config().rct, run.provenance()));
      std::cout << "wrote " << (run.out_dir() / "oracle-app1.csv").string() << "\n";
    } else if (*report) {
      print_report(run.run_pipeline(g.force));
    }
  } catch (const rosa::ValidationGateError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const rosa::StageError& e) {
    std::cerr << "error in stage " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

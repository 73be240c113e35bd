// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (0 when everything passes).
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rosa/pipeline.hpp"

using namespace rosa;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  static const fs::path p = [] {
    auto d = fs::temp_directory_path() / "rosa_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

RunConfig shipped(const std::string& name, const std::string& out) {
  auto c = load_config(fs::path(ROSA_CONFIG_DIR) / name);
  c.out_dir = (work_dir() / out).string();
  c.threads = 0;
  return c;
}

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond) ok = false;
    detail << "\n    " << (cond ? "ok   " : "FAIL ") << what;
  }
};

std::string num(double v, int prec = 5) {
  char b[64];
  std::snprintf(b, sizeof b, "%.*f", prec, v);
  return b;
}

int failures = 0;

void criterion(int id, const std::string& title, const std::function<void(Check&)>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Check c;
  try {
    body(c);
  } catch (const std::exception& e) {
    c.require(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!c.ok) ++failures;
  std::printf("%s %d %s (%.1f s)%s\n", c.ok ? "PASS" : "FAIL", id, title.c_str(), secs, c.detail.str().c_str());
  std::fflush(stdout);
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

double binom_se(double p, double n) { return std::sqrt(p * (1 - p) / n); }

struct Stopwatch {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

}  // namespace

int main() {
  const TwoArmRctConfig rct;

  // ---- 1: App 1 loss per K against 1/(2K)
  std::unique_ptr<Run> app1;
  criterion(1, "App 1 exact-loss benchmark, K in {5..10, 20, 30}, within 5% of 1/(2K)", [&](Check& c) {
    const Stopwatch clock;
    app1 = std::make_unique<Run>(shipped("app1.json", "app1"));
    const auto rows = app1->sweep(false);
    c.require(clock.seconds() < 600, "training, fit and sweep in " + num(clock.seconds(), 1) + " s (limit 600)");
    for (const auto& r : rows) {
      const double exact = 1.0 / (2.0 * static_cast<double>(r.K));
      const double rel = std::abs(r.best_loss - exact) / exact;
      c.require(rel <= 0.05, "K=" + std::to_string(r.K) + " loss " + num(r.best_loss) + " exact " + num(exact) +
                                 " rel " + num(100 * rel, 2) + "%");
    }
    const auto k = min_k_for_threshold(rows, 0.050 * 1.05);
    c.detail << "\n    min K with cleaned loss <= 0.050 (+5%): " << (k ? std::to_string(*k) : "none");
  });

  // ---- 2: App 1 K = 3 recovery across 20 chains
  criterion(2, "App 1 K=3 scenario recovery over 20 chains, power within 0.05 of {1/6, 1/2, 5/6}", [&](Check& c) {
    auto cfg = shipped("app1.json", "app1");
    cfg.anneal.sa.K = 3;
    cfg.anneal.chains = 20;
    const Run run(cfg);
    const auto sel = run.select_stage(false);
    const double targets[3] = {1.0 / 6, 0.5, 5.0 / 6};
    double worst = 0;
    for (const auto& chain : sel.replicates.chains) {
      std::vector<double> p;
      for (const auto& s : chain.best_set) p.push_back(rct_power_exact(s[0], rct));
      std::sort(p.begin(), p.end());
      for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(p[k] - targets[k]));
    }
    c.require(sel.replicates.chains.size() == 20, "20 chains");
    c.require(worst <= 0.05, "largest |power - target| over all chains " + num(worst));
    c.require(!sel.replicates.summary.spread_flag,
              "chain spread " + num(100 * sel.replicates.summary.relative_spread, 2) + "% (flag at 10%)");
  });

  // ---- 3: power anchor
  criterion(3, "Power anchor f(13.5) = 0.80 +- 0.005 and MC agreement within 0.002", [&](Check& c) {
    const double exact = rct_power_exact(13.5, rct);
    c.require(std::abs(exact - 0.80) <= 0.005, "closed form f(13.5) = " + num(exact) + " vs 0.80");
    const TwoArmRct d(rct);
    const auto ts = estimate_ocs(d, {Scenario{{13.5}}}, 1000000, 20240613, 0);
    const double mc = ts.oc_means[0][0];
    c.require(std::abs(mc - exact) <= 0.002, "MC (10^6) " + num(mc) + " vs closed form " + num(exact));
    c.require(std::abs(mc - 0.80) <= 0.002, "MC (10^6) " + num(mc) + " vs 0.80");
  });

  // ---- 4: surrogate validation
  criterion(4, "Surrogate validation: App 2 desk scale R^2 >= 0.90 per OC, App 1 R^2 >= 0.98", [&](Check& c) {
    const Stopwatch clock;
    const Run run(shipped("app2.json", "app2"));
    const auto& p = run.config().pipeline;
    c.require(p.train_points == 500 && p.train_reps == 200 && p.validation_points == 100 &&
                  p.validation_reps == 10000,
              "App 2 scale J=500 M=200 J'=100 M'=10^4");
    const auto v = run.validate_stage(run.fit(), true);
    const auto names = run.design().oc_schema().names;
    for (std::size_t r = 0; r < names.size(); ++r)
      c.require(v.report.r2[r] >= 0.90, "App 2 " + names[r] + " R^2 " + num(v.report.r2[r], 4));

    c.require(clock.seconds() < 1200, "App 2 desk run in " + num(clock.seconds(), 1) + " s (limit 1200)");
    const auto model = app1->fit();
    const auto pts = uniform_sample(CloudSpec{1000, app1->space(), 4242});
    std::vector<double> exact, pred;
    for (const auto& s : pts) {
      exact.push_back(rct_power_exact(s[0], rct));
      pred.push_back(model->predict(s)[0]);
    }
    const double r2 = stats::r_squared(exact, pred);
    c.require(r2 >= 0.98, "App 1 R^2 against closed form " + num(r2, 5));
  });

  // ---- 5: brute force versus naive enumeration and SA
  criterion(5, "Oracle equivalence: 50-candidate K=2 brute force vs naive loop, SA <= optimum + 0.01", [&](Check& c) {
    const auto model = app1->fit();
    const auto cache = app1->compute_cache(*model);
    const auto spec = app1->loss_spec(*cache);
    std::vector<Scenario> cand;
    for (int i = 0; i < 50; ++i) cand.push_back(Scenario{{-5.0 + 30.0 * (i + 0.5) / 50}});
    const auto bf = brute_force_select(cand, 2, *cache, *model, spec);

    // naive reference: predictions recomputed, metric_d per pair and row
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0, subsets = 0;
    for (std::size_t i = 0; i < cand.size(); ++i)
      for (std::size_t j = i + 1; j < cand.size(); ++j) {
        ++subsets;
        const auto fi = model->predict(cand[i]), fj = model->predict(cand[j]);
        double worst = 0;
        for (std::size_t n = 0; n < cache->size(); ++n) {
          const auto row = cache->row(n);
          const double di = metric_d(row, std::span<const double>(fi.values), spec);
          const double dj = metric_d(row, std::span<const double>(fj.values), spec);
          worst = std::max(worst, std::min(di, dj));
        }
        if (worst < best) {
          best = worst;
          bi = i;
          bj = j;
        }
      }
    c.require(bf.subsets == 1225 && subsets == 1225, "1225 subsets enumerated");
    c.require(bf.loss == best, "brute force loss " + num(bf.loss, 8) + " naive " + num(best, 8));
    c.require(bf.best_set[0] == cand[bi] && bf.best_set[1] == cand[bj], "same optimal pair");

    CoverLossEvaluator eval(cache, model, spec);
    const auto rep = sa_replicates(eval, app1->sa_config(2, app1->space(), 5), 5, 0);
    c.require(rep.summary.min_loss <= bf.loss + 0.01,
              "SA " + num(rep.summary.min_loss) + " <= discrete optimum + 0.01 = " + num(bf.loss + 0.01));
  });

  // ---- 6: restriction property on App 2
  criterion(6, "Restriction property, K in {2, 5, 10, 15}: restricted >= full - 0.01, cleaned curves non-increasing",
            [&](Check& c) {
              const Run run(shipped("app2_restricted.json", "app2"));
              const auto rows = run.compare_restriction(false);
              for (std::size_t i = 0; i < rows.size(); ++i) {
                const auto& r = rows[i];
                c.require(r.loss_restricted >= r.loss_full - 0.01,
                          "K=" + std::to_string(r.K) + " full " + num(r.loss_full) + " restricted " +
                              num(r.loss_restricted));
                if (i) {
                  c.require(r.cleaned_full <= rows[i - 1].cleaned_full &&
                                r.cleaned_restricted <= rows[i - 1].cleaned_restricted,
                            "cleaned curves non-increasing at K=" + std::to_string(r.K));
                }
              }
            });

  // ---- 7: marginal property on App 3
  criterion(7, "Marginal property, App 3, K in {2, 5}: L_r(S_r) <= L_r(S) + 0.01", [&](Check& c) {
    const Run run(shipped("app3.json", "app3"));
    bool small = false;
    const auto rows = run.compare_marginals(false, &small);
    const auto names = run.design().oc_schema().names;
    for (const auto& r : rows)
      c.require(r.loss_own <= r.loss_joint + 0.01, "K=" + std::to_string(r.K) + " " + names[r.r] + " own " +
                                                      num(r.loss_own) + " joint " + num(r.loss_joint) +
                                                      " rel diff " + num(100 * r.relative_difference, 1) + "%");
    c.detail << "\n    all relative differences below 10%: " << (small ? "yes" : "no");
  });

  // ---- 8: mechanism checks
  criterion(8, "Mechanism suite", [&](Check& c) {
    {
      Rng rng = make_stream(81, {});
      const double p = std::exp(-1.0);
      int acc = 0;
      for (int i = 0; i < 10000; ++i) acc += uniform01(rng) <= accept_probability(0.10, 0.15, 0.05);
      c.require(std::abs(acc / 1e4 - p) <= 3 * binom_se(p, 1e4),
                "acceptance frequency " + num(acc / 1e4, 4) + " vs exp(-1) " + num(p, 4));
    }
    {
      SaConfig s;
      s.schedule = CoolingSchedule::geometric;
      bool exact = true;
      for (std::size_t i = 0; i < 100; ++i) exact = exact && s.temperature(i + 1) == s.cooling * s.temperature(i);
      c.require(exact, "geometric cooling T_{i+1} = r T_i exactly");
    }
    {
      const AuxInterim d;
      const auto space = d.parameter_space();
      const std::size_t J = 500;
      const auto pts = lhs_sample(LhsPlan{J, space, 82});
      bool flat = true;
      for (std::size_t i = 0; i < space.dim(); ++i) {
        std::vector<int> cnt(J, 0);
        for (const auto& s : pts)
          ++cnt[std::min(J - 1, static_cast<std::size_t>((s[i] - space.lower(i)) / space.range(i) * J))];
        flat = flat && std::all_of(cnt.begin(), cnt.end(), [](int v) { return v == 1; });
      }
      c.require(flat, "LHS one point per stratum in every dimension");
    }
    {
      const auto m = MlpSurrogate::initialise({{"a", "b"}, {OcKind::probability, OcKind::count}}, 7,
                                              MlpArchitecture{}, 83);
      const auto probe = uniform_sample(CloudSpec{32, AuxInterim().parameter_space(), 84});
      const double err = gradient_check(m, probe, 100, 1e-5, 85);
      c.require(err < 1e-4, "MLP gradient check max relative error " + std::to_string(err));
    }
    {
      const BivariateBernoulli b(0.2, 0.4, 0.6);
      Rng rng = make_stream(86, {});
      const double n = 1e6;
      double cells[4] = {0, 0, 0, 0};
      for (int i = 0; i < 1000000; ++i) {
        auto [y, s] = b(rng);
        cells[2 * (1 - y) + (1 - s)] += 1;
      }
      const double ref[4] = {b.p11(), b.p10(), b.p01(), b.p00()};
      bool ok = true;
      for (int k = 0; k < 4; ++k) ok = ok && std::abs(cells[k] / n - ref[k]) <= 3 * binom_se(ref[k], n);
      c.require(ok, "bivariate Bernoulli cells within 3 s.e. at 10^6 (P11 " + num(cells[0] / n, 5) + " vs " +
                        num(ref[0], 5) + ")");
    }
    {
      Rng rng = make_stream(87, {});
      const double r1 = std::log(2.0) / 4, r2 = std::log(2.0) / 12, rho = 0.5;
      double s1 = 0, s2 = 0, s11 = 0, s22 = 0, s12 = 0;
      const int n = 1000000;
      for (int i = 0; i < n; ++i) {
        auto [a, b] = sample_correlated_exponentials(r1, r2, rho, rng);
        s1 += a;
        s2 += b;
        s11 += a * a;
        s22 += b * b;
        s12 += a * b;
      }
      const double m1 = s1 / n, m2 = s2 / n;
      const double corr = (s12 / n - m1 * m2) / std::sqrt((s11 / n - m1 * m1) * (s22 / n - m2 * m2));
      c.require(std::abs(m1 * r1 - 1) <= 0.005 && std::abs(m2 * r2 - 1) <= 0.005,
                "exponential means " + num(m1, 4) + " / " + num(1 / r1, 4) + ", " + num(m2, 4) + " / " +
                    num(1 / r2, 4));
      c.require(std::abs(corr - rho) <= 0.01, "correlation " + num(corr, 4) + " vs " + num(rho, 2));
    }
  });

  // ---- 9: loss algebra
  criterion(9, "Loss algebra: permutation, monotonicity, naive agreement, witness", [&](Check& c) {
    const AuxInterim d;
    const auto space = d.parameter_space();
    auto f = std::make_shared<NearestNeighborSurrogate>(
        estimate_ocs(d, lhs_sample(LhsPlan{120, space, 91}), 30, 92));
    const auto cloud = uniform_sample(CloudSpec{500, space, 93});
    const auto cache = build_cache(*f, cloud);
    const LossSpec spec{{0.5, 0.5}, default_scales(f->schema(), cache)};
    bool perm = true, mono = true, naive = true, wit = true;
    double worst_gap = 0;
    for (std::uint64_t t = 0; t < 50; ++t) {
      ScenarioSet set{uniform_sample(CloudSpec{1 + t % 3, space, 1000 + t})};
      const auto base = loss_hat(set, cache, *f, spec);
      auto shuffled = set;
      std::reverse(shuffled.scenarios.begin(), shuffled.scenarios.end());
      perm = perm && loss_hat(shuffled, cache, *f, spec).loss == base.loss;
      auto bigger = set;
      bigger.scenarios.push_back(uniform_sample(CloudSpec{1, space, 2000 + t})[0]);
      mono = mono && loss_hat(bigger, cache, *f, spec).loss <= base.loss;
      double ref = 0;
      for (const auto& x : cloud) {
        const auto a = f->predict(x);
        double m = std::numeric_limits<double>::infinity();
        for (const auto& k : set) m = std::min(m, metric_d(a, f->predict(k), spec));
        ref = std::max(ref, m);
      }
      worst_gap = std::max(worst_gap, std::abs(ref - base.loss));
      naive = naive && std::abs(ref - base.loss) <= 1e-12;
      const auto a = f->predict(base.witness);
      double m = std::numeric_limits<double>::infinity();
      for (const auto& k : set) m = std::min(m, metric_d(a, f->predict(k), spec));
      wit = wit && m == base.loss;
    }
    c.require(perm, "permutation invariance (exact)");
    c.require(mono, "monotone under insertion (exact)");
    c.require(naive, "naive triple loop agreement, max gap " + std::to_string(worst_gap));
    c.require(wit, "witness reproduces loss (exact)");
  });

  // ---- 10: determinism
  criterion(10, "Determinism: reruns byte-identical for 1 and 2 worker threads", [&](Check& c) {
    auto base = shipped("app2.json", "det_a");
    base.pipeline = PipelineParams{200, 50, 50, 200, 200, 5000, -1.0, "mlp"};
    base.mlp.max_epochs = 60;
    base.mlp_ensemble = 2;
    base.anneal.sa.K = 3;
    base.anneal.chains = 3;
    base.anneal.sa.steps_per_temperature = 5;
    base.sweep.Ks = {2, 3};
    auto run_in = [&](const std::string& name, std::size_t threads) {
      auto cfg = base;
      cfg.out_dir = (work_dir() / name).string();
      cfg.threads = threads;
      fs::remove_all(cfg.out_dir);
      const Run run(cfg);
      run.run_pipeline(false);
      run.sweep(false);
      return read_dir(cfg.out_dir);
    };
    const auto a = run_in("det_a", 1);
    const auto b = run_in("det_b", 2);
    const auto again = run_in("det_a", 1);
    bool same = a.size() == b.size() && a == again;
    for (const auto& [name, content] : a) same = same && b.count(name) && b.at(name) == content;
    c.require(same, std::to_string(a.size()) + " files identical across reruns and thread counts");
  });

  std::printf("%d criteria failed\n", failures);
  return failures;
}

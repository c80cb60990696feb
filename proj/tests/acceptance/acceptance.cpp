// Acceptance suite: one PASS/FAIL line per criterion. The benchmark runs go
// through the same command-line entry point as the `histonet` tool.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <json.hpp>

#include "histonet/checks/gradcheck_suite.hpp"
#include "histonet/cli/cli.hpp"
#include "histonet/metrics/metrics.hpp"
#include "histonet/scenegen/dataset_io.hpp"
#include "histonet/scenegen/generator.hpp"
#include "histonet/targets/targets.hpp"
#include "histonet/train/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace histonet;

namespace {

// Benchmark settings shared by criteria 7, 8, 9 and 11.
constexpr int kEpochs = 12;
constexpr const char* kTrainSeed = "1";
constexpr const char* kTestSeed = "2";
constexpr const char* kRunSeed = "5";

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string num(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s << std::scientific << std::setprecision(2) << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

json read(const fs::path& p) { return json::parse(slurp(p)); }

// Runs one command line; its output goes to a per-run log in the work dir.
void invoke(const fs::path& log, const std::vector<std::string>& args) {
  fs::create_directories(log.parent_path());
  std::ofstream out(log, std::ios::app);
  for (const std::string& a : args) out << a << ' ';
  out << '\n';
  const int code = cli::run(args, out, out);
  if (code != 0) throw std::runtime_error("command failed (exit " + std::to_string(code) + "), see " + log.string());
}

struct Bench {
  fs::path work;
  fs::path train_data() const { return work / "data" / "train"; }
  fs::path test_data() const { return work / "data" / "test"; }
  fs::path log() const { return work / "commands.log"; }

  void ensure_data() const {
    if (!fs::exists(train_data() / "run.json")) {
      invoke(log(), {"--seed", kTrainSeed, "--out", train_data().string(), "gen", "--n", "2000", "--size", "64"});
    }
    if (!fs::exists(test_data() / "run.json")) {
      invoke(log(), {"--seed", kTestSeed, "--out", test_data().string(), "gen", "--n", "200", "--size", "64"});
    }
  }

  // Trains and evaluates one model; returns the report.
  json train_eval(const std::string& name, bool dsn) const {
    const fs::path dir = work / name;
    invoke(log(), {"--seed", kRunSeed, "--out", (dir / "train").string(), "train", "--data", train_data().string(),
                "--epochs", std::to_string(kEpochs), "--dsn", dsn ? "on" : "off"});
    invoke(log(), {"--out", (dir / "eval").string(), "eval", "--data", test_data().string(), "--ckpt",
                (dir / "train" / "model.hnet").string(), "--plots", "off"});
    return read(dir / "eval" / "report.json");
  }

  json baseline() const {
    const fs::path dir = work / "baseline";
    if (!fs::exists(dir / "report.json")) {
      invoke(log(), {"--out", dir.string(), "eval", "--data", test_data().string(), "--baseline", "average",
                  "--train-data", train_data().string(), "--plots", "off"});
    }
    return read(dir / "report.json");
  }
};

std::vector<double> random_hist(Rng& rng) {
  std::vector<double> h(8);
  for (double& v : h) v = rng.bernoulli(0.2) ? 0.0 : rng.uniform(0.0, 10.0);
  return h;
}

// ---------------------------------------------------------------------------

Outcome c1_gradcheck() {
  Clock clock;
  double worst = 0.0;
  std::string worst_name;
  bool all = true;
  std::size_t n = 0;
  for (const checks::GradcheckEntry& e : checks::run_gradcheck_suite(1e-4, 0)) {
    ++n;
    all = all && e.passed && e.max_rel_error < 1e-4;
    if (e.max_rel_error >= worst) {
      worst = e.max_rel_error;
      worst_name = e.name;
    }
  }
  const double t = clock.seconds();
  std::ostringstream w;
  w << std::scientific << std::setprecision(2) << worst;
  return {all && t < 120.0, std::to_string(n) + " checks, worst " + worst_name + " " + w.str() + ", " + num(t, 1) + " s"};
}

Outcome c2_count_map() {
  double worst = 0.0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const scene::Scene s = scene::sample_scene(scene::desk_config(64), scene::scene_seed(21, i));
    const targets::CountMap m = targets::build_count_map(s, 9);
    if (m.width != 72 || m.height != 72) return {false, "desk map is not 72 x 72"};
    worst = std::max(worst, std::abs(targets::count_from_map(m) - static_cast<double>(s.instances.size())));
  }
  for (std::size_t i = 0; i < 50; ++i) {
    const scene::Scene s = scene::sample_scene(scene::full_scale_config(), scene::scene_seed(22, i));
    const targets::CountMap m = targets::build_count_map(s, 33);
    if (m.width != 288 || m.height != 288) return {false, "full-scale map is not 288 x 288"};
    worst = std::max(worst, std::abs(targets::count_from_map(m) - static_cast<double>(s.instances.size())));
  }
  return {worst <= 1e-9, "1000 desk (64->72) + 50 full-scale (256->288) scenes, max error " + sci(worst)};
}

Outcome c3_ladder() {
  const scene::GenConfig c = scene::desk_config(64);
  const double s_max = targets::default_s_max(c.area);
  for (std::size_t i = 0; i < 1000; ++i) {
    const targets::BinLadder l = targets::build_histograms(scene::sample_scene(c, scene::scene_seed(23, i)), s_max);
    if (targets::merge_pairs(l.hist16) != l.hist8 || targets::merge_pairs(l.hist8) != l.hist4 ||
        targets::merge_pairs(l.hist4) != l.hist2) {
      return {false, "scene " + std::to_string(i) + " does not nest"};
    }
  }
  return {true, "1000 scenes, 16 -> 8 -> 4 -> 2 exact"};
}

Outcome c4_metric_suite() {
  constexpr double tol = 1e-9;
  Rng rng(24);
  const std::vector<double> w = targets::bin_weights(targets::bin_edges(352.0, 8));
  double worst = 0.0;
  bool bounds = true, asymmetric = false;
  for (int k = 0; k < 10000; ++k) {
    std::vector<double> p = random_hist(rng), t = random_hist(rng);
    p[0] += 1.0;
    const double self = std::max({std::abs(metrics::kld(p, p)), metrics::chi2(p, p), metrics::bhatt(p, p),
                                  metrics::wt_l1(p, p, w), std::abs(metrics::isec(p, p) - 1.0),
                                  std::abs(metrics::corr(p, p) - 1.0)});
    const double i = metrics::isec(p, t), b = metrics::bhatt(p, t);
    bounds = bounds && i >= 0.0 && i <= 1.0 && b >= 0.0 && b <= 1.0;
    const double sym = std::max({std::abs(metrics::chi2(p, t) - metrics::chi2(t, p)),
                                 std::abs(b - metrics::bhatt(t, p)), std::abs(i - metrics::isec(t, p))});
    worst = std::max({worst, self, sym});
    asymmetric = asymmetric || std::abs(metrics::kld(p, t) - metrics::kld(t, p)) > tol;
  }
  return {worst <= tol && bounds && asymmetric,
          "10^4 pairs, max identity/symmetry deviation " + sci(worst) + ", bounds " +
              (bounds ? "ok" : "violated") + ", kld asymmetric " + (asymmetric ? "yes" : "no")};
}

Outcome c5_oracles() {
  using V = std::vector<double>;
  const double isec = metrics::isec(V{2, 2}, V{4, 0});
  const double chi2 = metrics::chi2(V{4, 0}, V{2, 2});
  const double kld = metrics::kld(V{1, 3}, V{1, 1});
  const double wl1 = metrics::wt_l1(V{4, 2}, V{2, 2}, V{0.25, 0.75});
  const bool ok = isec == 0.5 && std::abs(chi2 - 2.6667) <= 1e-4 && std::abs(kld - 0.1438) <= 1e-3 && wl1 == 0.5;
  return {ok, "isec " + num(isec) + ", chi2 " + num(chi2) + ", kld " + num(kld) + ", wL1 " + num(wl1)};
}

Outcome c6_overfit() {
  Clock clock;
  const scene::Dataset ds = scene::generate_dataset(scene::desk_config(64), 8, 26);
  const train::TrainSet set{ds.scenes, ds.images, targets::default_s_max(ds.config.area)};
  model::HistoNet net(model::ModelConfig{}, 26);
  const losses::LossReport before = train::mean_loss(net, set);
  train::TrainConfig c;
  c.steps = 2000;
  c.batch = 8;
  c.augment = false;
  c.seed = 26;
  train::Trainer(c).fit(net, set);
  const losses::LossReport after = train::mean_loss(net, set);
  const double t = clock.seconds();
  const auto pct = [](double a, double b) { return num(100.0 * a / b, 2) + "%"; };
  return {after.l_total < 0.05 * before.l_total && t < 300.0,
          "L_total " + num(before.l_total, 2) + " -> " + num(after.l_total, 2) + " (" +
              pct(after.l_total, before.l_total) + "; L_count " + pct(after.l_count, before.l_count) + ", L_KL " +
              pct(after.l_kl, before.l_kl) + ", L_wL1 " + pct(after.l_wl, before.l_wl) + "), " + num(t, 1) + " s"};
}

struct BenchResults {
  json plain, dsn, avg;
  double plain_seconds = 0.0;
};

Outcome c7_ordering(const Bench& b, BenchResults& r) {
  Clock clock;
  b.ensure_data();
  r.avg = b.baseline();
  r.plain = b.train_eval("c7_plain", false);
  r.plain_seconds = clock.seconds();
  const double mae = r.plain["mae"], chi2 = r.plain["chi2"];
  const double amae = r.avg["mae"], achi2 = r.avg["chi2"];
  return {mae < 0.5 * amae && chi2 < 0.7 * achi2 && r.plain_seconds < 1800.0,
          "MAE " + num(mae, 3) + " vs average " + num(amae, 3) + " (ratio " + num(mae / amae, 3) + "), chi2 " +
              num(chi2, 3) + " vs " + num(achi2, 3) + " (ratio " + num(chi2 / achi2, 3) + "), " +
              num(r.plain_seconds, 0) + " s"};
}

Outcome c8_dsn(const Bench& b, BenchResults& r) {
  r.dsn = b.train_eval("c8_dsn", true);
  const double pm = r.plain["mae"], dm = r.dsn["mae"], pw = r.plain["wt_l1"], dw = r.dsn["wt_l1"];
  std::cout << "    " << std::left << std::setw(16) << "method" << std::setw(10) << "MAE" << std::setw(10) << "wt_L1"
            << std::setw(10) << "kld" << "chi2\n";
  for (const auto& [name, j] : {std::pair{"HistoNet 8", r.plain}, std::pair{"HistoNet-DSN 8", r.dsn}}) {
    std::cout << "    " << std::setw(16) << name << std::setw(10) << num(j["mae"], 3) << std::setw(10)
              << num(j["wt_l1"], 4) << std::setw(10) << num(j["kld"], 4) << num(j["chi2"], 3) << "\n";
  }
  std::cout << std::right;
  return {dm <= 1.1 * pm && dw <= 1.1 * pw,
          "DSN/plain MAE " + num(dm / pm, 3) + ", wt_L1 " + num(dw / pw, 3) + " (bound 1.1)"};
}

Outcome c9_ablation(const Bench& b) {
  const fs::path dir = b.work / "c9_ablation";
  invoke(b.log(), {"--seed", kRunSeed, "--out", dir.string(), "ablate", "--data", b.train_data().string(), "--test-data",
                b.test_data().string(), "--fractions", "0.25,1.0", "--epochs", std::to_string(kEpochs)});
  const json rows = read(dir / "ablation.json");
  json q, f;
  for (const json& row : rows) {
    if (row["fraction"] == 0.25) q = row;
    if (row["fraction"] == 1.0) f = row;
  }
  if (q.is_null() || f.is_null()) return {false, "ablation.json lacks the 0.25 or 1.0 row"};
  const double qm = q["mae"], fm = f["mae"], qk = q["kld"], fk = f["kld"];
  return {qm >= fm && qk >= fk - 0.02, "MAE 25% " + num(qm, 3) + " vs 100% " + num(fm, 3) + ", kld 25% " +
                                           num(qk, 4) + " vs 100% " + num(fk, 4)};
}

Outcome c10_cellularity(const Bench& b) {
  const fs::path dir = b.work / "c10_cellularity";
  const fs::path train = dir / "data" / "train", test = dir / "data" / "test";
  invoke(b.log(), {"--seed", "31", "--out", train.string(), "gen", "--n", "500", "--size", "64"});
  invoke(b.log(), {"--seed", "32", "--out", test.string(), "gen", "--n", "100", "--size", "64"});
  invoke(b.log(), {"--seed", "33", "--out", (dir / "run").string(), "cellularity", "--data", train.string(),
                "--test-data", test.string()});
  const bool frozen = slurp(dir / "run" / "stage2.hnet") == slurp(dir / "run" / "stage3.hnet");
  const json r = read(dir / "run" / "cellularity.json");
  const double rho = r["spearman"];
  return {frozen && rho > 0.8, std::string("stage 3 HistoNet parameters ") +
                                   (frozen ? "bit-identical to" : "DIFFER from") + " stage 2; held-out Spearman " +
                                   num(rho, 4) + ", concordance " + num(r["concordance"], 4)};
}

Outcome c11_determinism(const Bench& b) {
  b.train_eval("c11_repeat", false);
  const bool report = slurp(b.work / "c7_plain" / "eval" / "report.json") ==
                      slurp(b.work / "c11_repeat" / "eval" / "report.json");
  const bool ckpt = slurp(b.work / "c7_plain" / "train" / "model.hnet") ==
                    slurp(b.work / "c11_repeat" / "train" / "model.hnet");
  return {report && ckpt, std::string("report ") + (report ? "identical" : "differs") + ", checkpoint " +
                              (ckpt ? "identical" : "differs")};
}

}  // namespace

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
  fs::path work = "acceptance_work";
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream s(argv[++i]);
      for (std::string item; std::getline(s, item, ',');) only.push_back(std::stoi(item));
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only 1,2,...]\n";
      return 1;
    }
  }
  fs::remove_all(work);
  fs::create_directories(work);
  const Bench bench{work};
  BenchResults results;

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, c1_gradcheck},
      {2, c2_count_map},
      {3, c3_ladder},
      {4, c4_metric_suite},
      {5, c5_oracles},
      {6, c6_overfit},
      {7, [&] { return c7_ordering(bench, results); }},
      {8, [&] { return c8_dsn(bench, results); }},
      {9, [&] { return c9_ablation(bench); }},
      {10, [&] { return c10_cellularity(bench); }},
      {11, [&] { return c11_determinism(bench); }},
  };
  const auto wanted = [&](int id) {
    if (only.empty()) return true;
    if (std::find(only.begin(), only.end(), id) != only.end()) return true;
    // Criteria 8 and 11 compare against the criterion-7 run.
    return id == 7 && std::any_of(only.begin(), only.end(), [](int k) { return k == 8 || k == 11; });
  };

  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!wanted(id)) continue;
    Outcome o;
    Clock clock;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << o.detail << " [" << num(clock.seconds(), 1)
              << " s]\n"
              << std::flush;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << "\n";
  return failed == 0 ? 0 : 1;
}

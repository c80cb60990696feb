#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "histonet/cli/cli.hpp"
#include "histonet/scenegen/dataset_io.hpp"
#include "histonet/targets/targets.hpp"

using namespace histonet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "histonet_unit_cli";

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

json read(const fs::path& p) { return json::parse(slurp(p)); }

std::string dir(const std::string& name) { return (kRoot / name).string(); }

// A small 32 px dataset shared by the training cases.
const std::string& small_data() {
  static const std::string d = [] {
    fs::remove_all(kRoot);
    const std::string p = dir("data32");
    REQUIRE(run_cli({"--seed", "3", "--out", p, "gen", "--n", "6", "--size", "32"}).code == 0);
    return p;
  }();
  return d;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and usage errors") {
    CHECK(run_cli({"--help"}).code == cli::kOk);
    CHECK(run_cli({}).code == cli::kUsage);
    const Result r = run_cli({"gen", "--bogus", "1"});
    CHECK(r.code == cli::kUsage);
    CHECK(r.err.find("--n") != std::string::npos);
    CHECK(run_cli({"gen", "--n", "many"}).code == cli::kUsage);
    CHECK(run_cli({"gen", "--n", "-1", "--out", dir("neg")}).code == cli::kUsage);
  }

  TEST_CASE("gen is deterministic and records its run") {
    small_data();
    const std::string a = dir("gen_a"), b = dir("gen_b");
    REQUIRE(run_cli({"--seed", "7", "--out", a, "gen", "--n", "3", "--size", "16"}).code == 0);
    REQUIRE(run_cli({"--seed", "7", "--out", b, "gen", "--n", "3", "--size", "16"}).code == 0);
    CHECK(slurp(fs::path(a) / "images" / "000002.pgm") == slurp(fs::path(b) / "images" / "000002.pgm"));
    CHECK(slurp(fs::path(a) / "annotations" / "000000.json") ==
          slurp(fs::path(b) / "annotations" / "000000.json"));
    const json run = read(fs::path(a) / "run.json");
    CHECK(run["command"] == "gen");
    CHECK(run["seed"] == 7);
    CHECK(run["options"]["n"] == 3);
    CHECK(run["options"]["count_mean"].is_number());
  }

  TEST_CASE("zero scenes is a valid dataset") {
    small_data();
    const std::string p = dir("gen_zero");
    CHECK(run_cli({"--out", p, "gen", "--n", "0"}).code == 0);
    CHECK(scene::read_dataset(p).size() == 0);
  }

  TEST_CASE("replay reproduces the recorded command") {
    small_data();
    const std::string a = dir("replay_src");
    REQUIRE(run_cli({"--seed", "11", "--out", a, "gen", "--n", "2", "--size", "16"}).code == 0);
    REQUIRE(run_cli({"replay", (fs::path(a) / "run.json").string()}).code == 0);
    const fs::path r = fs::path(a) / "replay";
    CHECK(slurp(r / "images" / "000001.pgm") == slurp(fs::path(a) / "images" / "000001.pgm"));
  }

  TEST_CASE("config file supplies defaults and the command line wins") {
    small_data();
    const fs::path cfg = kRoot / "cfg.json";
    std::ofstream(cfg) << R"({"n": 4, "size": 16, "seed": 5})";
    const std::string a = dir("cfg_a");
    REQUIRE(run_cli({"--config", cfg.string(), "--out", a, "gen", "--n", "2"}).code == 0);
    const json run = read(fs::path(a) / "run.json");
    CHECK(run["options"]["n"] == 2);
    CHECK(run["options"]["size"] == 16);
    CHECK(run["seed"] == 5);
    std::ofstream(cfg) << R"({"nope": 1})";
    CHECK(run_cli({"--config", cfg.string(), "--out", a, "gen"}).code == cli::kUsage);
  }

  TEST_CASE("zero epochs writes the initial checkpoint and an empty log") {
    const std::string a = dir("train0"), b = dir("train0b");
    REQUIRE(run_cli({"--seed", "1", "--out", a, "train", "--data", small_data(), "--epochs", "0"}).code == 0);
    REQUIRE(run_cli({"--seed", "1", "--out", b, "train", "--data", small_data(), "--epochs", "1"}).code == 0);
    CHECK(slurp(fs::path(a) / "model.hnet") != slurp(fs::path(b) / "model.hnet"));
    CHECK(slurp(fs::path(a) / "train_log.jsonl").empty());
  }

  TEST_CASE("side-head training logs the side terms and evaluates") {
    const std::string t = dir("train_dsn"), e = dir("eval_dsn");
    REQUIRE(run_cli({"--seed", "2", "--out", t, "train", "--data", small_data(), "--epochs", "1", "--dsn", "on",
                 "--batch", "2"}).code == 0);
    std::istringstream log(slurp(fs::path(t) / "train_log.jsonl"));
    std::string line;
    REQUIRE(std::getline(log, line));
    const json j = json::parse(line)["train"];
    for (const char* k : {"l_kl2", "l_wl2", "l_kl4", "l_wl4"}) CHECK(j.contains(k));
    REQUIRE(run_cli({"--out", e, "eval", "--data", small_data(), "--ckpt", (fs::path(t) / "model.hnet").string()})
                .code == 0);
    const json r = read(fs::path(e) / "report.json");
    CHECK(r["method"] == "HistoNet-DSN 8");
    CHECK(r["n_images"] == 6);
    CHECK(fs::exists(fs::path(e) / "plots" / "000000.svg"));
    CHECK(slurp(fs::path(e) / "report.csv").rfind("method,MAE", 0) == 0);

    const std::string p = dir("predict_dsn");
    REQUIRE(run_cli({"--out", p, "predict", "--data", small_data(), "--ckpt", (fs::path(t) / "model.hnet").string(),
                 "--limit", "2"}).code == 0);
    const json preds = read(fs::path(p) / "predictions.json");
    REQUIRE(preds.size() == 2);
    CHECK(preds[0]["count_map_size"] == 40);
    CHECK(preds[0].contains("hist2"));
  }

  TEST_CASE("average baseline on its own training set has MAE equal to the mean absolute deviation") {
    const std::string e = dir("eval_avg");
    REQUIRE(run_cli({"--out", e, "eval", "--data", small_data(), "--baseline", "average", "--plots", "off"}).code == 0);
    const scene::Dataset ds = scene::read_dataset(small_data());
    double mean = 0.0;
    for (const scene::Scene& s : ds.scenes) mean += s.instances.size();
    mean /= ds.size();
    double mad = 0.0;
    for (const scene::Scene& s : ds.scenes) mad += std::abs(s.instances.size() - mean);
    mad /= ds.size();
    const json r = read(fs::path(e) / "report.json");
    CHECK(r["mae"].get<double>() == doctest::Approx(mad).epsilon(1e-12));
    CHECK(r["method"] == "Average model 8");
    CHECK_FALSE(fs::exists(fs::path(e) / "plots"));
  }

  TEST_CASE("data errors") {
    small_data();
    CHECK(run_cli({"--out", dir("x"), "eval", "--data", dir("missing"), "--baseline", "average"}).code != cli::kOk);
    CHECK(run_cli({"--out", dir("x"), "eval", "--data", small_data()}).code == cli::kUsage);
    CHECK(run_cli({"--out", dir("x"), "eval", "--data", small_data(), "--ckpt", dir("none.hnet")}).code ==
          cli::kData);
    const fs::path bad = kRoot / "bad.hnet";
    std::ofstream(bad) << "not a checkpoint";
    CHECK(run_cli({"--out", dir("x"), "eval", "--data", small_data(), "--ckpt", bad.string()}).code == cli::kData);
  }
}

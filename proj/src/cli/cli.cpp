#include "histonet/cli/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "histonet/cellularity/cellularity.hpp"
#include "histonet/checks/gradcheck_suite.hpp"
#include "histonet/errors.hpp"
#include "histonet/metrics/metrics.hpp"
#include "histonet/model/histonet.hpp"
#include "histonet/report/svg.hpp"
#include "histonet/scenegen/dataset_io.hpp"
#include "histonet/scenegen/generator.hpp"
#include "histonet/targets/targets.hpp"
#include "histonet/tensorkit/checkpoint.hpp"
#include "histonet/train/trainer.hpp"

namespace histonet::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Options: each command declares typed keys with defaults. A key `foo_bar`
// is the flag `--foo-bar` and the JSON field "foo_bar" in --config files and
// run.json. Precedence: command line, then --config, then the default.

enum class Kind { integer, real, optional_real, boolean, text, real_list };

struct Opt {
  std::string key;
  Kind kind;
  json fallback;
  std::string help;
};

std::string flag_name(const std::string& key) {
  std::string f = "--" + key;
  std::replace(f.begin() + 2, f.end(), '_', '-');
  return f;
}

bool parse_bool(const std::string& key, const std::string& s) {
  std::string v = s;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(flag_name(key) + ": expected on or off, got '" + s + "'");
}

double parse_real(const std::string& key, const std::string& s) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v)) {
    throw ConfigError(flag_name(key) + ": expected a number, got '" + s + "'");
  }
  return v;
}

std::int64_t parse_integer(const std::string& key, const std::string& s) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw ConfigError(flag_name(key) + ": expected an integer, got '" + s + "'");
  }
  return v;
}

json from_text(const Opt& o, const std::string& s) {
  switch (o.kind) {
    case Kind::integer: return parse_integer(o.key, s);
    case Kind::real: return parse_real(o.key, s);
    case Kind::optional_real: return s == "auto" ? json(nullptr) : json(parse_real(o.key, s));
    case Kind::boolean: return parse_bool(o.key, s);
    case Kind::text: return s;
    case Kind::real_list: {
      json list = json::array();
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ',')) list.push_back(parse_real(o.key, item));
      return list;
    }
  }
  return nullptr;
}

json from_config(const Opt& o, const json& v) {
  if (v.is_string() && o.kind != Kind::text) return from_text(o, v.get<std::string>());
  const std::string where = "config key '" + o.key + "'";
  switch (o.kind) {
    case Kind::integer:
      if (!v.is_number_integer()) throw ConfigError(where + ": expected an integer");
      return v;
    case Kind::real:
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      return v.get<double>();
    case Kind::optional_real:
      if (v.is_null()) return v;
      if (!v.is_number()) throw ConfigError(where + ": expected a number or null");
      return v.get<double>();
    case Kind::boolean:
      if (!v.is_boolean()) throw ConfigError(where + ": expected true or false");
      return v;
    case Kind::text:
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      return v;
    case Kind::real_list: {
      if (!v.is_array()) throw ConfigError(where + ": expected a list of numbers");
      json list = json::array();
      for (const json& x : v) {
        if (!x.is_number()) throw ConfigError(where + ": expected a list of numbers");
        list.push_back(x.get<double>());
      }
      return list;
    }
  }
  return nullptr;
}

struct Context {
  json options;
  std::uint64_t seed = 0;
  fs::path out;
  std::ostream& log;
  std::ostream& err;

  std::int64_t integer(const std::string& k) const { return options.at(k).get<std::int64_t>(); }
  double real(const std::string& k) const { return options.at(k).get<double>(); }
  bool flag(const std::string& k) const { return options.at(k).get<bool>(); }
  std::string text(const std::string& k) const { return options.at(k).get<std::string>(); }
  std::optional<double> maybe(const std::string& k) const {
    const json& v = options.at(k);
    return v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
  }
};

struct Command {
  std::string name;
  std::string description;
  std::vector<Opt> opts;
  std::function<int(Context&)> run;
};

// ---------------------------------------------------------------------------
// Shared helpers

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw DataError("write failed for '" + path.string() + "'");
}

json read_json(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read '" + path.string() + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_run_json(const Context& ctx, const std::string& command) {
  const json run = {{"command", command}, {"seed", ctx.seed}, {"options", ctx.options}};
  write_text(ctx.out / "run.json", run.dump(2) + "\n");
}

std::uint64_t derive(std::uint64_t seed, const char* stream) {
  return Rng::mix(seed, Rng::hash_string(stream));
}

scene::Dataset load_dataset(const std::string& dir, const char* flag) {
  if (dir.empty()) throw ConfigError(std::string(flag) + " is required");
  return scene::read_dataset(dir);
}

double resolve_s_max(const Context& ctx, const scene::Dataset& ds) {
  const double s = ctx.real("s_max");
  if (s < 0.0) throw ConfigError("--s-max must be >= 0");
  return s > 0.0 ? s : targets::default_s_max(ds.config.area);
}

int image_side(const scene::Dataset& ds) {
  if (ds.config.width != ds.config.height) {
    throw DataError("images must be square, dataset has " + std::to_string(ds.config.width) + "x" +
                    std::to_string(ds.config.height));
  }
  return ds.config.width;
}

void check_model_fits(const model::HistoNet& net, const scene::Dataset& ds, int bins) {
  if (net.config().input_size != image_side(ds)) {
    throw DataError("checkpoint expects " + std::to_string(net.config().input_size) +
                    " px images, dataset has " + std::to_string(image_side(ds)));
  }
  if (net.config().bins != bins) {
    throw DataError("checkpoint predicts " + std::to_string(net.config().bins) +
                    " bins, --bins is " + std::to_string(bins));
  }
}

std::string method_name(const model::ModelConfig& mc) {
  return std::string(mc.dsn ? "HistoNet-DSN " : "HistoNet ") + std::to_string(mc.bins);
}

// Saves via a temporary so a crash mid-write never clobbers the last good
// checkpoint.
void save_model(const model::HistoNet& net, const fs::path& path) {
  fs::path tmp = path;
  tmp += ".tmp";
  net.save(tmp);
  fs::path tmp_json = tmp, final_json = path;
  tmp_json += ".json";
  final_json += ".json";
  fs::rename(tmp_json, final_json);
  fs::rename(tmp, path);
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

const std::vector<Opt> kTrainOpts = {
    {"bins", Kind::integer, 8, "histogram bins (8 or 16)"},
    {"dsn", Kind::boolean, false, "deep supervision side heads (on/off)"},
    {"epochs", Kind::integer, 10, "training epochs"},
    {"steps", Kind::integer, 0, "if > 0, train for exactly this many steps"},
    {"batch", Kind::integer, 4, "images per step"},
    {"lr", Kind::real, 1e-3, "Adam learning rate"},
    {"lr_final", Kind::real, 0.1, "final learning rate as a fraction of --lr (cosine decay)"},
    {"augment", Kind::boolean, true, "flips, rotations, noise and contrast (on/off)"},
    {"receptive_field", Kind::integer, 9, "count-map receptive field r (odd)"},
    {"s_max", Kind::real, 0.0, "largest binned area in px; 0 derives it from the dataset"},
};

std::vector<Opt> with(std::vector<Opt> head, const std::vector<Opt>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

model::ModelConfig model_config(const Context& ctx, const scene::Dataset& ds) {
  model::ModelConfig mc;
  mc.input_size = image_side(ds);
  mc.receptive_field = static_cast<int>(ctx.integer("receptive_field"));
  mc.bins = static_cast<int>(ctx.integer("bins"));
  mc.dsn = ctx.flag("dsn");
  model::validate(mc);
  return mc;
}

train::TrainConfig train_config(const Context& ctx) {
  train::TrainConfig tc;
  tc.epochs = static_cast<int>(ctx.integer("epochs"));
  tc.steps = static_cast<int>(ctx.integer("steps"));
  tc.batch = static_cast<int>(ctx.integer("batch"));
  tc.lr = ctx.real("lr");
  tc.lr_final = ctx.real("lr_final");
  tc.augment = ctx.flag("augment");
  tc.seed = derive(ctx.seed, "train");
  return tc;
}

template <class T>
std::vector<T> pick(const std::vector<T>& all, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

std::vector<metrics::Prediction> truths_of(const scene::Dataset& ds, double s_max, int bins) {
  std::vector<metrics::Prediction> t;
  t.reserve(ds.size());
  for (const scene::Scene& s : ds.scenes) t.push_back(metrics::truth(s, s_max, bins));
  return t;
}

std::vector<metrics::Prediction> predict_all(const model::HistoNet& net, const scene::Dataset& ds) {
  std::vector<metrics::Prediction> p;
  p.reserve(ds.size());
  for (const scene::Image& im : ds.images) p.push_back(metrics::predict(net, im));
  return p;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen(Context& ctx) {
  const std::int64_t n = ctx.integer("n");
  if (n < 0) throw ConfigError("--n must be >= 0");
  scene::GenConfig gc = scene::desk_config(static_cast<int>(ctx.integer("size")));
  auto set = [&](const char* key, double& field) {
    if (auto v = ctx.maybe(key)) field = *v;
    ctx.options[key] = field;
  };
  set("count_mean", gc.count.mean);
  set("count_std", gc.count.stddev);
  set("area_mean", gc.area.mean);
  set("area_std", gc.area.stddev);
  scene::validate(gc);
  const scene::Dataset ds = scene::generate_dataset(gc, static_cast<std::size_t>(n), ctx.seed);
  scene::write_dataset(ctx.out, ds);
  write_run_json(ctx, "gen");
  std::size_t objects = 0;
  for (const scene::Scene& s : ds.scenes) objects += s.instances.size();
  ctx.log << "wrote " << n << " scenes (" << objects << " objects) to " << ctx.out.string() << "\n";
  return kOk;
}

int cmd_train(Context& ctx) {
  const scene::Dataset ds = load_dataset(ctx.text("data"), "--data");
  if (ds.size() == 0) throw DataError("training dataset is empty");
  const double s_max = resolve_s_max(ctx, ds);
  const model::ModelConfig mc = model_config(ctx, ds);
  const train::TrainConfig tc = train_config(ctx);
  const double val_frac = ctx.real("val_frac");
  if (!(val_frac >= 0.0 && val_frac < 1.0)) throw ConfigError("--val-frac must be in [0, 1)");

  const auto [train_idx, val_idx] = train::split_validation(ds.size(), val_frac);
  if (train_idx.empty()) throw DataError("no training scenes left after the validation split");
  const std::vector<scene::Scene> tr_scenes = pick(ds.scenes, train_idx);
  const std::vector<scene::Image> tr_images = pick(ds.images, train_idx);
  const std::vector<scene::Scene> va_scenes = pick(ds.scenes, val_idx);
  const std::vector<scene::Image> va_images = pick(ds.images, val_idx);
  const train::TrainSet train_set{tr_scenes, tr_images, s_max};
  const train::TrainSet val_set{va_scenes, va_images, s_max};

  fs::create_directories(ctx.out);
  write_run_json(ctx, "train");
  model::HistoNet net(mc, derive(ctx.seed, "model"));
  const fs::path ckpt = ctx.out / "model.hnet";
  save_model(net, ckpt);
  std::ofstream log_file(ctx.out / "train_log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log_file) throw DataError("cannot write '" + (ctx.out / "train_log.jsonl").string() + "'");

  ctx.log << method_name(mc) << ": " << net.parameter_count() << " parameters, "
          << train_idx.size() << " train / " << val_idx.size() << " validation scenes\n";
  try {
    train::Trainer(tc).fit(net, train_set, val_idx.empty() ? nullptr : &val_set,
                           [&](const train::EpochLog& e) {
                             log_file << e.to_json().dump() << "\n" << std::flush;
                             save_model(net, ckpt);
                             ctx.log << "epoch " << e.epoch << "  steps " << e.steps << "  l_total "
                                     << fixed(e.train.l_total);
                             if (e.val) ctx.log << "  val l_total " << fixed(e.val->l_total);
                             ctx.log << "\n" << std::flush;
                           });
  } catch (const NumericError&) {
    ctx.err << "training diverged; last good checkpoint kept at " << ckpt.string() << "\n";
    throw;
  }
  ctx.log << "checkpoint: " << ckpt.string() << "\n";
  return kOk;
}

void write_report(const fs::path& dir, const std::string& method, const metrics::MetricReport& r) {
  json j = r.to_json();
  j["method"] = method;
  write_text(dir / "report.json", j.dump(2) + "\n");
  write_text(dir / "report.csv", metrics::MetricReport::csv_header() + "\n" + r.csv_row(method) + "\n");
}

std::string plot_title(std::size_t i, double truth_count, double pred_count) {
  return "image " + scene::index_name(i) + ": count " + fixed(truth_count, 0) + ", predicted " +
         fixed(pred_count, 1);
}

int cmd_eval(Context& ctx) {
  const scene::Dataset ds = load_dataset(ctx.text("data"), "--data");
  if (ds.size() == 0) throw DataError("evaluation dataset is empty");
  const int bins = static_cast<int>(ctx.integer("bins"));
  if (bins != 8 && bins != 16) throw ConfigError("--bins must be 8 or 16");
  const double s_max = resolve_s_max(ctx, ds);
  const std::string ckpt = ctx.text("ckpt");
  const std::string baseline = ctx.text("baseline");
  if (ckpt.empty() == baseline.empty()) throw ConfigError("give exactly one of --ckpt and --baseline");

  const std::vector<metrics::Prediction> truths = truths_of(ds, s_max, bins);
  std::vector<metrics::Prediction> preds;
  std::string method;
  json extra;
  if (!ckpt.empty()) {
    const model::HistoNet net = model::HistoNet::load(ckpt);
    check_model_fits(net, ds, bins);
    preds = predict_all(net, ds);
    method = method_name(net.config());
  } else {
    if (baseline != "average") throw ConfigError("unknown baseline '" + baseline + "'");
    const std::string train_dir = ctx.text("train_data");
    std::vector<metrics::Prediction> fit_on;
    if (train_dir.empty()) {
      fit_on = truths;
    } else {
      const scene::Dataset tr = scene::read_dataset(train_dir);
      if (tr.size() == 0) throw DataError("baseline training dataset is empty");
      fit_on = truths_of(tr, s_max, bins);
    }
    const metrics::AverageModel avg = metrics::fit_average_model(fit_on);
    preds.assign(ds.size(), avg.predict());
    method = "Average model " + std::to_string(bins);
    extra = avg.to_json();
  }
  if (!ctx.text("method").empty()) method = ctx.text("method");

  const std::vector<double> edges = targets::bin_edges(s_max, bins);
  const metrics::MetricReport report = metrics::evaluate(preds, truths, targets::bin_weights(edges));
  fs::create_directories(ctx.out);
  write_run_json(ctx, "eval");
  write_report(ctx.out, method, report);
  if (!extra.is_null()) write_text(ctx.out / "baseline.json", extra.dump(2) + "\n");
  if (ctx.flag("plots")) {
    for (std::size_t i = 0; i < ds.size(); ++i) {
      write_text(ctx.out / "plots" / (scene::index_name(i) + ".svg"),
                 report::histogram_svg(plot_title(i, truths[i].count, preds[i].count),
                                       truths[i].hist, preds[i].hist, edges));
    }
  }
  ctx.log << metrics::MetricReport::csv_header() << "\n" << report.csv_row(method) << "\n";
  return kOk;
}

int cmd_predict(Context& ctx) {
  const scene::Dataset ds = load_dataset(ctx.text("data"), "--data");
  if (ctx.text("ckpt").empty()) throw ConfigError("--ckpt is required");
  const model::HistoNet net = model::HistoNet::load(ctx.text("ckpt"));
  check_model_fits(net, ds, net.config().bins);
  const std::int64_t limit = ctx.integer("limit");
  if (limit < 0) throw ConfigError("--limit must be >= 0");
  const std::size_t n = limit == 0 ? ds.size() : std::min<std::size_t>(ds.size(), limit);
  const model::ModelConfig& mc = net.config();
  const double s_max = resolve_s_max(ctx, ds);
  const std::vector<double> edges = targets::bin_edges(s_max, mc.bins);
  const std::vector<double> weights = targets::bin_weights(edges);

  fs::create_directories(ctx.out);
  write_run_json(ctx, "predict");
  json all = json::array();
  Rng unused(0);
  for (std::size_t i = 0; i < n; ++i) {
    tk::Graph g;
    const model::ModelOutput o = net.forward(g, ds.images[i], false, unused);
    const std::vector<double> map(o.count_map.values().begin(), o.count_map.values().end());
    const std::vector<double> hist(o.hist.values().begin(), o.hist.values().end());
    const metrics::Prediction truth = metrics::truth(ds.scenes[i], s_max, mc.bins);
    const double count = targets::count_from_map(map, mc.receptive_field);
    json j = {{"image", scene::index_name(i)},
              {"count", count},
              {"hist", hist},
              {"true_count", truth.count},
              {"true_hist", truth.hist},
              {"wt_l1", metrics::wt_l1(hist, truth.hist, weights)},
              {"count_map_size", mc.map_size()},
              {"count_map", map}};
    if (o.hist2) j["hist2"] = std::vector<double>(o.hist2->values().begin(), o.hist2->values().end());
    if (o.hist4) j["hist4"] = std::vector<double>(o.hist4->values().begin(), o.hist4->values().end());
    all.push_back(std::move(j));
    write_text(ctx.out / "plots" / (scene::index_name(i) + ".svg"),
               report::histogram_svg(plot_title(i, truth.count, count), truth.hist, hist, edges));
  }
  write_text(ctx.out / "predictions.json", all.dump(1) + "\n");
  ctx.log << "predicted " << n << " images\n";
  return kOk;
}

int cmd_ablate(Context& ctx) {
  const scene::Dataset ds = load_dataset(ctx.text("data"), "--data");
  const scene::Dataset test = load_dataset(ctx.text("test_data"), "--test-data");
  if (ds.size() == 0 || test.size() == 0) throw DataError("ablation datasets must be nonempty");
  std::vector<double> fractions = ctx.options.at("fractions").get<std::vector<double>>();
  if (fractions.empty()) throw ConfigError("--fractions is empty");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("fraction " + fixed(f) + " outside (0, 1]");
  }
  const double s_max = resolve_s_max(ctx, ds);
  const model::ModelConfig mc = model_config(ctx, ds);
  const train::TrainConfig tc = train_config(ctx);
  const std::vector<metrics::Prediction> truths = truths_of(test, s_max, mc.bins);
  const std::vector<double> weights = targets::bin_weights(targets::bin_edges(s_max, mc.bins));

  fs::create_directories(ctx.out);
  write_run_json(ctx, "ablate");
  std::string csv = "fraction,n_train," + metrics::MetricReport::csv_header().substr(7) + "\n";
  json runs = json::array();
  report::Series mae{"MAE", {}, {}}, kld{"kld", {}, {}};
  for (double f : fractions) {
    const std::vector<std::size_t> idx = train::nested_subset(ds.size(), f, derive(ctx.seed, "subset"));
    if (idx.empty()) throw DataError("fraction " + fixed(f) + " selects no scenes");
    const std::vector<scene::Scene> scenes = pick(ds.scenes, idx);
    const std::vector<scene::Image> images = pick(ds.images, idx);
    model::HistoNet net(mc, derive(ctx.seed, "model"));
    ctx.log << "fraction " << fixed(f, 2) << ": " << idx.size() << " scenes\n" << std::flush;
    train::Trainer(tc).fit(net, {scenes, images, s_max});
    const metrics::MetricReport r = metrics::evaluate(predict_all(net, test), truths, weights);
    const std::string row = r.csv_row(fixed(f, 4));
    csv += row.substr(0, row.find(',')) + "," + std::to_string(idx.size()) +
           row.substr(row.find(',')) + "\n";
    json j = r.to_json();
    j["fraction"] = f;
    j["n_train"] = idx.size();
    runs.push_back(std::move(j));
    mae.x.push_back(f);
    mae.y.push_back(r.mae);
    kld.x.push_back(f);
    kld.y.push_back(r.kld);
    ctx.log << "  MAE " << fixed(r.mae) << "  kld " << fixed(r.kld) << "\n" << std::flush;
  }
  write_text(ctx.out / "ablation.csv", csv);
  write_text(ctx.out / "ablation.json", runs.dump(2) + "\n");
  write_text(ctx.out / "ablation_mae.svg",
             report::line_plot_svg("Count error vs training data", "training fraction",
                                   "mean absolute count error", std::span(&mae, 1)));
  write_text(ctx.out / "ablation_kld.svg",
             report::line_plot_svg("KL divergence vs training data", "training fraction",
                                   "KL divergence", std::span(&kld, 1)));
  return kOk;
}

int cmd_gradcheck(Context& ctx) {
  const double tol = ctx.real("tolerance");
  if (!(tol > 0.0)) throw ConfigError("--tolerance must be positive");
  const std::vector<checks::GradcheckEntry> entries = checks::run_gradcheck_suite(tol, ctx.seed);
  json j = json::array();
  int failed = 0;
  for (const checks::GradcheckEntry& e : entries) {
    char line[256];
    std::snprintf(line, sizeof line, "%-52s %10.3e  %s\n", e.name.c_str(), e.max_rel_error,
                  e.passed ? "ok" : "FAIL");
    ctx.log << line;
    failed += e.passed ? 0 : 1;
    j.push_back({{"name", e.name},
                 {"max_rel_error", e.max_rel_error},
                 {"analytic", e.analytic},
                 {"numeric", e.numeric},
                 {"passed", e.passed}});
  }
  fs::create_directories(ctx.out);
  write_run_json(ctx, "gradcheck");
  write_text(ctx.out / "gradcheck.json", j.dump(2) + "\n");
  ctx.log << entries.size() << " checks, " << failed << " failed\n";
  return failed == 0 ? kOk : kNumeric;
}

int cmd_cellularity(Context& ctx) {
  const scene::Dataset test = load_dataset(ctx.text("test_data"), "--test-data");
  if (test.size() < 2) throw DataError("cellularity test set needs at least two scenes");
  cellularity::StagePlan plan;
  fs::path base;
  if (!ctx.text("plan").empty()) {
    const fs::path plan_path = ctx.text("plan");
    try {
      plan = cellularity::StagePlan::from_json(read_json(plan_path));
    } catch (const json::exception& e) {
      throw ConfigError(plan_path.string() + ": " + e.what());
    }
    base = plan_path.parent_path();
  } else {
    if (ctx.text("data").empty()) throw ConfigError("give --plan or --data");
    plan = cellularity::default_plan(ctx.text("data"), static_cast<int>(ctx.integer("epochs1")),
                                     static_cast<int>(ctx.integer("epochs2")),
                                     static_cast<int>(ctx.integer("epochs3")));
  }
  if (plan.stages.empty()) throw ConfigError("stage plan is empty");

  std::map<std::string, scene::Dataset> cache;
  std::vector<scene::Dataset> datasets;
  for (const cellularity::Stage& s : plan.stages) {
    const fs::path dir = fs::path(s.dataset_dir).is_absolute() ? fs::path(s.dataset_dir)
                                                                 : base / s.dataset_dir;
    auto it = cache.find(dir.string());
    if (it == cache.end()) it = cache.emplace(dir.string(), scene::read_dataset(dir)).first;
    datasets.push_back(it->second);
  }
  const scene::Dataset& first = datasets.front();
  model::ModelConfig mc = model_config(ctx, first);
  const double s_max = resolve_s_max(ctx, first);
  model::HistoNet net(mc, derive(ctx.seed, "model"));
  cellularity::ScoreHead head({.inputs = mc.bins + 1}, derive(ctx.seed, "head"));
  cellularity::StageOptions so;
  so.lr = ctx.real("lr");
  so.batch = static_cast<int>(ctx.integer("batch"));
  so.augment = ctx.flag("augment");
  so.s_max = s_max;
  so.a_ref = ctx.real("a_ref");
  so.seed = derive(ctx.seed, "stages");

  fs::create_directories(ctx.out);
  write_run_json(ctx, "cellularity");
  write_text(ctx.out / "plan.json", plan.to_json().dump(2) + "\n");
  std::ofstream log_file(ctx.out / "stage_log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log_file) throw DataError("cannot write '" + (ctx.out / "stage_log.jsonl").string() + "'");
  // Stages run one at a time so every stage boundary leaves a checkpoint.
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const cellularity::Stage& stage = plan.stages[s];
    cellularity::StagePlan one{{stage}};
    cellularity::run_stages(one, std::span(&datasets[s], 1), net, head, so,
                            [&](const cellularity::StageLog& l) {
                              log_file << l.to_json().dump() << "\n" << std::flush;
                              ctx.log << "stage " << l.stage << " ("
                                      << cellularity::to_string(l.trainable) << ") epoch " << l.epoch
                                      << "  loss " << fixed(l.loss) << "\n" << std::flush;
                            });
    save_model(net, ctx.out / ("stage" + std::to_string(stage.stage) + ".hnet"));
    tk::write_checkpoint(ctx.out / ("stage" + std::to_string(stage.stage) + "_head.hnet"),
                         head.state());
  }
  save_model(net, ctx.out / "model.hnet");
  tk::write_checkpoint(ctx.out / "head.hnet", head.state());

  std::vector<double> pred, truth;
  for (std::size_t i = 0; i < test.size(); ++i) {
    pred.push_back(head.score(cellularity::head_features(net, test.images[i])));
    const double a_ref = so.a_ref > 0.0 ? so.a_ref : cellularity::default_a_ref(test.scenes[i]);
    truth.push_back(cellularity::synth_score(test.scenes[i], a_ref));
  }
  const json result = {{"n_test", test.size()},
                       {"spearman", cellularity::spearman(pred, truth)},
                       {"concordance", cellularity::concordance(pred, truth)},
                       {"predicted", pred},
                       {"truth", truth}};
  write_text(ctx.out / "cellularity.json", result.dump(2) + "\n");
  ctx.log << "spearman " << fixed(result["spearman"].get<double>()) << "  concordance "
          << fixed(result["concordance"].get<double>()) << "\n";
  return kOk;
}

std::vector<Command> commands() {
  return {
      {"gen",
       "generate a synthetic ellipse dataset",
       {{"n", Kind::integer, 100, "number of scenes"},
        {"size", Kind::integer, 64, "image side in px"},
        {"count_mean", Kind::optional_real, nullptr, "objects per scene, mean (auto: scaled default)"},
        {"count_std", Kind::optional_real, nullptr, "objects per scene, std"},
        {"area_mean", Kind::optional_real, nullptr, "object area in px, mean"},
        {"area_std", Kind::optional_real, nullptr, "object area in px, std"}},
       cmd_gen},
      {"train",
       "train a model; writes model.hnet and train_log.jsonl",
       with({{"data", Kind::text, "", "training dataset directory"},
             {"val_frac", Kind::real, 0.0, "fraction held out for validation loss"}},
            kTrainOpts),
       cmd_train},
      {"eval",
       "evaluate a checkpoint or baseline; writes report.json, report.csv, plots/",
       {{"data", Kind::text, "", "test dataset directory"},
        {"ckpt", Kind::text, "", "model checkpoint"},
        {"baseline", Kind::text, "", "baseline name (average)"},
        {"train_data", Kind::text, "", "dataset the baseline is fitted on (default: --data)"},
        {"bins", Kind::integer, 8, "histogram bins (8 or 16)"},
        {"s_max", Kind::real, 0.0, "largest binned area in px; 0 derives it from the dataset"},
        {"method", Kind::text, "", "method name in the report (default: derived)"},
        {"plots", Kind::boolean, true, "write one SVG per image (on/off)"}},
       cmd_eval},
      {"predict",
       "run a checkpoint on dataset images; writes predictions.json and plots/",
       {{"data", Kind::text, "", "dataset directory"},
        {"ckpt", Kind::text, "", "model checkpoint"},
        {"limit", Kind::integer, 0, "predict only the first N images (0: all)"},
        {"s_max", Kind::real, 0.0, "largest binned area in px; 0 derives it from the dataset"}},
       cmd_predict},
      {"ablate",
       "train on nested subsets of the data; writes ablation.csv and plots",
       with({{"data", Kind::text, "", "training dataset directory"},
             {"test_data", Kind::text, "", "test dataset directory"},
             {"fractions", Kind::real_list, json::array({0.25, 0.5, 0.75, 1.0}),
              "comma-separated training fractions"}},
            kTrainOpts),
       cmd_ablate},
      {"gradcheck",
       "finite-difference check of every op, loss and the tiny model",
       {{"tolerance", Kind::real, 1e-4, "maximum relative error"}},
       cmd_gradcheck},
      {"cellularity",
       "staged training plus score head; writes spearman and concordance",
       {{"plan", Kind::text, "", "stage plan JSON (default: three stages on --data)"},
        {"data", Kind::text, "", "dataset for the default plan"},
        {"test_data", Kind::text, "", "held-out dataset for scoring"},
        {"epochs1", Kind::integer, 3, "default plan: count-branch epochs"},
        {"epochs2", Kind::integer, 3, "default plan: full-model epochs"},
        {"epochs3", Kind::integer, 30, "default plan: score-head epochs"},
        {"bins", Kind::integer, 8, "histogram bins (8 or 16)"},
        {"dsn", Kind::boolean, false, "deep supervision side heads (on/off)"},
        {"receptive_field", Kind::integer, 9, "count-map receptive field r (odd)"},
        {"lr", Kind::real, 1e-3, "Adam learning rate"},
        {"batch", Kind::integer, 4, "images per step"},
        {"augment", Kind::boolean, true, "augmentation in stages 1 and 2 (on/off)"},
        {"a_ref", Kind::real, 0.0, "reference area of score 1; 0 uses half the image"},
        {"s_max", Kind::real, 0.0, "largest binned area in px; 0 derives it from the dataset"}},
       cmd_cellularity},
  };
}

std::string type_name(Kind kind) {
  switch (kind) {
    case Kind::integer: return "INT";
    case Kind::real: return "REAL";
    case Kind::optional_real: return "REAL|auto";
    case Kind::boolean: return "on|off";
    case Kind::text: return "TEXT";
    case Kind::real_list: return "REAL,...";
  }
  return "TEXT";
}

json resolve(const Command& cmd, const json& config, const std::map<std::string, std::string>& given) {
  json resolved = json::object();
  for (const Opt& o : cmd.opts) {
    json v = o.fallback;
    if (config.contains(o.key)) v = from_config(o, config.at(o.key));
    if (auto it = given.find(o.key); it != given.end()) v = from_text(o, it->second);
    resolved[o.key] = v;
  }
  for (const auto& [key, value] : config.items()) {
    if (key == "seed") continue;
    const bool known = std::any_of(cmd.opts.begin(), cmd.opts.end(),
                                   [&](const Opt& o) { return o.key == key; });
    if (!known) throw ConfigError("config key '" + key + "' is not an option of '" + cmd.name + "'");
  }
  return resolved;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"HistoNet desk lab: synthetic data, training, evaluation and reports", "histonet"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 0;
  std::string out_dir = "histonet_out";
  std::string config_path;
  CLI::Option* seed_opt = app.add_option("--seed", seed, "master seed (64-bit)");
  CLI::Option* out_opt = app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--config", config_path, "JSON file of option overrides");

  const std::vector<Command> cmds = commands();
  std::map<std::string, std::map<std::string, std::string>> storage;
  std::map<std::string, std::map<std::string, CLI::Option*>> flags;
  std::map<std::string, CLI::App*> subs;
  for (const Command& c : cmds) {
    CLI::App* sub = app.add_subcommand(c.name, c.description);
    subs[c.name] = sub;
    for (const Opt& o : c.opts) {
      std::string help = o.help;
      if (!o.fallback.is_null() && !(o.fallback.is_string() && o.fallback.get<std::string>().empty())) {
        help += " [" + (o.kind == Kind::boolean ? std::string(o.fallback.get<bool>() ? "on" : "off")
                                                : o.fallback.dump()) + "]";
      }
      flags[c.name][o.key] =
          sub->add_option(flag_name(o.key), storage[c.name][o.key], help)->type_name(type_name(o.kind));
    }
  }
  std::string replay_path;
  CLI::App* replay = app.add_subcommand("replay", "re-run the command recorded in a run.json");
  replay->add_option("run_json", replay_path, "path to run.json")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const std::vector<CLI::App*> active = app.get_subcommands();
    err << (active.empty() ? app.help() : active.back()->help());
    return kUsage;
  }

  const Command* cmd = nullptr;
  json config = json::object();
  std::map<std::string, std::string> given;
  fs::path out_path = out_dir;
  if (replay->parsed()) {
    const json run = read_json(replay_path);
    const std::string name = run.at("command").get<std::string>();
    for (const Command& c : cmds) {
      if (c.name == name) cmd = &c;
    }
    if (!cmd) throw ConfigError(replay_path + ": unknown command '" + name + "'");
    config = run.at("options");
    if (!seed_opt->count()) seed = run.at("seed").get<std::uint64_t>();
    if (!out_opt->count()) out_path = fs::path(replay_path).parent_path() / "replay";
  } else {
    for (const Command& c : cmds) {
      if (subs[c.name]->parsed()) cmd = &c;
    }
    if (!config_path.empty()) {
      config = read_json(config_path);
      if (!config.is_object()) throw ConfigError(config_path + ": expected a JSON object");
      if (config.contains("seed") && !seed_opt->count()) {
        if (!config["seed"].is_number_unsigned()) throw ConfigError("config key 'seed': expected an unsigned integer");
        seed = config["seed"].get<std::uint64_t>();
      }
    }
    for (const auto& [key, opt] : flags[cmd->name]) {
      if (opt->count()) given[key] = storage[cmd->name][key];
    }
  }
  Context ctx{resolve(*cmd, config, given), seed, out_path, out, err};
  return cmd->run(ctx);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
}

}  // namespace histonet::cli

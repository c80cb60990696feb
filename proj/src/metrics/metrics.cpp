#include "histonet/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "histonet/errors.hpp"
#include "histonet/losses/losses.hpp"
#include "histonet/targets/targets.hpp"

namespace histonet::metrics {

namespace {

void check_pair(std::span<const double> p, std::span<const double> t, const char* what) {
  if (p.size() != t.size()) {
    throw DimensionError(std::string(what) + ": length mismatch (" + std::to_string(p.size()) +
                         " vs " + std::to_string(t.size()) + ")");
  }
  for (std::span<const double> h : {p, t}) {
    for (double v : h) {
      if (v < 0.0) throw DataError(std::string(what) + ": negative bin value");
    }
  }
}

double sum(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double mae(std::span<const double> pred_counts, std::span<const double> true_counts) {
  if (pred_counts.size() != true_counts.size()) {
    throw DimensionError("mae: length mismatch");
  }
  if (pred_counts.empty()) throw DataError("mae: no images");
  double s = 0.0;
  for (std::size_t i = 0; i < pred_counts.size(); ++i) {
    s += std::abs(pred_counts[i] - true_counts[i]);
  }
  return s / static_cast<double>(pred_counts.size());
}

double isec(std::span<const double> p, std::span<const double> t) {
  check_pair(p, t, "isec");
  const double denom = std::max(sum(p), sum(t));
  if (denom == 0.0) return 1.0;
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::min(p[i], t[i]);
  return s / denom;
}

double corr(std::span<const double> p, std::span<const double> t) {
  if (p.size() != t.size()) throw DimensionError("corr: length mismatch");
  if (p.size() < 2) throw DimensionError("corr: needs at least two bins");
  const double n = static_cast<double>(p.size());
  const double mp = sum(p) / n, mt = sum(t) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double dp = p[i] - mp, dt = t[i] - mt;
    sxy += dp * dt;
    sxx += dp * dp;
    syy += dt * dt;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double chi2(std::span<const double> p, std::span<const double> t) {
  check_pair(p, t, "chi2");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = p[i] + t[i];
    if (d > 0.0) s += (p[i] - t[i]) * (p[i] - t[i]) / d;
  }
  return s;
}

double bhatt(std::span<const double> p, std::span<const double> t) {
  check_pair(p, t, "bhatt");
  const std::vector<double> pn = losses::normalize_histogram(p);
  const std::vector<double> tn = losses::normalize_histogram(t);
  // 1 - BC written as half the squared distance of square roots, which is
  // exactly zero at self-comparison.
  double d = 0.0;
  for (std::size_t i = 0; i < pn.size(); ++i) {
    const double e = std::sqrt(pn[i]) - std::sqrt(tn[i]);
    d += e * e;
  }
  return std::sqrt(std::min(1.0, 0.5 * d));
}

double kld(std::span<const double> p, std::span<const double> t) {
  return losses::kl_divergence(p, t);
}

double wt_l1(std::span<const double> p, std::span<const double> t, std::span<const double> w) {
  return losses::weighted_l1(p, t, w);
}

Prediction truth(const scene::Scene& scene, double s_max, int bins) {
  const targets::BinLadder ladder = targets::build_histograms(scene, s_max);
  return {static_cast<double>(scene.instances.size()), ladder.level(bins)};
}

Prediction predict(const model::HistoNet& net, const scene::Image& image) {
  tk::Graph g;
  Rng unused(0);
  const model::ModelOutput out = net.forward(g, image, false, unused);
  const std::span<const double> hist = out.hist.values();
  return {targets::count_from_map(out.count_map.values(), net.config().receptive_field),
          std::vector<double>(hist.begin(), hist.end())};
}

nlohmann::json MetricReport::to_json() const {
  return {{"mae", mae},   {"kld", kld},   {"wt_l1", wt_l1},   {"isec", isec},
          {"chi2", chi2}, {"corr", corr}, {"bhatt", bhatt}, {"n_images", n_images}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  r.mae = j.at("mae").get<double>();
  r.kld = j.at("kld").get<double>();
  r.wt_l1 = j.at("wt_l1").get<double>();
  r.isec = j.at("isec").get<double>();
  r.chi2 = j.at("chi2").get<double>();
  r.corr = j.at("corr").get<double>();
  r.bhatt = j.at("bhatt").get<double>();
  r.n_images = j.at("n_images").get<int>();
  return r;
}

std::string MetricReport::csv_header() { return "method,MAE,kld,wt_L1,isec,chi2,corr,bhatt"; }

std::string MetricReport::csv_row(const std::string& method) const {
  return method + "," + fixed(mae) + "," + fixed(kld) + "," + fixed(wt_l1) + "," + fixed(isec) +
         "," + fixed(chi2) + "," + fixed(corr) + "," + fixed(bhatt);
}

ImageMetrics compare(const Prediction& pred, const Prediction& t, std::span<const double> weights) {
  if (pred.hist.size() != t.hist.size() || weights.size() != t.hist.size()) {
    throw DimensionError("evaluate: prediction has " + std::to_string(pred.hist.size()) +
                         " bins, target ladder " + std::to_string(t.hist.size()) + ", weights " +
                         std::to_string(weights.size()));
  }
  ImageMetrics m;
  m.abs_error = std::abs(pred.count - t.count);
  m.kld = kld(pred.hist, t.hist);
  m.wt_l1 = wt_l1(pred.hist, t.hist, weights);
  m.isec = isec(pred.hist, t.hist);
  m.chi2 = chi2(pred.hist, t.hist);
  m.corr = corr(pred.hist, t.hist);
  m.bhatt = bhatt(pred.hist, t.hist);
  return m;
}

MetricReport evaluate(std::span<const Prediction> preds, std::span<const Prediction> truths,
                      std::span<const double> weights) {
  if (preds.size() != truths.size()) {
    throw DimensionError("evaluate: " + std::to_string(preds.size()) + " predictions for " +
                         std::to_string(truths.size()) + " images");
  }
  if (preds.empty()) throw DataError("evaluate: empty dataset");
  MetricReport r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const ImageMetrics m = compare(preds[i], truths[i], weights);
    r.mae += m.abs_error;
    r.kld += m.kld;
    r.wt_l1 += m.wt_l1;
    r.isec += m.isec;
    r.chi2 += m.chi2;
    r.corr += m.corr;
    r.bhatt += m.bhatt;
  }
  const double n = static_cast<double>(preds.size());
  r.mae /= n;
  r.kld /= n;
  r.wt_l1 /= n;
  r.isec /= n;
  r.chi2 /= n;
  r.corr /= n;
  r.bhatt /= n;
  r.n_images = static_cast<int>(preds.size());
  return r;
}

nlohmann::json AverageModel::to_json() const {
  return {{"mean_count", mean_count}, {"mean_hist", mean_hist}};
}

AverageModel fit_average_model(std::span<const Prediction> train_truths) {
  if (train_truths.empty()) throw DataError("fit_average_model: empty training set");
  AverageModel m;
  m.mean_hist.assign(train_truths.front().hist.size(), 0.0);
  for (const Prediction& t : train_truths) {
    if (t.hist.size() != m.mean_hist.size()) {
      throw DimensionError("fit_average_model: inconsistent histogram lengths");
    }
    m.mean_count += t.count;
    for (std::size_t i = 0; i < t.hist.size(); ++i) m.mean_hist[i] += t.hist[i];
  }
  const double n = static_cast<double>(train_truths.size());
  m.mean_count /= n;
  for (double& v : m.mean_hist) v /= n;
  return m;
}

}  // namespace histonet::metrics

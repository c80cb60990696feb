#include "histonet/losses/losses.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "histonet/errors.hpp"
#include "histonet/targets/targets.hpp"
#include "histonet/tensorkit/ops.hpp"

namespace histonet::losses {

using tk::Graph;
using tk::Tensor;

namespace {

void require_nonnegative(std::span<const double> h, const char* what) {
  for (double v : h) {
    if (v < 0.0) {
      throw DataError(std::string(what) + ": negative bin value");
    }
  }
}

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

std::vector<double> smoothed(std::span<const double> p, double eps) {
  const double denom = 1.0 + static_cast<double>(p.size()) * eps;
  std::vector<double> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = (p[i] + eps) / denom;
  return out;
}

}  // namespace

std::vector<double> normalize_histogram(std::span<const double> hist) {
  require_nonnegative(hist, "normalize_histogram");
  double total = 0.0;
  for (double v : hist) total += v;
  std::vector<double> p(hist.size());
  for (std::size_t i = 0; i < hist.size(); ++i) {
    p[i] = total > 0.0 ? hist[i] / total : 1.0 / static_cast<double>(hist.size());
  }
  return p;
}

double kl_divergence(std::span<const double> pred, std::span<const double> target, double eps) {
  require_same_length(pred.size(), target.size(), "kl_divergence");
  const std::vector<double> q = smoothed(normalize_histogram(pred), eps);
  const std::vector<double> p = smoothed(normalize_histogram(target), eps);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

double weighted_l1(std::span<const double> pred, std::span<const double> target,
                   std::span<const double> weights) {
  require_same_length(pred.size(), target.size(), "weighted_l1");
  require_same_length(pred.size(), weights.size(), "weighted_l1 weights");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s += weights[i] * std::abs(pred[i] - target[i]);
  }
  return s;
}

Tensor loss_count(Graph& g, const Tensor& pred_map, const Tensor& target_map) {
  if (pred_map.shape() != target_map.shape()) {
    throw DimensionError("loss_count: prediction " + tk::shape_string(pred_map.shape()) +
                         " vs target " + tk::shape_string(target_map.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < pred_map.size(); ++i) {
    s += std::abs(pred_map[i] - target_map[i]);
  }
  Tensor out = Tensor::scalar(s);
  if (pred_map.requires_grad()) {
    g.record({pred_map}, out, [p = pred_map, t = target_map, out]() mutable {
      const double go = std::as_const(out).grad()[0];
      auto gp = p.grad();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go * sign(p[i] - t[i]);
    });
  }
  return out;
}

Tensor loss_kl(Graph& g, const Tensor& pred_hist, const Tensor& target_hist, double eps) {
  require_same_length(pred_hist.size(), target_hist.size(), "loss_kl");
  Tensor out = Tensor::scalar(kl_divergence(pred_hist.values(), target_hist.values(), eps));
  if (pred_hist.requires_grad()) {
    g.record({pred_hist}, out, [p = pred_hist, t = target_hist, out, eps]() mutable {
      const std::size_t n = p.size();
      double total = 0.0;
      for (double v : p.values()) total += v;
      if (!(total > 0.0)) {
        return;  // uniform fallback is locally constant
      }
      const double go = std::as_const(out).grad()[0];
      const std::vector<double> pn = normalize_histogram(p.values());
      const std::vector<double> ps = smoothed(pn, eps);
      const std::vector<double> ts = smoothed(normalize_histogram(t.values()), eps);
      double shared = 0.0;
      for (std::size_t j = 0; j < n; ++j) shared += ts[j] * pn[j] / ps[j];
      const double scale = go / ((1.0 + static_cast<double>(n) * eps) * total);
      auto gp = p.grad();
      for (std::size_t i = 0; i < n; ++i) {
        gp[i] += scale * (shared - ts[i] / ps[i]);
      }
    });
  }
  return out;
}

Tensor loss_weighted_l1(Graph& g, const Tensor& pred_hist, const Tensor& target_hist,
                        std::span<const double> weights) {
  Tensor out = Tensor::scalar(weighted_l1(pred_hist.values(), target_hist.values(), weights));
  if (pred_hist.requires_grad()) {
    g.record({pred_hist}, out,
             [p = pred_hist, t = target_hist, w = std::vector<double>(weights.begin(), weights.end()),
              out]() mutable {
               const double go = std::as_const(out).grad()[0];
               auto gp = p.grad();
               for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go * w[i] * sign(p[i] - t[i]);
             });
  }
  return out;
}

TrainingTargets make_targets(const scene::Scene& scene, int r, double s_max, int bins) {
  const targets::CountMap map = targets::build_count_map(scene, r);
  const targets::BinLadder ladder = targets::build_histograms(scene, s_max);
  TrainingTargets t;
  t.count_map = Tensor(tk::Shape{1, static_cast<std::size_t>(map.height),
                                 static_cast<std::size_t>(map.width)},
                       map.grid);
  t.hist = Tensor::vector(ladder.level(bins));
  t.hist2 = Tensor::vector(ladder.hist2);
  t.hist4 = Tensor::vector(ladder.hist4);
  t.weights = targets::bin_weights(targets::bin_edges(s_max, bins));
  t.weights2 = targets::bin_weights(targets::bin_edges(s_max, 2));
  t.weights4 = targets::bin_weights(targets::bin_edges(s_max, 4));
  return t;
}

double LossReport::combined(const LossWeights& w) const {
  double total = l_count + w.kl * l_kl + w.wl * l_wl;
  if (l_kl2 && l_wl2) total += w.side2 * (*l_kl2 + *l_wl2);
  if (l_kl4 && l_wl4) total += w.side4 * (*l_kl4 + *l_wl4);
  return total;
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j = {{"l_count", l_count}, {"l_kl", l_kl}, {"l_wl", l_wl}, {"l_total", l_total}};
  if (l_kl2) j["l_kl2"] = *l_kl2;
  if (l_wl2) j["l_wl2"] = *l_wl2;
  if (l_kl4) j["l_kl4"] = *l_kl4;
  if (l_wl4) j["l_wl4"] = *l_wl4;
  return j;
}

LossResult loss_total(Graph& g, const model::ModelOutput& out, const TrainingTargets& t,
                      const LossWeights& w) {
  if (out.hist.size() != t.hist.size()) {
    throw DimensionError("loss_total: model predicts " + std::to_string(out.hist.size()) +
                         " bins, targets have " + std::to_string(t.hist.size()));
  }
  const Tensor count = loss_count(g, out.count_map, t.count_map);
  const Tensor kl = loss_kl(g, out.hist, t.hist);
  const Tensor wl = loss_weighted_l1(g, out.hist, t.hist, t.weights);
  const Tensor terms[] = {count, kl, wl};
  const double coeffs[] = {1.0, w.kl, w.wl};
  LossResult r{tk::ops::weighted_sum(g, terms, coeffs), {}};
  r.report.l_count = count.item();
  r.report.l_kl = kl.item();
  r.report.l_wl = wl.item();
  r.report.l_total = r.total.item();
  return r;
}

LossResult loss_total_dsn(Graph& g, const model::ModelOutput& out, const TrainingTargets& t,
                          const LossWeights& w) {
  if (!out.hist2 || !out.hist4) {
    throw DimensionError("loss_total_dsn: model output lacks side histograms");
  }
  if (out.hist.size() != t.hist.size()) {
    throw DimensionError("loss_total_dsn: model predicts " + std::to_string(out.hist.size()) +
                         " bins, targets have " + std::to_string(t.hist.size()));
  }
  const Tensor count = loss_count(g, out.count_map, t.count_map);
  const Tensor kl = loss_kl(g, out.hist, t.hist);
  const Tensor wl = loss_weighted_l1(g, out.hist, t.hist, t.weights);
  const Tensor kl2 = loss_kl(g, *out.hist2, t.hist2);
  const Tensor wl2 = loss_weighted_l1(g, *out.hist2, t.hist2, t.weights2);
  const Tensor kl4 = loss_kl(g, *out.hist4, t.hist4);
  const Tensor wl4 = loss_weighted_l1(g, *out.hist4, t.hist4, t.weights4);
  const Tensor terms[] = {count, kl, wl, kl2, wl2, kl4, wl4};
  const double coeffs[] = {1.0, w.kl, w.wl, w.side2, w.side2, w.side4, w.side4};
  LossResult r{tk::ops::weighted_sum(g, terms, coeffs), {}};
  r.report.l_count = count.item();
  r.report.l_kl = kl.item();
  r.report.l_wl = wl.item();
  r.report.l_kl2 = kl2.item();
  r.report.l_wl2 = wl2.item();
  r.report.l_kl4 = kl4.item();
  r.report.l_wl4 = wl4.item();
  r.report.l_total = r.total.item();
  return r;
}

}  // namespace histonet::losses

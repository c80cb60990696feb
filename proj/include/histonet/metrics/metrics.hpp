#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "histonet/model/histonet.hpp"
#include "histonet/scenegen/scene.hpp"

namespace histonet::metrics {

// Histogram comparisons. Arguments must be non-negative (DataError) and of
// equal length (DimensionError).

double mae(std::span<const double> pred_counts, std::span<const double> true_counts);

/// sum min(P, T) / max(sum P, sum T); 1 when both are empty.
double isec(std::span<const double> p, std::span<const double> t);

/// Pearson correlation of the bin vectors; 0 if either is constant.
double corr(std::span<const double> p, std::span<const double> t);

/// sum over bins with P + T > 0 of (P - T)^2 / (P + T).
double chi2(std::span<const double> p, std::span<const double> t);

/// sqrt(max(0, 1 - sum sqrt(p q))) on normalized histograms.
double bhatt(std::span<const double> p, std::span<const double> t);

/// KL(T || P) with the loss smoothing.
double kld(std::span<const double> p, std::span<const double> t);

double wt_l1(std::span<const double> p, std::span<const double> t, std::span<const double> w);

/// Count and size histogram for one image, predicted or true.
struct Prediction {
  double count = 0.0;
  std::vector<double> hist;
};

Prediction truth(const scene::Scene& scene, double s_max, int bins);

/// Inference pass: count = sum(map) / r^2, histogram from the main head.
Prediction predict(const model::HistoNet& net, const scene::Image& image);

struct ImageMetrics {
  double abs_error = 0.0;
  double kld = 0.0;
  double wt_l1 = 0.0;
  double isec = 0.0;
  double chi2 = 0.0;
  double corr = 0.0;
  double bhatt = 0.0;
};

struct MetricReport {
  double mae = 0.0;
  double kld = 0.0;
  double wt_l1 = 0.0;
  double isec = 0.0;
  double chi2 = 0.0;
  double corr = 0.0;
  double bhatt = 0.0;
  int n_images = 0;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  static std::string csv_header();
  std::string csv_row(const std::string& method) const;
};

ImageMetrics compare(const Prediction& pred, const Prediction& truth,
                     std::span<const double> weights);

/// Per-image metrics averaged over the set. Throws DataError for an empty
/// set and DimensionError if any histogram length differs from `weights`.
MetricReport evaluate(std::span<const Prediction> preds, std::span<const Prediction> truths,
                      std::span<const double> weights);

struct AverageModel {
  double mean_count = 0.0;
  std::vector<double> mean_hist;

  Prediction predict() const { return {mean_count, mean_hist}; }
  nlohmann::json to_json() const;
};

AverageModel fit_average_model(std::span<const Prediction> train_truths);

}  // namespace histonet::metrics

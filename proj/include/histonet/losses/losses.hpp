#pragma once

#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "histonet/model/output.hpp"
#include "histonet/scenegen/scene.hpp"
#include "histonet/tensorkit/graph.hpp"

namespace histonet::losses {

inline constexpr double kKlEpsilon = 1e-7;

// Plain evaluations shared by the differentiable losses and the metrics.
// Histogram arguments must be non-negative (DataError otherwise).

/// Probability vector H / sum(H); an all-zero histogram maps to uniform.
std::vector<double> normalize_histogram(std::span<const double> hist);

/// sum p~(T) ln(p~(T) / p~(P)) with p~ = (p + eps) / (1 + n eps).
double kl_divergence(std::span<const double> pred, std::span<const double> target,
                     double eps = kKlEpsilon);

/// sum W_i |P_i - T_i| on raw counts.
double weighted_l1(std::span<const double> pred, std::span<const double> target,
                   std::span<const double> weights);

// Differentiable losses. Gradients flow to the prediction only; targets
// are constants.
tk::Tensor loss_count(tk::Graph& g, const tk::Tensor& pred_map, const tk::Tensor& target_map);
tk::Tensor loss_kl(tk::Graph& g, const tk::Tensor& pred_hist, const tk::Tensor& target_hist,
                   double eps = kKlEpsilon);
tk::Tensor loss_weighted_l1(tk::Graph& g, const tk::Tensor& pred_hist,
                            const tk::Tensor& target_hist, std::span<const double> weights);

/// Targets for one image at a fixed histogram resolution.
struct TrainingTargets {
  tk::Tensor count_map;  // [1, H+r-1, W+r-1]
  tk::Tensor hist;       // [B]
  tk::Tensor hist2;      // [2]
  tk::Tensor hist4;      // [4]
  std::vector<double> weights;
  std::vector<double> weights2;
  std::vector<double> weights4;
};

TrainingTargets make_targets(const scene::Scene& scene, int r, double s_max, int bins);

struct LossWeights {
  double kl = 0.5;
  double wl = 0.5;
  double side2 = 0.2;
  double side4 = 0.3;
};

struct LossReport {
  double l_count = 0.0;
  double l_kl = 0.0;
  double l_wl = 0.0;
  std::optional<double> l_kl2, l_wl2, l_kl4, l_wl4;
  double l_total = 0.0;

  /// Recomputes the weighted combination of the stored components.
  double combined(const LossWeights& w = {}) const;
  nlohmann::json to_json() const;
};

struct LossResult {
  tk::Tensor total;
  LossReport report;
};

/// L_count + 0.5 L_KL + 0.5 L_wL. Side outputs, if any, are ignored.
LossResult loss_total(tk::Graph& g, const model::ModelOutput& out, const TrainingTargets& t,
                      const LossWeights& w = {});

/// Adds 0.2 (L_KL2 + L_wL2) + 0.3 (L_KL4 + L_wL4). Requires side outputs.
LossResult loss_total_dsn(tk::Graph& g, const model::ModelOutput& out, const TrainingTargets& t,
                          const LossWeights& w = {});

}  // namespace histonet::losses

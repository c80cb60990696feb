#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "histonet/model/histonet.hpp"
#include "histonet/scenegen/dataset_io.hpp"
#include "histonet/scenegen/scene.hpp"
#include "histonet/tensorkit/checkpoint.hpp"
#include "histonet/tensorkit/graph.hpp"
#include "histonet/train/trainer.hpp"

namespace histonet::cellularity {

/// clamp(sum area_px / a_ref, 0, 1). Throws ConfigError unless a_ref > 0.
double synth_score(const scene::Scene& scene, double a_ref);
/// 0.5 * H * W.
double default_a_ref(const scene::Scene& scene);

struct ScoreHeadConfig {
  int inputs = 9;  // B + 1
  int hidden1 = 64;
  int hidden2 = 64;
  double leaky_slope = 0.01;
};

/// Two hidden dense layers over [histogram ++ count] and a sigmoid output,
/// so every finite input maps into [0, 1].
class ScoreHead {
 public:
  ScoreHead(ScoreHeadConfig config, std::uint64_t seed);

  const ScoreHeadConfig& config() const { return config_; }
  std::vector<tk::Tensor>& tensors() { return params_; }
  const std::vector<tk::Tensor>& tensors() const { return params_; }

  /// `features` has config().inputs entries; returns a one-element tensor.
  tk::Tensor forward(tk::Graph& g, const tk::Tensor& features) const;
  double score(std::span<const double> features) const;

  /// Sets the per-feature input standardization (mean and 1/std) from a
  /// training set. Stored with the head state; identity until fitted.
  void fit_input_scaling(std::span<const std::vector<double>> features);

  std::vector<tk::NamedTensor> state() const;
  void load_state(const std::vector<tk::NamedTensor>& state);

 private:
  ScoreHeadConfig config_;
  std::vector<std::string> names_;
  std::vector<tk::Tensor> params_;  // fc1.w, fc1.b, fc2.w, fc2.b, out.w, out.b
  tk::Tensor mean_;
  tk::Tensor inv_scale_;
};

/// HistoNet inference features for the head: predicted histogram followed by
/// the predicted count.
std::vector<double> head_features(const model::HistoNet& net, const scene::Image& image);

enum class Trainable { count_branch, all, head };
std::string_view to_string(Trainable t);
Trainable parse_trainable(std::string_view name);

struct Stage {
  int stage = 1;
  int epochs = 1;
  std::string dataset_dir;
  Trainable trainable = Trainable::all;
};

struct StagePlan {
  std::vector<Stage> stages;

  /// Accepts either a bare list of stages or {"stages": [...]}.
  static StagePlan from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Standard three-stage schedule: count branch, whole network, head only.
StagePlan default_plan(const std::string& dataset_dir, int count_epochs, int full_epochs,
                       int head_epochs);

struct StageOptions {
  double lr = 1e-3;
  int batch = 4;
  bool augment = true;
  double s_max = 0.0;
  double a_ref = 0.0;  // 0 selects 0.5 * H * W
  std::uint64_t seed = 0;
};

struct StageLog {
  int stage = 0;
  Trainable trainable = Trainable::all;
  int epoch = 0;
  double loss = 0.0;
  // Largest |grad| seen on parameters outside the stage's mask; 0 when the
  // freeze contract holds.
  double frozen_grad_max = 0.0;

  nlohmann::json to_json() const;
};

using StageCallback = std::function<void(const StageLog&)>;

/// Runs each stage in order on datasets[i]. Stage "count_branch" optimizes
/// L_count on the count branch only; "all" optimizes the full objective on
/// every HistoNet parameter; "head" optimizes squared score error on the
/// head with HistoNet bit-frozen. Throws DataError for an empty dataset.
void run_stages(const StagePlan& plan, std::span<const scene::Dataset> datasets,
                model::HistoNet& net, ScoreHead& head, const StageOptions& options,
                const StageCallback& on_epoch = {});

/// Fraction of pairs with distinct true scores that the prediction orders
/// the same way; prediction ties count one half. Throws DimensionError for
/// fewer than two entries or a length mismatch.
double concordance(std::span<const double> pred, std::span<const double> truth);

/// Pearson correlation of average ranks.
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace histonet::cellularity

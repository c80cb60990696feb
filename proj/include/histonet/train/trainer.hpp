#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "histonet/losses/losses.hpp"
#include "histonet/model/histonet.hpp"
#include "histonet/scenegen/scene.hpp"

namespace histonet::train {

enum class Objective {
  count,  // L_count only
  full,   // total loss, with side-head terms when the model has them
};

struct TrainConfig {
  int epochs = 10;
  // When positive, train for exactly this many optimizer steps, cycling
  // epochs as needed; `epochs` is then ignored.
  int steps = 0;
  int batch = 4;
  double lr = 1e-3;
  // Cosine decay from lr to lr * lr_final over all optimizer steps.
  // 1 keeps the rate constant.
  double lr_final = 0.1;
  bool augment = true;
  Objective objective = Objective::full;
  // Parameter groups updated by the optimizer; the rest are frozen and
  // never receive gradient. Empty means every group.
  std::vector<model::ParamGroup> trainable;
  losses::LossWeights weights;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const TrainConfig& config);

/// Fixed training pairs for one dataset; targets are rebuilt per sample only
/// when a geometric augmentation moves the annotations.
struct TrainSet {
  std::span<const scene::Scene> scenes;
  std::span<const scene::Image> images;
  double s_max = 0.0;

  std::size_t size() const { return scenes.size(); }
};

struct EpochLog {
  int epoch = 0;
  int steps = 0;  // cumulative optimizer steps
  losses::LossReport train;  // mean over the epoch's samples
  std::optional<losses::LossReport> val;

  nlohmann::json to_json() const;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Mini-batch Adam on the per-image losses, gradients averaged over the
/// batch. Throws NumericError as soon as a loss or gradient is non-finite,
/// before the offending update is applied.
class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  const TrainConfig& config() const { return config_; }

  std::vector<EpochLog> fit(model::HistoNet& net, const TrainSet& train,
                            const TrainSet* val = nullptr, const EpochCallback& on_epoch = {});

 private:
  TrainConfig config_;
};

/// Mean per-image loss in inference mode (no dropout, no augmentation).
losses::LossReport mean_loss(const model::HistoNet& net, const TrainSet& data,
                             Objective objective = Objective::full,
                             const losses::LossWeights& weights = {});

/// Deterministic nested subsets: the first round(fraction * n) entries of a
/// seed-fixed permutation, so smaller fractions are prefixes of larger ones.
/// Throws ConfigError for fraction outside (0, 1].
std::vector<std::size_t> nested_subset(std::size_t n, double fraction, std::uint64_t seed);

/// Splits indices [0, n) into train and validation; the last
/// round(val_frac * n) indices are held out.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n,
                                                                               double val_frac);

}  // namespace histonet::train

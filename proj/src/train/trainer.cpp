#include "histonet/train/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "histonet/errors.hpp"
#include "histonet/scenegen/augment.hpp"
#include "histonet/tensorkit/optim.hpp"

namespace histonet::train {

using losses::LossReport;
using tk::Tensor;

namespace {

struct StepResult {
  Tensor total;
  LossReport report;
};

StepResult step_loss(tk::Graph& g, const model::HistoNet& net, const scene::Image& image,
                     const losses::TrainingTargets& t, Objective objective,
                     const losses::LossWeights& w, bool training, Rng& rng) {
  if (objective == Objective::count) {
    const model::ModelOutput out = net.forward(g, image, training, rng, model::ForwardMode::count_only);
    Tensor lc = losses::loss_count(g, out.count_map, t.count_map);
    LossReport r;
    r.l_count = lc.item();
    r.l_total = r.l_count;
    return {lc, r};
  }
  const model::ModelOutput out = net.forward(g, image, training, rng);
  losses::LossResult r = out.hist2 ? losses::loss_total_dsn(g, out, t, w)
                                   : losses::loss_total(g, out, t, w);
  return {r.total, r.report};
}

void accumulate(LossReport& sum, const LossReport& r) {
  sum.l_count += r.l_count;
  sum.l_kl += r.l_kl;
  sum.l_wl += r.l_wl;
  auto add = [](std::optional<double>& a, const std::optional<double>& b) {
    if (b) a = a.value_or(0.0) + *b;
  };
  add(sum.l_kl2, r.l_kl2);
  add(sum.l_wl2, r.l_wl2);
  add(sum.l_kl4, r.l_kl4);
  add(sum.l_wl4, r.l_wl4);
  sum.l_total += r.l_total;
}

LossReport mean_of(LossReport sum, std::size_t n) {
  const double inv = 1.0 / static_cast<double>(n);
  sum.l_count *= inv;
  sum.l_kl *= inv;
  sum.l_wl *= inv;
  for (std::optional<double>* v : {&sum.l_kl2, &sum.l_wl2, &sum.l_kl4, &sum.l_wl4}) {
    if (*v) **v *= inv;
  }
  sum.l_total *= inv;
  return sum;
}

void require_nonempty(const TrainSet& data, const char* what) {
  if (data.size() == 0) throw DataError(std::string(what) + ": empty dataset");
  if (data.images.size() != data.scenes.size()) {
    throw DataError(std::string(what) + ": image and annotation counts differ");
  }
}

// Restores requires_grad flags on scope exit so an exception mid-training
// does not leave parameters frozen.
class FreezeGuard {
 public:
  FreezeGuard(model::HistoNet& net, const std::vector<model::ParamGroup>& trainable) : net_(net) {
    for (model::Parameter& p : net.parameters()) {
      saved_.push_back(p.tensor.requires_grad());
      const bool train = trainable.empty() ||
                         std::find(trainable.begin(), trainable.end(), p.group) != trainable.end();
      p.tensor.set_requires_grad(train);
      if (train) active_.push_back(p.tensor);
    }
  }
  ~FreezeGuard() {
    auto& params = net_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.set_requires_grad(saved_[i]);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

  std::vector<Tensor>& active() { return active_; }

 private:
  model::HistoNet& net_;
  std::vector<bool> saved_;
  std::vector<Tensor> active_;
};

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

}  // namespace

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json groups = nlohmann::json::array();
  for (model::ParamGroup g : c.trainable) groups.push_back(std::string(model::to_string(g)));
  return {{"epochs", c.epochs},
          {"steps", c.steps},
          {"batch", c.batch},
          {"lr", c.lr},
          {"lr_final", c.lr_final},
          {"augment", c.augment},
          {"objective", c.objective == Objective::count ? "count" : "full"},
          {"trainable", groups},
          {"loss_weights",
           {{"kl", c.weights.kl}, {"wl", c.weights.wl}, {"side2", c.weights.side2},
            {"side4", c.weights.side4}}},
          {"seed", c.seed}};
}

nlohmann::json EpochLog::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"steps", steps}, {"train", train.to_json()}};
  if (val) j["val"] = val->to_json();
  return j;
}

Trainer::Trainer(TrainConfig config) : config_(std::move(config)) {
  if (config_.batch < 1) throw ConfigError("batch size must be at least 1");
  if (config_.epochs < 0 || config_.steps < 0) throw ConfigError("epochs and steps must be >= 0");
  if (!(config_.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(config_.lr_final > 0.0 && config_.lr_final <= 1.0)) {
    throw ConfigError("lr_final must be in (0, 1]");
  }
}

std::vector<EpochLog> Trainer::fit(model::HistoNet& net, const TrainSet& train, const TrainSet* val,
                                   const EpochCallback& on_epoch) {
  require_nonempty(train, "train");
  if (val) require_nonempty(*val, "validation");
  const model::ModelConfig& mc = net.config();

  std::vector<losses::TrainingTargets> targets;
  targets.reserve(train.size());
  for (const scene::Scene& s : train.scenes) {
    targets.push_back(losses::make_targets(s, mc.receptive_field, train.s_max, mc.bins));
  }

  FreezeGuard guard(net, config_.trainable);
  std::vector<Tensor>& active = guard.active();
  tk::AdamState adam(tk::AdamConfig{.lr = config_.lr}, active);
  for (model::Parameter& p : net.parameters()) p.tensor.drop_grad();

  const std::size_t n = train.size();
  const std::size_t batch = static_cast<std::size_t>(config_.batch);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const int epochs = config_.steps > 0
                         ? static_cast<int>((static_cast<std::size_t>(config_.steps) +
                                             steps_per_epoch - 1) / steps_per_epoch)
                         : config_.epochs;

  const double total_steps =
      config_.steps > 0 ? config_.steps : static_cast<double>(steps_per_epoch) * epochs;
  auto rate = [&](int step) {
    const double progress = total_steps > 1 ? step / (total_steps - 1) : 0.0;
    const double f = config_.lr_final;
    return config_.lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
  };

  std::vector<EpochLog> logs;
  int step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    Rng rng(Rng::mix(config_.seed, static_cast<std::uint64_t>(epoch)));
    const std::vector<std::size_t> order = permutation(n, rng);
    LossReport sum;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      if (config_.steps > 0 && step >= config_.steps) break;
      const std::size_t end = std::min(n, start + batch);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const scene::Image* image = &train.images[i];
        const losses::TrainingTargets* t = &targets[i];
        scene::Image aug_image;
        losses::TrainingTargets aug_targets;
        if (config_.augment) {
          const std::size_t pick = rng.index(std::size(scene::kGeometricKinds) + 1);
          scene::Scene aug_scene = train.scenes[i];
          aug_image = *image;
          if (pick > 0) {
            std::tie(aug_image, aug_scene) =
                scene::augment(aug_image, aug_scene, scene::kGeometricKinds[pick - 1], rng);
            aug_targets = losses::make_targets(aug_scene, mc.receptive_field, train.s_max, mc.bins);
            t = &aug_targets;
          }
          if (rng.bernoulli(0.5)) {
            aug_image = scene::augment(aug_image, aug_scene, scene::AugmentKind::noise, rng).first;
          }
          if (rng.bernoulli(0.5)) {
            aug_image = scene::augment(aug_image, aug_scene, scene::AugmentKind::contrast, rng).first;
          }
          image = &aug_image;
        }
        tk::Graph g;
        StepResult r = step_loss(g, net, *image, *t, config_.objective, config_.weights, true, rng);
        if (!std::isfinite(r.report.l_total)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step));
        }
        g.backward(r.total);
        accumulate(sum, r.report);
        ++seen;
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (Tensor& p : active) {
        if (!p.has_grad()) continue;
        for (double& v : p.grad()) v *= scale;
      }
      adam.config.lr = rate(step);
      tk::adam_step(active, adam);
      for (Tensor& p : active) p.zero_grad();
      ++step;
    }
    EpochLog log;
    log.epoch = epoch + 1;
    log.steps = step;
    log.train = mean_of(sum, std::max<std::size_t>(seen, 1));
    if (val) log.val = mean_loss(net, *val, config_.objective, config_.weights);
    if (on_epoch) on_epoch(log);
    logs.push_back(std::move(log));
  }
  return logs;
}

LossReport mean_loss(const model::HistoNet& net, const TrainSet& data, Objective objective,
                     const losses::LossWeights& weights) {
  require_nonempty(data, "mean_loss");
  const model::ModelConfig& mc = net.config();
  LossReport sum;
  Rng unused(0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const losses::TrainingTargets t =
        losses::make_targets(data.scenes[i], mc.receptive_field, data.s_max, mc.bins);
    tk::Graph g;
    accumulate(sum, step_loss(g, net, data.images[i], t, objective, weights, false, unused).report);
  }
  return mean_of(sum, data.size());
}

std::vector<std::size_t> nested_subset(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  Rng rng = Rng(seed).fork(Rng::hash_string("nested_subset"));
  std::vector<std::size_t> order = permutation(n, rng);
  order.resize(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  return order;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n,
                                                                               double val_frac) {
  if (!(val_frac >= 0.0 && val_frac < 1.0)) {
    throw ConfigError("validation fraction must lie in [0, 1)");
  }
  const auto n_val = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
  std::vector<std::size_t> tr(n - n_val), va(n_val);
  std::iota(tr.begin(), tr.end(), std::size_t{0});
  std::iota(va.begin(), va.end(), n - n_val);
  return {tr, va};
}

}  // namespace histonet::train

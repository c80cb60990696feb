#include "histonet/cellularity/cellularity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "histonet/errors.hpp"
#include "histonet/metrics/metrics.hpp"
#include "histonet/targets/targets.hpp"
#include "histonet/tensorkit/ops.hpp"
#include "histonet/tensorkit/optim.hpp"

namespace histonet::cellularity {

using tk::Graph;
using tk::Shape;
using tk::Tensor;
namespace ops = tk::ops;

double synth_score(const scene::Scene& scene, double a_ref) {
  if (!(a_ref > 0.0)) throw ConfigError("synth_score: a_ref must be positive");
  double area = 0.0;
  for (const scene::EllipseInstance& e : scene.instances) area += static_cast<double>(e.area_px);
  return std::clamp(area / a_ref, 0.0, 1.0);
}

double default_a_ref(const scene::Scene& scene) {
  return 0.5 * static_cast<double>(scene.width) * static_cast<double>(scene.height);
}

ScoreHead::ScoreHead(ScoreHeadConfig config, std::uint64_t seed) : config_(config) {
  if (config_.inputs < 1 || config_.hidden1 < 1 || config_.hidden2 < 1) {
    throw ConfigError("score head widths must be positive");
  }
  mean_ = Tensor(Shape{static_cast<std::size_t>(config_.inputs)}, 0.0);
  inv_scale_ = Tensor(Shape{static_cast<std::size_t>(config_.inputs)}, 1.0);
  const int widths[] = {config_.inputs, config_.hidden1, config_.hidden2, 1};
  const char* layers[] = {"head.fc1", "head.fc2", "head.out"};
  for (int l = 0; l < 3; ++l) {
    const auto in = static_cast<std::size_t>(widths[l]);
    const auto out = static_cast<std::size_t>(widths[l + 1]);
    Rng rng = Rng(seed).fork(Rng::hash_string(layers[l]));
    Tensor w = tk::xavier_init(Shape{out, in}, in, out, rng);
    Tensor b(Shape{out});
    w.set_requires_grad(true);
    b.set_requires_grad(true);
    names_.push_back(std::string(layers[l]) + ".weight");
    names_.push_back(std::string(layers[l]) + ".bias");
    params_.push_back(w);
    params_.push_back(b);
  }
}

Tensor ScoreHead::forward(Graph& g, const Tensor& features) const {
  if (features.size() != static_cast<std::size_t>(config_.inputs)) {
    throw DimensionError("score head expects " + std::to_string(config_.inputs) +
                         " features, got " + std::to_string(features.size()));
  }
  Tensor x(Shape{features.size()});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = (features[i] - mean_[i]) * inv_scale_[i];
  Tensor h = ops::leaky_relu(g, ops::dense(g, x, params_[0], params_[1]), config_.leaky_slope);
  h = ops::leaky_relu(g, ops::dense(g, h, params_[2], params_[3]), config_.leaky_slope);
  return ops::sigmoid(g, ops::dense(g, h, params_[4], params_[5]));
}

double ScoreHead::score(std::span<const double> features) const {
  Graph g;
  return forward(g, Tensor::vector(std::vector<double>(features.begin(), features.end()))).item();
}

void ScoreHead::fit_input_scaling(std::span<const std::vector<double>> features) {
  const auto n = static_cast<double>(features.size());
  for (std::size_t j = 0; j < mean_.size(); ++j) {
    double sum = 0.0, sq = 0.0;
    for (const std::vector<double>& f : features) {
      if (f.size() != mean_.size()) throw DimensionError("fit_input_scaling: feature length mismatch");
      sum += f[j];
    }
    const double mean = features.empty() ? 0.0 : sum / n;
    for (const std::vector<double>& f : features) sq += (f[j] - mean) * (f[j] - mean);
    const double sd = features.empty() ? 0.0 : std::sqrt(sq / n);
    mean_[j] = mean;
    inv_scale_[j] = sd > 1e-8 ? 1.0 / sd : 1.0;
  }
}

std::vector<tk::NamedTensor> ScoreHead::state() const {
  std::vector<tk::NamedTensor> out;
  for (std::size_t i = 0; i < params_.size(); ++i) out.push_back({names_[i], params_[i]});
  out.push_back({"head.input.mean", mean_});
  out.push_back({"head.input.inv_scale", inv_scale_});
  return out;
}

void ScoreHead::load_state(const std::vector<tk::NamedTensor>& state) {
  std::vector<std::string> names = names_;
  std::vector<Tensor> dst = params_;
  names.push_back("head.input.mean");
  names.push_back("head.input.inv_scale");
  dst.push_back(mean_);
  dst.push_back(inv_scale_);
  if (state.size() != dst.size()) {
    throw DataError("score head checkpoint holds " + std::to_string(state.size()) + " tensors");
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (state[i].name != names[i] || state[i].tensor.shape() != dst[i].shape()) {
      throw DataError("score head checkpoint tensor '" + state[i].name + "' does not match '" +
                      names[i] + "'");
    }
    const Tensor src = state[i].tensor;
    std::copy(src.values().begin(), src.values().end(), dst[i].values().begin());
  }
}

std::vector<double> head_features(const model::HistoNet& net, const scene::Image& image) {
  metrics::Prediction p = metrics::predict(net, image);
  p.hist.push_back(p.count);
  return p.hist;
}

std::string_view to_string(Trainable t) {
  switch (t) {
    case Trainable::count_branch: return "count_branch";
    case Trainable::all: return "all";
    case Trainable::head: return "head";
  }
  return "unknown";
}

Trainable parse_trainable(std::string_view name) {
  if (name == "count_branch") return Trainable::count_branch;
  if (name == "all") return Trainable::all;
  if (name == "head") return Trainable::head;
  throw ConfigError("unknown trainable mask '" + std::string(name) +
                    "' (expected count_branch, all or head)");
}

StagePlan StagePlan::from_json(const nlohmann::json& j) {
  const nlohmann::json& list = j.is_array() ? j : j.at("stages");
  if (!list.is_array()) throw ConfigError("stage plan must be a list of stages");
  StagePlan plan;
  try {
    for (const nlohmann::json& s : list) {
      Stage st;
      st.stage = s.at("stage").get<int>();
      st.epochs = s.at("epochs").get<int>();
      st.dataset_dir = s.at("dataset_dir").get<std::string>();
      const nlohmann::json& tr = s.at("trainable");
      // The mask may be written as a one-element list.
      st.trainable = parse_trainable(tr.is_array() ? tr.at(0).get<std::string>()
                                                   : tr.get<std::string>());
      if (st.epochs < 0) throw ConfigError("stage epochs must be >= 0");
      plan.stages.push_back(std::move(st));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed stage plan: ") + e.what());
  }
  return plan;
}

nlohmann::json StagePlan::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const Stage& s : stages) {
    list.push_back({{"stage", s.stage},
                    {"epochs", s.epochs},
                    {"dataset_dir", s.dataset_dir},
                    {"trainable", {std::string(cellularity::to_string(s.trainable))}}});
  }
  return list;
}

StagePlan default_plan(const std::string& dataset_dir, int count_epochs, int full_epochs,
                       int head_epochs) {
  return {{{1, count_epochs, dataset_dir, Trainable::count_branch},
           {2, full_epochs, dataset_dir, Trainable::all},
           {3, head_epochs, dataset_dir, Trainable::head}}};
}

nlohmann::json StageLog::to_json() const {
  return {{"stage", stage},
          {"trainable", std::string(cellularity::to_string(trainable))},
          {"epoch", epoch},
          {"loss", loss},
          {"frozen_grad_max", frozen_grad_max}};
}

namespace {

double max_abs_grad(const std::vector<Tensor>& tensors) {
  double m = 0.0;
  for (const Tensor& t : tensors) {
    for (double v : t.grad()) m = std::max(m, std::abs(v));
  }
  return m;
}

std::vector<Tensor> frozen_for(const model::HistoNet& net, Trainable t) {
  if (t == Trainable::all) return {};
  if (t == Trainable::head) return net.tensors();
  std::vector<Tensor> out;
  for (const model::Parameter& p : net.parameters()) {
    if (p.group != model::ParamGroup::count_branch) out.push_back(p.tensor);
  }
  return out;
}

void train_head(const Stage& stage, const scene::Dataset& data, model::HistoNet& net,
                ScoreHead& head, const StageOptions& opt, const StageCallback& on_epoch) {
  // HistoNet is detached from differentiation for the whole stage; features
  // are computed once because the network no longer changes.
  std::vector<bool> saved;
  for (model::Parameter& p : net.parameters()) {
    saved.push_back(p.tensor.requires_grad());
    p.tensor.set_requires_grad(false);
  }
  struct Restore {
    model::HistoNet& net;
    std::vector<bool>& saved;
    ~Restore() {
      for (std::size_t i = 0; i < saved.size(); ++i) {
        net.parameters()[i].tensor.set_requires_grad(saved[i]);
      }
    }
  } restore{net, saved};

  std::vector<std::vector<double>> raw;
  std::vector<double> scores;
  for (std::size_t i = 0; i < data.size(); ++i) {
    raw.push_back(head_features(net, data.images[i]));
    const double a_ref = opt.a_ref > 0.0 ? opt.a_ref : default_a_ref(data.scenes[i]);
    scores.push_back(synth_score(data.scenes[i], a_ref));
  }
  // Raw counts and bin masses are tens of units and saturate the sigmoid.
  head.fit_input_scaling(raw);
  std::vector<Tensor> features;
  for (const std::vector<double>& f : raw) features.push_back(Tensor::vector(f));

  std::vector<Tensor>& params = head.tensors();
  tk::AdamState adam(tk::AdamConfig{.lr = opt.lr}, params);
  for (Tensor& p : params) p.drop_grad();
  const std::vector<Tensor> frozen = net.tensors();
  const std::size_t n = data.size();
  const auto batch = static_cast<std::size_t>(opt.batch);
  for (int epoch = 0; epoch < stage.epochs; ++epoch) {
    Rng rng(Rng::mix(opt.seed ^ 0x5eed0003ULL, static_cast<std::uint64_t>(epoch)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      for (std::size_t k = start; k < end; ++k) {
        Graph g;
        const Tensor pred = head.forward(g, features[order[k]]);
        const Tensor loss = ops::squared_error(g, pred, Tensor::scalar(scores[order[k]]));
        total += loss.item();
        g.backward(loss);
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (Tensor& p : params) {
        if (p.has_grad()) {
          for (double& v : p.grad()) v *= scale;
        }
      }
      tk::adam_step(params, adam);
      for (Tensor& p : params) p.zero_grad();
    }
    if (on_epoch) {
      on_epoch({stage.stage, stage.trainable, epoch + 1, total / static_cast<double>(n),
                max_abs_grad(frozen)});
    }
  }
}

}  // namespace

void run_stages(const StagePlan& plan, std::span<const scene::Dataset> datasets,
                model::HistoNet& net, ScoreHead& head, const StageOptions& opt,
                const StageCallback& on_epoch) {
  if (datasets.size() != plan.stages.size()) {
    throw ConfigError("stage plan has " + std::to_string(plan.stages.size()) + " stages but " +
                      std::to_string(datasets.size()) + " datasets were supplied");
  }
  if (head.config().inputs != net.config().bins + 1) {
    throw DimensionError("score head expects " + std::to_string(head.config().inputs) +
                         " features; model provides " + std::to_string(net.config().bins + 1));
  }
  for (std::size_t s = 0; s < plan.stages.size(); ++s) {
    const Stage& stage = plan.stages[s];
    const scene::Dataset& data = datasets[s];
    if (data.size() == 0) {
      throw DataError("stage " + std::to_string(stage.stage) + ": empty dataset '" +
                      stage.dataset_dir + "'");
    }
    if (stage.trainable == Trainable::head) {
      train_head(stage, data, net, head, opt, on_epoch);
      continue;
    }
    train::TrainConfig tc;
    tc.epochs = stage.epochs;
    tc.batch = opt.batch;
    tc.lr = opt.lr;
    tc.augment = opt.augment;
    tc.seed = Rng::mix(opt.seed, static_cast<std::uint64_t>(stage.stage));
    if (stage.trainable == Trainable::count_branch) {
      tc.objective = train::Objective::count;
      tc.trainable = {model::ParamGroup::count_branch};
    }
    const double s_max = opt.s_max > 0.0 ? opt.s_max : targets::default_s_max(data.config.area);
    const train::TrainSet ts{data.scenes, data.images, s_max};
    const std::vector<Tensor> frozen = frozen_for(net, stage.trainable);
    train::Trainer(tc).fit(net, ts, nullptr, [&](const train::EpochLog& log) {
      if (on_epoch) {
        on_epoch({stage.stage, stage.trainable, log.epoch, log.train.l_total, max_abs_grad(frozen)});
      }
    });
  }
}

double concordance(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) throw DimensionError("concordance: length mismatch");
  if (pred.size() < 2) throw DimensionError("concordance: needs at least two entries");
  double agree = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::size_t j = i + 1; j < pred.size(); ++j) {
      if (truth[i] == truth[j]) continue;
      ++pairs;
      const double dp = pred[i] - pred[j];
      const double dt = truth[i] - truth[j];
      if (dp == 0.0) {
        agree += 0.5;
      } else if ((dp > 0.0) == (dt > 0.0)) {
        agree += 1.0;
      }
    }
  }
  return pairs == 0 ? 0.5 : agree / static_cast<double>(pairs);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("spearman: length mismatch");
  if (a.size() < 2) throw DimensionError("spearman: needs at least two entries");
  const std::vector<double> ra = average_ranks(a), rb = average_ranks(b);
  return metrics::corr(ra, rb);
}

}  // namespace histonet::cellularity

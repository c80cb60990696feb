#include "histonet/model/histonet.hpp"

#include <fstream>
#include <iterator>

#include "histonet/errors.hpp"
#include "histonet/tensorkit/ops.hpp"
#include "histonet/tensorkit/optim.hpp"

namespace histonet::model {

using tk::Graph;
using tk::Shape;
using tk::Tensor;
namespace ops = tk::ops;

void validate(const ModelConfig& c) {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid model config: " + what);
  };
  check(c.input_size > 0, "input size must be positive");
  check(c.receptive_field >= 3 && c.receptive_field % 2 == 1,
        "receptive field must be an odd integer >= 3");
  check(c.receptive_field < c.input_size, "receptive field must be smaller than the input");
  check(c.bins == 8 || c.bins == 16, "histogram bins must be 8 or 16");
  check(c.count_width3 > 0 && c.count_width1 > 0, "count branch widths must be positive");
  check(!c.hist_widths.empty(), "histogram branch needs at least one stage");
  for (int w : c.hist_widths) check(w > 0, "histogram stage widths must be positive");
  check(c.head_conv3 > 0 && c.head_conv1 > 0 && c.head_hidden > 0, "head widths must be positive");
  check(c.dropout >= 0.0 && c.dropout < 1.0, "dropout must lie in [0,1)");
  check(c.leaky_slope >= 0.0 && c.leaky_slope < 1.0, "leaky slope must lie in [0,1)");
  const int stages = static_cast<int>(c.hist_widths.size());
  const int divisor = 1 << stages;
  check(c.map_size() % divisor == 0,
        "map size " + std::to_string(c.map_size()) + " is not divisible by the pooling chain (" +
            std::to_string(divisor) + ")");
  if (c.dsn) {
    check(stages >= 2, "deep supervision needs at least two residual stages");
    check(c.side_conv3 > 0 && c.side_conv1 > 0 && c.side_hidden > 0,
          "side head widths must be positive");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_size", c.input_size},     {"receptive_field", c.receptive_field},
          {"count_width3", c.count_width3}, {"count_width1", c.count_width1},
          {"hist_widths", c.hist_widths},   {"head_conv3", c.head_conv3},
          {"head_conv1", c.head_conv1},     {"head_hidden", c.head_hidden},
          {"side_conv3", c.side_conv3},     {"side_conv1", c.side_conv1},
          {"side_hidden", c.side_hidden},   {"bins", c.bins},
          {"dsn", c.dsn},                   {"dropout", c.dropout},
          {"leaky_slope", c.leaky_slope}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.input_size = j.value("input_size", c.input_size);
  c.receptive_field = j.value("receptive_field", c.receptive_field);
  c.count_width3 = j.value("count_width3", c.count_width3);
  c.count_width1 = j.value("count_width1", c.count_width1);
  c.hist_widths = j.value("hist_widths", c.hist_widths);
  c.head_conv3 = j.value("head_conv3", c.head_conv3);
  c.head_conv1 = j.value("head_conv1", c.head_conv1);
  c.head_hidden = j.value("head_hidden", c.head_hidden);
  c.side_conv3 = j.value("side_conv3", c.side_conv3);
  c.side_conv1 = j.value("side_conv1", c.side_conv1);
  c.side_hidden = j.value("side_hidden", c.side_hidden);
  c.bins = j.value("bins", c.bins);
  c.dsn = j.value("dsn", c.dsn);
  c.dropout = j.value("dropout", c.dropout);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  return c;
}

ModelConfig full_scale_config() {
  ModelConfig c;
  c.input_size = 256;
  c.receptive_field = 33;
  c.count_width3 = 32;
  c.count_width1 = 32;
  c.hist_widths = {64, 128, 256};
  c.head_conv3 = 256;
  c.head_conv1 = 16;
  c.head_hidden = 512;
  c.side_conv3 = 128;
  c.side_conv1 = 16;
  c.side_hidden = 256;
  return c;
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.input_size = 16;
  c.receptive_field = 5;
  c.count_width3 = 3;
  c.count_width1 = 2;
  c.hist_widths = {4, 6};
  c.head_conv3 = 4;
  c.head_conv1 = 2;
  c.head_hidden = 8;
  c.side_conv3 = 3;
  c.side_conv1 = 2;
  c.side_hidden = 6;
  return c;
}

std::string_view to_string(ParamGroup group) {
  switch (group) {
    case ParamGroup::count_branch: return "count_branch";
    case ParamGroup::hist_branch: return "hist_branch";
    case ParamGroup::dsn_heads: return "dsn_heads";
  }
  return "unknown";
}

HistoNet::Conv HistoNet::make_conv(const std::string& name, ParamGroup group, int cin, int cout,
                                   int k) {
  // Each tensor draws from its own stream, so adding or removing side heads
  // leaves every other initial value unchanged.
  Rng rng = Rng(seed_).fork(Rng::hash_string(name));
  const auto uk = static_cast<std::size_t>(k);
  Conv c;
  c.weight = tk::xavier_init(
      Shape{static_cast<std::size_t>(cout), static_cast<std::size_t>(cin), uk, uk},
      static_cast<std::size_t>(cin * k * k), static_cast<std::size_t>(cout * k * k), rng);
  c.bias = Tensor(Shape{static_cast<std::size_t>(cout)});
  c.pad = uk / 2;
  c.weight.set_requires_grad(true);
  c.bias.set_requires_grad(true);
  params_.push_back({name + ".weight", group, c.weight});
  params_.push_back({name + ".bias", group, c.bias});
  return c;
}

HistoNet::Dense HistoNet::make_dense(const std::string& name, ParamGroup group, int in, int out) {
  Rng rng = Rng(seed_).fork(Rng::hash_string(name));
  Dense d;
  d.weight = tk::xavier_init(Shape{static_cast<std::size_t>(out), static_cast<std::size_t>(in)},
                             static_cast<std::size_t>(in), static_cast<std::size_t>(out), rng);
  d.bias = Tensor(Shape{static_cast<std::size_t>(out)});
  d.weight.set_requires_grad(true);
  d.bias.set_requires_grad(true);
  params_.push_back({name + ".weight", group, d.weight});
  params_.push_back({name + ".bias", group, d.bias});
  return d;
}

HistoNet::SideHead HistoNet::make_side_head(const std::string& name, int channels, int side,
                                            int outputs) {
  const int final_side = config_.map_size() >> config_.hist_widths.size();
  SideHead h;
  h.pool = static_cast<std::size_t>(side / final_side);
  h.c3 = make_conv(name + ".conv3", ParamGroup::dsn_heads, channels, config_.side_conv3, 3);
  h.c1 = make_conv(name + ".conv1", ParamGroup::dsn_heads, config_.side_conv3, config_.side_conv1, 1);
  h.fc1 = make_dense(name + ".fc1", ParamGroup::dsn_heads,
                     config_.side_conv1 * final_side * final_side, config_.side_hidden);
  h.fc2 = make_dense(name + ".fc2", ParamGroup::dsn_heads, config_.side_hidden, outputs);
  return h;
}

HistoNet::HistoNet(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), seed_(seed) {
  validate(config_);
  const ModelConfig& c = config_;
  const int dual_width = c.count_width3 + c.count_width1;

  int cin = 1;
  for (int i = 0; i < c.count_blocks(); ++i) {
    const std::string name = "count.block" + std::to_string(i);
    DualBlock b;
    b.k3 = make_conv(name + ".k3", ParamGroup::count_branch, cin, c.count_width3, 3);
    b.k1 = make_conv(name + ".k1", ParamGroup::count_branch, cin, c.count_width1, 1);
    count_blocks_.push_back(std::move(b));
    cin = dual_width;
  }
  count_out_ = make_conv("count.out", ParamGroup::count_branch, dual_width, 1, 1);

  int channels = dual_width;
  int side = c.map_size();
  for (std::size_t s = 0; s < c.hist_widths.size(); ++s) {
    const std::string name = "hist.stage" + std::to_string(s);
    const int width = c.hist_widths[s];
    side /= 2;
    ResStage st;
    if (width != channels) {
      st.proj = make_conv(name + ".proj", ParamGroup::hist_branch, channels, width, 1);
    }
    st.first = make_conv(name + ".res1", ParamGroup::hist_branch, width, width, 3);
    st.second = make_conv(name + ".res2", ParamGroup::hist_branch, width, width, 3);
    stages_.push_back(std::move(st));
    channels = width;
    if (c.dsn && s == 0) side2_ = make_side_head("dsn.hist2", width, side, 2);
    if (c.dsn && s == 1) side4_ = make_side_head("dsn.hist4", width, side, 4);
  }
  head_conv3_ = make_conv("hist.head.conv3", ParamGroup::hist_branch, channels, c.head_conv3, 3);
  head_conv1_ = make_conv("hist.head.conv1", ParamGroup::hist_branch, c.head_conv3, c.head_conv1, 1);
  head_fc1_ = make_dense("hist.head.fc1", ParamGroup::hist_branch, c.head_conv1 * side * side,
                         c.head_hidden);
  head_fc2_ = make_dense("hist.head.fc2", ParamGroup::hist_branch, c.head_hidden, c.bins);
}

std::vector<Tensor> HistoNet::tensors() const {
  std::vector<Tensor> out;
  for (const Parameter& p : params_) out.push_back(p.tensor);
  return out;
}

std::vector<Tensor> HistoNet::tensors(ParamGroup group) const {
  std::vector<Tensor> out;
  for (const Parameter& p : params_) {
    if (p.group == group) out.push_back(p.tensor);
  }
  return out;
}

std::size_t HistoNet::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.tensor.size();
  return n;
}

const Tensor& HistoNet::parameter(const std::string& name) const {
  for (const Parameter& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ConfigError("no parameter named '" + name + "'");
}

Tensor HistoNet::apply(Graph& g, const Conv& c, const Tensor& x) const {
  return ops::conv2d(g, x, c.weight, c.bias, c.pad);
}

Tensor HistoNet::apply(Graph& g, const Dense& d, const Tensor& x) const {
  return ops::dense(g, x, d.weight, d.bias);
}

Tensor HistoNet::lrelu(Graph& g, const Tensor& x) const {
  return ops::leaky_relu(g, x, config_.leaky_slope);
}

Tensor HistoNet::run_side_head(Graph& g, const SideHead& head, const Tensor& x) const {
  Tensor h = head.pool > 1 ? ops::max_pool2d(g, x, head.pool) : x;
  h = lrelu(g, apply(g, head.c3, h));
  h = lrelu(g, apply(g, head.c1, h));
  Tensor v = lrelu(g, apply(g, head.fc1, ops::flatten(g, h)));
  return ops::softplus(g, apply(g, head.fc2, v));
}

ModelOutput HistoNet::forward(Graph& g, const scene::Image& image, bool training, Rng& rng,
                              ForwardMode mode) const {
  if (image.width != config_.input_size || image.height != config_.input_size) {
    throw DimensionError("model expects " + std::to_string(config_.input_size) + "x" +
                         std::to_string(config_.input_size) + " images, got " +
                         std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  const auto side = static_cast<std::size_t>(config_.input_size);
  const Tensor input(Shape{1, side, side}, image.pixels);

  Tensor h = ops::pad2d(g, input, static_cast<std::size_t>(config_.count_blocks()));
  Tensor shared;
  for (std::size_t i = 0; i < count_blocks_.size(); ++i) {
    const DualBlock& b = count_blocks_[i];
    h = lrelu(g, ops::concat_channels(g, apply(g, b.k3, h), apply(g, b.k1, h)));
    if (i == 0) shared = h;
  }
  ModelOutput out;
  out.count_map = ops::softplus(g, apply(g, count_out_, h));

  if (mode == ForwardMode::count_only) {
    out.hist = Tensor(Shape{static_cast<std::size_t>(config_.bins)});
    return out;
  }

  Tensor x = shared;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const ResStage& st = stages_[s];
    x = ops::max_pool2d(g, x, 2);
    if (st.proj) x = lrelu(g, apply(g, *st.proj, x));
    Tensor y = lrelu(g, apply(g, st.first, x));
    y = apply(g, st.second, y);
    x = lrelu(g, ops::add(g, x, y));
    if (s == 0 && side2_) out.hist2 = run_side_head(g, *side2_, x);
    if (s == 1 && side4_) out.hist4 = run_side_head(g, *side4_, x);
  }
  x = lrelu(g, apply(g, head_conv3_, x));
  x = lrelu(g, apply(g, head_conv1_, x));
  Tensor v = lrelu(g, apply(g, head_fc1_, ops::flatten(g, x)));
  v = ops::dropout(g, v, config_.dropout, training, rng);
  out.hist = ops::softplus(g, apply(g, head_fc2_, v));
  return out;
}

void HistoNet::zero_grad() {
  for (Parameter& p : params_) p.tensor.zero_grad();
}

std::vector<tk::NamedTensor> HistoNet::state() const {
  std::vector<tk::NamedTensor> out;
  out.reserve(params_.size());
  for (const Parameter& p : params_) out.push_back({p.name, p.tensor});
  return out;
}

void HistoNet::load_state(const std::vector<tk::NamedTensor>& state) {
  if (state.size() != params_.size()) {
    throw DataError("checkpoint holds " + std::to_string(state.size()) + " tensors, model has " +
                    std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < state.size(); ++i) {
    Parameter& p = params_[i];
    if (state[i].name != p.name || state[i].tensor.shape() != p.tensor.shape()) {
      throw DataError("checkpoint tensor '" + state[i].name + "' " +
                      tk::shape_string(state[i].tensor.shape()) + " does not match parameter '" +
                      p.name + "' " + tk::shape_string(p.tensor.shape()));
    }
    std::copy(state[i].tensor.values().begin(), state[i].tensor.values().end(),
              p.tensor.values().begin());
  }
}

void HistoNet::save(const std::filesystem::path& path) const {
  const auto st = state();
  tk::write_checkpoint(path, st);
  std::ofstream os(path.string() + ".json", std::ios::trunc);
  if (!os) {
    throw DataError("cannot write " + path.string() + ".json");
  }
  os << to_json(config_).dump(2) << "\n";
}

HistoNet HistoNet::load(const std::filesystem::path& path) {
  const std::string sidecar = path.string() + ".json";
  std::ifstream is(sidecar);
  if (!is) {
    throw DataError("missing model config sidecar " + sidecar);
  }
  ModelConfig config;
  try {
    config = model_config_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(sidecar + ": " + e.what());
  }
  HistoNet net(config, 0);
  net.load_state(tk::read_checkpoint(path));
  return net;
}

}  // namespace histonet::model

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "histonet/model/output.hpp"
#include "histonet/scenegen/scene.hpp"
#include "histonet/tensorkit/checkpoint.hpp"
#include "histonet/tensorkit/graph.hpp"
#include "histonet/tensorkit/rng.hpp"

namespace histonet::model {

struct ModelConfig {
  int input_size = 64;
  int receptive_field = 9;
  // Per dual-kernel block of the count branch: parallel 3x3 and 1x1 widths.
  int count_width3 = 6;
  int count_width1 = 2;
  // Histogram branch: one entry per residual stage; each stage opens with a
  // 2x2 max pool.
  std::vector<int> hist_widths = {8, 12, 16};
  int head_conv3 = 16;   // 3x3 conv before the fully connected head
  int head_conv1 = 4;    // 1x1 conv before the fully connected head
  int head_hidden = 32;
  int side_conv3 = 8;
  int side_conv1 = 4;
  int side_hidden = 16;
  int bins = 8;
  bool dsn = false;
  double dropout = 0.3;
  double leaky_slope = 0.01;

  bool operator==(const ModelConfig&) const = default;

  int count_blocks() const { return (receptive_field - 1) / 2; }
  int map_size() const { return input_size + receptive_field - 1; }
};

/// Throws ConfigError when the configuration cannot be built.
void validate(const ModelConfig& config);
nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// 256 x 256 input, r = 33, 3x3x256 and 1x1x16 head convolutions.
ModelConfig full_scale_config();
/// H = 16, r = 5; small enough for exhaustive finite differences.
ModelConfig tiny_config();

enum class ParamGroup { count_branch, hist_branch, dsn_heads };
std::string_view to_string(ParamGroup group);

struct Parameter {
  std::string name;
  ParamGroup group;
  tk::Tensor tensor;
};

enum class ForwardMode { full, count_only };

/// Dual-branch counting/histogram network.
///
/// Count branch: zero-pad by (r-1)/2, then (r-1)/2 dual-kernel blocks
/// (parallel 3x3 and 1x1 convolutions, concatenated), then a 1x1 conv and
/// softplus. All convolutions are stride 1 with "same" padding, so the map
/// is (H+r-1)^2 and each output cell sees exactly an r x r input window.
///
/// Histogram branch: starts from the first dual-kernel block, runs pooled
/// residual stages, a 3x3 and a 1x1 conv, then FC -> dropout -> FC(B) ->
/// softplus. With dsn enabled, side heads after stages 1 and 2 predict the
/// 2- and 4-bin histograms.
class HistoNet {
 public:
  HistoNet(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<tk::Tensor> tensors() const;
  std::vector<tk::Tensor> tensors(ParamGroup group) const;
  std::size_t parameter_count() const;
  const tk::Tensor& parameter(const std::string& name) const;

  ModelOutput forward(tk::Graph& g, const scene::Image& image, bool training, Rng& rng,
                      ForwardMode mode = ForwardMode::full) const;

  void zero_grad();

  std::vector<tk::NamedTensor> state() const;
  /// Copies values into the existing parameter tensors; names and shapes
  /// must match exactly.
  void load_state(const std::vector<tk::NamedTensor>& state);

  /// Writes `path` (HNET1 checkpoint) and `path` + ".json" (ModelConfig).
  void save(const std::filesystem::path& path) const;
  static HistoNet load(const std::filesystem::path& path);

 private:
  struct Conv {
    tk::Tensor weight, bias;
    std::size_t pad = 0;
  };
  struct Dense {
    tk::Tensor weight, bias;
  };
  struct DualBlock {
    Conv k3, k1;
  };
  struct ResStage {
    std::optional<Conv> proj;
    Conv first, second;
  };
  struct SideHead {
    std::size_t pool = 1;
    Conv c3, c1;
    Dense fc1, fc2;
  };

  Conv make_conv(const std::string& name, ParamGroup group, int cin, int cout, int k);
  Dense make_dense(const std::string& name, ParamGroup group, int in, int out);
  SideHead make_side_head(const std::string& name, int channels, int side, int outputs);

  tk::Tensor apply(tk::Graph& g, const Conv& c, const tk::Tensor& x) const;
  tk::Tensor apply(tk::Graph& g, const Dense& d, const tk::Tensor& x) const;
  tk::Tensor lrelu(tk::Graph& g, const tk::Tensor& x) const;
  tk::Tensor run_side_head(tk::Graph& g, const SideHead& head, const tk::Tensor& x) const;

  ModelConfig config_;
  std::uint64_t seed_;
  std::vector<Parameter> params_;

  std::vector<DualBlock> count_blocks_;
  Conv count_out_;
  std::vector<ResStage> stages_;
  Conv head_conv3_, head_conv1_;
  Dense head_fc1_, head_fc2_;
  std::optional<SideHead> side2_, side4_;
};

}  // namespace histonet::model

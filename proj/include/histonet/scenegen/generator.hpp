#pragma once

#include <cstdint>

#include "histonet/scenegen/scene.hpp"

namespace histonet::scene {

/// Gaussian sampled then clipped into [min, max].
struct ClippedGaussian {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;

  bool operator==(const ClippedGaussian&) const = default;
};

/// Synthetic ellipse-scene parameters. The defaults equal desk_config(64):
/// the 256 x 256 reference statistics (count 44.8 +- 20.8, size
/// 94.5 +- 63.2 px) shrunk by 4 in each direction, so counts are unchanged
/// and sizes scale with image area.
struct GenConfig {
  int width = 64;
  int height = 64;
  ClippedGaussian count{44.8, 20.8, 1.0, 4.0 * 44.8};
  ClippedGaussian area{94.5 / 16.0, 63.2 / 16.0, 2.0, (94.5 + 4.0 * 63.2) / 16.0};
  // Minor/major axis ratio range; small values give thin ellipses.
  double min_axis_ratio = 0.3;
  double max_axis_ratio = 0.8;
  double fg_min = 0.6;
  double fg_max = 1.0;
  double bg_mean = 0.15;
  double bg_stddev = 0.05;
  // Minimum distance between instance centres; 0 leaves overlap uncontrolled.
  double min_center_distance = 0.0;

  bool operator==(const GenConfig&) const = default;
};

/// Throws ConfigError when no scene can satisfy the configuration.
void validate(const GenConfig& config);

/// Reference 256 x 256 statistics with geometry scaled to a side x side
/// image: count moments unchanged, area moments times (side / 256)^2. The
/// lower area clip is 8 px at full scale and never below 2 px.
GenConfig desk_config(int side = 64);

/// Full-scale reference configuration (256 x 256).
GenConfig full_scale_config();

/// Per-scene seed derived from a dataset seed and a scene index.
std::uint64_t scene_seed(std::uint64_t master_seed, std::size_t index);

Scene sample_scene(const GenConfig& config, std::uint64_t seed);

/// Renders the scene. Background is Gaussian texture, each instance a
/// constant intensity, overlaps resolved by max. Values are quantized to
/// multiples of 1/255 so they survive 8-bit storage exactly. The output is
/// a pure function of (scene, config).
Image rasterize(const Scene& scene, const GenConfig& config);

}  // namespace histonet::scene

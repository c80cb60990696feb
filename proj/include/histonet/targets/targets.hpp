#pragma once

#include <span>
#include <vector>

#include "histonet/scenegen/generator.hpp"
#include "histonet/scenegen/scene.hpp"

namespace histonet::targets {

/// Redundant count map: each cell counts the instance centres inside an
/// r x r window, so every instance is counted r^2 times.
struct CountMap {
  int r = 1;
  int width = 0;   // W + r - 1
  int height = 0;  // H + r - 1
  std::vector<double> grid;

  double at(int x, int y) const { return grid[static_cast<std::size_t>(y) * width + x]; }
};

/// Full cross-correlation of the centre-indicator image with an r x r ones
/// kernel. Throws ConfigError for even r or r >= min(H, W).
CountMap build_count_map(const scene::Scene& scene, int r);

/// sum(grid) / r^2.
double count_from_map(std::span<const double> grid, int r);
inline double count_from_map(const CountMap& map) { return count_from_map(map.grid, map.r); }

/// Nested size histograms over [0, s_max): 16 uniform bins on area_px
/// (areas >= s_max land in the last bin), coarser levels by pairwise merge.
struct BinLadder {
  double s_max = 0.0;
  std::vector<double> hist16;
  std::vector<double> hist8;
  std::vector<double> hist4;
  std::vector<double> hist2;

  /// The level with `bins` bins (2, 4, 8 or 16).
  const std::vector<double>& level(int bins) const;
};

BinLadder build_histograms(const scene::Scene& scene, double s_max);

/// Sums adjacent pairs; input length must be even.
std::vector<double> merge_pairs(std::span<const double> hist);

/// bins + 1 uniform edges on [0, s_max].
std::vector<double> bin_edges(double s_max, int bins);

/// Weights proportional to bin centres, normalized to sum to one.
std::vector<double> bin_weights(std::span<const double> edges);

/// mean + 4 sigma of the configured area distribution rounded up to a
/// multiple of 16 so that every ladder level has integer-width bins.
double default_s_max(const scene::ClippedGaussian& area);

}  // namespace histonet::targets

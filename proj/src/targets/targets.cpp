#include "histonet/targets/targets.hpp"

#include <algorithm>
#include <cmath>

#include "histonet/errors.hpp"

namespace histonet::targets {

CountMap build_count_map(const scene::Scene& scene, int r) {
  if (r <= 0 || r % 2 == 0) {
    throw ConfigError("count map receptive field must be a positive odd integer, got " +
                      std::to_string(r));
  }
  if (r >= std::min(scene.width, scene.height)) {
    throw ConfigError("count map receptive field must be smaller than the image");
  }
  CountMap map;
  map.r = r;
  map.width = scene.width + r - 1;
  map.height = scene.height + r - 1;
  map.grid.assign(static_cast<std::size_t>(map.width) * map.height, 0.0);
  for (const scene::EllipseInstance& e : scene.instances) {
    const int px = scene::center_pixel(e.cx);
    const int py = scene::center_pixel(e.cy);
    for (int y = py; y < py + r; ++y) {
      double* row = map.grid.data() + static_cast<std::size_t>(y) * map.width;
      for (int x = px; x < px + r; ++x) {
        row[x] += 1.0;
      }
    }
  }
  return map;
}

double count_from_map(std::span<const double> grid, int r) {
  double s = 0.0;
  for (double v : grid) s += v;
  return s / (static_cast<double>(r) * r);
}

const std::vector<double>& BinLadder::level(int bins) const {
  switch (bins) {
    case 16: return hist16;
    case 8: return hist8;
    case 4: return hist4;
    case 2: return hist2;
    default:
      throw DimensionError("bin ladder has no level with " + std::to_string(bins) + " bins");
  }
}

std::vector<double> merge_pairs(std::span<const double> hist) {
  if (hist.size() % 2 != 0) {
    throw DimensionError("merge_pairs: odd histogram length");
  }
  std::vector<double> out(hist.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = hist[2 * i] + hist[2 * i + 1];
  }
  return out;
}

BinLadder build_histograms(const scene::Scene& scene, double s_max) {
  if (!(s_max > 0.0)) {
    throw ConfigError("histogram range s_max must be positive");
  }
  BinLadder ladder;
  ladder.s_max = s_max;
  ladder.hist16.assign(16, 0.0);
  const double width = s_max / 16.0;
  for (const scene::EllipseInstance& e : scene.instances) {
    const auto bin = static_cast<std::size_t>(
        std::min(15.0, std::floor(static_cast<double>(e.area_px) / width)));
    ladder.hist16[bin] += 1.0;
  }
  ladder.hist8 = merge_pairs(ladder.hist16);
  ladder.hist4 = merge_pairs(ladder.hist8);
  ladder.hist2 = merge_pairs(ladder.hist4);
  return ladder;
}

std::vector<double> bin_edges(double s_max, int bins) {
  if (bins < 1) {
    throw ConfigError("bin_edges: need at least one bin");
  }
  std::vector<double> edges(static_cast<std::size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) {
    edges[static_cast<std::size_t>(i)] = s_max * i / bins;
  }
  return edges;
}

std::vector<double> bin_weights(std::span<const double> edges) {
  if (edges.size() < 2) {
    throw ConfigError("bin_weights: need at least one bin");
  }
  std::vector<double> centers(edges.size() - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    centers[i] = 0.5 * (edges[i] + edges[i + 1]);
    total += centers[i];
  }
  if (!(total > 0.0)) {
    throw ConfigError("bin_weights: bin centres must have a positive sum");
  }
  for (double& c : centers) c /= total;
  return centers;
}

double default_s_max(const scene::ClippedGaussian& area) {
  return std::ceil((area.mean + 4.0 * area.stddev) / 16.0) * 16.0;
}

}  // namespace histonet::targets

#include "histonet/scenegen/generator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "histonet/errors.hpp"
#include "histonet/tensorkit/rng.hpp"

namespace histonet::scene {

bool covers_pixel(const EllipseInstance& e, int x, int y) {
  const double dx = x + 0.5 - e.cx;
  const double dy = y + 0.5 - e.cy;
  const double c = std::cos(e.theta);
  const double s = std::sin(e.theta);
  const double u = (dx * c + dy * s) / e.a;
  const double v = (-dx * s + dy * c) / e.b;
  return u * u + v * v <= 1.0;
}

namespace {

struct PixelBox {
  int x0, x1, y0, y1;  // inclusive bounds, already clipped
};

PixelBox bounding_box(const EllipseInstance& e, int width, int height) {
  const double r = e.a + 1.0;
  return {std::max(0, static_cast<int>(std::floor(e.cx - r))),
          std::min(width - 1, static_cast<int>(std::ceil(e.cx + r))),
          std::max(0, static_cast<int>(std::floor(e.cy - r))),
          std::min(height - 1, static_cast<int>(std::ceil(e.cy + r)))};
}

// Centres sit on odd multiples of 1/2048 px: never on a pixel edge, and
// every flip/rotation of the image maps them exactly onto the same grid.
double quantized_coordinate(Rng& rng, int extent) {
  const double steps = 1024.0 * extent;
  const double k = std::min(std::floor(rng.uniform() * steps), steps - 1.0);
  return (k + 0.5) / 1024.0;
}

double draw(Rng& rng, const ClippedGaussian& g) {
  const double v = g.stddev > 0.0 ? rng.normal(g.mean, g.stddev) : g.mean;
  return std::clamp(v, g.min, g.max);
}

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

}  // namespace

std::int64_t pixel_area(const EllipseInstance& e, int width, int height) {
  const PixelBox box = bounding_box(e, width, height);
  std::int64_t n = 0;
  for (int y = box.y0; y <= box.y1; ++y) {
    for (int x = box.x0; x <= box.x1; ++x) {
      n += covers_pixel(e, x, y) ? 1 : 0;
    }
  }
  return n;
}

void validate(const GenConfig& c) {
  auto check = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid generator config: ") + what);
  };
  check(c.width > 0 && c.height > 0, "image extents must be positive");
  for (const ClippedGaussian* g : {&c.count, &c.area}) {
    check(g->stddev >= 0.0, "standard deviations must be non-negative");
    check(g->min <= g->max, "min must not exceed max");
  }
  check(c.count.min >= 0.0, "count minimum must be non-negative");
  check(c.area.min > 0.0, "area minimum must be positive");
  check(c.area.min <= static_cast<double>(c.width) * c.height,
        "minimum object area exceeds the image area");
  check(c.min_axis_ratio > 0.0 && c.min_axis_ratio <= c.max_axis_ratio && c.max_axis_ratio <= 1.0,
        "axis ratio range must satisfy 0 < min <= max <= 1");
  check(c.fg_min >= 0.0 && c.fg_min <= c.fg_max && c.fg_max <= 1.0,
        "foreground intensity range must lie in [0,1]");
  check(c.bg_stddev >= 0.0, "background texture stddev must be non-negative");
  check(c.min_center_distance >= 0.0, "centre distance must be non-negative");
}

GenConfig desk_config(int side) {
  GenConfig c;
  c.width = side;
  c.height = side;
  const double scale = static_cast<double>(side) * side / (256.0 * 256.0);
  c.count = {44.8, 20.8, 1.0, 4.0 * 44.8};
  const double min_area = std::max(2.0, 8.0 * scale);
  // Below about 40 px the scaled upper clip falls under the 2 px floor.
  c.area = {94.5 * scale, 63.2 * scale, min_area, std::max(min_area, (94.5 + 4.0 * 63.2) * scale)};
  return c;
}

GenConfig full_scale_config() { return desk_config(256); }

std::uint64_t scene_seed(std::uint64_t master_seed, std::size_t index) {
  return Rng::mix(master_seed, index);
}

Scene sample_scene(const GenConfig& config, std::uint64_t seed) {
  validate(config);
  Rng rng(seed);
  Scene scene;
  scene.width = config.width;
  scene.height = config.height;
  scene.seed = seed;

  const auto count = static_cast<std::size_t>(std::llround(draw(rng, config.count)));
  constexpr int kMaxAttempts = 1000;
  scene.instances.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      const double target_area = draw(rng, config.area);
      const double ratio = rng.uniform(config.min_axis_ratio, config.max_axis_ratio);
      EllipseInstance e;
      e.a = std::sqrt(target_area / (std::numbers::pi * ratio));
      e.b = ratio * e.a;
      e.theta = rng.uniform(0.0, std::numbers::pi);
      e.cx = quantized_coordinate(rng, config.width);
      e.cy = quantized_coordinate(rng, config.height);
      if (config.min_center_distance > 0.0) {
        const bool too_close = std::any_of(
            scene.instances.begin(), scene.instances.end(), [&](const EllipseInstance& o) {
              return std::hypot(o.cx - e.cx, o.cy - e.cy) < config.min_center_distance;
            });
        if (too_close) continue;
      }
      e.area_px = pixel_area(e, config.width, config.height);
      if (e.area_px == 0) continue;
      scene.instances.push_back(e);
      placed = true;
    }
    if (!placed) {
      throw ConfigError("generator config unsatisfiable: could not place instance " +
                        std::to_string(i) + " after " + std::to_string(kMaxAttempts) + " attempts");
    }
  }
  return scene;
}

Image rasterize(const Scene& scene, const GenConfig& config) {
  Image img(scene.width, scene.height);
  Rng bg_rng = Rng(scene.seed).fork(1);
  Rng fg_rng = Rng(scene.seed).fork(2);
  for (double& p : img.pixels) {
    p = config.bg_stddev > 0.0 ? bg_rng.normal(config.bg_mean, config.bg_stddev) : config.bg_mean;
  }
  for (const EllipseInstance& e : scene.instances) {
    const double intensity = fg_rng.uniform(config.fg_min, config.fg_max);
    const PixelBox box = bounding_box(e, scene.width, scene.height);
    for (int y = box.y0; y <= box.y1; ++y) {
      for (int x = box.x0; x <= box.x1; ++x) {
        if (covers_pixel(e, x, y)) {
          img.at(x, y) = std::max(img.at(x, y), intensity);
        }
      }
    }
  }
  for (double& p : img.pixels) {
    p = quantize8(p);
  }
  return img;
}

}  // namespace histonet::scene

#include "histonet/scenegen/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "histonet/errors.hpp"

namespace histonet::scene {

namespace {

constexpr double kPi = std::numbers::pi;

double reflect_angle(double theta) { return theta == 0.0 ? 0.0 : kPi - theta; }

double quarter_turn_angle(double theta) {
  const double t = theta + kPi / 2.0;
  return t >= kPi ? t - kPi : t;
}

Image remap(const Image& src, int out_w, int out_h, auto&& source_of) {
  Image out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const auto [sx, sy] = source_of(x, y);
      out.at(x, y) = src.at(sx, sy);
    }
  }
  return out;
}

std::pair<Image, Scene> geometric(const Image& image, const Scene& scene, AugmentKind kind) {
  const int w = image.width;
  const int h = image.height;
  if (scene.width != w || scene.height != h) {
    throw DimensionError("augment: image and scene extents differ");
  }
  Scene out = scene;
  Image img;
  switch (kind) {
    case AugmentKind::hflip:
      img = remap(image, w, h, [&](int x, int y) { return std::pair{w - 1 - x, y}; });
      for (auto& e : out.instances) {
        e.cx = w - e.cx;
        e.theta = reflect_angle(e.theta);
      }
      break;
    case AugmentKind::vflip:
      img = remap(image, w, h, [&](int x, int y) { return std::pair{x, h - 1 - y}; });
      for (auto& e : out.instances) {
        e.cy = h - e.cy;
        e.theta = reflect_angle(e.theta);
      }
      break;
    case AugmentKind::rot180:
      img = remap(image, w, h, [&](int x, int y) { return std::pair{w - 1 - x, h - 1 - y}; });
      for (auto& e : out.instances) {
        e.cx = w - e.cx;
        e.cy = h - e.cy;
      }
      break;
    case AugmentKind::rot90:
      // (x, y) -> (y, w-1-x); the output is h wide and w tall.
      img = remap(image, h, w, [&](int x, int y) { return std::pair{w - 1 - y, x}; });
      for (auto& e : out.instances) {
        const double cx = e.cx;
        e.cx = e.cy;
        e.cy = w - cx;
        e.theta = quarter_turn_angle(e.theta);
      }
      std::swap(out.width, out.height);
      break;
    case AugmentKind::rot270:
      // (x, y) -> (h-1-y, x)
      img = remap(image, h, w, [&](int x, int y) { return std::pair{y, h - 1 - x}; });
      for (auto& e : out.instances) {
        const double cx = e.cx;
        e.cx = h - e.cy;
        e.cy = cx;
        e.theta = quarter_turn_angle(e.theta);
      }
      std::swap(out.width, out.height);
      break;
    default:
      throw ConfigError("augment: not a geometric kind");
  }
  return {std::move(img), std::move(out)};
}

}  // namespace

std::string_view to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::hflip: return "hflip";
    case AugmentKind::vflip: return "vflip";
    case AugmentKind::rot90: return "rot90";
    case AugmentKind::rot180: return "rot180";
    case AugmentKind::rot270: return "rot270";
    case AugmentKind::noise: return "noise";
    case AugmentKind::contrast: return "contrast";
  }
  return "unknown";
}

AugmentKind parse_augment_kind(std::string_view name) {
  for (AugmentKind k : {AugmentKind::hflip, AugmentKind::vflip, AugmentKind::rot90,
                        AugmentKind::rot180, AugmentKind::rot270, AugmentKind::noise,
                        AugmentKind::contrast}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown augmentation kind '" + std::string(name) + "'");
}

bool is_geometric(AugmentKind kind) {
  return kind != AugmentKind::noise && kind != AugmentKind::contrast;
}

Image add_noise(const Image& image, double sigma, Rng& rng) {
  if (sigma == 0.0) {
    return image;
  }
  Image out = image;
  for (double& p : out.pixels) {
    p = std::clamp(p + rng.normal(0.0, sigma), 0.0, 1.0);
  }
  return out;
}

Image scale_contrast(const Image& image, double gamma) {
  Image out = image;
  for (double& p : out.pixels) {
    p = std::clamp(p * gamma, 0.0, 1.0);
  }
  return out;
}

std::pair<Image, Scene> augment(const Image& image, const Scene& scene, AugmentKind kind,
                                Rng& rng) {
  switch (kind) {
    case AugmentKind::noise:
      return {add_noise(image, rng.uniform(0.0, 0.05), rng), scene};
    case AugmentKind::contrast:
      return {scale_contrast(image, rng.uniform(0.8, 1.2)), scene};
    default:
      return geometric(image, scene, kind);
  }
}

}  // namespace histonet::scene

#pragma once

#include <cstdint>
#include <vector>

namespace histonet::scene {

/// One annotated ellipse. Coordinates are continuous with pixel (x, y)
/// covering [x, x+1) x [y, y+1), so the pixel centre is (x + 0.5, y + 0.5).
struct EllipseInstance {
  double cx = 0.0;
  double cy = 0.0;
  double a = 1.0;      // semi-major axis, px
  double b = 1.0;      // semi-minor axis, px
  double theta = 0.0;  // orientation of the major axis, [0, pi)
  std::int64_t area_px = 0;

  bool operator==(const EllipseInstance&) const = default;
};

struct Scene {
  int width = 0;
  int height = 0;
  std::vector<EllipseInstance> instances;
  std::uint64_t seed = 0;

  bool operator==(const Scene&) const = default;
};

/// Grayscale image, row-major, values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const Image&) const = default;
};

/// Pixel holding the instance centre; this is the position used for counting.
inline int center_pixel(double c) { return static_cast<int>(c); }

/// Whether the centre of pixel (x, y) lies inside the ellipse.
bool covers_pixel(const EllipseInstance& e, int x, int y);

/// In-bounds pixel count of the ellipse rendered alone.
std::int64_t pixel_area(const EllipseInstance& e, int width, int height);

}  // namespace histonet::scene

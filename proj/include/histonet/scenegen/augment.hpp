#pragma once

#include <string>
#include <string_view>
#include <utility>

#include "histonet/scenegen/scene.hpp"
#include "histonet/tensorkit/rng.hpp"

namespace histonet::scene {

enum class AugmentKind { hflip, vflip, rot90, rot180, rot270, noise, contrast };

inline constexpr AugmentKind kGeometricKinds[] = {AugmentKind::hflip, AugmentKind::vflip,
                                                 AugmentKind::rot90, AugmentKind::rot180,
                                                 AugmentKind::rot270};

std::string_view to_string(AugmentKind kind);
/// Throws ConfigError for an unknown name.
AugmentKind parse_augment_kind(std::string_view name);
bool is_geometric(AugmentKind kind);

/// Geometric kinds move pixels and annotation coordinates together (area_px
/// is carried over unchanged). rot90 maps pixel (x, y) to (y, W-1-x).
/// Photometric kinds leave annotations untouched: noise adds N(0, s^2) with
/// s ~ U[0, 0.05], contrast multiplies by g ~ U[0.8, 1.2]; both clip to [0,1].
std::pair<Image, Scene> augment(const Image& image, const Scene& scene, AugmentKind kind,
                                Rng& rng);

Image add_noise(const Image& image, double sigma, Rng& rng);
Image scale_contrast(const Image& image, double gamma);

}  // namespace histonet::scene

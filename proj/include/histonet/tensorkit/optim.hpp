#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "histonet/tensorkit/rng.hpp"
#include "histonet/tensorkit/tensor.hpp"

namespace histonet::tk {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for an ordered parameter list.
struct AdamState {
  AdamConfig config;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  AdamState() = default;
  AdamState(AdamConfig cfg, std::span<const Tensor> params);
};

/// One bias-corrected Adam update of `params` from their grad buffers.
/// Parameters without an allocated grad are treated as having zero gradient.
/// Throws NumericError on a non-finite gradient, before touching anything.
void adam_step(std::span<Tensor> params, AdamState& state);

/// Glorot-uniform sample on [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_init(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace histonet::tk

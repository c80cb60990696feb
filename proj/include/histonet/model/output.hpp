#pragma once

#include <optional>

#include "histonet/tensorkit/tensor.hpp"

namespace histonet::model {

/// Forward-pass result. count_map is [1, H+r-1, W+r-1]; hist has B entries;
/// hist2 / hist4 are present only for deeply supervised models.
struct ModelOutput {
  tk::Tensor count_map;
  tk::Tensor hist;
  std::optional<tk::Tensor> hist2;
  std::optional<tk::Tensor> hist4;
};

}  // namespace histonet::model

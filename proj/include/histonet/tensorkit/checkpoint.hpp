#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "histonet/tensorkit/tensor.hpp"

namespace histonet::tk {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Checkpoint layout:
//   "HNET1\n"
//   one line per tensor: "<name> <d0>,<d1>,...\n"
//   "\n"
//   float64 little-endian payload, tensors in header order.
std::string encode_checkpoint(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

}  // namespace histonet::tk

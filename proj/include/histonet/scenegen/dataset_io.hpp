#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "histonet/scenegen/generator.hpp"
#include "histonet/scenegen/scene.hpp"

namespace histonet::scene {

inline constexpr const char* kDatasetFormatVersion = "1";

struct Dataset {
  GenConfig config;
  std::vector<Scene> scenes;
  std::vector<Image> images;

  std::size_t size() const { return scenes.size(); }
};

// Directory layout:
//   manifest.json              {format_version, scene_count, image_size, generator}
//   images/NNNNNN.pgm          binary P5, maxval 255, value = round(255 * intensity)
//   annotations/NNNNNN.json    {seed, instances: [{cx, cy, a, b, theta, area_px}]}
// Throws DataError (naming the offending path) on I/O or format problems.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

/// Generates n scenes with per-index seeds; scene i depends only on
/// (config, master_seed, i).
Dataset generate_dataset(const GenConfig& config, std::size_t n, std::uint64_t master_seed);

std::string encode_pgm(const Image& image);
Image decode_pgm(const std::string& bytes);

nlohmann::json to_json(const GenConfig& config);
GenConfig gen_config_from_json(const nlohmann::json& j);
nlohmann::json annotations_to_json(const Scene& scene);
Scene annotations_from_json(const nlohmann::json& j, int width, int height);

std::string index_name(std::size_t index);

}  // namespace histonet::scene

#include "histonet/scenegen/dataset_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "histonet/errors.hpp"

namespace histonet::scene {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw DataError("missing or unreadable file: " + path.string());
  }
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw DataError("cannot write file: " + path.string());
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) {
    throw DataError("failed writing file: " + path.string());
  }
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw DataError("cannot create directory: " + dir.string());
  }
}

json gaussian_json(const ClippedGaussian& g) {
  return {{"mean", g.mean}, {"std", g.stddev}, {"min", g.min}, {"max", g.max}};
}

ClippedGaussian gaussian_from_json(const json& j, const ClippedGaussian& fallback) {
  ClippedGaussian g = fallback;
  g.mean = j.value("mean", g.mean);
  g.stddev = j.value("std", g.stddev);
  g.min = j.value("min", g.min);
  g.max = j.value("max", g.max);
  return g;
}

std::size_t count_files(const fs::path& dir, const std::string& ext) {
  std::size_t n = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) ++n;
  }
  return n;
}

}  // namespace

std::string index_name(std::size_t index) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

json to_json(const GenConfig& c) {
  return {{"width", c.width},
          {"height", c.height},
          {"count", gaussian_json(c.count)},
          {"area", gaussian_json(c.area)},
          {"min_axis_ratio", c.min_axis_ratio},
          {"max_axis_ratio", c.max_axis_ratio},
          {"fg_min", c.fg_min},
          {"fg_max", c.fg_max},
          {"bg_mean", c.bg_mean},
          {"bg_std", c.bg_stddev},
          {"min_center_distance", c.min_center_distance}};
}

GenConfig gen_config_from_json(const json& j) {
  GenConfig c;
  c.width = j.value("width", c.width);
  c.height = j.value("height", c.height);
  if (j.contains("count")) c.count = gaussian_from_json(j.at("count"), c.count);
  if (j.contains("area")) c.area = gaussian_from_json(j.at("area"), c.area);
  c.min_axis_ratio = j.value("min_axis_ratio", c.min_axis_ratio);
  c.max_axis_ratio = j.value("max_axis_ratio", c.max_axis_ratio);
  c.fg_min = j.value("fg_min", c.fg_min);
  c.fg_max = j.value("fg_max", c.fg_max);
  c.bg_mean = j.value("bg_mean", c.bg_mean);
  c.bg_stddev = j.value("bg_std", c.bg_stddev);
  c.min_center_distance = j.value("min_center_distance", c.min_center_distance);
  return c;
}

json annotations_to_json(const Scene& scene) {
  json instances = json::array();
  for (const EllipseInstance& e : scene.instances) {
    instances.push_back({{"cx", e.cx},
                         {"cy", e.cy},
                         {"a", e.a},
                         {"b", e.b},
                         {"theta", e.theta},
                         {"area_px", e.area_px}});
  }
  return {{"seed", scene.seed}, {"instances", instances}};
}

Scene annotations_from_json(const json& j, int width, int height) {
  Scene s;
  s.width = width;
  s.height = height;
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const json& e : j.at("instances")) {
    s.instances.push_back({e.at("cx").get<double>(), e.at("cy").get<double>(),
                           e.at("a").get<double>(), e.at("b").get<double>(),
                           e.at("theta").get<double>(), e.at("area_px").get<std::int64_t>()});
  }
  return s;
}

std::string encode_pgm(const Image& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (double v : image.pixels) {
    const long q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

Image decode_pgm(const std::string& bytes) {
  std::istringstream is(bytes);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (!is || magic != "P5" || w <= 0 || h <= 0 || maxval != 255) {
    throw DataError("not an 8-bit binary PGM");
  }
  is.get();  // single whitespace after maxval
  const auto offset = static_cast<std::size_t>(is.tellg());
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() - offset != n) {
    throw DataError("PGM payload size mismatch");
  }
  Image img(w, h);
  for (std::size_t i = 0; i < n; ++i) {
    img.pixels[i] = static_cast<unsigned char>(bytes[offset + i]) / 255.0;
  }
  return img;
}

void write_dataset(const fs::path& dir, const Dataset& dataset) {
  if (dataset.images.size() != dataset.scenes.size()) {
    throw DataError("dataset has " + std::to_string(dataset.scenes.size()) + " scenes but " +
                    std::to_string(dataset.images.size()) + " images");
  }
  make_dir(dir / "images");
  make_dir(dir / "annotations");
  const json manifest = {{"format_version", kDatasetFormatVersion},
                         {"scene_count", dataset.size()},
                         {"image_size", {dataset.config.width, dataset.config.height}},
                         {"generator", to_json(dataset.config)}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const std::string stem = index_name(i);
    write_file(dir / "images" / (stem + ".pgm"), encode_pgm(dataset.images[i]));
    write_file(dir / "annotations" / (stem + ".json"),
               annotations_to_json(dataset.scenes[i]).dump(2) + "\n");
  }
}

Dataset read_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  json manifest;
  try {
    manifest = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  Dataset ds;
  std::size_t n = 0;
  try {
    if (manifest.at("format_version").get<std::string>() != kDatasetFormatVersion) {
      throw DataError(manifest_path.string() + ": unsupported format version");
    }
    n = manifest.at("scene_count").get<std::size_t>();
    ds.config = gen_config_from_json(manifest.at("generator"));
    const auto size = manifest.at("image_size");
    ds.config.width = size.at(0).get<int>();
    ds.config.height = size.at(1).get<int>();
  } catch (const json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }

  ds.scenes.reserve(n);
  ds.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string stem = index_name(i);
    const fs::path img_path = dir / "images" / (stem + ".pgm");
    const fs::path ann_path = dir / "annotations" / (stem + ".json");
    Image img;
    try {
      img = decode_pgm(read_file(img_path));
    } catch (const DataError& e) {
      throw DataError(img_path.string() + ": " + e.what());
    }
    if (img.width != ds.config.width || img.height != ds.config.height) {
      throw DataError(img_path.string() + ": image size differs from manifest");
    }
    const std::string ann_text = read_file(ann_path);
    try {
      ds.scenes.push_back(
          annotations_from_json(json::parse(ann_text), ds.config.width, ds.config.height));
    } catch (const json::exception& e) {
      throw DataError(ann_path.string() + ": " + e.what());
    }
    ds.images.push_back(std::move(img));
  }
  for (const char* sub : {"images", "annotations"}) {
    const fs::path p = dir / sub;
    if (!fs::is_directory(p)) {
      throw DataError("missing directory: " + p.string());
    }
    const std::size_t found = count_files(p, std::string(sub) == "images" ? ".pgm" : ".json");
    if (found != n) {
      throw DataError(p.string() + ": manifest declares " + std::to_string(n) + " scenes, found " +
                      std::to_string(found) + " files");
    }
  }

  return ds;
}

Dataset generate_dataset(const GenConfig& config, std::size_t n, std::uint64_t master_seed) {
  Dataset ds;
  ds.config = config;
  ds.scenes.reserve(n);
  ds.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.scenes.push_back(sample_scene(config, scene_seed(master_seed, i)));
    ds.images.push_back(rasterize(ds.scenes.back(), config));
  }
  return ds;
}

}  // namespace histonet::scene

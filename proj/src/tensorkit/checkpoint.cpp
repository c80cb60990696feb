#include "histonet/tensorkit/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "histonet/errors.hpp"

namespace histonet::tk {

namespace {

constexpr std::string_view kMagic = "HNET1\n";

void put_le64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffU));
  }
}

double get_le64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) {
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<double>(bits);
}

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw DataError("checkpoint: malformed shape '" + text + "'");
    }
    shape.push_back(std::stoull(item));
  }
  if (shape.empty()) {
    throw DataError("checkpoint: empty shape");
  }
  return shape;
}

}  // namespace

std::string encode_checkpoint(std::span<const NamedTensor> tensors) {
  std::string out(kMagic);
  for (const NamedTensor& nt : tensors) {
    if (nt.name.empty() || nt.name.find_first_of(" \t\n") != std::string::npos) {
      throw DataError("checkpoint: invalid tensor name '" + nt.name + "'");
    }
    out += nt.name;
    out += ' ';
    const Shape& s = nt.tensor.shape();
    for (std::size_t i = 0; i < s.size(); ++i) {
      out += (i ? "," : "") + std::to_string(s[i]);
    }
    out += '\n';
  }
  out += '\n';
  for (const NamedTensor& nt : tensors) {
    for (double v : nt.tensor.values()) {
      put_le64(out, v);
    }
  }
  return out;
}

std::vector<NamedTensor> decode_checkpoint(const std::string& bytes) {
  if (bytes.compare(0, kMagic.size(), kMagic) != 0) {
    throw DataError("checkpoint: bad magic");
  }
  std::size_t pos = kMagic.size();
  std::vector<std::pair<std::string, Shape>> header;
  while (true) {
    const std::size_t eol = bytes.find('\n', pos);
    if (eol == std::string::npos) {
      throw DataError("checkpoint: unterminated header");
    }
    const std::string line = bytes.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) break;
    const std::size_t sp = line.find(' ');
    if (sp == std::string::npos || sp == 0) {
      throw DataError("checkpoint: malformed header line '" + line + "'");
    }
    header.emplace_back(line.substr(0, sp), parse_shape(line.substr(sp + 1)));
  }
  std::size_t expected = 0;
  for (const auto& [name, shape] : header) expected += shape_size(shape);
  if (bytes.size() - pos != expected * 8) {
    throw DataError("checkpoint: payload holds " + std::to_string((bytes.size() - pos) / 8) +
                    " values, header declares " + std::to_string(expected));
  }
  std::vector<NamedTensor> out;
  out.reserve(header.size());
  for (auto& [name, shape] : header) {
    std::vector<double> values(shape_size(shape));
    for (double& v : values) {
      v = get_le64(bytes.data() + pos);
      pos += 8;
    }
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  const std::string bytes = encode_checkpoint(tensors);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw DataError("cannot write checkpoint " + path.string());
  }
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) {
    throw DataError("failed writing checkpoint " + path.string());
  }
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw DataError("cannot open checkpoint " + path.string());
  }
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace histonet::tk

#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "robustfield/common.hpp"

namespace robustfield {

namespace detail {

inline void write_p6(const std::filesystem::path& path, int height, int width,
                     const std::vector<std::uint8_t>& rgb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open '" + path.string() + "' for writing");
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out) throw RuntimeFailure("write failed for '" + path.string() + "'");
}

inline std::string next_token(std::istream& in) {
  std::string tok;
  int ch = in.get();
  while (ch != EOF) {
    if (ch == '#') {
      while (ch != EOF && ch != '\n') ch = in.get();
    } else if (std::isspace(ch)) {
      if (!tok.empty()) break;
    } else {
      tok.push_back(static_cast<char>(ch));
    }
    ch = in.get();
  }
  return tok;
}

}  // namespace detail

/// Binary P6 PPM, 8 bits per channel.
inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(img.size() * 3);
  for (const Rgb& c : img.values()) {
    bytes.push_back(to_byte(c.x));
    bytes.push_back(to_byte(c.y));
    bytes.push_back(to_byte(c.z));
  }
  detail::write_p6(path, img.height(), img.width(), bytes);
}

/// Writes a binary mask as a gray P6 image (0 -> 0, nonzero -> 255).
inline void write_mask_ppm(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(mask.size() * 3);
  for (std::uint8_t v : mask.values()) {
    const std::uint8_t b = v ? 255 : 0;
    bytes.insert(bytes.end(), {b, b, b});
  }
  detail::write_p6(path, mask.height(), mask.width(), bytes);
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("missing image file '" + path.string() + "'");
  if (detail::next_token(in) != "P6") throw LoadError("'" + path.string() + "' is not a P6 PPM");
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(detail::next_token(in));
    height = std::stoi(detail::next_token(in));
    maxval = std::stoi(detail::next_token(in));
  } catch (const std::exception&) {
    throw LoadError("malformed PPM header in '" + path.string() + "'");
  }
  if (width <= 0 || height <= 0 || maxval != 255)
    throw LoadError("unsupported PPM header in '" + path.string() + "'");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(width) * height * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw LoadError("truncated PPM data in '" + path.string() + "'");
  Image img(height, width);
  for (std::size_t i = 0; i < img.size(); ++i)
    img.values()[i] = {from_byte(bytes[3 * i]), from_byte(bytes[3 * i + 1]),
                       from_byte(bytes[3 * i + 2])};
  return img;
}

/// Reads a 0/255 mask written by write_mask_ppm; any nonzero red channel is 1.
inline BinaryMask read_mask_ppm(const std::filesystem::path& path) {
  const Image img = read_ppm(path);
  BinaryMask mask(img.height(), img.width(), 0);
  for (std::size_t i = 0; i < img.size(); ++i) mask.values()[i] = img.values()[i].x > 0.0 ? 1 : 0;
  return mask;
}

}  // namespace robustfield

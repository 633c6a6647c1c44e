#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "sssl/error.hpp"

namespace sssl {

// Row-major RGB image with values in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;  // height * width * 3

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w * 3, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

  bool operator==(const Image&) const = default;
};

namespace detail {

// Reads one whitespace/comment-delimited ASCII integer from a PNM header.
inline std::size_t pnm_header_int(const std::string& bytes, std::size_t& pos, const std::string& path) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  std::size_t value = 0;
  while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
    value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    if (value > (1u << 24)) fail(errc::format, path + ": header value too large at byte " + std::to_string(start));
    ++pos;
  }
  if (pos == start) fail(errc::format, path + ": expected integer in header at byte " + std::to_string(start));
  return value;
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::io, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(errc::io, "write failed for " + path);
}

}  // namespace detail

// Binary P6, maxval 255. Errors carry the byte offset where parsing stopped.
inline Image decode_ppm(const std::string& bytes, const std::string& path = "<memory>") {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    fail(errc::format, path + ": bad magic at byte 0 (expected P6)");
  std::size_t pos = 2;
  const std::size_t width = detail::pnm_header_int(bytes, pos, path);
  const std::size_t height = detail::pnm_header_int(bytes, pos, path);
  const std::size_t maxval_at = pos;
  const std::size_t maxval = detail::pnm_header_int(bytes, pos, path);
  if (maxval != 255) fail(errc::format, path + ": maxval " + std::to_string(maxval) + " != 255 near byte " +
                                            std::to_string(maxval_at));
  if (width == 0 || height == 0) fail(errc::format, path + ": zero image dimension");
  if (pos >= bytes.size()) fail(errc::format, path + ": truncated header at byte " + std::to_string(pos));
  ++pos;  // single whitespace byte before the raster
  const std::size_t need = width * height * 3;
  if (bytes.size() - pos < need)
    fail(errc::format, path + ": truncated payload at byte " + std::to_string(bytes.size()) + " (need " +
                           std::to_string(pos + need) + ")");
  Image img(height, width);
  for (std::size_t i = 0; i < need; ++i)
    img.pixels[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
  return img;
}

inline Image load_ppm(const std::string& path) { return decode_ppm(detail::read_file_bytes(path), path); }

inline unsigned char quantize_unit(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(c * 255.0f + 0.5f);
}

inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + img.pixels.size());
  for (float v : img.pixels) out.push_back(static_cast<char>(quantize_unit(v)));
  return out;
}

inline void save_ppm(const Image& img, const std::string& path) { detail::write_file_bytes(path, encode_ppm(img)); }

// Binary P5 greyscale, maxval 255; values in [0,1].
inline void save_pgm(const std::vector<float>& values, std::size_t height, std::size_t width, const std::string& path) {
  if (values.size() != height * width) fail(errc::invalid_argument, "pgm: value count does not match size");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (float v : values) out.push_back(static_cast<char>(quantize_unit(v)));
  detail::write_file_bytes(path, out);
}

}  // namespace sssl

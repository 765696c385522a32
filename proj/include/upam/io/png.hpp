#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "upam/core/error.hpp"

namespace upam::io {

struct RgbImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + 3 * (y * width + x); }
  const std::uint8_t* at(std::size_t x, std::size_t y) const { return pixels.data() + 3 * (y * width + x); }
};

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

inline void chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& data) {
  put_be32(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  put_be32(out, static_cast<std::uint32_t>(crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start))));
}

}  // namespace detail

/// 8-bit RGB PNG, filter type 0 on every row, zlib level 9.
inline std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height * 3)
    throw ShapeError("encode_png: pixel buffer does not match image size");
  std::vector<std::uint8_t> raw;
  raw.reserve((img.width * 3 + 1) * img.height);
  for (std::size_t y = 0; y < img.height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), img.at(0, y), img.at(0, y) + img.width * 3);
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(len);
  if (compress2(z.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw IoError("encode_png: deflate failed");
  z.resize(len);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
  detail::chunk(out, "IHDR", ihdr);
  detail::chunk(out, "IDAT", z);
  detail::chunk(out, "IEND", {});
  return out;
}

/// Inverse of encode_png for images it produced (filter 0 only).
inline RgbImage decode_png(const std::vector<std::uint8_t>& bytes) {
  auto be32 = [&](std::size_t p) {
    return (std::uint32_t(bytes[p]) << 24) | (std::uint32_t(bytes[p + 1]) << 16) | (std::uint32_t(bytes[p + 2]) << 8) | bytes[p + 3];
  };
  if (bytes.size() < 8 || bytes[0] != 0x89 || bytes[1] != 'P') throw DataError("decode_png: not a PNG");
  RgbImage img;
  std::vector<std::uint8_t> z;
  for (std::size_t p = 8; p + 12 <= bytes.size();) {
    const std::uint32_t n = be32(p);
    const std::string type(bytes.begin() + static_cast<std::ptrdiff_t>(p + 4), bytes.begin() + static_cast<std::ptrdiff_t>(p + 8));
    if (p + 12 + n > bytes.size()) throw DataError("decode_png: truncated chunk");
    if (type == "IHDR") {
      img.width = be32(p + 8);
      img.height = be32(p + 12);
      if (bytes[p + 16] != 8 || bytes[p + 17] != 2) throw DataError("decode_png: only 8-bit RGB is supported");
    } else if (type == "IDAT") {
      z.insert(z.end(), bytes.begin() + static_cast<std::ptrdiff_t>(p + 8), bytes.begin() + static_cast<std::ptrdiff_t>(p + 8 + n));
    }
    p += 12 + n;
  }
  std::vector<std::uint8_t> raw((img.width * 3 + 1) * img.height);
  uLongf len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &len, z.data(), static_cast<uLong>(z.size())) != Z_OK || len != raw.size())
    throw DataError("decode_png: bad image data");
  img.pixels.reserve(img.width * img.height * 3);
  for (std::size_t y = 0; y < img.height; ++y) {
    const auto* row = raw.data() + y * (img.width * 3 + 1);
    if (row[0] != 0) throw DataError("decode_png: unsupported row filter");
    img.pixels.insert(img.pixels.end(), row + 1, row + 1 + img.width * 3);
  }
  return img;
}

inline void write_png(const std::filesystem::path& path, const RgbImage& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace upam::io

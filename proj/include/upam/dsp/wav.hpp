#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "upam/core/error.hpp"

namespace upam::dsp {

struct WavData {
  std::uint32_t sample_rate = 0;
  std::vector<double> samples;  // scaled to [-1, 1)
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t read_u16le(const unsigned char* p) { return std::uint16_t(p[0] | (p[1] << 8)); }

inline void put_u32le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}
inline void put_u16le(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

}  // namespace detail

/// Decode a RIFF/WAVE buffer. Only mono 16-bit signed PCM is accepted.
inline WavData decode_wav(const std::vector<unsigned char>& buf, const std::string& name = "<buffer>") {
  using detail::read_u16le;
  using detail::read_u32le;
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw DataError(name + ": not a RIFF/WAVE file");

  bool have_fmt = false;
  WavData out;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* hdr = buf.data() + pos;
    const std::uint32_t size = read_u32le(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + size > buf.size()) throw DataError(name + ": truncated chunk");
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16) throw DataError(name + ": fmt chunk too small");
      const unsigned char* f = buf.data() + body;
      const auto format = read_u16le(f);
      const auto channels = read_u16le(f + 2);
      out.sample_rate = read_u32le(f + 4);
      const auto bits = read_u16le(f + 14);
      if (format != 1) throw DataError(name + ": only PCM WAV is supported");
      if (channels != 1) throw DataError(name + ": only mono WAV is supported");
      if (bits != 16) throw DataError(name + ": only 16-bit PCM is supported");
      if (out.sample_rate == 0) throw DataError(name + ": zero sample rate");
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) throw DataError(name + ": data chunk before fmt chunk");
      const std::size_t n = size / 2;
      out.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto raw = static_cast<std::int16_t>(read_u16le(buf.data() + body + 2 * i));
        out.samples[i] = static_cast<double>(raw) / 32768.0;
      }
      return out;
    }
    pos = body + size + (size & 1);
  }
  throw DataError(name + ": missing data chunk");
}

inline WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(buf, path.string());
}

/// Samples are scaled by 32768, rounded and clipped to the 16-bit range.
inline std::vector<unsigned char> encode_wav(const std::vector<double>& samples, std::uint32_t sample_rate) {
  using detail::put_u16le;
  using detail::put_u32le;
  std::vector<unsigned char> out;
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out.reserve(44 + data_bytes);
  for (char c : std::string("RIFF")) out.push_back(static_cast<unsigned char>(c));
  put_u32le(out, 36 + data_bytes);
  for (char c : std::string("WAVEfmt ")) out.push_back(static_cast<unsigned char>(c));
  put_u32le(out, 16);
  put_u16le(out, 1);
  put_u16le(out, 1);
  put_u32le(out, sample_rate);
  put_u32le(out, sample_rate * 2);
  put_u16le(out, 2);
  put_u16le(out, 16);
  for (char c : std::string("data")) out.push_back(static_cast<unsigned char>(c));
  put_u32le(out, data_bytes);
  for (double s : samples) {
    const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    put_u16le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

inline void write_wav(const std::filesystem::path& path, const std::vector<double>& samples, std::uint32_t sample_rate) {
  const auto bytes = encode_wav(samples, sample_rate);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace upam::dsp

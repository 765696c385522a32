#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "upam/core/error.hpp"
#include "upam/dsp/types.hpp"

namespace upam::dsp {

static_assert(std::endian::native == std::endian::little, "cache format assumes a little-endian host");

// Cache layout: one JSON header line {M, N, L, b, fs, clip_id, index, label}
// followed by M*N float32 LE values, frequency-major.
inline void write_spectrogram(std::ostream& out, const Spectrogram& s) {
  nlohmann::json hdr = {{"M", s.bins},        {"N", s.frames},         {"L", s.window_len},
                        {"b", s.hop_samples}, {"fs", s.sample_rate},   {"clip_id", s.clip_id},
                        {"index", s.index},   {"label", s.label}};
  out << hdr.dump() << '\n';
  out.write(reinterpret_cast<const char*>(s.values.data()), static_cast<std::streamsize>(s.values.size() * sizeof(float)));
}

inline Spectrogram read_spectrogram(std::istream& in, const std::string& name = "<stream>") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(name + ": missing spectrogram header");
  nlohmann::json hdr;
  try {
    hdr = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(name + ": bad spectrogram header: " + e.what());
  }
  Spectrogram s;
  s.bins = hdr.at("M").get<std::size_t>();
  s.frames = hdr.at("N").get<std::size_t>();
  s.window_len = hdr.at("L").get<std::size_t>();
  s.hop_samples = hdr.at("b").get<std::size_t>();
  s.sample_rate = hdr.at("fs").get<double>();
  s.clip_id = hdr.at("clip_id").get<std::string>();
  s.index = hdr.at("index").get<std::size_t>();
  s.label = hdr.at("label").get<int>();
  s.freq_resolution = s.window_len ? s.sample_rate / static_cast<double>(s.window_len) : 0.0;
  s.values.resize(s.bins * s.frames);
  in.read(reinterpret_cast<char*>(s.values.data()), static_cast<std::streamsize>(s.values.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(s.values.size() * sizeof(float)))
    throw DataError(name + ": truncated spectrogram payload");
  return s;
}

inline void save_spectrogram(const std::filesystem::path& path, const Spectrogram& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_spectrogram(out, s);
}

inline Spectrogram load_spectrogram(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_spectrogram(in, path.string());
}

}  // namespace upam::dsp

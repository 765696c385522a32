#pragma once

#include <bit>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upam/core/error.hpp"
#include "upam/model/arpan.hpp"

namespace upam::model {

inline constexpr int kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

// Layout: one JSON header line {format, version, config, tensors:[{name, shape,
// offset, bytes}]} followed by float32 LE tensor data in manifest order.
template <typename T>
void write_checkpoint(std::ostream& out, Model<T>& model) {
  nlohmann::json hdr;
  hdr["format"] = "upam-checkpoint";
  hdr["version"] = kCheckpointVersion;
  hdr["config"] = model.config();
  auto tensors = model.net().named_tensors();
  std::size_t offset = 0;
  for (const auto& nt : tensors) {
    const std::size_t bytes = nt.tensor->size() * sizeof(float);
    hdr["tensors"].push_back({{"name", nt.name}, {"shape", nt.tensor->shape()}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  out << hdr.dump() << '\n';
  for (const auto& nt : tensors) {
    std::vector<float> buf(nt.tensor->values().begin(), nt.tensor->values().end());
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

template <typename T>
void save_checkpoint(Model<T>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  write_checkpoint(out, model);
  if (!out) throw IoError("short write to checkpoint " + path.string());
}

namespace detail {

inline nlohmann::json read_checkpoint_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint: missing header");
  nlohmann::json hdr;
  try {
    hdr = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::corrupt, std::string("checkpoint: unreadable header: ") + e.what());
  }
  if (hdr.value("format", "") != "upam-checkpoint")
    throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint: not a upam checkpoint");
  if (hdr.value("version", -1) != kCheckpointVersion)
    throw CheckpointError(CheckpointError::Kind::version,
                          "checkpoint: version " + std::to_string(hdr.value("version", -1)) + ", expected " +
                              std::to_string(kCheckpointVersion));
  return hdr;
}

template <typename T>
void read_tensors(std::istream& in, const nlohmann::json& hdr, Model<T>& model) {
  auto tensors = model.net().named_tensors();
  const auto& manifest = hdr.at("tensors");
  if (manifest.size() != tensors.size())
    throw CheckpointError(CheckpointError::Kind::shape,
                          "checkpoint: " + std::to_string(manifest.size()) + " tensors, model has " + std::to_string(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& m = manifest[i];
    const auto shape = m.at("shape").get<Shape>();
    if (m.at("name").get<std::string>() != tensors[i].name || shape != tensors[i].tensor->shape())
      throw CheckpointError(CheckpointError::Kind::shape, "checkpoint: tensor " + m.at("name").get<std::string>() + " " +
                                                              nn::shape_str(shape) + " does not match model tensor " +
                                                              tensors[i].name + " " + nn::shape_str(tensors[i].tensor->shape()));
  }
  for (auto& nt : tensors) {
    std::vector<float> buf(nt.tensor->size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
      throw CheckpointError(CheckpointError::Kind::corrupt, "checkpoint: truncated data for tensor " + nt.name);
    std::copy(buf.begin(), buf.end(), nt.tensor->values().begin());
  }
}

inline std::ifstream open_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return in;
}

}  // namespace detail

/// Rebuild the model from the embedded config and load its tensors.
template <typename T = float>
Model<T> load_checkpoint(std::istream& in) {
  const auto hdr = detail::read_checkpoint_header(in);
  auto model = build<T>(hdr.at("config").get<ArpanConfig>());
  detail::read_tensors(in, hdr, model);
  return model;
}

template <typename T = float>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  auto in = detail::open_checkpoint(path);
  return load_checkpoint<T>(in);
}

/// Load into an already built model; rejects tensors whose shapes differ.
template <typename T>
void load_into(Model<T>& model, const std::filesystem::path& path) {
  auto in = detail::open_checkpoint(path);
  const auto hdr = detail::read_checkpoint_header(in);
  detail::read_tensors(in, hdr, model);
}

}  // namespace upam::model

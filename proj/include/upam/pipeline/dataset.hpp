#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "upam/core/error.hpp"
#include "upam/core/random.hpp"
#include "upam/dsp/frontend.hpp"
#include "upam/dsp/spectrogram_cache.hpp"
#include "upam/dsp/wav.hpp"
#include "upam/eval/nested_cv.hpp"
#include "upam/synth/corpus.hpp"

namespace upam::pipeline {

/// Load the clips a manifest names; relative paths resolve against `base`.
inline std::vector<dsp::AudioClip> load_clips(const std::vector<synth::ManifestRecord>& records,
                                              const std::filesystem::path& base) {
  std::vector<dsp::AudioClip> clips;
  for (const auto& r : records) {
    const std::filesystem::path rel(r.path);
    const auto p = rel.is_absolute() ? rel : base / rel;
    auto wav = dsp::read_wav(p);
    if (std::abs(wav.sample_rate - r.sample_rate) > 1e-9)
      throw DataError("clip " + r.id + ": WAV rate " + std::to_string(wav.sample_rate) + " Hz disagrees with manifest");
    dsp::AudioClip c;
    c.id = r.id;
    c.site = r.site;
    c.year = r.year;
    c.sample_rate = wav.sample_rate;
    c.samples = std::move(wav.samples);
    c.annotations = r.annotations;
    for (const auto& a : c.annotations)
      if (a.t_start < 0 || a.t_end > c.duration() + 1e-9 || a.t_end <= a.t_start)
        throw DataError("clip " + r.id + ": annotation [" + std::to_string(a.t_start) + ", " + std::to_string(a.t_end) +
                        "] is outside the clip");
    clips.push_back(std::move(c));
  }
  return clips;
}

inline std::string cache_key(const std::string& clip_id, const dsp::FrontendConfig& cfg, std::uintmax_t bytes) {
  std::ostringstream s;
  s << clip_id << '|' << cfg.sample_rate << '|' << cfg.window << '|' << cfg.hop << '|' << cfg.fft_len << '|'
    << cfg.fft_hop << '|' << cfg.eps << '|' << static_cast<int>(cfg.taper) << '|' << cfg.policy.min_fraction << '|'
    << cfg.policy.label << '|' << bytes;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(s.str())));
  return clip_id + "-" + hex;
}

inline std::vector<dsp::Spectrogram> read_cached(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  std::size_t n = 0;
  in >> n;
  in.ignore(1);
  std::vector<dsp::Spectrogram> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(dsp::read_spectrogram(in, p.string()));
  return out;
}

inline void write_cached(const std::filesystem::path& p, const std::vector<dsp::Spectrogram>& specs) {
  const auto tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write cache file " + tmp);
    out << specs.size() << '\n';
    for (const auto& s : specs) dsp::write_spectrogram(out, s);
  }
  std::filesystem::rename(tmp, p);
}

/// Windows for every clip, labeled and transformed; optional per-clip cache.
inline eval::Dataset build_dataset(const std::vector<dsp::AudioClip>& clips, const dsp::FrontendConfig& cfg,
                                   const std::optional<std::filesystem::path>& cache_dir = std::nullopt) {
  eval::Dataset d;
  if (cache_dir) std::filesystem::create_directories(*cache_dir);
  for (const auto& c : clips) {
    d.clips.push_back({c.id, c.site, c.year, c.annotations.size()});
    std::vector<dsp::Spectrogram> specs;
    std::filesystem::path cp;
    if (cache_dir) {
      cp = *cache_dir / (cache_key(c.id, cfg, c.samples.size()) + ".spec");
      try {
        specs = read_cached(cp);
      } catch (const DataError&) {
        specs.clear();
      }
    }
    if (specs.empty()) {
      specs = dsp::clip_to_spectrograms(c, cfg);
      if (cache_dir) write_cached(cp, specs);
    }
    for (auto& s : specs) d.windows.push_back(std::move(s));
  }
  return d;
}

inline eval::Dataset load_dataset(const std::filesystem::path& manifest, const dsp::FrontendConfig& cfg,
                                  const std::optional<std::filesystem::path>& cache_dir = std::nullopt) {
  return build_dataset(load_clips(synth::read_manifest(manifest), manifest.parent_path()), cfg, cache_dir);
}

}  // namespace upam::pipeline

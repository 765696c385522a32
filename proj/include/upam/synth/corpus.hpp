#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upam/core/error.hpp"
#include "upam/core/random.hpp"
#include "upam/dsp/fft.hpp"
#include "upam/dsp/types.hpp"
#include "upam/dsp/wav.hpp"

namespace upam::synth {

enum class Interference { tonal_hum, impulsive_pulse, fm_confounder };

inline std::string to_string(Interference i) {
  switch (i) {
    case Interference::tonal_hum: return "tonal_hum";
    case Interference::impulsive_pulse: return "impulsive_pulse";
    case Interference::fm_confounder: return "fm_confounder";
  }
  return "?";
}

inline Interference parse_interference(const std::string& s) {
  if (s == "tonal_hum") return Interference::tonal_hum;
  if (s == "impulsive_pulse") return Interference::impulsive_pulse;
  if (s == "fm_confounder") return Interference::fm_confounder;
  throw UsageError("unknown interference type '" + s + "'");
}

struct SiteProfile {
  std::string site;
  int year = 2015;
  double noise_slope = 0.0;  // dB per octave
  double snr_db = 5.0;
  double snr_spread = 0.0;
  double call_rate = 30.0;  // calls per hour
  int calls_per_block = -1; // >= 0 fixes the block's call count exactly
  std::set<Interference> interference;
  std::uint64_t seed = 0;

  void validate() const {
    if (site.empty()) throw DataError("site profile without a site name");
    if (year <= 0) throw DataError("site profile " + site + ": year must be positive");
    if (snr_spread < 0) throw DataError("site profile " + site + ": snr spread must be >= 0");
    if (call_rate < 0) throw DataError("site profile " + site + ": call rate must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const SiteProfile& p) {
  std::vector<std::string> inter;
  for (auto i : p.interference) inter.push_back(to_string(i));
  j = {{"site", p.site},         {"year", p.year},         {"noise_slope", p.noise_slope},
       {"snr_db", p.snr_db},     {"snr_spread", p.snr_spread}, {"call_rate", p.call_rate},
       {"calls_per_block", p.calls_per_block}, {"interference", inter}, {"seed", p.seed}};
}

inline void from_json(const nlohmann::json& j, SiteProfile& p) {
  const SiteProfile d;
  p.site = j.at("site").get<std::string>();
  p.year = j.at("year").get<int>();
  p.noise_slope = j.value("noise_slope", d.noise_slope);
  p.snr_db = j.value("snr_db", d.snr_db);
  p.snr_spread = j.value("snr_spread", d.snr_spread);
  p.call_rate = j.value("call_rate", d.call_rate);
  p.calls_per_block = j.value("calls_per_block", d.calls_per_block);
  p.seed = j.value("seed", d.seed);
  p.interference.clear();
  for (const auto& s : j.value("interference", std::vector<std::string>{})) p.interference.insert(parse_interference(s));
}

struct DcallSpec {
  double f_start = 90.0;
  double f_end = 35.0;
  double duration = 4.0;  // seconds
  double amplitude = 1.0;
};

struct Chirp {
  std::vector<double> samples;
  double t_start = 0, t_end = 0;  // relative to the chirp's first sample
};

/// Linear FM sweep from f_start to f_end under a Hann envelope, peak = amplitude.
/// An up-sweep (f_end > f_start) is allowed for confounders.
inline Chirp fm_chirp(const DcallSpec& spec, double fs) {
  if (!(fs > 0)) throw DataError("fm_chirp: sample rate must be positive");
  if (spec.f_start < 0 || spec.f_end < 0 || spec.f_start > fs / 2 || spec.f_end > fs / 2)
    throw DataError("fm_chirp: band exceeds [0, fs/2]");
  if (!(spec.duration > 0)) throw DataError("fm_chirp: duration must be positive");
  const auto n = static_cast<std::size_t>(std::llround(spec.duration * fs));
  Chirp c;
  c.samples.resize(n);
  c.t_end = static_cast<double>(n) / fs;
  const double T = spec.duration, k = (spec.f_end - spec.f_start) / T;
  double peak = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    const double env = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(n));
    c.samples[i] = env * std::sin(2 * std::numbers::pi * (spec.f_start * t + 0.5 * k * t * t));
    peak = std::max(peak, std::abs(c.samples[i]));
  }
  for (auto& v : c.samples) v = peak > 0 ? spec.amplitude * v / peak : 0.0;
  return c;
}

inline Chirp synth_dcall(const DcallSpec& spec, double fs) {
  if (!(spec.f_start > spec.f_end)) throw DataError("synth_dcall: a D-call sweeps downward (f_start > f_end)");
  return fm_chirp(spec, fs);
}

namespace detail {

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Power gain of the noise-shaping filter at frequency f (relative to 1 Hz).
inline double shaping_power(double f, double slope_db_per_octave) {
  return std::pow(f, slope_db_per_octave / (10.0 * std::log10(2.0)));
}

}  // namespace detail

/// Expected fraction of the shaped noise's power falling in [f_lo, f_hi].
inline double in_band_fraction(double slope, double fs, std::size_t fft_len, double f_lo, double f_hi) {
  double in = 0, all = 0;
  for (std::size_t k = 1; k <= fft_len / 2; ++k) {
    const double f = static_cast<double>(k) * fs / static_cast<double>(fft_len);
    const double p = detail::shaping_power(f, slope);
    all += p;
    if (f >= f_lo && f <= f_hi) in += p;
  }
  return in / all;
}

/// Gaussian noise with PSD slope `slope` dB/octave, unit RMS. DC is removed.
inline std::vector<double> colored_noise(std::size_t n, double slope, double fs, std::mt19937_64& rng) {
  if (n == 0) return {};
  const std::size_t L = detail::next_pow2(n);
  std::normal_distribution<double> nd;
  std::vector<std::complex<double>> buf(L);
  for (auto& v : buf) v = nd(rng);
  dsp::fft_inplace(buf, false);
  for (std::size_t k = 0; k < L; ++k) {
    const std::size_t kk = std::min(k, L - k);
    if (kk == 0) {
      buf[k] = 0;
      continue;
    }
    const double f = static_cast<double>(kk) * fs / static_cast<double>(L);
    buf[k] *= std::sqrt(detail::shaping_power(f, slope));
  }
  dsp::fft_inplace(buf, true);
  std::vector<double> out(n);
  double ss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = buf[i].real();
    ss += out[i] * out[i];
  }
  const double rms = std::sqrt(ss / static_cast<double>(n));
  if (rms > 0)
    for (auto& v : out) v /= rms;
  return out;
}

inline std::size_t noise_fft_len(std::size_t n) { return detail::next_pow2(n); }

/// Colored background plus the profile's interference sources, at unit noise RMS.
inline std::vector<double> synth_ambient(const SiteProfile& p, double seconds, double fs, const RandomState& rs) {
  if (!(seconds > 0)) throw DataError("synth_ambient: duration must be positive");
  const auto n = static_cast<std::size_t>(std::llround(seconds * fs));
  auto rng = rs.engine();
  auto x = colored_noise(n, p.noise_slope, fs, rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (p.interference.count(Interference::tonal_hum)) {
    auto r = rs.child(1).engine();
    const double f = 20.0 + 90.0 * u(r), phase = 2 * std::numbers::pi * u(r);
    for (std::size_t i = 0; i < n; ++i) x[i] += 0.5 * std::sin(2 * std::numbers::pi * f * static_cast<double>(i) / fs + phase);
  }
  if (p.interference.count(Interference::impulsive_pulse)) {
    auto r = rs.child(2).engine();
    std::exponential_distribution<double> gap(1.0 / 6.0);  // one pulse every 6 s on average
    const double width = 0.02;
    for (double t = gap(r); t < seconds; t += gap(r)) {
      const double amp = 4.0 * (u(r) < 0.5 ? -1 : 1);
      const auto c = static_cast<std::ptrdiff_t>(t * fs);
      for (std::ptrdiff_t d = -15; d <= 15; ++d) {
        const auto i = c + d;
        if (i < 0 || i >= static_cast<std::ptrdiff_t>(n)) continue;
        const double tt = static_cast<double>(d) / fs;
        x[static_cast<std::size_t>(i)] += amp * std::exp(-0.5 * tt * tt / (width * width)) * std::cos(2 * std::numbers::pi * 60.0 * tt);
      }
    }
  }
  if (p.interference.count(Interference::fm_confounder)) {
    auto r = rs.child(3).engine();
    std::exponential_distribution<double> gap(1.0 / 20.0);
    for (double t = gap(r); t + 6.0 < seconds; t += 6.0 + gap(r)) {
      const auto ch = fm_chirp({35.0, 90.0, 2.0 + 4.0 * u(r), 1.0}, fs);
      const auto s = static_cast<std::size_t>(t * fs);
      for (std::size_t i = 0; i < ch.samples.size() && s + i < n; ++i) x[s + i] += ch.samples[i];
    }
  }
  return x;
}

struct ManifestRecord {
  std::string id, site, path;
  int year = 0;
  double sample_rate = 250.0;
  double duration_s = 0;
  std::vector<dsp::Annotation> annotations;
};

inline void to_json(nlohmann::json& j, const ManifestRecord& r) {
  j = {{"id", r.id},
       {"site", r.site},
       {"year", r.year},
       {"path", r.path},
       {"sample_rate", r.sample_rate},
       {"duration_s", r.duration_s},
       {"annotations", nlohmann::json::array()}};
  for (const auto& a : r.annotations) j["annotations"].push_back({{"t0", a.t_start}, {"t1", a.t_end}, {"label", a.label}});
}

inline void from_json(const nlohmann::json& j, ManifestRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.site = j.value("site", "");
  r.year = j.value("year", 0);
  r.path = j.at("path").get<std::string>();
  r.sample_rate = j.value("sample_rate", 250.0);
  r.duration_s = j.value("duration_s", 0.0);
  r.annotations.clear();
  for (const auto& a : j.value("annotations", nlohmann::json::array()))
    r.annotations.push_back({a.at("t0").get<double>(), a.at("t1").get<double>(), a.value("label", "dcall")});
}

struct CorpusConfig {
  std::size_t clips_per_block = 4;
  double clip_seconds = 120.0;
  double sample_rate = 250.0;
  std::uint64_t seed = 0;
  double min_call_s = 2.0, max_call_s = 6.0;
  double margin_s = 0.5;  // calls start at least this far from either clip edge
};

/// Expected in-band noise power for a profile; the calls are scaled against it.
inline double noise_band_power(const SiteProfile& p, std::size_t n, double fs, const DcallSpec& band = {}) {
  return in_band_fraction(p.noise_slope, fs, noise_fft_len(n), std::min(band.f_start, band.f_end),
                          std::max(band.f_start, band.f_end));
}

/// One clip: ambient plus `calls` D-calls at non-overlapping random offsets.
inline dsp::AudioClip synth_clip(const SiteProfile& p, const CorpusConfig& cfg, std::size_t calls, const std::string& id,
                                 const RandomState& rs) {
  dsp::AudioClip clip;
  clip.id = id;
  clip.site = p.site;
  clip.year = p.year;
  clip.sample_rate = cfg.sample_rate;
  clip.samples = synth_ambient(p, cfg.clip_seconds, cfg.sample_rate, rs.child(10));
  const double noise_power = noise_band_power(p, clip.samples.size(), cfg.sample_rate);
  auto r = rs.child(11).engine();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> snr(p.snr_db, p.snr_spread);
  for (std::size_t c = 0; c < calls; ++c) {
    const double dur = cfg.min_call_s + (cfg.max_call_s - cfg.min_call_s) * u(r);
    const double hi = cfg.clip_seconds - cfg.margin_s - dur;
    if (hi <= cfg.margin_s) throw DataError("synth_clip: clip too short for a call");
    double t0 = 0;
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      t0 = cfg.margin_s + (hi - cfg.margin_s) * u(r);
      placed = std::none_of(clip.annotations.begin(), clip.annotations.end(), [&](const dsp::Annotation& a) {
        return t0 < a.t_end + 0.5 && t0 + dur > a.t_start - 0.5;
      });
    }
    if (!placed) throw DataError("synth_clip: cannot place " + std::to_string(calls) + " non-overlapping calls in " + id);
    auto ch = synth_dcall({90.0, 35.0, dur, 1.0}, cfg.sample_rate);
    double call_power = 0;
    for (double v : ch.samples) call_power += v * v;
    call_power /= static_cast<double>(ch.samples.size());
    const double target = snr(r);
    const double gain = std::sqrt(noise_power * std::pow(10.0, target / 10.0) / call_power);
    const auto s = static_cast<std::size_t>(std::llround(t0 * cfg.sample_rate));
    for (std::size_t i = 0; i < ch.samples.size(); ++i) clip.samples[s + i] += gain * ch.samples[i];
    const double ts = static_cast<double>(s) / cfg.sample_rate;
    clip.annotations.push_back({ts, ts + ch.t_end, "dcall"});
  }
  std::sort(clip.annotations.begin(), clip.annotations.end(),
            [](const dsp::Annotation& a, const dsp::Annotation& b) { return a.t_start < b.t_start; });
  return clip;
}

/// Per-clip call counts for one block: an exact split of calls_per_block when
/// set, Poisson draws from call_rate otherwise.
inline std::vector<std::size_t> plan_calls(const SiteProfile& p, const CorpusConfig& cfg, const RandomState& rs) {
  std::vector<std::size_t> n(cfg.clips_per_block, 0);
  if (p.calls_per_block >= 0) {
    const auto total = static_cast<std::size_t>(p.calls_per_block);
    for (std::size_t c = 0; c < n.size(); ++c) n[c] = total / n.size() + (c < total % n.size());
    return n;
  }
  auto r = rs.engine();
  const double mean = p.call_rate * cfg.clip_seconds / 3600.0;
  for (auto& v : n) v = mean > 0 ? std::poisson_distribution<std::size_t>(mean)(r) : 0;
  return n;
}

inline std::string clip_id(const SiteProfile& p, std::size_t c) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%03zu", c);
  return p.site + "_" + std::to_string(p.year) + "_" + buf;
}

/// Generate every block in memory. Clip audio depends only on (corpus seed,
/// profile, clip index), so regeneration is bit-exact.
inline std::vector<dsp::AudioClip> generate_clips(const std::vector<SiteProfile>& profiles, const CorpusConfig& cfg) {
  if (profiles.size() < 2) throw DataError("generate_corpus: need at least two site profiles");
  if (cfg.clips_per_block == 0) throw DataError("generate_corpus: clips_per_block must be positive");
  std::set<std::pair<std::string, int>> keys;
  for (const auto& p : profiles) {
    p.validate();
    if (!keys.insert({p.site, p.year}).second)
      throw DataError("generate_corpus: duplicate block " + p.site + "_" + std::to_string(p.year));
  }
  std::vector<dsp::AudioClip> clips;
  for (const auto& p : profiles) {
    const RandomState block{derive_seed(cfg.seed, "block:" + p.site + "_" + std::to_string(p.year), p.seed), 0};
    const auto counts = plan_calls(p, cfg, block.child(0));
    for (std::size_t c = 0; c < cfg.clips_per_block; ++c)
      clips.push_back(synth_clip(p, cfg, counts[c], clip_id(p, c), {block.seed, 1000 + c}));
  }
  return clips;
}

/// Write WAVs (each peak-normalized to 0.9) under `dir` and a JSON-lines
/// manifest; returns the manifest path.
inline std::filesystem::path write_corpus(const std::vector<dsp::AudioClip>& clips, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "audio", ec);
  if (ec) throw IoError("cannot create corpus directory " + dir.string() + ": " + ec.message());
  const auto manifest = dir / "manifest.jsonl";
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot write " + manifest.string());
  for (const auto& c : clips) {
    const auto rel = std::filesystem::path("audio") / (c.id + ".wav");
    double peak = 0;
    for (double v : c.samples) peak = std::max(peak, std::abs(v));
    auto scaled = c.samples;
    if (peak > 0)
      for (auto& v : scaled) v *= 0.9 / peak;
    dsp::write_wav(dir / rel, scaled, static_cast<std::uint32_t>(std::llround(c.sample_rate)));
    ManifestRecord r{c.id, c.site, rel.generic_string(), c.year, c.sample_rate, c.duration(), c.annotations};
    out << nlohmann::json(r).dump() << '\n';
  }
  if (!out) throw IoError("short write to " + manifest.string());
  return manifest;
}

inline std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::set<std::string> ids;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<ManifestRecord>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": bad manifest record: " + e.what());
    }
    if (!ids.insert(out.back().id).second) throw DataError("manifest: duplicate clip id " + out.back().id);
  }
  return out;
}

}  // namespace upam::synth

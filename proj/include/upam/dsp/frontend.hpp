#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "upam/core/error.hpp"
#include "upam/dsp/fft.hpp"
#include "upam/dsp/types.hpp"

namespace upam::dsp {

enum class Taper { hann, rectangular };

/// Window labeling rule: positive iff an annotation overlaps the window by at
/// least `min_fraction` of its own duration, or lies fully inside it.
struct OverlapPolicy {
  double min_fraction = 0.5;
  std::string label;  // empty matches any annotation label
};

struct FrontendConfig {
  double sample_rate = 250.0;
  std::size_t window = 16384;  // w
  std::size_t hop = 8192;      // h
  std::size_t fft_len = 256;   // L
  std::size_t fft_hop = 64;    // b
  double eps = 1e-12;
  Taper taper = Taper::hann;
  OverlapPolicy policy{};

  std::size_t bins() const { return fft_len / 2; }
  std::size_t frames() const { return window / fft_hop; }

  static FrontendConfig canonical() { return {}; }

  /// Reduced geometry for laptop-scale experiments: 8.192 s windows, 32x64 spectrograms.
  static FrontendConfig desk() {
    FrontendConfig c;
    c.window = 2048;
    c.hop = 1024;
    c.fft_len = 64;
    c.fft_hop = 32;
    return c;
  }
};

/// Number of full windows for a clip of s samples with hop h (w = 2h).
inline std::size_t window_count(std::size_t s, std::size_t h) {
  if (h == 0 || s < 2 * h) return 0;
  return (s - h) / h;
}

/// Slide a w-sample window with hop h over the clip; the truncated tail is dropped.
inline std::vector<WindowSegment> segment(const AudioClip& clip, std::size_t w, std::size_t h) {
  if (h < 1) throw DataError("segment: hop must be >= 1");
  if (w != 2 * h) throw DataError("segment: window must equal twice the hop (50% overlap)");
  if (clip.samples.empty()) throw DataError("segment: clip '" + clip.id + "' has no samples");
  const std::size_t s = clip.samples.size();
  if (s < w)
    throw EmptyResultError("segment: clip '" + clip.id + "' has " + std::to_string(s) +
                           " samples, shorter than one window of " + std::to_string(w));

  const std::size_t n = window_count(s, h);
  std::vector<WindowSegment> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    WindowSegment seg;
    seg.clip_id = clip.id;
    seg.index = i;
    seg.start_sample = i * h;
    seg.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(i * h),
                       clip.samples.begin() + static_cast<std::ptrdiff_t>(i * h + w));
    out.push_back(std::move(seg));
  }
  return out;
}

inline bool annotation_hits_window(const Annotation& a, double win_start, double win_end,
                                   const OverlapPolicy& policy) {
  if (!policy.label.empty() && a.label != policy.label) return false;
  const double overlap = std::min(a.t_end, win_end) - std::max(a.t_start, win_start);
  if (overlap <= 0.0) return false;
  const bool inside = a.t_start >= win_start && a.t_end <= win_end;
  return inside || overlap >= policy.min_fraction * a.duration();
}

inline int label_window(const WindowSegment& seg, std::span<const Annotation> annotations,
                        double sample_rate, const OverlapPolicy& policy = {}) {
  const double t0 = static_cast<double>(seg.start_sample) / sample_rate;
  const double t1 = t0 + static_cast<double>(seg.samples.size()) / sample_rate;
  for (const auto& a : annotations)
    if (annotation_hits_window(a, t0, t1, policy)) return 1;
  return 0;
}

inline std::vector<double> make_taper(Taper taper, std::size_t len) {
  std::vector<double> w(len, 1.0);
  if (taper == Taper::hann) {
    // periodic Hann
    for (std::size_t k = 0; k < len; ++k)
      w[k] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len));
  }
  return w;
}

/// Complex STFT grid, frame-major: data[i * bins + f].
struct ComplexGrid {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<std::complex<double>> data;

  std::complex<double> at(std::size_t i, std::size_t f) const { return data[i * bins + f]; }
};

/// STFT with frame i starting at sample b*i; N = floor(T/b) frames. Frames that
/// run past the end of the segment are zero-padded.
inline ComplexGrid stft(std::span<const double> x, std::size_t L, std::size_t b, Taper taper = Taper::hann) {
  if (!is_power_of_two(L)) throw DataError("stft: window length must be a power of two");
  if (b == 0 || b > L) throw DataError("stft: hop must satisfy 1 <= b <= L");
  if (L > x.size()) throw DataError("stft: window length exceeds segment length");

  const auto window = make_taper(taper, L);
  ComplexGrid grid;
  grid.frames = x.size() / b;
  grid.bins = L;
  grid.data.resize(grid.frames * L);

  std::vector<std::complex<double>> frame(L);
  for (std::size_t i = 0; i < grid.frames; ++i) {
    const std::size_t start = i * b;
    for (std::size_t k = 0; k < L; ++k) {
      const double v = start + k < x.size() ? x[start + k] : 0.0;
      frame[k] = {v * window[k], 0.0};
    }
    fft_inplace(frame);
    std::copy(frame.begin(), frame.end(), grid.data.begin() + static_cast<std::ptrdiff_t>(i * L));
  }
  return grid;
}

inline ComplexGrid stft(const WindowSegment& seg, std::size_t L, std::size_t b, Taper taper = Taper::hann) {
  return stft(std::span<const double>(seg.samples), L, b, taper);
}

/// Min-max scale in place. Returns false (and zeroes the data) when max == min.
inline bool minmax_normalize(std::span<double> v) {
  if (v.empty()) return false;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    std::fill(v.begin(), v.end(), 0.0);
    return false;
  }
  const double inv = 1.0 / (mx - mn);
  for (auto& x : v) x = std::clamp((x - mn) * inv, 0.0, 1.0);
  return true;
}

/// Keep bins [0, L/2), convert to dB power and min-max scale to [0, 1].
inline Spectrogram log_power_normalize(const ComplexGrid& grid, double eps = 1e-12) {
  if (grid.frames == 0 || grid.bins == 0) throw DataError("log_power_normalize: empty grid");
  const std::size_t M = std::max<std::size_t>(1, grid.bins / 2);
  const std::size_t N = grid.frames;

  std::vector<double> db(M * N);
  for (std::size_t f = 0; f < M; ++f)
    for (std::size_t i = 0; i < N; ++i)
      db[f * N + i] = 10.0 * std::log10(std::norm(grid.at(i, f)) + eps);

  Spectrogram s;
  s.bins = M;
  s.frames = N;
  s.window_len = grid.bins;
  s.degenerate = !minmax_normalize(db);
  s.values.assign(db.begin(), db.end());
  return s;
}

/// Temporal span (samples) covered by a kernel of k_t frames.
constexpr std::size_t receptive_field(std::size_t k_t, std::size_t L, std::size_t b) {
  return L + (k_t - 1) * b;
}

/// Window -> normalized spectrogram carrying provenance and label.
inline Spectrogram extract(const WindowSegment& seg, const FrontendConfig& cfg) {
  auto spec = log_power_normalize(stft(seg, cfg.fft_len, cfg.fft_hop, cfg.taper), cfg.eps);
  spec.sample_rate = cfg.sample_rate;
  spec.freq_resolution = cfg.sample_rate / static_cast<double>(cfg.fft_len);
  spec.hop_samples = cfg.fft_hop;
  spec.label = seg.label;
  spec.clip_id = seg.clip_id;
  spec.index = seg.index;
  return spec;
}

/// Segment, label and transform a whole clip.
inline std::vector<Spectrogram> clip_to_spectrograms(const AudioClip& clip, const FrontendConfig& cfg) {
  if (std::abs(clip.sample_rate - cfg.sample_rate) > 1e-9)
    throw DataError("clip '" + clip.id + "' sample rate " + std::to_string(clip.sample_rate) +
                    " Hz does not match the configured " + std::to_string(cfg.sample_rate) + " Hz");
  auto segs = segment(clip, cfg.window, cfg.hop);
  std::vector<Spectrogram> out;
  out.reserve(segs.size());
  for (auto& seg : segs) {
    seg.label = label_window(seg, clip.annotations, clip.sample_rate, cfg.policy);
    out.push_back(extract(seg, cfg));
  }
  return out;
}

}  // namespace upam::dsp

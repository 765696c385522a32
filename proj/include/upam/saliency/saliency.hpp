#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upam/core/error.hpp"
#include "upam/dsp/types.hpp"
#include "upam/io/png.hpp"
#include "upam/model/arpan.hpp"

namespace upam::saliency {

/// Nonnegative map over (frequency bin, frame), frequency-major like Spectrogram.
struct SaliencyMap {
  std::size_t bins = 0, frames = 0;
  std::vector<double> values;
  std::size_t target = 0;
  double score = 0;  // model output for the target class
  std::string clip_id;
  std::size_t index = 0;

  double at(std::size_t f, std::size_t t) const { return values[f * frames + t]; }
};

/// max_c |d y_k / d x(f, t, c)| from one backward pass in infer mode.
template <typename T>
SaliencyMap saliency_map(nn::Sequential<T>& net, const nn::Tensor<T>& x, std::size_t k = 0) {
  const auto& in = net.input_shape();
  if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != in[0] || x.dim(2) != in[1] || x.dim(3) != in[2])
    throw ShapeError("saliency_map: expected one sample of shape " + nn::shape_str(in) + ", got " + nn::shape_str(x.shape()));
  const auto y = net.forward(x, nn::Mode::infer);
  if (k >= y.size()) throw ShapeError("saliency_map: target class " + std::to_string(k) + " out of range");
  nn::Tensor<T> seed(y.shape());
  seed[k] = T(1);
  net.zero_grad();
  const auto g = net.backward(seed);
  net.zero_grad();
  SaliencyMap m;
  m.bins = x.dim(1);
  m.frames = x.dim(2);
  m.target = k;
  m.score = static_cast<double>(y[k]);
  m.values.assign(m.bins * m.frames, 0.0);
  const std::size_t c = x.dim(3);
  for (std::size_t p = 0; p < m.values.size(); ++p)
    for (std::size_t ch = 0; ch < c; ++ch) m.values[p] = std::max(m.values[p], std::abs(static_cast<double>(g[p * c + ch])));
  return m;
}

template <typename T>
SaliencyMap saliency_map(model::Model<T>& m, const dsp::Spectrogram& s, std::size_t k = 0) {
  auto map = saliency_map(m.net(), model::to_batch<T>({&s}), k);
  map.clip_id = s.clip_id;
  map.index = s.index;
  return map;
}

/// Mean saliency inside vs outside a time-frequency box given in seconds
/// (relative to the window start) and Hz.
struct Localization {
  double inside = 0, outside = 0;
  double ratio() const { return outside > 0 ? inside / outside : 0.0; }
};

inline Localization localize(const SaliencyMap& m, const dsp::Spectrogram& s, double t0, double t1, double f_lo, double f_hi) {
  if (m.bins != s.bins || m.frames != s.frames) throw ShapeError("localize: map and spectrogram shapes differ");
  const double frame_s = static_cast<double>(s.hop_samples) / s.sample_rate;
  const double win_s = static_cast<double>(s.window_len) / s.sample_rate;
  double in = 0, out = 0, n_in = 0, n_out = 0;
  for (std::size_t f = 0; f < m.bins; ++f) {
    const double hz = static_cast<double>(f) * s.freq_resolution;
    for (std::size_t t = 0; t < m.frames; ++t) {
      const double a = static_cast<double>(t) * frame_s, b = a + win_s;
      const bool inside = hz >= f_lo && hz <= f_hi && b > t0 && a < t1;
      (inside ? in : out) += m.at(f, t);
      (inside ? n_in : n_out) += 1;
    }
  }
  return {n_in ? in / n_in : 0.0, n_out ? out / n_out : 0.0};
}

/// Nearest-neighbour resize for maps computed at a coarser grid.
inline SaliencyMap upsample_nearest(const SaliencyMap& m, std::size_t bins, std::size_t frames) {
  if (m.bins == bins && m.frames == frames) return m;
  if (m.bins == 0 || m.frames == 0) throw ShapeError("upsample_nearest: empty map");
  SaliencyMap u = m;
  u.bins = bins;
  u.frames = frames;
  u.values.assign(bins * frames, 0.0);
  for (std::size_t f = 0; f < bins; ++f)
    for (std::size_t t = 0; t < frames; ++t) u.values[f * frames + t] = m.at(f * m.bins / bins, t * m.frames / frames);
  return u;
}

/// Viridis-like ramp through five anchors.
inline std::array<double, 3> ramp(double a) {
  static constexpr double anchors[5][3] = {
      {68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}};
  a = std::clamp(a, 0.0, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(3, static_cast<std::size_t>(a));
  const double w = a - static_cast<double>(i);
  return {anchors[i][0] * (1 - w) + anchors[i + 1][0] * w, anchors[i][1] * (1 - w) + anchors[i + 1][1] * w,
          anchors[i][2] * (1 - w) + anchors[i + 1][2] * w};
}

/// Grayscale spectrogram (high frequencies on top) blended with the heat ramp;
/// alpha is the map value over its own maximum.
inline io::RgbImage render_overlay(const dsp::Spectrogram& s, const SaliencyMap& map) {
  const auto m = upsample_nearest(map, s.bins, s.frames);
  double mx = 0;
  for (double v : m.values) mx = std::max(mx, v);
  io::RgbImage img{s.frames, s.bins, std::vector<std::uint8_t>(s.frames * s.bins * 3)};
  for (std::size_t f = 0; f < s.bins; ++f)
    for (std::size_t t = 0; t < s.frames; ++t) {
      const double gray = 255.0 * std::clamp(static_cast<double>(s.at(f, t)), 0.0, 1.0);
      const double a = mx > 0 ? m.at(f, t) / mx : 0.0;
      const auto c = ramp(a);
      auto* px = img.at(t, s.bins - 1 - f);
      for (int ch = 0; ch < 3; ++ch) px[ch] = static_cast<std::uint8_t>(std::lround((1 - a) * gray + a * c[ch]));
    }
  return img;
}

inline void export_overlay(const dsp::Spectrogram& s, const SaliencyMap& map, const std::filesystem::path& path) {
  io::write_png(path, render_overlay(s, map));
}

/// Top-j cells by saliency (ties by position) with time and frequency labels.
inline nlohmann::json top_salient(const SaliencyMap& m, const dsp::Spectrogram& s, std::size_t j, double window_start_s = 0.0) {
  std::vector<std::size_t> idx(m.values.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  j = std::min(j, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(j), idx.end(),
                    [&](std::size_t a, std::size_t b) { return m.values[a] != m.values[b] ? m.values[a] > m.values[b] : a < b; });
  nlohmann::json out = nlohmann::json::array();
  const double frame_s = s.sample_rate > 0 ? static_cast<double>(s.hop_samples) / s.sample_rate : 0.0;
  for (std::size_t r = 0; r < j; ++r) {
    const std::size_t f = idx[r] / m.frames, t = idx[r] % m.frames;
    out.push_back({{"i", t},
                   {"f", f},
                   {"value", m.values[idx[r]]},
                   {"time_s", window_start_s + static_cast<double>(t) * frame_s},
                   {"freq_hz", static_cast<double>(f) * s.freq_resolution}});
  }
  return out;
}

}  // namespace upam::saliency

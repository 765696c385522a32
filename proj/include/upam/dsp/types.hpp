#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace upam::dsp {

struct Annotation {
  double t_start = 0.0;  // seconds
  double t_end = 0.0;
  std::string label = "dcall";

  double duration() const { return t_end - t_start; }
};

struct AudioClip {
  std::string id;
  std::string site;
  int year = 0;
  double sample_rate = 250.0;
  std::vector<double> samples;
  std::vector<Annotation> annotations;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct WindowSegment {
  std::string clip_id;
  std::size_t index = 0;
  std::size_t start_sample = 0;
  std::vector<double> samples;
  int label = 0;
};

/// Normalized log-power grid, frequency-major: values[f * frames + t].
struct Spectrogram {
  std::size_t bins = 0;    // M = L/2
  std::size_t frames = 0;  // N = floor(T/b)
  std::vector<float> values;
  double sample_rate = 250.0;
  double freq_resolution = 0.0;  // fs / L
  std::size_t hop_samples = 0;
  std::size_t window_len = 0;
  int label = 0;
  std::string clip_id;
  std::size_t index = 0;
  bool degenerate = false;  // input grid was constant; values are all zero

  float at(std::size_t f, std::size_t t) const { return values[f * frames + t]; }
};

}  // namespace upam::dsp

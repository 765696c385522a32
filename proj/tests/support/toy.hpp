#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "upam/dsp/types.hpp"

namespace upam::testing {

// Positives carry a bright horizontal band over uniform noise; negatives are noise only.
struct ToySet {
  std::vector<std::unique_ptr<dsp::Spectrogram>> owned;
  std::vector<const dsp::Spectrogram*> view;
};

inline ToySet make_toy(std::size_t n_pos, std::size_t n_neg, std::uint64_t seed, const std::string& clip,
                       std::size_t bins = 32, std::size_t frames = 64) {
  ToySet s;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 0.6f);
  std::uniform_int_distribution<std::size_t> row(4, bins - 6);
  for (std::size_t i = 0; i < n_pos + n_neg; ++i) {
    auto sp = std::make_unique<dsp::Spectrogram>();
    sp->bins = bins;
    sp->frames = frames;
    sp->clip_id = clip;
    sp->index = i;
    sp->label = i < n_pos ? 1 : 0;
    sp->values.resize(bins * frames);
    for (auto& v : sp->values) v = u(rng);
    if (sp->label == 1) {
      const std::size_t r = row(rng);
      for (std::size_t f = r; f < r + 2; ++f)
        for (std::size_t t = 0; t < frames; ++t) sp->values[f * frames + t] = 1.0f;
    }
    s.view.push_back(sp.get());
    s.owned.push_back(std::move(sp));
  }
  return s;
}

}  // namespace upam::testing

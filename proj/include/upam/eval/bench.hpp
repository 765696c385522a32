#pragma once

#include <algorithm>
#include <chrono>
#include <vector>

#include <nlohmann/json.hpp>

#include "upam/core/error.hpp"
#include "upam/model/arpan.hpp"
#include "upam/train/trainer.hpp"

namespace upam::eval {

struct Efficiency {
  double total_seconds = 0;
  double per_sample_seconds = 0;
  std::size_t parameters = 0;
  std::size_t samples = 0;
  std::size_t repetitions = 0;
};

inline void to_json(nlohmann::json& j, const Efficiency& e) {
  j = {{"total_seconds", e.total_seconds},
       {"per_sample_seconds", e.per_sample_seconds},
       {"parameters", e.parameters},
       {"samples", e.samples},
       {"repetitions", e.repetitions}};
}

/// Median wall-clock inference time over `reps` passes after one warm-up pass.
/// Feature extraction is not timed.
template <typename T>
Efficiency efficiency_bench(model::Model<T>& m, const train::LabeledSet& set, std::size_t reps = 3, std::size_t batch = 64) {
  if (set.empty()) throw DataError("efficiency_bench: empty evaluation set");
  if (reps == 0) throw UsageError("efficiency_bench: repetitions must be positive");
  volatile double sink = 0;
  auto pass = [&] {
    const auto t0 = std::chrono::steady_clock::now();
    const auto p = train::predict_all(m, set, batch);
    sink = sink + static_cast<double>(p.front());
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  pass();
  std::vector<double> times;
  for (std::size_t r = 0; r < reps; ++r) times.push_back(pass());
  std::sort(times.begin(), times.end());
  const double med = reps % 2 ? times[reps / 2] : 0.5 * (times[reps / 2 - 1] + times[reps / 2]);
  Efficiency e;
  e.total_seconds = med;
  e.samples = set.size();
  e.per_sample_seconds = med / static_cast<double>(set.size());
  e.parameters = m.count_parameters();
  e.repetitions = reps;
  return e;
}

}  // namespace upam::eval

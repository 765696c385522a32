#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <utility>

#include "upam/core/error.hpp"

namespace upam::dsp {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 FFT. inverse=true computes the unscaled inverse.
inline void fft_inplace(std::span<std::complex<double>> data, bool inverse = false) {
  const std::size_t n = data.size();
  if (!is_power_of_two(n)) throw DataError("fft length must be a power of two, got " + std::to_string(n));

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }

  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        // Twiddles are computed directly rather than by recurrence to keep the error at O(eps log n).
        const std::complex<double> w = std::polar(1.0, ang * static_cast<double>(k));
        const auto u = data[i + k];
        const auto v = data[i + k + half] * w;
        data[i + k] = u + v;
        data[i + k + half] = u - v;
      }
    }
  }
}

}  // namespace upam::dsp

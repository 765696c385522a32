#pragma once

// Central finite-difference gradient checking for layers and whole networks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "upam/core/random.hpp"
#include "upam/nn/sequential.hpp"

namespace upam::testing {

struct GradReport {
  std::size_t checked = 0;
  std::size_t failed = 0;
  double worst_rel = 0.0;
  std::string first_failure;
  bool ok() const { return failed == 0 && checked > 0; }
};

inline bool grad_close(double analytic, double numeric, double rel_tol = 1e-4, double abs_floor = 1e-6) {
  const double diff = std::abs(analytic - numeric);
  return diff <= abs_floor || diff <= rel_tol * std::max(std::abs(analytic), std::abs(numeric));
}

inline void record(GradReport& r, double a, double n, const std::string& what) {
  ++r.checked;
  const double scale = std::max({std::abs(a), std::abs(n), 1e-12});
  if (std::abs(a - n) > 1e-6) r.worst_rel = std::max(r.worst_rel, std::abs(a - n) / scale);
  if (!grad_close(a, n)) {
    if (r.failed++ == 0)
      r.first_failure = what + ": analytic " + std::to_string(a) + " vs numeric " + std::to_string(n);
  }
}

/// Checks d(sum(weights * net(x)))/d{x, params} against central differences.
/// `max_per_tensor` bounds the number of probed entries per tensor.
inline GradReport check_network(nn::Sequential<double>& net, nn::Tensor<double> x, nn::Mode mode,
                                std::uint64_t seed, std::size_t max_per_tensor = 40, double step = 1e-5) {
  const RandomState rs{seed, 99};
  std::mt19937_64 rng(seed);
  auto run = [&](const nn::Tensor<double>& in) {
    net.reseed(rs);
    return net.forward(in, mode);
  };
  const auto y0 = run(x);
  std::vector<double> w(y0.size());
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (auto& v : w) v = u(rng);
  auto loss = [&](const nn::Tensor<double>& in) {
    const auto y = run(in);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };

  net.zero_grad();
  run(x);
  nn::Tensor<double> gy(y0.shape(), w);
  const auto gx = net.backward(gy);

  GradReport report;
  auto probe = [&](std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (n > max_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_tensor);
    }
    return idx;
  };

  for (std::size_t i : probe(x.size())) {
    auto xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    record(report, gx[i], (loss(xp) - loss(xm)) / (2 * step), "input[" + std::to_string(i) + "]");
  }

  auto params = net.trainable();
  std::vector<std::vector<double>> grads;
  for (auto* t : params) grads.push_back(t->grad());
  // Snapshot BN running stats so probing in train mode leaves the model unchanged.
  const auto snap = net.snapshot();
  for (std::size_t t = 0; t < params.size(); ++t) {
    for (std::size_t i : probe(params[t]->size())) {
      const double orig = (*params[t])[i];
      (*params[t])[i] = orig + step;
      const double lp = loss(x);
      (*params[t])[i] = orig - step;
      const double lm = loss(x);
      (*params[t])[i] = orig;
      record(report, grads[t][i], (lp - lm) / (2 * step), "param" + std::to_string(t) + "[" + std::to_string(i) + "]");
    }
  }
  net.restore(snap);
  return report;
}

}  // namespace upam::testing

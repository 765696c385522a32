#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "upam/core/error.hpp"
#include "upam/core/random.hpp"
#include "upam/dsp/types.hpp"
#include "upam/model/arpan.hpp"

namespace upam::train {

using dsp::Spectrogram;
using nn::Mode;
using nn::Tensor;

struct TrainConfig {
  double lr0 = 0.01;
  std::size_t halve_every = 5;
  std::size_t epochs = 15;
  std::size_t batch_size = 16;
  double threshold = 0.5;
  std::uint64_t seed = 0;
  double neg_downsample = 0.5;

  // lr0 = 0 is accepted so a run can be used as a frozen baseline.
  void validate() const {
    if (!(lr0 >= 0.0)) throw UsageError("train: lr0 must be non-negative");
    if (halve_every < 1) throw UsageError("train: halve_every must be at least 1");
    if (epochs < 1) throw UsageError("train: epochs must be at least 1");
    if (batch_size < 1) throw UsageError("train: batch_size must be at least 1");
    if (!(neg_downsample > 0.0 && neg_downsample <= 1.0)) throw UsageError("train: neg_downsample must lie in (0, 1]");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr0", c.lr0},
       {"halve_every", c.halve_every},
       {"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"threshold", c.threshold},
       {"seed", c.seed},
       {"neg_downsample", c.neg_downsample}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.lr0 = j.value("lr0", d.lr0);
  c.halve_every = j.value("halve_every", d.halve_every);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.threshold = j.value("threshold", d.threshold);
  c.seed = j.value("seed", d.seed);
  c.neg_downsample = j.value("neg_downsample", d.neg_downsample);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0;
  double val_accuracy = 0;
  double lr = 0;
  double wall_seconds = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;

  double best_accuracy() const { return epochs.empty() ? 0.0 : epochs[best_epoch].val_accuracy; }
};

using LabeledSet = std::vector<const Spectrogram*>;

inline std::string instance_id(const Spectrogram& s) { return s.clip_id + "#" + std::to_string(s.index); }

/// Keep every positive and a seeded subset of negatives, in input order.
inline LabeledSet prepare_training_set(const LabeledSet& windows, double fraction, const RandomState& rs) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw UsageError("prepare_training_set: fraction must lie in (0, 1]");
  std::vector<std::size_t> neg;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i]->label == 1)
      ++pos;
    else
      neg.push_back(i);
  }
  if (pos == 0) throw DataError("prepare_training_set: no positive windows");
  const auto keep_n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(neg.size())));
  auto rng = rs.engine();
  std::vector<std::size_t> chosen;
  std::sample(neg.begin(), neg.end(), std::back_inserter(chosen), keep_n, rng);
  std::vector<bool> keep(windows.size(), false);
  for (auto i : chosen) keep[i] = true;
  LabeledSet out;
  for (std::size_t i = 0; i < windows.size(); ++i)
    if (windows[i]->label == 1 || keep[i]) out.push_back(windows[i]);
  return out;
}

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy and its gradient with respect to each prediction.
template <typename T>
std::pair<double, std::vector<T>> bce_loss(const std::vector<T>& p, const std::vector<int>& y) {
  if (p.size() != y.size() || p.empty()) throw ShapeError("bce_loss: prediction/label size mismatch");
  const double n = static_cast<double>(p.size());
  double loss = 0;
  std::vector<T> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(static_cast<double>(p[i]), kProbClamp, 1.0 - kProbClamp);
    const double t = y[i];
    loss -= t * std::log(q) + (1.0 - t) * std::log(1.0 - q);
    grad[i] = static_cast<T>((-t / q + (1.0 - t) / (1.0 - q)) / n);
  }
  return {loss / n, grad};
}

inline double scheduled_lr(double lr0, std::size_t epoch, std::size_t halve_every) {
  return std::ldexp(lr0, -static_cast<int>(epoch / halve_every));
}

template <typename T>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t t = 0;
  std::vector<std::vector<double>> m, v;
};

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, AdamState<T>& st, double lr) {
  if (st.m.empty()) {
    for (auto* p : params) {
      st.m.emplace_back(p->size(), 0.0);
      st.v.emplace_back(p->size(), 0.0);
    }
  }
  if (st.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameter list");
  ++st.t;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = params[k]->values();
    const auto& g = params[k]->grad();
    auto& m = st.m[k];
    auto& v = st.v[k];
    if (m.size() != w.size()) throw ShapeError("adam_step: state size mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * gi;
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * gi * gi;
      const double mh = m[i] / c1, vh = v[i] / c2;
      w[i] = static_cast<T>(w[i] - lr * mh / (std::sqrt(vh) + st.eps));
    }
  }
}

inline void check_disjoint(const LabeledSet& a, const LabeledSet& b, const std::string& what) {
  std::set<std::string> ids;
  for (const auto* s : a) ids.insert(instance_id(*s));
  for (const auto* s : b)
    if (ids.count(instance_id(*s))) throw LeakageError(what + ": instance " + instance_id(*s) + " appears in both sets");
}

template <typename T>
void flip_time(Tensor<T>& x, std::size_t b) {
  const std::size_t h = x.dim(1), w = x.dim(2), c = x.dim(3);
  T* base = x.data() + b * h * w * c;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t t = 0; t < w / 2; ++t)
      for (std::size_t k = 0; k < c; ++k) std::swap(base[(r * w + t) * c + k], base[(r * w + (w - 1 - t)) * c + k]);
}

template <typename T>
double binary_accuracy(model::Model<T>& m, const LabeledSet& set, double threshold, std::size_t batch = 64) {
  if (set.empty()) throw DataError("binary_accuracy: empty set");
  std::size_t correct = 0;
  for (std::size_t s = 0; s < set.size(); s += batch) {
    LabeledSet chunk(set.begin() + s, set.begin() + std::min(set.size(), s + batch));
    const auto p = m.predict(chunk);
    for (std::size_t i = 0; i < chunk.size(); ++i) correct += ((p[i] >= threshold) == (chunk[i]->label == 1));
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

template <typename T>
std::vector<T> predict_all(model::Model<T>& m, const LabeledSet& set, std::size_t batch = 64) {
  std::vector<T> out;
  out.reserve(set.size());
  for (std::size_t s = 0; s < set.size(); s += batch) {
    LabeledSet chunk(set.begin() + s, set.begin() + std::min(set.size(), s + batch));
    const auto p = m.predict(chunk);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

inline nlohmann::json to_json_line(const EpochRecord& r) {
  return {{"epoch", r.epoch}, {"loss", r.loss}, {"val_accuracy", r.val_accuracy}, {"lr", r.lr}, {"wall_seconds", r.wall_seconds}};
}

/// Train in place; on return the model holds the weights of the best epoch.
template <typename T>
TrainHistory train(model::Model<T>& m, const LabeledSet& train_set, const LabeledSet& val_set, const TrainConfig& cfg,
                   std::ostream* log = nullptr) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw DataError("train: empty training or validation set");
  check_disjoint(train_set, val_set, "train");
  const bool flip = m.config().flags.R;

  auto& net = m.net();
  const auto params = net.trainable();
  AdamState<T> adam;
  TrainHistory hist;
  std::vector<std::vector<T>> best;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = scheduled_lr(cfg.lr0, e, cfg.halve_every);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuf(derive_seed(cfg.seed, "shuffle", e));
    std::shuffle(order.begin(), order.end(), shuf);
    std::mt19937_64 aug(derive_seed(cfg.seed, "flip", e));
    std::bernoulli_distribution coin(0.5);

    double loss_sum = 0;
    std::size_t batch_idx = 0;
    for (std::size_t s = 0; s < order.size(); s += cfg.batch_size, ++batch_idx) {
      LabeledSet batch;
      std::vector<int> labels;
      for (std::size_t k = s; k < std::min(order.size(), s + cfg.batch_size); ++k) {
        batch.push_back(train_set[order[k]]);
        labels.push_back(train_set[order[k]]->label);
      }
      auto x = model::to_batch<T>(batch);
      if (flip)
        for (std::size_t b = 0; b < batch.size(); ++b)
          if (coin(aug)) flip_time(x, b);
      net.reseed(RandomState{derive_seed(cfg.seed, "layers", e), batch_idx});
      const auto y = net.forward(x, Mode::train);
      auto [loss, g] = bce_loss(y.values(), labels);
      loss_sum += loss * static_cast<double>(batch.size());
      net.zero_grad();
      net.backward(Tensor<T>(y.shape(), std::move(g)));
      adam_step(params, adam, lr);
    }

    EpochRecord rec;
    rec.epoch = e;
    rec.loss = loss_sum / static_cast<double>(train_set.size());
    rec.val_accuracy = binary_accuracy(m, val_set, cfg.threshold);
    rec.lr = lr;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (hist.epochs.empty() || rec.val_accuracy > hist.best_accuracy()) {
      hist.best_epoch = e;
      best = net.snapshot();
    }
    hist.epochs.push_back(rec);
    if (log) *log << to_json_line(rec).dump() << '\n';
  }
  net.restore(best);
  return hist;
}

}  // namespace upam::train

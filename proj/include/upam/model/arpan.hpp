#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "upam/core/error.hpp"
#include "upam/core/random.hpp"
#include "upam/dsp/types.hpp"
#include "upam/nn/sequential.hpp"

namespace upam::model {

using nn::Mode;
using nn::Shape;
using nn::Tensor;

/// Ablation switches.
///   S: sigmoid on the final convolutional features (ReLU otherwise)
///   D: second initial convolution block
///   K: 7x7 / 5x5 initial kernels (3x3 / 3x3 otherwise)
///   B: spatial dropout in the initial blocks
///   G: additive |N(0, sigma^2)| input noise
///   M: adaptive pooling to a fixed grid (fixed 2x4 pooling otherwise)
///   All: spatial dropout after every convolution
///   R: random time-axis flipping during training (data augmentation only)
struct Flags {
  bool S = false, D = false, K = false, B = false, G = false, M = false, All = false, R = false;

  static Flags full() { return {true, true, true, true, true, true, true, false}; }
  static Flags none() { return {}; }

  bool operator==(const Flags&) const = default;

  std::string to_string() const {
    std::string s;
    auto add = [&](bool on, const char* n) {
      if (!on) return;
      if (!s.empty()) s += '+';
      s += n;
    };
    add(S, "S"), add(D, "D"), add(K, "K"), add(B, "B"), add(G, "G"), add(M, "M"), add(All, "All"), add(R, "R");
    return s.empty() ? "vanilla" : s;
  }

  /// "S+D+K", "full", "full-D", "vanilla".
  static Flags parse(const std::string& text) {
    Flags f;
    std::string rest = text;
    std::string removed;
    if (const auto minus = rest.find('-'); minus != std::string::npos) {
      removed = rest.substr(minus + 1);
      rest = rest.substr(0, minus);
    }
    auto set = [&](Flags& fl, const std::string& tok, bool v) {
      if (tok == "S") fl.S = v;
      else if (tok == "D") fl.D = v;
      else if (tok == "K") fl.K = v;
      else if (tok == "B") fl.B = v;
      else if (tok == "G") fl.G = v;
      else if (tok == "M") fl.M = v;
      else if (tok == "All") fl.All = v;
      else if (tok == "R") fl.R = v;
      else if (tok == "full" && v) fl = full();
      else if (tok == "vanilla" || tok.empty()) {}
      else throw UsageError("unknown architecture flag '" + tok + "'");
    };
    auto each = [&](const std::string& s, bool v) {
      std::stringstream ss(s);
      std::string tok;
      while (std::getline(ss, tok, '+')) set(f, tok, v);
    };
    each(rest, true);
    each(removed, false);
    return f;
  }
};

struct ArpanConfig {
  Flags flags = Flags::full();
  bool attention = true;  // false builds the attention-free ARP-N variant
  double width_scale = 1.0;
  std::size_t input_h = 128;  // frequency bins
  std::size_t input_w = 256;  // frames
  std::size_t pool_grid = 64;
  double dropout_p = 0.2;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  std::size_t channels(std::size_t base) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(base) * width_scale)));
  }

  void validate() const {
    if (!(width_scale > 0.0) || width_scale * 64.0 < 1.0) throw DataError("width_scale must satisfy width_scale*64 >= 1");
    if (input_h == 0 || input_w == 0) throw DataError("input shape must be positive");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw DataError("dropout_p must lie in [0, 1)");
    if (noise_sigma < 0.0) throw DataError("noise_sigma must be >= 0");
    if (pool_grid == 0) throw DataError("pool_grid must be positive");
  }

  static ArpanConfig paper() { return {}; }

  /// Laptop-scale preset matched to the desk front end (32x64 inputs).
  static ArpanConfig desk() {
    ArpanConfig c;
    c.width_scale = 1.0 / 16.0;
    c.input_h = 32;
    c.input_w = 64;
    c.pool_grid = 16;
    c.dropout_p = 0.05;  // 4-channel layers: P(any channel dropped) ~ 0.2
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ArpanConfig& c) {
  j = {{"flags", c.flags.to_string()}, {"attention", c.attention},     {"width_scale", c.width_scale},
       {"input_h", c.input_h},         {"input_w", c.input_w},         {"pool_grid", c.pool_grid},
       {"dropout_p", c.dropout_p},     {"noise_sigma", c.noise_sigma}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ArpanConfig& c) {
  ArpanConfig d;
  c.flags = Flags::parse(j.value("flags", d.flags.to_string()));
  c.attention = j.value("attention", d.attention);
  c.width_scale = j.value("width_scale", d.width_scale);
  c.input_h = j.value("input_h", d.input_h);
  c.input_w = j.value("input_w", d.input_w);
  c.pool_grid = j.value("pool_grid", d.pool_grid);
  c.dropout_p = j.value("dropout_p", d.dropout_p);
  c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  c.seed = j.value("seed", d.seed);
}

struct PlanEntry {
  std::string kind;
  std::string description;
  Shape output_shape;
  std::size_t parameters = 0;
};

template <typename T>
class Model {
 public:
  Model(ArpanConfig config, nn::Sequential<T> net) : config_(std::move(config)), net_(std::move(net)) {}

  const ArpanConfig& config() const { return config_; }
  nn::Sequential<T>& net() { return net_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) { return net_.forward(x, mode); }
  Tensor<T> backward(const Tensor<T>& gy) { return net_.backward(gy); }

  /// One probability per batch element.
  std::vector<T> predict(const Tensor<T>& x, Mode mode = Mode::infer) {
    const auto y = forward(x, mode);
    return y.values();
  }

  std::vector<T> predict(const std::vector<const dsp::Spectrogram*>& batch, Mode mode = Mode::infer);

  std::size_t count_parameters() { return net_.count_parameters(); }

  std::vector<PlanEntry> plan() {
    std::vector<PlanEntry> out;
    Shape s = net_.input_shape();
    for (std::size_t i = 0; i < net_.size(); ++i) {
      auto& l = net_.layer(i);
      s = l.output_shape(s);
      out.push_back({l.kind(), l.describe(), s, l.trainable_count()});
    }
    return out;
  }

  std::string plan_table() {
    std::ostringstream os;
    os << std::left << std::setw(4) << "#" << std::setw(34) << "layer" << std::setw(16) << "output" << "params\n";
    std::size_t i = 0;
    for (const auto& e : plan())
      os << std::left << std::setw(4) << i++ << std::setw(34) << e.description << std::setw(16)
         << nn::shape_str(e.output_shape) << e.parameters << '\n';
    os << "total trainable parameters: " << count_parameters() << '\n';
    return os.str();
  }

  /// Swap every attention block for an identity pass-through.
  void strip_attention() {
    for (std::size_t i = 0; i < net_.size(); ++i)
      if (net_.layer(i).kind() == "spatial_attention") net_.replace(i, std::make_unique<nn::IdentityLayer<T>>());
  }

 private:
  ArpanConfig config_;
  nn::Sequential<T> net_;
};

/// Pack spectrograms into an [N, M, frames, 1] tensor.
template <typename T>
Tensor<T> to_batch(const std::vector<const dsp::Spectrogram*>& batch) {
  if (batch.empty()) throw ShapeError("to_batch: empty batch");
  const std::size_t h = batch[0]->bins, w = batch[0]->frames;
  Tensor<T> x({batch.size(), h, w, 1});
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b]->bins != h || batch[b]->frames != w) throw ShapeError("to_batch: mixed spectrogram shapes");
    std::copy(batch[b]->values.begin(), batch[b]->values.end(), x.data() + b * h * w);
  }
  return x;
}

template <typename T>
std::vector<T> Model<T>::predict(const std::vector<const dsp::Spectrogram*>& batch, Mode mode) {
  return predict(to_batch<T>(batch), mode);
}

/// Assemble the network. Deterministic for a given config (weights drawn from config.seed).
template <typename T>
Model<T> build(const ArpanConfig& cfg) {
  using namespace nn;
  cfg.validate();
  const auto& f = cfg.flags;
  std::mt19937_64 rng(derive_seed(cfg.seed, "weights"));
  Sequential<T> net(Shape{cfg.input_h, cfg.input_w, 1});
  Shape shape = net.input_shape();
  auto push = [&](LayerPtr<T> l) {
    shape = l->output_shape(shape);
    net.add(std::move(l));
  };

  const std::size_t c64 = cfg.channels(64), c128 = cfg.channels(128), c256 = cfg.channels(256);
  const bool early_dropout = f.B || f.All;

  if (f.G) push(std::make_unique<GaussianNoiseLayer<T>>(cfg.noise_sigma));

  auto initial_block = [&](std::size_t k, std::size_t cin) {
    push(std::make_unique<Conv2dLayer<T>>(make_conv_params<T>(k, k, cin, c64, rng), Padding::same));
    push(std::make_unique<BatchNormLayer<T>>(make_bn_params<T>(c64)));
    if (early_dropout) push(std::make_unique<SpatialDropoutLayer<T>>(cfg.dropout_p));
    push(std::make_unique<ActivationLayer<T>>(Activation::relu));
    if (cfg.attention)
      push(std::make_unique<AttentionLayer<T>>(make_conv_params<T>(7, 7, 2, 1, rng, LayerKind::attention_conv),
                                               make_bn_params<T>(1)));
  };
  initial_block(f.K ? 7 : 3, 1);
  if (f.D) initial_block(f.K ? 5 : 3, c64);

  if (f.M)
    push(std::make_unique<AdaptiveMaxPoolLayer<T>>(cfg.pool_grid, cfg.pool_grid));
  else
    push(std::make_unique<MaxPoolLayer<T>>(2, 4));

  std::size_t cin = c64;
  for (int i = 0; i < 3; ++i) {
    push(std::make_unique<Conv2dLayer<T>>(make_conv_params<T>(3, 3, cin, c128, rng), Padding::same));
    if (f.All) push(std::make_unique<SpatialDropoutLayer<T>>(cfg.dropout_p));
    push(std::make_unique<ActivationLayer<T>>(Activation::relu));
    push(std::make_unique<MaxPoolLayer<T>>(2, 2));
    cin = c128;
  }

  push(std::make_unique<Conv2dLayer<T>>(make_conv_params<T>(3, 3, c128, c256, rng), Padding::same));
  push(std::make_unique<BatchNormLayer<T>>(make_bn_params<T>(c256)));
  if (f.All) push(std::make_unique<SpatialDropoutLayer<T>>(cfg.dropout_p));
  push(std::make_unique<ActivationLayer<T>>(f.S ? Activation::sigmoid : Activation::relu));

  push(std::make_unique<FlattenLayer<T>>());
  const std::size_t flat = shape.at(0);
  const std::size_t hidden = cfg.channels(256);
  push(std::make_unique<DenseLayer<T>>(make_dense_params<T>(flat, hidden, rng)));
  push(std::make_unique<ActivationLayer<T>>(Activation::sigmoid));
  push(std::make_unique<DenseLayer<T>>(make_dense_params<T>(hidden, 1, rng)));
  push(std::make_unique<ActivationLayer<T>>(Activation::sigmoid));

  Model<T> model(cfg, std::move(net));
  model.net().reseed(RandomState{cfg.seed, 0});
  return model;
}

}  // namespace upam::model

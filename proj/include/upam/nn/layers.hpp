#pragma once

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "upam/core/random.hpp"
#include "upam/nn/ops.hpp"

namespace upam::nn {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
  bool trainable;
};

/// One node of a sequential network. forward() caches what backward() needs;
/// backward() returns dL/dinput and accumulates parameter gradients.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual std::string describe() const { return kind(); }
  /// Per-sample output shape (H, W, C) or (D) for a given per-sample input shape.
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  virtual Tensor<T> backward(const Tensor<T>& gy) = 0;

  virtual std::vector<LayerParams<T>*> params() { return {}; }
  virtual void reseed(const RandomState&) {}

  std::size_t trainable_count() {
    std::size_t n = 0;
    for (auto* p : params()) n += p->trainable_count();
    return n;
  }
};

template <typename T>
using LayerPtr = std::unique_ptr<Layer<T>>;

template <typename T>
class GaussianNoiseLayer final : public Layer<T> {
 public:
  explicit GaussianNoiseLayer(double sigma) : sigma_(sigma) {}
  std::string kind() const override { return "gaussian_noise"; }
  std::string describe() const override { return "gaussian_noise |N(0," + std::to_string(sigma_) + "^2)|"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override { return gaussian_noise(x, sigma_, rng_, mode); }
  Tensor<T> backward(const Tensor<T>& gy) override { return gy; }
  void reseed(const RandomState& rs) override { rng_ = rs.engine(); }

 private:
  double sigma_;
  std::mt19937_64 rng_{};
};

template <typename T>
class Conv2dLayer final : public Layer<T> {
 public:
  Conv2dLayer(LayerParams<T> p, Padding pad) : p_(std::move(p)), pad_(pad) {}
  std::string kind() const override { return "conv2d"; }
  std::string describe() const override {
    return "conv2d " + std::to_string(p_.weights.dim(0)) + "x" + std::to_string(p_.weights.dim(1)) + "x" +
           std::to_string(p_.weights.dim(2)) + "->" + std::to_string(p_.weights.dim(3)) +
           (pad_ == Padding::same ? " same" : " valid");
  }
  Shape output_shape(const Shape& in) const override {
    if (pad_ == Padding::same) return {in[0], in[1], p_.weights.dim(3)};
    return {in[0] - p_.weights.dim(0) + 1, in[1] - p_.weights.dim(1) + 1, p_.weights.dim(3)};
  }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    x_ = x;
    return conv2d(x, p_, pad_);
  }
  Tensor<T> backward(const Tensor<T>& gy) override { return conv2d_backward(x_, p_, pad_, gy); }
  std::vector<LayerParams<T>*> params() override { return {&p_}; }

 private:
  LayerParams<T> p_;
  Padding pad_;
  Tensor<T> x_;
};

template <typename T>
class BatchNormLayer final : public Layer<T> {
 public:
  explicit BatchNormLayer(LayerParams<T> p) : p_(std::move(p)) {}
  std::string kind() const override { return "batch_norm"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override { return batch_norm(x, p_, mode, &cache_); }
  Tensor<T> backward(const Tensor<T>& gy) override { return batch_norm_backward(cache_, p_, gy); }
  std::vector<LayerParams<T>*> params() override { return {&p_}; }

 private:
  LayerParams<T> p_;
  BatchNormCache<T> cache_;
};

template <typename T>
class SpatialDropoutLayer final : public Layer<T> {
 public:
  explicit SpatialDropoutLayer(double p) : p_(p) {}
  std::string kind() const override { return "spatial_dropout"; }
  std::string describe() const override { return "spatial_dropout p=" + std::to_string(p_); }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override { return spatial_dropout(x, p_, rng_, mode, &mask_); }
  Tensor<T> backward(const Tensor<T>& gy) override { return spatial_dropout_backward(mask_, gy); }
  void reseed(const RandomState& rs) override { rng_ = rs.engine(); }

 private:
  double p_;
  std::mt19937_64 rng_{};
  std::vector<T> mask_;
};

template <typename T>
class ActivationLayer final : public Layer<T> {
 public:
  explicit ActivationLayer(Activation a) : a_(a) {}
  std::string kind() const override { return to_string(a_); }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    x_ = x;
    y_ = activation(x, a_);
    return y_;
  }
  Tensor<T> backward(const Tensor<T>& gy) override { return activation_backward(x_, y_, a_, gy); }

 private:
  Activation a_;
  Tensor<T> x_, y_;
};

template <typename T>
class AttentionLayer final : public Layer<T> {
 public:
  AttentionLayer(LayerParams<T> conv, LayerParams<T> bn) : conv_(std::move(conv)), bn_(std::move(bn)) {}
  std::string kind() const override { return "spatial_attention"; }
  std::string describe() const override {
    return "spatial_attention " + std::to_string(conv_.weights.dim(0)) + "x" + std::to_string(conv_.weights.dim(1));
  }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    return cbam_spatial_attention(x, conv_, bn_, mode, &cache_);
  }
  Tensor<T> backward(const Tensor<T>& gy) override { return cbam_spatial_attention_backward(cache_, conv_, bn_, gy); }
  std::vector<LayerParams<T>*> params() override { return {&conv_, &bn_}; }
  const Tensor<T>& last_map() const { return cache_.map; }

 private:
  LayerParams<T> conv_, bn_;
  AttentionCache<T> cache_;
};

/// Pass-through, used to stand in for a removed block while keeping layer indices aligned.
template <typename T>
class IdentityLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "identity"; }
  Shape output_shape(const Shape& in) const override { return in; }
  Tensor<T> forward(const Tensor<T>& x, Mode) override { return x; }
  Tensor<T> backward(const Tensor<T>& gy) override { return gy; }
};

template <typename T>
class MaxPoolLayer final : public Layer<T> {
 public:
  MaxPoolLayer(std::size_t ph, std::size_t pw) : ph_(ph), pw_(pw) {}
  std::string kind() const override { return "max_pool"; }
  std::string describe() const override { return "max_pool " + std::to_string(ph_) + "x" + std::to_string(pw_); }
  Shape output_shape(const Shape& in) const override {
    fixed_spans(in[0], ph_);
    fixed_spans(in[1], pw_);
    return {in[0] / ph_, in[1] / pw_, in[2]};
  }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape();
    return max_pool2d(x, ph_, pw_, &argmax_);
  }
  Tensor<T> backward(const Tensor<T>& gy) override { return region_max_pool_backward(in_shape_, argmax_, gy); }

 private:
  std::size_t ph_, pw_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class AdaptiveMaxPoolLayer final : public Layer<T> {
 public:
  AdaptiveMaxPoolLayer(std::size_t oh, std::size_t ow) : oh_(oh), ow_(ow) {}
  std::string kind() const override { return "adaptive_max_pool"; }
  std::string describe() const override {
    return "adaptive_max_pool ->" + std::to_string(oh_) + "x" + std::to_string(ow_);
  }
  Shape output_shape(const Shape& in) const override {
    adaptive_spans(in[0], oh_);
    adaptive_spans(in[1], ow_);
    return {oh_, ow_, in[2]};
  }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape();
    return adaptive_max_pool(x, oh_, ow_, &argmax_);
  }
  Tensor<T> backward(const Tensor<T>& gy) override { return region_max_pool_backward(in_shape_, argmax_, gy); }

 private:
  std::size_t oh_, ow_;
  Shape in_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename T>
class FlattenLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "flatten"; }
  Shape output_shape(const Shape& in) const override { return {shape_size(in)}; }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape();
    Tensor<T> y = x;
    y.reshape({x.dim(0), x.size() / x.dim(0)});
    return y;
  }
  Tensor<T> backward(const Tensor<T>& gy) override {
    Tensor<T> gx = gy;
    gx.reshape(in_shape_);
    return gx;
  }

 private:
  Shape in_shape_;
};

template <typename T>
class DenseLayer final : public Layer<T> {
 public:
  explicit DenseLayer(LayerParams<T> p) : p_(std::move(p)) {}
  std::string kind() const override { return "dense"; }
  std::string describe() const override {
    return "dense " + std::to_string(p_.weights.dim(0)) + "->" + std::to_string(p_.weights.dim(1));
  }
  Shape output_shape(const Shape& in) const override {
    if (in.size() != 1 || in[0] != p_.weights.dim(0))
      throw ShapeError("dense: input " + shape_str(in) + " does not match " + std::to_string(p_.weights.dim(0)));
    return {p_.weights.dim(1)};
  }
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    x_ = x;
    return dense(x, p_);
  }
  Tensor<T> backward(const Tensor<T>& gy) override { return dense_backward(x_, p_, gy); }
  std::vector<LayerParams<T>*> params() override { return {&p_}; }

 private:
  LayerParams<T> p_;
  Tensor<T> x_;
};

}  // namespace upam::nn

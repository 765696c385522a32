#pragma once

#include <memory>
#include <string>
#include <vector>

#include "upam/nn/layers.hpp"

namespace upam::nn {

/// Ordered stack of layers with a reverse-mode pass that walks the stack backwards.
template <typename T>
class Sequential {
 public:
  Sequential() = default;
  explicit Sequential(Shape input_shape) : input_shape_(std::move(input_shape)) {}

  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  void add(LayerPtr<T> layer) { layers_.push_back(std::move(layer)); }
  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    auto& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }

  const Shape& input_shape() const { return input_shape_; }
  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }
  void replace(std::size_t i, LayerPtr<T> l) { layers_.at(i) = std::move(l); }

  /// x is [N, input_shape...].
  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.rank() != input_shape_.size() + 1)
      throw ShapeError("forward: batch rank mismatch, expected [N]" + shape_str(input_shape_) + ", got " + shape_str(x.shape()));
    for (std::size_t i = 0; i < input_shape_.size(); ++i)
      if (x.dim(i + 1) != input_shape_[i])
        throw ShapeError("forward: input " + shape_str(x.shape()) + " does not match model input " + shape_str(input_shape_));
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h, mode);
    return h;
  }

  /// Gradient of the loss with respect to the network input.
  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> g = gy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<LayerParams<T>*> params() {
    std::vector<LayerParams<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  /// Trainable tensors (weights then bias of each parameter block, in layer order).
  std::vector<Tensor<T>*> trainable() {
    std::vector<Tensor<T>*> out;
    for (auto* p : params()) {
      out.push_back(&p->weights);
      out.push_back(&p->bias);
    }
    return out;
  }

  /// Every persisted tensor with a stable name, including BN running statistics.
  std::vector<NamedTensor<T>> named_tensors() {
    std::vector<NamedTensor<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto ps = layers_[i]->params();
      for (std::size_t j = 0; j < ps.size(); ++j) {
        const std::string base = "l" + std::to_string(i) + "." + std::to_string(j) + "." + to_string(ps[j]->kind);
        out.push_back({base + ".weights", &ps[j]->weights, true});
        out.push_back({base + ".bias", &ps[j]->bias, true});
        if (ps[j]->bn) {
          out.push_back({base + ".running_mean", &ps[j]->bn->running_mean, false});
          out.push_back({base + ".running_var", &ps[j]->bn->running_var, false});
        }
      }
    }
    return out;
  }

  std::size_t count_parameters() {
    std::size_t n = 0;
    for (auto& l : layers_) n += l->trainable_count();
    return n;
  }

  void zero_grad() {
    for (auto* t : trainable()) t->zero_grad();
  }

  /// Stochastic layers draw from rs.child(layer index).
  void reseed(const RandomState& rs) {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->reseed(rs.child(i));
  }

  std::vector<std::vector<T>> snapshot() {
    std::vector<std::vector<T>> s;
    for (auto& nt : named_tensors()) s.push_back(nt.tensor->values());
    return s;
  }

  void restore(const std::vector<std::vector<T>>& s) {
    auto nts = named_tensors();
    if (s.size() != nts.size()) throw ShapeError("restore: snapshot has a different tensor count");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i].size() != nts[i].tensor->size()) throw ShapeError("restore: tensor " + nts[i].name + " size mismatch");
      nts[i].tensor->values() = s[i];
    }
  }

 private:
  Shape input_shape_;
  std::vector<LayerPtr<T>> layers_;
};

}  // namespace upam::nn

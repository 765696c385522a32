#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "upam/core/error.hpp"
#include "upam/core/random.hpp"
#include "upam/nn/tensor.hpp"

// Functional forward/backward kernels. Activations are NHWC; convolution
// weights are [kh, kw, c_in, c_out]; dense weights are [in, out].

namespace upam::nn {

enum class Mode { train, infer };
enum class Padding { same, valid };
enum class LayerKind { conv2d, batch_norm, dense, attention_conv };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::dense: return "dense";
    case LayerKind::attention_conv: return "attention_conv";
  }
  return "?";
}

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  double eps = 1e-5;
  double momentum = 0.9;
};

/// Trainable tensors of one layer. For batch_norm, `weights` holds gamma and
/// `bias` holds beta; running statistics live in `bn`.
template <typename T>
struct LayerParams {
  LayerKind kind = LayerKind::conv2d;
  Tensor<T> weights;
  Tensor<T> bias;
  std::optional<BatchNormState<T>> bn;

  std::size_t trainable_count() const { return weights.size() + bias.size(); }
};

template <typename T>
LayerParams<T> make_conv_params(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout,
                                std::mt19937_64& rng, LayerKind kind = LayerKind::conv2d) {
  LayerParams<T> p;
  p.kind = kind;
  p.weights = Tensor<T>({kh, kw, cin, cout});
  p.bias = Tensor<T>({cout});
  const double limit = std::sqrt(6.0 / static_cast<double>(kh * kw * cin));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (auto& w : p.weights.values()) w = static_cast<T>(u(rng));
  return p;
}

template <typename T>
LayerParams<T> make_dense_params(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  LayerParams<T> p;
  p.kind = LayerKind::dense;
  p.weights = Tensor<T>({in, out});
  p.bias = Tensor<T>({out});
  const double limit = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (auto& w : p.weights.values()) w = static_cast<T>(u(rng));
  return p;
}

template <typename T>
LayerParams<T> make_bn_params(std::size_t channels, double eps = 1e-5, double momentum = 0.9) {
  LayerParams<T> p;
  p.kind = LayerKind::batch_norm;
  p.weights = Tensor<T>({channels}, T(1));
  p.bias = Tensor<T>({channels}, T(0));
  p.bn = BatchNormState<T>{Tensor<T>({channels}, T(0)), Tensor<T>({channels}, T(1)), eps, momentum};
  return p;
}

// ---------------------------------------------------------------- conv2d

struct ConvGeometry {
  std::size_t n, h, w, cin, kh, kw, cout, ho, wo, pad_h, pad_w;
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& x, const LayerParams<T>& p, Padding pad) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be NHWC, got " + shape_str(x.shape()));
  if (p.weights.rank() != 4) throw ShapeError("conv2d: weights must be [kh,kw,cin,cout]");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), p.weights.dim(0), p.weights.dim(1),
                 p.weights.dim(3), 0, 0, 0, 0};
  if (p.weights.dim(2) != g.cin)
    throw ShapeError("conv2d: input has " + std::to_string(g.cin) + " channels, kernel expects " +
                     std::to_string(p.weights.dim(2)));
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ShapeError("conv2d: kernel must be odd-sized");
  if (p.bias.size() != g.cout) throw ShapeError("conv2d: bias length mismatch");
  if (pad == Padding::same) {
    g.pad_h = g.kh / 2;
    g.pad_w = g.kw / 2;
    g.ho = g.h;
    g.wo = g.w;
  } else {
    if (g.h < g.kh || g.w < g.kw) throw ShapeError("conv2d: input smaller than kernel with valid padding");
    g.ho = g.h - g.kh + 1;
    g.wo = g.w - g.kw + 1;
  }
  return g;
}

namespace detail {

// Patch matrix for one image, laid out [kh*kw*cin, ho*wo] so the pixel axis is contiguous.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, std::vector<T>& col) {
  const std::size_t P = g.ho * g.wo;
  col.assign(g.kh * g.kw * g.cin * P, T(0));
  for (std::size_t ky = 0; ky < g.kh; ++ky)
    for (std::size_t kx = 0; kx < g.kw; ++kx)
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_w);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          const T* in = img + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          const std::size_t p = oy * g.wo + ox;
          for (std::size_t ci = 0; ci < g.cin; ++ci) col[((ky * g.kw + kx) * g.cin + ci) * P + p] = in[ci];
        }
      }
}

template <typename T>
void col2im(const std::vector<T>& col, const ConvGeometry& g, T* img) {
  const std::size_t P = g.ho * g.wo;
  for (std::size_t ky = 0; ky < g.kh; ++ky)
    for (std::size_t kx = 0; kx < g.kw; ++kx)
      for (std::size_t oy = 0; oy < g.ho; ++oy) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t ox = 0; ox < g.wo; ++ox) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(g.pad_w);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          T* out = img + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          const std::size_t p = oy * g.wo + ox;
          for (std::size_t ci = 0; ci < g.cin; ++ci) out[ci] += col[((ky * g.kw + kx) * g.cin + ci) * P + p];
        }
      }
}

// Eight independent partial sums so the reduction vectorizes without reassociation flags.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T part[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t j = 0; j < 8; ++j) part[j] += a[i + j] * b[i + j];
  T s = 0;
  for (; i < n; ++i) s += a[i] * b[i];
  for (T v : part) s += v;
  return s;
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const LayerParams<T>& p, Padding pad) {
  const auto g = conv_geometry(x, p, pad);
  const std::size_t P = g.ho * g.wo, K = g.kh * g.kw * g.cin;
  Tensor<T> y({g.n, g.ho, g.wo, g.cout});
  const T* wv = p.weights.data();
  std::vector<T> col, acc(g.cout * P);
  for (std::size_t n = 0; n < g.n; ++n) {
    detail::im2col(x.data() + n * g.h * g.w * g.cin, g, col);
    for (std::size_t co = 0; co < g.cout; ++co) {
      T* a = acc.data() + co * P;
      std::fill(a, a + P, p.bias[co]);
      for (std::size_t k = 0; k < K; ++k) {
        const T wk = wv[k * g.cout + co];
        const T* c = col.data() + k * P;
        for (std::size_t q = 0; q < P; ++q) a[q] += wk * c[q];
      }
    }
    T* out = y.data() + n * P * g.cout;
    for (std::size_t q = 0; q < P; ++q)
      for (std::size_t co = 0; co < g.cout; ++co) out[q * g.cout + co] = acc[co * P + q];
  }
  return y;
}

/// Returns dL/dx and accumulates dL/dW, dL/db into p's gradient buffers.
template <typename T>
Tensor<T> conv2d_backward(const Tensor<T>& x, LayerParams<T>& p, Padding pad, const Tensor<T>& gy) {
  const auto g = conv_geometry(x, p, pad);
  const std::size_t P = g.ho * g.wo, K = g.kh * g.kw * g.cin;
  Tensor<T> gx(x.shape());
  auto& gw = p.weights.grad();
  auto& gb = p.bias.grad();
  const T* wv = p.weights.data();
  std::vector<T> col, gcol(K * P), gyt(g.cout * P);
  for (std::size_t n = 0; n < g.n; ++n) {
    const T* go = gy.data() + n * P * g.cout;
    for (std::size_t q = 0; q < P; ++q)
      for (std::size_t co = 0; co < g.cout; ++co) gyt[co * P + q] = go[q * g.cout + co];
    detail::im2col(x.data() + n * g.h * g.w * g.cin, g, col);
    for (std::size_t co = 0; co < g.cout; ++co) {
      const T* d = gyt.data() + co * P;
      T s = 0;
      for (std::size_t q = 0; q < P; ++q) s += d[q];
      gb[co] += s;
      for (std::size_t k = 0; k < K; ++k) {
        const T* c = col.data() + k * P;
        gw[k * g.cout + co] += detail::dot(c, d, P);
      }
    }
    std::fill(gcol.begin(), gcol.end(), T(0));
    for (std::size_t k = 0; k < K; ++k) {
      T* gc = gcol.data() + k * P;
      for (std::size_t co = 0; co < g.cout; ++co) {
        const T wk = wv[k * g.cout + co];
        const T* d = gyt.data() + co * P;
        for (std::size_t q = 0; q < P; ++q) gc[q] += wk * d[q];
      }
    }
    detail::col2im(gcol, g, gx.data() + n * g.h * g.w * g.cin);
  }
  return gx;
}

// ------------------------------------------------------------ batch norm

template <typename T>
struct BatchNormCache {
  std::vector<T> xhat;
  std::vector<T> inv_std;  // per channel
  Mode mode = Mode::infer;
};

/// Per-channel normalization over every axis but the last (2D BN over N*H*W).
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, LayerParams<T>& p, Mode mode, BatchNormCache<T>* cache = nullptr) {
  if (!p.bn) throw ShapeError("batch_norm: params carry no running statistics");
  const std::size_t c = x.shape().back();
  if (p.weights.size() != c) throw ShapeError("batch_norm: gamma length does not match channel count");
  const std::size_t m = x.size() / c;
  if (m == 0) throw ShapeError("batch_norm: empty batch");
  auto& st = *p.bn;
  const T* g = p.weights.data();
  const T* b = p.bias.data();
  Tensor<T> y(x.shape());
  std::vector<T> inv_std(c);
  std::vector<T> xhat(x.size());

  if (mode == Mode::train) {
    std::vector<double> mean(c, 0.0), var(c, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < c; ++k) mean[k] += x[i * c + k];
    for (auto& v : mean) v /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        const double d = x[i * c + k] - mean[k];
        var[k] += d * d;
      }
    for (auto& v : var) v /= static_cast<double>(m);
    for (std::size_t k = 0; k < c; ++k) {
      inv_std[k] = static_cast<T>(1.0 / std::sqrt(var[k] + st.eps));
      st.running_mean[k] = static_cast<T>(st.momentum * st.running_mean[k] + (1.0 - st.momentum) * mean[k]);
      st.running_var[k] = static_cast<T>(st.momentum * st.running_var[k] + (1.0 - st.momentum) * var[k]);
    }
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        const T xh = static_cast<T>((x[i * c + k] - mean[k]) * inv_std[k]);
        xhat[i * c + k] = xh;
        y[i * c + k] = g[k] * xh + b[k];
      }
  } else {
    for (std::size_t k = 0; k < c; ++k)
      inv_std[k] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(st.running_var[k]) + st.eps));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        const T xh = (x[i * c + k] - st.running_mean[k]) * inv_std[k];
        xhat[i * c + k] = xh;
        y[i * c + k] = g[k] * xh + b[k];
      }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->mode = mode;
  }
  return y;
}

template <typename T>
Tensor<T> batch_norm_backward(const BatchNormCache<T>& cache, LayerParams<T>& p, const Tensor<T>& gy) {
  const std::size_t c = p.weights.size();
  const std::size_t m = gy.size() / c;
  auto& gg = p.weights.grad();
  auto& gb = p.bias.grad();
  const T* g = p.weights.data();
  Tensor<T> gx(gy.shape());

  std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < c; ++k) {
      const double dy = gy[i * c + k];
      sum_dy[k] += dy;
      sum_dy_xhat[k] += dy * cache.xhat[i * c + k];
    }
  for (std::size_t k = 0; k < c; ++k) {
    gg[k] += static_cast<T>(sum_dy_xhat[k]);
    gb[k] += static_cast<T>(sum_dy[k]);
  }
  if (cache.mode == Mode::train) {
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < c; ++k) {
        const double dy = gy[i * c + k];
        const double xh = cache.xhat[i * c + k];
        gx[i * c + k] = static_cast<T>(g[k] * cache.inv_std[k] * inv_m *
                                       (static_cast<double>(m) * dy - sum_dy[k] - xh * sum_dy_xhat[k]));
      }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t k = 0; k < c; ++k) gx[i * c + k] = gy[i * c + k] * g[k] * cache.inv_std[k];
  }
  return gx;
}

// ------------------------------------------------------------- dropout

/// Channel mask [N, C]: 0 for dropped channels, 1/(1-p) for survivors.
template <typename T>
Tensor<T> spatial_dropout(const Tensor<T>& x, double p, std::mt19937_64& rng, Mode mode, std::vector<T>* mask_out = nullptr) {
  if (p < 0.0 || p >= 1.0) throw DataError("spatial_dropout: p must lie in [0, 1)");
  if (mode == Mode::infer || p == 0.0) {
    if (mask_out) mask_out->clear();
    return x;
  }
  const std::size_t n = x.dim(0);
  const std::size_t c = x.shape().back();
  const std::size_t per = x.size() / (n * c);
  std::vector<T> mask(n * c);
  std::bernoulli_distribution keep(1.0 - p);
  const T scale = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask) m = keep(rng) ? scale : T(0);
  Tensor<T> y(x.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t s = 0; s < per; ++s)
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t i = (b * per + s) * c + k;
        y[i] = x[i] * mask[b * c + k];
      }
  if (mask_out) *mask_out = std::move(mask);
  return y;
}

template <typename T>
Tensor<T> spatial_dropout_backward(const std::vector<T>& mask, const Tensor<T>& gy) {
  if (mask.empty()) return gy;
  const std::size_t n = gy.dim(0);
  const std::size_t c = gy.shape().back();
  const std::size_t per = gy.size() / (n * c);
  Tensor<T> gx(gy.shape());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t s = 0; s < per; ++s)
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t i = (b * per + s) * c + k;
        gx[i] = gy[i] * mask[b * c + k];
      }
  return gx;
}

// ------------------------------------------------------------- pooling

/// Half-open [begin, end) spans along one axis.
using Spans = std::vector<std::pair<std::size_t, std::size_t>>;

/// Region i spans [floor(i*in/out), floor((i+1)*in/out)); the spans partition [0, in).
inline Spans adaptive_spans(std::size_t in, std::size_t out) {
  if (out == 0 || in < out)
    throw ShapeError("adaptive pooling: input extent " + std::to_string(in) + " smaller than output " + std::to_string(out));
  Spans s(out);
  for (std::size_t i = 0; i < out; ++i) s[i] = {i * in / out, (i + 1) * in / out};
  return s;
}

inline Spans fixed_spans(std::size_t in, std::size_t pool) {
  if (pool == 0 || in % pool != 0)
    throw ShapeError("max_pool2d: extent " + std::to_string(in) + " not divisible by pool " + std::to_string(pool));
  Spans s(in / pool);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = {i * pool, (i + 1) * pool};
  return s;
}

/// Max over each (row span x col span) region; argmax records the flat input
/// index of the first maximum in row-major order.
template <typename T>
Tensor<T> region_max_pool(const Tensor<T>& x, const Spans& rows, const Spans& cols, std::vector<std::size_t>* argmax = nullptr) {
  if (x.rank() != 4) throw ShapeError("pooling: input must be NHWC");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t ho = rows.size(), wo = cols.size();
  Tensor<T> y({n, ho, wo, c});
  if (argmax) argmax->assign(y.size(), 0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j)
        for (std::size_t k = 0; k < c; ++k) {
          std::size_t best = ((b * h + rows[i].first) * w + cols[j].first) * c + k;
          T best_v = x[best];
          for (std::size_t r = rows[i].first; r < rows[i].second; ++r)
            for (std::size_t q = cols[j].first; q < cols[j].second; ++q) {
              const std::size_t idx = ((b * h + r) * w + q) * c + k;
              if (x[idx] > best_v) {
                best_v = x[idx];
                best = idx;
              }
            }
          const std::size_t o = ((b * ho + i) * wo + j) * c + k;
          y[o] = best_v;
          if (argmax) (*argmax)[o] = best;
        }
  return y;
}

template <typename T>
Tensor<T> region_max_pool_backward(const Shape& in_shape, const std::vector<std::size_t>& argmax, const Tensor<T>& gy) {
  Tensor<T> gx(in_shape);
  for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
  return gx;
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t pool_h, std::size_t pool_w, std::vector<std::size_t>* argmax = nullptr) {
  return region_max_pool(x, fixed_spans(x.dim(1), pool_h), fixed_spans(x.dim(2), pool_w), argmax);
}

template <typename T>
Tensor<T> adaptive_max_pool(const Tensor<T>& x, std::size_t out_h, std::size_t out_w, std::vector<std::size_t>* argmax = nullptr) {
  return region_max_pool(x, adaptive_spans(x.dim(1), out_h), adaptive_spans(x.dim(2), out_w), argmax);
}

// ---------------------------------------------------------------- dense

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const LayerParams<T>& p) {
  if (p.weights.rank() != 2) throw ShapeError("dense: weights must be [in, out]");
  const std::size_t in = p.weights.dim(0), out = p.weights.dim(1);
  if (x.rank() != 2 || x.dim(1) != in)
    throw ShapeError("dense: input " + shape_str(x.shape()) + " does not match weight input dimension " + std::to_string(in));
  const std::size_t n = x.dim(0);
  Tensor<T> y({n, out});
  for (std::size_t b = 0; b < n; ++b) {
    T* yo = y.data() + b * out;
    std::copy(p.bias.data(), p.bias.data() + out, yo);
    const T* xi = x.data() + b * in;
    for (std::size_t i = 0; i < in; ++i) {
      const T v = xi[i];
      const T* wr = p.weights.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yo[o] += v * wr[o];
    }
  }
  return y;
}

template <typename T>
Tensor<T> dense_backward(const Tensor<T>& x, LayerParams<T>& p, const Tensor<T>& gy) {
  const std::size_t in = p.weights.dim(0), out = p.weights.dim(1);
  const std::size_t n = x.dim(0);
  auto& gw = p.weights.grad();
  auto& gb = p.bias.grad();
  Tensor<T> gx(x.shape());
  for (std::size_t b = 0; b < n; ++b) {
    const T* go = gy.data() + b * out;
    for (std::size_t o = 0; o < out; ++o) gb[o] += go[o];
    const T* xi = x.data() + b * in;
    T* gxi = gx.data() + b * in;
    for (std::size_t i = 0; i < in; ++i) {
      const T* wr = p.weights.data() + i * out;
      T* gwr = gw.data() + i * out;
      T acc = 0;
      for (std::size_t o = 0; o < out; ++o) {
        acc += go[o] * wr[o];
        gwr[o] += xi[i] * go[o];
      }
      gxi[i] = acc;
    }
  }
  return gx;
}

// ----------------------------------------------------------- activation

enum class Activation { relu, sigmoid };

inline const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "sigmoid"; }

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  Tensor<T> y(x.shape());
  if (kind == Activation::relu)
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  else
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
  return y;
}

/// relu uses the input, sigmoid the output; relu'(0) = 0.
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& x, const Tensor<T>& y, Activation kind, const Tensor<T>& gy) {
  Tensor<T> gx(gy.shape());
  if (kind == Activation::relu)
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = x[i] > T(0) ? gy[i] : T(0);
  else
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * y[i] * (T(1) - y[i]);
  return gx;
}

// ---------------------------------------------------------------- noise

/// Adds |N(0, sigma^2)| elementwise in train mode.
template <typename T>
Tensor<T> gaussian_noise(const Tensor<T>& x, double sigma, std::mt19937_64& rng, Mode mode) {
  if (sigma < 0.0) throw DataError("gaussian_noise: sigma must be >= 0");
  if (mode == Mode::infer || sigma == 0.0) return x;
  std::normal_distribution<double> nd(0.0, sigma);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + static_cast<T>(std::abs(nd(rng)));
  return y;
}

// ------------------------------------------------------- spatial attention

template <typename T>
struct AttentionCache {
  Tensor<T> input;
  Tensor<T> descriptors;  // [N,H,W,2]: channel mean, channel max
  std::vector<std::size_t> max_channel;
  BatchNormCache<T> bn;
  Tensor<T> map;  // [N,H,W,1]
};

/// Spatial gating: map = sigmoid(BN(conv7x7([mean_c(x), max_c(x)]))), y = x * map.
template <typename T>
Tensor<T> cbam_spatial_attention(const Tensor<T>& x, LayerParams<T>& conv, LayerParams<T>& bn, Mode mode,
                                 AttentionCache<T>* cache = nullptr) {
  if (x.rank() != 4 || x.dim(3) < 1) throw ShapeError("attention: input must be NHWC with C >= 1");
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t px = n * h * w;
  Tensor<T> desc({n, h, w, 2});
  std::vector<std::size_t> argmax(px);
  for (std::size_t i = 0; i < px; ++i) {
    const T* v = x.data() + i * c;
    T sum = 0;
    std::size_t best = 0;
    for (std::size_t k = 0; k < c; ++k) {
      sum += v[k];
      if (v[k] > v[best]) best = k;
    }
    desc[2 * i] = sum / static_cast<T>(c);
    desc[2 * i + 1] = v[best];
    argmax[i] = best;
  }
  BatchNormCache<T> bn_cache;
  const auto logits = batch_norm(conv2d(desc, conv, Padding::same), bn, mode, &bn_cache);
  const auto map = activation(logits, Activation::sigmoid);
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < px; ++i)
    for (std::size_t k = 0; k < c; ++k) y[i * c + k] = x[i * c + k] * map[i];
  if (cache) {
    cache->input = x;
    cache->descriptors = std::move(desc);
    cache->max_channel = std::move(argmax);
    cache->bn = std::move(bn_cache);
    cache->map = map;
  }
  return y;
}

template <typename T>
Tensor<T> cbam_spatial_attention_backward(const AttentionCache<T>& cache, LayerParams<T>& conv, LayerParams<T>& bn,
                                          const Tensor<T>& gy) {
  const auto& x = cache.input;
  const std::size_t c = x.dim(3);
  const std::size_t px = x.size() / c;
  Tensor<T> gx(x.shape());
  Tensor<T> gmap(cache.map.shape());
  for (std::size_t i = 0; i < px; ++i) {
    T acc = 0;
    for (std::size_t k = 0; k < c; ++k) {
      acc += gy[i * c + k] * x[i * c + k];
      gx[i * c + k] = gy[i * c + k] * cache.map[i];
    }
    gmap[i] = acc;
  }
  const auto glogit = activation_backward(cache.map, cache.map, Activation::sigmoid, gmap);
  const auto gconv = batch_norm_backward(cache.bn, bn, glogit);
  const auto gdesc = conv2d_backward(cache.descriptors, conv, Padding::same, gconv);
  for (std::size_t i = 0; i < px; ++i) {
    const T gmean = gdesc[2 * i] / static_cast<T>(c);
    for (std::size_t k = 0; k < c; ++k) gx[i * c + k] += gmean;
    gx[i * c + cache.max_channel[i]] += gdesc[2 * i + 1];
  }
  return gx;
}

}  // namespace upam::nn

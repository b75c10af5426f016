// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scopednas/tensor.hpp"

namespace scopednas {

enum class Activation { relu, leaky_relu, mish };

inline const char* activation_name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::mish: return "mish";
  }
  return "?";
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "mish") return Activation::mish;
  throw std::invalid_argument("unknown activation: " + name);
}

// LeakyReLU negative slope; the convention at x = 0 is the negative-side value.
inline constexpr double kLeakyReluSlope = 0.01;

enum class ConvAlgo { direct, im2col };

enum class PoolKind { max, avg, global_avg };

namespace detail {

template <class T>
T stable_softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t kernel,
                                    std::int64_t stride, std::int64_t padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

// C[m,n] += sum_k A[m,k] * B[k,n]
template <class T>
void gemm_acc(const T* a, const T* b, T* c, std::int64_t m_extent,
              std::int64_t k_extent, std::int64_t n_extent) {
  for (std::int64_t m = 0; m < m_extent; ++m) {
    T* crow = c + m * n_extent;
    const T* arow = a + m * k_extent;
    for (std::int64_t k = 0; k < k_extent; ++k) {
      const T av = arow[k];
      if (av == T(0)) continue;
      const T* brow = b + k * n_extent;
      for (std::int64_t n = 0; n < n_extent; ++n) crow[n] += av * brow[n];
    }
  }
}

// col[(i*K+kh)*K+kw, oh*OW+ow] for one sample; zero outside the input.
template <class T>
void im2col(const T* x, std::int64_t channels, std::int64_t h, std::int64_t w,
            std::int64_t kernel, std::int64_t stride, std::int64_t padding,
            std::int64_t oh, std::int64_t ow, T* col) {
  for (std::int64_t i = 0; i < channels; ++i) {
    const T* plane = x + i * h * w;
    for (std::int64_t kh = 0; kh < kernel; ++kh) {
      for (std::int64_t kw = 0; kw < kernel; ++kw) {
        T* row = col + ((i * kernel + kh) * kernel + kw) * (oh * ow);
        for (std::int64_t r = 0; r < oh; ++r) {
          const std::int64_t ih = r * stride - padding + kh;
          if (ih < 0 || ih >= h) {
            for (std::int64_t cidx = 0; cidx < ow; ++cidx) row[r * ow + cidx] = T(0);
            continue;
          }
          for (std::int64_t cidx = 0; cidx < ow; ++cidx) {
            const std::int64_t iw = cidx * stride - padding + kw;
            row[r * ow + cidx] = (iw >= 0 && iw < w) ? plane[ih * w + iw] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_acc(const T* col, std::int64_t channels, std::int64_t h, std::int64_t w,
                std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                std::int64_t oh, std::int64_t ow, T* x_grad) {
  for (std::int64_t i = 0; i < channels; ++i) {
    T* plane = x_grad + i * h * w;
    for (std::int64_t kh = 0; kh < kernel; ++kh) {
      for (std::int64_t kw = 0; kw < kernel; ++kw) {
        const T* row = col + ((i * kernel + kh) * kernel + kw) * (oh * ow);
        for (std::int64_t r = 0; r < oh; ++r) {
          const std::int64_t ih = r * stride - padding + kh;
          if (ih < 0 || ih >= h) continue;
          for (std::int64_t cidx = 0; cidx < ow; ++cidx) {
            const std::int64_t iw = cidx * stride - padding + kw;
            if (iw >= 0 && iw < w) plane[ih * w + iw] += row[r * ow + cidx];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation over NCHW input with OIKK weights. Both a direct reference
// path and an im2col path are provided; they agree to rounding error and the
// im2col path is the default for speed.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const std::optional<Tensor<T>>& bias, std::int64_t stride,
                 std::int64_t padding, ConvAlgo algo = ConvAlgo::im2col) {
  if (x.ndim() != 4) throw ShapeError("conv2d: input must be NCHW, got " + shape_str(x.shape()));
  if (weight.ndim() != 4) throw ShapeError("conv2d: weight must be OIKK, got " + shape_str(weight.shape()));
  if (weight.dim(2) != weight.dim(3)) throw ShapeError("conv2d: kernel must be square");
  if (x.dim(1) != weight.dim(1)) {
    throw ShapeError("conv2d: input channels " + std::to_string(x.dim(1)) +
                     " != weight input channels " + std::to_string(weight.dim(1)));
  }
  if (stride < 1) throw ShapeError("conv2d: stride must be positive");
  if (padding < 0) throw ShapeError("conv2d: padding must be nonnegative");
  const std::int64_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t cout = weight.dim(0), kernel = weight.dim(2);
  const std::int64_t oh = detail::conv_out_extent(h, kernel, stride, padding);
  const std::int64_t ow = detail::conv_out_extent(w, kernel, stride, padding);
  if (oh < 1 || ow < 1) {
    throw ShapeError("conv2d: non-positive output extent for input " + shape_str(x.shape()) +
                     ", kernel " + std::to_string(kernel) + ", stride " + std::to_string(stride) +
                     ", padding " + std::to_string(padding));
  }
  if (bias && (bias->ndim() != 1 || bias->dim(0) != cout)) {
    throw ShapeError("conv2d: bias shape must be [" + std::to_string(cout) + "]");
  }

  std::vector<T> out(static_cast<std::size_t>(batch * cout * oh * ow), T(0));
  const std::vector<T>& xv = x.data();
  const std::vector<T>& wv = weight.data();

  if (algo == ConvAlgo::direct) {
    for (std::int64_t n = 0; n < batch; ++n) {
      for (std::int64_t o = 0; o < cout; ++o) {
        const T b = bias ? bias->data()[static_cast<std::size_t>(o)] : T(0);
        for (std::int64_t r = 0; r < oh; ++r) {
          for (std::int64_t c = 0; c < ow; ++c) {
            T acc = b;
            for (std::int64_t i = 0; i < cin; ++i) {
              for (std::int64_t kh = 0; kh < kernel; ++kh) {
                const std::int64_t ih = r * stride - padding + kh;
                if (ih < 0 || ih >= h) continue;
                for (std::int64_t kw = 0; kw < kernel; ++kw) {
                  const std::int64_t iw = c * stride - padding + kw;
                  if (iw < 0 || iw >= w) continue;
                  acc += xv[static_cast<std::size_t>(((n * cin + i) * h + ih) * w + iw)] *
                         wv[static_cast<std::size_t>(((o * cin + i) * kernel + kh) * kernel + kw)];
                }
              }
            }
            out[static_cast<std::size_t>(((n * cout + o) * oh + r) * ow + c)] = acc;
          }
        }
      }
    }
  } else {
    const std::int64_t ksize = cin * kernel * kernel;
    std::vector<T> col(static_cast<std::size_t>(ksize * oh * ow));
    for (std::int64_t n = 0; n < batch; ++n) {
      detail::im2col(xv.data() + n * cin * h * w, cin, h, w, kernel, stride, padding, oh, ow,
                     col.data());
      T* yn = out.data() + n * cout * oh * ow;
      if (bias) {
        for (std::int64_t o = 0; o < cout; ++o) {
          const T b = bias->data()[static_cast<std::size_t>(o)];
          for (std::int64_t p = 0; p < oh * ow; ++p) yn[o * oh * ow + p] = b;
        }
      }
      detail::gemm_acc(wv.data(), col.data(), yn, cout, ksize, oh * ow);
    }
  }

  std::vector<Tensor<T>> parents;
  parents.push_back(x);
  parents.push_back(weight);
  if (bias) parents.push_back(*bias);
  const bool need_dx = x.requires_grad();
  const bool need_dw = weight.requires_grad();
  const bool need_db = bias && bias->requires_grad();
  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias ? bias->node() : nullptr;

  auto backprop = [=](typename Tensor<T>::Node& self) {
    const std::vector<T>& g = self.grad;
    if (need_dx) xn->ensure_grad();
    if (need_dw) wn->ensure_grad();
    if (need_db) bn->ensure_grad();
    if (need_db) {
      for (std::int64_t n = 0; n < batch; ++n)
        for (std::int64_t o = 0; o < cout; ++o) {
          T acc = T(0);
          for (std::int64_t p = 0; p < oh * ow; ++p)
            acc += g[static_cast<std::size_t>((n * cout + o) * oh * ow + p)];
          bn->grad[static_cast<std::size_t>(o)] += acc;
        }
    }
    if (algo == ConvAlgo::direct) {
      for (std::int64_t n = 0; n < batch; ++n) {
        for (std::int64_t o = 0; o < cout; ++o) {
          for (std::int64_t r = 0; r < oh; ++r) {
            for (std::int64_t c = 0; c < ow; ++c) {
              const T gv = g[static_cast<std::size_t>(((n * cout + o) * oh + r) * ow + c)];
              if (gv == T(0)) continue;
              for (std::int64_t i = 0; i < cin; ++i) {
                for (std::int64_t kh = 0; kh < kernel; ++kh) {
                  const std::int64_t ih = r * stride - padding + kh;
                  if (ih < 0 || ih >= h) continue;
                  for (std::int64_t kw = 0; kw < kernel; ++kw) {
                    const std::int64_t iw = c * stride - padding + kw;
                    if (iw < 0 || iw >= w) continue;
                    const std::size_t xi = static_cast<std::size_t>(((n * cin + i) * h + ih) * w + iw);
                    const std::size_t wi = static_cast<std::size_t>(((o * cin + i) * kernel + kh) * kernel + kw);
                    if (need_dx) xn->grad[xi] += gv * wn->data[wi];
                    if (need_dw) wn->grad[wi] += gv * xn->data[xi];
                  }
                }
              }
            }
          }
        }
      }
    } else {
      const std::int64_t ksize = cin * kernel * kernel;
      std::vector<T> col;
      std::vector<T> dcol;
      if (need_dw) col.resize(static_cast<std::size_t>(ksize * oh * ow));
      if (need_dx) dcol.resize(static_cast<std::size_t>(ksize * oh * ow));
      for (std::int64_t n = 0; n < batch; ++n) {
        const T* gn = g.data() + n * cout * oh * ow;
        if (need_dw) {
          detail::im2col(xn->data.data() + n * cin * h * w, cin, h, w, kernel, stride, padding,
                         oh, ow, col.data());
          // dW[o, r] += sum_p g[o, p] * col[r, p]
          for (std::int64_t o = 0; o < cout; ++o) {
            for (std::int64_t rr = 0; rr < ksize; ++rr) {
              T acc = T(0);
              const T* grow = gn + o * oh * ow;
              const T* crow = col.data() + rr * oh * ow;
              for (std::int64_t p = 0; p < oh * ow; ++p) acc += grow[p] * crow[p];
              wn->grad[static_cast<std::size_t>(o * ksize + rr)] += acc;
            }
          }
        }
        if (need_dx) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          // dcol[r, p] = sum_o W[o, r] * g[o, p]
          for (std::int64_t o = 0; o < cout; ++o) {
            const T* wrow = wn->data.data() + o * ksize;
            const T* grow = gn + o * oh * ow;
            for (std::int64_t rr = 0; rr < ksize; ++rr) {
              const T wv2 = wrow[rr];
              if (wv2 == T(0)) continue;
              T* drow = dcol.data() + rr * oh * ow;
              for (std::int64_t p = 0; p < oh * ow; ++p) drow[p] += wv2 * grow[p];
            }
          }
          detail::col2im_acc(dcol.data(), cin, h, w, kernel, stride, padding, oh, ow,
                             xn->grad.data() + n * cin * h * w);
        }
      }
    }
  };

  return Tensor<T>::make_result(Shape{batch, cout, oh, ow}, std::move(out), std::move(parents),
                                std::move(backprop));
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::int64_t stride,
                 std::int64_t padding, ConvAlgo algo = ConvAlgo::im2col) {
  return conv2d(x, weight, std::optional<Tensor<T>>{}, stride, padding, algo);
}

template <class T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
  const std::vector<T>& xv = x.data();
  std::vector<T> out(xv.size());
  switch (kind) {
    case Activation::relu:
      for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
      break;
    case Activation::leaky_relu:
      for (std::size_t i = 0; i < xv.size(); ++i)
        out[i] = xv[i] >= T(0) ? xv[i] : static_cast<T>(kLeakyReluSlope) * xv[i];
      break;
    case Activation::mish:
      for (std::size_t i = 0; i < xv.size(); ++i)
        out[i] = xv[i] * std::tanh(detail::stable_softplus(xv[i]));
      break;
  }
  auto xn = x.node();
  const bool need_dx = x.requires_grad();
  auto backprop = [=](typename Tensor<T>::Node& self) {
    if (!need_dx) return;
    xn->ensure_grad();
    const std::vector<T>& g = self.grad;
    switch (kind) {
      case Activation::relu:
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xn->data[i] > T(0)) xn->grad[i] += g[i];
        break;
      case Activation::leaky_relu:
        for (std::size_t i = 0; i < g.size(); ++i)
          xn->grad[i] += g[i] * (xn->data[i] > T(0) ? T(1) : static_cast<T>(kLeakyReluSlope));
        break;
      case Activation::mish:
        for (std::size_t i = 0; i < g.size(); ++i) {
          const T xi = xn->data[i];
          const T th = std::tanh(detail::stable_softplus(xi));
          const T d = th + xi * (T(1) - th * th) * detail::stable_sigmoid(xi);
          xn->grad[i] += g[i] * d;
        }
        break;
    }
  };
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, std::move(backprop));
}

// Batch statistics and running buffers for one batchnorm layer. Running stats
// are buffers, not parameters; they never carry gradients.
template <class T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BatchNormStats(std::int64_t channels = 0)
      : running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {}
};

template <class T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormStats<T>& stats, bool train, T momentum = T(0.1),
                    T eps = T(1e-5), bool update_running = true) {
  if (x.ndim() != 4) throw ShapeError("batchnorm: input must be NCHW, got " + shape_str(x.shape()));
  const std::int64_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.numel() != channels || beta.numel() != channels ||
      static_cast<std::int64_t>(stats.running_mean.size()) != channels) {
    throw ShapeError("batchnorm: channel mismatch, input has " + std::to_string(channels) +
                     " channels");
  }
  const std::int64_t per_channel = batch * h * w;
  if (train && per_channel < 2) {
    throw NumericError("batchnorm: train mode needs at least 2 elements per channel, got " +
                       std::to_string(per_channel));
  }

  std::vector<T> mean(static_cast<std::size_t>(channels), T(0));
  std::vector<T> invstd(static_cast<std::size_t>(channels), T(0));
  const std::vector<T>& xv = x.data();
  const std::int64_t plane = h * w;

  if (train) {
    for (std::int64_t c = 0; c < channels; ++c) {
      T sum = T(0);
      for (std::int64_t n = 0; n < batch; ++n) {
        const T* p = xv.data() + (n * channels + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) sum += p[i];
      }
      const T mu = sum / static_cast<T>(per_channel);
      T var_sum = T(0);
      for (std::int64_t n = 0; n < batch; ++n) {
        const T* p = xv.data() + (n * channels + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T d = p[i] - mu;
          var_sum += d * d;
        }
      }
      const T var = var_sum / static_cast<T>(per_channel);
      mean[static_cast<std::size_t>(c)] = mu;
      invstd[static_cast<std::size_t>(c)] = T(1) / std::sqrt(var + eps);
      if (update_running) {
        // Unbiased variance goes into the running buffer.
        const T unbiased = per_channel > 1 ? var_sum / static_cast<T>(per_channel - 1) : var;
        stats.running_mean[static_cast<std::size_t>(c)] =
            (T(1) - momentum) * stats.running_mean[static_cast<std::size_t>(c)] + momentum * mu;
        stats.running_var[static_cast<std::size_t>(c)] =
            (T(1) - momentum) * stats.running_var[static_cast<std::size_t>(c)] + momentum * unbiased;
      }
    }
  } else {
    for (std::int64_t c = 0; c < channels; ++c) {
      mean[static_cast<std::size_t>(c)] = stats.running_mean[static_cast<std::size_t>(c)];
      invstd[static_cast<std::size_t>(c)] =
          T(1) / std::sqrt(stats.running_var[static_cast<std::size_t>(c)] + eps);
    }
  }

  std::vector<T> out(xv.size());
  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const T mu = mean[static_cast<std::size_t>(c)];
      const T is = invstd[static_cast<std::size_t>(c)];
      const T gm = gamma.data()[static_cast<std::size_t>(c)];
      const T bt = beta.data()[static_cast<std::size_t>(c)];
      const T* src = xv.data() + (n * channels + c) * plane;
      T* dst = out.data() + (n * channels + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = gm * (src[i] - mu) * is + bt;
    }
  }

  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  const bool need_dx = x.requires_grad();
  const bool need_dg = gamma.requires_grad();
  const bool need_db = beta.requires_grad();

  auto backprop = [=](typename Tensor<T>::Node& self) {
    const std::vector<T>& g = self.grad;
    if (need_dx) xn->ensure_grad();
    if (need_dg) gn->ensure_grad();
    if (need_db) bn->ensure_grad();
    for (std::int64_t c = 0; c < channels; ++c) {
      const T mu = mean[static_cast<std::size_t>(c)];
      const T is = invstd[static_cast<std::size_t>(c)];
      const T gm = gn->data[static_cast<std::size_t>(c)];
      T sum_g = T(0);
      T sum_gx = T(0);
      for (std::int64_t n = 0; n < batch; ++n) {
        const T* gp = g.data() + (n * channels + c) * plane;
        const T* xp = xn->data.data() + (n * channels + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          sum_g += gp[i];
          sum_gx += gp[i] * (xp[i] - mu) * is;
        }
      }
      if (need_db) bn->grad[static_cast<std::size_t>(c)] += sum_g;
      if (need_dg) gn->grad[static_cast<std::size_t>(c)] += sum_gx;
      if (!need_dx) continue;
      if (train) {
        const T inv_count = T(1) / static_cast<T>(per_channel);
        for (std::int64_t n = 0; n < batch; ++n) {
          const T* gp = g.data() + (n * channels + c) * plane;
          const T* xp = xn->data.data() + (n * channels + c) * plane;
          T* dp = xn->grad.data() + (n * channels + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            const T xhat = (xp[i] - mu) * is;
            dp[i] += gm * is * (gp[i] - sum_g * inv_count - xhat * sum_gx * inv_count);
          }
        }
      } else {
        for (std::int64_t n = 0; n < batch; ++n) {
          const T* gp = g.data() + (n * channels + c) * plane;
          T* dp = xn->grad.data() + (n * channels + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) dp[i] += gm * is * gp[i];
        }
      }
    }
  };

  return Tensor<T>::make_result(x.shape(), std::move(out), {x, gamma, beta}, std::move(backprop));
}

template <class T>
Tensor<T> pool(PoolKind kind, const Tensor<T>& x, std::int64_t window = 0,
               std::int64_t stride = 0, std::int64_t padding = 0) {
  if (x.ndim() != 4) throw ShapeError("pool: input must be NCHW, got " + shape_str(x.shape()));
  const std::int64_t batch = x.dim(0), channels = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t plane = h * w;
  const std::vector<T>& xv = x.data();
  auto xn = x.node();
  const bool need_dx = x.requires_grad();

  if (kind == PoolKind::global_avg) {
    std::vector<T> out(static_cast<std::size_t>(batch * channels), T(0));
    for (std::int64_t n = 0; n < batch; ++n)
      for (std::int64_t c = 0; c < channels; ++c) {
        T acc = T(0);
        const T* p = xv.data() + (n * channels + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
        out[static_cast<std::size_t>(n * channels + c)] = acc / static_cast<T>(plane);
      }
    auto backprop = [=](typename Tensor<T>::Node& self) {
      if (!need_dx) return;
      xn->ensure_grad();
      const T scale = T(1) / static_cast<T>(plane);
      for (std::int64_t n = 0; n < batch; ++n)
        for (std::int64_t c = 0; c < channels; ++c) {
          const T gv = self.grad[static_cast<std::size_t>(n * channels + c)] * scale;
          T* dp = xn->grad.data() + (n * channels + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) dp[i] += gv;
        }
    };
    return Tensor<T>::make_result(Shape{batch, channels, 1, 1}, std::move(out), {x},
                                  std::move(backprop));
  }

  if (window < 1 || stride < 1) throw ShapeError("pool: window and stride must be positive");
  if (padding < 0 || padding >= window) throw ShapeError("pool: padding must be in [0, window)");
  if (window > h + 2 * padding || window > w + 2 * padding) {
    throw ShapeError("pool: window " + std::to_string(window) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  const std::int64_t oh = detail::conv_out_extent(h, window, stride, padding);
  const std::int64_t ow = detail::conv_out_extent(w, window, stride, padding);

  std::vector<T> out(static_cast<std::size_t>(batch * channels * oh * ow), T(0));
  // For max pooling remember the winning input index; ties go to the first
  // element in row-major scan order.
  std::vector<std::int64_t> argmax;
  if (kind == PoolKind::max) argmax.assign(out.size(), -1);

  for (std::int64_t n = 0; n < batch; ++n) {
    for (std::int64_t c = 0; c < channels; ++c) {
      const T* p = xv.data() + (n * channels + c) * plane;
      for (std::int64_t r = 0; r < oh; ++r) {
        for (std::int64_t cc = 0; cc < ow; ++cc) {
          const std::size_t oi =
              static_cast<std::size_t>(((n * channels + c) * oh + r) * ow + cc);
          if (kind == PoolKind::max) {
            T best = T(0);
            std::int64_t best_idx = -1;
            for (std::int64_t kh = 0; kh < window; ++kh) {
              const std::int64_t ih = r * stride - padding + kh;
              if (ih < 0 || ih >= h) continue;
              for (std::int64_t kw = 0; kw < window; ++kw) {
                const std::int64_t iw = cc * stride - padding + kw;
                if (iw < 0 || iw >= w) continue;
                const T v = p[ih * w + iw];
                if (best_idx < 0 || v > best) {
                  best = v;
                  best_idx = ih * w + iw;
                }
              }
            }
            out[oi] = best;
            argmax[oi] = best_idx;
          } else {
            T acc = T(0);
            for (std::int64_t kh = 0; kh < window; ++kh) {
              const std::int64_t ih = r * stride - padding + kh;
              if (ih < 0 || ih >= h) continue;
              for (std::int64_t kw = 0; kw < window; ++kw) {
                const std::int64_t iw = cc * stride - padding + kw;
                if (iw < 0 || iw >= w) continue;
                acc += p[ih * w + iw];
              }
            }
            out[oi] = acc / static_cast<T>(window * window);
          }
        }
      }
    }
  }

  auto backprop = [=](typename Tensor<T>::Node& self) {
    if (!need_dx) return;
    xn->ensure_grad();
    for (std::int64_t n = 0; n < batch; ++n) {
      for (std::int64_t c = 0; c < channels; ++c) {
        T* dp = xn->grad.data() + (n * channels + c) * plane;
        for (std::int64_t r = 0; r < oh; ++r) {
          for (std::int64_t cc = 0; cc < ow; ++cc) {
            const std::size_t oi =
                static_cast<std::size_t>(((n * channels + c) * oh + r) * ow + cc);
            const T gv = self.grad[oi];
            if (kind == PoolKind::max) {
              if (argmax[oi] >= 0) dp[argmax[oi]] += gv;
            } else {
              const T share = gv / static_cast<T>(window * window);
              for (std::int64_t kh = 0; kh < window; ++kh) {
                const std::int64_t ih = r * stride - padding + kh;
                if (ih < 0 || ih >= h) continue;
                for (std::int64_t kw = 0; kw < window; ++kw) {
                  const std::int64_t iw = cc * stride - padding + kw;
                  if (iw < 0 || iw >= w) continue;
                  dp[ih * w + iw] += share;
                }
              }
            }
          }
        }
      }
    }
  };
  return Tensor<T>::make_result(Shape{batch, channels, oh, ow}, std::move(out), {x},
                                std::move(backprop));
}

template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.ndim() != 2 || weight.ndim() != 2 || bias.ndim() != 1) {
    throw ShapeError("linear: expected x NxF, weight FxC, bias C");
  }
  const std::int64_t batch = x.dim(0), feat = x.dim(1), classes = weight.dim(1);
  if (weight.dim(0) != feat) {
    throw ShapeError("linear: weight rows " + std::to_string(weight.dim(0)) +
                     " != input features " + std::to_string(feat));
  }
  if (bias.dim(0) != classes) throw ShapeError("linear: bias length mismatch");

  std::vector<T> out(static_cast<std::size_t>(batch * classes));
  for (std::int64_t n = 0; n < batch; ++n)
    for (std::int64_t c = 0; c < classes; ++c)
      out[static_cast<std::size_t>(n * classes + c)] = bias.data()[static_cast<std::size_t>(c)];
  detail::gemm_acc(x.data().data(), weight.data().data(), out.data(), batch, feat, classes);

  auto xn = x.node();
  auto wn = weight.node();
  auto bn = bias.node();
  const bool need_dx = x.requires_grad();
  const bool need_dw = weight.requires_grad();
  const bool need_db = bias.requires_grad();
  auto backprop = [=](typename Tensor<T>::Node& self) {
    const std::vector<T>& g = self.grad;
    if (need_db) {
      bn->ensure_grad();
      for (std::int64_t n = 0; n < batch; ++n)
        for (std::int64_t c = 0; c < classes; ++c)
          bn->grad[static_cast<std::size_t>(c)] += g[static_cast<std::size_t>(n * classes + c)];
    }
    if (need_dw) {
      wn->ensure_grad();
      // dW[f, c] += sum_n x[n, f] * g[n, c]
      for (std::int64_t n = 0; n < batch; ++n) {
        const T* xrow = xn->data.data() + n * feat;
        const T* grow = g.data() + n * classes;
        for (std::int64_t f = 0; f < feat; ++f) {
          const T xv = xrow[f];
          if (xv == T(0)) continue;
          T* wrow = wn->grad.data() + f * classes;
          for (std::int64_t c = 0; c < classes; ++c) wrow[c] += xv * grow[c];
        }
      }
    }
    if (need_dx) {
      xn->ensure_grad();
      // dx[n, f] += sum_c g[n, c] * W[f, c]
      for (std::int64_t n = 0; n < batch; ++n) {
        const T* grow = g.data() + n * classes;
        T* dxrow = xn->grad.data() + n * feat;
        for (std::int64_t f = 0; f < feat; ++f) {
          const T* wrow = wn->data.data() + f * classes;
          T acc = T(0);
          for (std::int64_t c = 0; c < classes; ++c) acc += grow[c] * wrow[c];
          dxrow[f] += acc;
        }
      }
    }
  };
  return Tensor<T>::make_result(Shape{batch, classes}, std::move(out), {x, weight, bias},
                                std::move(backprop));
}

// Mean over the batch of -log softmax(logits)[label], stabilized by
// max-subtraction. Gradient w.r.t. logits is (softmax - onehot) / N.
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw ShapeError("softmax_cross_entropy: logits must be NxC");
  const std::int64_t batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != batch) {
    throw ShapeError("softmax_cross_entropy: label count " + std::to_string(labels.size()) +
                     " != batch " + std::to_string(batch));
  }
  for (int label : labels) {
    if (label < 0 || label >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(classes) + ")");
    }
  }
  std::vector<T> probs(logits.data().size());
  T loss = T(0);
  for (std::int64_t n = 0; n < batch; ++n) {
    const T* row = logits.data().data() + n * classes;
    T* prow = probs.data() + n * classes;
    T max_logit = row[0];
    for (std::int64_t c = 1; c < classes; ++c) max_logit = std::max(max_logit, row[c]);
    T denom = T(0);
    for (std::int64_t c = 0; c < classes; ++c) {
      prow[c] = std::exp(row[c] - max_logit);
      denom += prow[c];
    }
    const T log_denom = std::log(denom);
    for (std::int64_t c = 0; c < classes; ++c) prow[c] /= denom;
    loss += -(row[labels[static_cast<std::size_t>(n)]] - max_logit - log_denom);
  }
  loss /= static_cast<T>(batch);

  auto ln = logits.node();
  const bool need_dl = logits.requires_grad();
  auto backprop = [=](typename Tensor<T>::Node& self) {
    if (!need_dl) return;
    ln->ensure_grad();
    const T upstream = self.grad[0];
    const T inv_batch = T(1) / static_cast<T>(batch);
    for (std::int64_t n = 0; n < batch; ++n) {
      const T* prow = probs.data() + n * classes;
      T* drow = ln->grad.data() + n * classes;
      const int label = labels[static_cast<std::size_t>(n)];
      for (std::int64_t c = 0; c < classes; ++c) {
        const T onehot = (c == label) ? T(1) : T(0);
        drow[c] += upstream * (prow[c] - onehot) * inv_batch;
      }
    }
  };
  return Tensor<T>::make_result(Shape{1}, std::vector<T>{loss}, {logits}, std::move(backprop));
}

template <class T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape() != y.shape()) {
    throw ShapeError("add: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + y.data()[i];
  auto xn = x.node();
  auto yn = y.node();
  const bool need_dx = x.requires_grad();
  const bool need_dy = y.requires_grad();
  auto backprop = [=](typename Tensor<T>::Node& self) {
    if (need_dx) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    }
    if (need_dy) {
      yn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) yn->grad[i] += self.grad[i];
    }
  };
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, y}, std::move(backprop));
}

// a*x + b*y with constant coefficients; the engine mixes candidate paths with it.
template <class T>
Tensor<T> add_scaled(T a, const Tensor<T>& x, T b, const Tensor<T>& y) {
  if (x.shape() != y.shape()) {
    throw ShapeError("add_scaled: shape mismatch " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  }
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.data()[i] + b * y.data()[i];
  auto xn = x.node();
  auto yn = y.node();
  const bool need_dx = x.requires_grad();
  const bool need_dy = y.requires_grad();
  auto backprop = [=](typename Tensor<T>::Node& self) {
    if (need_dx) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += a * self.grad[i];
    }
    if (need_dy) {
      yn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) yn->grad[i] += b * self.grad[i];
    }
  };
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, y}, std::move(backprop));
}

template <class T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) {
  if (x.shape() != y.shape()) {
    throw ShapeError("mul: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  }
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * y.data()[i];
  auto xn = x.node();
  auto yn = y.node();
  const bool need_dx = x.requires_grad();
  const bool need_dy = y.requires_grad();
  auto backprop = [=](typename Tensor<T>::Node& self) {
    if (need_dx) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * yn->data[i];
    }
    if (need_dy) {
      yn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) yn->grad[i] += self.grad[i] * xn->data[i];
    }
  };
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, y}, std::move(backprop));
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x.data()[i];
  auto xn = x.node();
  const bool need_dx = x.requires_grad();
  auto backprop = [=](typename Tensor<T>::Node& self) {
    if (!need_dx) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += factor * self.grad[i];
  };
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, std::move(backprop));
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  auto xn = x.node();
  const bool need_dx = x.requires_grad();
  auto backprop = [=](typename Tensor<T>::Node& self) {
    if (!need_dx) return;
    xn->ensure_grad();
    const T g = self.grad[0];
    for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
  };
  return Tensor<T>::make_result(Shape{1}, std::vector<T>{acc}, {x}, std::move(backprop));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  std::vector<T> out = x.data();
  auto xn = x.node();
  const bool need_dx = x.requires_grad();
  auto backprop = [=](typename Tensor<T>::Node& self) {
    if (!need_dx) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  };
  return Tensor<T>::make_result(std::move(new_shape), std::move(out), {x}, std::move(backprop));
}

template <class T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  const std::int64_t batch = logits.dim(0), classes = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(batch));
  for (std::int64_t n = 0; n < batch; ++n) {
    const T* row = logits.data().data() + n * classes;
    int best = 0;
    for (std::int64_t c = 1; c < classes; ++c)
      if (row[c] > row[best]) best = static_cast<int>(c);
    out[static_cast<std::size_t>(n)] = best;
  }
  return out;
}

}  // namespace scopednas

// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "scopednas/tensor.hpp"

namespace scopednas {

enum class OptimKind { sgd_nesterov, adam };

// Per-parameter moment buffers are keyed by the parameter's node identity, so
// a state object follows "its" parameters for the lifetime of the model.
template <class T>
struct OptimState {
  OptimKind kind = OptimKind::sgd_nesterov;
  T lr = T(0.05);
  T momentum = T(0.9);   // beta1 for adam
  T beta2 = T(0.999);    // adam only
  T weight_decay = T(0);
  T eps = T(1e-8);       // adam only
  std::int64_t step_count = 0;
  std::unordered_map<const void*, std::vector<T>> moment1;
  std::unordered_map<const void*, std::vector<T>> moment2;

  static OptimState sgd_nesterov_defaults() {
    OptimState s;
    s.kind = OptimKind::sgd_nesterov;
    s.lr = T(0.05);
    s.momentum = T(0.9);
    s.weight_decay = T(4e-5);
    return s;
  }

  static OptimState adam_defaults() {
    OptimState s;
    s.kind = OptimKind::adam;
    s.lr = T(0.001);
    s.momentum = T(0.9);
    s.beta2 = T(0.999);
    s.weight_decay = T(0);
    s.eps = T(1e-8);
    return s;
  }
};

namespace detail {

template <class T>
std::vector<T>& moment_buffer(std::unordered_map<const void*, std::vector<T>>& buffers,
                              const void* key, std::size_t size) {
  auto it = buffers.find(key);
  if (it == buffers.end()) it = buffers.emplace(key, std::vector<T>(size, T(0))).first;
  if (it->second.size() != size) {
    throw ShapeError("optimizer: moment buffer size " + std::to_string(it->second.size()) +
                     " does not match parameter size " + std::to_string(size));
  }
  return it->second;
}

}  // namespace detail

// g <- grad + wd*w;  v <- mu*v + g;  w <- w - lr*(g + mu*v)
template <class T>
void sgd_nesterov_step(std::vector<Tensor<T>>& params, OptimState<T>& state) {
  if (state.kind != OptimKind::sgd_nesterov) {
    throw std::invalid_argument("sgd_nesterov_step: state kind is not sgd-nesterov");
  }
  state.step_count += 1;
  for (auto& param : params) {
    auto& w = param.data();
    auto& g = param.grad();
    auto& v = detail::moment_buffer(state.moment1, param.node().get(), w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = g[i] + state.weight_decay * w[i];
      v[i] = state.momentum * v[i] + gi;
      w[i] -= state.lr * (gi + state.momentum * v[i]);
    }
  }
}

// Standard bias-corrected Adam with coupled weight decay.
template <class T>
void adam_step(std::vector<Tensor<T>>& params, OptimState<T>& state) {
  if (state.kind != OptimKind::adam) {
    throw std::invalid_argument("adam_step: state kind is not adam");
  }
  state.step_count += 1;
  const T bc1 = T(1) - std::pow(state.momentum, static_cast<T>(state.step_count));
  const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step_count));
  for (auto& param : params) {
    auto& w = param.data();
    auto& g = param.grad();
    auto& m = detail::moment_buffer(state.moment1, param.node().get(), w.size());
    auto& v = detail::moment_buffer(state.moment2, param.node().get(), w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const T gi = g[i] + state.weight_decay * w[i];
      m[i] = state.momentum * m[i] + (T(1) - state.momentum) * gi;
      v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * gi * gi;
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace scopednas

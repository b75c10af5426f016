// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "scopednas/data.hpp"
#include "scopednas/ops.hpp"
#include "scopednas/rng.hpp"
#include "scopednas/searchspace.hpp"
#include "scopednas/tensor.hpp"

namespace scopednas {

enum class BnMode {
  train,         // batch statistics, running buffers updated
  train_frozen,  // batch statistics, running buffers untouched (architecture steps)
  eval,          // running statistics
};

template <class T>
struct ConvLayer {
  Tensor<T> weight;  // OIKK, bias-free
  std::int64_t stride = 1;
  std::int64_t padding = 0;

  Tensor<T> operator()(const Tensor<T>& x, ConvAlgo algo) const {
    return conv2d(x, weight, stride, padding, algo);
  }
};

template <class T>
struct BatchNormLayer {
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;

  Tensor<T> operator()(const Tensor<T>& x, BnMode mode) {
    // const_cast-free: stats only mutate in plain train mode
    return batchnorm(x, gamma, beta, stats, mode != BnMode::eval, T(0.1), T(1e-5),
                     mode == BnMode::train);
  }
};

// Residual branch of a bottleneck: 1x1 reduce, KxK (stride lives here), 1x1
// expand. Activation is applied after bn1, bn2 and after the residual add.
template <class T>
struct BottleneckBranch {
  ConvLayer<T> conv1, conv2, conv3;
  BatchNormLayer<T> bn1, bn2, bn3;
  Activation act = Activation::relu;
  bool zeroed = false;  // fault injection: forces this candidate's output to 0
};

template <class T>
struct RuntimeBlock {
  BlockSpec spec;
  std::vector<BottleneckBranch<T>> branches;  // 1 for concrete blocks, 6 for search units
  std::optional<ConvLayer<T>> proj_conv;      // shared shortcut projection
  std::optional<BatchNormLayer<T>> proj_bn;
};

// Executable network for an ArchDescription: concrete ResNet-50 variants and
// supernets with per-block candidate branches.
template <class T>
class Network {
 public:
  Network(ArchDescription desc, Rng init_rng, ConvAlgo algo = ConvAlgo::im2col)
      : desc_(std::move(desc)), algo_(algo) {
    stem_conv_ = make_conv(3, desc_.stem.channels,
                           desc_.stem.kind == StemKind::standard ? 7 : 3,
                           desc_.stem.kind == StemKind::standard ? 2 : 1,
                           desc_.stem.kind == StemKind::standard ? 3 : 1, init_rng);
    stem_bn_ = make_bn(desc_.stem.channels);
    for (const BlockSpec& spec : desc_.blocks) {
      RuntimeBlock<T> block;
      block.spec = spec;
      const int branch_count = spec.kind == BlockKind::search_unit ? kCandidateCount : 1;
      for (int b = 0; b < branch_count; ++b) {
        const int kernel = spec.kind == BlockKind::search_unit
                               ? spec.candidates[static_cast<std::size_t>(b)].kernel
                               : spec.kernel;
        const Activation act = spec.kind == BlockKind::search_unit
                                   ? spec.candidates[static_cast<std::size_t>(b)].act
                                   : spec.act;
        BottleneckBranch<T> branch;
        branch.conv1 = make_conv(spec.in_channels, spec.mid_channels, 1, 1, 0, init_rng);
        branch.bn1 = make_bn(spec.mid_channels);
        branch.conv2 = make_conv(spec.mid_channels, spec.mid_channels, kernel, spec.stride,
                                 (kernel - 1) / 2, init_rng);
        branch.bn2 = make_bn(spec.mid_channels);
        branch.conv3 = make_conv(spec.mid_channels, spec.out_channels, 1, 1, 0, init_rng);
        branch.bn3 = make_bn(spec.out_channels);
        branch.act = act;
        block.branches.push_back(std::move(branch));
      }
      if (spec.has_projection_shortcut) {
        block.proj_conv = make_conv(spec.in_channels, spec.out_channels, 1, spec.stride, 0, init_rng);
        block.proj_bn = make_bn(spec.out_channels);
      }
      blocks_.push_back(std::move(block));
    }
    const std::int64_t features =
        desc_.blocks.empty() ? desc_.stem.channels : desc_.blocks.back().out_channels;
    fc_weight_ = Tensor<T>(Shape{features, desc_.num_classes}, true);
    fc_bias_ = Tensor<T>(Shape{desc_.num_classes}, true);
    const T bound = T(1) / std::sqrt(static_cast<T>(features));
    for (auto& v : fc_weight_.data()) v = static_cast<T>(init_rng.uniform(-bound, bound));
    for (auto& v : fc_bias_.data()) v = static_cast<T>(init_rng.uniform(-bound, bound));
  }

  // Parameters are shared handles; copying a Network would alias them.
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const ArchDescription& description() const { return desc_; }
  std::vector<int> search_block_indices() const { return desc_.search_block_indices(); }

  // active: one candidate id per search block (in block order); concrete
  // blocks always run their only branch.
  Tensor<T> forward_single(const Tensor<T>& images, const std::vector<int>& active, BnMode mode) {
    check_active_size(active.size());
    Tensor<T> x = stem(images, mode);
    std::size_t cursor = 0;
    for (RuntimeBlock<T>& block : blocks_) {
      int branch_id = 0;
      if (block.spec.kind == BlockKind::search_unit) branch_id = active[cursor++];
      x = block_output(block, branch_id, x, mode);
    }
    return head(x);
  }

  struct PairSample {
    int first = 0, second = 1;
    double p_first = 0.5, p_second = 0.5;
  };

  struct PairTrace {
    Tensor<T> mixed, out_first, out_second;
  };

  // Architecture-phase forward: each search unit runs its two sampled
  // candidates and mixes them with the pair-renormalized probabilities.
  Tensor<T> forward_two_path(const Tensor<T>& images, const std::vector<PairSample>& pairs,
                             BnMode mode, std::vector<PairTrace>& traces) {
    check_active_size(pairs.size());
    traces.clear();
    Tensor<T> x = stem(images, mode);
    std::size_t cursor = 0;
    for (RuntimeBlock<T>& block : blocks_) {
      if (block.spec.kind != BlockKind::search_unit) {
        x = block_output(block, 0, x, mode);
        continue;
      }
      const PairSample& pair = pairs[cursor++];
      const Tensor<T> shortcut = block_shortcut(block, x, mode);
      PairTrace trace;
      trace.out_first = branch_block_output(block, pair.first, x, shortcut, mode);
      trace.out_second = branch_block_output(block, pair.second, x, shortcut, mode);
      trace.mixed = add_scaled(static_cast<T>(pair.p_first), trace.out_first,
                               static_cast<T>(pair.p_second), trace.out_second);
      x = trace.mixed;
      traces.push_back(std::move(trace));
    }
    return head(x);
  }

  // All learnable parameters, in construction order.
  std::vector<Tensor<T>> parameters() {
    std::vector<Tensor<T>> out;
    collect(out, nullptr);
    return out;
  }

  // Parameters trained by one weight step: everything except the branches
  // that were not sampled.
  std::vector<Tensor<T>> active_parameters(const std::vector<int>& active) {
    check_active_size(active.size());
    std::vector<Tensor<T>> out;
    collect(out, &active);
    return out;
  }

  std::vector<Tensor<T>> branch_parameters(int block_index, int branch_id) {
    RuntimeBlock<T>& block = blocks_[static_cast<std::size_t>(block_index)];
    BottleneckBranch<T>& branch = block.branches[static_cast<std::size_t>(branch_id)];
    return {branch.conv1.weight, branch.bn1.gamma, branch.bn1.beta,
            branch.conv2.weight, branch.bn2.gamma, branch.bn2.beta,
            branch.conv3.weight, branch.bn3.gamma, branch.bn3.beta};
  }

  void zero_all_grads() {
    for (auto& p : parameters()) p.zero_grad();
  }

  // Flat copy of every batchnorm running buffer; lets tests assert that a
  // phase left all non-parameter state untouched.
  std::vector<T> buffer_snapshot() const {
    std::vector<T> out;
    auto push = [&out](const BatchNormStats<T>& stats) {
      out.insert(out.end(), stats.running_mean.begin(), stats.running_mean.end());
      out.insert(out.end(), stats.running_var.begin(), stats.running_var.end());
    };
    push(stem_bn_.stats);
    for (const RuntimeBlock<T>& block : blocks_) {
      for (const BottleneckBranch<T>& branch : block.branches) {
        push(branch.bn1.stats);
        push(branch.bn2.stats);
        push(branch.bn3.stats);
      }
      if (block.proj_bn) push(block.proj_bn->stats);
    }
    return out;
  }

  void set_candidate_zeroed(int block_index, int candidate_id, bool zeroed = true) {
    blocks_[static_cast<std::size_t>(block_index)]
        .branches[static_cast<std::size_t>(candidate_id)]
        .zeroed = zeroed;
  }

  bool candidate_zeroed(int block_index, int candidate_id) const {
    return blocks_[static_cast<std::size_t>(block_index)]
        .branches[static_cast<std::size_t>(candidate_id)]
        .zeroed;
  }

  RuntimeBlock<T>& block(int index) { return blocks_[static_cast<std::size_t>(index)]; }

 private:
  ConvLayer<T> make_conv(std::int64_t cin, std::int64_t cout, std::int64_t kernel,
                         std::int64_t stride, std::int64_t padding, Rng& rng) {
    ConvLayer<T> layer;
    layer.weight = Tensor<T>(Shape{cout, cin, kernel, kernel}, true);
    layer.stride = stride;
    layer.padding = padding;
    // Kaiming fan-in normal
    const T stddev = std::sqrt(T(2) / static_cast<T>(cin * kernel * kernel));
    for (auto& v : layer.weight.data()) v = static_cast<T>(rng.normal()) * stddev;
    return layer;
  }

  BatchNormLayer<T> make_bn(std::int64_t channels) {
    BatchNormLayer<T> layer;
    layer.gamma = Tensor<T>::full(Shape{channels}, T(1), true);
    layer.beta = Tensor<T>(Shape{channels}, true);
    layer.stats = BatchNormStats<T>(channels);
    return layer;
  }

  void check_active_size(std::size_t got) const {
    const std::size_t want = desc_.search_block_indices().size();
    if (got != want) {
      throw ConfigError("expected " + std::to_string(want) + " active-path entries, got " +
                        std::to_string(got));
    }
  }

  Tensor<T> stem(const Tensor<T>& images, BnMode mode) {
    Tensor<T> x = stem_conv_(images, algo_);
    x = stem_bn_(x, mode);
    x = activation(Activation::relu, x);
    if (desc_.stem.kind == StemKind::standard) x = pool(PoolKind::max, x, 3, 2, 1);
    return x;
  }

  Tensor<T> head(const Tensor<T>& x) {
    Tensor<T> pooled = pool(PoolKind::global_avg, x);
    Tensor<T> flat = reshape(pooled, Shape{pooled.dim(0), pooled.dim(1)});
    return linear(flat, fc_weight_, fc_bias_);
  }

  Tensor<T> block_shortcut(RuntimeBlock<T>& block, const Tensor<T>& x, BnMode mode) {
    if (!block.proj_conv) return x;
    Tensor<T> s = (*block.proj_conv)(x, algo_);
    return (*block.proj_bn)(s, mode);
  }

  Tensor<T> branch_block_output(RuntimeBlock<T>& block, int branch_id, const Tensor<T>& x,
                                const Tensor<T>& shortcut, BnMode mode) {
    BottleneckBranch<T>& branch = block.branches[static_cast<std::size_t>(branch_id)];
    if (branch.zeroed) {
      return Tensor<T>(shortcut.shape());  // constant zeros, no graph
    }
    Tensor<T> h = branch.conv1(x, algo_);
    h = branch.bn1(h, mode);
    h = activation(branch.act, h);
    h = branch.conv2(h, algo_);
    h = branch.bn2(h, mode);
    h = activation(branch.act, h);
    h = branch.conv3(h, algo_);
    h = branch.bn3(h, mode);
    return activation(branch.act, add(h, shortcut));
  }

  Tensor<T> block_output(RuntimeBlock<T>& block, int branch_id, const Tensor<T>& x, BnMode mode) {
    const Tensor<T> shortcut = block_shortcut(block, x, mode);
    return branch_block_output(block, branch_id, x, shortcut, mode);
  }

  void collect(std::vector<Tensor<T>>& out, const std::vector<int>* active) {
    out.push_back(stem_conv_.weight);
    out.push_back(stem_bn_.gamma);
    out.push_back(stem_bn_.beta);
    std::size_t cursor = 0;
    for (RuntimeBlock<T>& block : blocks_) {
      int only_branch = -1;  // -1: all branches
      if (block.spec.kind == BlockKind::search_unit && active != nullptr) {
        only_branch = (*active)[cursor];
      }
      if (block.spec.kind == BlockKind::search_unit) ++cursor;
      for (int b = 0; b < static_cast<int>(block.branches.size()); ++b) {
        if (only_branch >= 0 && b != only_branch) continue;
        BottleneckBranch<T>& branch = block.branches[static_cast<std::size_t>(b)];
        out.push_back(branch.conv1.weight);
        out.push_back(branch.bn1.gamma);
        out.push_back(branch.bn1.beta);
        out.push_back(branch.conv2.weight);
        out.push_back(branch.bn2.gamma);
        out.push_back(branch.bn2.beta);
        out.push_back(branch.conv3.weight);
        out.push_back(branch.bn3.gamma);
        out.push_back(branch.bn3.beta);
      }
      if (block.proj_conv) {
        out.push_back(block.proj_conv->weight);
        out.push_back(block.proj_bn->gamma);
        out.push_back(block.proj_bn->beta);
      }
    }
    out.push_back(fc_weight_);
    out.push_back(fc_bias_);
  }

  ArchDescription desc_;
  ConvAlgo algo_;
  ConvLayer<T> stem_conv_;
  BatchNormLayer<T> stem_bn_;
  std::vector<RuntimeBlock<T>> blocks_;
  Tensor<T> fc_weight_;
  Tensor<T> fc_bias_;
};

}  // namespace scopednas

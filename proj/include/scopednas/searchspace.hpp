// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scopednas/ops.hpp"

namespace scopednas {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Search scope: which suffix of the four channel-width stages is searchable.
enum class Scope { none, s, m, l, f };

inline const char* scope_name(Scope scope) {
  switch (scope) {
    case Scope::none: return "none";
    case Scope::s: return "s";
    case Scope::m: return "m";
    case Scope::l: return "l";
    case Scope::f: return "f";
  }
  return "?";
}

inline Scope scope_from_name(const std::string& name) {
  if (name == "none") return Scope::none;
  if (name == "s") return Scope::s;
  if (name == "m") return Scope::m;
  if (name == "l") return Scope::l;
  if (name == "f") return Scope::f;
  throw ConfigError("unknown scope: " + name);
}

// One candidate operation of a search unit block. The id layout
// (kernel-major over (3,5), activation order relu/leaky_relu/mish) is part of
// the file-format contract.
struct CandidateOp {
  int kernel = 3;
  Activation act = Activation::relu;
  int candidate_id = 0;

  bool operator==(const CandidateOp&) const = default;
};

inline constexpr int kCandidateCount = 6;
inline constexpr std::array<int, 2> kCandidateKernels{3, 5};
inline constexpr std::array<Activation, 3> kCandidateActivations{
    Activation::relu, Activation::leaky_relu, Activation::mish};

inline CandidateOp candidate_from_id(int id) {
  if (id < 0 || id >= kCandidateCount) {
    throw ConfigError("candidate_id must be in [0, 6), got " + std::to_string(id));
  }
  return CandidateOp{kCandidateKernels[static_cast<std::size_t>(id / 3)],
                     kCandidateActivations[static_cast<std::size_t>(id % 3)], id};
}

inline std::array<CandidateOp, kCandidateCount> all_candidates() {
  std::array<CandidateOp, kCandidateCount> out{};
  for (int id = 0; id < kCandidateCount; ++id) out[static_cast<std::size_t>(id)] = candidate_from_id(id);
  return out;
}

// Label used in trajectory plots and CSV, e.g. "k3-relu".
inline std::string candidate_label(int id) {
  const CandidateOp op = candidate_from_id(id);
  return "k" + std::to_string(op.kernel) + "-" + activation_name(op.act);
}

enum class BlockKind { bottleneck, search_unit };

// One bottleneck (or search unit) position of the network. Concrete blocks
// carry a middle-conv kernel and a block activation; blocks derived from a
// search decision additionally record the winning candidate in `choice`.
struct BlockSpec {
  BlockKind kind = BlockKind::bottleneck;
  int stage = 1;  // 1..4
  std::int64_t in_channels = 0;
  std::int64_t mid_channels = 0;
  std::int64_t out_channels = 0;
  int stride = 1;
  bool has_projection_shortcut = false;
  int kernel = 3;
  Activation act = Activation::relu;
  std::vector<CandidateOp> candidates;  // search units: exactly 6
  std::optional<CandidateOp> choice;
};

enum class StemKind { standard, small_input };

struct StemSpec {
  StemKind kind = StemKind::standard;
  std::int64_t channels = 64;
};

struct ArchDescription {
  StemSpec stem;
  std::vector<BlockSpec> blocks;
  std::int64_t num_classes = 10;
  Scope scope = Scope::none;

  std::vector<int> search_block_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < blocks.size(); ++i)
      if (blocks[i].kind == BlockKind::search_unit) out.push_back(static_cast<int>(i));
    return out;
  }
};

struct FinalArchitecture {
  std::vector<CandidateOp> choices;  // one per former search block, in block order
  ArchDescription arch;              // scope none, all blocks concrete
};

inline constexpr std::array<int, 4> kStageBlockCounts{3, 4, 6, 3};
inline constexpr std::array<std::int64_t, 4> kStageMidChannels{64, 128, 256, 512};

// ResNet-50: 16 bottleneck blocks in stages (3,4,6,3), expansion 4, stride-2
// downsampling at stages 2-4 (placed on the middle conv; 1x1 convs keep
// stride 1). width_divisor narrows every channel count for desk-scale runs and
// must divide 64; parameter-count reproduction always uses divisor 1.
inline ArchDescription build_base_resnet50(std::int64_t num_classes,
                                           bool small_input_stem = false,
                                           std::int64_t width_divisor = 1) {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (width_divisor < 1 || 64 % width_divisor != 0) {
    throw ConfigError("width_divisor must divide 64");
  }
  ArchDescription desc;
  desc.stem.kind = small_input_stem ? StemKind::small_input : StemKind::standard;
  desc.stem.channels = 64 / width_divisor;
  desc.num_classes = num_classes;
  desc.scope = Scope::none;
  std::int64_t in_channels = desc.stem.channels;
  for (int stage = 0; stage < 4; ++stage) {
    const std::int64_t mid = kStageMidChannels[static_cast<std::size_t>(stage)] / width_divisor;
    const std::int64_t out = 4 * mid;
    for (int b = 0; b < kStageBlockCounts[static_cast<std::size_t>(stage)]; ++b) {
      BlockSpec block;
      block.kind = BlockKind::bottleneck;
      block.stage = stage + 1;
      block.in_channels = in_channels;
      block.mid_channels = mid;
      block.out_channels = out;
      block.stride = (b == 0 && stage > 0) ? 2 : 1;
      block.has_projection_shortcut = (b == 0);
      desc.blocks.push_back(block);
      in_channels = out;
    }
  }
  return desc;
}

// Ordered block indices replaced by search units for a scope. The scopes are
// nested contiguous suffixes: s = stage 4, m = stages 3-4, l = stages 2-4,
// f = everything.
inline std::vector<int> scope_blocks(Scope scope) {
  int first_stage = 0;
  switch (scope) {
    case Scope::s: first_stage = 3; break;
    case Scope::m: first_stage = 2; break;
    case Scope::l: first_stage = 1; break;
    case Scope::f: first_stage = 0; break;
    case Scope::none: return {};
  }
  int start = 0;
  for (int stage = 0; stage < first_stage; ++stage)
    start += kStageBlockCounts[static_cast<std::size_t>(stage)];
  std::vector<int> out;
  for (int i = start; i < 16; ++i) out.push_back(i);
  return out;
}

inline ArchDescription build_supernet(const ArchDescription& base, Scope scope) {
  if (scope == Scope::none) throw ConfigError("build_supernet: scope must be one of s/m/l/f");
  if (base.scope != Scope::none || !base.search_block_indices().empty()) {
    throw ConfigError("build_supernet: base already contains search units");
  }
  ArchDescription supernet = base;
  supernet.scope = scope;
  const auto candidates = all_candidates();
  for (int index : scope_blocks(scope)) {
    BlockSpec& block = supernet.blocks[static_cast<std::size_t>(index)];
    block.kind = BlockKind::search_unit;
    block.candidates.assign(candidates.begin(), candidates.end());
  }
  return supernet;
}

enum class CountMode { single_path_max, all_paths };

namespace detail {

inline std::int64_t conv_params(std::int64_t cin, std::int64_t cout, std::int64_t kernel) {
  return cout * cin * kernel * kernel;  // ResNet convs carry no bias
}

inline std::int64_t bn_params(std::int64_t channels) { return 2 * channels; }

// Residual branch of one bottleneck: 1x1 reduce, KxK, 1x1 expand, each with a
// batchnorm affine pair.
inline std::int64_t branch_params(const BlockSpec& block, int kernel) {
  std::int64_t total = 0;
  total += conv_params(block.in_channels, block.mid_channels, 1) + bn_params(block.mid_channels);
  total += conv_params(block.mid_channels, block.mid_channels, kernel) + bn_params(block.mid_channels);
  total += conv_params(block.mid_channels, block.out_channels, 1) + bn_params(block.out_channels);
  return total;
}

inline std::int64_t projection_params(const BlockSpec& block) {
  if (!block.has_projection_shortcut) return 0;
  return conv_params(block.in_channels, block.out_channels, 1) + bn_params(block.out_channels);
}

}  // namespace detail

// Learnable parameters: conv weights, batchnorm affine pairs, classifier
// weight+bias. Search units count at their largest candidate (kernel 5) in
// single-path-max mode, or as the sum of all six independent branches in
// all-paths mode; the projection shortcut is shared and counted once.
inline std::int64_t count_params(const ArchDescription& desc,
                                 CountMode mode = CountMode::single_path_max) {
  std::int64_t total = 0;
  const std::int64_t stem_kernel = desc.stem.kind == StemKind::standard ? 7 : 3;
  total += detail::conv_params(3, desc.stem.channels, stem_kernel) +
           detail::bn_params(desc.stem.channels);
  for (const BlockSpec& block : desc.blocks) {
    if (block.kind == BlockKind::bottleneck) {
      total += detail::branch_params(block, block.kernel);
    } else if (mode == CountMode::single_path_max) {
      total += detail::branch_params(block, 5);
    } else {
      for (const CandidateOp& cand : block.candidates)
        total += detail::branch_params(block, cand.kernel);
    }
    total += detail::projection_params(block);
  }
  const std::int64_t features = desc.blocks.empty() ? desc.stem.channels
                                                    : desc.blocks.back().out_channels;
  total += features * desc.num_classes + desc.num_classes;
  return total;
}

// Rounded to 2 decimals in millions, e.g. "23.53M".
inline std::string params_in_millions(std::int64_t params) {
  const double millions = static_cast<double>(params) / 1e6;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2fM", millions);
  return buf;
}

inline std::int64_t conv_macs(std::int64_t cin, std::int64_t cout, std::int64_t kernel,
                              std::int64_t out_h, std::int64_t out_w) {
  return cout * cin * kernel * kernel * out_h * out_w;
}

// Multiply-accumulates of one forward pass at the given square input size.
// Only convolutions and the classifier contribute; search units count the
// expected middle-conv cost under uniform candidate probabilities.
inline std::int64_t count_macs(const ArchDescription& desc, std::int64_t input_hw) {
  auto out_extent = [](std::int64_t in, std::int64_t kernel, std::int64_t stride,
                       std::int64_t padding) {
    return (in + 2 * padding - kernel) / stride + 1;
  };
  if (input_hw < 1) {
    throw ConfigError("count_macs: input size " + std::to_string(input_hw) +
                      " is incompatible with the stem");
  }
  std::int64_t total = 0;
  std::int64_t hw = input_hw;
  if (desc.stem.kind == StemKind::standard) {
    hw = out_extent(hw, 7, 2, 3);
    if (hw < 1) throw ConfigError("count_macs: input too small for the standard stem");
    total += conv_macs(3, desc.stem.channels, 7, hw, hw);
    hw = out_extent(hw, 3, 2, 1);  // stem max-pool
  } else {
    total += conv_macs(3, desc.stem.channels, 3, hw, hw);
  }
  if (hw < 1) throw ConfigError("count_macs: input too small for the stem");
  for (const BlockSpec& block : desc.blocks) {
    const std::int64_t out_hw = block.stride == 2 ? out_extent(hw, 3, 2, 1) : hw;
    if (out_hw < 1) throw ConfigError("count_macs: spatial extent vanished");
    total += conv_macs(block.in_channels, block.mid_channels, 1, hw, hw);
    if (block.kind == BlockKind::search_unit) {
      // mean kernel^2 over candidates (3,3,3,5,5,5) = 17
      std::int64_t k2_sum = 0;
      for (const CandidateOp& cand : block.candidates)
        k2_sum += static_cast<std::int64_t>(cand.kernel) * cand.kernel;
      total += block.mid_channels * block.mid_channels * (k2_sum / kCandidateCount) * out_hw * out_hw;
    } else {
      total += conv_macs(block.mid_channels, block.mid_channels, block.kernel, out_hw, out_hw);
    }
    total += conv_macs(block.mid_channels, block.out_channels, 1, out_hw, out_hw);
    if (block.has_projection_shortcut)
      total += conv_macs(block.in_channels, block.out_channels, 1, out_hw, out_hw);
    hw = out_hw;
  }
  const std::int64_t features = desc.blocks.empty() ? desc.stem.channels
                                                    : desc.blocks.back().out_channels;
  total += features * desc.num_classes;
  return total;
}

// Per block, the winning candidate is the argmax of its alpha vector; ties go
// to the lowest candidate_id.
inline FinalArchitecture derive_final_architecture(
    const ArchDescription& supernet, const std::vector<std::vector<double>>& alphas) {
  const std::vector<int> search_indices = supernet.search_block_indices();
  if (alphas.size() != search_indices.size()) {
    throw ConfigError("derive_final_architecture: got " + std::to_string(alphas.size()) +
                      " alpha vectors for " + std::to_string(search_indices.size()) +
                      " search blocks");
  }
  FinalArchitecture final_arch;
  final_arch.arch = supernet;
  final_arch.arch.scope = Scope::none;
  for (std::size_t i = 0; i < search_indices.size(); ++i) {
    const std::vector<double>& alpha = alphas[i];
    if (static_cast<int>(alpha.size()) != kCandidateCount) {
      throw ConfigError("derive_final_architecture: alpha vector " + std::to_string(i) +
                        " has length " + std::to_string(alpha.size()) + ", expected 6");
    }
    int best = 0;
    for (int k = 1; k < kCandidateCount; ++k)
      if (alpha[static_cast<std::size_t>(k)] > alpha[static_cast<std::size_t>(best)]) best = k;
    const CandidateOp chosen = candidate_from_id(best);
    BlockSpec& block = final_arch.arch.blocks[static_cast<std::size_t>(search_indices[i])];
    block.kind = BlockKind::bottleneck;
    block.kernel = chosen.kernel;
    block.act = chosen.act;
    block.candidates.clear();
    block.choice = chosen;
    final_arch.choices.push_back(chosen);
  }
  return final_arch;
}

}  // namespace scopednas

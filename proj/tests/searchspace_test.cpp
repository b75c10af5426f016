// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#include "scopednas/searchspace.hpp"

#include <array>
#include <cstdint>
#include <vector>

#include <gtest/gtest.h>

#include "scopednas/rng.hpp"

namespace sd = scopednas;

namespace {

// Independent parameter-counting oracle. Enumerates every layer of ResNet-50
// from the stage table alone (no BlockSpec machinery): conv O*I*K^2, affine
// batchnorm 2*C, classifier F*C + C. `kernel_of(block)` gives the middle-conv
// kernel per block index; `paths_of(block)` how many independent residual
// branches the block holds (1 concrete, 6 supernet all-paths).
struct OracleTally {
  std::int64_t total = 0;
  void conv(std::int64_t i, std::int64_t o, std::int64_t k) { total += o * i * k * k; }
  void bn(std::int64_t c) { total += 2 * c; }
  void fc(std::int64_t f, std::int64_t c) { total += f * c + c; }
};

template <class KernelsOf>
std::int64_t oracle_resnet50_params(std::int64_t classes, KernelsOf kernels_of) {
  static constexpr std::array<int, 4> stage_blocks{3, 4, 6, 3};
  static constexpr std::array<std::int64_t, 4> stage_mid{64, 128, 256, 512};
  OracleTally tally;
  tally.conv(3, 64, 7);
  tally.bn(64);
  std::int64_t in = 64;
  int block_index = 0;
  for (int stage = 0; stage < 4; ++stage) {
    const std::int64_t mid = stage_mid[static_cast<std::size_t>(stage)];
    const std::int64_t out = 4 * mid;
    for (int b = 0; b < stage_blocks[static_cast<std::size_t>(stage)]; ++b) {
      for (int kernel : kernels_of(block_index)) {
        tally.conv(in, mid, 1);
        tally.bn(mid);
        tally.conv(mid, mid, kernel);
        tally.bn(mid);
        tally.conv(mid, out, 1);
        tally.bn(out);
      }
      if (b == 0) {  // projection shortcut, shared
        tally.conv(in, out, 1);
        tally.bn(out);
      }
      in = out;
      ++block_index;
    }
  }
  tally.fc(2048, classes);
  return tally.total;
}

std::vector<int> concrete3(int) { return {3}; }

}  // namespace

TEST(Candidates, IdLayoutIsKernelMajor) {
  const auto all = sd::all_candidates();
  EXPECT_EQ(all[0].kernel, 3);
  EXPECT_EQ(all[0].act, sd::Activation::relu);
  EXPECT_EQ(all[2].kernel, 3);
  EXPECT_EQ(all[2].act, sd::Activation::mish);
  EXPECT_EQ(all[3].kernel, 5);
  EXPECT_EQ(all[3].act, sd::Activation::relu);
  EXPECT_EQ(all[5].kernel, 5);
  EXPECT_EQ(all[5].act, sd::Activation::mish);
  for (int id = 0; id < 6; ++id) EXPECT_EQ(all[static_cast<std::size_t>(id)].candidate_id, id);
  EXPECT_EQ(sd::candidate_label(0), "k3-relu");
  EXPECT_EQ(sd::candidate_label(5), "k5-mish");
}

TEST(BaseResnet50, StructureInvariants) {
  const sd::ArchDescription desc = sd::build_base_resnet50(10);
  ASSERT_EQ(desc.blocks.size(), 16u);
  const std::array<int, 4> counts{3, 4, 6, 3};
  int index = 0;
  for (int stage = 0; stage < 4; ++stage) {
    for (int b = 0; b < counts[static_cast<std::size_t>(stage)]; ++b, ++index) {
      const sd::BlockSpec& block = desc.blocks[static_cast<std::size_t>(index)];
      EXPECT_EQ(block.stage, stage + 1);
      EXPECT_EQ(block.out_channels, 4 * block.mid_channels);
      EXPECT_EQ(block.has_projection_shortcut, b == 0);
      EXPECT_EQ(block.stride, (b == 0 && stage > 0) ? 2 : 1);
    }
  }
  // stage widths double stage to stage
  EXPECT_EQ(desc.blocks[0].mid_channels, 64);
  EXPECT_EQ(desc.blocks[3].mid_channels, 128);
  EXPECT_EQ(desc.blocks[7].mid_channels, 256);
  EXPECT_EQ(desc.blocks[13].mid_channels, 512);
  EXPECT_THROW(sd::build_base_resnet50(1), sd::ConfigError);
}

TEST(BaseResnet50, ParamCountMatchesIndependentOracle) {
  const std::int64_t oracle10 = oracle_resnet50_params(10, concrete3);
  EXPECT_EQ(oracle10, 23528522);  // frozen: Table 1 baseline, exact
  EXPECT_EQ(sd::count_params(sd::build_base_resnet50(10)), oracle10);
  EXPECT_EQ(sd::params_in_millions(oracle10), "23.53M");

  const std::int64_t oracle1000 = oracle_resnet50_params(1000, concrete3);
  EXPECT_EQ(oracle1000, 25557032);  // canonical ImageNet figure
  EXPECT_EQ(sd::count_params(sd::build_base_resnet50(1000)), oracle1000);
}

TEST(BaseResnet50, SmallInputStemCount) {
  // swapping the 7x7/64 stem conv for 3x3 changes exactly (49-9)*3*64 weights
  const std::int64_t standard = sd::count_params(sd::build_base_resnet50(10, false));
  const std::int64_t small = sd::count_params(sd::build_base_resnet50(10, true));
  EXPECT_EQ(standard - small, (49 - 9) * 3 * 64);
  const sd::ArchDescription desc = sd::build_base_resnet50(10, true);
  EXPECT_EQ(desc.stem.kind, sd::StemKind::small_input);
}

TEST(BaseResnet50, WidthDivisorScalesEveryChannel) {
  const sd::ArchDescription narrow = sd::build_base_resnet50(10, true, 8);
  EXPECT_EQ(narrow.stem.channels, 8);
  EXPECT_EQ(narrow.blocks[0].mid_channels, 8);
  EXPECT_EQ(narrow.blocks[0].out_channels, 32);
  EXPECT_EQ(narrow.blocks[15].mid_channels, 64);
  EXPECT_EQ(narrow.blocks[15].out_channels, 256);
  // structural invariants survive narrowing
  EXPECT_EQ(narrow.blocks.size(), 16u);
  const sd::ArchDescription supernet = sd::build_supernet(narrow, sd::Scope::s);
  EXPECT_EQ(supernet.search_block_indices(), (std::vector<int>{13, 14, 15}));
  EXPECT_THROW(sd::build_base_resnet50(10, true, 7), sd::ConfigError);
  EXPECT_THROW(sd::build_base_resnet50(10, true, 0), sd::ConfigError);
}

TEST(ScopeBlocks, SizesAndMembers) {
  const auto s = sd::scope_blocks(sd::Scope::s);
  EXPECT_EQ(s, (std::vector<int>{13, 14, 15}));
  const auto m = sd::scope_blocks(sd::Scope::m);
  ASSERT_EQ(m.size(), 9u);
  EXPECT_EQ(m.front(), 7);
  EXPECT_EQ(m.back(), 15);
  const auto l = sd::scope_blocks(sd::Scope::l);
  ASSERT_EQ(l.size(), 13u);
  EXPECT_EQ(l.front(), 3);
  const auto f = sd::scope_blocks(sd::Scope::f);
  ASSERT_EQ(f.size(), 16u);
  for (int i = 0; i < 16; ++i) EXPECT_EQ(f[static_cast<std::size_t>(i)], i);
}

TEST(ScopeBlocks, ScopesAreNestedSuffixes) {
  const auto s = sd::scope_blocks(sd::Scope::s);
  const auto m = sd::scope_blocks(sd::Scope::m);
  const auto l = sd::scope_blocks(sd::Scope::l);
  const auto f = sd::scope_blocks(sd::Scope::f);
  auto is_suffix_subset = [](const std::vector<int>& small, const std::vector<int>& big) {
    return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
  };
  EXPECT_TRUE(is_suffix_subset(s, m));
  EXPECT_TRUE(is_suffix_subset(m, l));
  EXPECT_TRUE(is_suffix_subset(l, f));
}

TEST(Supernet, BuildReplacesExactlyScopeBlocks) {
  const sd::ArchDescription base = sd::build_base_resnet50(10);
  const sd::ArchDescription supernet = sd::build_supernet(base, sd::Scope::s);
  EXPECT_EQ(supernet.search_block_indices(), (std::vector<int>{13, 14, 15}));
  int concrete = 0;
  for (const sd::BlockSpec& block : supernet.blocks)
    concrete += block.kind == sd::BlockKind::bottleneck ? 1 : 0;
  EXPECT_EQ(concrete, 13);
  for (int idx : supernet.search_block_indices()) {
    const sd::BlockSpec& block = supernet.blocks[static_cast<std::size_t>(idx)];
    ASSERT_EQ(block.candidates.size(), 6u);
    // channel/stride settings preserved in every candidate position
    EXPECT_EQ(block.mid_channels, base.blocks[static_cast<std::size_t>(idx)].mid_channels);
    EXPECT_EQ(block.stride, base.blocks[static_cast<std::size_t>(idx)].stride);
  }
  EXPECT_THROW(sd::build_supernet(supernet, sd::Scope::s), sd::ConfigError);
}

TEST(Supernet, AllPathsCountMatchesIndependentOracle) {
  const sd::ArchDescription base = sd::build_base_resnet50(10);
  const sd::ArchDescription supernet = sd::build_supernet(base, sd::Scope::f);
  const std::int64_t oracle = oracle_resnet50_params(10, [](int) {
    return std::vector<int>{3, 3, 3, 5, 5, 5};  // six independent branches
  });
  EXPECT_EQ(oracle, 187496778);  // frozen output of the counting oracle above
  EXPECT_EQ(sd::count_params(supernet, sd::CountMode::all_paths), oracle);
}

TEST(Supernet, SinglePathMaxUsesKernel5Delta) {
  const sd::ArchDescription base = sd::build_base_resnet50(10);
  const std::int64_t baseline = sd::count_params(base);
  // kernel-5 minus kernel-3 delta is (25-9)*mid^2 per search block
  const sd::ArchDescription s = sd::build_supernet(base, sd::Scope::s);
  EXPECT_EQ(sd::count_params(s, sd::CountMode::single_path_max),
            baseline + 3 * 16 * 512 * 512);
  const sd::ArchDescription f = sd::build_supernet(base, sd::Scope::f);
  const std::int64_t mid_sq_sum = 3 * 64 * 64 + 4 * 128 * 128 + 6 * 256 * 256 + 3 * 512 * 512;
  EXPECT_EQ(sd::count_params(f, sd::CountMode::single_path_max), baseline + 16 * mid_sq_sum);
}

TEST(Supernet, SearchSpaceCardinality) {
  EXPECT_EQ(sd::scope_blocks(sd::Scope::s).size(), 3u);  // 6^3 = 216 candidates
  double cardinality = 1.0;
  for (std::size_t i = 0; i < sd::scope_blocks(sd::Scope::s).size(); ++i) cardinality *= 6.0;
  EXPECT_DOUBLE_EQ(cardinality, 216.0);
}

TEST(CountParams, Table1ValuesLieInsideScopeIntervals) {
  const sd::ArchDescription base = sd::build_base_resnet50(10);
  const std::int64_t baseline = sd::count_params(base);
  const std::array<std::pair<sd::Scope, double>, 4> reported{
      std::pair{sd::Scope::s, 23.53e6}, std::pair{sd::Scope::m, 24.58e6},
      std::pair{sd::Scope::l, 23.79e6}, std::pair{sd::Scope::f, 25.23e6}};
  for (const auto& [scope, value] : reported) {
    const std::int64_t upper =
        sd::count_params(sd::build_supernet(base, scope), sd::CountMode::single_path_max);
    EXPECT_LE(static_cast<double>(baseline), value) << sd::scope_name(scope);
    EXPECT_LE(value, static_cast<double>(upper)) << sd::scope_name(scope);
  }
}

TEST(CountParams, ChooseKernelEverywhereEqualsDirectBuild) {
  const sd::ArchDescription base = sd::build_base_resnet50(10);
  for (int cand = 0; cand < 6; ++cand) {
    const sd::ArchDescription supernet = sd::build_supernet(base, sd::Scope::f);
    std::vector<std::vector<double>> alphas(16, std::vector<double>(6, 0.0));
    for (auto& alpha : alphas) alpha[static_cast<std::size_t>(cand)] = 1.0;
    const sd::FinalArchitecture final_arch = sd::derive_final_architecture(supernet, alphas);
    // directly built concrete network with the same kernel everywhere
    sd::ArchDescription direct = base;
    for (auto& block : direct.blocks) block.kernel = sd::candidate_from_id(cand).kernel;
    EXPECT_EQ(sd::count_params(final_arch.arch), sd::count_params(direct)) << "candidate " << cand;
  }
}

TEST(CountParams, ActivationChoiceAddsNoParameters) {
  const sd::ArchDescription base = sd::build_base_resnet50(10);
  const sd::ArchDescription supernet = sd::build_supernet(base, sd::Scope::m);
  for (int cand : {0, 1, 2}) {  // all kernel-3 candidates
    std::vector<std::vector<double>> alphas(9, std::vector<double>(6, 0.0));
    for (auto& alpha : alphas) alpha[static_cast<std::size_t>(cand)] = 2.0;
    const sd::FinalArchitecture final_arch = sd::derive_final_architecture(supernet, alphas);
    EXPECT_EQ(sd::count_params(final_arch.arch), sd::count_params(base)) << "candidate " << cand;
  }
}

TEST(DeriveFinal, ArgmaxAndTieBreak) {
  const sd::ArchDescription supernet =
      sd::build_supernet(sd::build_base_resnet50(10), sd::Scope::s);
  std::vector<std::vector<double>> alphas(3, std::vector<double>(6, 0.0));
  alphas[0] = {0, 0, 0, 0, 0, 1};  // candidate 5: kernel 5, mish
  // alphas[1]: all equal -> candidate 0 by tie-break
  alphas[2] = {0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  const sd::FinalArchitecture final_arch = sd::derive_final_architecture(supernet, alphas);
  ASSERT_EQ(final_arch.choices.size(), 3u);
  EXPECT_EQ(final_arch.choices[0].candidate_id, 5);
  EXPECT_EQ(final_arch.choices[0].kernel, 5);
  EXPECT_EQ(final_arch.choices[0].act, sd::Activation::mish);
  EXPECT_EQ(final_arch.choices[1].candidate_id, 0);
  EXPECT_EQ(final_arch.choices[2].candidate_id, 0);
  EXPECT_TRUE(final_arch.arch.search_block_indices().empty());
}

TEST(DeriveFinal, MatchesLinearScanOracleOverRandomAlphas) {
  const sd::ArchDescription supernet =
      sd::build_supernet(sd::build_base_resnet50(10), sd::Scope::s);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    sd::Rng rng(seed);
    std::vector<std::vector<double>> alphas(3, std::vector<double>(6));
    for (auto& alpha : alphas)
      for (auto& a : alpha) a = rng.uniform(-3.0, 3.0);
    const sd::FinalArchitecture final_arch = sd::derive_final_architecture(supernet, alphas);
    for (std::size_t b = 0; b < 3; ++b) {
      int best = 0;  // brute-force max scan, first index wins ties
      for (int k = 1; k < 6; ++k)
        if (alphas[b][static_cast<std::size_t>(k)] > alphas[b][static_cast<std::size_t>(best)])
          best = k;
      ASSERT_EQ(final_arch.choices[b].candidate_id, best) << "seed " << seed;
    }
  }
}

TEST(DeriveFinal, ArgmaxInvariantUnderShiftAndRescale) {
  const sd::ArchDescription supernet =
      sd::build_supernet(sd::build_base_resnet50(10), sd::Scope::s);
  sd::Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<double>> alphas(3, std::vector<double>(6));
    for (auto& alpha : alphas)
      for (auto& a : alpha) a = rng.uniform(-2.0, 2.0);
    const auto base_choice = sd::derive_final_architecture(supernet, alphas).choices;
    const double shift = rng.uniform(-10.0, 10.0);
    const double scale = rng.uniform(0.1, 5.0);
    std::vector<std::vector<double>> transformed = alphas;
    for (auto& alpha : transformed)
      for (auto& a : alpha) a = scale * a + shift;
    const auto transformed_choice = sd::derive_final_architecture(supernet, transformed).choices;
    for (std::size_t b = 0; b < 3; ++b)
      ASSERT_EQ(base_choice[b].candidate_id, transformed_choice[b].candidate_id);
  }
}

TEST(DeriveFinal, CountStaysInsideBaselineToMaxInterval) {
  const sd::ArchDescription base = sd::build_base_resnet50(10);
  const sd::ArchDescription supernet = sd::build_supernet(base, sd::Scope::m);
  const std::int64_t lo = sd::count_params(base);
  const std::int64_t hi = sd::count_params(supernet, sd::CountMode::single_path_max);
  sd::Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::vector<double>> alphas(9, std::vector<double>(6));
    for (auto& alpha : alphas)
      for (auto& a : alpha) a = rng.uniform(-1.0, 1.0);
    const std::int64_t count =
        sd::count_params(sd::derive_final_architecture(supernet, alphas).arch);
    ASSERT_GE(count, lo);
    ASSERT_LE(count, hi);
  }
}

TEST(DeriveFinal, AlphaLengthMismatch) {
  const sd::ArchDescription supernet =
      sd::build_supernet(sd::build_base_resnet50(10), sd::Scope::s);
  std::vector<std::vector<double>> wrong_count(2, std::vector<double>(6, 0.0));
  EXPECT_THROW(sd::derive_final_architecture(supernet, wrong_count), sd::ConfigError);
  std::vector<std::vector<double>> wrong_len(3, std::vector<double>(5, 0.0));
  EXPECT_THROW(sd::derive_final_architecture(supernet, wrong_len), sd::ConfigError);
}

TEST(CountMacs, SingleOneByOneConv) { EXPECT_EQ(sd::conv_macs(1, 1, 1, 1, 1), 1); }

TEST(CountMacs, BottleneckFormula) {
  // one bottleneck 64 -> 64 -> 256, kernel 3, 56x56, identity shortcut
  sd::ArchDescription desc;
  desc.stem.kind = sd::StemKind::small_input;
  desc.stem.channels = 64;
  desc.num_classes = 2;
  sd::BlockSpec block;
  block.in_channels = 64;
  block.mid_channels = 64;
  block.out_channels = 256;
  block.stride = 1;
  block.has_projection_shortcut = false;
  desc.blocks.push_back(block);
  const std::int64_t expected_block = 3136LL * (64 * 64 + 9 * 64 * 64 + 64 * 256);
  const std::int64_t stem = 3LL * 64 * 9 * 56 * 56;
  const std::int64_t head = 256LL * 2;
  EXPECT_EQ(sd::count_macs(desc, 56), stem + expected_block + head);
}

TEST(CountMacs, MonotoneAcrossScopes) {
  const sd::ArchDescription base = sd::build_base_resnet50(10);
  std::int64_t previous = sd::count_macs(base, 224);
  for (const sd::Scope scope : {sd::Scope::s, sd::Scope::m, sd::Scope::l, sd::Scope::f}) {
    const std::int64_t macs = sd::count_macs(sd::build_supernet(base, scope), 224);
    EXPECT_GT(macs, previous) << sd::scope_name(scope);
    previous = macs;
  }
}

TEST(CountMacs, IncompatibleInputFails) {
  const sd::ArchDescription base = sd::build_base_resnet50(10);
  EXPECT_THROW(sd::count_macs(base, 0), sd::ConfigError);
}

// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#include "scopednas/engine.hpp"

#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "scopednas/csv.hpp"

namespace sd = scopednas;

namespace {

// Hand-built miniature supernet: small-input stem, two search-unit blocks.
// Wide enough to learn the synthetic task, small enough for tight test loops.
sd::ArchDescription tiny_supernet(std::int64_t classes = 3, std::int64_t width = 8) {
  sd::ArchDescription desc;
  desc.stem.kind = sd::StemKind::small_input;
  desc.stem.channels = width;
  desc.num_classes = classes;
  desc.scope = sd::Scope::s;
  const auto candidates = sd::all_candidates();
  sd::BlockSpec first;
  first.kind = sd::BlockKind::search_unit;
  first.stage = 1;
  first.in_channels = width;
  first.mid_channels = width / 2;
  first.out_channels = 2 * width;
  first.stride = 1;
  first.has_projection_shortcut = true;
  first.candidates.assign(candidates.begin(), candidates.end());
  desc.blocks.push_back(first);
  sd::BlockSpec second;
  second.kind = sd::BlockKind::search_unit;
  second.stage = 2;
  second.in_channels = 2 * width;
  second.mid_channels = width / 2;
  second.out_channels = 2 * width;
  second.stride = 1;
  second.has_projection_shortcut = false;
  second.candidates.assign(candidates.begin(), candidates.end());
  desc.blocks.push_back(second);
  return desc;
}

template <class T>
sd::ImageBatch<T> synthetic_batch(std::int64_t batch, std::int64_t hw, int classes,
                                  std::uint64_t seed, double noise = 0.05) {
  const sd::Dataset<T> ds = sd::synthetic_dataset<T>(classes, batch, hw, seed, noise);
  sd::ImageBatch<T> out;
  out.images = sd::Tensor<T>(sd::Shape{batch, 3, hw, hw}, ds.images);
  out.labels = ds.labels;
  return out;
}

template <class T>
std::vector<std::vector<T>> snapshot(std::vector<sd::Tensor<T>> params) {
  std::vector<std::vector<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.data());
  return out;
}

}  // namespace

TEST(ArchProbabilities, UniformAtZero) {
  const sd::AlphaVec probs = sd::arch_probabilities(sd::AlphaVec{});
  for (double p : probs) EXPECT_NEAR(p, 1.0 / 6.0, 1e-15);
  double total = std::accumulate(probs.begin(), probs.end(), 0.0);
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(ArchProbabilities, Dominance) {
  // exp(10)/(exp(10)+5) = 0.99977...
  sd::AlphaVec alpha{10, 0, 0, 0, 0, 0};
  EXPECT_GT(sd::arch_probabilities(alpha)[0], 0.999);
  sd::AlphaVec sharper{20, 0, 0, 0, 0, 0};
  EXPECT_GT(sd::arch_probabilities(sharper)[0], 0.9999);
}

TEST(ArchProbabilities, ShiftInvariance) {
  sd::AlphaVec alpha{0.3, -1.2, 2.0, 0.0, 0.7, -0.4};
  const auto base = sd::arch_probabilities(alpha);
  for (double c : {-100.0, -3.0, 5.0, 500.0}) {
    sd::AlphaVec shifted = alpha;
    for (double& a : shifted) a += c;
    const auto moved = sd::arch_probabilities(shifted);
    for (std::size_t k = 0; k < 6; ++k) ASSERT_NEAR(moved[k], base[k], 1e-12);
  }
}

TEST(ArchProbabilities, NanRejected) {
  sd::AlphaVec alpha{};
  alpha[2] = std::nan("");
  EXPECT_THROW(sd::arch_probabilities(alpha), sd::NumericError);
}

TEST(SamplePath, DegenerateAlphaAlwaysPicksWinner) {
  sd::AlphaVec alpha{50, -50, -50, -50, -50, -50};
  sd::Rng rng(3);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(sd::sample_active_path(alpha, rng), 0);
}

TEST(SamplePath, UniformAlphaFrequencies) {
  sd::AlphaVec alpha{};
  sd::Rng rng(4);
  std::array<int, 6> counts{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) counts[static_cast<std::size_t>(sd::sample_active_path(alpha, rng))]++;
  for (int c : counts) {
    const double freq = static_cast<double>(c) / draws;
    EXPECT_NEAR(freq, 1.0 / 6.0, 0.03);
  }
}

TEST(SamplePath, FixedSeedGivesIdenticalSequence) {
  sd::AlphaVec alpha{0.1, 0.5, -0.3, 0.0, 0.2, -0.1};
  sd::Rng a(9), b(9);
  for (int i = 0; i < 200; ++i) ASSERT_EQ(sd::sample_active_path(alpha, a), sd::sample_active_path(alpha, b));
}

TEST(SampleSecond, AlwaysDistinctFromFirst) {
  sd::AlphaVec alpha{1.0, 0.5, -0.3, 0.0, 2.0, -1.0};
  sd::Rng rng(11);
  for (int i = 0; i < 500; ++i) {
    const int first = sd::sample_active_path(alpha, rng);
    const int second = sd::sample_second_path(alpha, first, rng);
    ASSERT_NE(first, second);
    ASSERT_GE(second, 0);
    ASSERT_LT(second, 6);
  }
}

TEST(PairRescale, ClosedFormMatchesRootFindOracle) {
  sd::Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    sd::AlphaVec alpha;
    for (double& a : alpha) a = rng.uniform(-4.0, 4.0);
    const int i = static_cast<int>(rng.uniform_int(6));
    int j = static_cast<int>(rng.uniform_int(5));
    if (j >= i) ++j;
    const double new_i = alpha[static_cast<std::size_t>(i)] + rng.uniform(-0.5, 0.5);
    const double new_j = alpha[static_cast<std::size_t>(j)] + rng.uniform(-0.5, 0.5);
    const double closed = sd::pair_rescale_constant(
        alpha[static_cast<std::size_t>(i)], alpha[static_cast<std::size_t>(j)], new_i, new_j);

    // 1-D root find (bisection) on the conservation condition:
    // sum_k exp(alpha'_k(c)) must equal the pre-update partition sum.
    double z_old = 0.0;
    for (double a : alpha) z_old += std::exp(a);
    auto imbalance = [&](double c) {
      double z = 0.0;
      for (int k = 0; k < 6; ++k) {
        if (k == i) {
          z += std::exp(new_i + c);
        } else if (k == j) {
          z += std::exp(new_j + c);
        } else {
          z += std::exp(alpha[static_cast<std::size_t>(k)]);
        }
      }
      return z - z_old;
    };
    double lo = -60.0, hi = 60.0;
    for (int iter = 0; iter < 200; ++iter) {
      const double mid = 0.5 * (lo + hi);
      if (imbalance(mid) > 0.0) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    const double root = 0.5 * (lo + hi);
    ASSERT_NEAR(closed, root, 1e-9) << "trial " << trial;
  }
}

TEST(WeightStep, InactiveBranchesAndAlphasBitUnchanged) {
  sd::Network<double> net(tiny_supernet(), sd::Rng(1));
  sd::SearchConfig config;
  config.seed = 7;
  sd::SearchSession<double> session(net, config);
  const auto batch = synthetic_batch<double>(8, 8, 3, 100);
  for (int step = 0; step < 5; ++step) {
    const auto alphas_before = session.state().alphas;
    std::vector<std::vector<std::vector<double>>> full_before;
    for (int b = 0; b < 2; ++b)
      for (int c = 0; c < 6; ++c) full_before.push_back(snapshot(net.branch_parameters(b, c)));

    session.weight_update_step(batch);

    // exactly one gate set per block
    for (const auto& gates : session.state().gates) {
      int total = 0;
      for (int g : gates) total += g;
      ASSERT_EQ(total, 1);
    }
    const auto& active = session.last_active();
    for (int b = 0; b < 2; ++b) {
      for (int c = 0; c < 6; ++c) {
        const auto after = snapshot(net.branch_parameters(b, c));
        if (c == active[static_cast<std::size_t>(b)]) continue;  // sampled branch moves
        ASSERT_EQ(after, full_before[static_cast<std::size_t>(b * 6 + c)])
            << "inactive branch (" << b << "," << c << ") changed at step " << step;
      }
    }
    ASSERT_EQ(session.state().alphas, alphas_before) << "alphas changed in a weight step";
  }
}

TEST(WeightStep, ActiveBranchDoesMove) {
  sd::Network<double> net(tiny_supernet(), sd::Rng(2));
  sd::SearchConfig config;
  sd::SearchSession<double> session(net, config);
  const auto batch = synthetic_batch<double>(8, 8, 3, 101);
  session.weight_update_step(batch);
  const auto& active = session.last_active();
  bool any_moved = false;
  const auto params = net.branch_parameters(0, active[0]);
  for (const auto& p : params)
    for (double g : p.grad())
      if (g != 0.0) any_moved = true;
  EXPECT_TRUE(any_moved);
}

TEST(WeightStep, LossDecreasesWithForcedGate) {
  sd::Network<double> net(tiny_supernet(), sd::Rng(3));
  sd::SearchConfig config;  // paper defaults: lr 0.05, momentum 0.9, decay 4e-5
  sd::SearchSession<double> session(net, config);
  // force candidate 0 everywhere
  for (auto& alpha : session.state().alphas) {
    alpha.fill(-50.0);
    alpha[0] = 50.0;
  }
  const auto batch = synthetic_batch<double>(16, 8, 3, 102, 0.02);
  std::vector<double> losses;
  for (int step = 0; step < 20; ++step) losses.push_back(session.weight_update_step(batch));
  for (std::size_t i = 1; i < losses.size(); ++i) {
    ASSERT_LT(losses[i], losses[i - 1]) << "step " << i;
  }
}

TEST(ArchStep, TwoGatesPerBlockAndWeightsBitUnchanged) {
  sd::Network<double> net(tiny_supernet(), sd::Rng(4));
  sd::SearchConfig config;
  config.seed = 5;
  sd::SearchSession<double> session(net, config);
  const auto batch = synthetic_batch<double>(8, 8, 3, 103);
  for (int step = 0; step < 5; ++step) {
    const auto weights_before = snapshot(net.parameters());
    const auto buffers_before = net.buffer_snapshot();
    session.arch_update_step(batch);
    ASSERT_EQ(snapshot(net.parameters()), weights_before) << "weights moved in arch step";
    ASSERT_EQ(net.buffer_snapshot(), buffers_before) << "running stats moved in arch step";
    for (const auto& gates : session.state().gates) {
      int total = 0;
      for (int g : gates) total += g;
      ASSERT_EQ(total, 2);
    }
  }
}

TEST(ArchStep, UnsampledProbabilitiesConservedWithin1e9) {
  sd::Network<double> net(tiny_supernet(), sd::Rng(5));
  sd::SearchConfig config;
  config.seed = 6;
  sd::SearchSession<double> session(net, config);
  const auto batch = synthetic_batch<double>(8, 8, 3, 104);
  for (int step = 0; step < 10; ++step) {
    const auto probs_before = session.state().probabilities();
    session.arch_update_step(batch);
    const auto probs_after = session.state().probabilities();
    const auto& pairs = session.last_pairs();
    for (std::size_t b = 0; b < pairs.size(); ++b) {
      for (int k = 0; k < 6; ++k) {
        if (k == pairs[b].first || k == pairs[b].second) continue;
        ASSERT_NEAR(probs_after[b][static_cast<std::size_t>(k)],
                    probs_before[b][static_cast<std::size_t>(k)], 1e-9)
            << "block " << b << " candidate " << k << " step " << step;
      }
    }
  }
}

TEST(ArchStep, PairGradientSumsToZero) {
  sd::Network<double> net(tiny_supernet(), sd::Rng(6));
  sd::SearchConfig config;
  sd::SearchSession<double> session(net, config);
  const auto batch = synthetic_batch<double>(8, 8, 3, 105);
  for (int step = 0; step < 5; ++step) {
    session.arch_update_step(batch);
    for (const auto& grads : session.last_pair_grads()) {
      ASSERT_LE(std::abs(grads[0] + grads[1]), 1e-10);
    }
  }
}

TEST(ArchStep, AlphasOfSampledPairMove) {
  sd::Network<double> net(tiny_supernet(), sd::Rng(7));
  sd::SearchConfig config;
  sd::SearchSession<double> session(net, config);
  const auto batch = synthetic_batch<double>(8, 8, 3, 106);
  const auto before = session.state().alphas;
  session.arch_update_step(batch);
  const auto after = session.state().alphas;
  EXPECT_NE(before, after);
}

TEST(StopCriterion, RuleInstantiation) {
  sd::Trajectory trajectory;
  auto add_epoch = [&](int epoch, double top) {
    for (int block : {0, 1}) {
      trajectory.rows.push_back({epoch, block, 0, top});
      trajectory.rows.push_back({epoch, block, 1, 1.0 - top});
      for (int k = 2; k < 6; ++k) trajectory.rows.push_back({epoch, block, k, 0.0});
    }
  };
  for (int e = 0; e < 20; ++e) add_epoch(e, 0.95);
  EXPECT_TRUE(sd::stop_criterion(trajectory, 20, 0.9));
  EXPECT_FALSE(sd::stop_criterion(trajectory, 21, 0.9));

  sd::Trajectory oscillating;
  for (int e = 0; e < 40; ++e) {
    for (int block : {0, 1}) {
      const double top = (block == 1 && e % 3 == 0) ? 0.85 : 0.95;
      oscillating.rows.push_back({e, block, 0, top});
      oscillating.rows.push_back({e, block, 1, 1.0 - top});
      for (int k = 2; k < 6; ++k) oscillating.rows.push_back({e, block, k, 0.0});
    }
  }
  EXPECT_FALSE(sd::stop_criterion(oscillating, 20, 0.9));
}

TEST(StopCriterion, ZeroPatienceStopsAfterFirstEpoch) {
  sd::Trajectory trajectory;
  for (int k = 0; k < 6; ++k) trajectory.rows.push_back({0, 0, k, 1.0 / 6.0});
  EXPECT_TRUE(sd::stop_criterion(trajectory, 0, 0.9));
  EXPECT_FALSE(sd::stop_criterion(sd::Trajectory{}, 0, 0.9));
}

TEST(RunSearch, TrajectoryShapeAndDeterminism) {
  auto run = [] {
    sd::Network<float> net(tiny_supernet(), sd::Rng(8));
    sd::SearchConfig config;
    config.epochs = 2;
    config.seed = 17;
    config.units_per_epoch = 2;
    config.batch_size = 8;
    const sd::Dataset<float> ds = sd::synthetic_dataset<float>(3, 48, 8, 42, 0.05);
    auto [train_idx, val_idx] = sd::split_train_val(ds.size(), 0.75, 3);
    sd::AugmentSpec spec;
    spec.resize_target = 8;
    sd::BatchStream<float> train(ds, train_idx, 8, spec, sd::AugmentMode::train, 4);
    sd::BatchStream<float> val(ds, val_idx, 8, spec, sd::AugmentMode::train, 5);
    return sd::run_search(net, config, train, val);
  };
  const sd::SearchResult a = run();
  EXPECT_EQ(a.epochs_run, 2);
  EXPECT_EQ(a.trajectory.rows.size(), 2u * 2u * 6u);  // epochs x blocks x candidates
  EXPECT_EQ(a.metrics.size(), 2u);
  // probability groups sum to 1
  for (int epoch = 0; epoch < 2; ++epoch) {
    for (int block = 0; block < 2; ++block) {
      double total = 0.0;
      for (const auto& row : a.trajectory.rows) {
        if (row.epoch == epoch && row.block_id == block) total += row.probability;
      }
      EXPECT_NEAR(total, 1.0, 1e-6);
    }
  }
  const sd::SearchResult b = run();
  EXPECT_EQ(sd::trajectory_to_csv(a.trajectory), sd::trajectory_to_csv(b.trajectory));
  EXPECT_EQ(sd::metrics_to_csv(a.metrics), sd::metrics_to_csv(b.metrics));
  EXPECT_EQ(a.final_architecture.choices.size(), b.final_architecture.choices.size());
  for (std::size_t i = 0; i < a.final_architecture.choices.size(); ++i)
    EXPECT_EQ(a.final_architecture.choices[i].candidate_id,
              b.final_architecture.choices[i].candidate_id);
}

TEST(RunSearch, StopCriterionEndsEarly) {
  sd::Network<float> net(tiny_supernet(), sd::Rng(30));
  sd::SearchConfig config;
  config.epochs = 10;
  config.seed = 31;
  config.units_per_epoch = 1;
  config.stop_patience = 1;
  config.stop_threshold = 0.0;  // trivially satisfied: stop after epoch 0
  const sd::Dataset<float> ds = sd::synthetic_dataset<float>(3, 24, 8, 32, 0.05);
  auto [train_idx, val_idx] = sd::split_train_val(ds.size(), 0.75, 33);
  sd::AugmentSpec spec;
  spec.resize_target = 8;
  sd::BatchStream<float> train(ds, train_idx, 8, spec, sd::AugmentMode::train, 34);
  sd::BatchStream<float> val(ds, val_idx, 6, spec, sd::AugmentMode::train, 35);
  const sd::SearchResult result = sd::run_search(net, config, train, val);
  EXPECT_EQ(result.epochs_run, 1);
  EXPECT_EQ(result.trajectory.rows.size(), 1u * 2u * 6u);
  EXPECT_EQ(result.metrics.size(), 1u);
}

TEST(RunSearch, PlantedLoserFallsBelowUniform) {
  // candidate 2 of every block is sabotaged: its activation outputs zeros, so
  // its block output is exactly zero and the path carries no signal.
  sd::Network<float> net(tiny_supernet(), sd::Rng(9));
  net.set_candidate_zeroed(0, 2);
  net.set_candidate_zeroed(1, 2);
  sd::SearchConfig config;
  config.epochs = 12;
  config.seed = 23;
  config.units_per_epoch = 6;
  config.batch_size = 16;
  config.stop_patience = 1000;
  const sd::Dataset<float> ds = sd::synthetic_dataset<float>(3, 192, 8, 77, 0.05);
  auto [train_idx, val_idx] = sd::split_train_val(ds.size(), 0.75, 13);
  sd::AugmentSpec spec;
  spec.resize_target = 8;
  sd::BatchStream<float> train(ds, train_idx, 16, spec, sd::AugmentMode::train, 14);
  sd::BatchStream<float> val(ds, val_idx, 16, spec, sd::AugmentMode::train, 15);
  const sd::SearchResult result = sd::run_search(net, config, train, val);
  // trajectory rows for the final epoch
  const int last = result.epochs_run - 1;
  for (int block = 0; block < 2; ++block) {
    double sabotaged = 1.0;
    for (const auto& row : result.trajectory.rows) {
      if (row.epoch == last && row.block_id == block && row.candidate_id == 2)
        sabotaged = row.probability;
    }
    EXPECT_LT(sabotaged, 1.0 / 6.0) << "block " << block;
  }
  for (const auto& choice : result.final_architecture.choices) EXPECT_NE(choice.candidate_id, 2);
}

TEST(Retrain, FreshInitDiffersAndLearns) {
  const sd::ArchDescription supernet_desc = tiny_supernet();
  sd::Network<float> supernet(supernet_desc, sd::Rng(10));
  std::vector<std::vector<double>> alphas(2, std::vector<double>(6, 0.0));
  const sd::FinalArchitecture final_arch = sd::derive_final_architecture(supernet_desc, alphas);

  sd::Network<float> retrained(final_arch.arch, sd::Rng(11));
  // fresh initialization: parameters differ from the supernet's branch-0 weights
  const auto supernet_params = snapshot(supernet.branch_parameters(0, 0));
  const auto retrain_params = snapshot(retrained.branch_parameters(0, 0));
  EXPECT_NE(supernet_params, retrain_params);

  sd::SearchConfig config;
  config.epochs = 8;
  config.seed = 3;
  const sd::Dataset<float> ds = sd::synthetic_dataset<float>(3, 144, 8, 55, 0.03);
  auto [train_idx, val_idx] = sd::split_train_val(ds.size(), 0.8, 5);
  sd::AugmentSpec spec;
  spec.resize_target = 8;
  spec.area_min = 0.7;  // light cropping: the toy task is about learnability
  sd::BatchStream<float> train(ds, train_idx, 16, spec, sd::AugmentMode::train, 6);
  sd::BatchStream<float> eval_stream(ds, val_idx, 16, spec, sd::AugmentMode::eval, 0);
  const auto metrics = sd::retrain(retrained, config, train, eval_stream);
  ASSERT_EQ(metrics.size(), 8u);

  // paired-training oracle: a hand-built identical concrete network trained
  // under the same budget; the retrain path must reach >= 90% of its accuracy
  sd::Network<float> direct(final_arch.arch, sd::Rng(12));
  std::vector<sd::Tensor<float>> params = direct.parameters();
  sd::OptimState<float> opt;
  opt.kind = sd::OptimKind::sgd_nesterov;
  opt.lr = static_cast<float>(config.weight_lr);
  opt.momentum = static_cast<float>(config.weight_momentum);
  opt.weight_decay = static_cast<float>(config.weight_decay);
  sd::BatchStream<float> train2(ds, train_idx, 16, spec, sd::AugmentMode::train, 6);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::int64_t u = 0; u < train2.batches_per_epoch(); ++u) {
      const auto batch = train2.next();
      direct.zero_all_grads();
      auto loss = sd::softmax_cross_entropy(
          direct.forward_single(batch.images, {}, sd::BnMode::train), batch.labels);
      loss.backward();
      sd::sgd_nesterov_step(params, opt);
    }
  }
  sd::BatchStream<float> eval2(ds, val_idx, 16, spec, sd::AugmentMode::eval, 0);
  std::int64_t correct = 0, total = 0;
  for (std::int64_t b = 0; b < eval2.batches_per_epoch(); ++b) {
    const auto batch = eval2.next();
    const auto preds = sd::argmax_rows(direct.forward_single(batch.images, {}, sd::BnMode::eval));
    for (std::size_t i = 0; i < preds.size(); ++i) {
      correct += preds[i] == batch.labels[i] ? 1 : 0;
      ++total;
    }
  }
  const double direct_acc = static_cast<double>(correct) / static_cast<double>(total);
  EXPECT_GE(metrics.back().eval_accuracy, 0.9 * direct_acc);
  EXPECT_GT(direct_acc, 0.5);  // the toy task is genuinely learnable
}

TEST(Retrain, RejectsSupernets) {
  sd::Network<float> net(tiny_supernet(), sd::Rng(13));
  sd::SearchConfig config;
  const sd::Dataset<float> ds = sd::synthetic_dataset<float>(3, 30, 8, 1, 0.05);
  std::vector<std::int64_t> all(static_cast<std::size_t>(ds.size()));
  std::iota(all.begin(), all.end(), 0);
  sd::AugmentSpec spec;
  spec.resize_target = 8;
  sd::BatchStream<float> train(ds, all, 8, spec, sd::AugmentMode::train, 2);
  sd::BatchStream<float> eval_stream(ds, all, 8, spec, sd::AugmentMode::eval, 0);
  EXPECT_THROW(sd::retrain(net, config, train, eval_stream), sd::ConfigError);
}

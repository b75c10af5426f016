// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "scopednas/arch_json.hpp"
#include "scopednas/csv.hpp"
#include "scopednas/data.hpp"
#include "scopednas/engine.hpp"
#include "scopednas/model.hpp"
#include "scopednas/run_config.hpp"
#include "scopednas/searchspace.hpp"
#include "scopednas/svg.hpp"

namespace scopednas {

// Fixed stream ids for deriving independent RNG sequences from the run seed.
namespace rng_streams {
inline constexpr std::uint64_t kSupernetInit = 1;
inline constexpr std::uint64_t kRetrainInit = 5;
inline constexpr std::uint64_t kSplit = 11;
inline constexpr std::uint64_t kTrainStream = 12;
inline constexpr std::uint64_t kValStream = 13;
inline constexpr std::uint64_t kSyntheticData = 14;
inline constexpr std::uint64_t kSyntheticEval = 21;
}  // namespace rng_streams

template <class T>
Dataset<T> load_run_dataset(const RunConfig& cfg) {
  Dataset<T> ds;
  if (cfg.dataset == "cifar10") {
    if (cfg.data_dir.empty()) {
      throw IoError("cifar10 runs need --data-dir or the SCOPED_DNAS_DATA environment variable");
    }
    for (int i = 1; i <= 5; ++i) {
      const std::string path = cfg.data_dir + "/data_batch_" + std::to_string(i) + ".bin";
      append_batch(ds, load_cifar10_batchfile<T>(path));
    }
  } else {
    ds = synthetic_dataset<T>(static_cast<int>(cfg.num_classes), cfg.synthetic_size, cfg.resize,
                              Rng(cfg.seed).derive(rng_streams::kSyntheticData).next_u64(),
                              cfg.synthetic_noise);
  }
  if (cfg.subset > 0 && cfg.subset < ds.size()) {
    ds.images.resize(static_cast<std::size_t>(cfg.subset * 3 * ds.height * ds.width));
    ds.labels.resize(static_cast<std::size_t>(cfg.subset));
  }
  return ds;
}

template <class T>
AugmentSpec augment_spec_for(const RunConfig& cfg, const Dataset<T>& ds,
                             const std::vector<std::int64_t>& train_indices) {
  AugmentSpec spec;
  spec.area_min = cfg.crop_area_min;
  spec.area_max = cfg.crop_area_max;
  spec.aspect_min = cfg.aspect_min;
  spec.aspect_max = cfg.aspect_max;
  spec.resize_target = cfg.resize;
  spec.flip_prob = cfg.flip_prob;
  // Normalization constants from the training split itself.
  Dataset<T> train_only;
  train_only.height = ds.height;
  train_only.width = ds.width;
  const std::int64_t plane = 3 * ds.height * ds.width;
  train_only.images.reserve(train_indices.size() * static_cast<std::size_t>(plane));
  for (std::int64_t idx : train_indices) {
    train_only.images.insert(train_only.images.end(), ds.image(idx), ds.image(idx) + plane);
    train_only.labels.push_back(ds.labels[static_cast<std::size_t>(idx)]);
  }
  const auto [mean, stddev] = channel_mean_std(train_only);
  spec.mean = mean;
  spec.stddev = stddev;
  return spec;
}

struct SearchArtifacts {
  SearchResult result;
  std::int64_t supernet_macs = 0;
  double wall_seconds = 0.0;
};

// The search workflow: dataset, split, supernet, bilevel search, artifacts on
// disk (trajectory.csv, metrics.csv, final_architecture.json,
// run_config.resolved; wall clock goes to timing.log only).
template <class T = float>
SearchArtifacts run_search_workflow(const RunConfig& cfg, bool write_files = true) {
  validate(cfg);
  const Dataset<T> ds = load_run_dataset<T>(cfg);
  auto [train_idx, val_idx] =
      split_train_val(ds.size(), cfg.train_fraction,
                      Rng(cfg.seed).derive(rng_streams::kSplit).next_u64());
  const AugmentSpec spec = augment_spec_for(cfg, ds, train_idx);
  BatchStream<T> train(ds, train_idx, cfg.batch_size, spec, AugmentMode::train,
                       Rng(cfg.seed).derive(rng_streams::kTrainStream).next_u64());
  BatchStream<T> val(ds, val_idx, cfg.batch_size, spec, AugmentMode::train,
                     Rng(cfg.seed).derive(rng_streams::kValStream).next_u64());

  const ArchDescription base =
      build_base_resnet50(cfg.num_classes, cfg.small_stem, cfg.width_divisor);
  const ArchDescription supernet = build_supernet(base, scope_from_name(cfg.scope));
  Network<T> net(supernet, Rng(cfg.seed).derive(rng_streams::kSupernetInit));

  SearchArtifacts artifacts;
  artifacts.supernet_macs = count_macs(supernet, cfg.resize);
  const auto start = std::chrono::steady_clock::now();
  artifacts.result = run_search(net, cfg.to_search_config(), train, val);
  artifacts.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (write_files) {
    std::filesystem::create_directories(cfg.out_dir);
    write_text_file(cfg.out_dir + "/trajectory.csv", trajectory_to_csv(artifacts.result.trajectory));
    write_text_file(cfg.out_dir + "/metrics.csv", metrics_to_csv(artifacts.result.metrics));
    write_text_file(cfg.out_dir + "/final_architecture.json",
                    arch_to_json_text(artifacts.result.final_architecture.arch));
    write_text_file(cfg.out_dir + "/run_config.resolved", resolved_config_text(cfg));
    std::ostringstream timing;
    timing << "search_wall_seconds=" << artifacts.wall_seconds << "\n"
           << "supernet_macs_per_image=" << artifacts.supernet_macs << "\n";
    write_text_file(cfg.out_dir + "/timing.log", timing.str());
  }
  return artifacts;
}

// Retrains a discovered architecture from scratch under the weight-step
// settings and logs per-epoch eval accuracy.
template <class T = float>
std::vector<RetrainMetrics> run_retrain_workflow(const RunConfig& cfg,
                                                 const std::string& arch_path,
                                                 bool write_files = true) {
  validate(cfg);
  const FinalArchitecture final_arch =
      final_architecture_from_json(nlohmann::json::parse(read_text_file(arch_path)));
  const Dataset<T> ds = load_run_dataset<T>(cfg);
  auto [train_idx, val_idx] =
      split_train_val(ds.size(), cfg.train_fraction,
                      Rng(cfg.seed).derive(rng_streams::kSplit).next_u64());
  const AugmentSpec spec = augment_spec_for(cfg, ds, train_idx);
  BatchStream<T> train(ds, train_idx, cfg.batch_size, spec, AugmentMode::train,
                       Rng(cfg.seed).derive(rng_streams::kTrainStream).next_u64());

  // Held-out evaluation: the CIFAR test batch when available, a fresh
  // synthetic draw otherwise.
  Dataset<T> eval_ds;
  if (cfg.dataset == "cifar10") {
    eval_ds = dataset_from_batch(load_cifar10_batchfile<T>(cfg.data_dir + "/test_batch.bin"));
  } else {
    eval_ds = synthetic_dataset<T>(static_cast<int>(cfg.num_classes),
                                   std::max<std::int64_t>(cfg.synthetic_size / 4, 64), cfg.resize,
                                   Rng(cfg.seed).derive(rng_streams::kSyntheticEval).next_u64(),
                                   cfg.synthetic_noise);
  }
  std::vector<std::int64_t> eval_idx(static_cast<std::size_t>(eval_ds.size()));
  for (std::int64_t i = 0; i < eval_ds.size(); ++i) eval_idx[static_cast<std::size_t>(i)] = i;
  BatchStream<T> eval_stream(eval_ds, eval_idx, cfg.batch_size, spec, AugmentMode::eval, 0);

  Network<T> net(final_arch.arch, Rng(cfg.seed).derive(rng_streams::kRetrainInit));
  const std::vector<RetrainMetrics> metrics =
      retrain(net, cfg.to_search_config(), train, eval_stream, cfg.units_per_epoch);

  if (write_files) {
    std::filesystem::create_directories(cfg.out_dir);
    write_text_file(cfg.out_dir + "/retrain_metrics.csv", retrain_metrics_to_csv(metrics));
    write_text_file(cfg.out_dir + "/run_config.resolved", resolved_config_text(cfg));
  }
  return metrics;
}

// One SVG per block from a trajectory CSV; returns the written paths.
inline std::vector<std::string> run_plot_workflow(const std::string& trajectory_path,
                                                  const std::string& out_dir) {
  const Trajectory trajectory = trajectory_from_csv(read_text_file(trajectory_path));
  if (trajectory.rows.empty()) throw DataError("trajectory has no rows: " + trajectory_path);
  std::map<int, std::vector<TrajectoryRow>> per_block;
  for (const TrajectoryRow& row : trajectory.rows) per_block[row.block_id].push_back(row);
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  for (const auto& [block_id, rows] : per_block) {
    const std::string path = out_dir + "/trajectory_block_" + std::to_string(block_id) + ".svg";
    write_text_file(path, emit_plot_svg(block_id, rows));
    written.push_back(path);
  }
  return written;
}

}  // namespace scopednas

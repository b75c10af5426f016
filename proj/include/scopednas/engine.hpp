// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "scopednas/data.hpp"
#include "scopednas/model.hpp"
#include "scopednas/optim.hpp"
#include "scopednas/searchspace.hpp"

namespace scopednas {

using AlphaVec = std::array<double, kCandidateCount>;

// Numerically stable softmax over one block's architecture parameters.
inline AlphaVec arch_probabilities(const AlphaVec& alpha) {
  double max_alpha = alpha[0];
  for (double a : alpha) {
    if (std::isnan(a)) throw NumericError("arch_probabilities: NaN architecture parameter");
    max_alpha = std::max(max_alpha, a);
  }
  AlphaVec probs{};
  double denom = 0.0;
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    probs[k] = std::exp(alpha[k] - max_alpha);
    denom += probs[k];
  }
  for (double& p : probs) p /= denom;
  return probs;
}

// Multinomial draw from softmax(alpha).
inline int sample_active_path(const AlphaVec& alpha, Rng& rng) {
  const AlphaVec probs = arch_probabilities(alpha);
  const double u = rng.uniform();
  double cdf = 0.0;
  for (int k = 0; k < kCandidateCount; ++k) {
    cdf += probs[static_cast<std::size_t>(k)];
    if (u < cdf) return k;
  }
  return kCandidateCount - 1;
}

// Second distinct candidate: multinomial over the remaining mass.
inline int sample_second_path(const AlphaVec& alpha, int first, Rng& rng) {
  AlphaVec probs = arch_probabilities(alpha);
  probs[static_cast<std::size_t>(first)] = 0.0;
  double denom = 0.0;
  for (double p : probs) denom += p;
  const double u = rng.uniform() * denom;
  double cdf = 0.0;
  for (int k = 0; k < kCandidateCount; ++k) {
    if (k == first) continue;
    cdf += probs[static_cast<std::size_t>(k)];
    if (u < cdf) return k;
  }
  return first == kCandidateCount - 1 ? kCandidateCount - 2 : kCandidateCount - 1;
}

// Additive constant for the two sampled alphas after their optimizer update,
// chosen so that every unsampled candidate's full-softmax probability is
// unchanged: exp(c) must equal the pair's exponential mass before the update
// divided by its mass after (equivalently ln(s0*R/(E*(1-s0))) in terms of the
// unsampled mass R and pre-update pair share s0).
inline double pair_rescale_constant(double old_i, double old_j, double new_i, double new_j) {
  const double shift = std::max(std::max(old_i, old_j), std::max(new_i, new_j));
  const double mass_before = std::exp(old_i - shift) + std::exp(old_j - shift);
  const double mass_after = std::exp(new_i - shift) + std::exp(new_j - shift);
  return std::log(mass_before / mass_after);
}

// Architecture parameters, binary gates and the alpha optimizer state.
// Alphas start at zero: uniform candidate probabilities.
struct ArchState {
  std::vector<AlphaVec> alphas;
  std::vector<std::array<int, kCandidateCount>> gates;
  std::vector<AlphaVec> adam_m;
  std::vector<AlphaVec> adam_v;
  std::int64_t adam_step_count = 0;
  Rng rng;

  ArchState(std::size_t num_blocks, Rng sampling_rng)
      : alphas(num_blocks, AlphaVec{}),
        gates(num_blocks, std::array<int, kCandidateCount>{}),
        adam_m(num_blocks, AlphaVec{}),
        adam_v(num_blocks, AlphaVec{}),
        rng(sampling_rng) {}

  std::vector<AlphaVec> probabilities() const {
    std::vector<AlphaVec> out;
    out.reserve(alphas.size());
    for (const AlphaVec& alpha : alphas) out.push_back(arch_probabilities(alpha));
    return out;
  }

  std::vector<std::vector<double>> alphas_as_vectors() const {
    std::vector<std::vector<double>> out;
    out.reserve(alphas.size());
    for (const AlphaVec& alpha : alphas) out.emplace_back(alpha.begin(), alpha.end());
    return out;
  }
};

struct SearchConfig {
  Scope scope = Scope::s;
  int epochs = 500;
  std::int64_t batch_size = 64;
  double weight_lr = 0.05;
  double weight_momentum = 0.9;
  double weight_decay = 4e-5;
  double arch_lr = 0.001;
  double arch_beta1 = 0.9;
  double arch_beta2 = 0.999;
  double arch_eps = 1e-8;
  double arch_weight_decay = 0.0;
  int alternation_weight = 1;  // weight batches per alternation unit
  int alternation_arch = 1;    // architecture batches per alternation unit
  int stop_patience = 20;      // K consecutive epochs
  double stop_threshold = 0.9;  // tau
  std::uint64_t seed = 0;
  std::int64_t units_per_epoch = 0;  // 0: one full pass of the training stream
};

struct TrajectoryRow {
  int epoch = 0;
  int block_id = 0;
  int candidate_id = 0;
  double probability = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryRow> rows;

  int epochs_recorded() const {
    int max_epoch = -1;
    for (const TrajectoryRow& row : rows) max_epoch = std::max(max_epoch, row.epoch);
    return max_epoch + 1;
  }
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double arch_loss = 0.0;
  double min_top_prob = 0.0;
};

struct RetrainMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double eval_accuracy = 0.0;
};

// Stop once every block's top probability stayed >= tau for the last K
// recorded epochs. K = 0 stops right after the first epoch. Pure function of
// its inputs.
inline bool stop_criterion(const Trajectory& trajectory, int patience, double threshold) {
  const int epochs = trajectory.epochs_recorded();
  if (epochs < 1) return false;
  if (patience == 0) return true;
  if (epochs < patience) return false;
  // Per epoch, the minimum over blocks of the block's top probability.
  std::vector<double> epoch_min(static_cast<std::size_t>(epochs),
                                std::numeric_limits<double>::infinity());
  std::vector<std::vector<std::pair<int, double>>> block_max(static_cast<std::size_t>(epochs));
  for (const TrajectoryRow& row : trajectory.rows) {
    auto& entries = block_max[static_cast<std::size_t>(row.epoch)];
    bool found = false;
    for (auto& entry : entries) {
      if (entry.first == row.block_id) {
        entry.second = std::max(entry.second, row.probability);
        found = true;
        break;
      }
    }
    if (!found) entries.emplace_back(row.block_id, row.probability);
  }
  for (int e = 0; e < epochs; ++e) {
    for (const auto& entry : block_max[static_cast<std::size_t>(e)]) {
      epoch_min[static_cast<std::size_t>(e)] = std::min(epoch_min[static_cast<std::size_t>(e)], entry.second);
    }
  }
  for (int e = epochs - patience; e < epochs; ++e) {
    if (!(epoch_min[static_cast<std::size_t>(e)] >= threshold)) return false;
  }
  return true;
}

// Bilevel search driver over one supernet: binarized single-path weight steps
// on training batches, two-path architecture steps on validation batches.
template <class T>
class SearchSession {
 public:
  SearchSession(Network<T>& net, const SearchConfig& config)
      : net_(net),
        config_(config),
        search_blocks_(net.search_block_indices()),
        state_(search_blocks_.size(), Rng(config.seed).derive(0x5eed)) {
    weight_opt_.kind = OptimKind::sgd_nesterov;
    weight_opt_.lr = static_cast<T>(config.weight_lr);
    weight_opt_.momentum = static_cast<T>(config.weight_momentum);
    weight_opt_.weight_decay = static_cast<T>(config.weight_decay);
  }

  ArchState& state() { return state_; }
  const std::vector<int>& search_blocks() const { return search_blocks_; }
  OptimState<T>& weight_optimizer() { return weight_opt_; }

  // Samples one active path per block, trains that single-path network with
  // SGD-Nesterov, leaves every inactive branch and all alphas bit-unchanged.
  double weight_update_step(const ImageBatch<T>& batch) {
    if (batch.size() < 1) throw ConfigError("weight_update_step: empty batch");
    std::vector<int> active(search_blocks_.size());
    for (std::size_t b = 0; b < search_blocks_.size(); ++b) {
      const int chosen = sample_active_path(state_.alphas[b], state_.rng);
      active[b] = chosen;
      state_.gates[b].fill(0);
      state_.gates[b][static_cast<std::size_t>(chosen)] = 1;
    }
    last_active_ = active;
    net_.zero_all_grads();
    Tensor<T> logits = net_.forward_single(batch.images, active, BnMode::train);
    Tensor<T> loss = softmax_cross_entropy(logits, batch.labels);
    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value)) {
      throw NumericError("weight_update_step: non-finite loss " + std::to_string(loss_value));
    }
    loss.backward();
    std::vector<Tensor<T>> params = net_.active_parameters(active);
    sgd_nesterov_step(params, weight_opt_);
    return loss_value;
  }

  // ProxylessNAS-style two-path architecture step; model weights stay
  // bit-identical, alphas of the sampled pair move by a masked Adam step plus
  // a rescale that keeps every unsampled candidate's probability unchanged.
  double arch_update_step(const ImageBatch<T>& batch) {
    if (batch.size() < 1) throw ConfigError("arch_update_step: empty batch");
    std::vector<typename Network<T>::PairSample> pairs(search_blocks_.size());
    for (std::size_t b = 0; b < search_blocks_.size(); ++b) {
      const int first = sample_active_path(state_.alphas[b], state_.rng);
      const int second = sample_second_path(state_.alphas[b], first, state_.rng);
      const double a_i = state_.alphas[b][static_cast<std::size_t>(first)];
      const double a_j = state_.alphas[b][static_cast<std::size_t>(second)];
      const double m = std::max(a_i, a_j);
      const double e_i = std::exp(a_i - m);
      const double e_j = std::exp(a_j - m);
      pairs[b] = {first, second, e_i / (e_i + e_j), e_j / (e_i + e_j)};
      state_.gates[b].fill(0);
      state_.gates[b][static_cast<std::size_t>(first)] = 1;
      state_.gates[b][static_cast<std::size_t>(second)] = 1;
    }
    last_pairs_ = pairs;
    net_.zero_all_grads();
    std::vector<typename Network<T>::PairTrace> traces;
    Tensor<T> logits = net_.forward_two_path(batch.images, pairs, BnMode::train_frozen, traces);
    Tensor<T> loss = softmax_cross_entropy(logits, batch.labels);
    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value)) {
      throw NumericError("arch_update_step: non-finite loss " + std::to_string(loss_value));
    }
    loss.backward();

    state_.adam_step_count += 1;
    const double bc1 = 1.0 - std::pow(config_.arch_beta1, static_cast<double>(state_.adam_step_count));
    const double bc2 = 1.0 - std::pow(config_.arch_beta2, static_cast<double>(state_.adam_step_count));
    last_pair_grads_.assign(search_blocks_.size(), {0.0, 0.0});
    for (std::size_t b = 0; b < search_blocks_.size(); ++b) {
      const auto& pair = pairs[b];
      const auto& trace = traces[b];
      // dL/dg_m = <dL/d(mixed), out_m>
      const double dg_first = dot(trace.mixed.grad(), trace.out_first.data());
      const double dg_second = dot(trace.mixed.grad(), trace.out_second.data());
      const double p_i = pair.p_first, p_j = pair.p_second;
      // dL/dalpha_k = sum_m dg_m * p'_m * (delta_mk - p'_k), k in the pair
      const double d_alpha_i = dg_first * p_i * (1.0 - p_i) + dg_second * p_j * (0.0 - p_i);
      const double d_alpha_j = dg_first * p_i * (0.0 - p_j) + dg_second * p_j * (1.0 - p_j);
      last_pair_grads_[b] = {d_alpha_i, d_alpha_j};

      AlphaVec& alpha = state_.alphas[b];
      const double old_i = alpha[static_cast<std::size_t>(pair.first)];
      const double old_j = alpha[static_cast<std::size_t>(pair.second)];
      adam_entry(b, pair.first, d_alpha_i, bc1, bc2);
      adam_entry(b, pair.second, d_alpha_j, bc1, bc2);
      const double new_i = alpha[static_cast<std::size_t>(pair.first)];
      const double new_j = alpha[static_cast<std::size_t>(pair.second)];
      const double rescale = pair_rescale_constant(old_i, old_j, new_i, new_j);
      alpha[static_cast<std::size_t>(pair.first)] += rescale;
      alpha[static_cast<std::size_t>(pair.second)] += rescale;
    }
    return loss_value;
  }

  const std::vector<int>& last_active() const { return last_active_; }
  const std::vector<typename Network<T>::PairSample>& last_pairs() const { return last_pairs_; }
  const std::vector<std::array<double, 2>>& last_pair_grads() const { return last_pair_grads_; }

 private:
  void adam_entry(std::size_t block, int k, double grad, double bc1, double bc2) {
    const std::size_t kk = static_cast<std::size_t>(k);
    double g = grad + config_.arch_weight_decay * state_.alphas[block][kk];
    double& m = state_.adam_m[block][kk];
    double& v = state_.adam_v[block][kk];
    m = config_.arch_beta1 * m + (1.0 - config_.arch_beta1) * g;
    v = config_.arch_beta2 * v + (1.0 - config_.arch_beta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    state_.alphas[block][kk] -= config_.arch_lr * mhat / (std::sqrt(vhat) + config_.arch_eps);
  }

  template <class U>
  static double dot(const std::vector<U>& a, const std::vector<U>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * b[i];
    return acc;
  }

  Network<T>& net_;
  SearchConfig config_;
  std::vector<int> search_blocks_;
  ArchState state_;
  OptimState<T> weight_opt_;
  std::vector<int> last_active_;
  std::vector<typename Network<T>::PairSample> last_pairs_;
  std::vector<std::array<double, 2>> last_pair_grads_;
};

struct SearchResult {
  Trajectory trajectory;
  FinalArchitecture final_architecture;
  std::vector<EpochMetrics> metrics;
  int epochs_run = 0;
};

// Alternate weight and architecture batches, record softmax(alpha) per block
// at each epoch end, stop on budget or criterion, export the argmax
// architecture.
template <class T>
SearchResult run_search(Network<T>& net, const SearchConfig& config, BatchStream<T>& train,
                        BatchStream<T>& val) {
  if (config.epochs < 1) throw ConfigError("run_search: epochs must be >= 1");
  SearchSession<T> session(net, config);
  const std::vector<int>& block_ids = session.search_blocks();
  SearchResult result;
  const std::int64_t units =
      config.units_per_epoch > 0 ? config.units_per_epoch : train.batches_per_epoch();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double train_loss = 0.0;
    double arch_loss = 0.0;
    std::int64_t weight_steps = 0, arch_steps = 0;
    for (std::int64_t unit = 0; unit < units; ++unit) {
      for (int i = 0; i < config.alternation_weight; ++i) {
        train_loss += session.weight_update_step(train.next());
        ++weight_steps;
      }
      for (int i = 0; i < config.alternation_arch; ++i) {
        arch_loss += session.arch_update_step(val.next());
        ++arch_steps;
      }
    }
    const std::vector<AlphaVec> probs = session.state().probabilities();
    double min_top = 1.0;
    for (std::size_t b = 0; b < probs.size(); ++b) {
      double top = 0.0;
      for (int k = 0; k < kCandidateCount; ++k) {
        result.trajectory.rows.push_back(
            {epoch, block_ids[b], k, probs[b][static_cast<std::size_t>(k)]});
        top = std::max(top, probs[b][static_cast<std::size_t>(k)]);
      }
      min_top = std::min(min_top, top);
    }
    result.metrics.push_back({epoch, weight_steps ? train_loss / weight_steps : 0.0,
                              arch_steps ? arch_loss / arch_steps : 0.0,
                              probs.empty() ? 0.0 : min_top});
    result.epochs_run = epoch + 1;
    if (stop_criterion(result.trajectory, config.stop_patience, config.stop_threshold)) break;
  }
  result.final_architecture =
      derive_final_architecture(net.description(), session.state().alphas_as_vectors());
  return result;
}

// From-scratch training of a concrete architecture under the weight-step
// settings; evaluation accuracy is logged once per epoch.
template <class T>
std::vector<RetrainMetrics> retrain(Network<T>& net, const SearchConfig& config,
                                    BatchStream<T>& train, BatchStream<T>& eval_stream,
                                    std::int64_t units_per_epoch = 0) {
  if (!net.search_block_indices().empty()) {
    throw ConfigError("retrain: architecture still contains search units");
  }
  OptimState<T> opt;
  opt.kind = OptimKind::sgd_nesterov;
  opt.lr = static_cast<T>(config.weight_lr);
  opt.momentum = static_cast<T>(config.weight_momentum);
  opt.weight_decay = static_cast<T>(config.weight_decay);
  std::vector<Tensor<T>> params = net.parameters();
  std::vector<RetrainMetrics> metrics;
  const std::vector<int> no_active;
  const std::int64_t units = units_per_epoch > 0 ? units_per_epoch : train.batches_per_epoch();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double train_loss = 0.0;
    for (std::int64_t unit = 0; unit < units; ++unit) {
      const ImageBatch<T> batch = train.next();
      net.zero_all_grads();
      Tensor<T> logits = net.forward_single(batch.images, no_active, BnMode::train);
      Tensor<T> loss = softmax_cross_entropy(logits, batch.labels);
      const double loss_value = static_cast<double>(loss.item());
      if (!std::isfinite(loss_value)) {
        throw NumericError("retrain: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss.backward();
      sgd_nesterov_step(params, opt);
      train_loss += loss_value;
    }
    std::int64_t correct = 0, total = 0;
    for (std::int64_t b = 0; b < eval_stream.batches_per_epoch(); ++b) {
      const ImageBatch<T> batch = eval_stream.next();
      Tensor<T> logits = net.forward_single(batch.images, no_active, BnMode::eval);
      const std::vector<int> preds = argmax_rows(logits);
      for (std::size_t i = 0; i < preds.size(); ++i) {
        correct += preds[i] == batch.labels[i] ? 1 : 0;
        ++total;
      }
    }
    metrics.push_back({epoch, train_loss / static_cast<double>(units),
                       total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0});
  }
  return metrics;
}

}  // namespace scopednas

// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "scopednas/engine.hpp"
#include "scopednas/searchspace.hpp"

namespace scopednas {

// 9 significant digits; stable across platforms for identical doubles.
inline std::string format_probability(double value) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return buf;
}

inline constexpr const char* kTrajectoryCsvHeader =
    "epoch,block_id,candidate_id,kernel,activation,probability";

inline std::string trajectory_to_csv(const Trajectory& trajectory) {
  std::ostringstream out;
  out << kTrajectoryCsvHeader << "\n";
  for (const TrajectoryRow& row : trajectory.rows) {
    const CandidateOp op = candidate_from_id(row.candidate_id);
    out << row.epoch << ',' << row.block_id << ',' << row.candidate_id << ',' << op.kernel << ','
        << activation_name(op.act) << ',' << format_probability(row.probability) << "\n";
  }
  return out.str();
}

inline Trajectory trajectory_from_csv(const std::string& text) {
  Trajectory trajectory;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kTrajectoryCsvHeader) {
    throw DataError("trajectory CSV: bad or missing header");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    TrajectoryRow row;
    int kernel = 0;
    char act_buf[32] = {0};
    const int matched = std::sscanf(line.c_str(), "%d,%d,%d,%d,%31[^,],%lf", &row.epoch,
                                    &row.block_id, &row.candidate_id, &kernel, act_buf,
                                    &row.probability);
    if (matched != 6) {
      throw DataError("trajectory CSV: malformed line " + std::to_string(line_no));
    }
    const CandidateOp op = candidate_from_id(row.candidate_id);
    if (op.kernel != kernel || std::string(act_buf) != activation_name(op.act)) {
      throw DataError("trajectory CSV: candidate fields inconsistent at line " +
                      std::to_string(line_no));
    }
    trajectory.rows.push_back(row);
  }
  return trajectory;
}

inline std::string metrics_to_csv(const std::vector<EpochMetrics>& metrics) {
  std::ostringstream out;
  out << "epoch,train_loss,arch_loss,min_top_prob\n";
  for (const EpochMetrics& row : metrics) {
    out << row.epoch << ',' << format_probability(row.train_loss) << ','
        << format_probability(row.arch_loss) << ',' << format_probability(row.min_top_prob)
        << "\n";
  }
  return out.str();
}

inline std::string retrain_metrics_to_csv(const std::vector<RetrainMetrics>& metrics) {
  std::ostringstream out;
  out << "epoch,train_loss,eval_accuracy\n";
  for (const RetrainMetrics& row : metrics) {
    out << row.epoch << ',' << format_probability(row.train_loss) << ','
        << format_probability(row.eval_accuracy) << "\n";
  }
  return out.str();
}

}  // namespace scopednas

// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "scopednas/engine.hpp"
#include "scopednas/searchspace.hpp"

namespace scopednas {

// Probability-trajectory line chart for one block: x = epoch, y = softmax
// probability, one labeled polyline per candidate. Plain SVG text output so
// identical inputs give identical bytes.
inline std::string emit_plot_svg(int block_id, const std::vector<TrajectoryRow>& rows) {
  if (rows.empty()) throw DataError("emit_plot_svg: no rows for block " + std::to_string(block_id));
  int min_epoch = rows.front().epoch, max_epoch = rows.front().epoch;
  for (const TrajectoryRow& row : rows) {
    if (row.block_id != block_id) {
      throw DataError("emit_plot_svg: row for block " + std::to_string(row.block_id) +
                      " passed to plot of block " + std::to_string(block_id));
    }
    if (row.probability < -1e-9 || row.probability > 1.0 + 1e-9) {
      throw NumericError("emit_plot_svg: probability outside [0,1]: " +
                         std::to_string(row.probability));
    }
    min_epoch = std::min(min_epoch, row.epoch);
    max_epoch = std::max(max_epoch, row.epoch);
  }

  constexpr double margin_left = 56.0, margin_top = 40.0;
  constexpr double plot_w = 480.0, plot_h = 340.0;
  constexpr double width = 740.0, height = 430.0;
  const double epoch_span = std::max(1, max_epoch - min_epoch);
  auto x_of = [&](int epoch) {
    return margin_left + plot_w * static_cast<double>(epoch - min_epoch) / epoch_span;
  };
  auto y_of = [&](double p) {
    return margin_top + plot_h * (1.0 - std::clamp(p, 0.0, 1.0));
  };
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return std::string(buf);
  };

  static constexpr std::array<const char*, kCandidateCount> colors{
      "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
      << "\" fill=\"white\"/>\n";
  svg << "<text x=\"" << fmt(margin_left) << "\" y=\"24\" font-family=\"sans-serif\" "
         "font-size=\"15\">block "
      << block_id << " candidate probabilities</text>\n";

  // axes and horizontal grid
  for (int tick = 0; tick <= 4; ++tick) {
    const double p = 0.25 * tick;
    const double y = y_of(p);
    svg << "<line x1=\"" << fmt(margin_left) << "\" y1=\"" << fmt(y) << "\" x2=\""
        << fmt(margin_left + plot_w) << "\" y2=\"" << fmt(y)
        << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg << "<text x=\"" << fmt(margin_left - 8) << "\" y=\"" << fmt(y + 4)
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << fmt(p)
        << "</text>\n";
  }
  svg << "<line x1=\"" << fmt(margin_left) << "\" y1=\"" << fmt(margin_top) << "\" x2=\""
      << fmt(margin_left) << "\" y2=\"" << fmt(margin_top + plot_h)
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg << "<line x1=\"" << fmt(margin_left) << "\" y1=\"" << fmt(margin_top + plot_h) << "\" x2=\""
      << fmt(margin_left + plot_w) << "\" y2=\"" << fmt(margin_top + plot_h)
      << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  // x tick labels: first and last epoch
  svg << "<text x=\"" << fmt(x_of(min_epoch)) << "\" y=\"" << fmt(margin_top + plot_h + 18)
      << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << min_epoch
      << "</text>\n";
  if (max_epoch != min_epoch) {
    svg << "<text x=\"" << fmt(x_of(max_epoch)) << "\" y=\"" << fmt(margin_top + plot_h + 18)
        << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">" << max_epoch
        << "</text>\n";
  }
  svg << "<text x=\"" << fmt(margin_left + plot_w / 2) << "\" y=\""
      << fmt(margin_top + plot_h + 34)
      << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">epoch</text>\n";

  for (int cand = 0; cand < kCandidateCount; ++cand) {
    std::ostringstream points;
    for (const TrajectoryRow& row : rows) {
      if (row.candidate_id != cand) continue;
      points << fmt(x_of(row.epoch)) << ',' << fmt(y_of(row.probability)) << ' ';
    }
    std::string point_str = points.str();
    if (!point_str.empty()) point_str.pop_back();
    svg << "<polyline fill=\"none\" stroke=\"" << colors[static_cast<std::size_t>(cand)]
        << "\" stroke-width=\"1.5\" points=\"" << point_str << "\"/>\n";
    const double ly = margin_top + 18.0 * cand;
    const double lx = margin_left + plot_w + 24.0;
    svg << "<line x1=\"" << fmt(lx) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(lx + 22)
        << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << colors[static_cast<std::size_t>(cand)]
        << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << fmt(lx + 28) << "\" y=\"" << fmt(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << candidate_label(cand)
        << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace scopednas

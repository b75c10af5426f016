// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <string>

#include <json.hpp>

#include "scopednas/searchspace.hpp"

namespace scopednas {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Canonical JSON: lexicographically sorted keys (nlohmann's default object
// ordering), 2-space indent, trailing newline. emit(parse(x)) == x holds
// byte-for-byte on documents in this form.

namespace detail {

inline nlohmann::json candidate_to_json(const CandidateOp& op) {
  return nlohmann::json{
      {"activation", activation_name(op.act)},
      {"candidate_id", op.candidate_id},
      {"kernel", op.kernel},
  };
}

inline CandidateOp candidate_from_json(const nlohmann::json& j) {
  CandidateOp op = candidate_from_id(j.at("candidate_id").get<int>());
  if (op.kernel != j.at("kernel").get<int>() ||
      activation_name(op.act) != j.at("activation").get<std::string>()) {
    throw ConfigError("candidate fields do not match candidate_id " +
                      std::to_string(op.candidate_id));
  }
  return op;
}

}  // namespace detail

inline nlohmann::json arch_to_json(const ArchDescription& desc) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const BlockSpec& block : desc.blocks) {
    nlohmann::json jb{
        {"channels",
         {{"in", block.in_channels}, {"mid", block.mid_channels}, {"out", block.out_channels}}},
        {"kind", block.kind == BlockKind::bottleneck ? "bottleneck" : "search-unit"},
        {"stage", block.stage},
        {"stride", block.stride},
    };
    if (block.kind == BlockKind::search_unit) {
      nlohmann::json cands = nlohmann::json::array();
      for (const CandidateOp& cand : block.candidates)
        cands.push_back(detail::candidate_to_json(cand));
      jb["candidates"] = std::move(cands);
    } else if (block.choice) {
      jb["choice"] = detail::candidate_to_json(*block.choice);
    }
    blocks.push_back(std::move(jb));
  }
  return nlohmann::json{
      {"blocks", std::move(blocks)},
      {"num_classes", desc.num_classes},
      {"scope", scope_name(desc.scope)},
      {"stem",
       {{"channels", desc.stem.channels},
        {"kind", desc.stem.kind == StemKind::standard ? "standard" : "small-input"}}},
  };
}

inline std::string arch_to_json_text(const ArchDescription& desc) {
  return arch_to_json(desc).dump(2) + "\n";
}

inline ArchDescription arch_from_json(const nlohmann::json& j) {
  ArchDescription desc;
  desc.num_classes = j.at("num_classes").get<std::int64_t>();
  desc.scope = scope_from_name(j.at("scope").get<std::string>());
  const nlohmann::json& stem = j.at("stem");
  const std::string stem_kind = stem.at("kind").get<std::string>();
  if (stem_kind == "standard") {
    desc.stem.kind = StemKind::standard;
  } else if (stem_kind == "small-input") {
    desc.stem.kind = StemKind::small_input;
  } else {
    throw ConfigError("unknown stem kind: " + stem_kind);
  }
  desc.stem.channels = stem.at("channels").get<std::int64_t>();
  int index = 0;
  for (const nlohmann::json& jb : j.at("blocks")) {
    BlockSpec block;
    const std::string kind = jb.at("kind").get<std::string>();
    if (kind == "bottleneck") {
      block.kind = BlockKind::bottleneck;
    } else if (kind == "search-unit") {
      block.kind = BlockKind::search_unit;
    } else {
      throw ConfigError("block " + std::to_string(index) + ": unknown kind " + kind);
    }
    block.stage = jb.at("stage").get<int>();
    block.stride = jb.at("stride").get<int>();
    const nlohmann::json& ch = jb.at("channels");
    block.in_channels = ch.at("in").get<std::int64_t>();
    block.mid_channels = ch.at("mid").get<std::int64_t>();
    block.out_channels = ch.at("out").get<std::int64_t>();
    if (block.kind == BlockKind::search_unit) {
      for (const nlohmann::json& jc : jb.at("candidates"))
        block.candidates.push_back(detail::candidate_from_json(jc));
      if (static_cast<int>(block.candidates.size()) != kCandidateCount) {
        throw ConfigError("block " + std::to_string(index) + ": search unit must carry 6 candidates");
      }
    } else if (jb.contains("choice")) {
      block.choice = detail::candidate_from_json(jb.at("choice"));
      block.kernel = block.choice->kernel;
      block.act = block.choice->act;
    }
    // First block of each stage carries the projection shortcut.
    block.has_projection_shortcut =
        desc.blocks.empty() || desc.blocks.back().stage != block.stage;
    desc.blocks.push_back(std::move(block));
    ++index;
  }
  return desc;
}

inline ArchDescription arch_from_json_text(const std::string& text) {
  return arch_from_json(nlohmann::json::parse(text));
}

inline FinalArchitecture final_architecture_from_json(const nlohmann::json& j) {
  FinalArchitecture final_arch;
  final_arch.arch = arch_from_json(j);
  for (const BlockSpec& block : final_arch.arch.blocks) {
    if (block.kind == BlockKind::search_unit) {
      throw ConfigError("final architecture must not contain search units");
    }
    if (block.choice) final_arch.choices.push_back(*block.choice);
  }
  return final_arch;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

}  // namespace scopednas

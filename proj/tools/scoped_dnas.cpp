// Copyright (c) 2026 scoped-dnas contributors
// SPDX-License-Identifier: Apache-2.0
//
// scoped-dnas: differentiable architecture search over ResNet-50 with a
// selectable search scope. Subcommands: search, retrain, params, plot.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "scopednas/scopednas.hpp"
#include "scopednas/workflows.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

struct CommonFlags {
  std::string config_path;
  std::string scope;
  int epochs = -1;
  long long seed = -1;
  std::string preset;
  std::string data_dir;
  std::string out_dir;
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "key=value config file");
  cmd->add_option("--scope", flags.scope, "search scope: s, m, l or f")
      ->check(CLI::IsMember({"s", "m", "l", "f"}));
  cmd->add_option("--epochs", flags.epochs, "epoch budget");
  cmd->add_option("--seed", flags.seed, "run seed");
  cmd->add_option("--preset", flags.preset, "named preset (desk)")
      ->check(CLI::IsMember({"desk"}));
  cmd->add_option("--data-dir", flags.data_dir, "CIFAR-10 binary batch directory");
  cmd->add_option("--out", flags.out_dir, "output directory");
}

// defaults < preset < config file < explicit flags
scopednas::RunConfig resolve_config(const CommonFlags& flags) {
  scopednas::RunConfig cfg;
  if (flags.preset == "desk") scopednas::apply_desk_preset(cfg);
  bool file_set_dataset = false;
  if (!flags.config_path.empty()) {
    const std::string text = scopednas::read_text_file(flags.config_path);
    scopednas::RunConfig probe;
    probe.dataset.clear();
    scopednas::apply_config_text(probe, text);
    file_set_dataset = !probe.dataset.empty();
    scopednas::apply_config_text(cfg, text);
  }
  if (!flags.scope.empty()) cfg.scope = flags.scope;
  if (flags.epochs >= 0) cfg.epochs = flags.epochs;
  if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);
  if (!flags.data_dir.empty()) {
    if (cfg.dataset == "synthetic" && file_set_dataset) {
      throw scopednas::ConfigError(
          "both dataset sources specified: --data-dir together with dataset=synthetic");
    }
    cfg.data_dir = flags.data_dir;
    cfg.dataset = "cifar10";  // --data-dir overrides a preset's synthetic default
  }
  if (!flags.out_dir.empty()) cfg.out_dir = flags.out_dir;
  if (cfg.dataset == "cifar10" && cfg.data_dir.empty()) {
    if (const char* env = std::getenv("SCOPED_DNAS_DATA")) cfg.data_dir = env;
  }
  scopednas::validate(cfg);
  return cfg;
}

int run_search_cmd(const CommonFlags& flags) {
  const scopednas::RunConfig cfg = resolve_config(flags);
  const scopednas::SearchArtifacts artifacts = scopednas::run_search_workflow<float>(cfg);
  const auto& choices = artifacts.result.final_architecture.choices;
  std::cout << "search finished: " << artifacts.result.epochs_run << " epochs, "
            << choices.size() << " search blocks\n";
  std::cout << "final choices:";
  for (const scopednas::CandidateOp& op : choices)
    std::cout << ' ' << scopednas::candidate_label(op.candidate_id);
  std::cout << "\nartifacts written to " << cfg.out_dir << "\n";
  std::cerr << "wall " << artifacts.wall_seconds << " s, supernet "
            << artifacts.supernet_macs << " MACs/image\n";
  return kExitOk;
}

int run_retrain_cmd(const CommonFlags& flags, std::string arch_path) {
  const scopednas::RunConfig cfg = resolve_config(flags);
  if (arch_path.empty()) arch_path = cfg.out_dir + "/final_architecture.json";
  const auto metrics = scopednas::run_retrain_workflow<float>(cfg, arch_path);
  std::cout << "retrain finished: " << metrics.size() << " epochs, final accuracy "
            << (metrics.empty() ? 0.0 : metrics.back().eval_accuracy) << "\n";
  return kExitOk;
}

int run_params_cmd(const std::string& model, long long classes, const std::string& scope,
                   const std::string& mode, bool small_stem, long long input_hw) {
  scopednas::ArchDescription desc = scopednas::build_base_resnet50(classes, small_stem);
  if (model == "supernet") {
    desc = scopednas::build_supernet(desc, scopednas::scope_from_name(scope));
  }
  const scopednas::CountMode count_mode = mode == "all-paths"
                                              ? scopednas::CountMode::all_paths
                                              : scopednas::CountMode::single_path_max;
  const std::int64_t params = scopednas::count_params(desc, count_mode);
  std::cout << params << " (" << scopednas::params_in_millions(params) << ")\n";
  if (input_hw > 0) {
    std::cout << "macs " << scopednas::count_macs(desc, input_hw) << " @" << input_hw << "x"
              << input_hw << "\n";
  }
  return kExitOk;
}

int run_plot_cmd(const std::string& trajectory_path, const std::string& out_dir) {
  const auto written = scopednas::run_plot_workflow(trajectory_path, out_dir);
  for (const std::string& path : written) std::cout << path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scoped-dnas: scope-adaptive differentiable architecture search"};
  app.require_subcommand(1);

  CommonFlags search_flags, retrain_flags;
  std::string arch_path;
  CLI::App* search_cmd = app.add_subcommand("search", "run the bilevel architecture search");
  add_common_flags(search_cmd, search_flags);

  CLI::App* retrain_cmd = app.add_subcommand("retrain", "retrain a discovered architecture");
  add_common_flags(retrain_cmd, retrain_flags);
  retrain_cmd->add_option("--arch", arch_path, "final_architecture.json path");

  std::string params_model = "resnet50", params_scope = "f", params_mode = "single-path-max";
  long long params_classes = 10, params_input_hw = 0;
  bool params_small_stem = false;
  CLI::App* params_cmd = app.add_subcommand("params", "parameter/MAC accounting");
  params_cmd->add_option("--model", params_model, "resnet50 or supernet")
      ->check(CLI::IsMember({"resnet50", "supernet"}));
  params_cmd->add_option("--classes", params_classes, "classifier classes");
  params_cmd->add_option("--scope", params_scope, "supernet scope")
      ->check(CLI::IsMember({"s", "m", "l", "f"}));
  params_cmd->add_option("--mode", params_mode, "search-unit counting mode")
      ->check(CLI::IsMember({"single-path-max", "all-paths"}));
  params_cmd->add_flag("--small-stem", params_small_stem, "use the small-input stem");
  params_cmd->add_option("--input-hw", params_input_hw, "also print MACs at this input size");

  std::string plot_trajectory = "out/trajectory.csv", plot_out = "out";
  CLI::App* plot_cmd = app.add_subcommand("plot", "render trajectory SVGs");
  plot_cmd->add_option("--trajectory", plot_trajectory, "trajectory.csv path");
  plot_cmd->add_option("--out", plot_out, "output directory");

  try {
    app.parse(argc, argv);
    if (search_cmd->parsed()) return run_search_cmd(search_flags);
    if (retrain_cmd->parsed()) return run_retrain_cmd(retrain_flags, arch_path);
    if (params_cmd->parsed()) {
      return run_params_cmd(params_model, params_classes, params_scope, params_mode,
                            params_small_stem, params_input_hw);
    }
    if (plot_cmd->parsed()) return run_plot_cmd(plot_trajectory, plot_out);
    return kExitConfig;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return kExitConfig;
  } catch (const scopednas::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: invalid JSON document: " << e.what() << "\n";
    return kExitConfig;
  } catch (const scopednas::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const scopednas::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitIo;
  } catch (const scopednas::NumericError& e) {
    std::cerr << "numerical divergence: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

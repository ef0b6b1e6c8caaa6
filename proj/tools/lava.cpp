// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "lava/errors.hpp"
#include "lava/train/stages.hpp"

namespace {

constexpr int kConfigExit = 2;
constexpr int kDataExit = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lava: staged semi-supervised training pipeline"};
  app.require_subcommand(1, 1);
  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> resume;
  for (const char* name : {"synth", "pretrain", "adapt", "transfer", "eval", "episodes", "analyze"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "key = value configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "overrides the configured seed");
    sub->add_option("--out", out, "overrides the output directory");
    sub->add_option("--resume", resume, "epoch checkpoint to continue from");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    const auto stage = lava::train::parse_stage(app.get_subcommands().front()->get_name());
    auto cfg = lava::train::load_run_config(stage, config_path);
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.out = out;
    std::optional<std::filesystem::path> resume_path;
    if (resume) resume_path = *resume;
    const auto report = lava::train::run_stage(cfg, resume_path);
    std::cout << report.summary;
    if (!report.checkpoint.empty()) std::cout << "checkpoint = " << report.checkpoint.string() << '\n';
    return 0;
  } catch (const lava::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const lava::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataExit;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

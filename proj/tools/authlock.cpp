#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "authlock/commands.hpp"
#include "authlock/config.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Hardware-fingerprint model locking: implant, attack, certify and report"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_file;
  std::string profile = "desk";
  app.add_option("-c,--config", config_file, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--profile", profile, "Scale preset")->check(CLI::IsMember({"desk", "paper"}));

  auto* implant = app.add_subcommand("implant", "Train a locked classifier");

  auto* attack = app.add_subcommand("attack", "Run a trigger-recovery or finetuning attack");
  std::string mode = "adaptive";
  fs::path checkpoint;
  attack->add_option("--mode", mode, "adaptive | nc | pixel | finetune")
      ->check(CLI::IsMember({"adaptive", "nc", "pixel", "finetune"}));
  attack->add_option("--checkpoint", checkpoint, "Checkpoint manifest (.json)")->required()->check(CLI::ExistingFile);

  auto* certify = app.add_subcommand("certify", "Certify test inputs under randomized smoothing");
  std::optional<fs::path> trigger_dir;
  std::string trigger_prefix;
  certify->add_option("--checkpoint", checkpoint, "Checkpoint manifest (.json)")->required()->check(CLI::ExistingFile);
  certify->add_option("--trigger", trigger_dir, "Directory holding a recovered trigger")->check(CLI::ExistingDirectory);
  certify->add_option("--trigger-prefix", trigger_prefix, "File prefix of the trigger, e.g. class3_");

  auto* report = app.add_subcommand("report", "Merge metrics of several run directories");
  std::vector<fs::path> run_dirs;
  report->add_option("run_dirs", run_dirs, "Run directories")->check(CLI::ExistingDirectory);

  auto* ablate = app.add_subcommand("ablate-sigma", "Sweep the smoothing noise level");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto config = authlock::load_config(config_file, profile);
    if (*implant) return authlock::cmd_implant(config, std::cout);
    if (*attack) return authlock::cmd_attack(config, checkpoint, authlock::parse_attack_mode(mode), std::cout);
    if (*certify) return authlock::cmd_certify(config, checkpoint, trigger_dir, trigger_prefix, std::cout);
    if (*report) return authlock::cmd_report(config, run_dirs, std::cout);
    if (*ablate) return authlock::cmd_ablate_sigma(config, std::cout);
  } catch (const authlock::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

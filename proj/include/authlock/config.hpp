#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "authlock/dataset.hpp"
#include "authlock/error.hpp"
#include "authlock/trigger.hpp"

namespace authlock {

/// Validation failure tied to a dotted config field such as "implant.sigma".
class ConfigError : public InvalidArgument {
 public:
  ConfigError(std::string field, const std::string& what)
      : InvalidArgument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct DatasetConfig {
  std::string name = "synth";  // "synth" | "cifar10"
  /// CIFAR-10 batch directory; empty falls back to $AUTHLOCK_DATA_DIR.
  std::string path;
  SynthParams synth;
  std::size_t subset_size = 0;  // 0 = full train split
  std::size_t test_size = 0;    // 0 = full test split
};

struct TriggerConfig {
  std::string device_id = "device-0";
  std::string challenge = "challenge-0";
  int patch_h = 3;
  int patch_w = 3;
  Location location{0, 0};
};

struct ImplantConfig {
  double lambda_rand = 1.0;
  int epochs = 30;
  double lr = 0.05;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  int batch_size = 64;
  /// Anti-finetuning ascent steps after every epoch (0 disables).
  int harden_steps_per_epoch = 0;
  /// Train an unlocked reference model for acc_baseline and the MI baseline curve.
  bool baseline = false;
  /// Epoch interval of MI measurements (0 disables mi_curve.csv).
  int mi_every = 0;
  std::size_t mi_items = 1000;
};

struct AttackConfig {
  double lambda_reg = 1e-2;
  /// When non-empty the adaptive attack keeps the best acc_reversed over these values.
  std::vector<double> lambda_sweep{1e-3, 1e-2, 1e-1};
  int steps = 1000;
  double lr = 0.1;
  std::uint64_t seed = 0;
  /// Test items used to optimize triggers; the remainder measures acc_reversed.
  std::size_t optimize_items = 1000;
  double pixel_l1 = 1e-3;
  int finetune_samples = 100;
  int finetune_epochs = 10;
  double finetune_lr = 0.01;
};

struct CertifyConfig {
  double sigma = 0.0;  // 0 = use implant.sigma
  bool sigma_override = false;
  int n0 = 100;
  int n = 1000;
  double alpha = 0.001;
  std::size_t max_inputs = 100;
  std::uint64_t seed = 0;
};

struct RunConfig {
  std::string profile = "desk";
  DatasetConfig dataset;
  std::string arch_id = "smallcnn";
  TriggerConfig trigger;
  ImplantConfig implant;
  AttackConfig attack;
  CertifyConfig certify;
  std::vector<double> ablate_sigmas{0.0, 0.25, 0.5, 0.75, 1.0};
  std::string output_dir = "runs";

  /// certify.sigma, defaulting to implant.sigma.
  double certify_sigma() const { return certify.sigma > 0.0 ? certify.sigma : implant.sigma; }
};

/// Preset for "desk" (scaled-down) or "paper" (full-scale) runs.
RunConfig profile_defaults(const std::string& profile);

/// Overlays `j` onto `base`; unknown keys and type mismatches raise ConfigError.
RunConfig merge_config(RunConfig base, const nlohmann::json& j);

/// Throws ConfigError naming the first offending field.
void validate(const RunConfig& config);

nlohmann::json to_json(const RunConfig& config);

/// profile_defaults(profile) overlaid with the file (if any), then validated.
RunConfig load_config(const std::filesystem::path& file, const std::string& profile);

}  // namespace authlock

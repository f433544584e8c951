#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "authlock/analysis.hpp"
#include "authlock/attack.hpp"
#include "authlock/config.hpp"
#include "authlock/dataset.hpp"
#include "authlock/model.hpp"

namespace authlock {

struct LoadedData {
  DataSplit split;
  std::string dataset_id;
  int num_classes = 0;
  Shape shape;
};

/// Synthetic data or CIFAR-10 from dataset.path / $AUTHLOCK_DATA_DIR, with
/// the configured subset sizes applied.
LoadedData load_data(const RunConfig& config);

TriggerSpec trigger_from_config(const RunConfig& config, int channels);

/// Creates a fresh <output_dir>/<command>-<timestamp>[-n] directory.
std::filesystem::path make_run_dir(const std::filesystem::path& root, const std::string& command);

/// The implant pipeline without any file output; used by cmd_implant and the sigma ablation.
struct ImplantOutcome {
  LockedClassifier model;
  MetricsRecord metrics;
  std::optional<MICurve> mi;
};
ImplantOutcome run_implant(const RunConfig& config, const LoadedData& data, std::ostream& log);

/// Test split halves used by attacks: the first optimize_items drive the
/// optimization, the rest measure acc_reversed.
struct AttackSplit {
  std::span<const LabeledImage> optimize;
  std::span<const LabeledImage> eval;
};
AttackSplit attack_split(const RunConfig& config, const LoadedData& data);

/// Adaptive-attack options from config.attack, evaluated at the model's noise level.
AttackOptions attack_options(const RunConfig& config, const LockedClassifier& model);

/// adaptive_attack, or the lambda sweep when config.attack.lambda_sweep is non-empty.
RecoveredTrigger run_adaptive(const RunConfig& config, const LockedClassifier& model, const AttackSplit& split);

/// Single noisy pass at the model's training sigma (none for sigma = 0).
std::optional<NoisePass> evaluation_noise(const LockedClassifier& model, std::uint64_t seed);

struct AblationRow {
  double sigma = 0.0;
  double acc_auth = 0.0;
  double acc_clean = 0.0;
  double acc_reversed = 0.0;
  double gain_att = 0.0;
  /// Smoothed-vote counterparts (abstain counts as wrong) on the first
  /// kSmoothedItems evaluation items; absent for sigma = 0.
  std::optional<double> smoothed_auth;
  std::optional<double> smoothed_clean;
  std::optional<double> smoothed_reversed;
};
inline constexpr std::size_t kSmoothedItems = 200;

/// Implants and attacks once per config.ablate_sigmas entry. Accuracies are
/// single noisy passes at the row's sigma; smoothed votes use certify.n0 and certify.alpha.
std::vector<AblationRow> run_sigma_ablation(const RunConfig& config, const LoadedData& data,
                                            std::ostream& log);

/// Smallest sigma with |gain_att| <= max_gain and acc_auth >= min_auth.
std::optional<AblationRow> calibrate_sigma(std::span<const AblationRow> rows, double max_gain = 0.05,
                                           double min_auth = 0.55);

std::string ablation_csv(std::span<const AblationRow> rows);

enum class AttackMode { Adaptive, NeuralCleanse, Pixel, Finetune };
AttackMode parse_attack_mode(const std::string& mode);

// Subcommands. Each writes into a new run directory and returns the process exit status.
int cmd_implant(const RunConfig& config, std::ostream& out);
int cmd_attack(const RunConfig& config, const std::filesystem::path& checkpoint, AttackMode mode,
               std::ostream& out);
int cmd_certify(const RunConfig& config, const std::filesystem::path& checkpoint,
                const std::optional<std::filesystem::path>& trigger_dir, const std::string& trigger_prefix,
                std::ostream& out);
int cmd_report(const RunConfig& config, std::span<const std::filesystem::path> run_dirs, std::ostream& out);
int cmd_ablate_sigma(const RunConfig& config, std::ostream& out);

}  // namespace authlock

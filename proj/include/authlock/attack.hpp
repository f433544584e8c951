#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "authlock/analysis.hpp"
#include "authlock/dataset.hpp"
#include "authlock/model.hpp"
#include "authlock/trigger.hpp"

namespace authlock {

/// Result of a trigger-recovery attack. Pixel attacks report mask = 1 and
/// pattern = clamp(delta, 0, 1); the perturbation actually applied is `additive`.
struct RecoveredTrigger {
  SoftTrigger soft;
  std::optional<AdditivePerturbation> additive;
  double mask_l1 = 0.0;
  double acc_reversed = 0.0;
  std::optional<int> target_class;
  double target_hit_rate = 0.0;
  int steps_used = 0;
  double lambda_reg = 0.0;
  std::uint64_t seed = 0;
  /// Best full-objective value seen at each checkpoint; never increases.
  std::vector<double> objective_trace;

  InputTrigger as_input_trigger() const;
};

struct AttackOptions {
  double lambda_reg = 1e-2;
  int steps = 1000;
  double lr = 0.1;
  std::uint64_t seed = 0;
  int batch_size = 64;
  /// Steps between full-objective checkpoints.
  int eval_every = 50;
  /// Items of the optimization data used for checkpoint objectives (0 = all).
  std::size_t objective_items = 512;
  /// Post-squash initial mask value.
  double init_mask = 0.05;
  /// Noise used when measuring acc_reversed / hit rate; the optimization itself is noise-free.
  std::optional<NoisePass> eval_noise;
};

/// Recovers (m, pattern) minimizing mean CE against the true labels plus
/// lambda_reg * |m|_1. `data` drives the optimization; acc_reversed is
/// measured on `eval`, which must be disjoint from it.
RecoveredTrigger adaptive_attack(const LockedClassifier& model, std::span<const LabeledImage> data,
                                 std::span<const LabeledImage> eval, const AttackOptions& options);

/// Runs adaptive_attack for each lambda and keeps the highest acc_reversed.
RecoveredTrigger adaptive_attack_sweep(const LockedClassifier& model,
                                       std::span<const LabeledImage> data,
                                       std::span<const LabeledImage> eval, AttackOptions options,
                                       std::span<const double> lambdas);

/// Same machinery as adaptive_attack with every label replaced by target_class.
RecoveredTrigger nc_recover(const LockedClassifier& model, std::span<const LabeledImage> data,
                            std::span<const LabeledImage> eval, int target_class,
                            const AttackOptions& options);

struct AnomalyReport {
  std::vector<double> per_class_l1;
  double anomaly_index = 0.0;
  double threshold = 2.0;
  bool flagged = false;
};

/// |min - median| / (1.4826 * MAD). MAD = 0 yields 0 when all norms are
/// equal and +inf (flagged) otherwise.
AnomalyReport anomaly_index(std::span<const double> per_class_l1, double threshold = 2.0);

struct NeuralCleanseResult {
  std::vector<RecoveredTrigger> per_class;
  AnomalyReport report;
};

/// nc_recover for every class; per-class seeds are options.seed + class.
NeuralCleanseResult neural_cleanse(const LockedClassifier& model, std::span<const LabeledImage> data,
                                   std::span<const LabeledImage> eval, const AttackOptions& options);

/// Targeted full-resolution additive attack: delta = tanh(w), input
/// clamp(x + delta, 0, 1), penalty l1_weight * |delta|_1. options.lambda_reg is ignored.
RecoveredTrigger pixel_attack(const LockedClassifier& model, std::span<const LabeledImage> data,
                              std::span<const LabeledImage> eval, int target_class,
                              double l1_weight, const AttackOptions& options);

struct FinetuneOptions {
  int epochs = 10;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 20;
  std::uint64_t seed = 0;
  std::optional<NoisePass> eval_noise;
};

struct FinetuneResult {
  LockedClassifier model;
  double acc_clean_before = 0.0;
  double acc_clean_after = 0.0;
  double acc_auth_before = 0.0;
  double acc_auth_after = 0.0;
  double delta_acc_clean = 0.0;
  double delta_acc_auth = 0.0;
};

/// Supervised finetuning of all parameters on clean_samples; accuracies are
/// measured on `test` without and with the hardware trigger.
FinetuneResult finetune_attack(const LockedClassifier& model, std::span<const LabeledImage> clean_samples,
                               std::span<const LabeledImage> test, const TriggerSpec& spec,
                               const FinetuneOptions& options);

/// {mask_l1, acc_reversed, steps_used, lambda_reg, seed, ...}.
nlohmann::json summary_json(const RecoveredTrigger& t);
nlohmann::json to_json(const AnomalyReport& r);

/// SoftTrigger file pair plus <prefix>summary.json (and <prefix>delta.bin for pixel attacks).
void save_recovered_trigger(const std::filesystem::path& dir, const RecoveredTrigger& t,
                            const std::string& prefix = "");

}  // namespace authlock

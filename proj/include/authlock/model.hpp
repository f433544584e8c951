#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "authlock/bytes.hpp"
#include "authlock/classifier.hpp"
#include "authlock/dataset.hpp"
#include "authlock/nn.hpp"

namespace authlock {

/// One row of a model's training log.
struct EpochLog {
  int epoch = 0;
  double loss_total = 0.0;
  double loss_auth = 0.0;
  double loss_rand = 0.0;
  double acc_auth = 0.0;
  double acc_clean = 0.0;
};

/// Network builder for the supported architecture ids:
///   "smallcnn" - three conv3x3/ReLU/maxpool blocks (16, 32, 64 channels), a
///                128-unit hidden layer and a linear head; needs H, W divisible by 8
///   "mlp"      - one 64-unit hidden layer and a linear head
///   "linear"   - a single linear layer
nn::Network build_network(std::string_view arch_id, Shape input, int num_classes);

class LockedClassifier final : public Classifier {
 public:
  LockedClassifier(std::string arch_id, Shape input, int num_classes, std::uint64_t init_seed,
                   bool zero_head = false);

  Shape input_shape() const override { return net_.input_shape(); }
  int num_classes() const override { return num_classes_; }
  Logits forward(const Tensor& batch) const override;

  /// Activations of a named tap: "penultimate" (input of the final layer) or
  /// "conv" (flattened output of the last convolution block).
  Matrix features(const Tensor& batch, std::string_view tap = "penultimate") const;
  int feature_width(std::string_view tap = "penultimate") const;

  const std::string& arch_id() const { return arch_id_; }
  nn::Network& network() { return net_; }
  const nn::Network& network() const { return net_; }

  double train_sigma = 0.0;
  Digest trigger_digest{};
  std::uint64_t seed = 0;
  int epochs_trained = 0;
  std::vector<EpochLog> train_log;

 private:
  int tap_layer(std::string_view tap) const;

  std::string arch_id_;
  int num_classes_;
  nn::Network net_;
};

/// Held-out data used to fill acc_auth / acc_clean in the training log.
struct EvalSet {
  const Dataset* clean = nullptr;
  std::optional<TriggerSpec> trigger;
  /// Single noisy pass at this level (0 = noise-free evaluation).
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
  std::size_t max_items = 0;  // 0 = all
};

struct ImplantOptions {
  double lambda_rand = 1.0;
  int epochs = 30;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 64;
  double sigma = 0.0;
  std::uint64_t seed = 0;
  bool resample_rand_labels = false;
  double grad_clip = 5.0;  // global L2 norm, 0 disables
  EvalSet eval;

  /// Interleaved anti-finetuning: after every epoch, `harden_steps_per_epoch`
  /// ascent steps on -CE over `harden_clean` (skipped above the ceiling).
  const Dataset* harden_clean = nullptr;
  int harden_steps_per_epoch = 0;
  double harden_ceiling = 0.0;

  std::function<void(int epoch, const LockedClassifier&)> on_epoch;
};

/// Minimizes (1/N)[sum_auth CE(f(x), y) + lambda * sum_rand CE(f(x), y_rand)]
/// with momentum SGD and a cosine schedule. When sigma > 0 every training
/// input (triggered first) receives fresh Gaussian noise each time it is seen.
LockedClassifier implant(LockedClassifier model, const CompositeDataset& comp,
                         const ImplantOptions& options);

struct HardenOptions {
  int steps = 200;
  double loss_ceiling = 0.0;  // 0 selects 3 ln K
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 64;
  double lambda_rand = 1.0;
  double ascent_weight = 1.0;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Alternates one implant-objective step with one ascent step on the clean
/// cross-entropy; an ascent step is skipped when its batch CE already exceeds
/// loss_ceiling.
LockedClassifier anti_finetune_harden(LockedClassifier model, const CompositeDataset& comp,
                                      std::span<const LabeledImage> clean,
                                      const HardenOptions& options);

struct TrainOptions {
  int epochs = 10;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int batch_size = 64;
  double sigma = 0.0;
  bool cosine = true;
  std::uint64_t seed = 0;
  std::function<void(int epoch, const LockedClassifier&)> on_epoch;
};

/// Plain supervised cross-entropy training of all parameters.
LockedClassifier train_supervised(LockedClassifier model, std::span<const LabeledImage> data,
                                  const TrainOptions& options);

/// Writes weights as model-<hash>.bin plus a model-<hash>.json manifest and
/// returns the manifest path. Names are derived from the weight bytes.
std::filesystem::path save_checkpoint(const std::filesystem::path& dir, const LockedClassifier& model);
LockedClassifier load_checkpoint(const std::filesystem::path& manifest);

std::string train_log_csv(std::span<const EpochLog> log);

}  // namespace authlock

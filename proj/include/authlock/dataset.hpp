#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "authlock/tensor.hpp"
#include "authlock/trigger.hpp"

namespace authlock {

using Rng = std::mt19937_64;

struct LabeledImage {
  Image pixels;
  int label = 0;
};

using Dataset = std::vector<LabeledImage>;

struct DataSplit {
  Dataset train;
  Dataset test;
};

/// Training material for the authority lock. auth_items carry the hardware
/// trigger and true labels; rand_items are clean with a label drawn uniformly
/// from the classes other than rand_true_labels[i].
struct CompositeDataset {
  Dataset auth_items;
  Dataset rand_items;
  std::vector<int> rand_true_labels;
  std::string origin;
  std::uint64_t seed = 0;
  int num_classes = 0;

  /// Draws fresh wrong labels for every rand item.
  void resample_rand_labels(Rng& rng);
};

/// Uniform draw from {0..K-1} minus {true_label}.
int random_wrong_label(int true_label, int num_classes, Rng& rng);

CompositeDataset build_composite(std::span<const LabeledImage> base_train, const TriggerSpec& spec,
                                 int num_classes, std::uint64_t seed, double auth_fraction = 1.0,
                                 std::string origin = "unknown");

Dataset make_authorized_testset(std::span<const LabeledImage> base_test, const TriggerSpec& spec);

/// x + N(0, sigma^2 I), unclipped.
Image gaussian_augment(const Image& x, double sigma, Rng& rng);
void add_gaussian_noise(std::span<float> values, double sigma, Rng& rng);

/// Reads one CIFAR-10 binary batch file (records of 1 label byte + 3072 plane-ordered pixels).
Dataset load_cifar10_batch(const std::filesystem::path& file);

/// Reads data_batch_1..5.bin and test_batch.bin from `dir`.
DataSplit load_cifar10(const std::filesystem::path& dir);

struct SynthParams {
  int n_train = 200;
  int n_test = 200;
  int num_classes = 2;
  Shape shape{3, 32, 32};
  std::uint64_t seed = 0;
  /// Per-pixel noise standard deviation around the class prototype.
  double noise = 0.1;
  /// Blobs per class prototype.
  int blobs = 3;
  /// Maximum per-sample shift of the prototype, in pixels.
  int jitter = 0;
  /// Random class-independent blobs added to every sample.
  int distractors = 0;
};

/// Class-conditional Gaussian-blob images. Labels are assigned round-robin.
DataSplit synth_dataset(const SynthParams& params);

/// Seeded random subset of size min(n, data.size()).
Dataset take_subset(std::span<const LabeledImage> data, std::size_t n, std::uint64_t seed);

std::vector<Image> images_of(std::span<const LabeledImage> data);
std::vector<int> labels_of(std::span<const LabeledImage> data);

}  // namespace authlock

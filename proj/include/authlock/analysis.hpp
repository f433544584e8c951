#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "authlock/classifier.hpp"
#include "authlock/dataset.hpp"
#include "authlock/trigger.hpp"

namespace authlock {

/// Evaluate through one Gaussian-noised copy of each input.
struct NoisePass {
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

/// Fraction of items whose argmax matches the label after applying `trigger`
/// (and optional noise) to the input.
double accuracy(const Classifier& model, std::span<const LabeledImage> data,
                const InputTrigger& trigger = {}, std::optional<NoisePass> noise = {},
                int batch_size = 256);

/// Per-item predictions under the same input transformation as accuracy().
std::vector<int> predictions(const Classifier& model, std::span<const LabeledImage> data,
                             const InputTrigger& trigger = {}, std::optional<NoisePass> noise = {},
                             int batch_size = 256);

/// Net benefit of a recovered trigger: acc_reversed - acc_clean.
double attack_gain(double acc_reversed, double acc_clean);

struct MetricsContext {
  std::string model_id;
  std::string dataset_id;
  double sigma = 0.0;
  std::uint64_t seed = 0;
};

struct MetricsRecord {
  std::optional<double> acc_baseline;
  double acc_auth = 0.0;
  double acc_clean = 0.0;
  std::optional<double> acc_reversed;
  std::optional<double> gain_att;
  MetricsContext context;

  /// Fills gain_att from acc_reversed when absent; throws if an existing gain disagrees.
  void finalize();
};

nlohmann::json to_json(const MetricsRecord& r);
MetricsRecord metrics_from_json(const nlohmann::json& j);

struct ProbeConfig {
  /// 0 = multinomial logistic regression; >0 = one ReLU hidden layer of that width.
  int hidden = 0;
  int epochs = 200;
  double lr = 0.05;
  /// Without decay the probe overfits wide features and the bound collapses to 0.
  double weight_decay = 1e-2;
  double train_fraction = 0.5;
};

/// Variational lower bound I(T;Y) >= H(Y) - CE_probe in bits: a probe is
/// trained on one split of the features, cross-entropy is measured on the
/// other, and the result is clamped to [0, log2 K].
double mi_estimate(const Matrix& features, std::span<const int> labels, const ProbeConfig& probe,
                   std::uint64_t seed);

struct MICurve {
  std::vector<int> epochs;
  std::vector<double> i_auth;
  std::vector<double> i_clean;
  std::vector<double> i_baseline;
  double auc_auth = 0.0;
  double auc_clean = 0.0;

  void compute_auc();
};

/// Trapezoidal integral of (epoch, value) points; epochs must strictly increase.
double mi_curve_auc(std::span<const std::pair<double, double>> curve);

std::string mi_curve_csv(const MICurve& curve);

/// Scores on the top two principal components, sign fixed so the largest
/// absolute loading of each axis is positive.
Matrix project_2d(const Matrix& features);

/// Mean silhouette coefficient of a labelled point cloud (Euclidean).
double silhouette_score(const Matrix& points, std::span<const int> labels);

/// Flat float32 feature matrix plus manifest and labels file.
void export_features(const std::filesystem::path& dir, const Matrix& features,
                     std::span<const int> labels, const std::string& name = "features");

enum class ReportFormat { Markdown, Csv };

std::string render_report(std::span<const MetricsRecord> records, ReportFormat format);

/// RFC-4180 style reader for the CSV files this project writes.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace authlock

#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "authlock/classifier.hpp"
#include "authlock/dataset.hpp"
#include "authlock/trigger.hpp"

namespace authlock {

inline constexpr int kAbstain = -1;

struct CertificationRecord {
  int input_id = 0;
  int prediction = kAbstain;
  double p_a_lower = 0.0;
  double radius = 0.0;
  double sigma = 0.0;
  int n0 = 0;
  int n = 0;
  double alpha = 0.0;

  bool abstained() const { return prediction == kAbstain; }
};

/// One-sided exact (Clopper-Pearson) lower confidence bound at level 1 - alpha
/// on a binomial proportion: the alpha quantile of Beta(k, n - k + 1).
double clopper_pearson_lower(int k, int n, double alpha);

/// Standard normal quantile.
double inverse_normal_cdf(double p);

/// Two-sided exact binomial test p-value of `successes` out of `trials` at p = 1/2.
double binomial_test_half(int successes, int trials);

/// Class vote counts of the base classifier over `num` Gaussian-noised copies
/// of x. Noise is drawn sample by sample from `rng`, so counts do not depend on
/// batch_size.
std::vector<int> sample_noise_counts(const Classifier& model, const Image& x, double sigma, int num,
                                     Rng& rng, int batch_size = 256);

/// Majority vote over n0 noisy samples; abstains unless the top-two binomial
/// test rejects at alpha.
int smoothed_predict(const Classifier& model, const Image& x, double sigma, int n0, double alpha,
                     Rng& rng);

/// Record for a candidate class with the given lower bound: abstains when
/// p_a_lower <= 1/2, otherwise radius = sigma * inverse_normal_cdf(p_a_lower).
CertificationRecord make_certification(int input_id, int candidate, double p_a_lower, double sigma,
                                       int n0, int n, double alpha);

/// Two-phase certification: n0 samples select the candidate, n fresh samples
/// bound its probability.
CertificationRecord certify(const Classifier& model, const Image& x, double sigma, int n0, int n,
                            double alpha, Rng& rng, int input_id = 0);

/// perturbation_l2(x, trigger) < record.radius. Throws on abstained records.
bool check_robustness_condition(const CertificationRecord& record, const Image& x,
                                const SoftTrigger& trigger);

struct RobustnessSummary {
  int total = 0;
  int certified = 0;
  double fraction_inside_radius = 0.0;
  double mean_radius = 0.0;
  double mean_perturbation_l2 = 0.0;
};

/// Aggregates the robustness condition over certified (non-abstained) records.
RobustnessSummary summarize_robustness(std::span<const CertificationRecord> records,
                                       std::span<const Image> inputs, const SoftTrigger& trigger);

nlohmann::json to_json(const RobustnessSummary& s);

/// CSV rows: input_id, prediction, p_a_lower, radius, sigma, n0, n, alpha.
std::string certification_csv(std::span<const CertificationRecord> records);

/// Fraction of items whose smoothed prediction (abstain counts as wrong) is correct.
double smoothed_accuracy(const Classifier& model, std::span<const LabeledImage> data,
                         const InputTrigger& trigger, double sigma, int n0, double alpha,
                         std::uint64_t seed);

}  // namespace authlock

#include "authlock/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "authlock/error.hpp"

namespace authlock {

double clopper_pearson_lower(int k, int n, double alpha) {
  if (n < 1 || k < 0 || k > n) throw InvalidArgument("clopper_pearson_lower: need 0 <= k <= n, n >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("clopper_pearson_lower: alpha must lie in (0, 1)");
  if (k == 0) return 0.0;
  return boost::math::ibeta_inv(static_cast<double>(k), static_cast<double>(n - k + 1), alpha);
}

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("inverse_normal_cdf: p must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

double binomial_test_half(int successes, int trials) {
  if (trials < 0 || successes < 0 || successes > trials) {
    throw InvalidArgument("binomial_test_half: need 0 <= successes <= trials");
  }
  if (trials == 0) return 1.0;
  const boost::math::binomial_distribution<double> dist(trials, 0.5);
  const int lo = std::min(successes, trials - successes);
  // Symmetric at p = 1/2: two-sided p-value is twice the smaller tail.
  const double tail = boost::math::cdf(dist, static_cast<double>(lo));
  return std::min(1.0, 2.0 * tail);
}

std::vector<int> sample_noise_counts(const Classifier& model, const Image& x, double sigma, int num,
                                     Rng& rng, int batch_size) {
  if (!(sigma > 0.0)) throw InvalidArgument("smoothing needs sigma > 0");
  if (num < 0 || batch_size <= 0) throw InvalidArgument("invalid sample count or batch size");
  if (!(x.shape() == model.input_shape())) throw InvalidArgument("input shape does not match the model");
  std::vector<int> counts(static_cast<std::size_t>(model.num_classes()), 0);
  std::normal_distribution<double> normal(0.0, sigma);
  const auto xv = x.values();
  for (int start = 0; start < num; start += batch_size) {
    const int m = std::min(batch_size, num - start);
    Tensor batch(m, x.shape());
    for (int i = 0; i < m; ++i) {
      auto s = batch.sample(i);
      for (std::size_t k = 0; k < s.size(); ++k) s[k] = static_cast<float>(xv[k] + normal(rng));
    }
    for (int c : predict(model, batch)) ++counts[c];
  }
  return counts;
}

namespace {
int top_index(const std::vector<int>& counts) {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}
}  // namespace

int smoothed_predict(const Classifier& model, const Image& x, double sigma, int n0, double alpha,
                     Rng& rng) {
  if (n0 < 1) throw InvalidArgument("smoothed_predict: n0 must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("smoothed_predict: alpha must lie in (0, 1)");
  auto counts = sample_noise_counts(model, x, sigma, n0, rng);
  const int top = top_index(counts);
  const int n_a = counts[top];
  counts[top] = -1;
  const int n_b = std::max(0, counts[top_index(counts)]);
  return binomial_test_half(n_a, n_a + n_b) <= alpha ? top : kAbstain;
}

CertificationRecord make_certification(int input_id, int candidate, double p_a_lower, double sigma,
                                       int n0, int n, double alpha) {
  CertificationRecord r{input_id, kAbstain, p_a_lower, 0.0, sigma, n0, n, alpha};
  if (p_a_lower > 0.5) {
    r.prediction = candidate;
    r.radius = sigma * inverse_normal_cdf(p_a_lower);
  }
  return r;
}

CertificationRecord certify(const Classifier& model, const Image& x, double sigma, int n0, int n,
                            double alpha, Rng& rng, int input_id) {
  if (!(sigma > 0.0) || n0 < 1 || n < 1) throw InvalidArgument("certify: need sigma > 0, n0 >= 1, n >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("certify: alpha must lie in (0, 1)");
  const int candidate = top_index(sample_noise_counts(model, x, sigma, n0, rng));
  const auto counts = sample_noise_counts(model, x, sigma, n, rng);
  return make_certification(input_id, candidate, clopper_pearson_lower(counts[candidate], n, alpha),
                            sigma, n0, n, alpha);
}

bool check_robustness_condition(const CertificationRecord& record, const Image& x,
                                const SoftTrigger& trigger) {
  if (record.abstained()) throw InvalidArgument("robustness condition needs a certified (non-abstained) record");
  return perturbation_l2(x, trigger) < record.radius;
}

RobustnessSummary summarize_robustness(std::span<const CertificationRecord> records,
                                       std::span<const Image> inputs, const SoftTrigger& trigger) {
  if (records.size() != inputs.size()) throw InvalidArgument("record and input counts differ");
  RobustnessSummary s;
  s.total = static_cast<int>(records.size());
  int inside = 0;
  double radius_sum = 0.0, norm_sum = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].abstained()) continue;
    ++s.certified;
    radius_sum += records[i].radius;
    norm_sum += perturbation_l2(inputs[i], trigger);
    inside += check_robustness_condition(records[i], inputs[i], trigger) ? 1 : 0;
  }
  if (s.certified > 0) {
    s.fraction_inside_radius = static_cast<double>(inside) / s.certified;
    s.mean_radius = radius_sum / s.certified;
    s.mean_perturbation_l2 = norm_sum / s.certified;
  }
  return s;
}

nlohmann::json to_json(const RobustnessSummary& s) {
  return {{"total", s.total},
          {"certified", s.certified},
          {"fraction_inside_radius", s.fraction_inside_radius},
          {"mean_radius", s.mean_radius},
          {"mean_perturbation_l2", s.mean_perturbation_l2}};
}

std::string certification_csv(std::span<const CertificationRecord> records) {
  std::ostringstream out;
  out << std::setprecision(17) << "input_id,prediction,p_a_lower,radius,sigma,n0,n,alpha\n";
  for (const auto& r : records) {
    out << r.input_id << ',' << (r.abstained() ? std::string("ABSTAIN") : std::to_string(r.prediction))
        << ',' << r.p_a_lower << ',' << r.radius << ',' << r.sigma << ',' << r.n0 << ',' << r.n << ','
        << r.alpha << '\n';
  }
  return out.str();
}

double smoothed_accuracy(const Classifier& model, std::span<const LabeledImage> data,
                         const InputTrigger& trigger, double sigma, int n0, double alpha,
                         std::uint64_t seed) {
  if (data.empty()) throw InvalidArgument("smoothed_accuracy: empty dataset");
  Rng rng(seed);
  std::size_t correct = 0;
  for (const auto& item : data) {
    Image x = item.pixels;
    apply_trigger_inplace(x.values(), x.shape(), trigger);
    correct += smoothed_predict(model, x, sigma, n0, alpha, rng) == item.label ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace authlock

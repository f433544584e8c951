#include <doctest.h>

#include <cmath>
#include <random>

#include "authlock/error.hpp"
#include "authlock/smoothing.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace authlock;

namespace {

const Shape kTiny{1, 2, 2};

}  // namespace

TEST_CASE("clopper-pearson lower bound matches the bisection oracle for n <= 50") {
  for (int n = 1; n <= 50; ++n) {
    for (int k = 0; k <= n; ++k) {
      for (double alpha : {0.001, 0.05}) {
        CHECK(std::abs(clopper_pearson_lower(k, n, alpha) - oracle::clopper_pearson_lower(k, n, alpha)) <= 1e-6);
      }
    }
  }
}

TEST_CASE("clopper-pearson edge cases") {
  CHECK(std::abs(clopper_pearson_lower(100, 100, 0.001) - std::pow(0.001, 0.01)) <= 1e-9);
  CHECK(clopper_pearson_lower(0, 10, 0.05) == 0.0);
  CHECK_THROWS_AS(clopper_pearson_lower(11, 10, 0.05), InvalidArgument);
  CHECK_THROWS_AS(clopper_pearson_lower(1, 0, 0.05), InvalidArgument);
  CHECK_THROWS_AS(clopper_pearson_lower(1, 10, 0.0), InvalidArgument);
}

TEST_CASE("clopper-pearson is monotone in k and n") {
  for (int k = 1; k < 100; ++k) CHECK(clopper_pearson_lower(k + 1, 100, 0.01) > clopper_pearson_lower(k, 100, 0.01));
  for (int n = 10; n < 100; ++n) CHECK(clopper_pearson_lower(n, n + 1, 0.01) >= clopper_pearson_lower(n - 1, n, 0.01));
}

TEST_CASE("normal quantile") {
  CHECK(std::abs(inverse_normal_cdf(0.975) - 1.959964) <= 1e-6);
  CHECK(inverse_normal_cdf(0.5) == doctest::Approx(0.0).scale(1));
  for (double p : {1e-6, 0.01, 0.3, 0.7, 0.999999}) {
    CHECK(inverse_normal_cdf(p) == doctest::Approx(oracle::inverse_normal_cdf(p)).epsilon(1e-9));
  }
  CHECK_THROWS_AS(inverse_normal_cdf(0.0), InvalidArgument);
  CHECK_THROWS_AS(inverse_normal_cdf(1.0), InvalidArgument);
}

TEST_CASE("two-sided binomial test at one half") {
  CHECK(binomial_test_half(7, 10) == doctest::Approx(0.34375));
  CHECK(binomial_test_half(5, 10) == 1.0);
  CHECK(binomial_test_half(10, 10) == doctest::Approx(2.0 / 1024));
  CHECK(binomial_test_half(0, 0) == 1.0);
  for (int n = 1; n <= 30; ++n) {
    for (int k = 0; k <= n; ++k) {
      const int lo = std::min(k, n - k);
      const double expected = std::min(1.0, 2.0 * (1.0 - oracle::binomial_upper_tail(lo + 1, n, 0.5)));
      CHECK(binomial_test_half(k, n) == doctest::Approx(expected).epsilon(1e-9));
    }
  }
}

TEST_CASE("noise counts do not depend on batch size and are seeded") {
  const fixture::LinearClassifier f(kTiny, 1.0, 0.5);
  const Image x(kTiny, 0.6f);
  Rng a(3), b(3), c(3);
  const auto ca = sample_noise_counts(f, x, 0.5, 1000, a, 1);
  const auto cb = sample_noise_counts(f, x, 0.5, 1000, b, 256);
  const auto cc = sample_noise_counts(f, x, 0.5, 1000, c, 999);
  CHECK(ca == cb);
  CHECK(ca == cc);
  CHECK(ca[0] + ca[1] == 1000);
}

TEST_CASE("constant classifier: radius scales linearly with sigma") {
  const fixture::ConstantClassifier f(kTiny, 3, 2);
  const Image x(kTiny, 0.5f);
  const double alpha = 0.001;
  const int n = 1000;
  const double p_lower = std::pow(alpha, 1.0 / n);
  for (double sigma : {0.12, 0.25, 0.5, 1.0}) {
    Rng rng(1);
    const auto r = certify(f, x, sigma, 100, n, alpha, rng, 7);
    CHECK(r.prediction == 2);
    CHECK(r.input_id == 7);
    CHECK(r.p_a_lower == doctest::Approx(p_lower).epsilon(1e-9));
    CHECK(r.radius == doctest::Approx(sigma * oracle::inverse_normal_cdf(p_lower)).epsilon(1e-9));
  }
  Rng r1(1), r2(1);
  const auto a = certify(f, x, 0.25, 100, n, alpha, r1);
  const auto b = certify(f, x, 0.5, 100, n, alpha, r2);
  CHECK(b.radius == doctest::Approx(2.0 * a.radius).epsilon(1e-12));
}

TEST_CASE("fair coin classifier abstains") {
  const fixture::LinearClassifier f(kTiny, 1.0, 0.5);
  const Image x(kTiny, 0.5f);
  Rng rng(8);
  int abstained = 0;
  for (int t = 0; t < 200; ++t) abstained += smoothed_predict(f, x, 0.5, 100, 0.001, rng) == kAbstain ? 1 : 0;
  CHECK(abstained >= 198);
  int cert_abstain = 0;
  for (int t = 0; t < 50; ++t) cert_abstain += certify(f, x, 0.5, 100, 1000, 0.001, rng).abstained() ? 1 : 0;
  CHECK(cert_abstain >= 48);
}

TEST_CASE("linear classifier: lower bound covers the analytic probability") {
  const double sigma = 0.5;
  const fixture::LinearClassifier f(kTiny, 1.0, 0.3);
  Rng rng(2024);
  std::uniform_real_distribution<double> pos(0.3, 1.5);
  int covered = 0, trials = 2000;
  for (int t = 0; t < trials; ++t) {
    const double x0 = pos(rng);
    const Image x(kTiny, static_cast<float>(x0));
    const auto r = certify(f, x, sigma, 10, 100, 0.001, rng);
    const double p1 = f.p_class1(static_cast<float>(x0), sigma);
    const double truth = r.prediction == 0 ? 1.0 - p1 : p1;
    covered += (r.abstained() || r.p_a_lower <= truth) ? 1 : 0;
  }
  CHECK(static_cast<double>(covered) / trials >= 0.999);
}

TEST_CASE("certification abstains at or below one half") {
  CHECK(make_certification(0, 1, 0.5, 1.0, 10, 10, 0.01).abstained());
  const auto r = make_certification(0, 1, 0.5000001, 1.0, 10, 10, 0.01);
  CHECK(r.prediction == 1);
  CHECK(r.radius > 0.0);
  Rng rng(0);
  const fixture::ConstantClassifier f(kTiny, 2, 0);
  CHECK_THROWS_AS(certify(f, Image(kTiny), 0.0, 10, 10, 0.01, rng), InvalidArgument);
}

TEST_CASE("robustness condition uses a strict inequality and rejects abstentions") {
  const Image x(Shape{1, 1, 1}, 0.0f);
  const SoftTrigger t{Image(Shape{1, 1, 1}, 1.0f), Image(Shape{1, 1, 1}, 0.5f)};
  auto rec = make_certification(0, 0, 0.9, 1.0, 10, 10, 0.01);
  rec.radius = 0.5;
  CHECK_FALSE(check_robustness_condition(rec, x, t));
  rec.radius = 0.5000001;
  CHECK(check_robustness_condition(rec, x, t));
  CHECK_THROWS_AS(check_robustness_condition(make_certification(0, 0, 0.3, 1.0, 10, 10, 0.01), x, t),
                  InvalidArgument);
}

TEST_CASE("robustness condition agrees with a direct norm comparison") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::uniform_real_distribution<double> radius(0.0, 4.0);
  const Shape s{3, 4, 4};
  for (int t = 0; t < 1000; ++t) {
    Image x(s), mask(Shape{1, 4, 4}), pattern(s);
    for (auto& v : x.values()) v = u(rng);
    for (auto& v : mask.values()) v = u(rng) < 0.3f ? u(rng) : 0.0f;
    for (auto& v : pattern.values()) v = u(rng);
    const SoftTrigger trig{mask, pattern};
    auto rec = make_certification(t, 0, 0.99, 1.0, 10, 10, 0.01);
    rec.radius = radius(rng);
    double sq = 0.0;
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) {
          const double m = mask.at(0, i, j);
          const double d = m * (static_cast<double>(pattern.at(c, i, j)) - x.at(c, i, j));
          sq += d * d;
        }
      }
    }
    const double direct = std::sqrt(sq);
    if (std::abs(direct - rec.radius) < 1e-5) continue;
    CHECK(check_robustness_condition(rec, x, trig) == (direct < rec.radius));
  }
}

TEST_CASE("robustness summary and csv") {
  const Image x(Shape{1, 1, 1}, 0.0f);
  const SoftTrigger t{Image(Shape{1, 1, 1}, 1.0f), Image(Shape{1, 1, 1}, 0.5f)};
  auto inside = make_certification(0, 1, 0.99, 1.0, 10, 10, 0.01);
  auto outside = make_certification(1, 1, 0.6, 1.0, 10, 10, 0.01);
  auto none = make_certification(2, 1, 0.4, 1.0, 10, 10, 0.01);
  const std::vector<CertificationRecord> records{inside, outside, none};
  const std::vector<Image> inputs{x, x, x};
  const auto s = summarize_robustness(records, inputs, t);
  CHECK(s.total == 3);
  CHECK(s.certified == 2);
  CHECK(s.fraction_inside_radius == doctest::Approx(0.5));
  CHECK(s.mean_perturbation_l2 == doctest::Approx(0.5));
  const auto csv = certification_csv(records);
  CHECK(csv.rfind("input_id,prediction,p_a_lower,radius,sigma,n0,n,alpha\n", 0) == 0);
  CHECK(csv.find("\n2,ABSTAIN,") != std::string::npos);
}

TEST_CASE("smoothed accuracy of a constant classifier") {
  const fixture::ConstantClassifier f(kTiny, 2, 1);
  Dataset data{{Image(kTiny, 0.1f), 1}, {Image(kTiny, 0.2f), 1}, {Image(kTiny, 0.3f), 0}};
  CHECK(smoothed_accuracy(f, data, {}, 0.25, 100, 0.001, 4) == doctest::Approx(2.0 / 3.0));
}

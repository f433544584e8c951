#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "authlock/error.hpp"
#include "authlock/fingerprint.hpp"
#include "authlock/trigger.hpp"

using namespace authlock;

namespace {

Image random_image(Shape s, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image img(s);
  for (auto& v : img.values()) v = u(rng);
  return img;
}

SoftTrigger random_soft(Shape s, std::mt19937_64& rng) {
  return SoftTrigger{random_image(Shape{1, s.height, s.width}, rng), random_image(s, rng)};
}

TriggerSpec ones_spec(int h, int w, Location loc) {
  return TriggerSpec{TriggerPattern(Image(Shape{1, h, w}, 1.0f)), loc, {}};
}

}  // namespace

TEST_CASE("hw trigger overwrites only the patch") {
  const Image x(Shape{1, 6, 6}, 0.0f);
  const auto out = apply_hw_trigger(x, ones_spec(3, 3, {0, 0}));
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) CHECK(out.at(0, i, j) == ((i < 3 && j < 3) ? 1.0f : 0.0f));
  }
}

TEST_CASE("hw trigger is local and idempotent") {
  std::mt19937_64 rng(1);
  const Shape s{3, 8, 8};
  const auto fp = derive_fingerprint("dev", "ch");
  const auto spec = make_trigger_spec(fp, 3, 3, 3, Location{4, 2});
  const auto x = random_image(s, rng);
  const auto once = apply_hw_trigger(x, spec);
  CHECK(apply_hw_trigger(once, spec) == once);
  for (int c = 0; c < 3; ++c) {
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) {
        const bool inside = i >= 4 && i < 7 && j >= 2 && j < 5;
        if (inside) {
          CHECK(once.at(c, i, j) == spec.pattern.values().at(c, i - 4, j - 2));
        } else {
          CHECK(once.at(c, i, j) == x.at(c, i, j));
        }
      }
    }
  }
}

TEST_CASE("hw trigger out of bounds is rejected") {
  const Image x(Shape{1, 6, 6}, 0.0f);
  CHECK_THROWS_AS(apply_hw_trigger(x, ones_spec(3, 3, {4, 0})), InvalidArgument);
  CHECK_THROWS_AS(apply_hw_trigger(x, ones_spec(3, 3, {-1, 0})), InvalidArgument);
}

TEST_CASE("pattern values outside [0,1] are rejected") {
  CHECK_THROWS_AS(TriggerPattern(Image(Shape{1, 2, 2}, 1.5f)), InvalidArgument);
}

TEST_CASE("soft trigger extreme masks") {
  std::mt19937_64 rng(2);
  const Shape s{3, 5, 5};
  const auto x = random_image(s, rng);
  auto t = random_soft(s, rng);
  std::fill(t.mask.values().begin(), t.mask.values().end(), 0.0f);
  CHECK(apply_soft_trigger(x, t) == x);
  std::fill(t.mask.values().begin(), t.mask.values().end(), 1.0f);
  CHECK(apply_soft_trigger(x, t) == t.pattern);
}

TEST_CASE("soft trigger blend value") {
  const Shape s{2, 3, 3};
  const SoftTrigger t{Image(Shape{1, 3, 3}, 0.5f), Image(s, 0.8f)};
  const auto out = apply_soft_trigger(Image(s, 0.4f), t);
  for (float v : out.values()) CHECK(v == doctest::Approx(0.6f));
}

TEST_CASE("soft trigger shape mismatch is rejected") {
  const Shape s{3, 4, 4};
  const SoftTrigger t{Image(Shape{1, 3, 3}, 0.5f), Image(s, 0.5f)};
  CHECK_THROWS_AS(apply_soft_trigger(Image(s, 0.0f), t), InvalidArgument);
  const SoftTrigger bad{Image(Shape{1, 4, 4}, 1.2f), Image(s, 0.5f)};
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("soft trigger is affine in the input") {
  std::mt19937_64 rng(3);
  const Shape s{3, 6, 6};
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = random_soft(s, rng);
    const auto x1 = random_image(s, rng);
    const auto x2 = random_image(s, rng);
    const float a = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
    Image mix(s);
    for (std::size_t k = 0; k < mix.size(); ++k) mix.values()[k] = a * x1.values()[k] + (1 - a) * x2.values()[k];
    const auto o1 = apply_soft_trigger(x1, t);
    const auto o2 = apply_soft_trigger(x2, t);
    const auto om = apply_soft_trigger(mix, t);
    for (std::size_t k = 0; k < mix.size(); ++k) {
      CHECK(om.values()[k] == doctest::Approx(a * o1.values()[k] + (1 - a) * o2.values()[k]).epsilon(1e-5));
    }
  }
}

TEST_CASE("perturbation_l2 matches a brute-force sum of squares") {
  std::mt19937_64 rng(4);
  const Shape s{3, 7, 7};
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_image(s, rng);
    const auto t = random_soft(s, rng);
    double ss = 0.0;
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 7; ++i) {
        for (int j = 0; j < 7; ++j) {
          const double m = t.mask.at(0, i, j);
          const double d = (1 - m) * x.at(c, i, j) + m * t.pattern.at(c, i, j) - x.at(c, i, j);
          ss += d * d;
        }
      }
    }
    CHECK(perturbation_l2(x, t) == doctest::Approx(std::sqrt(ss)).epsilon(1e-9));
    CHECK(perturbation_l2(x, t) <= std::sqrt(static_cast<double>(s.size())));
  }
}

TEST_CASE("perturbation_l2 and mask_l1 simple cases") {
  const Shape s{3, 4, 4};
  SoftTrigger t{Image(Shape{1, 4, 4}, 0.0f), Image(s, 0.0f)};
  const Image zero(s, 0.0f);
  CHECK(perturbation_l2(zero, t) == 0.0);
  CHECK(mask_l1(t) == 0.0);
  t.mask.at(0, 1, 2) = 1.0f;
  t.pattern.at(1, 1, 2) = 1.0f;
  CHECK(perturbation_l2(zero, t) == 1.0);
  t.mask.at(0, 3, 3) = 1.0f;
  t.mask.at(0, 0, 0) = 1.0f;
  CHECK(mask_l1(t) == 3.0);
}

TEST_CASE("hw trigger equals soft trigger with a binary patch mask") {
  std::mt19937_64 rng(5);
  const Shape s{3, 10, 10};
  const auto spec = make_trigger_spec(derive_fingerprint("d", "c"), 3, 4, 3, Location{5, 6});
  const auto soft = as_soft_trigger(spec, s);
  CHECK(mask_l1(soft) == 12.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = random_image(s, rng);
    CHECK(apply_hw_trigger(x, spec) == apply_soft_trigger(x, soft));
  }
}

TEST_CASE("additive perturbation is clamped") {
  const Shape s{1, 2, 2};
  Image x(s, 0.5f);
  AdditivePerturbation p{Image(s, 0.0f)};
  p.delta.values()[0] = 0.9f;
  p.delta.values()[1] = -0.9f;
  p.delta.values()[2] = 0.1f;
  apply_trigger_inplace(x.values(), s, p);
  CHECK(x.values()[0] == 1.0f);
  CHECK(x.values()[1] == 0.0f);
  CHECK(x.values()[2] == doctest::Approx(0.6f));
  CHECK(x.values()[3] == 0.5f);
}

TEST_CASE("trigger spec round-trips through json and files") {
  const auto spec = make_trigger_spec(derive_fingerprint("dev", "ch"), 3, 3, 3, Location{2, 1});
  const auto back = trigger_spec_from_json(to_json(spec));
  CHECK(back.pattern == spec.pattern);
  CHECK(back.location == spec.location);
  CHECK(back.fingerprint_digest == spec.fingerprint_digest);

  const auto dir = std::filesystem::temp_directory_path() / "authlock_trigger_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  save_trigger_spec(dir / "spec.json", spec);
  CHECK(load_trigger_spec(dir / "spec.json").pattern == spec.pattern);

  std::mt19937_64 rng(6);
  const auto soft = random_soft(Shape{3, 5, 5}, rng);
  save_soft_trigger(dir, soft, "t_");
  const auto loaded = load_soft_trigger(dir, "t_");
  CHECK(loaded.mask == soft.mask);
  CHECK(loaded.pattern == soft.pattern);
  std::filesystem::remove_all(dir);
}

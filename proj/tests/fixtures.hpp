#pragma once

// Analytic classifiers with closed-form smoothed probabilities.

#include <cmath>

#include "authlock/classifier.hpp"
#include "oracles.hpp"

namespace fixture {

using authlock::Logits;
using authlock::Shape;
using authlock::Tensor;

/// Always predicts `label`.
class ConstantClassifier final : public authlock::Classifier {
 public:
  ConstantClassifier(Shape shape, int k, int label) : shape_(shape), k_(k), label_(label) {}
  Shape input_shape() const override { return shape_; }
  int num_classes() const override { return k_; }
  Logits forward(const Tensor& batch) const override {
    Logits out = Logits::Zero(batch.batch, k_);
    for (int i = 0; i < batch.batch; ++i) out(i, label_) = 1.0f;
    return out;
  }

 private:
  Shape shape_;
  int k_;
  int label_;
};

/// Binary classifier: class 1 iff w . x > b, with w = (w0, 0, ...).
/// Under N(0, sigma^2 I) noise, P(class 1) = Phi((w . x - b) / (sigma |w|)).
class LinearClassifier final : public authlock::Classifier {
 public:
  LinearClassifier(Shape shape, double w0, double b) : shape_(shape), w0_(w0), b_(b) {}
  Shape input_shape() const override { return shape_; }
  int num_classes() const override { return 2; }
  Logits forward(const Tensor& batch) const override {
    Logits out = Logits::Zero(batch.batch, 2);
    for (int i = 0; i < batch.batch; ++i) {
      const double score = w0_ * batch.sample(i)[0] - b_;
      out(i, score > 0.0 ? 1 : 0) = 1.0f;
    }
    return out;
  }
  double p_class1(double x0, double sigma) const {
    return oracle::normal_cdf((w0_ * x0 - b_) / (sigma * std::abs(w0_)));
  }

 private:
  Shape shape_;
  double w0_;
  double b_;
};

}  // namespace fixture

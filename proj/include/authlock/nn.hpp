#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "authlock/tensor.hpp"

// Minimal CPU network engine: 3x3 same-padded convolution, ReLU, 2x2 max
// pooling and fully connected layers over NCHW float batches. Parameters live
// in one flat buffer so optimizers and checkpoints treat them uniformly.
namespace authlock::nn {

enum class LayerKind { Conv3x3, Relu, MaxPool2, Linear };

struct LayerSpec {
  LayerKind kind;
  int outputs = 0;  // output channels (conv) or features (linear)
};

class Network {
 public:
  /// Activations recorded by forward() for use by backward().
  struct Tape {
    std::vector<Tensor> inputs;
    std::vector<std::vector<int>> pool_indices;
  };

  Network() = default;
  Network(Shape input, std::vector<LayerSpec> layers);

  /// He-normal weights, zero biases.
  void init(std::uint64_t seed);

  const Shape& input_shape() const { return input_; }
  int num_layers() const { return static_cast<int>(layers_.size()); }
  const LayerSpec& layer(int i) const { return layers_[i]; }
  Shape layer_input_shape(int i) const { return shapes_[i]; }
  Shape output_shape() const { return shapes_.back(); }

  std::span<float> params() { return params_; }
  std::span<const float> params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }
  /// [weights, biases) ranges of layer i in the flat buffer.
  std::size_t weight_offset(int i) const { return offsets_[i]; }
  std::size_t weight_count(int i) const;
  std::size_t bias_count(int i) const;

  /// Runs layers [0, stop) and returns the activation feeding layer `stop`
  /// (stop = -1 runs the whole network).
  Tensor forward(const Tensor& x, Tape* tape = nullptr, int stop = -1) const;

  /// Backpropagates grad_out through the layers recorded in `tape`.
  /// param_grads (accumulated, may be empty) and grad_input (may be null) are optional.
  void backward(const Tape& tape, Tensor grad_out, std::span<float> param_grads,
                Tensor* grad_input) const;

 private:
  Shape input_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> shapes_;  // shapes_[i] = input shape of layer i; back() = output
  std::vector<std::size_t> offsets_;
  AlignedFloats params_;
};

/// Logits view of a network output of shape (N, K, 1, 1).
Logits to_logits(const Tensor& out);
Tensor from_logits(const Logits& logits);

struct LossResult {
  double loss = 0.0;
  Logits grad;                      // d loss / d logits
  std::vector<double> per_sample;   // unweighted cross-entropy per row
};

/// loss = (1/N) sum_i w_i * CE(logits_i, label_i); empty weights means all ones.
template <typename Scalar>
double weighted_cross_entropy(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& logits,
    std::span<const int> labels, std::span<const double> weights,
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>* grad,
    std::vector<double>* per_sample = nullptr) {
  const auto n = logits.rows();
  const auto k = logits.cols();
  if (grad) grad->resize(n, k);
  if (per_sample) per_sample->assign(static_cast<std::size_t>(n), 0.0);
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar mx = logits.row(i).maxCoeff();
    Scalar denom = 0;
    for (Eigen::Index c = 0; c < k; ++c) denom += std::exp(logits(i, c) - mx);
    const Scalar log_z = mx + std::log(denom);
    const double ce = static_cast<double>(log_z - logits(i, labels[i]));
    const double w = weights.empty() ? 1.0 : weights[i];
    total += w * ce;
    if (per_sample) (*per_sample)[i] = ce;
    if (grad) {
      const Scalar scale = static_cast<Scalar>(w / static_cast<double>(n));
      for (Eigen::Index c = 0; c < k; ++c) {
        const Scalar p = std::exp(logits(i, c) - log_z);
        (*grad)(i, c) = scale * (p - (c == labels[i] ? Scalar(1) : Scalar(0)));
      }
    }
  }
  return total / static_cast<double>(n);
}

LossResult cross_entropy(const Logits& logits, std::span<const int> labels,
                         std::span<const double> weights = {});

/// Momentum SGD; L2 weight decay is folded into the gradient.
class Sgd {
 public:
  Sgd(std::size_t size, double momentum, double weight_decay)
      : velocity_(size, 0.0f), momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::span<float> params, std::span<const float> grads, double lr);

 private:
  std::vector<float> velocity_;
  double momentum_;
  double weight_decay_;
};

class Adam {
 public:
  explicit Adam(std::size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(std::span<double> params, std::span<const double> grads, double lr);

 private:
  std::vector<double> m_, v_;
  double beta1_, beta2_, eps_;
  int t_ = 0;
};

/// Cosine-annealed learning rate for step t of total.
double cosine_lr(double base, int t, int total);

}  // namespace authlock::nn

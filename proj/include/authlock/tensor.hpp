#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/StdVector>

namespace authlock {

/// Float buffer aligned for Eigen's vector units. Reductions over Eigen maps
/// peel according to the buffer address, so every buffer that feeds one must
/// be aligned for results to be reproducible.
using AlignedFloats = std::vector<float, Eigen::aligned_allocator<float>>;

/// Image geometry in channel-major (C, H, W) order.
struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::size_t plane() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  bool operator==(const Shape&) const = default;
};

/// Dense CHW float array. Masks are single-channel images.
class Image {
 public:
  Image() = default;
  explicit Image(Shape shape, float fill = 0.0f);
  Image(Shape shape, std::vector<float> values);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }

  float& at(int c, int i, int j) { return values_[index(c, i, j)]; }
  float at(int c, int i, int j) const { return values_[index(c, i, j)]; }

  std::span<float> values() { return values_; }
  std::span<const float> values() const { return values_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int c, int i, int j) const {
    return (static_cast<std::size_t>(c) * shape_.height + i) * shape_.width + j;
  }

  Shape shape_;
  std::vector<float> values_;
};

/// A batch of images stored contiguously as (N, C, H, W).
struct Tensor {
  int batch = 0;
  Shape shape;
  AlignedFloats data;

  Tensor() = default;
  Tensor(int n, Shape s) : batch(n), shape(s), data(static_cast<std::size_t>(n) * s.size(), 0.0f) {}

  std::span<float> sample(int i) {
    return std::span<float>(data).subspan(static_cast<std::size_t>(i) * shape.size(), shape.size());
  }
  std::span<const float> sample(int i) const {
    return std::span<const float>(data).subspan(static_cast<std::size_t>(i) * shape.size(),
                                                shape.size());
  }
};

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-major (N, K) matrix of class scores.
using Logits = Matrix;

/// Stacks images of identical shape into a batch.
Tensor stack(std::span<const Image> images);

/// Index of the largest entry of a logit row; ties go to the lowest index.
int argmax_row(const Logits& logits, int row);

}  // namespace authlock

#pragma once

#include <vector>

#include "authlock/tensor.hpp"

namespace authlock {

/// A K-way classifier over fixed-shape images. forward() must be const and
/// reentrant so frozen models can be queried from several threads.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Shape input_shape() const = 0;
  virtual int num_classes() const = 0;
  virtual Logits forward(const Tensor& batch) const = 0;
};

/// Row-wise argmax of forward(batch), lowest index on ties.
std::vector<int> predict(const Classifier& model, const Tensor& batch);

}  // namespace authlock

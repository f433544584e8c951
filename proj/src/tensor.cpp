#include "authlock/tensor.hpp"

#include <algorithm>

#include "authlock/error.hpp"

namespace authlock {

Image::Image(Shape shape, float fill) : shape_(shape), values_(shape.size(), fill) {}

Image::Image(Shape shape, std::vector<float> values) : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape_.size()) {
    throw InvalidArgument("image value count does not match its shape");
  }
}

Tensor stack(std::span<const Image> images) {
  if (images.empty()) return Tensor{};
  Tensor out(static_cast<int>(images.size()), images.front().shape());
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!(images[i].shape() == out.shape)) throw InvalidArgument("stack: mixed image shapes");
    std::ranges::copy(images[i].values(), out.sample(static_cast<int>(i)).begin());
  }
  return out;
}

int argmax_row(const Logits& logits, int row) {
  int best = 0;
  for (int k = 1; k < logits.cols(); ++k) {
    if (logits(row, k) > logits(row, best)) best = k;
  }
  return best;
}

}  // namespace authlock

#include "authlock/classifier.hpp"

namespace authlock {

std::vector<int> predict(const Classifier& model, const Tensor& batch) {
  const Logits logits = model.forward(batch);
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out[i] = argmax_row(logits, static_cast<int>(i));
  return out;
}

}  // namespace authlock

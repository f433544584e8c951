#include "authlock/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "authlock/error.hpp"

namespace authlock::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

constexpr int kKernel = 3;

// col layout: rows = cin * 9, cols = n * h * w (image-major).
void im2col(const Tensor& x, RowMat& col) {
  const int cin = x.shape.channels, h = x.shape.height, w = x.shape.width;
  const int hw = h * w;
  col.resize(static_cast<Eigen::Index>(cin) * kKernel * kKernel, static_cast<Eigen::Index>(x.batch) * hw);
  for (int ci = 0; ci < cin; ++ci) {
    for (int kh = 0; kh < kKernel; ++kh) {
      for (int kw = 0; kw < kKernel; ++kw) {
        float* row = col.row((ci * kKernel + kh) * kKernel + kw).data();
        for (int n = 0; n < x.batch; ++n) {
          const float* src = x.data.data() + (static_cast<std::size_t>(n) * cin + ci) * hw;
          float* dst = row + static_cast<std::size_t>(n) * hw;
          for (int i = 0; i < h; ++i) {
            const int si = i + kh - 1;
            if (si < 0 || si >= h) {
              std::fill(dst + i * w, dst + (i + 1) * w, 0.0f);
              continue;
            }
            for (int j = 0; j < w; ++j) {
              const int sj = j + kw - 1;
              dst[i * w + j] = (sj < 0 || sj >= w) ? 0.0f : src[si * w + sj];
            }
          }
        }
      }
    }
  }
}

void col2im(const RowMat& col, Tensor& grad) {
  const int cin = grad.shape.channels, h = grad.shape.height, w = grad.shape.width;
  const int hw = h * w;
  std::fill(grad.data.begin(), grad.data.end(), 0.0f);
  for (int ci = 0; ci < cin; ++ci) {
    for (int kh = 0; kh < kKernel; ++kh) {
      for (int kw = 0; kw < kKernel; ++kw) {
        const float* row = col.row((ci * kKernel + kh) * kKernel + kw).data();
        for (int n = 0; n < grad.batch; ++n) {
          float* dst = grad.data.data() + (static_cast<std::size_t>(n) * cin + ci) * hw;
          const float* src = row + static_cast<std::size_t>(n) * hw;
          for (int i = 0; i < h; ++i) {
            const int si = i + kh - 1;
            if (si < 0 || si >= h) continue;
            for (int j = 0; j < w; ++j) {
              const int sj = j + kw - 1;
              if (sj >= 0 && sj < w) dst[si * w + sj] += src[i * w + j];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Network::Network(Shape input, std::vector<LayerSpec> layers)
    : input_(input), layers_(std::move(layers)) {
  if (input.channels <= 0 || input.height <= 0 || input.width <= 0) {
    throw InvalidArgument("network input shape must be positive");
  }
  Shape s = input;
  std::size_t offset = 0;
  for (const auto& l : layers_) {
    shapes_.push_back(s);
    offsets_.push_back(offset);
    switch (l.kind) {
      case LayerKind::Conv3x3:
        offset += static_cast<std::size_t>(l.outputs) * s.channels * kKernel * kKernel + l.outputs;
        s = Shape{l.outputs, s.height, s.width};
        break;
      case LayerKind::Relu:
        break;
      case LayerKind::MaxPool2:
        if (s.height % 2 != 0 || s.width % 2 != 0) {
          throw InvalidArgument("max pooling needs even spatial dimensions");
        }
        s = Shape{s.channels, s.height / 2, s.width / 2};
        break;
      case LayerKind::Linear:
        offset += static_cast<std::size_t>(l.outputs) * s.size() + l.outputs;
        s = Shape{l.outputs, 1, 1};
        break;
    }
  }
  shapes_.push_back(s);
  params_.assign(offset, 0.0f);
}

std::size_t Network::weight_count(int i) const {
  const auto& l = layers_[i];
  const Shape& s = shapes_[i];
  switch (l.kind) {
    case LayerKind::Conv3x3:
      return static_cast<std::size_t>(l.outputs) * s.channels * kKernel * kKernel;
    case LayerKind::Linear:
      return static_cast<std::size_t>(l.outputs) * s.size();
    default:
      return 0;
  }
}

std::size_t Network::bias_count(int i) const {
  const auto k = layers_[i].kind;
  return (k == LayerKind::Conv3x3 || k == LayerKind::Linear) ? layers_[i].outputs : 0;
}

void Network::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::fill(params_.begin(), params_.end(), 0.0f);
  for (int i = 0; i < num_layers(); ++i) {
    const auto wc = weight_count(i);
    if (wc == 0) continue;
    const auto fan_in = wc / static_cast<std::size_t>(layers_[i].outputs);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (std::size_t k = 0; k < wc; ++k) params_[offsets_[i] + k] = static_cast<float>(normal(rng));
  }
}

Tensor Network::forward(const Tensor& x, Tape* tape, int stop) const {
  if (!(x.shape == input_)) throw InvalidArgument("network input shape mismatch");
  const int last = stop < 0 ? num_layers() : std::min(stop, num_layers());
  if (tape) {
    tape->inputs.assign(static_cast<std::size_t>(last), Tensor{});
    tape->pool_indices.assign(static_cast<std::size_t>(last), {});
  }
  Tensor cur = x;
  RowMat col;
  for (int li = 0; li < last; ++li) {
    const auto& l = layers_[li];
    const Shape in = shapes_[li];
    const Shape out_shape = shapes_[li + 1];
    Tensor out(cur.batch, out_shape);
    const float* wts = params_.data() + offsets_[li];
    switch (l.kind) {
      case LayerKind::Conv3x3: {
        im2col(cur, col);
        const int kdim = in.channels * kKernel * kKernel;
        ConstMapMat wmat(wts, l.outputs, kdim);
        RowMat res = wmat * col;  // (cout, n*hw)
        const float* bias = wts + weight_count(li);
        const int hw = in.height * in.width;
        for (int n = 0; n < cur.batch; ++n) {
          for (int co = 0; co < l.outputs; ++co) {
            const float* src = res.row(co).data() + static_cast<std::size_t>(n) * hw;
            float* dst = out.data.data() + (static_cast<std::size_t>(n) * l.outputs + co) * hw;
            for (int k = 0; k < hw; ++k) dst[k] = src[k] + bias[co];
          }
        }
        break;
      }
      case LayerKind::Relu:
        for (std::size_t k = 0; k < cur.data.size(); ++k) out.data[k] = std::max(cur.data[k], 0.0f);
        break;
      case LayerKind::MaxPool2: {
        std::vector<int>* idx = tape ? &tape->pool_indices[li] : nullptr;
        if (idx) idx->assign(out.data.size(), 0);
        const int oh = out_shape.height, ow = out_shape.width, w = in.width;
        for (int n = 0; n < cur.batch; ++n) {
          for (int c = 0; c < in.channels; ++c) {
            const std::size_t ibase = (static_cast<std::size_t>(n) * in.channels + c) * in.plane();
            const std::size_t obase = (static_cast<std::size_t>(n) * in.channels + c) * out_shape.plane();
            for (int i = 0; i < oh; ++i) {
              for (int j = 0; j < ow; ++j) {
                int best = (2 * i) * w + 2 * j;
                for (const int cand : {best + 1, best + w, best + w + 1}) {
                  if (cur.data[ibase + cand] > cur.data[ibase + best]) best = cand;
                }
                out.data[obase + i * ow + j] = cur.data[ibase + best];
                if (idx) (*idx)[obase + i * ow + j] = best;
              }
            }
          }
        }
        break;
      }
      case LayerKind::Linear: {
        const int fin = static_cast<int>(in.size());
        ConstMapMat xin(cur.data.data(), cur.batch, fin);
        ConstMapMat wmat(wts, l.outputs, fin);
        MapMat y(out.data.data(), cur.batch, l.outputs);
        y.noalias() = xin * wmat.transpose();
        Eigen::Map<const Eigen::RowVectorXf> bias(wts + weight_count(li), l.outputs);
        y.rowwise() += bias;
        break;
      }
    }
    if (tape) tape->inputs[li] = std::move(cur);
    cur = std::move(out);
  }
  return cur;
}

void Network::backward(const Tape& tape, Tensor grad, std::span<float> param_grads,
                       Tensor* grad_input) const {
  const int last = static_cast<int>(tape.inputs.size());
  const bool want_params = !param_grads.empty();
  if (want_params && param_grads.size() != params_.size()) {
    throw InvalidArgument("parameter gradient buffer has the wrong size");
  }
  RowMat col;
  for (int li = last - 1; li >= 0; --li) {
    const auto& l = layers_[li];
    const Tensor& x = tape.inputs[li];
    const Shape in = shapes_[li];
    const bool need_input_grad = li > 0 || grad_input != nullptr;
    Tensor gin;
    const float* wts = params_.data() + offsets_[li];
    switch (l.kind) {
      case LayerKind::Conv3x3: {
        const int hw = in.height * in.width;
        const int kdim = in.channels * kKernel * kKernel;
        RowMat gout(l.outputs, static_cast<Eigen::Index>(x.batch) * hw);
        for (int n = 0; n < x.batch; ++n) {
          for (int co = 0; co < l.outputs; ++co) {
            const float* src = grad.data.data() + (static_cast<std::size_t>(n) * l.outputs + co) * hw;
            std::copy(src, src + hw, gout.row(co).data() + static_cast<std::size_t>(n) * hw);
          }
        }
        if (want_params) {
          im2col(x, col);
          MapMat gw(param_grads.data() + offsets_[li], l.outputs, kdim);
          gw.noalias() += gout * col.transpose();
          Eigen::Map<Eigen::VectorXf> gb(param_grads.data() + offsets_[li] + weight_count(li), l.outputs);
          gb += gout.rowwise().sum();
        }
        if (need_input_grad) {
          ConstMapMat wmat(wts, l.outputs, kdim);
          RowMat gcol = wmat.transpose() * gout;
          gin = Tensor(x.batch, in);
          col2im(gcol, gin);
        }
        break;
      }
      case LayerKind::Relu:
        if (need_input_grad) {
          gin = std::move(grad);
          for (std::size_t k = 0; k < gin.data.size(); ++k) {
            if (x.data[k] <= 0.0f) gin.data[k] = 0.0f;
          }
        }
        break;
      case LayerKind::MaxPool2:
        if (need_input_grad) {
          gin = Tensor(x.batch, in);
          const auto& idx = tape.pool_indices[li];
          const Shape out_shape = shapes_[li + 1];
          for (int n = 0; n < x.batch; ++n) {
            for (int c = 0; c < in.channels; ++c) {
              const std::size_t ibase = (static_cast<std::size_t>(n) * in.channels + c) * in.plane();
              const std::size_t obase = (static_cast<std::size_t>(n) * in.channels + c) * out_shape.plane();
              for (std::size_t k = 0; k < out_shape.plane(); ++k) {
                gin.data[ibase + idx[obase + k]] += grad.data[obase + k];
              }
            }
          }
        }
        break;
      case LayerKind::Linear: {
        const int fin = static_cast<int>(in.size());
        ConstMapMat gy(grad.data.data(), x.batch, l.outputs);
        if (want_params) {
          ConstMapMat xin(x.data.data(), x.batch, fin);
          MapMat gw(param_grads.data() + offsets_[li], l.outputs, fin);
          gw.noalias() += gy.transpose() * xin;
          Eigen::Map<Eigen::RowVectorXf> gb(param_grads.data() + offsets_[li] + weight_count(li), l.outputs);
          gb += gy.colwise().sum();
        }
        if (need_input_grad) {
          gin = Tensor(x.batch, in);
          ConstMapMat wmat(wts, l.outputs, fin);
          MapMat gx(gin.data.data(), x.batch, fin);
          gx.noalias() = gy * wmat;
        }
        break;
      }
    }
    if (!need_input_grad) break;
    grad = std::move(gin);
  }
  if (grad_input) *grad_input = std::move(grad);
}

Logits to_logits(const Tensor& out) {
  const auto k = static_cast<Eigen::Index>(out.shape.size());
  return ConstMapMat(out.data.data(), out.batch, k);
}

Tensor from_logits(const Logits& logits) {
  Tensor t(static_cast<int>(logits.rows()), Shape{static_cast<int>(logits.cols()), 1, 1});
  MapMat(t.data.data(), logits.rows(), logits.cols()) = logits;
  return t;
}

LossResult cross_entropy(const Logits& logits, std::span<const int> labels,
                         std::span<const double> weights) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw InvalidArgument("cross_entropy: label count does not match batch size");
  }
  LossResult r;
  r.loss = weighted_cross_entropy<float>(logits, labels, weights, &r.grad, &r.per_sample);
  return r;
}

void Sgd::step(std::span<float> params, std::span<const float> grads, double lr) {
  const auto mu = static_cast<float>(momentum_);
  const auto wd = static_cast<float>(weight_decay_);
  const auto rate = static_cast<float>(lr);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const float g = grads[k] + wd * params[k];
    velocity_[k] = mu * velocity_[k] + g;
    params[k] -= rate * velocity_[k];
  }
}

void Adam::step(std::span<double> params, std::span<const double> grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  for (std::size_t k = 0; k < params.size(); ++k) {
    m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * grads[k];
    v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * grads[k] * grads[k];
    params[k] -= lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + eps_);
  }
}

double cosine_lr(double base, int t, int total) {
  if (total <= 0) return base;
  constexpr double kPi = 3.14159265358979323846;
  return 0.5 * base * (1.0 + std::cos(kPi * static_cast<double>(t) / static_cast<double>(total)));
}

}  // namespace authlock::nn

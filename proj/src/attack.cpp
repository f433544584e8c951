#include "authlock/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "authlock/error.hpp"
#include "authlock/serialize.hpp"

namespace authlock {

namespace {

double squash(double u) { return 0.5 * (std::tanh(u) + 1.0); }
double unsquash(double p) { return std::atanh(std::clamp(2.0 * p - 1.0, -0.999999, 0.999999)); }

/// Blend parameterization: m = squash(u) of shape (1,H,W), pattern = squash(v) of shape (C,H,W).
class BlendParams {
 public:
  BlendParams(Shape shape, double lambda, double init_mask, Rng& rng) : shape_(shape), lambda_(lambda) {
    const std::size_t plane = shape.plane();
    theta_.assign(plane + shape.size(), 0.0);
    std::fill(theta_.begin(), theta_.begin() + static_cast<std::ptrdiff_t>(plane), unsquash(init_mask));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (std::size_t k = plane; k < theta_.size(); ++k) theta_[k] = unsquash(uni(rng));
    refresh();
  }

  std::vector<double>& theta() { return theta_; }

  void refresh() {
    const std::size_t plane = shape_.plane();
    mask_.resize(plane);
    pattern_.resize(shape_.size());
    for (std::size_t k = 0; k < plane; ++k) mask_[k] = static_cast<float>(squash(theta_[k]));
    for (std::size_t k = 0; k < pattern_.size(); ++k) pattern_[k] = static_cast<float>(squash(theta_[plane + k]));
  }

  void apply(std::span<float> x) const {
    const std::size_t plane = shape_.plane();
    for (int c = 0; c < shape_.channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t k = c * plane + p;
        x[k] = (1.0f - mask_[p]) * x[k] + mask_[p] * pattern_[k];
      }
    }
  }

  double penalty() const {
    double s = 0.0;
    for (float m : mask_) s += m;
    return lambda_ * s;
  }

  /// Adds d objective / d theta for one clean sample given d CE / d input.
  void accumulate(std::span<const float> x, std::span<const float> gin, std::vector<double>& grad) const {
    const std::size_t plane = shape_.plane();
    for (int c = 0; c < shape_.channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t k = c * plane + p;
        grad[p] += static_cast<double>(gin[k]) * (pattern_[k] - x[k]);
        grad[plane + k] += static_cast<double>(gin[k]) * mask_[p];
      }
    }
  }

  /// Adds the penalty gradient and chains through the squashing map.
  void finish(std::vector<double>& grad) const {
    const std::size_t plane = shape_.plane();
    for (std::size_t p = 0; p < plane; ++p) grad[p] += lambda_;
    for (std::size_t k = 0; k < grad.size(); ++k) {
      const double t = std::tanh(theta_[k]);
      grad[k] *= 0.5 * (1.0 - t * t);
    }
  }

  RecoveredTrigger result() const {
    RecoveredTrigger r;
    r.soft.mask = Image(Shape{1, shape_.height, shape_.width}, mask_);
    r.soft.pattern = Image(shape_, pattern_);
    return r;
  }

 private:
  Shape shape_;
  double lambda_;
  std::vector<double> theta_;
  std::vector<float> mask_;
  std::vector<float> pattern_;
};

/// Additive parameterization: delta = tanh(w), input clamp(x + delta, 0, 1).
class AdditiveParams {
 public:
  AdditiveParams(Shape shape, double l1_weight, Rng& rng) : shape_(shape), l1_(l1_weight) {
    theta_.resize(shape.size());
    std::normal_distribution<double> normal(0.0, 1e-3);
    for (auto& w : theta_) w = normal(rng);
    refresh();
  }

  std::vector<double>& theta() { return theta_; }

  void refresh() {
    delta_.resize(theta_.size());
    for (std::size_t k = 0; k < theta_.size(); ++k) delta_[k] = static_cast<float>(std::tanh(theta_[k]));
  }

  void apply(std::span<float> x) const {
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = std::clamp(x[k] + delta_[k], 0.0f, 1.0f);
  }

  double penalty() const {
    double s = 0.0;
    for (float d : delta_) s += std::abs(d);
    return l1_ * s;
  }

  void accumulate(std::span<const float> x, std::span<const float> gin, std::vector<double>& grad) const {
    for (std::size_t k = 0; k < x.size(); ++k) {
      const float v = x[k] + delta_[k];
      if (v > 0.0f && v < 1.0f) grad[k] += gin[k];
    }
  }

  void finish(std::vector<double>& grad) const {
    for (std::size_t k = 0; k < grad.size(); ++k) {
      const double d = delta_[k];
      const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      grad[k] = (grad[k] + l1_ * sign) * (1.0 - d * d);
    }
  }

  RecoveredTrigger result() const {
    RecoveredTrigger r;
    const Shape plane{1, shape_.height, shape_.width};
    r.soft.mask = Image(plane, 1.0f);
    std::vector<float> pattern(delta_.size());
    for (std::size_t k = 0; k < pattern.size(); ++k) pattern[k] = std::clamp(delta_[k], 0.0f, 1.0f);
    r.soft.pattern = Image(shape_, std::move(pattern));
    r.additive = AdditivePerturbation{Image(shape_, delta_)};
    return r;
  }

 private:
  Shape shape_;
  double l1_;
  std::vector<double> theta_;
  std::vector<float> delta_;
};

void validate_attack_inputs(const LockedClassifier& model, std::span<const LabeledImage> data,
                            std::span<const LabeledImage> eval, const AttackOptions& o) {
  if (data.empty()) throw InvalidArgument("attack: empty optimization data");
  if (eval.empty()) throw InvalidArgument("attack: empty evaluation data");
  if (o.steps < 0 || o.batch_size <= 0 || o.eval_every <= 0 || !(o.lr > 0.0)) {
    throw InvalidArgument("attack: invalid steps, batch size, checkpoint interval or learning rate");
  }
  if (!(o.lambda_reg >= 0.0)) throw InvalidArgument("attack: lambda_reg must be non-negative");
  if (!(data.front().pixels.shape() == model.input_shape())) {
    throw InvalidArgument("attack: data shape does not match the model input");
  }
}

Tensor build_batch(std::span<const LabeledImage> data, std::span<const std::size_t> idx, Shape shape) {
  Tensor x(static_cast<int>(idx.size()), shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::ranges::copy(data[idx[i]].pixels.values(), x.sample(static_cast<int>(i)).begin());
  }
  return x;
}

template <typename Params>
double full_objective(const LockedClassifier& model, std::span<const LabeledImage> data,
                      std::span<const int> labels, const Params& params) {
  const Shape shape = model.input_shape();
  double total = 0.0;
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t end = std::min(data.size(), start + kChunk);
    idx.clear();
    for (std::size_t k = start; k < end; ++k) idx.push_back(k);
    Tensor x = build_batch(data, idx, shape);
    for (int i = 0; i < x.batch; ++i) params.apply(x.sample(i));
    const double mean = nn::weighted_cross_entropy<float>(model.forward(x), labels.subspan(start, end - start),
                                                          {}, nullptr);
    total += mean * static_cast<double>(end - start);
  }
  return total / static_cast<double>(data.size()) + params.penalty();
}

/// Adam over the squashed parameters with best-by-objective tracking.
template <typename Params>
RecoveredTrigger optimize(const LockedClassifier& model, std::span<const LabeledImage> data,
                          std::span<const int> labels, Params params, const AttackOptions& o, Rng& rng) {
  const auto& net = model.network();
  const Shape shape = model.input_shape();
  const std::size_t n_obj =
      o.objective_items == 0 ? data.size() : std::min(o.objective_items, data.size());
  const auto obj_data = data.first(n_obj);
  const auto obj_labels = labels.first(n_obj);

  auto check = [](double v) {
    if (!std::isfinite(v)) throw AttackFailure("trigger optimization produced a non-finite objective");
    return v;
  };
  std::vector<double> best_theta = params.theta();
  double best = check(full_objective(model, obj_data, obj_labels, params));
  std::vector<double> trace{best};

  nn::Adam adam(params.theta().size());
  std::vector<double> grad(params.theta().size());
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  std::vector<std::size_t> idx(static_cast<std::size_t>(o.batch_size));
  std::vector<int> batch_labels(idx.size());
  for (int step = 1; step <= o.steps; ++step) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      idx[i] = pick(rng);
      batch_labels[i] = labels[idx[i]];
    }
    const Tensor clean = build_batch(data, idx, shape);
    Tensor x = clean;
    for (int i = 0; i < x.batch; ++i) params.apply(x.sample(i));
    nn::Network::Tape tape;
    const Tensor out = net.forward(x, &tape);
    Logits g;
    check(nn::weighted_cross_entropy<float>(nn::to_logits(out), batch_labels, {}, &g));
    Tensor gin;
    net.backward(tape, nn::from_logits(g), {}, &gin);
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int i = 0; i < x.batch; ++i) params.accumulate(clean.sample(i), gin.sample(i), grad);
    params.finish(grad);
    adam.step(params.theta(), grad, o.lr);
    params.refresh();

    if (step % o.eval_every == 0 || step == o.steps) {
      const double v = check(full_objective(model, obj_data, obj_labels, params));
      if (v < best) {
        best = v;
        best_theta = params.theta();
      }
      trace.push_back(best);
    }
  }
  params.theta() = best_theta;
  params.refresh();
  RecoveredTrigger r = params.result();
  r.objective_trace = std::move(trace);
  r.steps_used = o.steps;
  r.seed = o.seed;
  r.mask_l1 = mask_l1(r.soft);
  return r;
}

void measure(const LockedClassifier& model, std::span<const LabeledImage> eval, const AttackOptions& o,
             RecoveredTrigger& r) {
  const InputTrigger trig = r.as_input_trigger();
  r.acc_reversed = accuracy(model, eval, trig, o.eval_noise);
  if (r.target_class) {
    const auto pred = predictions(model, eval, trig, o.eval_noise);
    const auto hits = std::ranges::count(pred, *r.target_class);
    r.target_hit_rate = static_cast<double>(hits) / static_cast<double>(pred.size());
  }
}

void check_target(const LockedClassifier& model, int target_class) {
  if (target_class < 0 || target_class >= model.num_classes()) {
    throw InvalidArgument("target class " + std::to_string(target_class) + " is outside [0, K)");
  }
}

double median(std::vector<double> v) {
  std::ranges::sort(v);
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

InputTrigger RecoveredTrigger::as_input_trigger() const {
  if (additive) return *additive;
  return soft;
}

RecoveredTrigger adaptive_attack(const LockedClassifier& model, std::span<const LabeledImage> data,
                                 std::span<const LabeledImage> eval, const AttackOptions& o) {
  validate_attack_inputs(model, data, eval, o);
  Rng rng(o.seed);
  const auto labels = labels_of(data);
  BlendParams params(model.input_shape(), o.lambda_reg, o.init_mask, rng);
  RecoveredTrigger r = optimize(model, data, labels, std::move(params), o, rng);
  r.lambda_reg = o.lambda_reg;
  measure(model, eval, o, r);
  return r;
}

RecoveredTrigger adaptive_attack_sweep(const LockedClassifier& model, std::span<const LabeledImage> data,
                                       std::span<const LabeledImage> eval, AttackOptions o,
                                       std::span<const double> lambdas) {
  if (lambdas.empty()) throw InvalidArgument("adaptive_attack_sweep: no lambda values");
  std::optional<RecoveredTrigger> best;
  for (double lambda : lambdas) {
    o.lambda_reg = lambda;
    auto r = adaptive_attack(model, data, eval, o);
    if (!best || r.acc_reversed > best->acc_reversed) best = std::move(r);
  }
  return *best;
}

RecoveredTrigger nc_recover(const LockedClassifier& model, std::span<const LabeledImage> data,
                            std::span<const LabeledImage> eval, int target_class,
                            const AttackOptions& o) {
  validate_attack_inputs(model, data, eval, o);
  check_target(model, target_class);
  Rng rng(o.seed);
  const std::vector<int> labels(data.size(), target_class);
  BlendParams params(model.input_shape(), o.lambda_reg, o.init_mask, rng);
  RecoveredTrigger r = optimize(model, data, labels, std::move(params), o, rng);
  r.lambda_reg = o.lambda_reg;
  r.target_class = target_class;
  measure(model, eval, o, r);
  return r;
}

AnomalyReport anomaly_index(std::span<const double> norms, double threshold) {
  if (norms.size() < 2) throw InvalidArgument("anomaly_index needs at least two values");
  for (double v : norms) {
    if (!(v >= 0.0)) throw InvalidArgument("anomaly_index: norms must be non-negative");
  }
  AnomalyReport r;
  r.per_class_l1.assign(norms.begin(), norms.end());
  r.threshold = threshold;
  const double med = median(r.per_class_l1);
  std::vector<double> dev;
  dev.reserve(norms.size());
  for (double v : norms) dev.push_back(std::abs(v - med));
  const double mad = median(dev);
  const double lo = *std::ranges::min_element(norms);
  const double hi = *std::ranges::max_element(norms);
  if (mad == 0.0) {
    r.anomaly_index = lo == hi ? 0.0 : std::numeric_limits<double>::infinity();
  } else {
    r.anomaly_index = std::abs(lo - med) / (1.4826 * mad);
  }
  r.flagged = r.anomaly_index > threshold;
  return r;
}

NeuralCleanseResult neural_cleanse(const LockedClassifier& model, std::span<const LabeledImage> data,
                                   std::span<const LabeledImage> eval, const AttackOptions& options) {
  NeuralCleanseResult res;
  std::vector<double> norms;
  for (int k = 0; k < model.num_classes(); ++k) {
    AttackOptions o = options;
    o.seed = options.seed + static_cast<std::uint64_t>(k);
    res.per_class.push_back(nc_recover(model, data, eval, k, o));
    norms.push_back(res.per_class.back().mask_l1);
  }
  res.report = anomaly_index(norms);
  return res;
}

RecoveredTrigger pixel_attack(const LockedClassifier& model, std::span<const LabeledImage> data,
                              std::span<const LabeledImage> eval, int target_class, double l1_weight,
                              const AttackOptions& o) {
  validate_attack_inputs(model, data, eval, o);
  check_target(model, target_class);
  if (!(l1_weight >= 0.0)) throw InvalidArgument("pixel_attack: l1_weight must be non-negative");
  Rng rng(o.seed);
  const std::vector<int> labels(data.size(), target_class);
  AdditiveParams params(model.input_shape(), l1_weight, rng);
  RecoveredTrigger r = optimize(model, data, labels, std::move(params), o, rng);
  r.lambda_reg = l1_weight;
  r.target_class = target_class;
  measure(model, eval, o, r);
  return r;
}

FinetuneResult finetune_attack(const LockedClassifier& model, std::span<const LabeledImage> clean_samples,
                               std::span<const LabeledImage> test, const TriggerSpec& spec,
                               const FinetuneOptions& o) {
  if (clean_samples.empty()) throw InvalidArgument("finetune_attack: empty sample set");
  if (test.empty()) throw InvalidArgument("finetune_attack: empty test set");
  TrainOptions t;
  t.epochs = o.epochs;
  t.lr = o.lr;
  t.momentum = o.momentum;
  t.weight_decay = o.weight_decay;
  t.batch_size = o.batch_size;
  t.cosine = false;
  t.seed = o.seed;
  FinetuneResult r{train_supervised(model, clean_samples, t)};
  r.acc_clean_before = accuracy(model, test, {}, o.eval_noise);
  r.acc_auth_before = accuracy(model, test, spec, o.eval_noise);
  r.acc_clean_after = accuracy(r.model, test, {}, o.eval_noise);
  r.acc_auth_after = accuracy(r.model, test, spec, o.eval_noise);
  r.delta_acc_clean = r.acc_clean_after - r.acc_clean_before;
  r.delta_acc_auth = r.acc_auth_after - r.acc_auth_before;
  return r;
}

nlohmann::json summary_json(const RecoveredTrigger& t) {
  nlohmann::json j = {{"mask_l1", t.mask_l1},
                      {"acc_reversed", t.acc_reversed},
                      {"steps_used", t.steps_used},
                      {"lambda_reg", t.lambda_reg},
                      {"seed", t.seed},
                      {"kind", t.additive ? "additive" : "blend"},
                      {"objective_trace", t.objective_trace}};
  if (t.target_class) {
    j["target_class"] = *t.target_class;
    j["target_hit_rate"] = t.target_hit_rate;
  }
  return j;
}

nlohmann::json to_json(const AnomalyReport& r) {
  const double idx = r.anomaly_index;
  return {{"per_class_l1", r.per_class_l1},
          {"anomaly_index", std::isfinite(idx) ? nlohmann::json(idx) : nlohmann::json("inf")},
          {"threshold", r.threshold},
          {"flagged", r.flagged}};
}

void save_recovered_trigger(const std::filesystem::path& dir, const RecoveredTrigger& t,
                            const std::string& prefix) {
  save_soft_trigger(dir, t.soft, prefix);
  if (t.additive) io::write_f32(dir / (prefix + "delta.bin"), t.additive->delta.values());
  io::write_json(dir / (prefix + "summary.json"), summary_json(t));
}

}  // namespace authlock

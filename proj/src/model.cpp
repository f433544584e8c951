#include "authlock/model.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "authlock/analysis.hpp"
#include "authlock/error.hpp"
#include "authlock/serialize.hpp"

namespace authlock {

using nn::LayerKind;
using nn::LayerSpec;

nn::Network build_network(std::string_view arch_id, Shape input, int num_classes) {
  if (num_classes < 2) throw InvalidArgument("a classifier needs at least two classes");
  if (arch_id == "smallcnn") {
    if (input.height % 8 != 0 || input.width % 8 != 0) {
      throw InvalidArgument("smallcnn needs input height and width divisible by 8");
    }
    return nn::Network(input, {{LayerKind::Conv3x3, 16}, {LayerKind::Relu}, {LayerKind::MaxPool2},
                               {LayerKind::Conv3x3, 32}, {LayerKind::Relu}, {LayerKind::MaxPool2},
                               {LayerKind::Conv3x3, 64}, {LayerKind::Relu}, {LayerKind::MaxPool2},
                               {LayerKind::Linear, 128}, {LayerKind::Relu},
                               {LayerKind::Linear, num_classes}});
  }
  if (arch_id == "mlp") {
    return nn::Network(input, {{LayerKind::Linear, 64}, {LayerKind::Relu}, {LayerKind::Linear, num_classes}});
  }
  if (arch_id == "linear") return nn::Network(input, {{LayerKind::Linear, num_classes}});
  throw InvalidArgument("unknown architecture id '" + std::string(arch_id) + "'");
}

LockedClassifier::LockedClassifier(std::string arch_id, Shape input, int num_classes,
                                   std::uint64_t init_seed, bool zero_head)
    : seed(init_seed),
      arch_id_(std::move(arch_id)),
      num_classes_(num_classes),
      net_(build_network(arch_id_, input, num_classes)) {
  net_.init(init_seed);
  if (zero_head) {
    const int last = net_.num_layers() - 1;
    auto p = net_.params().subspan(net_.weight_offset(last), net_.weight_count(last) + net_.bias_count(last));
    std::fill(p.begin(), p.end(), 0.0f);
  }
}

Logits LockedClassifier::forward(const Tensor& batch) const {
  if (!(batch.shape == net_.input_shape())) {
    throw InvalidArgument("batch shape does not match the model input");
  }
  return nn::to_logits(net_.forward(batch));
}

int LockedClassifier::tap_layer(std::string_view tap) const {
  if (tap == "penultimate") return net_.num_layers() - 1;
  if (tap == "conv") {
    for (int i = 0; i < net_.num_layers(); ++i) {
      if (net_.layer(i).kind == LayerKind::Linear) {
        if (i == 0) break;
        return i;
      }
    }
    throw InvalidArgument("architecture '" + arch_id_ + "' has no convolutional feature tap");
  }
  throw InvalidArgument("unknown feature tap '" + std::string(tap) + "'");
}

Matrix LockedClassifier::features(const Tensor& batch, std::string_view tap) const {
  if (!(batch.shape == net_.input_shape())) {
    throw InvalidArgument("batch shape does not match the model input");
  }
  const Tensor act = net_.forward(batch, nullptr, tap_layer(tap));
  return Eigen::Map<const Matrix>(act.data.data(), act.batch, static_cast<Eigen::Index>(act.shape.size()));
}

int LockedClassifier::feature_width(std::string_view tap) const {
  return static_cast<int>(net_.layer_input_shape(tap_layer(tap)).size());
}

namespace {

struct WeightedItem {
  const Image* x;
  int label;
  double weight;
};

/// Owns the optimizer state and gradient buffer of one training sequence.
class Trainer {
 public:
  Trainer(LockedClassifier& model, double momentum, double weight_decay, double clip,
          std::uint64_t noise_seed)
      : model_(model),
        sgd_(model.network().param_count(), momentum, weight_decay),
        grads_(model.network().param_count()),
        clip_(clip),
        noise_rng_(noise_seed) {}

  struct StepResult {
    double loss = 0.0;
    std::vector<double> per_sample;
    bool applied = false;
  };

  /// direction = +1 descends the weighted CE, -1 ascends it. Ascent is
  /// skipped when the batch CE already exceeds `ceiling`.
  StepResult step(std::span<const WeightedItem> batch, double lr, double sigma, double direction = 1.0,
                  double ceiling = std::numeric_limits<double>::infinity()) {
    auto& net = model_.network();
    const Shape shape = net.input_shape();
    Tensor x(static_cast<int>(batch.size()), shape);
    std::vector<int> labels(batch.size());
    std::vector<double> weights(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      std::ranges::copy(batch[i].x->values(), x.sample(static_cast<int>(i)).begin());
      labels[i] = batch[i].label;
      weights[i] = batch[i].weight;
    }
    if (sigma > 0.0) add_gaussian_noise(x.data, sigma, noise_rng_);

    nn::Network::Tape tape;
    const Tensor out = net.forward(x, &tape);
    StepResult r;
    Logits grad;
    r.loss = nn::weighted_cross_entropy<float>(nn::to_logits(out), labels, weights, &grad, &r.per_sample);
    if (!std::isfinite(r.loss)) return r;
    if (direction < 0.0 && r.loss > ceiling) return r;
    if (direction != 1.0) grad *= static_cast<float>(direction);

    std::fill(grads_.begin(), grads_.end(), 0.0f);
    net.backward(tape, nn::from_logits(grad), grads_, nullptr);
    if (clip_ > 0.0) {
      double norm2 = 0.0;
      for (float g : grads_) norm2 += static_cast<double>(g) * g;
      const double norm = std::sqrt(norm2);
      if (norm > clip_) {
        const auto scale = static_cast<float>(clip_ / norm);
        for (auto& g : grads_) g *= scale;
      }
    }
    sgd_.step(net.params(), grads_, lr);
    r.applied = true;
    return r;
  }

 private:
  LockedClassifier& model_;
  nn::Sgd sgd_;
  AlignedFloats grads_;
  double clip_;
  Rng noise_rng_;
};

std::vector<WeightedItem> composite_items(const CompositeDataset& comp, double lambda_rand) {
  std::vector<WeightedItem> items;
  items.reserve(comp.auth_items.size() + comp.rand_items.size());
  for (const auto& it : comp.auth_items) items.push_back({&it.pixels, it.label, 1.0});
  for (const auto& it : comp.rand_items) items.push_back({&it.pixels, it.label, lambda_rand});
  return items;
}

void validate_composite(const CompositeDataset& comp, const LockedClassifier& model) {
  if (comp.auth_items.empty() && comp.rand_items.empty()) {
    throw InvalidArgument("composite dataset is empty");
  }
  if (comp.num_classes != model.num_classes()) {
    throw InvalidArgument("composite dataset class count differs from the model's");
  }
  if (comp.rand_true_labels.size() != comp.rand_items.size()) {
    throw InvalidArgument("composite dataset is missing true labels of rand items");
  }
}

void fill_eval(EpochLog& row, const LockedClassifier& model, const EvalSet& eval) {
  if (eval.clean == nullptr || eval.clean->empty()) {
    row.acc_auth = row.acc_clean = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  std::span<const LabeledImage> data(*eval.clean);
  if (eval.max_items > 0 && eval.max_items < data.size()) data = data.first(eval.max_items);
  std::optional<NoisePass> noise;
  if (eval.noise_sigma > 0.0) noise = NoisePass{eval.noise_sigma, eval.noise_seed};
  row.acc_clean = accuracy(model, data, {}, noise);
  row.acc_auth = eval.trigger ? accuracy(model, data, *eval.trigger, noise)
                              : std::numeric_limits<double>::quiet_NaN();
}

std::vector<WeightedItem> clean_items(std::span<const LabeledImage> clean) {
  std::vector<WeightedItem> items;
  items.reserve(clean.size());
  for (const auto& it : clean) items.push_back({&it.pixels, it.label, 1.0});
  return items;
}

std::vector<WeightedItem> draw_batch(std::span<const WeightedItem> items, int batch_size, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, items.size() - 1);
  std::vector<WeightedItem> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) batch.push_back(items[pick(rng)]);
  return batch;
}

}  // namespace

LockedClassifier implant(LockedClassifier model, const CompositeDataset& comp,
                         const ImplantOptions& o) {
  validate_composite(comp, model);
  if (!(o.lambda_rand > 0.0)) throw InvalidArgument("lambda_rand must be positive");
  if (o.epochs < 0 || o.batch_size <= 0 || !(o.lr > 0.0)) {
    throw InvalidArgument("implant: epochs, batch size and learning rate must be positive");
  }
  if (!(o.sigma >= 0.0)) throw InvalidArgument("implant: sigma must be non-negative");

  CompositeDataset working = comp;
  Rng order_rng(o.seed);
  Rng label_rng(o.seed ^ 0x51ed270b2f3c9a11ULL);
  Rng harden_rng(o.seed ^ 0x2545f4914f6cdd1dULL);
  Trainer trainer(model, o.momentum, o.weight_decay, o.grad_clip, o.seed ^ 0x6a09e667f3bcc909ULL);
  const auto harden_pool =
      o.harden_clean ? clean_items(*o.harden_clean) : std::vector<WeightedItem>{};
  const double ceiling = o.harden_ceiling > 0.0 ? o.harden_ceiling : 3.0 * std::log(model.num_classes());

  model.train_sigma = o.sigma;
  model.seed = o.seed;
  for (int epoch = 0; epoch < o.epochs; ++epoch) {
    if (o.resample_rand_labels && epoch > 0) working.resample_rand_labels(label_rng);
    auto items = composite_items(working, o.lambda_rand);
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);

    const double lr = nn::cosine_lr(o.lr, epoch, o.epochs);
    double sum_auth = 0.0, sum_rand = 0.0, sum_total = 0.0;
    std::size_t n_auth = 0, n_rand = 0, n_batches = 0;
    std::vector<WeightedItem> batch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(o.batch_size)) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(o.batch_size));
      for (std::size_t k = start; k < end; ++k) batch.push_back(items[order[k]]);
      const auto r = trainer.step(batch, lr, o.sigma);
      if (!std::isfinite(r.loss)) throw TrainingFailure(epoch + 1, "non-finite implant loss");
      for (std::size_t k = 0; k < batch.size(); ++k) {
        const bool is_auth = order[start + k] < working.auth_items.size();
        (is_auth ? sum_auth : sum_rand) += r.per_sample[k];
        ++(is_auth ? n_auth : n_rand);
      }
      sum_total += r.loss;
      ++n_batches;
    }
    if (!harden_pool.empty()) {
      for (int s = 0; s < o.harden_steps_per_epoch; ++s) {
        const auto b = draw_batch(harden_pool, o.batch_size, harden_rng);
        const auto r = trainer.step(b, lr, o.sigma, -1.0, ceiling);
        if (!std::isfinite(r.loss)) throw TrainingFailure(epoch + 1, "non-finite hardening loss");
      }
    }

    EpochLog row;
    row.epoch = model.epochs_trained + 1;
    row.loss_total = n_batches ? sum_total / static_cast<double>(n_batches) : 0.0;
    row.loss_auth = n_auth ? sum_auth / static_cast<double>(n_auth) : 0.0;
    row.loss_rand = n_rand ? sum_rand / static_cast<double>(n_rand) : 0.0;
    fill_eval(row, model, o.eval);
    model.train_log.push_back(row);
    ++model.epochs_trained;
    if (o.on_epoch) o.on_epoch(row.epoch, model);
  }
  return model;
}

LockedClassifier anti_finetune_harden(LockedClassifier model, const CompositeDataset& comp,
                                      std::span<const LabeledImage> clean,
                                      const HardenOptions& o) {
  validate_composite(comp, model);
  if (clean.empty()) throw InvalidArgument("anti_finetune_harden: empty clean set");
  if (o.steps < 0 || o.batch_size <= 0 || !(o.lr > 0.0)) {
    throw InvalidArgument("anti_finetune_harden: invalid step count, batch size or learning rate");
  }
  const double ceiling = o.loss_ceiling > 0.0 ? o.loss_ceiling : 3.0 * std::log(model.num_classes());
  const auto implant_pool = composite_items(comp, o.lambda_rand);
  auto ascent_pool = clean_items(clean);
  for (auto& it : ascent_pool) it.weight = o.ascent_weight;
  Rng rng(o.seed);
  Trainer trainer(model, o.momentum, o.weight_decay, 5.0, o.seed ^ 0x3c6ef372fe94f82bULL);
  for (int s = 0; s < o.steps; ++s) {
    const auto r1 = trainer.step(draw_batch(implant_pool, o.batch_size, rng), o.lr, o.sigma);
    if (!std::isfinite(r1.loss)) throw TrainingFailure(model.epochs_trained, "non-finite implant loss while hardening");
    const auto r2 = trainer.step(draw_batch(ascent_pool, o.batch_size, rng), o.lr, o.sigma, -1.0,
                                 ceiling * o.ascent_weight);
    if (!std::isfinite(r2.loss)) throw TrainingFailure(model.epochs_trained, "non-finite ascent loss while hardening");
  }
  return model;
}

LockedClassifier train_supervised(LockedClassifier model, std::span<const LabeledImage> data,
                                  const TrainOptions& o) {
  if (data.empty()) throw InvalidArgument("train_supervised: empty dataset");
  if (o.epochs < 0 || o.batch_size <= 0 || !(o.lr > 0.0)) {
    throw InvalidArgument("train_supervised: invalid epochs, batch size or learning rate");
  }
  const auto items = clean_items(data);
  Rng order_rng(o.seed);
  Trainer trainer(model, o.momentum, o.weight_decay, 5.0, o.seed ^ 0xbb67ae8584caa73bULL);
  for (int epoch = 0; epoch < o.epochs; ++epoch) {
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), order_rng);
    const double lr = o.cosine ? nn::cosine_lr(o.lr, epoch, o.epochs) : o.lr;
    std::vector<WeightedItem> batch;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(o.batch_size)) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(o.batch_size));
      for (std::size_t k = start; k < end; ++k) batch.push_back(items[order[k]]);
      const auto r = trainer.step(batch, lr, o.sigma);
      if (!std::isfinite(r.loss)) throw TrainingFailure(epoch + 1, "non-finite training loss");
    }
    ++model.epochs_trained;
    if (o.on_epoch) o.on_epoch(model.epochs_trained, model);
  }
  return model;
}

std::filesystem::path save_checkpoint(const std::filesystem::path& dir, const LockedClassifier& model) {
  std::filesystem::create_directories(dir);
  const auto params = model.network().params();
  const auto* raw = reinterpret_cast<const std::uint8_t*>(params.data());
  const Digest weights_hash = sha256({raw, params.size_bytes()});
  const std::string stem = "model-" + to_hex(weights_hash).substr(0, 16);
  io::write_f32(dir / (stem + ".bin"), params);
  const Shape s = model.input_shape();
  const nlohmann::json manifest = {
      {"arch_id", model.arch_id()},
      {"num_classes", model.num_classes()},
      {"input_shape", {s.channels, s.height, s.width}},
      {"train_sigma", model.train_sigma},
      {"trigger_digest", to_hex(model.trigger_digest)},
      {"seed", model.seed},
      {"epoch", model.epochs_trained},
      {"param_count", params.size()},
      {"weights_file", stem + ".bin"},
      {"weights_sha256", to_hex(weights_hash)}};
  const auto path = dir / (stem + ".json");
  io::write_json(path, manifest);
  return path;
}

LockedClassifier load_checkpoint(const std::filesystem::path& manifest_path) {
  const auto m = io::read_json(manifest_path);
  try {
    const auto& is = m.at("input_shape");
    LockedClassifier model(m.at("arch_id").get<std::string>(),
                           Shape{is.at(0).get<int>(), is.at(1).get<int>(), is.at(2).get<int>()},
                           m.at("num_classes").get<int>(), m.at("seed").get<std::uint64_t>());
    const auto count = m.at("param_count").get<std::size_t>();
    if (count != model.network().param_count()) {
      throw IoError(manifest_path.string() + ": parameter count does not match the architecture");
    }
    const auto weights = io::read_f32(manifest_path.parent_path() / m.at("weights_file").get<std::string>(), count);
    const auto* raw = reinterpret_cast<const std::uint8_t*>(weights.data());
    if (to_hex(sha256({raw, weights.size() * sizeof(float)})) != m.at("weights_sha256").get<std::string>()) {
      throw IoError(manifest_path.string() + ": weight file hash mismatch");
    }
    std::ranges::copy(weights, model.network().params().begin());
    model.train_sigma = m.at("train_sigma").get<double>();
    model.trigger_digest = digest_from_hex(m.at("trigger_digest").get<std::string>());
    model.epochs_trained = m.at("epoch").get<int>();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest_path.string() + ": malformed checkpoint manifest: " + e.what());
  }
}

std::string train_log_csv(std::span<const EpochLog> log) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "epoch,loss_auth,loss_rand,acc_auth,acc_clean\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << r.loss_auth << ',' << r.loss_rand << ',' << r.acc_auth << ','
        << r.acc_clean << '\n';
  }
  return out.str();
}

}  // namespace authlock

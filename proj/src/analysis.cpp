#include "authlock/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "authlock/error.hpp"
#include "authlock/nn.hpp"
#include "authlock/serialize.hpp"

namespace authlock {

std::vector<int> predictions(const Classifier& model, std::span<const LabeledImage> data,
                             const InputTrigger& trigger, std::optional<NoisePass> noise,
                             int batch_size) {
  if (batch_size <= 0) throw InvalidArgument("batch size must be positive");
  std::vector<int> out;
  out.reserve(data.size());
  const Shape shape = model.input_shape();
  Rng rng(noise ? noise->seed : 0);
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
    Tensor batch(static_cast<int>(end - start), shape);
    for (std::size_t i = start; i < end; ++i) {
      if (!(data[i].pixels.shape() == shape)) throw InvalidArgument("image shape does not match the model");
      auto sample = batch.sample(static_cast<int>(i - start));
      std::ranges::copy(data[i].pixels.values(), sample.begin());
      apply_trigger_inplace(sample, shape, trigger);
      if (noise && noise->sigma > 0.0) add_gaussian_noise(sample, noise->sigma, rng);
    }
    const auto pred = predict(model, batch);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

double accuracy(const Classifier& model, std::span<const LabeledImage> data,
                const InputTrigger& trigger, std::optional<NoisePass> noise, int batch_size) {
  if (data.empty()) throw InvalidArgument("accuracy: empty dataset");
  const auto pred = predictions(model, data, trigger, noise, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += pred[i] == data[i].label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

double attack_gain(double acc_reversed, double acc_clean) { return acc_reversed - acc_clean; }

void MetricsRecord::finalize() {
  if (!acc_reversed) return;
  const double g = attack_gain(*acc_reversed, acc_clean);
  if (gain_att && std::abs(*gain_att - g) > 1e-12) {
    throw InvalidArgument("stored gain_att disagrees with acc_reversed - acc_clean");
  }
  gain_att = g;
}

namespace {
nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}
std::optional<double> opt_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}
}  // namespace

nlohmann::json to_json(const MetricsRecord& r) {
  return {{"acc_baseline", opt(r.acc_baseline)},
          {"acc_auth", r.acc_auth},
          {"acc_clean", r.acc_clean},
          {"acc_reversed", opt(r.acc_reversed)},
          {"gain_att", opt(r.gain_att)},
          {"context",
           {{"model_id", r.context.model_id},
            {"dataset_id", r.context.dataset_id},
            {"sigma", r.context.sigma},
            {"seed", r.context.seed}}}};
}

MetricsRecord metrics_from_json(const nlohmann::json& j) {
  try {
    MetricsRecord r;
    r.acc_baseline = opt_from(j, "acc_baseline");
    r.acc_auth = j.at("acc_auth").get<double>();
    r.acc_clean = j.at("acc_clean").get<double>();
    r.acc_reversed = opt_from(j, "acc_reversed");
    r.gain_att = opt_from(j, "gain_att");
    const auto& c = j.at("context");
    r.context = {c.at("model_id").get<std::string>(), c.at("dataset_id").get<std::string>(),
                 c.at("sigma").get<double>(), c.at("seed").get<std::uint64_t>()};
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed metrics record: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Mutual information probe

namespace {

using DMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Probe {
  DMatrix w1;  // (hidden, d) or (K, d) when linear
  Eigen::RowVectorXd b1;
  DMatrix w2;  // (K, hidden)
  Eigen::RowVectorXd b2;
  bool hidden = false;

  DMatrix logits(const DMatrix& x, DMatrix* act = nullptr) const {
    DMatrix z = (x * w1.transpose()).rowwise() + b1;
    if (!hidden) return z;
    z = z.cwiseMax(0.0);
    if (act) *act = z;
    return (z * w2.transpose()).rowwise() + b2;
  }
};

double entropy_bits(std::span<const int> labels, int k) {
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  for (int y : labels) counts[y] += 1.0;
  double h = 0.0;
  for (double c : counts) {
    if (c > 0) {
      const double p = c / static_cast<double>(labels.size());
      h -= p * std::log2(p);
    }
  }
  return h;
}

}  // namespace

double mi_estimate(const Matrix& features, std::span<const int> labels, const ProbeConfig& cfg,
                   std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (labels.size() != n) throw InvalidArgument("mi_estimate: label count does not match features");
  if (features.cols() < 1) throw InvalidArgument("mi_estimate: empty feature vectors");
  if (labels.empty()) throw InvalidArgument("mi_estimate: empty label set");
  const int k = *std::ranges::max_element(labels) + 1;
  if (*std::ranges::min_element(labels) < 0) throw InvalidArgument("mi_estimate: negative label");
  std::vector<int> distinct(labels.begin(), labels.end());
  std::ranges::sort(distinct);
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) throw InvalidArgument("mi_estimate: labels must span at least two classes");
  if (n < 4 * static_cast<std::size_t>(k)) throw InvalidArgument("mi_estimate: need N >= 4K samples");
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw InvalidArgument("mi_estimate: train_fraction must lie in (0, 1)");
  }

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::round(cfg.train_fraction * static_cast<double>(n))), 1, n - 1);
  const auto d = static_cast<Eigen::Index>(features.cols());

  DMatrix xtr(static_cast<Eigen::Index>(n_train), d), xte(static_cast<Eigen::Index>(n - n_train), d);
  std::vector<int> ytr(n_train), yte(n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = features.row(static_cast<Eigen::Index>(order[i])).cast<double>();
    if (i < n_train) {
      xtr.row(static_cast<Eigen::Index>(i)) = src;
      ytr[i] = labels[order[i]];
    } else {
      xte.row(static_cast<Eigen::Index>(i - n_train)) = src;
      yte[i - n_train] = labels[order[i]];
    }
  }
  // Standardize with training-split statistics.
  const Eigen::RowVectorXd mean = xtr.colwise().mean();
  Eigen::RowVectorXd sd = ((xtr.rowwise() - mean).array().square().colwise().sum() /
                           static_cast<double>(n_train)).sqrt();
  for (Eigen::Index j = 0; j < d; ++j) sd(j) = sd(j) > 1e-8 ? sd(j) : 1.0;
  xtr = ((xtr.rowwise() - mean).array().rowwise() / sd.array()).matrix();
  xte = ((xte.rowwise() - mean).array().rowwise() / sd.array()).matrix();

  Probe probe;
  probe.hidden = cfg.hidden > 0;
  const Eigen::Index h = probe.hidden ? cfg.hidden : k;
  std::normal_distribution<double> normal(0.0, 1.0);
  probe.w1 = DMatrix::NullaryExpr(h, d, [&] { return normal(rng) * std::sqrt((probe.hidden ? 2.0 : 0.01) / static_cast<double>(d)); });
  probe.b1 = Eigen::RowVectorXd::Zero(h);
  if (probe.hidden) {
    probe.w2 = DMatrix::NullaryExpr(k, h, [&] { return normal(rng) * std::sqrt(1.0 / static_cast<double>(h)); });
    probe.b2 = Eigen::RowVectorXd::Zero(k);
  }

  // Full-batch Adam on the training split.
  std::vector<double*> blocks = {probe.w1.data(), probe.b1.data()};
  std::vector<std::size_t> sizes = {static_cast<std::size_t>(probe.w1.size()), static_cast<std::size_t>(probe.b1.size())};
  if (probe.hidden) {
    blocks.push_back(probe.w2.data());
    blocks.push_back(probe.b2.data());
    sizes.push_back(static_cast<std::size_t>(probe.w2.size()));
    sizes.push_back(static_cast<std::size_t>(probe.b2.size()));
  }
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  std::vector<double> flat(total), grad(total);
  nn::Adam adam(total);
  auto gather = [&](std::vector<double>& dst, const std::vector<const double*>& src) {
    std::size_t off = 0;
    for (std::size_t b = 0; b < src.size(); ++b) {
      std::copy(src[b], src[b] + sizes[b], dst.begin() + static_cast<std::ptrdiff_t>(off));
      off += sizes[b];
    }
  };
  auto scatter = [&] {
    std::size_t off = 0;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off), flat.begin() + static_cast<std::ptrdiff_t>(off + sizes[b]), blocks[b]);
      off += sizes[b];
    }
  };
  gather(flat, {blocks.begin(), blocks.end()});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    DMatrix act;
    const DMatrix z = probe.logits(xtr, &act);
    DMatrix dz;
    nn::weighted_cross_entropy<double>(z, ytr, {}, &dz);
    DMatrix gw1, gw2;
    Eigen::RowVectorXd gb1, gb2;
    if (probe.hidden) {
      gw2 = dz.transpose() * act + cfg.weight_decay * probe.w2;
      gb2 = dz.colwise().sum();
      DMatrix da = (dz * probe.w2).array() * (act.array() > 0.0).cast<double>();
      gw1 = da.transpose() * xtr + cfg.weight_decay * probe.w1;
      gb1 = da.colwise().sum();
    } else {
      gw1 = dz.transpose() * xtr + cfg.weight_decay * probe.w1;
      gb1 = dz.colwise().sum();
    }
    std::vector<const double*> gsrc = {gw1.data(), gb1.data()};
    if (probe.hidden) {
      gsrc.push_back(gw2.data());
      gsrc.push_back(gb2.data());
    }
    gather(grad, gsrc);
    adam.step(flat, grad, cfg.lr);
    scatter();
  }

  const DMatrix zte = probe.logits(xte);
  const double ce_nats = nn::weighted_cross_entropy<double>(zte, yte, {}, nullptr);
  const double h_bits = entropy_bits(yte, k);
  const double estimate = h_bits - ce_nats / std::log(2.0);
  return std::clamp(estimate, 0.0, std::log2(static_cast<double>(k)));
}

double mi_curve_auc(std::span<const std::pair<double, double>> curve) {
  if (curve.size() < 2) throw InvalidArgument("mi_curve_auc: need at least two points");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double dx = curve[i].first - curve[i - 1].first;
    if (!(dx > 0.0)) throw InvalidArgument("mi_curve_auc: epochs must be strictly increasing");
    area += 0.5 * dx * (curve[i].second + curve[i - 1].second);
  }
  return area;
}

void MICurve::compute_auc() {
  if (i_auth.size() != epochs.size() || i_clean.size() != epochs.size() ||
      (!i_baseline.empty() && i_baseline.size() != epochs.size())) {
    throw InvalidArgument("MI curve series lengths differ");
  }
  auto points = [&](const std::vector<double>& v) {
    std::vector<std::pair<double, double>> p;
    for (std::size_t i = 0; i < epochs.size(); ++i) p.emplace_back(epochs[i], v[i]);
    return p;
  };
  auc_auth = mi_curve_auc(points(i_auth));
  auc_clean = mi_curve_auc(points(i_clean));
}

std::string mi_curve_csv(const MICurve& curve) {
  std::ostringstream out;
  out << std::setprecision(17) << "epoch,i_auth,i_clean,i_baseline\n";
  for (std::size_t i = 0; i < curve.epochs.size(); ++i) {
    out << curve.epochs[i] << ',' << curve.i_auth[i] << ',' << curve.i_clean[i] << ',';
    if (i < curve.i_baseline.size()) out << curve.i_baseline[i];
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Projection

Matrix project_2d(const Matrix& features) {
  const auto n = features.rows();
  const auto d = features.cols();
  if (n < 3 || d < 2) throw InvalidArgument("project_2d: need N >= 3 and d >= 2");
  const DMatrix x = features.cast<double>();
  const DMatrix centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  if (cov.trace() <= 0.0) throw InvalidArgument("project_2d: features have no variance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues ascend; take the two largest.
  Eigen::MatrixXd axes(d, 2);
  for (int a = 0; a < 2; ++a) {
    Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - a);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    axes.col(a) = v;
  }
  return (centered * axes).cast<float>();
}

double silhouette_score(const Matrix& points, std::span<const int> labels) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (labels.size() != n || n < 2) throw InvalidArgument("silhouette_score: bad input sizes");
  std::map<int, std::size_t> sizes;
  for (int y : labels) ++sizes[y];
  if (sizes.size() < 2) throw InvalidArgument("silhouette_score: need at least two clusters");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, double> sum;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sum[labels[j]] += (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).cast<double>().norm();
    }
    const std::size_t own = sizes[labels[i]];
    if (own < 2) continue;  // singleton clusters score 0
    const double a = sum[labels[i]] / static_cast<double>(own - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [label, count] : sizes) {
      if (label != labels[i]) b = std::min(b, sum[label] / static_cast<double>(count));
    }
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

void export_features(const std::filesystem::path& dir, const Matrix& features,
                     std::span<const int> labels, const std::string& name) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw InvalidArgument("export_features: label count does not match features");
  }
  std::filesystem::create_directories(dir);
  io::write_f32(dir / (name + ".bin"), std::span<const float>(features.data(), static_cast<std::size_t>(features.size())));
  std::string label_text;
  for (int y : labels) label_text += std::to_string(y) + "\n";
  io::write_text(dir / (name + ".labels.txt"), label_text);
  io::write_json(dir / (name + ".json"), {{"N", features.rows()},
                                           {"d", features.cols()},
                                           {"dtype", "float32-le"},
                                           {"layout", "row-major"},
                                           {"data_file", name + ".bin"},
                                           {"labels_file", name + ".labels.txt"}});
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string pct(const std::optional<double>& v) {
  if (!v) return "—";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * *v << '%';
  return s.str();
}

std::string fmt_sigma(double s) {
  std::ostringstream out;
  out << s;
  return out.str();
}

std::string csv_field(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string out = "\"";
  for (char c : v) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string render_report(std::span<const MetricsRecord> records, ReportFormat format) {
  if (records.empty()) throw InvalidArgument("render_report: no records");
  const std::vector<std::string> header = {"model", "dataset", "sigma", "seed", "acc_baseline",
                                           "acc_auth", "acc_clean", "acc_reversed", "gain_att"};
  std::vector<std::vector<std::string>> rows;
  for (auto r : records) {
    r.finalize();
    rows.push_back({r.context.model_id, r.context.dataset_id, fmt_sigma(r.context.sigma),
                    std::to_string(r.context.seed), pct(r.acc_baseline), pct(r.acc_auth),
                    pct(r.acc_clean), pct(r.acc_reversed), pct(r.gain_att)});
  }
  std::ostringstream out;
  if (format == ReportFormat::Csv) {
    for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
    out << '\n';
    for (const auto& row : rows) {
      for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "," : "") << csv_field(row[c]);
      out << '\n';
    }
    return out.str();
  }
  out << '|';
  for (const auto& h : header) out << ' ' << h << " |";
  out << "\n|";
  for (std::size_t c = 0; c < header.size(); ++c) out << "---|";
  out << '\n';
  for (const auto& row : rows) {
    out << '|';
    for (const auto& cell : row) out << ' ' << cell << " |";
    out << '\n';
  }
  return out.str();
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw InvalidArgument("parse_csv: unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace authlock

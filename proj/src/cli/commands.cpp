#include "authlock/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <iomanip>
#include <map>
#include <sstream>

#include "authlock/attack.hpp"
#include "authlock/fingerprint.hpp"
#include "authlock/serialize.hpp"
#include "authlock/smoothing.hpp"

namespace authlock {

namespace fs = std::filesystem;

LoadedData load_data(const RunConfig& c) {
  LoadedData d;
  if (c.dataset.name == "synth") {
    d.split = synth_dataset(c.dataset.synth);
    d.dataset_id = "synth-" + std::to_string(c.dataset.synth.seed);
    d.num_classes = c.dataset.synth.num_classes;
  } else {
    std::string root = c.dataset.path;
    if (root.empty()) {
      const char* env = std::getenv("AUTHLOCK_DATA_DIR");
      if (env == nullptr || *env == '\0') {
        throw IoError("cifar10: set dataset.path or AUTHLOCK_DATA_DIR to the CIFAR-10 batch directory");
      }
      root = env;
    }
    d.split = load_cifar10(root);
    d.dataset_id = "cifar10";
    d.num_classes = 10;
  }
  if (c.dataset.subset_size > 0 && c.dataset.subset_size < d.split.train.size()) {
    d.split.train = take_subset(d.split.train, c.dataset.subset_size, c.dataset.synth.seed);
    d.dataset_id += "-n" + std::to_string(c.dataset.subset_size);
  }
  if (c.dataset.test_size > 0 && c.dataset.test_size < d.split.test.size()) {
    d.split.test.resize(c.dataset.test_size);
  }
  if (d.split.train.empty() || d.split.test.empty()) throw InvalidArgument("dataset has an empty split");
  d.shape = d.split.train.front().pixels.shape();
  return d;
}

TriggerSpec trigger_from_config(const RunConfig& c, int channels) {
  const auto fp = derive_fingerprint(c.trigger.device_id, c.trigger.challenge);
  return make_trigger_spec(fp, channels, c.trigger.patch_h, c.trigger.patch_w, c.trigger.location);
}

fs::path make_run_dir(const fs::path& root, const std::string& command) {
  fs::create_directories(root);
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream stem;
  stem << command << '-' << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  for (int n = 0;; ++n) {
    const fs::path dir = root / (n == 0 ? stem.str() : stem.str() + "-" + std::to_string(n));
    if (fs::create_directory(dir)) return dir;
  }
}

std::optional<NoisePass> evaluation_noise(const LockedClassifier& model, std::uint64_t seed) {
  if (model.train_sigma > 0.0) return NoisePass{model.train_sigma, seed};
  return std::nullopt;
}

namespace {

constexpr std::uint64_t kEvalNoiseSeed = 0x5eed0f0e7a1ULL;

double mi_of(const LockedClassifier& model, std::span<const LabeledImage> data, const InputTrigger& trigger,
             std::uint64_t seed) {
  auto images = images_of(data);
  for (auto& img : images) apply_trigger_inplace(img.values(), img.shape(), trigger);
  const Matrix f = model.features(stack(images), model.arch_id() == "smallcnn" ? "conv" : "penultimate");
  return mi_estimate(f, labels_of(data), ProbeConfig{}, seed);
}

}  // namespace

ImplantOutcome run_implant(const RunConfig& c, const LoadedData& data, std::ostream& log) {
  const auto spec = trigger_from_config(c, data.shape.channels);
  const auto comp = build_composite(data.split.train, spec, data.num_classes, c.implant.seed, 1.0, data.dataset_id);
  LockedClassifier model(c.arch_id, data.shape, data.num_classes, c.implant.seed);
  model.trigger_digest = spec.fingerprint_digest;

  ImplantOptions o;
  o.lambda_rand = c.implant.lambda_rand;
  o.epochs = c.implant.epochs;
  o.lr = c.implant.lr;
  o.sigma = c.implant.sigma;
  o.seed = c.implant.seed;
  o.batch_size = c.implant.batch_size;
  o.eval = EvalSet{&data.split.test, spec, c.implant.sigma, kEvalNoiseSeed, 1000};
  if (c.implant.harden_steps_per_epoch > 0) {
    o.harden_clean = &data.split.train;
    o.harden_steps_per_epoch = c.implant.harden_steps_per_epoch;
  }

  const auto mi_data = std::span<const LabeledImage>(data.split.test)
                           .first(std::min(c.implant.mi_items, data.split.test.size()));
  const bool want_mi = c.implant.mi_every > 0;
  auto mi_due = [&](int epoch) {
    return want_mi && (epoch % c.implant.mi_every == 0 || epoch == c.implant.epochs);
  };
  std::optional<MICurve> curve;
  if (want_mi) curve.emplace();
  o.on_epoch = [&](int epoch, const LockedClassifier& m) {
    const auto& row = m.train_log.back();
    log << "epoch " << epoch << " loss_auth=" << row.loss_auth << " loss_rand=" << row.loss_rand
        << " acc_auth=" << row.acc_auth << " acc_clean=" << row.acc_clean << '\n';
    if (mi_due(epoch)) {
      curve->epochs.push_back(epoch);
      curve->i_auth.push_back(mi_of(m, mi_data, spec, c.implant.seed + epoch));
      curve->i_clean.push_back(mi_of(m, mi_data, {}, c.implant.seed + epoch));
    }
  };
  model = implant(std::move(model), comp, o);

  ImplantOutcome out{model, {}, std::nullopt};
  const auto noise = evaluation_noise(model, kEvalNoiseSeed);
  out.metrics.acc_auth = accuracy(model, data.split.test, spec, noise);
  out.metrics.acc_clean = accuracy(model, data.split.test, {}, noise);
  out.metrics.context = MetricsContext{c.arch_id, data.dataset_id, c.implant.sigma, c.implant.seed};

  if (c.implant.baseline) {
    TrainOptions t;
    t.epochs = c.implant.epochs;
    t.lr = c.implant.lr;
    t.batch_size = c.implant.batch_size;
    t.sigma = c.implant.sigma;
    t.seed = c.implant.seed;
    std::map<int, double> base_mi;
    t.on_epoch = [&](int epoch, const LockedClassifier& m) {
      if (mi_due(epoch)) base_mi[epoch] = mi_of(m, mi_data, {}, c.implant.seed + epoch);
    };
    LockedClassifier base(c.arch_id, data.shape, data.num_classes, c.implant.seed);
    base.train_sigma = c.implant.sigma;
    base = train_supervised(std::move(base), data.split.train, t);
    out.metrics.acc_baseline = accuracy(base, data.split.test, {}, noise);
    if (curve) {
      for (int e : curve->epochs) curve->i_baseline.push_back(base_mi.at(e));
    }
  }
  if (curve && curve->epochs.size() >= 2) curve->compute_auc();
  out.mi = std::move(curve);
  return out;
}

AttackSplit attack_split(const RunConfig& c, const LoadedData& data) {
  std::span<const LabeledImage> test(data.split.test);
  if (c.attack.optimize_items >= test.size()) {
    throw InvalidArgument("attack.optimize_items leaves no held-out test items for acc_reversed");
  }
  return {test.first(c.attack.optimize_items), test.subspan(c.attack.optimize_items)};
}

AttackOptions attack_options(const RunConfig& c, const LockedClassifier& model) {
  AttackOptions a;
  a.lambda_reg = c.attack.lambda_reg;
  a.steps = c.attack.steps;
  a.lr = c.attack.lr;
  a.seed = c.attack.seed;
  a.eval_noise = evaluation_noise(model, kEvalNoiseSeed);
  return a;
}

RecoveredTrigger run_adaptive(const RunConfig& c, const LockedClassifier& model, const AttackSplit& s) {
  const auto o = attack_options(c, model);
  if (c.attack.lambda_sweep.empty()) return adaptive_attack(model, s.optimize, s.eval, o);
  return adaptive_attack_sweep(model, s.optimize, s.eval, o, c.attack.lambda_sweep);
}

namespace {

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

void write_metrics(const fs::path& dir, MetricsRecord record) {
  record.finalize();
  const std::vector<MetricsRecord> rows{record};
  io::write_json(dir / "metrics.json", to_json(record));
  io::write_text(dir / "report.md", render_report(rows, ReportFormat::Markdown));
  io::write_text(dir / "report.csv", render_report(rows, ReportFormat::Csv));
}

void check_compatible(const RunConfig& c, const LockedClassifier& model, const LoadedData& data,
                      const TriggerSpec& spec) {
  if (model.arch_id() != c.arch_id) {
    throw InvalidArgument("checkpoint architecture '" + model.arch_id() + "' does not match arch_id '" +
                          c.arch_id + "'");
  }
  if (model.num_classes() != data.num_classes || !(model.input_shape() == data.shape)) {
    throw InvalidArgument("checkpoint input shape or class count does not match the dataset");
  }
  if (model.trigger_digest != spec.fingerprint_digest) {
    throw InvalidArgument("trigger config does not match the checkpoint's fingerprint digest");
  }
}

}  // namespace

std::vector<AblationRow> run_sigma_ablation(const RunConfig& c, const LoadedData& data, std::ostream& log) {
  std::vector<AblationRow> rows;
  const auto split = attack_split(c, data);
  const auto spec = trigger_from_config(c, data.shape.channels);
  for (double sigma : c.ablate_sigmas) {
    RunConfig rc = c;
    rc.implant.sigma = sigma;
    rc.implant.mi_every = 0;
    rc.implant.baseline = false;
    std::ostringstream quiet;
    const auto outcome = run_implant(rc, data, quiet);
    const auto noise = evaluation_noise(outcome.model, kEvalNoiseSeed);
    AblationRow row;
    row.sigma = sigma;
    row.acc_auth = accuracy(outcome.model, split.eval, spec, noise);
    row.acc_clean = accuracy(outcome.model, split.eval, {}, noise);
    const auto recovered = run_adaptive(rc, outcome.model, split);
    row.acc_reversed = recovered.acc_reversed;
    row.gain_att = attack_gain(row.acc_reversed, row.acc_clean);
    if (sigma > 0.0) {
      const auto items = split.eval.first(std::min(kSmoothedItems, split.eval.size()));
      auto vote = [&](const InputTrigger& t) {
        return smoothed_accuracy(outcome.model, items, t, sigma, c.certify.n0, c.certify.alpha, c.certify.seed);
      };
      row.smoothed_auth = vote(spec);
      row.smoothed_clean = vote({});
      row.smoothed_reversed = vote(recovered.as_input_trigger());
    }
    log << "sigma=" << sigma << " acc_auth=" << row.acc_auth << " acc_clean=" << row.acc_clean
        << " acc_reversed=" << row.acc_reversed << " gain_att=" << row.gain_att << '\n';
    rows.push_back(row);
  }
  return rows;
}

std::optional<AblationRow> calibrate_sigma(std::span<const AblationRow> rows, double max_gain, double min_auth) {
  std::optional<AblationRow> best;
  for (const auto& r : rows) {
    if (std::abs(r.gain_att) <= max_gain && r.acc_auth >= min_auth && (!best || r.sigma < best->sigma)) best = r;
  }
  return best;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::ostringstream o;
  o << "sigma,acc_auth,acc_clean,acc_reversed,gain_att,smoothed_auth,smoothed_clean,smoothed_reversed\n";
  auto opt = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const auto& r : rows) {
    o << fmt(r.sigma) << ',' << fmt(r.acc_auth) << ',' << fmt(r.acc_clean) << ',' << fmt(r.acc_reversed) << ','
      << fmt(r.gain_att) << ',' << opt(r.smoothed_auth) << ',' << opt(r.smoothed_clean) << ','
      << opt(r.smoothed_reversed) << '\n';
  }
  return o.str();
}

AttackMode parse_attack_mode(const std::string& mode) {
  if (mode == "adaptive") return AttackMode::Adaptive;
  if (mode == "nc") return AttackMode::NeuralCleanse;
  if (mode == "pixel") return AttackMode::Pixel;
  if (mode == "finetune") return AttackMode::Finetune;
  throw InvalidArgument("unknown attack mode '" + mode + "' (expected adaptive, nc, pixel or finetune)");
}

int cmd_implant(const RunConfig& c, std::ostream& out) {
  const auto data = load_data(c);
  const auto dir = make_run_dir(c.output_dir, "implant");
  io::write_json(dir / "config.snapshot", to_json(c));
  auto outcome = run_implant(c, data, out);
  const auto manifest = save_checkpoint(dir, outcome.model);
  outcome.metrics.context.model_id = manifest.stem().string();
  io::write_text(dir / "train_log.csv", train_log_csv(outcome.model.train_log));
  if (outcome.mi) io::write_text(dir / "mi_curve.csv", mi_curve_csv(*outcome.mi));
  write_metrics(dir, outcome.metrics);
  out << "run directory: " << dir.string() << '\n' << "checkpoint: " << manifest.string() << '\n';
  return 0;
}

int cmd_attack(const RunConfig& c, const fs::path& checkpoint, AttackMode mode, std::ostream& out) {
  const auto model = load_checkpoint(checkpoint);
  const auto data = load_data(c);
  const auto spec = trigger_from_config(c, data.shape.channels);
  check_compatible(c, model, data, spec);
  const auto split = attack_split(c, data);
  const auto dir = make_run_dir(c.output_dir, "attack");
  io::write_json(dir / "config.snapshot", to_json(c));

  const auto noise = evaluation_noise(model, kEvalNoiseSeed);
  MetricsRecord rec;
  rec.context = MetricsContext{checkpoint.stem().string(), data.dataset_id, model.train_sigma, c.attack.seed};
  rec.acc_auth = accuracy(model, split.eval, spec, noise);
  rec.acc_clean = accuracy(model, split.eval, {}, noise);

  switch (mode) {
    case AttackMode::Adaptive: {
      const auto t = run_adaptive(c, model, split);
      save_recovered_trigger(dir, t);
      rec.acc_reversed = t.acc_reversed;
      break;
    }
    case AttackMode::NeuralCleanse: {
      const auto nc = neural_cleanse(model, split.optimize, split.eval, attack_options(c, model));
      double best = 0.0;
      for (const auto& t : nc.per_class) {
        save_recovered_trigger(dir, t, "class" + std::to_string(*t.target_class) + "_");
        best = std::max(best, t.acc_reversed);
      }
      io::write_json(dir / "anomaly.json", to_json(nc.report));
      rec.acc_reversed = best;
      out << "anomaly index: " << nc.report.anomaly_index << (nc.report.flagged ? " (flagged)" : "") << '\n';
      break;
    }
    case AttackMode::Pixel: {
      const auto o = attack_options(c, model);
      double best = 0.0;
      for (int k = 0; k < model.num_classes(); ++k) {
        auto ok = o;
        ok.seed = o.seed + static_cast<std::uint64_t>(k);
        const auto t = pixel_attack(model, split.optimize, split.eval, k, c.attack.pixel_l1, ok);
        save_recovered_trigger(dir, t, "class" + std::to_string(k) + "_");
        best = std::max(best, t.acc_reversed);
      }
      rec.acc_reversed = best;
      break;
    }
    case AttackMode::Finetune: {
      FinetuneOptions f;
      f.epochs = c.attack.finetune_epochs;
      f.lr = c.attack.finetune_lr;
      f.seed = c.attack.seed;
      f.eval_noise = noise;
      const auto samples = take_subset(data.split.train, static_cast<std::size_t>(c.attack.finetune_samples), c.attack.seed);
      const auto r = finetune_attack(model, samples, data.split.test, spec, f);
      io::write_json(dir / "finetune.json", {{"acc_clean_before", r.acc_clean_before},
                                             {"acc_clean_after", r.acc_clean_after},
                                             {"acc_auth_before", r.acc_auth_before},
                                             {"acc_auth_after", r.acc_auth_after},
                                             {"delta_acc_clean", r.delta_acc_clean},
                                             {"delta_acc_auth", r.delta_acc_auth}});
      save_checkpoint(dir, r.model);
      rec.acc_auth = r.acc_auth_after;
      rec.acc_clean = r.acc_clean_after;
      out << "delta_acc_clean=" << r.delta_acc_clean << " delta_acc_auth=" << r.delta_acc_auth << '\n';
      break;
    }
  }
  write_metrics(dir, rec);
  out << "run directory: " << dir.string() << '\n';
  return 0;
}

int cmd_certify(const RunConfig& c, const fs::path& checkpoint, const std::optional<fs::path>& trigger_dir,
                const std::string& trigger_prefix, std::ostream& out) {
  const auto model = load_checkpoint(checkpoint);
  const auto data = load_data(c);
  if (model.train_sigma == 0.0) {
    out << "warning: checkpoint was trained without noise; certified radii will be small or absent\n";
  }
  const double sigma = c.certify_sigma() > 0.0 ? c.certify_sigma() : model.train_sigma;
  if (!(sigma > 0.0)) throw ConfigError("certify.sigma", "must be positive when the checkpoint has sigma = 0");
  const auto dir = make_run_dir(c.output_dir, "certify");
  io::write_json(dir / "config.snapshot", to_json(c));

  const auto inputs = std::span<const LabeledImage>(data.split.test)
                          .first(std::min(c.certify.max_inputs, data.split.test.size()));
  Rng rng(c.certify.seed);
  std::vector<CertificationRecord> records;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    records.push_back(certify(model, inputs[i].pixels, sigma, c.certify.n0, c.certify.n, c.certify.alpha, rng,
                              static_cast<int>(i)));
    correct += records.back().prediction == inputs[i].label ? 1 : 0;
  }
  io::write_text(dir / "certification.csv", certification_csv(records));
  out << "certified correct: " << correct << " / " << records.size() << '\n';
  if (trigger_dir) {
    const auto trigger = load_soft_trigger(*trigger_dir, trigger_prefix);
    const auto summary = summarize_robustness(records, images_of(inputs), trigger);
    io::write_json(dir / "robustness.json", to_json(summary));
    out << "fraction_inside_radius: " << summary.fraction_inside_radius << '\n';
  }
  out << "run directory: " << dir.string() << '\n';
  return 0;
}

int cmd_report(const RunConfig& c, std::span<const fs::path> run_dirs, std::ostream& out) {
  if (run_dirs.empty()) throw InvalidArgument("report: no run directories given");
  std::vector<MetricsRecord> rows;
  for (const auto& d : run_dirs) rows.push_back(metrics_from_json(io::read_json(d / "metrics.json")));
  const auto dir = make_run_dir(c.output_dir, "report");
  io::write_text(dir / "report.md", render_report(rows, ReportFormat::Markdown));
  io::write_text(dir / "report.csv", render_report(rows, ReportFormat::Csv));
  out << render_report(rows, ReportFormat::Markdown) << "run directory: " << dir.string() << '\n';
  return 0;
}

int cmd_ablate_sigma(const RunConfig& c, std::ostream& out) {
  const auto data = load_data(c);
  const auto dir = make_run_dir(c.output_dir, "ablate-sigma");
  io::write_json(dir / "config.snapshot", to_json(c));
  const auto rows = run_sigma_ablation(c, data, out);
  io::write_text(dir / "ablation.csv", ablation_csv(rows));
  const auto pick = calibrate_sigma(rows);
  io::write_json(dir / "calibration.json",
                 pick ? nlohmann::json{{"sigma", pick->sigma}, {"acc_auth", pick->acc_auth}, {"gain_att", pick->gain_att}}
                      : nlohmann::json{{"sigma", nullptr}});
  out << (pick ? "calibrated sigma: " + fmt(pick->sigma) : std::string("no sigma met the calibration target"))
      << "\nrun directory: " << dir.string() << '\n';
  return 0;
}

}  // namespace authlock

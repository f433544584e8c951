// End-to-end acceptance checks at desk scale. Prints one PASS/FAIL line per
// criterion and exits non-zero when any criterion fails. Exit 77 means the
// requested dataset is unavailable.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "authlock/attack.hpp"
#include "authlock/commands.hpp"
#include "authlock/config.hpp"
#include "authlock/fingerprint.hpp"
#include "authlock/serialize.hpp"
#include "authlock/smoothing.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace authlock;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

class Ledger {
 public:
  explicit Ledger(std::set<int> only) : only_(std::move(only)) {}

  bool wanted(int id) const { return only_.empty() || only_.contains(id); }

  void record(int id, const std::string& name, bool pass, const std::string& detail) {
    verdicts_.push_back({id, name, pass, detail});
    std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << name << ": " << detail << std::endl;
  }

  void write_json(const fs::path& path) const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& v : verdicts_) j.push_back({{"criterion", v.id}, {"name", v.name}, {"pass", v.pass}, {"detail", v.detail}});
    io::write_json(path, j);
  }

  bool all_pass() const {
    return std::ranges::all_of(verdicts_, [](const Verdict& v) { return v.pass; });
  }

 private:
  std::set<int> only_;
  std::vector<Verdict> verdicts_;
};

std::string num(double v, int precision = 4) {
  std::ostringstream o;
  o << std::setprecision(precision) << v;
  return o.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

// --- criterion 6 ----------------------------------------------------------

void check_smoothing_soundness(Ledger& ledger) {
  double worst_cp = 0.0;
  for (int n = 1; n <= 50; ++n) {
    for (int k = 0; k <= n; ++k) {
      for (double alpha : {0.001, 0.01, 0.05}) {
        worst_cp = std::max(worst_cp, std::abs(clopper_pearson_lower(k, n, alpha) - oracle::clopper_pearson_lower(k, n, alpha)));
      }
    }
  }
  const double edge = std::abs(clopper_pearson_lower(100, 100, 0.001) - std::pow(0.001, 0.01));
  const double quantile = std::abs(inverse_normal_cdf(0.975) - 1.959964);

  const Shape tiny{1, 2, 2};
  const fixture::ConstantClassifier constant(tiny, 3, 1);
  double worst_radius = 0.0;
  for (double sigma : {0.12, 0.25, 0.5, 1.0, 2.0}) {
    Rng rng(5);
    const auto r = certify(constant, Image(tiny, 0.5f), sigma, 100, 1000, 0.001, rng);
    const double expected = sigma * oracle::inverse_normal_cdf(std::pow(0.001, 1.0 / 1000));
    worst_radius = std::max(worst_radius, std::abs(r.radius - expected) / sigma);
  }

  // 10^4 certifications of 10 + 100 noise draws each: 1.1 * 10^6 samples.
  const auto t0 = Clock::now();
  const double sigma = 0.5;
  const fixture::LinearClassifier linear(tiny, 1.0, 0.3);
  Rng rng(2718);
  std::uniform_real_distribution<double> pos(0.3, 1.5);
  const int trials = 10000;
  int covered = 0;
  for (int t = 0; t < trials; ++t) {
    const auto x0 = static_cast<float>(pos(rng));
    const auto r = certify(linear, Image(tiny, x0), sigma, 10, 100, 0.001, rng);
    const double p1 = linear.p_class1(x0, sigma);
    const double truth = r.prediction == 0 ? 1.0 - p1 : p1;
    covered += (r.abstained() || r.p_a_lower <= truth) ? 1 : 0;
  }
  const double coverage = static_cast<double>(covered) / trials;
  const double elapsed = seconds_since(t0);

  const bool pass = worst_cp <= 1e-6 && edge <= 1e-9 && quantile <= 1e-6 && worst_radius <= 1e-9 &&
                    coverage >= 0.999 && elapsed <= 300.0;
  ledger.record(6, "smoothing statistical soundness", pass,
                "max|CP-oracle|=" + num(worst_cp) + " (<=1e-6), |CP(100,100)-0.001^0.01|=" + num(edge) +
                    " (<=1e-9), |Phi^-1(0.975)-1.959964|=" + num(quantile) + " (<=1e-6), radius/sigma drift=" +
                    num(worst_radius) + " (<=1e-9), coverage=" + num(coverage, 6) + " (>=0.999) in " +
                    num(elapsed, 3) + "s (<=300s)");
}

// --- criterion 7 ----------------------------------------------------------

void check_robustness_condition_agreement(Ledger& ledger) {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::uniform_real_distribution<double> radius(0.0, 6.0);
  const Shape s{3, 8, 8};
  int agree = 0, total = 0;
  while (total < 1000) {
    Image x(s), mask(Shape{1, 8, 8}), pattern(s);
    for (auto& v : x.values()) v = u(rng);
    for (auto& v : mask.values()) v = u(rng) < 0.25f ? u(rng) : 0.0f;
    for (auto& v : pattern.values()) v = u(rng);
    auto rec = make_certification(total, 0, 0.5 + 0.5 * u(rng) + 1e-6, 1.0, 100, 1000, 0.001);
    if (rec.abstained()) continue;
    rec.radius = radius(rng);
    double sq = 0.0;
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
          const double d = static_cast<double>(mask.at(0, i, j)) * (static_cast<double>(pattern.at(c, i, j)) - x.at(c, i, j));
          sq += d * d;
        }
      }
    }
    const bool direct = std::sqrt(sq) < rec.radius;
    agree += check_robustness_condition(rec, x, SoftTrigger{mask, pattern}) == direct ? 1 : 0;
    ++total;
  }
  ledger.record(7, "robustness condition", agree == total,
                std::to_string(agree) + "/" + std::to_string(total) + " pairs agree with the direct norm comparison");
}

// --- criterion 8 fixtures ---------------------------------------------------

struct MiFixtures {
  bool pass = true;
  std::string detail;
};

MiFixtures check_mi_fixtures() {
  MiFixtures out;
  const int k = 10, n = 4000;
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = i % k;
  Matrix onehot = Matrix::Zero(n, k);
  for (int i = 0; i < n; ++i) onehot(i, y[i]) = 1.0f;
  std::mt19937_64 rng(8);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Matrix noise(n, 32);
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = normal(rng);
  const double log2k = std::log2(k);
  const double i_onehot = mi_estimate(onehot, y, ProbeConfig{}, 1);
  const double i_noise = mi_estimate(noise, y, ProbeConfig{}, 1);
  out.pass = i_onehot >= 0.95 * log2k && i_onehot <= log2k && i_noise <= 0.1 && i_noise >= 0.0;
  out.detail = "one-hot " + num(i_onehot) + " bits (>= " + num(0.95 * log2k) + ", <= " + num(log2k) +
               "), noise " + num(i_noise) + " bits (<= 0.1)";
  return out;
}

// --- BadNets positive control ----------------------------------------------

LockedClassifier train_badnets(const RunConfig& c, const LoadedData& data, int target) {
  const TriggerSpec patch{TriggerPattern(Image(Shape{data.shape.channels, 4, 4}, 1.0f)),
                          Location{data.shape.height - 6, data.shape.width - 6}, {}};
  Dataset poisoned = data.split.train;
  for (std::size_t i = 0; i < data.split.train.size(); i += 10) {
    poisoned.push_back({apply_hw_trigger(data.split.train[i].pixels, patch), target});
  }
  TrainOptions t;
  t.epochs = 15;
  t.lr = c.implant.lr;
  t.batch_size = c.implant.batch_size;
  t.seed = 99;
  return train_supervised(LockedClassifier(c.arch_id, data.shape, data.num_classes, 99), poisoned, t);
}

// --- criterion 9 ------------------------------------------------------------

std::vector<std::uint8_t> param_bytes(const LockedClassifier& m) {
  const auto p = m.network().params();
  const auto* raw = reinterpret_cast<const std::uint8_t*>(p.data());
  return {raw, raw + p.size_bytes()};
}

void check_determinism(Ledger& ledger, const RunConfig& base, const LoadedData& data) {
  RunConfig c = base;
  c.implant.epochs = 2;
  c.implant.sigma = 0.25;
  c.certify.sigma = 0.0;
  c.implant.mi_every = 1;
  c.implant.baseline = false;
  c.attack.steps = 40;
  c.attack.lambda_sweep.clear();
  std::vector<std::string> mismatches;
  std::ostringstream sink;

  const auto a = run_implant(c, data, sink);
  const auto b = run_implant(c, data, sink);
  if (to_json(a.metrics).dump() != to_json(b.metrics).dump()) mismatches.push_back("implant metrics");
  if (param_bytes(a.model) != param_bytes(b.model)) mismatches.push_back("implant weights");
  if (mi_curve_csv(*a.mi) != mi_curve_csv(*b.mi)) mismatches.push_back("mi curve");

  const auto split = attack_split(c, data);
  const auto ra = run_adaptive(c, a.model, split);
  const auto rb = run_adaptive(c, a.model, split);
  if (summary_json(ra).dump() != summary_json(rb).dump() || !(ra.soft.mask == rb.soft.mask)) {
    mismatches.push_back("adaptive attack");
  }

  std::vector<CertificationRecord> ca, cb;
  Rng r1(17), r2(17);
  for (int i = 0; i < 5; ++i) {
    ca.push_back(certify(a.model, data.split.test[i].pixels, 0.25, 20, 100, 0.001, r1, i));
    cb.push_back(certify(a.model, data.split.test[i].pixels, 0.25, 20, 100, 0.001, r2, i));
  }
  if (certification_csv(ca) != certification_csv(cb)) mismatches.push_back("certification");

  FinetuneOptions fo;
  fo.epochs = 1;
  const auto spec = trigger_from_config(c, data.shape.channels);
  const auto samples = std::span<const LabeledImage>(data.split.train).first(40);
  const auto fa = finetune_attack(a.model, samples, split.eval, spec, fo);
  const auto fb = finetune_attack(a.model, samples, split.eval, spec, fo);
  if (param_bytes(fa.model) != param_bytes(fb.model) || fa.acc_clean_after != fb.acc_clean_after) {
    mismatches.push_back("finetune");
  }

  std::string detail = "implant, MI curve, adaptive attack, certify and finetune reruns ";
  if (mismatches.empty()) {
    detail += "are bit-identical";
  } else {
    detail += "differ in:";
    for (const auto& m : mismatches) detail += " " + m;
  }
  ledger.record(9, "determinism", mismatches.empty(), detail);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale acceptance checks"};
  std::string dataset = "synth";
  std::string out_dir = "acceptance-out";
  std::vector<int> only;
  app.add_option("--dataset", dataset, "synth | cifar10")->check(CLI::IsMember({"synth", "cifar10"}));
  app.add_option("--out", out_dir, "Directory for the verdict file and run artifacts");
  app.add_option("--only", only, "Run only these criteria");
  CLI11_PARSE(app, argc, argv);

  RunConfig c = profile_defaults("desk");
  c.dataset.name = dataset;
  if (dataset == "cifar10") {
    const char* env = std::getenv("AUTHLOCK_DATA_DIR");
    if (env == nullptr || !fs::exists(fs::path(env) / "test_batch.bin")) {
      std::cout << "SKIP  CIFAR-10 not found; set AUTHLOCK_DATA_DIR to the cifar-10-batches-bin directory\n";
      return 77;
    }
    c.dataset.subset_size = 10000;
    c.dataset.test_size = 10000;
  }
  c.implant.mi_every = 5;
  c.implant.baseline = true;
  c.implant.mi_items = 1000;
  c.output_dir = out_dir;
  validate(c);

  Ledger ledger(std::set<int>(only.begin(), only.end()));
  fs::create_directories(out_dir);
  const auto started = Clock::now();

  if (ledger.wanted(6)) check_smoothing_soundness(ledger);
  if (ledger.wanted(7)) check_robustness_condition_agreement(ledger);

  const std::set<int> model_criteria{1, 2, 3, 4, 5, 8, 9};
  if (std::ranges::any_of(model_criteria, [&](int id) { return ledger.wanted(id); })) {
    const auto data = load_data(c);
    const auto spec = trigger_from_config(c, data.shape.channels);
    const auto split = attack_split(c, data);
    progress("data: " + data.dataset_id + ", " + std::to_string(data.split.train.size()) + " train / " +
             std::to_string(data.split.test.size()) + " test");

    if (ledger.wanted(9)) check_determinism(ledger, c, data);

    std::optional<ImplantOutcome> vanilla;
    if (ledger.wanted(1) || ledger.wanted(2) || ledger.wanted(3) || ledger.wanted(4) || ledger.wanted(5) ||
        ledger.wanted(8)) {
      const auto t0 = Clock::now();
      std::ostringstream log;
      vanilla = run_implant(c, data, log);
      const double secs = seconds_since(t0);
      io::write_text(fs::path(out_dir) / "implant_log.txt", log.str());
      save_checkpoint(fs::path(out_dir) / "vanilla", vanilla->model);
      progress("vanilla implant done in " + num(secs, 4) + "s");
      const auto& m = vanilla->metrics;
      if (ledger.wanted(1)) {
        const double gap = m.acc_auth - m.acc_clean;
        ledger.record(1, "lock effectiveness",
                      m.acc_auth >= 0.80 && m.acc_clean <= 0.15 && gap >= 0.60 && secs <= 7200.0,
                      "acc_auth=" + num(m.acc_auth) + " (>=0.80), acc_clean=" + num(m.acc_clean) +
                          " (<=0.15), gap=" + num(gap) + " (>=0.60), baseline=" + num(*m.acc_baseline) + ", " +
                          std::to_string(c.implant.epochs) + " epochs in " + num(secs, 4) + "s (<=7200s)");
      }
      if (ledger.wanted(8)) {
        const auto fx = check_mi_fixtures();
        const auto& curve = *vanilla->mi;
        io::write_text(fs::path(out_dir) / "mi_curve.csv", mi_curve_csv(curve));
        const double diff = curve.i_auth.back() - curve.i_clean.back();
        const double ratio = curve.auc_clean > 0.0 ? curve.auc_auth / curve.auc_clean
                                                   : std::numeric_limits<double>::infinity();
        bool bounded = true;
        for (std::size_t i = 0; i < curve.epochs.size(); ++i) {
          bounded = bounded && curve.i_auth[i] <= std::log2(data.num_classes) && curve.i_clean[i] <= std::log2(data.num_classes);
        }
        ledger.record(8, "information gating", diff >= 1.0 && ratio >= 3.0 && bounded && fx.pass,
                      "final i_auth-i_clean=" + num(diff) + " bits (>=1), AUC_auth/AUC_clean=" + num(ratio) +
                          " (>=3), curve <= log2 K: " + (bounded ? "yes" : "no") + "; " + fx.detail);
      }
    }

    if (ledger.wanted(2)) {
      const auto t0 = Clock::now();
      const auto r = run_adaptive(c, vanilla->model, split);
      const double secs = seconds_since(t0);
      const double clean = accuracy(vanilla->model, split.eval);
      const double gain = attack_gain(r.acc_reversed, clean);
      save_recovered_trigger(fs::path(out_dir) / "adaptive", r);
      ledger.record(2, "adaptive attack on the vanilla lock",
                    gain >= 0.40 && c.attack.steps <= 2000 && secs <= 600.0 * static_cast<double>(c.attack.lambda_sweep.size()),
                    "acc_reversed=" + num(r.acc_reversed) + ", acc_clean=" + num(clean) + ", gain=" + num(gain) +
                        " (>=0.40), best lambda=" + num(r.lambda_reg) + ", " + std::to_string(c.attack.steps) +
                        " steps per lambda, " + num(secs, 4) + "s for " +
                        std::to_string(c.attack.lambda_sweep.size()) + " lambdas (<=600s each)");
    }

    if (ledger.wanted(4)) {
      const auto t0 = Clock::now();
      AttackOptions o = attack_options(c, vanilla->model);
      o.steps = 500;
      const auto nc = neural_cleanse(vanilla->model, split.optimize, split.eval, o);
      double best_nc = 0.0, best_px = 0.0;
      for (const auto& r : nc.per_class) best_nc = std::max(best_nc, r.acc_reversed);
      for (int k = 0; k < data.num_classes; ++k) {
        AttackOptions po = o;
        po.seed = o.seed + static_cast<std::uint64_t>(k);
        best_px = std::max(best_px, pixel_attack(vanilla->model, split.optimize, split.eval, k, c.attack.pixel_l1, po).acc_reversed);
      }
      io::write_json(fs::path(out_dir) / "anomaly.json", to_json(nc.report));
      progress("standard recovery on the lock done in " + num(seconds_since(t0), 4) + "s");

      const int target = 0;
      const auto badnets = train_badnets(c, data, target);
      AttackOptions bo = attack_options(c, badnets);
      bo.steps = 500;
      bo.lambda_reg = 1e-3;
      const auto nc_ctrl = nc_recover(badnets, split.optimize, split.eval, target, bo);
      const auto px_ctrl = pixel_attack(badnets, split.optimize, split.eval, target, c.attack.pixel_l1, bo);
      const double idx = nc.report.anomaly_index;
      const bool pass = best_nc <= 0.50 && best_px <= 0.50 && idx <= 2.0 && nc_ctrl.target_hit_rate >= 0.90 &&
                        px_ctrl.target_hit_rate >= 0.90;
      ledger.record(4, "standard-recovery resistance", pass,
                    "best NC true-label acc=" + num(best_nc) + ", best pixel acc=" + num(best_px) +
                        " (<=0.50), anomaly index=" + num(idx) + " (<=2.0); BadNets control hit rate NC=" +
                        num(nc_ctrl.target_hit_rate) + ", pixel=" + num(px_ctrl.target_hit_rate) + " (>=0.90)");
    }

    if (ledger.wanted(5)) {
      const auto t0 = Clock::now();
      const auto comp = build_composite(data.split.train, spec, data.num_classes, c.implant.seed);
      HardenOptions h;
      h.steps = 300;
      h.batch_size = c.implant.batch_size;
      h.seed = c.implant.seed;
      const auto hardened = anti_finetune_harden(vanilla->model, comp, data.split.train, h);
      FinetuneOptions fo;
      fo.epochs = c.attack.finetune_epochs;
      fo.lr = c.attack.finetune_lr;
      fo.seed = c.attack.seed;
      const auto samples = std::span<const LabeledImage>(split.optimize).first(c.attack.finetune_samples);
      const auto r = finetune_attack(hardened, samples, split.eval, spec, fo);
      ledger.record(5, "finetuning resistance", r.delta_acc_clean <= 0.05 && std::abs(r.delta_acc_auth) <= 0.02,
                    "acc_clean " + num(r.acc_clean_before) + " -> " + num(r.acc_clean_after) + " (delta " +
                        num(r.delta_acc_clean) + ", <=0.05), acc_auth " + num(r.acc_auth_before) + " -> " +
                        num(r.acc_auth_after) + " (|delta| " + num(std::abs(r.delta_acc_auth)) + ", <=0.02); " +
                        std::to_string(samples.size()) + " samples, " + std::to_string(fo.epochs) + " epochs, " +
                        num(seconds_since(t0), 4) + "s");
    }

    if (ledger.wanted(3)) {
      const auto t0 = Clock::now();
      RunConfig ac = c;
      ac.ablate_sigmas.erase(std::remove(ac.ablate_sigmas.begin(), ac.ablate_sigmas.end(), 0.0), ac.ablate_sigmas.end());
      std::ostringstream log;
      auto rows = run_sigma_ablation(ac, data, log);
      if (vanilla) {
        AblationRow zero;
        zero.acc_auth = accuracy(vanilla->model, split.eval, spec);
        zero.acc_clean = accuracy(vanilla->model, split.eval);
        zero.acc_reversed = run_adaptive(c, vanilla->model, split).acc_reversed;
        zero.gain_att = attack_gain(zero.acc_reversed, zero.acc_clean);
        rows.insert(rows.begin(), zero);
      }
      io::write_text(fs::path(out_dir) / "ablation.csv", ablation_csv(rows));
      const auto pick = calibrate_sigma(rows);
      std::string table;
      for (const auto& r : rows) {
        table += " [sigma=" + num(r.sigma) + " auth=" + num(r.acc_auth, 3) + " clean=" + num(r.acc_clean, 3) +
                 " rev=" + num(r.acc_reversed, 3) + " gain=" + num(r.gain_att, 3);
        if (r.smoothed_auth) {
          table += " vote auth/clean/rev=" + num(*r.smoothed_auth, 3) + "/" + num(*r.smoothed_clean, 3) + "/" +
                   num(*r.smoothed_reversed, 3);
        }
        table += "]";
      }
      ledger.record(3, "certified defense neutralization", pick.has_value(),
                    (pick ? "calibrated sigma=" + num(pick->sigma) + " gain=" + num(pick->gain_att) +
                                " acc_auth=" + num(pick->acc_auth) +
                                " acc_clean=" + num(pick->acc_clean) + " (lock gap " +
                                num(pick->acc_auth - pick->acc_clean, 3) + ")"
                          : std::string("no sigma reaches |gain|<=0.05 with acc_auth>=0.55")) +
                        ";" + table + " (" + num(seconds_since(t0), 4) + "s)");
    }
  }

  ledger.write_json(fs::path(out_dir) / "verdicts.json");
  std::cout << "total time " << num(seconds_since(started), 5) << "s; "
            << (ledger.all_pass() ? "all criteria pass" : "some criteria fail") << '\n';
  return ledger.all_pass() ? 0 : 1;
}

#include "authlock/config.hpp"

#include <cmath>

#include "authlock/serialize.hpp"

namespace authlock {

using nlohmann::json;

namespace {

/// Rejects keys absent from the reference tree. Arrays and scalars are leaves.
void check_keys(const json& ref, const json& j, const std::string& prefix) {
  if (!j.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (const auto& [key, value] : j.items()) {
    const std::string field = prefix.empty() ? key : prefix + "." + key;
    if (!ref.contains(key)) throw ConfigError(field, "unknown key");
    if (ref[key].is_object()) check_keys(ref[key], value, field);
  }
}

template <typename T>
T get(const json& j, const std::string& field) {
  const json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = field.find('.', start);
    node = &node->at(field.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return node->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(field, "wrong value type");
  }
}

RunConfig from_json(const json& j) {
  RunConfig c;
  c.profile = get<std::string>(j, "profile");
  c.dataset.name = get<std::string>(j, "dataset.name");
  c.dataset.path = get<std::string>(j, "dataset.path");
  c.dataset.subset_size = get<std::size_t>(j, "dataset.subset_size");
  c.dataset.test_size = get<std::size_t>(j, "dataset.test_size");
  auto& s = c.dataset.synth;
  s.n_train = get<int>(j, "dataset.synth.n_train");
  s.n_test = get<int>(j, "dataset.synth.n_test");
  s.num_classes = get<int>(j, "dataset.synth.num_classes");
  const auto shape = get<std::vector<int>>(j, "dataset.synth.shape");
  if (shape.size() != 3) throw ConfigError("dataset.synth.shape", "expected [channels, height, width]");
  s.shape = Shape{shape[0], shape[1], shape[2]};
  s.seed = get<std::uint64_t>(j, "dataset.synth.seed");
  s.noise = get<double>(j, "dataset.synth.noise");
  s.blobs = get<int>(j, "dataset.synth.blobs");
  s.jitter = get<int>(j, "dataset.synth.jitter");
  s.distractors = get<int>(j, "dataset.synth.distractors");
  c.arch_id = get<std::string>(j, "arch_id");
  c.trigger.device_id = get<std::string>(j, "trigger.device_id");
  c.trigger.challenge = get<std::string>(j, "trigger.challenge");
  c.trigger.patch_h = get<int>(j, "trigger.patch_h");
  c.trigger.patch_w = get<int>(j, "trigger.patch_w");
  const auto loc = get<std::vector<int>>(j, "trigger.location");
  if (loc.size() != 2) throw ConfigError("trigger.location", "expected [row, col]");
  c.trigger.location = Location{loc[0], loc[1]};
  c.implant.lambda_rand = get<double>(j, "implant.lambda_rand");
  c.implant.epochs = get<int>(j, "implant.epochs");
  c.implant.lr = get<double>(j, "implant.lr");
  c.implant.sigma = get<double>(j, "implant.sigma");
  c.implant.seed = get<std::uint64_t>(j, "implant.seed");
  c.implant.batch_size = get<int>(j, "implant.batch_size");
  c.implant.harden_steps_per_epoch = get<int>(j, "implant.harden_steps_per_epoch");
  c.implant.baseline = get<bool>(j, "implant.baseline");
  c.implant.mi_every = get<int>(j, "implant.mi_every");
  c.implant.mi_items = get<std::size_t>(j, "implant.mi_items");
  c.attack.lambda_reg = get<double>(j, "attack.lambda_reg");
  c.attack.lambda_sweep = get<std::vector<double>>(j, "attack.lambda_sweep");
  c.attack.steps = get<int>(j, "attack.steps");
  c.attack.lr = get<double>(j, "attack.lr");
  c.attack.seed = get<std::uint64_t>(j, "attack.seed");
  c.attack.optimize_items = get<std::size_t>(j, "attack.optimize_items");
  c.attack.pixel_l1 = get<double>(j, "attack.pixel_l1");
  c.attack.finetune_samples = get<int>(j, "attack.finetune_samples");
  c.attack.finetune_epochs = get<int>(j, "attack.finetune_epochs");
  c.attack.finetune_lr = get<double>(j, "attack.finetune_lr");
  c.certify.sigma = get<double>(j, "certify.sigma");
  c.certify.sigma_override = get<bool>(j, "certify.sigma_override");
  c.certify.n0 = get<int>(j, "certify.n0");
  c.certify.n = get<int>(j, "certify.n");
  c.certify.alpha = get<double>(j, "certify.alpha");
  c.certify.max_inputs = get<std::size_t>(j, "certify.max_inputs");
  c.certify.seed = get<std::uint64_t>(j, "certify.seed");
  c.ablate_sigmas = get<std::vector<double>>(j, "ablate_sigmas");
  c.output_dir = get<std::string>(j, "output_dir");
  return c;
}

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw ConfigError(field, what);
}

}  // namespace

RunConfig profile_defaults(const std::string& profile) {
  RunConfig c;
  c.profile = profile;
  auto& s = c.dataset.synth;
  s.num_classes = 10;
  s.noise = 0.05;
  s.jitter = 4;
  s.distractors = 6;
  if (profile == "desk") {
    s.n_train = 4000;
    s.n_test = 2000;
    c.dataset.subset_size = 10000;
    c.implant.epochs = 30;
    c.attack.steps = 1000;
  } else if (profile == "paper") {
    s.n_train = 50000;
    s.n_test = 10000;
    c.dataset.subset_size = 0;
    c.implant.epochs = 200;
    c.attack.steps = 2000;
    c.certify.n = 100000;
    c.certify.max_inputs = 500;
  } else {
    throw ConfigError("profile", "expected 'desk' or 'paper'");
  }
  return c;
}

json to_json(const RunConfig& c) {
  const auto& s = c.dataset.synth;
  return {
      {"profile", c.profile},
      {"dataset",
       {{"name", c.dataset.name},
        {"path", c.dataset.path},
        {"subset_size", c.dataset.subset_size},
        {"test_size", c.dataset.test_size},
        {"synth",
         {{"n_train", s.n_train},
          {"n_test", s.n_test},
          {"num_classes", s.num_classes},
          {"shape", {s.shape.channels, s.shape.height, s.shape.width}},
          {"seed", s.seed},
          {"noise", s.noise},
          {"blobs", s.blobs},
          {"jitter", s.jitter},
          {"distractors", s.distractors}}}}},
      {"arch_id", c.arch_id},
      {"trigger",
       {{"device_id", c.trigger.device_id},
        {"challenge", c.trigger.challenge},
        {"patch_h", c.trigger.patch_h},
        {"patch_w", c.trigger.patch_w},
        {"location", {c.trigger.location.row, c.trigger.location.col}}}},
      {"implant",
       {{"lambda_rand", c.implant.lambda_rand},
        {"epochs", c.implant.epochs},
        {"lr", c.implant.lr},
        {"sigma", c.implant.sigma},
        {"seed", c.implant.seed},
        {"batch_size", c.implant.batch_size},
        {"harden_steps_per_epoch", c.implant.harden_steps_per_epoch},
        {"baseline", c.implant.baseline},
        {"mi_every", c.implant.mi_every},
        {"mi_items", c.implant.mi_items}}},
      {"attack",
       {{"lambda_reg", c.attack.lambda_reg},
        {"lambda_sweep", c.attack.lambda_sweep},
        {"steps", c.attack.steps},
        {"lr", c.attack.lr},
        {"seed", c.attack.seed},
        {"optimize_items", c.attack.optimize_items},
        {"pixel_l1", c.attack.pixel_l1},
        {"finetune_samples", c.attack.finetune_samples},
        {"finetune_epochs", c.attack.finetune_epochs},
        {"finetune_lr", c.attack.finetune_lr}}},
      {"certify",
       {{"sigma", c.certify.sigma},
        {"sigma_override", c.certify.sigma_override},
        {"n0", c.certify.n0},
        {"n", c.certify.n},
        {"alpha", c.certify.alpha},
        {"max_inputs", c.certify.max_inputs},
        {"seed", c.certify.seed}}},
      {"ablate_sigmas", c.ablate_sigmas},
      {"output_dir", c.output_dir}};
}

RunConfig merge_config(RunConfig base, const json& j) {
  json tree = to_json(base);
  check_keys(tree, j, "");
  tree.merge_patch(j);
  return from_json(tree);
}

void validate(const RunConfig& c) {
  require(c.profile == "desk" || c.profile == "paper", "profile", "expected 'desk' or 'paper'");
  require(c.dataset.name == "synth" || c.dataset.name == "cifar10", "dataset.name",
          "expected 'synth' or 'cifar10'");
  const auto& s = c.dataset.synth;
  require(s.n_train > 0, "dataset.synth.n_train", "must be positive");
  require(s.n_test > 0, "dataset.synth.n_test", "must be positive");
  require(s.num_classes >= 2, "dataset.synth.num_classes", "must be at least 2");
  require(s.shape.channels > 0 && s.shape.height > 0 && s.shape.width > 0, "dataset.synth.shape",
          "dimensions must be positive");
  require(s.noise >= 0.0, "dataset.synth.noise", "must be non-negative");
  require(s.blobs > 0, "dataset.synth.blobs", "must be positive");
  require(s.jitter >= 0, "dataset.synth.jitter", "must be non-negative");
  require(s.distractors >= 0, "dataset.synth.distractors", "must be non-negative");
  require(c.arch_id == "smallcnn" || c.arch_id == "mlp" || c.arch_id == "linear", "arch_id",
          "expected 'smallcnn', 'mlp' or 'linear'");
  require(!c.trigger.device_id.empty(), "trigger.device_id", "must be non-empty");
  require(!c.trigger.challenge.empty(), "trigger.challenge", "must be non-empty");
  require(c.trigger.patch_h > 0, "trigger.patch_h", "must be positive");
  require(c.trigger.patch_w > 0, "trigger.patch_w", "must be positive");
  require(c.trigger.location.row >= 0 && c.trigger.location.col >= 0, "trigger.location",
          "must be non-negative");
  if (c.dataset.name == "synth") {
    require(c.trigger.location.row + c.trigger.patch_h <= s.shape.height &&
                c.trigger.location.col + c.trigger.patch_w <= s.shape.width,
            "trigger.location", "patch does not fit inside the image");
  }
  require(std::isfinite(c.implant.lambda_rand) && c.implant.lambda_rand > 0.0, "implant.lambda_rand",
          "must be positive");
  require(c.implant.epochs >= 0, "implant.epochs", "must be non-negative");
  require(c.implant.lr > 0.0, "implant.lr", "must be positive");
  require(std::isfinite(c.implant.sigma) && c.implant.sigma >= 0.0, "implant.sigma",
          "must be a finite value >= 0");
  require(c.implant.batch_size > 0, "implant.batch_size", "must be positive");
  require(c.implant.harden_steps_per_epoch >= 0, "implant.harden_steps_per_epoch", "must be non-negative");
  require(c.implant.mi_every >= 0, "implant.mi_every", "must be non-negative");
  require(c.attack.lambda_reg >= 0.0, "attack.lambda_reg", "must be non-negative");
  for (double l : c.attack.lambda_sweep) require(l >= 0.0, "attack.lambda_sweep", "values must be non-negative");
  require(c.attack.steps >= 0, "attack.steps", "must be non-negative");
  require(c.attack.lr > 0.0, "attack.lr", "must be positive");
  require(c.attack.optimize_items > 0, "attack.optimize_items", "must be positive");
  require(c.attack.pixel_l1 >= 0.0, "attack.pixel_l1", "must be non-negative");
  require(c.attack.finetune_samples > 0, "attack.finetune_samples", "must be positive");
  require(c.attack.finetune_epochs >= 0, "attack.finetune_epochs", "must be non-negative");
  require(c.attack.finetune_lr > 0.0, "attack.finetune_lr", "must be positive");
  require(std::isfinite(c.certify.sigma) && c.certify.sigma >= 0.0, "certify.sigma",
          "must be a finite value >= 0");
  require(c.certify.sigma == 0.0 || c.certify.sigma == c.implant.sigma || c.certify.sigma_override,
          "certify.sigma", "differs from implant.sigma; set certify.sigma_override to allow it");
  require(c.certify.n0 >= 1, "certify.n0", "must be positive");
  require(c.certify.n >= 1, "certify.n", "must be positive");
  require(c.certify.alpha > 0.0 && c.certify.alpha < 1.0, "certify.alpha", "must lie in (0, 1)");
  require(c.certify.max_inputs > 0, "certify.max_inputs", "must be positive");
  for (double v : c.ablate_sigmas) {
    require(std::isfinite(v) && v >= 0.0, "ablate_sigmas", "values must be finite and >= 0");
  }
  require(!c.output_dir.empty(), "output_dir", "must be non-empty");
}

RunConfig load_config(const std::filesystem::path& file, const std::string& profile) {
  RunConfig c = profile_defaults(profile);
  if (!file.empty()) {
    json j;
    try {
      j = json::parse(io::read_text(file));
    } catch (const json::parse_error& e) {
      throw ConfigError("<root>", file.string() + " is not valid JSON: " + e.what());
    }
    if (j.contains("profile") && j["profile"].is_string() && j["profile"] != profile) {
      c = profile_defaults(j["profile"].get<std::string>());
    }
    c = merge_config(c, j);
  }
  validate(c);
  return c;
}

}  // namespace authlock

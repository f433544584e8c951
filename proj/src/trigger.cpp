#include "authlock/trigger.hpp"

#include <algorithm>
#include <cmath>

#include "authlock/error.hpp"
#include "authlock/serialize.hpp"

namespace authlock {

namespace {

bool in_unit_range(std::span<const float> values) {
  return std::ranges::all_of(values, [](float v) { return v >= 0.0f && v <= 1.0f; });
}

void check_same_shape(const Image& x, const SoftTrigger& t) {
  t.validate_for(x.shape());
}

}  // namespace

TriggerPattern::TriggerPattern(Image values) : values_(std::move(values)) {
  const auto& s = values_.shape();
  if (s.channels <= 0 || s.height <= 0 || s.width <= 0) {
    throw InvalidArgument("trigger pattern dimensions must be positive");
  }
  if (!in_unit_range(values_.values())) {
    throw InvalidArgument("trigger pattern entries must lie in [0, 1]");
  }
}

bool TriggerSpec::fits(const Shape& image) const {
  const auto& p = pattern.shape();
  return p.channels == image.channels && location.row >= 0 && location.col >= 0 &&
         location.row + p.height <= image.height && location.col + p.width <= image.width;
}

void SoftTrigger::validate() const {
  if (mask.shape().channels != 1) throw InvalidArgument("soft trigger mask must be single-channel");
  if (mask.shape().height != pattern.shape().height || mask.shape().width != pattern.shape().width) {
    throw InvalidArgument("soft trigger mask and pattern sizes differ");
  }
  if (!in_unit_range(mask.values())) throw InvalidArgument("soft trigger mask outside [0, 1]");
  if (!in_unit_range(pattern.values())) throw InvalidArgument("soft trigger pattern outside [0, 1]");
}

void SoftTrigger::validate_for(const Shape& image) const {
  if (!(pattern.shape() == image) || mask.shape().height != image.height ||
      mask.shape().width != image.width || mask.shape().channels != 1) {
    throw InvalidArgument("soft trigger shape does not match the image");
  }
}

void apply_hw_trigger_inplace(std::span<float> sample, const Shape& shape, const TriggerSpec& spec) {
  if (!spec.fits(shape)) throw InvalidArgument("trigger patch does not fit inside the image");
  if (sample.size() != shape.size()) throw InvalidArgument("sample size does not match its shape");
  const auto& p = spec.pattern.shape();
  const auto& v = spec.pattern.values();
  for (int c = 0; c < p.channels; ++c) {
    for (int i = 0; i < p.height; ++i) {
      for (int j = 0; j < p.width; ++j) {
        const auto row = static_cast<std::size_t>(spec.location.row + i);
        const auto col = static_cast<std::size_t>(spec.location.col + j);
        sample[(static_cast<std::size_t>(c) * shape.height + row) * shape.width + col] = v.at(c, i, j);
      }
    }
  }
}

Image apply_hw_trigger(const Image& x, const TriggerSpec& spec) {
  Image out = x;
  apply_hw_trigger_inplace(out.values(), out.shape(), spec);
  return out;
}

void apply_soft_trigger_inplace(std::span<float> sample, const Shape& shape,
                                const SoftTrigger& trigger) {
  trigger.validate_for(shape);
  const auto m = trigger.mask.values();
  const auto d = trigger.pattern.values();
  const std::size_t plane = shape.plane();
  for (int c = 0; c < shape.channels; ++c) {
    for (std::size_t k = 0; k < plane; ++k) {
      const std::size_t idx = c * plane + k;
      sample[idx] = (1.0f - m[k]) * sample[idx] + m[k] * d[idx];
    }
  }
}

Image apply_soft_trigger(const Image& x, const SoftTrigger& trigger) {
  Image out = x;
  apply_soft_trigger_inplace(out.values(), out.shape(), trigger);
  return out;
}

void apply_additive_inplace(std::span<float> sample, const Shape& shape,
                            const AdditivePerturbation& p) {
  if (!(p.delta.shape() == shape)) throw InvalidArgument("perturbation shape does not match the image");
  const auto d = p.delta.values();
  for (std::size_t k = 0; k < sample.size(); ++k) sample[k] = std::clamp(sample[k] + d[k], 0.0f, 1.0f);
}

void apply_trigger_inplace(std::span<float> sample, const Shape& shape, const InputTrigger& trigger) {
  std::visit(
      [&](const auto& t) {
        using T = std::decay_t<decltype(t)>;
        if constexpr (std::is_same_v<T, TriggerSpec>) {
          apply_hw_trigger_inplace(sample, shape, t);
        } else if constexpr (std::is_same_v<T, SoftTrigger>) {
          apply_soft_trigger_inplace(sample, shape, t);
        } else if constexpr (std::is_same_v<T, AdditivePerturbation>) {
          apply_additive_inplace(sample, shape, t);
        }
      },
      trigger);
}

double perturbation_l2(const Image& x, const SoftTrigger& trigger) {
  check_same_shape(x, trigger);
  const auto m = trigger.mask.values();
  const auto d = trigger.pattern.values();
  const auto xv = x.values();
  const std::size_t plane = x.shape().plane();
  double sum = 0.0;
  for (int c = 0; c < x.shape().channels; ++c) {
    for (std::size_t k = 0; k < plane; ++k) {
      const std::size_t idx = c * plane + k;
      // (1-m)x + m d - x = m (d - x)
      const double delta = static_cast<double>(m[k]) * (static_cast<double>(d[idx]) - xv[idx]);
      sum += delta * delta;
    }
  }
  return std::sqrt(sum);
}

double mask_l1(const SoftTrigger& trigger) {
  double sum = 0.0;
  for (float v : trigger.mask.values()) sum += std::abs(static_cast<double>(v));
  return sum;
}

SoftTrigger as_soft_trigger(const TriggerSpec& spec, const Shape& image) {
  if (!spec.fits(image)) throw InvalidArgument("trigger patch does not fit inside the image");
  SoftTrigger t{Image({1, image.height, image.width}), Image(image)};
  const auto& p = spec.pattern.shape();
  for (int i = 0; i < p.height; ++i) {
    for (int j = 0; j < p.width; ++j) {
      t.mask.at(0, spec.location.row + i, spec.location.col + j) = 1.0f;
      for (int c = 0; c < p.channels; ++c) {
        t.pattern.at(c, spec.location.row + i, spec.location.col + j) =
            spec.pattern.values().at(c, i, j);
      }
    }
  }
  return t;
}

nlohmann::json to_json(const TriggerSpec& spec) {
  const auto& s = spec.pattern.shape();
  nlohmann::json pattern = nlohmann::json::array();
  for (int c = 0; c < s.channels; ++c) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < s.height; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int j = 0; j < s.width; ++j) row.push_back(spec.pattern.values().at(c, i, j));
      rows.push_back(std::move(row));
    }
    pattern.push_back(std::move(rows));
  }
  return {{"pattern", std::move(pattern)},
          {"location", {spec.location.row, spec.location.col}},
          {"fingerprint_digest", to_hex(spec.fingerprint_digest)}};
}

TriggerSpec trigger_spec_from_json(const nlohmann::json& j) {
  try {
    const auto& pattern = j.at("pattern");
    const int channels = static_cast<int>(pattern.size());
    if (channels == 0 || pattern[0].empty() || pattern[0][0].empty()) {
      throw InvalidArgument("trigger spec pattern is empty");
    }
    const Shape s{channels, static_cast<int>(pattern[0].size()),
                  static_cast<int>(pattern[0][0].size())};
    Image values(s);
    for (int c = 0; c < s.channels; ++c) {
      if (static_cast<int>(pattern[c].size()) != s.height) throw InvalidArgument("ragged pattern");
      for (int i = 0; i < s.height; ++i) {
        if (static_cast<int>(pattern[c][i].size()) != s.width) throw InvalidArgument("ragged pattern");
        for (int jj = 0; jj < s.width; ++jj) values.at(c, i, jj) = pattern[c][i][jj].get<float>();
      }
    }
    const auto& loc = j.at("location");
    return TriggerSpec{TriggerPattern(std::move(values)),
                       Location{loc.at(0).get<int>(), loc.at(1).get<int>()},
                       digest_from_hex(j.at("fingerprint_digest").get<std::string>())};
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("malformed trigger spec: ") + e.what());
  }
}

void save_trigger_spec(const std::filesystem::path& path, const TriggerSpec& spec) {
  io::write_json(path, to_json(spec));
}

TriggerSpec load_trigger_spec(const std::filesystem::path& path) {
  return trigger_spec_from_json(io::read_json(path));
}

void save_soft_trigger(const std::filesystem::path& dir, const SoftTrigger& trigger,
                       const std::string& prefix) {
  trigger.validate();
  std::filesystem::create_directories(dir);
  io::write_f32(dir / (prefix + "mask.bin"), trigger.mask.values());
  io::write_f32(dir / (prefix + "pattern.bin"), trigger.pattern.values());
  const auto& s = trigger.pattern.shape();
  io::write_json(dir / (prefix + "manifest.json"),
                 {{"dtype", "float32-le"},
                  {"mask_shape", {s.height, s.width}},
                  {"pattern_shape", {s.channels, s.height, s.width}},
                  {"mask_file", prefix + "mask.bin"},
                  {"pattern_file", prefix + "pattern.bin"}});
}

SoftTrigger load_soft_trigger(const std::filesystem::path& dir, const std::string& prefix) {
  const auto manifest = io::read_json(dir / (prefix + "manifest.json"));
  const auto& ps = manifest.at("pattern_shape");
  const Shape s{ps.at(0).get<int>(), ps.at(1).get<int>(), ps.at(2).get<int>()};
  SoftTrigger t{Image({1, s.height, s.width}, io::read_f32(dir / (prefix + "mask.bin"), s.plane())),
                Image(s, io::read_f32(dir / (prefix + "pattern.bin"), s.size()))};
  t.validate();
  return t;
}

}  // namespace authlock

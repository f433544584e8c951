#pragma once

#include <filesystem>
#include <span>
#include <variant>

#include <json.hpp>

#include "authlock/bytes.hpp"
#include "authlock/tensor.hpp"

namespace authlock {

/// Patch content of the hardware trigger: a (C, h, w) array with entries in [0, 1].
class TriggerPattern {
 public:
  explicit TriggerPattern(Image values);

  const Image& values() const { return values_; }
  const Shape& shape() const { return values_.shape(); }

  bool operator==(const TriggerPattern&) const = default;

 private:
  Image values_;
};

/// Top-left placement of a patch inside the image grid.
struct Location {
  int row = 0;
  int col = 0;
  bool operator==(const Location&) const = default;
};

/// The legitimate hardware trigger: pattern, placement and the digest of the
/// fingerprint it was derived from.
struct TriggerSpec {
  TriggerPattern pattern;
  Location location;
  Digest fingerprint_digest{};

  bool fits(const Shape& image) const;
};

/// Attacker-side trigger: single-channel mask m in [0,1]^(H,W) broadcast over
/// channels, and pattern in [0,1]^(C,H,W).
struct SoftTrigger {
  Image mask;
  Image pattern;

  /// Throws InvalidArgument if ranges or shapes are inconsistent.
  void validate() const;
  void validate_for(const Shape& image) const;
};

/// Signed full-resolution perturbation applied as clamp(x + delta, 0, 1).
struct AdditivePerturbation {
  Image delta;
};

/// Anything that can be stamped onto an input before classification.
using InputTrigger = std::variant<std::monostate, TriggerSpec, SoftTrigger, AdditivePerturbation>;

/// Overwrites the patch region with the pattern. Throws if the patch does not fit.
Image apply_hw_trigger(const Image& x, const TriggerSpec& spec);
void apply_hw_trigger_inplace(std::span<float> sample, const Shape& shape, const TriggerSpec& spec);

/// out = (1 - m) * x + m * pattern, mask broadcast over channels.
Image apply_soft_trigger(const Image& x, const SoftTrigger& trigger);
void apply_soft_trigger_inplace(std::span<float> sample, const Shape& shape,
                                const SoftTrigger& trigger);

void apply_additive_inplace(std::span<float> sample, const Shape& shape,
                            const AdditivePerturbation& p);

/// Dispatches on the trigger kind; std::monostate leaves the sample unchanged.
void apply_trigger_inplace(std::span<float> sample, const Shape& shape, const InputTrigger& trigger);

/// Euclidean norm of apply_soft_trigger(x, trigger) - x.
double perturbation_l2(const Image& x, const SoftTrigger& trigger);

/// Sum of absolute mask entries.
double mask_l1(const SoftTrigger& trigger);

/// The hardware trigger expressed as a soft trigger with a binary mask.
SoftTrigger as_soft_trigger(const TriggerSpec& spec, const Shape& image);

nlohmann::json to_json(const TriggerSpec& spec);
TriggerSpec trigger_spec_from_json(const nlohmann::json& j);
void save_trigger_spec(const std::filesystem::path& path, const TriggerSpec& spec);
TriggerSpec load_trigger_spec(const std::filesystem::path& path);

/// Writes <prefix>mask.bin, <prefix>pattern.bin and <prefix>manifest.json into dir.
void save_soft_trigger(const std::filesystem::path& dir, const SoftTrigger& trigger,
                       const std::string& prefix = "");
SoftTrigger load_soft_trigger(const std::filesystem::path& dir, const std::string& prefix = "");

}  // namespace authlock

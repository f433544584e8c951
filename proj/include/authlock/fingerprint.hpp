#pragma once

#include <span>
#include <string_view>

#include "authlock/bytes.hpp"
#include "authlock/trigger.hpp"

namespace authlock {

/// Simulated PUF challenge/response record.
struct DeviceFingerprint {
  Bytes device_id;
  Bytes challenge;
  Digest response{};

  bool operator==(const DeviceFingerprint&) const = default;
};

/// Domain-separation key of the simulated PUF.
inline constexpr std::string_view kPufDomainTag = "authority-puf-v1";

/// HMAC-SHA256 keyed by kPufDomainTag over the length-prefixed (device_id, challenge).
DeviceFingerprint derive_fingerprint(std::span<const std::uint8_t> device_id,
                                     std::span<const std::uint8_t> challenge);
DeviceFingerprint derive_fingerprint(std::string_view device_id, std::string_view challenge);

/// First `count` bytes of the stream response || H(response || 1) || H(response || 2) || ...
Bytes expand_response(const Digest& response, std::size_t count);

/// Maps each derived byte b to b / 255 in a (channels, patch_h, patch_w) array.
TriggerPattern fingerprint_to_trigger(const DeviceFingerprint& fp, int channels, int patch_h,
                                      int patch_w);

/// Provenance hash stored in TriggerSpec files.
Digest fingerprint_digest(const DeviceFingerprint& fp);

TriggerSpec make_trigger_spec(const DeviceFingerprint& fp, int channels, int patch_h, int patch_w,
                              Location location = {});

/// True when the spec's pattern and digest are exactly what `fp` derives.
bool verify_provenance(const TriggerSpec& spec, const DeviceFingerprint& fp);

}  // namespace authlock

#include "authlock/fingerprint.hpp"

#include "authlock/error.hpp"

namespace authlock {

namespace {

void append_u32be(Bytes& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void append_field(Bytes& out, std::span<const std::uint8_t> field) {
  append_u32be(out, static_cast<std::uint32_t>(field.size()));
  out.insert(out.end(), field.begin(), field.end());
}

}  // namespace

DeviceFingerprint derive_fingerprint(std::span<const std::uint8_t> device_id,
                                     std::span<const std::uint8_t> challenge) {
  if (device_id.empty()) throw InvalidArgument("device_id must be non-empty");
  if (challenge.empty()) throw InvalidArgument("challenge must be non-empty");
  Bytes message;
  message.reserve(device_id.size() + challenge.size() + 8);
  append_field(message, device_id);
  append_field(message, challenge);
  const auto key = to_bytes(kPufDomainTag);
  return DeviceFingerprint{Bytes(device_id.begin(), device_id.end()),
                           Bytes(challenge.begin(), challenge.end()),
                           hmac_sha256(key, message)};
}

DeviceFingerprint derive_fingerprint(std::string_view device_id, std::string_view challenge) {
  return derive_fingerprint(to_bytes(device_id), to_bytes(challenge));
}

Bytes expand_response(const Digest& response, std::size_t count) {
  Bytes out(response.begin(), response.end());
  for (std::uint32_t counter = 1; out.size() < count; ++counter) {
    Bytes block(response.begin(), response.end());
    append_u32be(block, counter);
    const auto next = sha256(block);
    out.insert(out.end(), next.begin(), next.end());
  }
  out.resize(count);
  return out;
}

TriggerPattern fingerprint_to_trigger(const DeviceFingerprint& fp, int channels, int patch_h,
                                      int patch_w) {
  if (channels <= 0 || patch_h <= 0 || patch_w <= 0) {
    throw InvalidArgument("trigger dimensions must be positive");
  }
  const Shape shape{channels, patch_h, patch_w};
  const auto bytes = expand_response(fp.response, shape.size());
  std::vector<float> values(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) values[i] = static_cast<float>(bytes[i]) / 255.0f;
  return TriggerPattern(Image(shape, std::move(values)));
}

Digest fingerprint_digest(const DeviceFingerprint& fp) {
  Bytes message = to_bytes(kPufDomainTag);
  message.push_back('/');
  append_field(message, fp.device_id);
  append_field(message, fp.challenge);
  message.insert(message.end(), fp.response.begin(), fp.response.end());
  return sha256(message);
}

TriggerSpec make_trigger_spec(const DeviceFingerprint& fp, int channels, int patch_h, int patch_w,
                              Location location) {
  return TriggerSpec{fingerprint_to_trigger(fp, channels, patch_h, patch_w), location,
                     fingerprint_digest(fp)};
}

bool verify_provenance(const TriggerSpec& spec, const DeviceFingerprint& fp) {
  const auto& s = spec.pattern.shape();
  return spec.fingerprint_digest == fingerprint_digest(fp) &&
         spec.pattern == fingerprint_to_trigger(fp, s.channels, s.height, s.width);
}

}  // namespace authlock

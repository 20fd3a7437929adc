#include "acp/common.hpp"

#include <sodium.h>

#include <cstring>
#include <mutex>

namespace acp {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidSeed: return "InvalidSeed";
    case Errc::InvalidSignature: return "InvalidSignature";
    case Errc::InvalidDid: return "InvalidDid";
    case Errc::ReplayDetected: return "ReplayDetected";
    case Errc::ChallengeExpired: return "ChallengeExpired";
    case Errc::CredentialExpired: return "CredentialExpired";
    case Errc::CredentialInvalid: return "CredentialInvalid";
    case Errc::EncodingError: return "EncodingError";
    case Errc::TamperedEnvelope: return "TamperedEnvelope";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::PayloadInvalid: return "PayloadInvalid";
    case Errc::CardInvalid: return "CardInvalid";
    case Errc::ProofMismatch: return "ProofMismatch";
    case Errc::SlaExpired: return "SlaExpired";
    case Errc::SelfInsert: return "SelfInsert";
    case Errc::DiscoveryUnavailable: return "DiscoveryUnavailable";
    case Errc::RecordRejected: return "RecordRejected";
    case Errc::DuplicateRating: return "DuplicateRating";
    case Errc::EntryRejected: return "EntryRejected";
    case Errc::NotAParty: return "NotAParty";
    case Errc::ChainInvalid: return "ChainInvalid";
    case Errc::DepthExceeded: return "DepthExceeded";
    case Errc::SubtaskUnservable: return "SubtaskUnservable";
    case Errc::ScenarioInvalid: return "ScenarioInvalid";
    case Errc::CorruptState: return "CorruptState";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(Errc code, std::string detail)
    : std::runtime_error(std::string(errc_name(code)) + (detail.empty() ? "" : "(" + detail + ")")),
      code_(code),
      detail_(std::move(detail)) {}

std::string to_hex(ByteView data) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (std::uint8_t b : data) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  return -1;
}

}  // namespace

// Lowercase only: hex fields are part of canonical documents.
Bytes from_hex(std::string_view text) {
  if (text.size() % 2 != 0) throw Error(Errc::EncodingError, "odd-length hex");
  Bytes out(text.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = hex_value(text[2 * i]);
    int lo = hex_value(text[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(Errc::EncodingError, "bad hex digit");
    out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return out;
}

void ensure_crypto_initialized() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw std::runtime_error("libsodium initialisation failed");
  });
}

Digest sha256(ByteView data) {
  ensure_crypto_initialized();
  Digest out{};
  crypto_hash_sha256(out.data(), data.data(), data.size());
  return out;
}

static_assert(sizeof(crypto_hash_sha256_state) <= 128);

Sha256Stream::Sha256Stream() {
  ensure_crypto_initialized();
  crypto_hash_sha256_init(reinterpret_cast<crypto_hash_sha256_state*>(state_.data()));
}

Sha256Stream& Sha256Stream::update(ByteView data) {
  crypto_hash_sha256_update(reinterpret_cast<crypto_hash_sha256_state*>(state_.data()), data.data(),
                            data.size());
  return *this;
}

Sha256Stream& Sha256Stream::update_u64(std::uint64_t v) {
  std::array<std::uint8_t, 8> be{};
  for (int i = 7; i >= 0; --i) {
    be[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v & 0xff);
    v >>= 8;
  }
  return update(be);
}

Digest Sha256Stream::finish() {
  Digest out{};
  crypto_hash_sha256_final(reinterpret_cast<crypto_hash_sha256_state*>(state_.data()), out.data());
  return out;
}

std::uint64_t Rng::uniform(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("Rng::uniform bound must be positive");
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    std::uint64_t r = engine_();
    if (r >= threshold) return r % bound;
  }
}

bool Rng::chance_micros(std::int64_t micros) {
  if (micros <= 0) return false;
  if (micros >= 1'000'000) return true;
  return static_cast<std::int64_t>(uniform(1'000'000)) < micros;
}

void Rng::fill(std::span<std::uint8_t> out) {
  std::size_t i = 0;
  while (i < out.size()) {
    std::uint64_t r = engine_();
    for (int b = 0; b < 8 && i < out.size(); ++b, ++i) {
      out[i] = static_cast<std::uint8_t>(r & 0xff);
      r >>= 8;
    }
  }
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace acp

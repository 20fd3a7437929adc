#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace acp {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;
using Digest = std::array<std::uint8_t, 32>;
using SessionId = std::array<std::uint8_t, 16>;

// Simulated milliseconds. Core code never reads a wall clock.
using SimTime = std::int64_t;

enum class Errc {
  InvalidSeed,
  InvalidSignature,
  InvalidDid,
  ReplayDetected,
  ChallengeExpired,
  CredentialExpired,
  CredentialInvalid,
  EncodingError,
  TamperedEnvelope,
  UnsupportedVersion,
  PayloadInvalid,
  CardInvalid,
  ProofMismatch,
  SlaExpired,
  SelfInsert,
  DiscoveryUnavailable,
  RecordRejected,
  DuplicateRating,
  EntryRejected,
  NotAParty,
  ChainInvalid,
  DepthExceeded,
  SubtaskUnservable,
  ScenarioInvalid,
  CorruptState,
  IoError,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, std::string detail);

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

std::string to_hex(ByteView data);
Bytes from_hex(std::string_view text);

template <std::size_t N>
std::array<std::uint8_t, N> array_from_hex(std::string_view text) {
  if (text.size() != 2 * N) {
    throw Error(Errc::EncodingError, "expected " + std::to_string(2 * N) + " hex digits");
  }
  Bytes raw = from_hex(text);
  std::array<std::uint8_t, N> out{};
  std::copy(raw.begin(), raw.end(), out.begin());
  return out;
}

inline ByteView as_bytes(std::string_view text) {
  return {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()};
}

Digest sha256(ByteView data);
inline Digest sha256(std::string_view text) { return sha256(as_bytes(text)); }

/// Incremental SHA-256, used for chained digests and trace hashing.
class Sha256Stream {
 public:
  Sha256Stream();
  Sha256Stream& update(ByteView data);
  Sha256Stream& update(std::string_view text) { return update(as_bytes(text)); }
  Sha256Stream& update_u64(std::uint64_t v);
  Digest finish();

 private:
  alignas(64) std::array<std::uint8_t, 128> state_{};
};

/// Deterministic generator: std::mt19937_64 (fully specified by the C++
/// standard) with explicit rejection-sampled bounded draws, so streams can be
/// reproduced bit-for-bit by any implementation of MT19937-64.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, bound). bound must be > 0.
  std::uint64_t uniform(std::uint64_t bound);
  /// True with probability micros / 1'000'000.
  bool chance_micros(std::int64_t micros);
  void fill(std::span<std::uint8_t> out);

  template <std::size_t N>
  std::array<std::uint8_t, N> bytes() {
    std::array<std::uint8_t, N> out{};
    fill(out);
    return out;
  }

 private:
  std::mt19937_64 engine_;
};

/// Mixes a base seed with a stream index (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;

void ensure_crypto_initialized();

}  // namespace acp

#pragma once

#include "acp/common.hpp"
#include "acp/doc.hpp"

#include <compare>
#include <set>
#include <string>

namespace acp {

using PublicKey = std::array<std::uint8_t, 32>;
using SecretKey = std::array<std::uint8_t, 32>;  // the Ed25519 seed
using Signature = std::array<std::uint8_t, 64>;
using Nonce = std::array<std::uint8_t, 32>;

inline constexpr SimTime kChallengeTtlMs = 30'000;

struct KeyPair {
  PublicKey public_key{};
  SecretKey secret_key{};
};

/// Deterministic Ed25519 key derivation; seed must be exactly 32 bytes.
KeyPair generate_keypair(ByteView seed);

/// 64-byte key file body: secret || public. The public half is re-derived
/// and checked on load.
Bytes key_file_bytes(const KeyPair& kp);
KeyPair keypair_from_file_bytes(ByteView raw);

std::string base58_encode(ByteView data);
Bytes base58_decode(std::string_view text);  // throws InvalidDid on bad alphabet

/// did:acp:<base-58 id>. Ordering is by rendered text.
class Did {
 public:
  static constexpr std::string_view kPrefix = "did:acp:";
  static constexpr std::size_t kMaxIdLength = 64;

  Did() = default;
  static Did parse(std::string_view rendered);
  /// Inverse of raw(): the base-58 rendering of the given id bytes.
  static Did from_raw(ByteView id_bytes);

  const std::string& id() const { return id_; }
  std::string str() const { return std::string(kPrefix) + id_; }
  Bytes raw() const { return base58_decode(id_); }
  bool empty() const { return id_.empty(); }

  friend auto operator<=>(const Did&, const Did&) = default;
  friend bool operator==(const Did&, const Did&) = default;

 private:
  std::string id_;
};

/// base-58 of the first 20 bytes of SHA-256(public key).
Did did_from_public_key(const PublicKey& pk);

Signature sign(const KeyPair& kp, ByteView message);
/// Throws InvalidSignature if sig is not 64 bytes.
bool verify(const PublicKey& pk, ByteView message, ByteView sig);
inline bool verify(const PublicKey& pk, ByteView message, const Signature& sig) {
  return verify(pk, message, ByteView(sig));
}

struct Challenge {
  Nonce nonce{};
  SimTime issued_at = 0;
  Did challenger;

  Doc to_doc() const;
  static Challenge from_doc(const Doc& d);
  /// Domain-separated bytes the responder signs.
  Bytes signing_bytes() const;
};

/// Nonces already answered; owned by one node runtime.
class NonceRegistry {
 public:
  bool consumed(const Nonce& n) const { return seen_.count(n) != 0; }
  void consume(const Nonce& n) { seen_.insert(n); }
  std::size_t size() const { return seen_.size(); }

 private:
  std::set<Nonce> seen_;
};

Challenge issue_challenge(const Did& challenger, Rng& rng, SimTime now);
Signature answer_challenge(const KeyPair& kp, const Challenge& c);
/// Returns false for a wrong key/signature. Throws ReplayDetected when the
/// nonce was already consumed and ChallengeExpired after the TTL. A
/// successful verification consumes the nonce.
bool verify_challenge(const PublicKey& pk, const Challenge& c, const Signature& sig, NonceRegistry& consumed,
                      SimTime now, SimTime ttl = kChallengeTtlMs);

struct VerifiableCredential {
  Did subject;
  Did issuer;
  std::string claim;
  SimTime expires_at = 0;
  Signature signature{};

  Doc unsigned_doc() const;
  Doc to_doc() const;
  static VerifiableCredential from_doc(const Doc& d);
};

/// Throws CredentialExpired if expires_at <= now.
VerifiableCredential issue_credential(const KeyPair& issuer, const Did& subject, std::string claim,
                                      SimTime expires_at, SimTime now);
/// Throws CredentialInvalid (signature or issuer key mismatch) or
/// CredentialExpired (now >= expires_at).
void check_credential(const VerifiableCredential& vc, const PublicKey& issuer_pk, SimTime now);
bool verify_credential(const VerifiableCredential& vc, const PublicKey& issuer_pk, SimTime now);

}  // namespace acp

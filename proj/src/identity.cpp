#include "acp/identity.hpp"

#include <sodium.h>

#include <algorithm>

namespace acp {

namespace {

constexpr std::string_view kAlphabet = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz";
constexpr std::string_view kChallengeDomain = "acp/challenge/v1\n";
constexpr std::string_view kCredentialDomain = "acp/credential/v1\n";

int b58_index(char c) {
  auto pos = kAlphabet.find(c);
  return pos == std::string_view::npos ? -1 : static_cast<int>(pos);
}

Bytes with_domain(std::string_view domain, const Doc& d) {
  std::string s(domain);
  s += canonical_encode(d);
  return Bytes(s.begin(), s.end());
}

}  // namespace

KeyPair generate_keypair(ByteView seed) {
  if (seed.size() != 32) throw Error(Errc::InvalidSeed, "seed must be 32 bytes, got " + std::to_string(seed.size()));
  ensure_crypto_initialized();
  KeyPair kp;
  std::array<std::uint8_t, crypto_sign_SECRETKEYBYTES> full{};
  crypto_sign_seed_keypair(kp.public_key.data(), full.data(), seed.data());
  std::copy_n(seed.begin(), 32, kp.secret_key.begin());
  sodium_memzero(full.data(), full.size());
  return kp;
}

Bytes key_file_bytes(const KeyPair& kp) {
  Bytes out(kp.secret_key.begin(), kp.secret_key.end());
  out.insert(out.end(), kp.public_key.begin(), kp.public_key.end());
  return out;
}

KeyPair keypair_from_file_bytes(ByteView raw) {
  if (raw.size() != 64) throw Error(Errc::InvalidSeed, "key file must be 64 bytes");
  KeyPair kp = generate_keypair(raw.first(32));
  if (!std::equal(kp.public_key.begin(), kp.public_key.end(), raw.begin() + 32)) {
    throw Error(Errc::InvalidSeed, "key file public half does not match secret");
  }
  return kp;
}

std::string base58_encode(ByteView data) {
  std::size_t zeros = 0;
  while (zeros < data.size() && data[zeros] == 0) ++zeros;
  // base-256 -> base-58 long division, digits little-endian
  std::vector<std::uint8_t> digits;
  digits.reserve(data.size() * 138 / 100 + 1);
  for (std::size_t i = zeros; i < data.size(); ++i) {
    unsigned carry = data[i];
    for (auto& d : digits) {
      carry += static_cast<unsigned>(d) << 8;
      d = static_cast<std::uint8_t>(carry % 58);
      carry /= 58;
    }
    while (carry > 0) {
      digits.push_back(static_cast<std::uint8_t>(carry % 58));
      carry /= 58;
    }
  }
  std::string out(zeros, '1');
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) out.push_back(kAlphabet[*it]);
  return out;
}

Bytes base58_decode(std::string_view text) {
  std::size_t ones = 0;
  while (ones < text.size() && text[ones] == '1') ++ones;
  std::vector<std::uint8_t> bytes;  // little-endian
  for (std::size_t i = ones; i < text.size(); ++i) {
    int v = b58_index(text[i]);
    if (v < 0) throw Error(Errc::InvalidDid, "character outside the base-58 alphabet");
    unsigned carry = static_cast<unsigned>(v);
    for (auto& b : bytes) {
      carry += static_cast<unsigned>(b) * 58;
      b = static_cast<std::uint8_t>(carry & 0xff);
      carry >>= 8;
    }
    while (carry > 0) {
      bytes.push_back(static_cast<std::uint8_t>(carry & 0xff));
      carry >>= 8;
    }
  }
  Bytes out(ones, 0);
  out.insert(out.end(), bytes.rbegin(), bytes.rend());
  return out;
}

Did Did::parse(std::string_view rendered) {
  if (!rendered.starts_with(kPrefix)) throw Error(Errc::InvalidDid, "missing did:acp: prefix");
  std::string_view id = rendered.substr(kPrefix.size());
  if (id.empty()) throw Error(Errc::InvalidDid, "empty id");
  if (id.size() > kMaxIdLength) throw Error(Errc::InvalidDid, "id too long");
  for (char c : id) {
    if (b58_index(c) < 0) throw Error(Errc::InvalidDid, "character outside the base-58 alphabet");
  }
  Did d;
  d.id_ = std::string(id);
  return d;
}

Did Did::from_raw(ByteView id_bytes) {
  if (id_bytes.empty()) throw Error(Errc::InvalidDid, "empty id");
  Did d;
  d.id_ = base58_encode(id_bytes);
  if (d.id_.size() > kMaxIdLength) throw Error(Errc::InvalidDid, "id too long");
  return d;
}

Did did_from_public_key(const PublicKey& pk) {
  Digest h = sha256(ByteView(pk));
  return Did::from_raw(ByteView(h).first(20));
}

Signature sign(const KeyPair& kp, ByteView message) {
  ensure_crypto_initialized();
  std::array<std::uint8_t, crypto_sign_SECRETKEYBYTES> full{};
  std::copy(kp.secret_key.begin(), kp.secret_key.end(), full.begin());
  std::copy(kp.public_key.begin(), kp.public_key.end(), full.begin() + 32);
  Signature sig{};
  crypto_sign_detached(sig.data(), nullptr, message.data(), message.size(), full.data());
  sodium_memzero(full.data(), full.size());
  return sig;
}

bool verify(const PublicKey& pk, ByteView message, ByteView sig) {
  if (sig.size() != crypto_sign_BYTES) throw Error(Errc::InvalidSignature, "signature must be 64 bytes");
  ensure_crypto_initialized();
  return crypto_sign_verify_detached(sig.data(), message.data(), message.size(), pk.data()) == 0;
}

// ---------------------------------------------------------------------------

Doc Challenge::to_doc() const {
  Doc d;
  d.set("challenger", challenger.str());
  d.set("issued_at", issued_at);
  d.set("nonce", to_hex(nonce));
  return d;
}

Challenge Challenge::from_doc(const Doc& d) {
  Challenge c;
  c.challenger = Did::parse(d.at("challenger").as_text());
  c.issued_at = d.at("issued_at").as_int();
  c.nonce = array_from_hex<32>(d.at("nonce").as_text());
  return c;
}

Bytes Challenge::signing_bytes() const { return with_domain(kChallengeDomain, to_doc()); }

Challenge issue_challenge(const Did& challenger, Rng& rng, SimTime now) {
  Challenge c;
  c.nonce = rng.bytes<32>();
  c.issued_at = now;
  c.challenger = challenger;
  return c;
}

Signature answer_challenge(const KeyPair& kp, const Challenge& c) { return sign(kp, c.signing_bytes()); }

bool verify_challenge(const PublicKey& pk, const Challenge& c, const Signature& sig, NonceRegistry& consumed,
                      SimTime now, SimTime ttl) {
  if (consumed.consumed(c.nonce)) throw Error(Errc::ReplayDetected, "challenge nonce already used");
  if (now - c.issued_at > ttl) throw Error(Errc::ChallengeExpired, "");
  if (!verify(pk, c.signing_bytes(), sig)) return false;
  consumed.consume(c.nonce);
  return true;
}

// ---------------------------------------------------------------------------

Doc VerifiableCredential::unsigned_doc() const {
  Doc d;
  d.set("claim", claim);
  d.set("expires_at", expires_at);
  d.set("issuer", issuer.str());
  d.set("subject", subject.str());
  return d;
}

Doc VerifiableCredential::to_doc() const {
  Doc d = unsigned_doc();
  d.set("signature", to_hex(signature));
  return d;
}

VerifiableCredential VerifiableCredential::from_doc(const Doc& d) {
  VerifiableCredential vc;
  vc.claim = d.at("claim").as_text();
  vc.expires_at = d.at("expires_at").as_int();
  vc.issuer = Did::parse(d.at("issuer").as_text());
  vc.subject = Did::parse(d.at("subject").as_text());
  vc.signature = array_from_hex<64>(d.at("signature").as_text());
  return vc;
}

VerifiableCredential issue_credential(const KeyPair& issuer, const Did& subject, std::string claim,
                                      SimTime expires_at, SimTime now) {
  if (expires_at <= now) throw Error(Errc::CredentialExpired, "expires_at must lie in the future");
  VerifiableCredential vc;
  vc.subject = subject;
  vc.issuer = did_from_public_key(issuer.public_key);
  vc.claim = std::move(claim);
  vc.expires_at = expires_at;
  vc.signature = sign(issuer, with_domain(kCredentialDomain, vc.unsigned_doc()));
  return vc;
}

void check_credential(const VerifiableCredential& vc, const PublicKey& issuer_pk, SimTime now) {
  if (did_from_public_key(issuer_pk) != vc.issuer) throw Error(Errc::CredentialInvalid, "issuer key mismatch");
  if (!verify(issuer_pk, with_domain(kCredentialDomain, vc.unsigned_doc()), vc.signature)) {
    throw Error(Errc::CredentialInvalid, "bad signature");
  }
  if (!(now < vc.expires_at)) throw Error(Errc::CredentialExpired, "");
}

bool verify_credential(const VerifiableCredential& vc, const PublicKey& issuer_pk, SimTime now) {
  try {
    check_credential(vc, issuer_pk, now);
    return true;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace acp

#pragma once

#include "acp/common.hpp"
#include "acp/doc.hpp"
#include "acp/identity.hpp"

#include <array>
#include <optional>
#include <set>
#include <tuple>

namespace acp {

enum class MsgType : std::uint8_t {
  Probe = 1,
  Bid,
  Commit,
  Decline,
  Result,
  Rate,
  Abort,
  Announce,
  DhtFind,
  DhtStore,
  DhtReply,
  Challenge,
  ChallengeResponse,
};

inline constexpr std::array<MsgType, 13> kAllMsgTypes = {
    MsgType::Probe,   MsgType::Bid,      MsgType::Commit,   MsgType::Decline,   MsgType::Result,
    MsgType::Rate,    MsgType::Abort,    MsgType::Announce, MsgType::DhtFind,   MsgType::DhtStore,
    MsgType::DhtReply, MsgType::Challenge, MsgType::ChallengeResponse,
};

std::string_view to_string(MsgType t);
std::optional<MsgType> msg_type_from_string(std::string_view name);

inline constexpr std::uint8_t kEnvelopeVersion = 1;

struct EnvelopeHeader {
  MsgType type = MsgType::Probe;
  Did recipient;
  SessionId session{};
  std::uint64_t sequence = 0;
  SimTime sent_at = 0;
};

/// Signed protocol message. Wire layout (all integers unsigned LEB128,
/// minimal length):
///
///   u8 version | u8 type | u8 len, sender id bytes | u8 len, recipient id bytes
///   | 16 session | seq | sent_at | payload length, canonical payload text
///   | 64 signature over every preceding byte
///
/// Did ids travel as their base-58-decoded bytes.
struct Envelope {
  std::uint8_t version = kEnvelopeVersion;
  MsgType type = MsgType::Probe;
  Did sender;
  Did recipient;
  SessionId session{};
  std::uint64_t sequence = 0;
  SimTime sent_at = 0;
  Doc payload;
  Signature signature{};

  Bytes signed_bytes() const;
  Bytes encode() const;
  /// Strict: rejects trailing bytes, non-minimal integers and non-canonical
  /// payload text (EncodingError); unknown versions give UnsupportedVersion.
  static Envelope decode(ByteView raw);
  Digest digest() const { return sha256(ByteView(encode())); }
};

Envelope seal(const KeyPair& kp, const EnvelopeHeader& header, Doc payload);

/// Tracks (session, sender, sequence) triples already opened.
class ReplayGuard {
 public:
  bool seen(const Envelope& env) const;
  void record(const Envelope& env);
  std::size_t size() const { return seen_.size(); }

 private:
  std::set<std::tuple<SessionId, std::string, std::uint64_t>> seen_;
};

/// Returns the payload iff the signature verifies under sender_pk and the
/// key belongs to the claimed sender. With a guard, a repeated
/// (session, sender, sequence) throws ReplayDetected.
/// Errors: TamperedEnvelope, UnsupportedVersion, ReplayDetected.
const Doc& open_envelope(const Envelope& env, const PublicKey& sender_pk, ReplayGuard* guard = nullptr);

/// 4-byte big-endian length prefix followed by the encoded envelope.
Bytes frame(const Envelope& env);
Bytes frame_bytes(ByteView encoded);
/// Inverse of frame; EncodingError if the prefix disagrees with the size.
Envelope unframe(ByteView framed);

/// (encoded envelope bytes - encoded payload bytes) / encoded envelope bytes
double envelope_overhead(const Envelope& env);

}  // namespace acp

#include "acp/envelope.hpp"

#include <algorithm>

namespace acp {

namespace {

constexpr std::array<std::string_view, 13> kNames = {
    "PROBE",    "BID",        "COMMIT",   "DECLINE",  "RESULT",    "RATE",               "ABORT",
    "ANNOUNCE", "DHT_FIND",   "DHT_STORE", "DHT_REPLY", "CHALLENGE", "CHALLENGE_RESPONSE",
};

void put_varint(Bytes& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_did(Bytes& out, const Did& did) {
  Bytes raw = did.raw();
  if (raw.empty() || raw.size() > 255) throw Error(Errc::EncodingError, "did id length");
  out.push_back(static_cast<std::uint8_t>(raw.size()));
  out.insert(out.end(), raw.begin(), raw.end());
}

class Reader {
 public:
  explicit Reader(ByteView data) : data_(data) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }

  ByteView take(std::size_t n) {
    need(n);
    ByteView out = data_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint64_t varint() {
    std::uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      std::uint8_t b = u8();
      if (shift == 63 && b > 1) throw Error(Errc::EncodingError, "varint overflow");
      v |= static_cast<std::uint64_t>(b & 0x7f) << shift;
      if ((b & 0x80) == 0) {
        if (b == 0 && shift != 0) throw Error(Errc::EncodingError, "non-minimal varint");
        return v;
      }
    }
    throw Error(Errc::EncodingError, "varint too long");
  }

  Did did() {
    std::uint8_t len = u8();
    if (len == 0) throw Error(Errc::EncodingError, "empty did");
    return Did::from_raw(take(len));
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw Error(Errc::EncodingError, "truncated envelope");
  }

  ByteView data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string_view to_string(MsgType t) {
  auto idx = static_cast<std::size_t>(t) - 1;
  return idx < kNames.size() ? kNames[idx] : "UNKNOWN";
}

std::optional<MsgType> msg_type_from_string(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    if (kNames[i] == name) return static_cast<MsgType>(i + 1);
  }
  return std::nullopt;
}

Bytes Envelope::signed_bytes() const {
  if (sent_at < 0) throw Error(Errc::EncodingError, "negative sent_at");
  Bytes out;
  std::string body = canonical_encode(payload);
  out.reserve(body.size() + 96);
  out.push_back(version);
  out.push_back(static_cast<std::uint8_t>(type));
  put_did(out, sender);
  put_did(out, recipient);
  out.insert(out.end(), session.begin(), session.end());
  put_varint(out, sequence);
  put_varint(out, static_cast<std::uint64_t>(sent_at));
  put_varint(out, body.size());
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

Bytes Envelope::encode() const {
  Bytes out = signed_bytes();
  out.insert(out.end(), signature.begin(), signature.end());
  return out;
}

Envelope Envelope::decode(ByteView raw) {
  Reader r(raw);
  Envelope env;
  env.version = r.u8();
  if (env.version != kEnvelopeVersion) {
    throw Error(Errc::UnsupportedVersion, "envelope version " + std::to_string(env.version));
  }
  std::uint8_t type = r.u8();
  if (type < 1 || type > kAllMsgTypes.size()) throw Error(Errc::EncodingError, "unknown msg_type");
  env.type = static_cast<MsgType>(type);
  env.sender = r.did();
  env.recipient = r.did();
  ByteView sid = r.take(env.session.size());
  std::copy(sid.begin(), sid.end(), env.session.begin());
  env.sequence = r.varint();
  std::uint64_t sent = r.varint();
  if (sent > static_cast<std::uint64_t>(INT64_MAX)) throw Error(Errc::EncodingError, "sent_at out of range");
  env.sent_at = static_cast<SimTime>(sent);
  std::uint64_t len = r.varint();
  if (len > r.remaining()) throw Error(Errc::EncodingError, "truncated payload");
  ByteView body = r.take(static_cast<std::size_t>(len));
  env.payload = canonical_decode(std::string_view(reinterpret_cast<const char*>(body.data()), body.size()));
  ByteView sig = r.take(env.signature.size());
  std::copy(sig.begin(), sig.end(), env.signature.begin());
  if (r.remaining() != 0) throw Error(Errc::EncodingError, "trailing bytes after signature");
  return env;
}

Envelope seal(const KeyPair& kp, const EnvelopeHeader& header, Doc payload) {
  Envelope env;
  env.type = header.type;
  env.sender = did_from_public_key(kp.public_key);
  env.recipient = header.recipient;
  env.session = header.session;
  env.sequence = header.sequence;
  env.sent_at = header.sent_at;
  env.payload = std::move(payload);
  env.signature = sign(kp, env.signed_bytes());
  return env;
}

bool ReplayGuard::seen(const Envelope& env) const {
  return seen_.count({env.session, env.sender.id(), env.sequence}) != 0;
}

void ReplayGuard::record(const Envelope& env) { seen_.insert({env.session, env.sender.id(), env.sequence}); }

const Doc& open_envelope(const Envelope& env, const PublicKey& sender_pk, ReplayGuard* guard) {
  if (env.version != kEnvelopeVersion) {
    throw Error(Errc::UnsupportedVersion, "envelope version " + std::to_string(env.version));
  }
  if (did_from_public_key(sender_pk) != env.sender) throw Error(Errc::TamperedEnvelope, "sender key mismatch");
  Bytes body;
  try {
    body = env.signed_bytes();
  } catch (const Error&) {
    throw Error(Errc::TamperedEnvelope, "unencodable envelope");
  }
  if (!verify(sender_pk, body, env.signature)) throw Error(Errc::TamperedEnvelope, "bad signature");
  if (guard != nullptr) {
    if (guard->seen(env)) throw Error(Errc::ReplayDetected, "duplicate (session, sender, sequence)");
    guard->record(env);
  }
  return env.payload;
}

Bytes frame_bytes(ByteView encoded) {
  if (encoded.size() > 0xffffffffULL) throw Error(Errc::EncodingError, "frame too large");
  Bytes out;
  out.reserve(encoded.size() + 4);
  auto n = static_cast<std::uint32_t>(encoded.size());
  out.push_back(static_cast<std::uint8_t>(n >> 24));
  out.push_back(static_cast<std::uint8_t>(n >> 16));
  out.push_back(static_cast<std::uint8_t>(n >> 8));
  out.push_back(static_cast<std::uint8_t>(n));
  out.insert(out.end(), encoded.begin(), encoded.end());
  return out;
}

Bytes frame(const Envelope& env) { return frame_bytes(env.encode()); }

Envelope unframe(ByteView framed) {
  if (framed.size() < 4) throw Error(Errc::EncodingError, "short frame");
  std::uint32_t n = (static_cast<std::uint32_t>(framed[0]) << 24) | (static_cast<std::uint32_t>(framed[1]) << 16) |
                    (static_cast<std::uint32_t>(framed[2]) << 8) | framed[3];
  if (framed.size() - 4 != n) throw Error(Errc::EncodingError, "frame length mismatch");
  return Envelope::decode(framed.subspan(4));
}

double envelope_overhead(const Envelope& env) {
  double total = static_cast<double>(env.encode().size());
  double body = static_cast<double>(canonical_encode(env.payload).size());
  return (total - body) / total;
}

}  // namespace acp

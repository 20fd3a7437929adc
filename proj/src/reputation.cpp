#include "acp/reputation.hpp"

#include <sstream>

namespace acp {

namespace {

constexpr std::string_view kEntryDomain = "acp/reputation/v1\n";
constexpr std::string_view kLedgerMagic = "acp-ledger/1";

Decimal one() { return Decimal::from_int(1); }

}  // namespace

Decimal composite_of(int accuracy, Decimal latency_score, int security_score, const ScoreWeights& w) {
  if (security_score == 0) return Decimal{};
  return w.accuracy * Decimal::from_int(accuracy) + w.latency * latency_score +
         w.security * Decimal::from_int(security_score);
}

InteractionScores score_interaction(const SettlementReport& report, const ScoreWeights& w) {
  InteractionScores s;
  s.accuracy = report.accuracy_ok ? 1 : 0;
  s.latency_score = clamp(Decimal::from_int(2) - report.latency_ratio, Decimal{}, one());
  s.security_score = report.violations == 0 ? 1 : 0;
  s.composite = composite_of(s.accuracy, s.latency_score, s.security_score, w);
  return s;
}

Doc ReputationEntry::unsigned_doc() const {
  Doc d;
  d.set("accuracy", accuracy);
  d.set("composite", composite);
  d.set("latency_score", latency_score);
  d.set("ratee", ratee.str());
  d.set("rated_at", rated_at);
  d.set("rater", rater.str());
  d.set("security_score", security_score);
  d.set("session", to_hex(session));
  return d;
}

Doc ReputationEntry::to_doc() const {
  Doc d = unsigned_doc();
  d.set("signature", to_hex(signature));
  return d;
}

ReputationEntry ReputationEntry::from_doc(const Doc& d) {
  if (!d.is_map() || d.as_map().size() != 9) throw Error(Errc::EncodingError, "entry must have 9 fields");
  ReputationEntry e;
  e.accuracy = static_cast<int>(d.at("accuracy").as_int());
  e.composite = d.at("composite").as_decimal();
  e.latency_score = d.at("latency_score").as_decimal();
  e.ratee = Did::parse(d.at("ratee").as_text());
  e.rated_at = d.at("rated_at").as_int();
  e.rater = Did::parse(d.at("rater").as_text());
  e.security_score = static_cast<int>(d.at("security_score").as_int());
  e.session = array_from_hex<16>(d.at("session").as_text());
  e.signature = array_from_hex<64>(d.at("signature").as_text());
  return e;
}

Bytes ReputationEntry::signing_bytes() const {
  std::string s(kEntryDomain);
  s += canonical_encode(unsigned_doc());
  return Bytes(s.begin(), s.end());
}

ReputationEntry make_entry(const KeyPair& rater, const Did& ratee, const SessionId& session,
                           const InteractionScores& s, SimTime rated_at) {
  ReputationEntry e;
  e.rater = did_from_public_key(rater.public_key);
  e.ratee = ratee;
  e.session = session;
  e.accuracy = s.accuracy;
  e.latency_score = s.latency_score;
  e.security_score = s.security_score;
  e.composite = s.composite;
  e.rated_at = rated_at;
  e.signature = sign(rater, e.signing_bytes());
  return e;
}

SessionParties parties_from_commit(const Envelope& commit, const PublicKey& requester_pk) {
  if (commit.type != MsgType::Commit) throw Error(Errc::NotAParty, "evidence is not a COMMIT");
  try {
    open_envelope(commit, requester_pk);
  } catch (const Error& e) {
    throw Error(Errc::NotAParty, std::string("commit evidence: ") + e.what());
  }
  return {commit.session, commit.sender, commit.recipient};
}

// ---------------------------------------------------------------------------

bool Ledger::contains(const Did& rater, const SessionId& session) const {
  return rated_.count({rater.str(), session}) != 0;
}

void Ledger::append(const ReputationEntry& e, const PublicKey& rater_pk, const SessionParties& parties) {
  if (did_from_public_key(rater_pk) != e.rater) throw Error(Errc::EntryRejected, "rater key mismatch");
  if (!verify(rater_pk, e.signing_bytes(), e.signature)) throw Error(Errc::EntryRejected, "bad signature");
  bool in_range = (e.accuracy == 0 || e.accuracy == 1) && (e.security_score == 0 || e.security_score == 1) &&
                  Decimal{} <= e.latency_score && e.latency_score <= one();
  if (!in_range || e.composite != composite_of(e.accuracy, e.latency_score, e.security_score, weights_)) {
    throw Error(Errc::EntryRejected, "inconsistent scores");
  }
  if (parties.session != e.session || parties.requester != e.rater || parties.provider != e.ratee) {
    throw Error(Errc::NotAParty, e.rater.str());
  }
  if (contains(e.rater, e.session)) throw Error(Errc::DuplicateRating, to_hex(e.session));
  push(e, rater_pk);
}

void Ledger::push(const ReputationEntry& e, const PublicKey& rater_pk) {
  Sha256Stream h;
  h.update(head_);
  h.update(canonical_encode(e.to_doc()));
  head_ = h.finish();
  entries_.push_back(e);
  rater_keys_.push_back(rater_pk);
  rated_.insert({e.rater.str(), e.session});
  auto& t = totals_[e.ratee.str()];
  t.first += e.composite.micros();
  t.second += 1;
}

TrustScore Ledger::trust(const Did& who) const {
  auto it = totals_.find(who.str());
  if (it == totals_.end()) return {};
  auto [sum, n] = it->second;
  return {Decimal::from_ratio(sum + Decimal::kScale, (n + 2) * Decimal::kScale), n};
}

std::vector<Did> Ledger::ratees() const {
  std::vector<Did> out;
  for (const auto& [who, _] : totals_) out.push_back(Did::parse(who));
  return out;
}

Digest Ledger::chain_digest(const std::vector<ReputationEntry>& entries) {
  Digest head{};
  for (const auto& e : entries) {
    Sha256Stream h;
    h.update(head);
    h.update(canonical_encode(e.to_doc()));
    head = h.finish();
  }
  return head;
}

std::string Ledger::serialize() const {
  std::string out(kLedgerMagic);
  out += ' ';
  out += to_hex(head_);
  out += ' ';
  out += std::to_string(entries_.size());
  out += '\n';
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    Doc line;
    line.set("entry", entries_[i].to_doc());
    line.set("rater_key", to_hex(rater_keys_[i]));
    out += canonical_encode(line);
    out += '\n';
  }
  return out;
}

Ledger Ledger::parse(std::string_view text, ScoreWeights w) {
  Ledger ledger(w);
  std::istringstream in{std::string(text)};
  std::string header;
  if (!std::getline(in, header)) throw Error(Errc::CorruptState, "missing ledger header");
  std::istringstream hs(header);
  std::string magic, head_hex;
  std::size_t count = 0;
  if (!(hs >> magic >> head_hex >> count) || magic != kLedgerMagic) {
    throw Error(Errc::CorruptState, "bad ledger header");
  }
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    try {
      Doc d = canonical_decode(line);
      ReputationEntry e = ReputationEntry::from_doc(d.at("entry"));
      PublicKey pk = array_from_hex<32>(d.at("rater_key").as_text());
      if (did_from_public_key(pk) != e.rater || !verify(pk, e.signing_bytes(), e.signature)) {
        throw Error(Errc::CorruptState, "signature");
      }
      if (ledger.contains(e.rater, e.session)) throw Error(Errc::CorruptState, "duplicate rating");
      ledger.push(e, pk);
    } catch (const Error& e) {
      throw Error(Errc::CorruptState, "ledger line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (ledger.size() != count) throw Error(Errc::CorruptState, "entry count mismatch");
  if (to_hex(ledger.head()) != head_hex) throw Error(Errc::CorruptState, "chain digest mismatch");
  return ledger;
}

}  // namespace acp

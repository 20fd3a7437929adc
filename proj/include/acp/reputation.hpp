#pragma once

#include "acp/common.hpp"
#include "acp/decimal.hpp"
#include "acp/doc.hpp"
#include "acp/envelope.hpp"
#include "acp/identity.hpp"
#include "acp/negotiation.hpp"

#include <map>
#include <set>
#include <string>
#include <vector>

namespace acp {

struct ScoreWeights {
  Decimal accuracy = Decimal::from_micros(500'000);
  Decimal latency = Decimal::from_micros(300'000);
  Decimal security = Decimal::from_micros(200'000);
};

struct InteractionScores {
  int accuracy = 0;
  Decimal latency_score;
  int security_score = 0;
  Decimal composite;
};

/// latency_score = clamp(2 - latency_ratio, 0, 1); composite is forced to 0
/// when the session saw any protocol violation.
InteractionScores score_interaction(const SettlementReport& report, const ScoreWeights& w = {});
Decimal composite_of(int accuracy, Decimal latency_score, int security_score, const ScoreWeights& w = {});

struct ReputationEntry {
  Did rater;
  Did ratee;
  SessionId session{};
  int accuracy = 0;
  Decimal latency_score;
  int security_score = 0;
  Decimal composite;
  SimTime rated_at = 0;
  Signature signature{};

  Doc unsigned_doc() const;
  Doc to_doc() const;
  static ReputationEntry from_doc(const Doc& d);
  Bytes signing_bytes() const;
};

ReputationEntry make_entry(const KeyPair& rater, const Did& ratee, const SessionId& session,
                           const InteractionScores& s, SimTime rated_at);

/// Who took part in a session, taken from signed evidence.
struct SessionParties {
  SessionId session{};
  Did requester;
  Did provider;
};

/// The requester's signed COMMIT names both parties. Throws NotAParty if
/// the envelope is not a COMMIT or does not verify under requester_pk.
SessionParties parties_from_commit(const Envelope& commit, const PublicKey& requester_pk);

struct TrustScore {
  Decimal score = Decimal::from_micros(500'000);
  std::int64_t interactions = 0;
};

class Ledger {
 public:
  Ledger() = default;
  explicit Ledger(ScoreWeights w) : weights_(w) {}

  /// Errors: EntryRejected (bad signature, rater key mismatch, inconsistent
  /// scores), NotAParty (rater is not the session's requester or ratee not
  /// its provider), DuplicateRating.
  void append(const ReputationEntry& entry, const PublicKey& rater_pk, const SessionParties& parties);

  std::size_t size() const { return entries_.size(); }
  const std::vector<ReputationEntry>& entries() const { return entries_; }
  const Digest& head() const { return head_; }
  bool contains(const Did& rater, const SessionId& session) const;

  /// (sum + 1) / (n + 2) over the composites received by who.
  TrustScore trust(const Did& who) const;
  std::vector<Did> ratees() const;

  /// Ledger file: a header line with the head digest and entry count,
  /// then one canonical {entry, rater_key} document per line.
  std::string serialize() const;
  /// Re-verifies every signature and the digest chain; CorruptState on any
  /// mismatch, truncation or reordering.
  static Ledger parse(std::string_view text, ScoreWeights w = {});

  /// Chain head over entries, starting from 32 zero bytes.
  static Digest chain_digest(const std::vector<ReputationEntry>& entries);

 private:
  void push(const ReputationEntry& entry, const PublicKey& rater_pk);

  ScoreWeights weights_;
  std::vector<ReputationEntry> entries_;
  std::vector<PublicKey> rater_keys_;
  Digest head_{};
  std::set<std::pair<std::string, SessionId>> rated_;
  std::map<std::string, std::pair<std::int64_t, std::int64_t>> totals_;  // ratee -> (sum micros, n)
};

}  // namespace acp

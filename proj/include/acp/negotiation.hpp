#pragma once

#include "acp/common.hpp"
#include "acp/decimal.hpp"
#include "acp/doc.hpp"
#include "acp/envelope.hpp"
#include "acp/identity.hpp"
#include "acp/semantic.hpp"

#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace acp {

/// Per-stage timeout for every waiting state.
inline constexpr SimTime kStageTimeoutMs = 5'000;

enum class Role { Requester, Provider };

enum class SessionState : std::uint8_t {
  // requester
  Init,
  ProbeSent,
  BidReceived,
  Committed,
  AwaitingResult,
  // provider
  Idle,
  ProbeReceived,
  BidSent,
  CommitReceived,
  Executing,
  ResultSent,
  // shared terminal states
  Settled,
  Aborted,
};

inline constexpr std::array<SessionState, 7> kRequesterStates = {
    SessionState::Init,           SessionState::ProbeSent, SessionState::BidReceived, SessionState::Committed,
    SessionState::AwaitingResult, SessionState::Settled,   SessionState::Aborted,
};

inline constexpr std::array<SessionState, 8> kProviderStates = {
    SessionState::Idle,     SessionState::ProbeReceived, SessionState::BidSent, SessionState::CommitReceived,
    SessionState::Executing, SessionState::ResultSent,   SessionState::Settled, SessionState::Aborted,
};

std::string_view to_string(Role r);
std::string_view to_string(SessionState s);
bool is_terminal(SessionState s);
bool belongs_to(Role r, SessionState s);

struct RetryPolicy {
  std::uint32_t max_retries = 0;
  bool renegotiate_on_failure = false;

  Doc to_doc() const;
  static RetryPolicy from_doc(const Doc& d);
  bool allows_retry() const { return renegotiate_on_failure && max_retries > 0; }
  bool operator==(const RetryPolicy&) const = default;
};

struct Sla {
  std::string capability;
  Digest parameters_digest{};
  std::int64_t max_latency_ms = 0;
  Decimal cost;
  std::optional<std::string> data_residency;
  RetryPolicy retry_policy;
  SimTime expires_at = 0;

  Doc to_doc() const;
  static Sla from_doc(const Doc& d);
  bool operator==(const Sla&) const = default;
};

/// SHA-256 of the SLA's canonical encoding.
Digest commit_hash(const Sla& sla);

struct Bid {
  Sla sla;
  std::int64_t estimated_completion_ms = 0;
  Did provider;

  Doc to_doc() const;
  static Bid from_doc(const Doc& d);
};

enum class DeclineReason { CostFloor, LatencyUnachievable, ResidencyMismatch, CapabilityUnsupported, Unauthorized };
std::string_view to_string(DeclineReason r);

struct Decline {
  DeclineReason reason;
};

struct PricingPolicy {
  Decimal floor_cost;
  std::int64_t completion_ms = 100;
  std::int64_t default_max_latency_ms = 1'000;
};

/// Bid whose SLA satisfies every probe constraint, or the reason it cannot.
std::variant<Bid, Decline> make_bid(const Intent& probe, const AgentCard& provider_card, const PricingPolicy& policy,
                                    const RetryPolicy& retry, SimTime now, SimTime stage_timeout = kStageTimeoutMs);

struct ExecutionProof {
  Digest result_digest{};
  Digest commit_digest{};
  SimTime completed_at = 0;
  Signature provider_signature{};

  Doc unsigned_doc() const;
  Doc to_doc() const;
  static ExecutionProof from_doc(const Doc& d);
};

ExecutionProof make_proof(const KeyPair& provider, const Doc& result, const Digest& commit_digest, SimTime now);

struct SettlementReport {
  bool accuracy_ok = false;
  Decimal latency_ratio;
  std::uint32_t violations = 0;
  SimTime elapsed_ms = 0;
};

struct NegotiationSession {
  SessionId id{};
  Role role = Role::Requester;
  Did self;
  Did peer;
  SessionState state = SessionState::Init;

  std::optional<Intent> intent;
  RetryPolicy retry;
  Doc poi_chain = Doc::seq();
  std::optional<Digest> expected_result;

  std::optional<Bid> bid;
  std::optional<Sla> sla;
  std::optional<Digest> commit_digest;
  std::optional<SettlementReport> report;
  bool rated = false;

  SimTime started_at = 0;
  SimTime committed_at = 0;
  SimTime deadline_at = 0;

  std::vector<Digest> transcript;
  std::vector<SessionState> history;
  std::uint64_t next_sequence = 0;
  std::uint32_t violations = 0;

  static NegotiationSession requester(const SessionId& id, const Did& self, const Did& peer);
  static NegotiationSession provider(const SessionId& id, const Did& self, const Did& peer);

  /// Transcript export: ordered digests and visited states.
  Doc transcript_doc() const;
};

/// Throws ProofMismatch (wrong commit binding or bad provider signature) or
/// SlaExpired (completed or delivered after the SLA expiry).
SettlementReport settle(const NegotiationSession& session, const Doc& result, const ExecutionProof& proof, SimTime now,
                        const PublicKey& provider_pk);

// ---------------------------------------------------------------------------
// events and effects

struct EnvelopeIn {
  Envelope envelope;  // already authenticated and opened
};

struct TimerFired {};

namespace command {
struct SendProbe {
  Intent intent;
  RetryPolicy retry;
  Doc poi_chain = Doc::seq();
  std::optional<Digest> expected_result;
};
struct Accept {};
struct Reject {
  std::string reason;
};
struct Dispatch {};
struct Rate {
  Decimal composite;
};
struct SubmitBid {
  Bid bid;
};
struct DeclineProbe {
  DeclineReason reason;
};
struct StartExecution {};
struct DeliverResult {
  Doc result;
};
struct Abort {
  std::string reason;
};
}  // namespace command

using Command = std::variant<command::SendProbe, command::Accept, command::Reject, command::Dispatch, command::Rate,
                             command::SubmitBid, command::DeclineProbe, command::StartExecution,
                             command::DeliverResult, command::Abort>;

using SessionEvent = std::variant<EnvelopeIn, TimerFired, Command>;

namespace effect {
struct ProtocolViolation {
  SessionState state;
  std::string what;
};
struct EvaluateProbe {
  Intent intent;
};
struct BidArrived {
  Bid bid;
};
struct ExecuteTask {
  Sla sla;
};
struct Settled {
  SettlementReport report;
};
struct ProviderSettled {
  Decimal composite;
};
struct Aborted {
  std::string reason;
  bool renegotiate = false;
};
struct ArmTimer {
  SimTime at;
};
}  // namespace effect

using Effect = std::variant<effect::ProtocolViolation, effect::EvaluateProbe, effect::BidArrived, effect::ExecuteTask,
                            effect::Settled, effect::ProviderSettled, effect::Aborted, effect::ArmTimer>;

struct StepContext {
  const KeyPair* keys = nullptr;
  SimTime now = 0;
  std::optional<PublicKey> peer_key;
  SimTime stage_timeout = kStageTimeoutMs;
};

struct StepResult {
  NegotiationSession session;
  std::vector<Envelope> outbound;
  std::vector<Effect> effects;
};

/// Which inbound message types a session accepts in a given state.
bool legal_message(Role role, SessionState state, MsgType type);

/// Pure, total transition function. Illegal inputs leave the state as it was
/// and report an effect::ProtocolViolation; nothing is thrown.
StepResult step(NegotiationSession session, const SessionEvent& event, const StepContext& ctx);

}  // namespace acp

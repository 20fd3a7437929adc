#pragma once

#include "acp/common.hpp"
#include "acp/discovery.hpp"
#include "acp/envelope.hpp"
#include "acp/identity.hpp"
#include "acp/negotiation.hpp"
#include "acp/orchestration.hpp"
#include "acp/reputation.hpp"
#include "acp/semantic.hpp"

#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace acp {

/// How peers authenticate before negotiation traffic is accepted.
///  Acp           challenge-response once per peer pair, then cached
///  LocalTrusted  no challenges (same-host baseline)
///  VerboseRpc    every negotiation message needs a fresh challenge
enum class ProtocolMode { Acp, LocalTrusted, VerboseRpc };
std::string_view to_string(ProtocolMode m);
ProtocolMode protocol_mode_from_string(std::string_view s);

enum class BehaviorKind { Provider, Faulty, Slow, Delegating, Requester, Registry, Bystander };

struct Behavior {
  BehaviorKind kind = BehaviorKind::Provider;
  std::string detail;  // optional capability hint after the ':'

  bool provides() const {
    return kind == BehaviorKind::Provider || kind == BehaviorKind::Faulty || kind == BehaviorKind::Slow ||
           kind == BehaviorKind::Delegating;
  }
  bool in_dht() const { return kind != BehaviorKind::Bystander; }
  std::string name() const;
};

/// Closed registry of scripted policies: provider, faulty, slow, delegating,
/// requester, registry, bystander, each optionally suffixed ":<capability>"
/// (which must then be on the card). Throws ScenarioInvalid.
Behavior parse_behavior(std::string_view name, const AgentCard& card);

struct SubtaskSpec {
  Intent intent;
  bool check_result = true;
};

struct PlanSpec {
  Intent root_intent;
  std::vector<SubtaskSpec> subtasks;
  RetryPolicy retry;
  int max_depth = kDefaultMaxDepth;
};

struct AgentConfig {
  std::string name;
  KeyPair keys;
  AgentCard card;
  Behavior behavior;
  std::string segment;
  PricingPolicy pricing;
  /// Time a provider actually spends executing; defaults to the bid's
  /// completion estimate.
  std::optional<std::int64_t> actual_ms;
  /// Work a delegating provider hands on to others.
  std::vector<SubtaskSpec> delegates;
  RetryPolicy delegate_retry{1, true};
};

/// Checks that the card names the configured key. Throws ScenarioInvalid.
void validate_config(const AgentConfig& cfg);

/// The deterministic result an honest provider returns for an intent.
Doc task_result(const Intent& intent);
Digest expected_result_digest(const Intent& intent);

struct NodeContext {
  SimTime now = 0;
  ProtocolMode mode = ProtocolMode::Acp;
  SimTime stage_timeout = kStageTimeoutMs;
  SimTime rpc_timeout = 100;
  SimTime local_query_timeout = 25;
  std::vector<Did> segment_peers;
  std::optional<Did> registry;
  std::vector<Did> bootstrap;
  const std::set<Did>* anchors = nullptr;
  std::function<bool(const Did&)> is_down;
};

namespace node_event {
struct Deliver {
  Bytes frame;
};
struct TimerFire {
  std::uint64_t id = 0;
};
struct Join {};
struct StartPlan {
  PlanSpec spec;
  std::vector<ProofOfIntent> chain;  // root link naming this agent
};
struct MeasureLookup {
  Digest key{};
  bool want_value = false;
};
}  // namespace node_event

using NodeEvent = std::variant<node_event::Deliver, node_event::TimerFire, node_event::Join, node_event::StartPlan,
                               node_event::MeasureLookup>;

struct TimerRequest {
  SimTime at = 0;
  std::uint64_t id = 0;
};

struct Actions {
  std::vector<Envelope> send;
  std::vector<TimerRequest> timers;
};

struct AgentStats {
  std::uint64_t unauthenticated_drops = 0;
  std::uint64_t tampered_drops = 0;
  std::uint64_t replay_drops = 0;
  std::uint64_t malformed_drops = 0;
  std::uint64_t unknown_session = 0;
  std::uint64_t protocol_violations = 0;
  std::uint64_t records_rejected = 0;
  std::uint64_t ledger_rejects = 0;
  std::uint64_t unauthorized_probes = 0;
  std::uint64_t challenges_failed = 0;
  std::uint64_t executions = 0;
  // Invariant counters; any nonzero value is a bug.
  std::uint64_t executions_without_poi = 0;
  std::uint64_t unauthenticated_processed = 0;
};

struct LookupStat {
  std::size_t hops = 0;
  bool want_value = false;
  bool measured = false;  // issued for measurement or discovery, not upkeep
};

struct SessionRecord {
  NegotiationSession session;
  std::optional<std::uint64_t> plan;
  std::size_t subtask = 0;
  SimTime opened_at = 0;
  std::optional<SimTime> settled_at;
  bool authorized = false;
  std::optional<Envelope> commit_envelope;
};

struct PlanRecord {
  std::uint64_t id = 0;
  TaskPlan plan;
  std::vector<ProofOfIntent> chain;        // root first, ends with the link naming this agent
  std::optional<SessionId> parent_session;  // set for a delegating provider's sub-plan
  SimTime started_at = 0;
  std::optional<SimTime> finished_at;
};

/// One agent node: the event-loop owner of all its protocol state.
class Agent {
 public:
  Agent(AgentConfig cfg, std::uint64_t rng_seed);

  /// Dispatches one event. Deterministic in (state, event, RNG stream).
  Actions handle(const NodeEvent& ev, const NodeContext& ctx);

  const AgentConfig& config() const { return cfg_; }
  const Did& did() const { return self_; }
  const AgentStats& stats() const { return stats_; }
  const RoutingTable& table() const { return table_; }
  const RecordStore& store() const { return store_; }
  const Ledger& ledger() const { return ledger_; }
  const std::map<SessionId, SessionRecord>& sessions() const { return sessions_; }
  const std::map<std::uint64_t, PlanRecord>& plans() const { return plans_; }
  const std::vector<LookupStat>& lookup_stats() const { return lookup_stats_; }
  bool registered() const { return registered_; }
  const DhtRecord& own_record() const { return own_record_; }
  bool authenticated(const Did& peer) const { return authenticated_.count(peer) != 0; }

 private:
  struct Out;
  struct Join {};
  struct Publish {
    DhtRecord record;
  };
  struct Discover {
    std::uint64_t plan = 0;
    std::size_t subtask = 0;
  };
  struct Measure {};
  using Purpose = std::variant<Join, Publish, Discover, Measure>;

  struct LookupRecord {
    Lookup lookup;
    Purpose purpose;
    std::uint64_t round_timer = 0;
  };

  struct SessionDeadline {
    SessionId sid{};
  };
  struct AuthDeadline {
    SessionId sid{};
  };
  struct ExecDone {
    SessionId sid{};
  };
  struct LookupRound {
    SessionId lookup{};
    std::size_t round = 0;
  };
  struct DiscoveryWait {
    std::uint64_t plan = 0;
    std::size_t subtask = 0;
  };
  using TimerPurpose = std::variant<SessionDeadline, AuthDeadline, ExecDone, LookupRound, DiscoveryWait>;

  void on_join(Out& out);
  void on_deliver(const Bytes& frame, Out& out);
  void on_timer(std::uint64_t id, Out& out);

  // envelopes
  std::optional<PublicKey> sender_key(const Envelope& env) const;
  void learn_key(const Did& who, const PublicKey& pk);
  Envelope make(MsgType type, const Did& to, const SessionId& sid, Doc payload);
  void send(Out& out, Envelope env, bool cache = false);
  std::uint64_t arm(Out& out, SimTime at, TimerPurpose p);

  // authentication
  void challenge(const Did& peer, std::vector<Digest> dropped, Out& out);
  void on_challenge(const Envelope& env, Out& out);
  void on_challenge_response(const Envelope& env, Out& out);
  void peer_authenticated(const Did& peer, Out& out);

  // DHT
  void start_lookup(const Digest& key, bool want_value, Purpose purpose, Out& out);
  void pump_lookup(const SessionId& lid, Out& out);
  void finish_lookup(const SessionId& lid, Out& out);
  void on_dht(const Envelope& env, Out& out);
  void touch(const Did& peer);
  void publish_record(const DhtRecord& rec, const std::vector<Contact>& closest, Out& out);
  void on_announce(const Envelope& env, Out& out);

  // negotiation
  void on_negotiation(const Envelope& env, Out& out);
  void apply(SessionRecord& rec, const SessionEvent& ev, Out& out);
  void on_effect(SessionRecord& rec, const Effect& e, Out& out);
  void evaluate_probe(SessionRecord& rec, const Intent& intent, Out& out);
  void on_registry_rate(const Envelope& env);

  // plans
  void begin_plan(PlanRecord rec, Out& out);
  void discover(std::uint64_t plan, std::size_t idx, Out& out);
  void candidates_ready(std::uint64_t plan, std::size_t idx, Out& out);
  void open_session(std::uint64_t plan, std::size_t idx, const AgentCard& provider, Out& out);
  void send_probe(SessionRecord& rec, Out& out);
  void subtask_failed(std::uint64_t plan, std::size_t idx, Out& out);
  void check_plan(std::uint64_t plan, Out& out);

  AgentConfig cfg_;
  Did self_;
  Rng rng_;
  const NodeContext* ctx_ = nullptr;

  RoutingTable table_;
  RecordStore store_;
  ReplayGuard replay_;
  NonceRegistry consumed_;
  Ledger ledger_;
  AgentStats stats_;
  bool registered_ = false;
  DhtRecord own_record_;

  std::map<std::string, PublicKey> keys_;
  std::set<Did> authenticated_;
  std::set<Did> authenticated_ever_;
  std::map<Nonce, std::pair<Challenge, Did>> outstanding_;
  std::map<Did, std::vector<SessionId>> waiting_auth_;
  std::map<SessionId, std::uint64_t> aux_sequence_;
  std::map<Digest, Envelope> outbox_;
  std::deque<Digest> outbox_order_;
  std::map<std::string, std::pair<SimTime, AgentCard>> bus_cards_;

  std::map<SessionId, SessionRecord> sessions_;
  std::map<std::uint64_t, PlanRecord> plans_;
  std::uint64_t next_plan_ = 1;
  std::map<std::pair<std::uint64_t, std::size_t>, std::vector<AgentCard>> found_;
  std::map<std::pair<std::uint64_t, std::size_t>, int> discovery_waits_;

  std::map<SessionId, LookupRecord> lookups_;
  std::vector<LookupStat> lookup_stats_;
  std::map<std::uint64_t, TimerPurpose> timers_;
  std::uint64_t next_timer_ = 1;
};

// ---------------------------------------------------------------------------
// persistence

/// What a state directory holds: the ledger, the newest Did record of every
/// published card, and per-session transcripts.
struct StateSnapshot {
  Ledger ledger;
  std::map<std::string, DhtRecord> registry;  // rendered Did -> record
  std::map<std::string, Doc> transcripts;     // file stem -> transcript document
};

/// Layout: ledger.log, registry/<did id>.rec, transcripts/<name>.json.
/// Throws IoError.
void persist(const std::filesystem::path& dir, const StateSnapshot& snap);
/// A missing or empty directory yields an empty snapshot. Throws
/// CorruptState when the ledger chain, a record signature or a file name
/// does not check out.
StateSnapshot load_state(const std::filesystem::path& dir);

}  // namespace acp

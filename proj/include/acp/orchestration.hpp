#pragma once

#include "acp/common.hpp"
#include "acp/doc.hpp"
#include "acp/identity.hpp"
#include "acp/negotiation.hpp"
#include "acp/semantic.hpp"

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace acp {

inline constexpr int kDefaultMaxDepth = 8;

// Proof-of-Intent: one signed link per delegation hop. The root link is
// signed by a user trust anchor and names the first agent as delegatee;
// each further link is signed by the previous delegatee.
struct ProofOfIntent {
  Digest intent_digest{};
  Did authorizer;
  PublicKey authorizer_key{};
  Did delegatee;
  std::optional<Digest> parent_digest;
  int depth = 0;
  Signature signature{};

  Doc unsigned_doc() const;
  Doc to_doc() const;
  static ProofOfIntent from_doc(const Doc& d);
  Digest digest() const;
};

/// Throws DepthExceeded when the new link would be deeper than max_depth
/// and ChainInvalid when kp is not the parent's delegatee.
ProofOfIntent build_poi(const KeyPair& kp, const Intent& intent, const Did& delegatee,
                        const ProofOfIntent* parent = nullptr, int max_depth = kDefaultMaxDepth);

/// Root-first chain. Throws ChainInvalid (signature, key/Did binding,
/// parent digest, delegatee/authorizer hand-off, depth numbering, root not
/// an anchor) or DepthExceeded.
void check_chain(const std::vector<ProofOfIntent>& chain, const std::set<Did>& anchors,
                 int max_depth = kDefaultMaxDepth);
bool verify_chain(const std::vector<ProofOfIntent>& chain, const std::set<Did>& anchors,
                  int max_depth = kDefaultMaxDepth);

/// Links indexed by digest, for walking from a leaf back to its root.
class PoiStore {
 public:
  void add(const ProofOfIntent& p) { links_[p.digest()] = p; }
  /// Root-first chain ending at leaf; ChainInvalid on a missing parent.
  std::vector<ProofOfIntent> chain_to(const ProofOfIntent& leaf, int max_depth = kDefaultMaxDepth) const;

 private:
  std::map<Digest, ProofOfIntent> links_;
};

bool verify_chain(const ProofOfIntent& leaf, const PoiStore& store, const std::set<Did>& anchors,
                  int max_depth = kDefaultMaxDepth);

Doc chain_to_doc(const std::vector<ProofOfIntent>& chain);
std::vector<ProofOfIntent> chain_from_doc(const Doc& d);

/// What a provider checks before it bids on work: the chain verifies to an
/// anchor, its leaf names the provider and binds exactly the probed intent.
bool authorizes(const std::vector<ProofOfIntent>& chain, const Intent& intent, const Did& provider,
                const std::set<Did>& anchors, int max_depth = kDefaultMaxDepth);

// ---------------------------------------------------------------------------
// task plans

enum class SubtaskStatus { Unassigned, Negotiating, Executing, Done, Failed };
enum class PlanStatus { InProgress, Complete, Failed };

std::string_view to_string(SubtaskStatus s);
std::string_view to_string(PlanStatus s);

struct Subtask {
  Intent intent;
  std::optional<Digest> expected_result;
  std::optional<Did> assigned;
  std::optional<SessionId> session;
  SubtaskStatus status = SubtaskStatus::Unassigned;
  std::uint32_t attempts = 0;
  std::uint32_t failures = 0;
  std::set<Did> excluded;
  std::optional<ProofOfIntent> poi;
  std::optional<SettlementReport> report;
};

struct TaskPlan {
  Intent root_intent;
  std::vector<Subtask> subtasks;
  int max_depth = kDefaultMaxDepth;
  RetryPolicy retry;
  std::string failure;  // why the plan failed, if it did

  PlanStatus status() const;
  std::vector<std::size_t> unassigned() const;
  /// Providers with a completed subtask under this plan.
  std::set<Did> coalition() const;
  /// Outcome report: plan status plus per-subtask provider, attempts and
  /// PoI depth.
  Doc outcome_doc() const;
};

/// Best-ranked candidate for a subtask, skipping providers excluded for it
/// and the delegating agent itself. Throws SubtaskUnservable.
AgentCard choose_provider(const TaskPlan& plan, std::size_t idx, const std::vector<AgentCard>& candidates,
                          const Did& self);

void mark_negotiating(TaskPlan& plan, std::size_t idx, const Did& provider, const SessionId& session,
                      const ProofOfIntent& poi);
void mark_executing(TaskPlan& plan, std::size_t idx);
/// Done when the report is accurate; an inaccurate result counts as a
/// failure and goes through on_failure.
void mark_settled(TaskPlan& plan, std::size_t idx, const SettlementReport& report);
void mark_failed(TaskPlan& plan, std::size_t idx, std::string why);

struct FailureAction {
  bool renegotiate = false;
  std::optional<Did> excluded;
};

/// Retry if the policy allows and the failure budget is not spent: the
/// subtask returns to Unassigned and the failed provider is excluded for
/// it. Otherwise the subtask, and so the plan, fails.
FailureAction on_failure(TaskPlan& plan, std::size_t idx);

// Synchronous delegation for callers that can run a whole negotiation per
// call (tests, in-process tools). The simulated runtime uses the
// incremental functions above from its event loop instead.
using CandidateSource = std::function<std::vector<AgentCard>(const Intent&)>;

struct DriveResult {
  enum class Kind { Executing, Settled, Failed } kind = Kind::Failed;
  std::optional<SessionId> session;
  std::optional<SettlementReport> report;
};
using NegotiationDriver = std::function<DriveResult(const Subtask&, const AgentCard& provider, const ProofOfIntent&)>;

/// Drives every Unassigned subtask: rank candidates, attach a child PoI,
/// run the driver, and apply on_failure on a failed attempt. A subtask that
/// has no candidate on its first attempt throws SubtaskUnservable (after
/// being marked Failed); running out of alternatives after a failure just
/// fails the plan.
void delegate(TaskPlan& plan, const KeyPair& self, const ProofOfIntent& parent, const CandidateSource& source,
              const NegotiationDriver& drive);

}  // namespace acp

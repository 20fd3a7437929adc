#pragma once

// The hand-written session lifecycle table and an event fuzzer, shared by the
// negotiation unit test and the acceptance run.

#include "acp/negotiation.hpp"
#include "acp/node.hpp"
#include "session_driver.hpp"

#include <algorithm>
#include <map>
#include <variant>
#include <vector>

namespace fx {

// Written out by hand from the lifecycle description: every (state, inbound
// message) pair a session accepts, and where it goes. Anything absent is
// illegal and must leave the state alone.
struct Legal {
  acp::Role role;
  acp::SessionState from;
  acp::MsgType msg;
  acp::SessionState to;
};

inline const std::vector<Legal>& legal_table() {
  using acp::Role;
  using S = acp::SessionState;
  using M = acp::MsgType;
  static const std::vector<Legal> table = {
      {Role::Requester, S::ProbeSent, M::Bid, S::BidReceived},
      {Role::Requester, S::ProbeSent, M::Decline, S::Aborted},
      {Role::Requester, S::ProbeSent, M::Abort, S::Aborted},
      {Role::Requester, S::BidReceived, M::Abort, S::Aborted},
      {Role::Requester, S::Committed, M::Abort, S::Aborted},
      {Role::Requester, S::AwaitingResult, M::Result, S::Settled},
      {Role::Requester, S::AwaitingResult, M::Abort, S::Aborted},

      {Role::Provider, S::Idle, M::Probe, S::ProbeReceived},
      {Role::Provider, S::ProbeReceived, M::Abort, S::Aborted},
      {Role::Provider, S::BidSent, M::Commit, S::CommitReceived},
      {Role::Provider, S::BidSent, M::Abort, S::Aborted},
      {Role::Provider, S::CommitReceived, M::Abort, S::Aborted},
      {Role::Provider, S::Executing, M::Abort, S::Aborted},
      {Role::Provider, S::ResultSent, M::Rate, S::Settled},
      {Role::Provider, S::ResultSent, M::Abort, S::Aborted},
  };
  return table;
}

inline const std::vector<Legal>& kLegalTable = legal_table();

inline const Legal* table_entry(acp::Role r, acp::SessionState from, acp::MsgType msg) {
  for (const auto& e : legal_table()) {
    if (e.role == r && e.from == from && e.msg == msg) return &e;
  }
  return nullptr;
}

template <typename T>
std::size_t count_effects(const std::vector<acp::Effect>& effects) {
  std::size_t n = 0;
  for (const auto& e : effects) n += std::holds_alternative<T>(e) ? 1 : 0;
  return n;
}

inline const acp::NegotiationSession& side(const Pair& p, acp::Role r) {
  return r == acp::Role::Requester ? p.req : p.prov;
}

inline acp::StepResult deliver(const Pair& p, acp::Role r, const acp::Envelope& env) {
  return acp::step(side(p, r), acp::EnvelopeIn{env}, r == acp::Role::Requester ? p.rctx() : p.pctx());
}

struct Conformance {
  std::size_t cells = 0;
  std::size_t mismatches = 0;
};

/// Every (role, state, message) cell, checked both through legal_message and
/// by stepping a session actually sitting in that state.
inline Conformance table_conformance() {
  using namespace acp;
  Conformance c;
  for (Role role : {Role::Requester, Role::Provider}) {
    auto envs = peer_envelopes(role);
    std::vector<SessionState> states(role == Role::Requester ? kRequesterStates.begin() : kProviderStates.begin(),
                                     role == Role::Requester ? kRequesterStates.end() : kProviderStates.end());
    for (SessionState st : states) {
      Pair p = pair_in(role, st);
      for (MsgType m : kAllMsgTypes) {
        ++c.cells;
        const Legal* e = table_entry(role, st, m);
        auto res = deliver(p, role, envs.at(m));
        std::size_t violations = count_effects<effect::ProtocolViolation>(res.effects);
        bool ok = side(p, role).state == st && legal_message(role, st, m) == (e != nullptr);
        if (e) {
          ok = ok && res.session.state == e->to && violations == 0;
        } else {
          ok = ok && res.session.state == st && violations == 1 && res.outbound.empty();
        }
        if (!ok) ++c.mismatches;
      }
    }
  }
  return c;
}

struct Fuzzer {
  acp::Rng rng;
  std::map<acp::MsgType, acp::Envelope> to_req = peer_envelopes(acp::Role::Requester);
  std::map<acp::MsgType, acp::Envelope> to_prov = peer_envelopes(acp::Role::Provider);
  Pair ref = full_run();

  explicit Fuzzer(std::uint64_t seed) : rng(seed) {}

  acp::Command command() {
    using namespace acp;
    switch (rng.uniform(10)) {
      case 0: return command::SendProbe{ref.intent, ref.retry, Doc::seq(), {}};
      case 1: return command::Accept{};
      case 2: return command::Reject{"fuzz"};
      case 3: return command::Dispatch{};
      case 4: return command::Rate{Decimal::from_micros(static_cast<std::int64_t>(rng.uniform(1'000'001)))};
      case 5: return command::SubmitBid{*ref.prov.bid};
      case 6: return command::DeclineProbe{static_cast<DeclineReason>(rng.uniform(5))};
      case 7: return command::StartExecution{};
      case 8: return command::DeliverResult{task_result(ref.intent)};
      default: return command::Abort{"fuzz"};
    }
  }

  acp::Envelope envelope(acp::Role r) {
    const auto& pool = r == acp::Role::Requester ? to_req : to_prov;
    acp::Envelope e = pool.at(acp::kAllMsgTypes[rng.uniform(acp::kAllMsgTypes.size())]);
    if (rng.uniform(8) == 0) e.session[rng.uniform(16)] ^= 1;
    return e;
  }

  acp::SessionEvent event(acp::Role role) {
    switch (rng.uniform(3)) {
      case 0: return acp::EnvelopeIn{envelope(role)};
      case 1: return acp::TimerFired{};
      default: return command();
    }
  }
};

struct FuzzReport {
  std::size_t sequences = 0;
  std::size_t steps = 0;
  std::size_t crashes = 0;
  std::size_t broken_invariants = 0;
};

/// Runs random event sequences against fresh sessions and counts throws and
/// invariant breaks: state outside the role's set, a terminal state left,
/// a transcript rewritten, violations decreasing, a commit digest changed,
/// or an envelope sent under another identity.
inline FuzzReport fuzz_lifecycle(std::uint64_t seed, std::size_t sequences) {
  using namespace acp;
  Fuzzer fz(seed);
  FuzzReport rep;
  for (std::size_t n = 0; n < sequences; ++n) {
    ++rep.sequences;
    Role role = fz.rng.uniform(2) ? Role::Requester : Role::Provider;
    NegotiationSession s = role == Role::Requester ? NegotiationSession::requester(fz.ref.sid, fz.ref.r, fz.ref.p)
                                                   : NegotiationSession::provider(fz.ref.sid, fz.ref.p, fz.ref.r);
    StepContext ctx = role == Role::Requester ? fz.ref.rctx() : fz.ref.pctx();
    std::size_t len = 1 + fz.rng.uniform(12);
    for (std::size_t k = 0; k < len; ++k) {
      ctx.now += static_cast<SimTime>(fz.rng.uniform(3000));
      SessionEvent ev = fz.event(role);
      ++rep.steps;
      StepResult res;
      try {
        res = step(s, ev, ctx);
      } catch (...) {
        ++rep.crashes;
        break;
      }
      const auto& next = res.session;
      bool ok = belongs_to(role, next.state) && (!is_terminal(s.state) || next.state == s.state) &&
                next.transcript.size() >= s.transcript.size() &&
                std::equal(s.transcript.begin(), s.transcript.end(), next.transcript.begin()) &&
                next.violations >= s.violations && (!s.commit_digest || next.commit_digest == s.commit_digest) &&
                (next.state == s.state || next.history.back() == next.state);
      for (const auto& env : res.outbound) ok = ok && env.sender == s.self;
      if (!ok) {
        ++rep.broken_invariants;
        break;
      }
      s = next;
    }
  }
  return rep;
}

}  // namespace fx

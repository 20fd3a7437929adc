#pragma once

// Drives a Pair through the happy path one step at a time so a test can stop
// either side in any lifecycle state, and builds peer envelopes for probing
// the step machine.

#include "acp/node.hpp"
#include "fixtures.hpp"

#include <functional>
#include <optional>

namespace fx {

inline acp::AgentCard provider_card(const Pair& p) {
  acp::AgentCard c = card_for(p.pk, {"market_analysis"});
  c.constraints.data_residency = "EU";
  c.constraints.max_latency_ms = 300;
  return c;
}

/// Number of scripted steps in the happy path.
inline constexpr int kHappySteps = 11;

/// Applies happy-path step i (0-based) to the pair.
inline void happy_step(Pair& p, int i) {
  using namespace acp;
  switch (i) {
    case 0: p.requester_event(Command{command::SendProbe{p.intent, p.retry, Doc::seq(), {}}}); break;
    case 1: p.to_prov_last(); break;
    case 2: {
      auto offer = make_bid(*p.prov.intent, provider_card(p), p.pricing, p.prov.retry, p.now);
      p.provider_event(Command{command::SubmitBid{std::get<Bid>(offer)}});
      break;
    }
    case 3: p.to_req_last(); break;
    case 4: p.requester_event(Command{command::Accept{}}); break;
    case 5: p.to_prov_last(); break;
    case 6: p.requester_event(Command{command::Dispatch{}}); break;
    case 7: p.provider_event(Command{command::StartExecution{}}); break;
    case 8: p.provider_event(Command{command::DeliverResult{task_result(p.intent)}}); break;
    case 9: p.to_req_last(); break;
    case 10: p.requester_event(Command{command::Rate{Decimal::from_int(1)}}); p.to_prov_last(); break;
    default: break;
  }
}

inline Pair full_run() {
  Pair p;
  for (int i = 0; i < kHappySteps; ++i) happy_step(p, i);
  return p;
}

/// A pair whose `role` side sits in `state`. Aborted is reached through a
/// local Abort after the first step that side takes.
inline Pair pair_in(acp::Role role, acp::SessionState state) {
  using acp::SessionState;
  Pair p;
  auto side = [&]() -> const acp::NegotiationSession& { return role == acp::Role::Requester ? p.req : p.prov; };
  if (state == SessionState::Aborted) {
    happy_step(p, 0);
    if (role == acp::Role::Requester) {
      p.requester_event(acp::Command{acp::command::Abort{"test"}});
    } else {
      happy_step(p, 1);
      p.provider_event(acp::Command{acp::command::Abort{"test"}});
    }
    return p;
  }
  for (int i = 0; i < kHappySteps && side().state != state; ++i) happy_step(p, i);
  if (side().state != state) throw std::logic_error("happy path never reaches the requested state");
  return p;
}

/// Every envelope a peer can send in the protocol, each addressed to the
/// session side named by `to`. Negotiation types reuse the happy-path
/// envelopes so their payloads are the ones a well-behaved peer produces.
inline std::map<acp::MsgType, acp::Envelope> peer_envelopes(acp::Role to) {
  using namespace acp;
  static const Pair ref = full_run();
  const bool to_req = to == Role::Requester;
  const KeyPair& kp = to_req ? ref.pk : ref.rk;
  const Did& recipient = to_req ? ref.r : ref.p;
  std::map<MsgType, Envelope> out;
  const auto& recorded = to_req ? ref.to_requester : ref.to_provider;
  for (const auto& e : recorded) out.emplace(e.type, e);
  std::uint64_t seq = 100;
  auto make = [&](MsgType t, Doc payload) {
    EnvelopeHeader h{t, recipient, ref.sid, seq++, ref.now};
    out.emplace(t, seal(kp, h, std::move(payload)));
  };
  Doc reason;
  reason.set("reason", "test");
  make(MsgType::Decline, reason);
  make(MsgType::Abort, reason);
  // PROBE, BID, COMMIT, RESULT and RATE only come from one side; the other
  // side still needs an envelope of that type for the illegality checks.
  for (MsgType t : kAllMsgTypes) {
    if (!out.count(t)) make(t, Doc::map());
  }
  return out;
}

}  // namespace fx

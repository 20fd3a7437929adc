#pragma once

// Shared builders for the unit, acceptance and CLI test binaries.

#include "acp/negotiation.hpp"
#include "acp/orchestration.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fx {

inline std::filesystem::path source_dir() { return ACP_SOURCE_DIR; }

inline acp::KeyPair key(std::uint8_t tag) {
  std::array<std::uint8_t, 32> seed{};
  seed.fill(tag);
  return acp::generate_keypair(seed);
}

inline acp::Did did_of(const acp::KeyPair& kp) { return acp::did_from_public_key(kp.public_key); }

inline acp::Intent market_intent() {
  acp::Intent i;
  i.action = acp::IntentAction::Execute;
  i.capability = "market_analysis";
  i.parameters.set("region", "EU");
  i.parameters.set("window_days", 30);
  i.constraints.max_latency_ms = 500;
  i.constraints.max_cost = acp::Decimal::parse("0.05");
  i.constraints.data_residency = "EU";
  return i;
}

inline acp::AgentCard card_for(const acp::KeyPair& kp, std::vector<std::string> caps, std::string trust = "0.9",
                               std::int64_t interactions = 10) {
  acp::AgentCard c;
  c.identity = did_of(kp);
  c.capabilities = std::move(caps);
  c.trust_score = acp::Decimal::parse(trust);
  c.interaction_count = interactions;
  c.interface = "sim://test";
  return c;
}

inline std::vector<std::uint8_t> bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

/// A requester/provider pair driven through the negotiation step machine
/// directly, with the envelopes each side produced kept for replay.
struct Pair {
  acp::KeyPair rk = key(0x11);
  acp::KeyPair pk = key(0x22);
  acp::Did r = did_of(rk);
  acp::Did p = did_of(pk);
  acp::SessionId sid{{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16}};
  acp::NegotiationSession req = acp::NegotiationSession::requester(sid, r, p);
  acp::NegotiationSession prov = acp::NegotiationSession::provider(sid, p, r);
  acp::SimTime now = 1000;
  acp::Intent intent = market_intent();
  acp::RetryPolicy retry{1, true};
  acp::PricingPolicy pricing{acp::Decimal::parse("0.02"), 100, 1000};
  std::vector<acp::Envelope> to_provider;
  std::vector<acp::Envelope> to_requester;
  std::vector<acp::Effect> req_effects;
  std::vector<acp::Effect> prov_effects;

  acp::StepContext rctx() const { return {&rk, now, pk.public_key, acp::kStageTimeoutMs}; }
  acp::StepContext pctx() const { return {&pk, now, rk.public_key, acp::kStageTimeoutMs}; }

  void requester_event(const acp::SessionEvent& ev) {
    auto res = acp::step(req, ev, rctx());
    req = res.session;
    for (auto& e : res.outbound) to_provider.push_back(e);
    for (auto& e : res.effects) req_effects.push_back(e);
  }
  void provider_event(const acp::SessionEvent& ev) {
    auto res = acp::step(prov, ev, pctx());
    prov = res.session;
    for (auto& e : res.outbound) to_requester.push_back(e);
    for (auto& e : res.effects) prov_effects.push_back(e);
  }
  void to_prov_last() { provider_event(acp::EnvelopeIn{to_provider.back()}); }
  void to_req_last() { requester_event(acp::EnvelopeIn{to_requester.back()}); }
};

}  // namespace fx

#include "acp/negotiation.hpp"

#include <algorithm>

namespace acp {

namespace {

constexpr std::string_view kProofDomain = "acp/execution-proof/v1\n";

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Bytes proof_bytes(const Doc& unsigned_doc) {
  std::string s(kProofDomain);
  s += canonical_encode(unsigned_doc);
  return Bytes(s.begin(), s.end());
}

}  // namespace

std::string_view to_string(Role r) { return r == Role::Requester ? "requester" : "provider"; }

std::string_view to_string(SessionState s) {
  switch (s) {
    case SessionState::Init: return "Init";
    case SessionState::ProbeSent: return "ProbeSent";
    case SessionState::BidReceived: return "BidReceived";
    case SessionState::Committed: return "Committed";
    case SessionState::AwaitingResult: return "AwaitingResult";
    case SessionState::Idle: return "Idle";
    case SessionState::ProbeReceived: return "ProbeReceived";
    case SessionState::BidSent: return "BidSent";
    case SessionState::CommitReceived: return "CommitReceived";
    case SessionState::Executing: return "Executing";
    case SessionState::ResultSent: return "ResultSent";
    case SessionState::Settled: return "Settled";
    case SessionState::Aborted: return "Aborted";
  }
  return "?";
}

bool is_terminal(SessionState s) { return s == SessionState::Settled || s == SessionState::Aborted; }

bool belongs_to(Role r, SessionState s) {
  const auto& states = r == Role::Requester ? std::span<const SessionState>(kRequesterStates)
                                            : std::span<const SessionState>(kProviderStates);
  return std::find(states.begin(), states.end(), s) != states.end();
}

std::string_view to_string(DeclineReason r) {
  switch (r) {
    case DeclineReason::CostFloor: return "CostFloor";
    case DeclineReason::LatencyUnachievable: return "LatencyUnachievable";
    case DeclineReason::ResidencyMismatch: return "ResidencyMismatch";
    case DeclineReason::CapabilityUnsupported: return "CapabilityUnsupported";
    case DeclineReason::Unauthorized: return "Unauthorized";
  }
  return "?";
}

// ---------------------------------------------------------------------------

Doc RetryPolicy::to_doc() const {
  Doc d;
  d.set("max_retries", static_cast<std::int64_t>(max_retries));
  d.set("renegotiate_on_failure", renegotiate_on_failure);
  return d;
}

RetryPolicy RetryPolicy::from_doc(const Doc& d) {
  RetryPolicy r;
  std::int64_t n = d.at("max_retries").as_int();
  if (n < 0 || n > 1000) throw Error(Errc::EncodingError, "max_retries out of range");
  r.max_retries = static_cast<std::uint32_t>(n);
  r.renegotiate_on_failure = d.at("renegotiate_on_failure").as_bool();
  return r;
}

Doc Sla::to_doc() const {
  Doc d;
  d.set("capability", capability);
  d.set("cost", cost);
  if (data_residency) d.set("data_residency", *data_residency);
  d.set("expires_at", expires_at);
  d.set("max_latency_ms", max_latency_ms);
  d.set("parameters_digest", to_hex(parameters_digest));
  d.set("retry_policy", retry_policy.to_doc());
  return d;
}

Sla Sla::from_doc(const Doc& d) {
  Sla s;
  s.capability = d.at("capability").as_text();
  s.cost = d.at("cost").as_decimal();
  if (s.cost < Decimal{}) throw Error(Errc::EncodingError, "cost must be >= 0");
  if (const Doc* r = d.find("data_residency")) s.data_residency = r->as_text();
  s.expires_at = d.at("expires_at").as_int();
  s.max_latency_ms = d.at("max_latency_ms").as_int();
  if (s.max_latency_ms <= 0) throw Error(Errc::EncodingError, "max_latency_ms must be > 0");
  s.parameters_digest = array_from_hex<32>(d.at("parameters_digest").as_text());
  s.retry_policy = RetryPolicy::from_doc(d.at("retry_policy"));
  return s;
}

Digest commit_hash(const Sla& sla) { return sha256(canonical_encode(sla.to_doc())); }

Doc Bid::to_doc() const {
  Doc d;
  d.set("estimated_completion_ms", estimated_completion_ms);
  d.set("provider", provider.str());
  d.set("sla", sla.to_doc());
  return d;
}

Bid Bid::from_doc(const Doc& d) {
  Bid b;
  b.estimated_completion_ms = d.at("estimated_completion_ms").as_int();
  b.provider = Did::parse(d.at("provider").as_text());
  b.sla = Sla::from_doc(d.at("sla"));
  if (b.estimated_completion_ms < 0 || b.estimated_completion_ms > b.sla.max_latency_ms) {
    throw Error(Errc::EncodingError, "estimated_completion_ms exceeds the SLA latency");
  }
  return b;
}

std::variant<Bid, Decline> make_bid(const Intent& probe, const AgentCard& provider_card, const PricingPolicy& policy,
                                    const RetryPolicy& retry, SimTime now, SimTime stage_timeout) {
  if (!provider_card.has_capability(probe.capability)) return Decline{DeclineReason::CapabilityUnsupported};
  const auto& want = probe.constraints;

  Sla sla;
  sla.capability = probe.capability;
  sla.parameters_digest = sha256(canonical_encode(probe.parameters));
  if (want.max_latency_ms) {
    if (policy.completion_ms > *want.max_latency_ms) return Decline{DeclineReason::LatencyUnachievable};
    sla.max_latency_ms = *want.max_latency_ms;
  } else {
    sla.max_latency_ms = provider_card.constraints.max_latency_ms.value_or(policy.default_max_latency_ms);
    sla.max_latency_ms = std::max(sla.max_latency_ms, policy.completion_ms);
  }
  if (want.max_cost && *want.max_cost < policy.floor_cost) return Decline{DeclineReason::CostFloor};
  sla.cost = policy.floor_cost;
  if (want.data_residency) {
    const auto& offered = provider_card.constraints.data_residency;
    if (offered && *offered != *want.data_residency) return Decline{DeclineReason::ResidencyMismatch};
    sla.data_residency = want.data_residency;
  } else {
    sla.data_residency = provider_card.constraints.data_residency;
  }
  sla.retry_policy = retry;
  sla.expires_at = now + stage_timeout + 2 * sla.max_latency_ms;

  Bid bid;
  bid.sla = std::move(sla);
  bid.estimated_completion_ms = policy.completion_ms;
  bid.provider = provider_card.identity;
  return bid;
}

Doc ExecutionProof::unsigned_doc() const {
  Doc d;
  d.set("commit_digest", to_hex(commit_digest));
  d.set("completed_at", completed_at);
  d.set("result_digest", to_hex(result_digest));
  return d;
}

Doc ExecutionProof::to_doc() const {
  Doc d = unsigned_doc();
  d.set("provider_signature", to_hex(provider_signature));
  return d;
}

ExecutionProof ExecutionProof::from_doc(const Doc& d) {
  ExecutionProof p;
  p.commit_digest = array_from_hex<32>(d.at("commit_digest").as_text());
  p.completed_at = d.at("completed_at").as_int();
  p.result_digest = array_from_hex<32>(d.at("result_digest").as_text());
  p.provider_signature = array_from_hex<64>(d.at("provider_signature").as_text());
  return p;
}

ExecutionProof make_proof(const KeyPair& provider, const Doc& result, const Digest& commit_digest, SimTime now) {
  ExecutionProof p;
  p.result_digest = sha256(canonical_encode(result));
  p.commit_digest = commit_digest;
  p.completed_at = now;
  p.provider_signature = sign(provider, proof_bytes(p.unsigned_doc()));
  return p;
}

// ---------------------------------------------------------------------------

NegotiationSession NegotiationSession::requester(const SessionId& id, const Did& self, const Did& peer) {
  NegotiationSession s;
  s.id = id;
  s.role = Role::Requester;
  s.self = self;
  s.peer = peer;
  s.state = SessionState::Init;
  s.history.push_back(s.state);
  return s;
}

NegotiationSession NegotiationSession::provider(const SessionId& id, const Did& self, const Did& peer) {
  NegotiationSession s = requester(id, self, peer);
  s.role = Role::Provider;
  s.state = SessionState::Idle;
  s.history = {s.state};
  return s;
}

Doc NegotiationSession::transcript_doc() const {
  Doc digests = Doc::seq();
  for (const auto& d : transcript) digests.push(to_hex(d));
  Doc states = Doc::seq();
  for (auto st : history) states.push(std::string(to_string(st)));
  Doc d;
  if (commit_digest) d.set("commit_digest", to_hex(*commit_digest));
  d.set("peer", peer.str());
  d.set("role", std::string(to_string(role)));
  d.set("self", self.str());
  d.set("session", to_hex(id));
  d.set("state", std::string(to_string(state)));
  d.set("states", std::move(states));
  d.set("transcript", std::move(digests));
  d.set("violations", static_cast<std::int64_t>(violations));
  return d;
}

SettlementReport settle(const NegotiationSession& session, const Doc& result, const ExecutionProof& proof, SimTime now,
                        const PublicKey& provider_pk) {
  if (!session.commit_digest || proof.commit_digest != *session.commit_digest) {
    throw Error(Errc::ProofMismatch, "proof is bound to a different commit");
  }
  if (!verify(provider_pk, proof_bytes(proof.unsigned_doc()), proof.provider_signature)) {
    throw Error(Errc::ProofMismatch, "bad provider signature");
  }
  if (!session.sla) throw Error(Errc::ProofMismatch, "session has no SLA");
  if (proof.completed_at > session.sla->expires_at || now > session.sla->expires_at) {
    throw Error(Errc::SlaExpired, "");
  }
  SettlementReport r;
  r.elapsed_ms = now - session.committed_at;
  r.latency_ratio = Decimal::from_ratio(r.elapsed_ms, session.sla->max_latency_ms);
  Digest got = sha256(canonical_encode(result));
  r.accuracy_ok = got == proof.result_digest && (!session.expected_result || *session.expected_result == got);
  r.violations = session.violations;
  return r;
}

// ---------------------------------------------------------------------------
// transition function

bool legal_message(Role role, SessionState state, MsgType type) {
  using S = SessionState;
  using M = MsgType;
  if (!belongs_to(role, state) || is_terminal(state)) return false;
  if (type == M::Abort) return state != S::Init && state != S::Idle;
  if (role == Role::Requester) {
    switch (state) {
      case S::ProbeSent: return type == M::Bid || type == M::Decline;
      case S::AwaitingResult: return type == M::Result;
      default: return false;
    }
  }
  switch (state) {
    case S::Idle: return type == M::Probe;
    case S::BidSent: return type == M::Commit;
    case S::ResultSent: return type == M::Rate;
    default: return false;
  }
}

namespace {

class Stepper {
 public:
  Stepper(NegotiationSession s, const StepContext& ctx) : ctx_(ctx) { out_.session = std::move(s); }

  StepResult run(const SessionEvent& ev) {
    std::visit(overloaded{
                   [&](const EnvelopeIn& in) { on_envelope(in.envelope); },
                   [&](const TimerFired&) { on_timer(); },
                   [&](const Command& c) { on_command(c); },
               },
               ev);
    return std::move(out_);
  }

 private:
  NegotiationSession& s() { return out_.session; }
  const NegotiationSession& s() const { return out_.session; }

  void violation(std::string what, bool count = true) {
    if (count) ++s().violations;
    out_.effects.push_back(effect::ProtocolViolation{s().state, std::move(what)});
  }

  void enter(SessionState next) {
    s().state = next;
    s().history.push_back(next);
  }

  void arm(SimTime at) {
    s().deadline_at = at;
    out_.effects.push_back(effect::ArmTimer{at});
  }

  void send(MsgType type, Doc payload) {
    if (ctx_.keys == nullptr) throw std::logic_error("StepContext.keys is required to send");
    EnvelopeHeader h;
    h.type = type;
    h.recipient = s().peer;
    h.session = s().id;
    h.sequence = s().next_sequence++;
    h.sent_at = ctx_.now;
    Envelope env = seal(*ctx_.keys, h, std::move(payload));
    s().transcript.push_back(env.digest());
    out_.outbound.push_back(std::move(env));
  }

  void abort(std::string reason, bool notify_peer) {
    if (notify_peer) {
      Doc p;
      p.set("reason", reason);
      send(MsgType::Abort, std::move(p));
    }
    enter(SessionState::Aborted);
    s().deadline_at = 0;
    bool renegotiate = s().role == Role::Requester && s().retry.allows_retry();
    out_.effects.push_back(effect::Aborted{std::move(reason), renegotiate});
  }

  // -- inbound ---------------------------------------------------------------

  void on_envelope(const Envelope& env) {
    if (env.session != s().id || env.sender != s().peer || env.recipient != s().self) {
      violation("envelope addressed to a different session");
      return;
    }
    if (!legal_message(s().role, s().state, env.type)) {
      violation("illegal " + std::string(to_string(env.type)) + " in " + std::string(to_string(s().state)));
      return;
    }
    try {
      check_payload(env.type, env.payload);
      if (s().role == Role::Requester) {
        requester_envelope(env);
      } else {
        provider_envelope(env);
      }
    } catch (const Error& e) {
      violation(std::string("malformed ") + std::string(to_string(env.type)) + ": " + e.what());
    }
  }

  void record_inbound(const Envelope& env) { s().transcript.push_back(env.digest()); }

  void requester_envelope(const Envelope& env) {
    const Doc& p = env.payload;
    switch (env.type) {
      case MsgType::Bid: {
        Bid bid = Bid::from_doc(p.at("bid"));
        if (!bid_satisfies(bid)) {
          violation("bid does not satisfy the probe");
          return;
        }
        record_inbound(env);
        s().bid = bid;
        enter(SessionState::BidReceived);
        arm(ctx_.now + ctx_.stage_timeout);
        out_.effects.push_back(effect::BidArrived{std::move(bid)});
        return;
      }
      case MsgType::Decline:
        record_inbound(env);
        abort("declined: " + p.at("reason").as_text(), false);
        return;
      case MsgType::Abort:
        record_inbound(env);
        abort("peer aborted: " + p.at("reason").as_text(), false);
        return;
      case MsgType::Result: {
        ExecutionProof proof = ExecutionProof::from_doc(p.at("proof"));
        const Doc& result = p.at("result");
        if (!ctx_.peer_key) {
          violation("no provider key to check the proof");
          return;
        }
        try {
          SettlementReport report = settle(s(), result, proof, ctx_.now, *ctx_.peer_key);
          record_inbound(env);
          s().report = report;
          enter(SessionState::Settled);
          s().deadline_at = 0;
          out_.effects.push_back(effect::Settled{report});
        } catch (const Error& e) {
          if (e.code() == Errc::ProofMismatch) {
            violation("proof mismatch");
            abort("ProofMismatch", true);
          } else {
            record_inbound(env);
            abort("SlaExpired", true);
          }
        }
        return;
      }
      default: violation("unhandled"); return;
    }
  }

  bool bid_satisfies(const Bid& bid) const {
    if (!s().intent || bid.provider != s().peer) return false;
    const Intent& want = *s().intent;
    const Sla& sla = bid.sla;
    if (sla.capability != want.capability) return false;
    if (sla.parameters_digest != sha256(canonical_encode(want.parameters))) return false;
    if (want.constraints.max_latency_ms && sla.max_latency_ms > *want.constraints.max_latency_ms) return false;
    if (want.constraints.max_cost && *want.constraints.max_cost < sla.cost) return false;
    if (want.constraints.data_residency && sla.data_residency != want.constraints.data_residency) return false;
    if (!(sla.retry_policy == s().retry)) return false;
    return sla.expires_at > ctx_.now;
  }

  void provider_envelope(const Envelope& env) {
    const Doc& p = env.payload;
    switch (env.type) {
      case MsgType::Probe: {
        Intent intent = Intent::from_doc(p.at("intent"));
        RetryPolicy retry = RetryPolicy::from_doc(p.at("retry_policy"));
        record_inbound(env);
        s().intent = intent;
        s().retry = retry;
        s().poi_chain = p.at("poi_chain");
        s().started_at = ctx_.now;
        enter(SessionState::ProbeReceived);
        arm(ctx_.now + ctx_.stage_timeout);
        out_.effects.push_back(effect::EvaluateProbe{std::move(intent)});
        return;
      }
      case MsgType::Commit: {
        Sla sla = Sla::from_doc(p.at("sla"));
        Digest claimed = array_from_hex<32>(p.at("commit_hash").as_text());
        if (!s().bid || !(sla == s().bid->sla) || commit_hash(sla) != claimed) {
          violation("commit does not match the bid");
          abort("commit mismatch", true);
          return;
        }
        record_inbound(env);
        s().sla = sla;
        s().commit_digest = claimed;
        s().committed_at = ctx_.now;
        enter(SessionState::CommitReceived);
        arm(ctx_.now + ctx_.stage_timeout);
        out_.effects.push_back(effect::ExecuteTask{std::move(sla)});
        return;
      }
      case MsgType::Rate: {
        Decimal composite = p.contains("composite") ? p.at("composite").as_decimal() : Decimal{};
        record_inbound(env);
        enter(SessionState::Settled);
        s().deadline_at = 0;
        out_.effects.push_back(effect::ProviderSettled{composite});
        return;
      }
      case MsgType::Abort:
        record_inbound(env);
        abort("peer aborted: " + p.at("reason").as_text(), false);
        return;
      default: violation("unhandled"); return;
    }
  }

  // -- timers ----------------------------------------------------------------

  void on_timer() {
    if (is_terminal(s().state) || s().deadline_at == 0 || ctx_.now < s().deadline_at) return;
    using S = SessionState;
    bool notify = s().state != S::Init && s().state != S::Idle && s().state != S::ResultSent;
    abort("timeout in " + std::string(to_string(s().state)), notify);
  }

  // -- local commands --------------------------------------------------------

  void illegal_command(std::string_view name) {
    violation("command " + std::string(name) + " illegal in " + std::string(to_string(s().state)), false);
  }

  void on_command(const Command& c) {
    using S = SessionState;
    const bool requester = s().role == Role::Requester;
    std::visit(
        overloaded{
            [&](const command::SendProbe& cmd) {
              if (!requester || s().state != S::Init) return illegal_command("SendProbe");
              s().intent = cmd.intent;
              s().retry = cmd.retry;
              s().poi_chain = cmd.poi_chain;
              s().expected_result = cmd.expected_result;
              s().started_at = ctx_.now;
              Doc p;
              p.set("intent", cmd.intent.to_doc());
              p.set("poi_chain", cmd.poi_chain);
              p.set("retry_policy", cmd.retry.to_doc());
              send(MsgType::Probe, std::move(p));
              enter(S::ProbeSent);
              arm(ctx_.now + ctx_.stage_timeout);
            },
            [&](const command::Accept&) {
              if (!requester || s().state != S::BidReceived) return illegal_command("Accept");
              s().sla = s().bid->sla;
              s().commit_digest = commit_hash(*s().sla);
              s().committed_at = ctx_.now;
              Doc p;
              p.set("commit_hash", to_hex(*s().commit_digest));
              p.set("sla", s().sla->to_doc());
              send(MsgType::Commit, std::move(p));
              enter(S::Committed);
              arm(s().sla->expires_at + 1);
            },
            [&](const command::Reject& cmd) {
              if (!requester || s().state != S::BidReceived) return illegal_command("Reject");
              abort("rejected: " + cmd.reason, true);
            },
            [&](const command::Dispatch&) {
              if (!requester || s().state != S::Committed) return illegal_command("Dispatch");
              enter(S::AwaitingResult);
            },
            [&](const command::Rate& cmd) {
              if (!requester || s().state != S::Settled || s().rated) return illegal_command("Rate");
              Doc p;
              p.set("composite", cmd.composite);
              send(MsgType::Rate, std::move(p));
              s().rated = true;
            },
            [&](const command::SubmitBid& cmd) {
              if (requester || s().state != S::ProbeReceived) return illegal_command("SubmitBid");
              s().bid = cmd.bid;
              Doc p;
              p.set("bid", cmd.bid.to_doc());
              send(MsgType::Bid, std::move(p));
              enter(S::BidSent);
              arm(ctx_.now + ctx_.stage_timeout);
            },
            [&](const command::DeclineProbe& cmd) {
              if (requester || s().state != S::ProbeReceived) return illegal_command("DeclineProbe");
              Doc p;
              p.set("reason", std::string(to_string(cmd.reason)));
              send(MsgType::Decline, std::move(p));
              enter(S::Aborted);
              s().deadline_at = 0;
              out_.effects.push_back(effect::Aborted{"declined " + std::string(to_string(cmd.reason)), false});
            },
            [&](const command::StartExecution&) {
              if (requester || s().state != S::CommitReceived) return illegal_command("StartExecution");
              enter(S::Executing);
              arm(s().sla->expires_at + 1);
            },
            [&](const command::DeliverResult& cmd) {
              if (requester || s().state != S::Executing) return illegal_command("DeliverResult");
              ExecutionProof proof = make_proof(*ctx_.keys, cmd.result, *s().commit_digest, ctx_.now);
              Doc p;
              p.set("proof", proof.to_doc());
              p.set("result", cmd.result);
              send(MsgType::Result, std::move(p));
              enter(S::ResultSent);
              arm(ctx_.now + ctx_.stage_timeout);
            },
            [&](const command::Abort& cmd) {
              if (is_terminal(s().state)) return illegal_command("Abort");
              bool notify = s().state != S::Init && s().state != S::Idle;
              abort(cmd.reason, notify);
            },
        },
        c);
  }

  const StepContext& ctx_;
  StepResult out_;
};

}  // namespace

StepResult step(NegotiationSession session, const SessionEvent& event, const StepContext& ctx) {
  return Stepper(std::move(session), ctx).run(event);
}

}  // namespace acp

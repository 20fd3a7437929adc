#include "acp/node.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace acp {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

constexpr std::size_t kOutboxLimit = 512;

bool is_negotiation(MsgType t) { return static_cast<int>(t) <= static_cast<int>(MsgType::Abort); }

const std::set<Did>& no_anchors() {
  static const std::set<Did> empty;
  return empty;
}

}  // namespace

std::string_view to_string(ProtocolMode m) {
  switch (m) {
    case ProtocolMode::Acp: return "acp";
    case ProtocolMode::LocalTrusted: return "local_trusted";
    case ProtocolMode::VerboseRpc: return "verbose_rpc";
  }
  return "?";
}

ProtocolMode protocol_mode_from_string(std::string_view s) {
  if (s == "acp") return ProtocolMode::Acp;
  if (s == "local_trusted") return ProtocolMode::LocalTrusted;
  if (s == "verbose_rpc") return ProtocolMode::VerboseRpc;
  throw Error(Errc::ScenarioInvalid, "unknown mode " + std::string(s));
}

std::string Behavior::name() const {
  static constexpr std::array<std::string_view, 7> kNames = {"provider",  "faulty",   "slow",     "delegating",
                                                             "requester", "registry", "bystander"};
  std::string out(kNames[static_cast<std::size_t>(kind)]);
  if (!detail.empty()) out += ":" + detail;
  return out;
}

Behavior parse_behavior(std::string_view name, const AgentCard& card) {
  static const std::map<std::string, BehaviorKind, std::less<>> kKinds = {
      {"provider", BehaviorKind::Provider},   {"faulty", BehaviorKind::Faulty},
      {"slow", BehaviorKind::Slow},           {"delegating", BehaviorKind::Delegating},
      {"requester", BehaviorKind::Requester}, {"registry", BehaviorKind::Registry},
      {"bystander", BehaviorKind::Bystander},
  };
  auto colon = name.find(':');
  std::string_view head = name.substr(0, colon);
  auto it = kKinds.find(head);
  if (it == kKinds.end()) throw Error(Errc::ScenarioInvalid, "unknown behavior " + std::string(name));
  Behavior b{it->second, colon == std::string_view::npos ? std::string() : std::string(name.substr(colon + 1))};
  if (!b.detail.empty() && b.provides() && !card.has_capability(b.detail)) {
    throw Error(Errc::ScenarioInvalid, "behavior " + std::string(name) + " names a capability not on the card");
  }
  return b;
}

void validate_config(const AgentConfig& cfg) {
  if (did_from_public_key(cfg.keys.public_key) != cfg.card.identity) {
    throw Error(Errc::ScenarioInvalid, cfg.name + ": card identity does not match key");
  }
  if (cfg.behavior.kind == BehaviorKind::Delegating && cfg.delegates.empty()) {
    throw Error(Errc::ScenarioInvalid, cfg.name + ": delegating behavior without delegates");
  }
}

Doc task_result(const Intent& intent) {
  Doc d;
  d.set("capability", intent.capability);
  d.set("digest", to_hex(sha256(canonical_encode(intent.parameters))));
  return d;
}

Digest expected_result_digest(const Intent& intent) { return sha256(canonical_encode(task_result(intent))); }

// ---------------------------------------------------------------------------

struct Agent::Out {
  Actions actions;
};

Agent::Agent(AgentConfig cfg, std::uint64_t rng_seed)
    : cfg_(std::move(cfg)),
      self_(did_from_public_key(cfg_.keys.public_key)),
      rng_(rng_seed),
      table_(self_) {}

Actions Agent::handle(const NodeEvent& ev, const NodeContext& ctx) {
  ctx_ = &ctx;
  Out out;
  std::visit(overloaded{
                 [&](const node_event::Deliver& d) { on_deliver(d.frame, out); },
                 [&](const node_event::TimerFire& t) { on_timer(t.id, out); },
                 [&](const node_event::Join&) { on_join(out); },
                 [&](const node_event::StartPlan& p) {
                   PlanRecord rec;
                   rec.plan.root_intent = p.spec.root_intent;
                   rec.plan.retry = p.spec.retry;
                   rec.plan.max_depth = p.spec.max_depth;
                   for (const auto& s : p.spec.subtasks) {
                     Subtask st;
                     st.intent = s.intent;
                     if (s.check_result) st.expected_result = expected_result_digest(s.intent);
                     rec.plan.subtasks.push_back(std::move(st));
                   }
                   rec.chain = p.chain;
                   begin_plan(std::move(rec), out);
                 },
                 [&](const node_event::MeasureLookup& m) {
                   if (cfg_.behavior.in_dht()) start_lookup(m.key, m.want_value, Measure{}, out);
                 },
             },
             ev);
  ctx_ = nullptr;
  return std::move(out.actions);
}

// ---------------------------------------------------------------------------
// plumbing

Envelope Agent::make(MsgType type, const Did& to, const SessionId& sid, Doc payload) {
  EnvelopeHeader h;
  h.type = type;
  h.recipient = to;
  h.session = sid;
  h.sequence = aux_sequence_[sid]++;
  h.sent_at = ctx_->now;
  return seal(cfg_.keys, h, std::move(payload));
}

void Agent::send(Out& out, Envelope env, bool cache) {
  if (cache) {
    Digest d = env.digest();
    if (outbox_.emplace(d, env).second) outbox_order_.push_back(d);
    while (outbox_order_.size() > kOutboxLimit) {
      outbox_.erase(outbox_order_.front());
      outbox_order_.pop_front();
    }
  }
  out.actions.send.push_back(std::move(env));
}

std::uint64_t Agent::arm(Out& out, SimTime at, TimerPurpose p) {
  std::uint64_t id = next_timer_++;
  timers_.emplace(id, std::move(p));
  out.actions.timers.push_back({at, id});
  return id;
}

std::optional<PublicKey> Agent::sender_key(const Envelope& env) const {
  std::optional<PublicKey> pk;
  try {
    if (const Doc* k = env.payload.find("public_key")) {
      pk = array_from_hex<32>(k->as_text());
    } else if (const Doc* r = env.type == MsgType::Announce ? env.payload.find("record") : nullptr) {
      pk = array_from_hex<32>(r->at("public_key").as_text());
    } else if (auto it = keys_.find(env.sender.str()); it != keys_.end()) {
      pk = it->second;
    }
  } catch (const Error&) {
    return std::nullopt;
  }
  if (pk && did_from_public_key(*pk) != env.sender) return std::nullopt;
  return pk;
}

void Agent::learn_key(const Did& who, const PublicKey& pk) {
  if (did_from_public_key(pk) == who) keys_[who.str()] = pk;
}

void Agent::touch(const Did& peer) {
  if (!cfg_.behavior.in_dht() || peer == self_) return;
  table_.insert(peer, ctx_->now, ctx_->is_down);
}

// ---------------------------------------------------------------------------
// inbound

void Agent::on_deliver(const Bytes& frame, Out& out) {
  Envelope env;
  try {
    env = unframe(frame);
  } catch (const Error&) {
    ++stats_.malformed_drops;
    return;
  }
  if (env.recipient != self_) {
    ++stats_.malformed_drops;
    return;
  }
  // Zero-trust gate: negotiation traffic from a peer that has not answered
  // one of our challenges is dropped unopened and the peer is challenged.
  if (is_negotiation(env.type) && ctx_->mode != ProtocolMode::LocalTrusted && !authenticated_.count(env.sender)) {
    ++stats_.unauthenticated_drops;
    challenge(env.sender, {env.digest()}, out);
    return;
  }
  auto pk = sender_key(env);
  if (!pk) {
    ++stats_.tampered_drops;
    return;
  }
  try {
    open_envelope(env, *pk, &replay_);
  } catch (const Error& e) {
    if (e.code() == Errc::ReplayDetected) {
      ++stats_.replay_drops;
    } else {
      ++stats_.tampered_drops;
    }
    return;
  }
  try {
    check_payload(env.type, env.payload);
  } catch (const Error&) {
    ++stats_.malformed_drops;
    return;
  }
  learn_key(env.sender, *pk);

  try {
    switch (env.type) {
      case MsgType::Challenge: on_challenge(env, out); break;
      case MsgType::ChallengeResponse: on_challenge_response(env, out); break;
      case MsgType::DhtFind:
      case MsgType::DhtStore:
      case MsgType::DhtReply: on_dht(env, out); break;
      case MsgType::Announce: on_announce(env, out); break;
      default: on_negotiation(env, out); break;
    }
  } catch (const Error&) {
    ++stats_.malformed_drops;
  }
}

// ---------------------------------------------------------------------------
// authentication

void Agent::challenge(const Did& peer, std::vector<Digest> dropped, Out& out) {
  Challenge c = issue_challenge(self_, rng_, ctx_->now);
  outstanding_[c.nonce] = {c, peer};
  Doc p;
  p.set("challenge", c.to_doc());
  if (!dropped.empty()) {
    Doc list = Doc::seq();
    for (const auto& d : dropped) list.push(to_hex(d));
    p.set("dropped", std::move(list));
  }
  p.set("public_key", to_hex(cfg_.keys.public_key));
  send(out, make(MsgType::Challenge, peer, rng_.bytes<16>(), std::move(p)));
}

void Agent::on_challenge(const Envelope& env, Out& out) {
  Challenge c = Challenge::from_doc(env.payload.at("challenge"));
  if (c.challenger != env.sender) {
    ++stats_.malformed_drops;
    return;
  }
  Doc p;
  p.set("nonce", to_hex(c.nonce));
  p.set("public_key", to_hex(cfg_.keys.public_key));
  p.set("signature", to_hex(answer_challenge(cfg_.keys, c)));
  send(out, make(MsgType::ChallengeResponse, env.sender, env.session, std::move(p)));
  if (const Doc* dropped = env.payload.find("dropped")) {
    for (const auto& d : dropped->as_seq()) {
      auto it = outbox_.find(array_from_hex<32>(d.as_text()));
      if (it != outbox_.end() && it->second.recipient == env.sender) send(out, it->second);
    }
  }
}

void Agent::on_challenge_response(const Envelope& env, Out& out) {
  Nonce nonce = array_from_hex<32>(env.payload.at("nonce").as_text());
  auto it = outstanding_.find(nonce);
  if (it == outstanding_.end() || it->second.second != env.sender) {
    ++stats_.challenges_failed;
    return;
  }
  Signature sig = array_from_hex<64>(env.payload.at("signature").as_text());
  PublicKey pk = array_from_hex<32>(env.payload.at("public_key").as_text());
  bool ok = false;
  try {
    ok = verify_challenge(pk, it->second.first, sig, consumed_, ctx_->now);
  } catch (const Error&) {
    ok = false;
  }
  if (!ok) {
    ++stats_.challenges_failed;
    return;
  }
  outstanding_.erase(it);
  peer_authenticated(env.sender, out);
}

void Agent::peer_authenticated(const Did& peer, Out& out) {
  authenticated_.insert(peer);
  authenticated_ever_.insert(peer);
  auto waiting = std::move(waiting_auth_[peer]);
  waiting_auth_.erase(peer);
  for (const auto& sid : waiting) {
    auto it = sessions_.find(sid);
    if (it != sessions_.end() && it->second.session.state == SessionState::Init) send_probe(it->second, out);
  }
}

// ---------------------------------------------------------------------------
// DHT

void Agent::on_join(Out& out) {
  if (!cfg_.behavior.in_dht()) return;
  own_record_ = make_record(cfg_.keys, cfg_.card, did_key(self_), ctx_->now);
  for (const auto& b : ctx_->bootstrap) touch(b);
  start_lookup(table_.owner_id(), false, Join{}, out);
}

void Agent::start_lookup(const Digest& key, bool want_value, Purpose purpose, Out& out) {
  SessionId lid = rng_.bytes<16>();
  std::vector<Contact> seeds;
  if (!(want_value && store_.has(key))) seeds = table_.closest(key, kBucketSize);
  lookups_.emplace(lid, LookupRecord{Lookup(key, seeds, want_value, self_), std::move(purpose), 0});
  pump_lookup(lid, out);
}

void Agent::pump_lookup(const SessionId& lid, Out& out) {
  auto it = lookups_.find(lid);
  if (it == lookups_.end() || it->second.lookup.round_pending()) return;
  Lookup& lookup = it->second.lookup;
  auto batch = lookup.next_round();
  if (batch.empty()) {
    finish_lookup(lid, out);
    return;
  }
  for (const auto& c : batch) {
    Doc p;
    p.set("key", to_hex(lookup.target()));
    p.set("public_key", to_hex(cfg_.keys.public_key));
    p.set("want_value", lookup.want_value());
    send(out, make(MsgType::DhtFind, c.did, lid, std::move(p)));
  }
  it->second.round_timer = arm(out, ctx_->now + ctx_->rpc_timeout, LookupRound{lid, lookup.rounds()});
}

void Agent::finish_lookup(const SessionId& lid, Out& out) {
  auto node = lookups_.extract(lid);
  if (node.empty()) return;
  LookupRecord rec = std::move(node.mapped());
  const Lookup& lookup = rec.lookup;
  bool measured = std::holds_alternative<Discover>(rec.purpose) || std::holds_alternative<Measure>(rec.purpose);
  lookup_stats_.push_back({lookup.rounds(), lookup.want_value(), measured});

  std::visit(overloaded{
                 [&](const Join&) {
                   registered_ = true;
                   std::vector<Digest> keys{did_key(self_)};
                   for (const auto& c : cfg_.card.capabilities) keys.push_back(capability_key(c));
                   for (const auto& k : keys) {
                     start_lookup(k, false, Publish{make_record(cfg_.keys, cfg_.card, k, ctx_->now)}, out);
                   }
                   Doc p;
                   p.set("record", own_record_.to_doc());
                   for (const auto& peer : ctx_->segment_peers) {
                     send(out, make(MsgType::Announce, peer, rng_.bytes<16>(), p));
                   }
                 },
                 [&](const Publish& pub) { publish_record(pub.record, lookup.closest(), out); },
                 [&](const Discover& d) {
                   std::vector<DhtRecord> records = lookup.records();
                   for (const auto& r : store_.get(lookup.target())) records.push_back(r);
                   for (const auto& r : records) {
                     if (record_valid(r)) learn_key(r.publisher(), r.public_key);
                   }
                   auto pit = plans_.find(d.plan);
                   if (pit == plans_.end()) return;
                   const auto& cap = pit->second.plan.subtasks.at(d.subtask).intent.capability;
                   found_[{d.plan, d.subtask}] = cards_for_capability(records, cap);
                   if (--discovery_waits_[{d.plan, d.subtask}] <= 0) candidates_ready(d.plan, d.subtask, out);
                 },
                 [&](const Measure&) {},
             },
             rec.purpose);
}

void Agent::publish_record(const DhtRecord& rec, const std::vector<Contact>& closest, Out& out) {
  std::vector<Contact> targets = closest;
  targets.push_back(Contact::of(self_));
  std::sort(targets.begin(), targets.end(),
            [&](const Contact& a, const Contact& b) { return closer(rec.key, a.id, b.id); });
  if (targets.size() > kBucketSize) targets.resize(kBucketSize);
  Doc p;
  p.set("public_key", to_hex(cfg_.keys.public_key));
  p.set("record", rec.to_doc());
  for (const auto& c : targets) {
    if (c.did == self_) {
      store_.put(rec);
    } else {
      send(out, make(MsgType::DhtStore, c.did, rng_.bytes<16>(), p));
    }
  }
}

void Agent::on_dht(const Envelope& env, Out& out) {
  if (!cfg_.behavior.in_dht()) return;
  touch(env.sender);
  const Doc& p = env.payload;
  switch (env.type) {
    case MsgType::DhtFind: {
      Digest key = array_from_hex<32>(p.at("key").as_text());
      Doc peers = Doc::seq();
      for (const auto& c : table_.closest(key, kBucketSize)) peers.push(c.did.str());
      Doc records = Doc::seq();
      if (p.at("want_value").as_bool()) {
        for (const auto& r : store_.get(key)) records.push(r.to_doc());
      }
      Doc reply;
      reply.set("key", to_hex(key));
      reply.set("peers", std::move(peers));
      reply.set("public_key", to_hex(cfg_.keys.public_key));
      reply.set("records", std::move(records));
      send(out, make(MsgType::DhtReply, env.sender, env.session, std::move(reply)));
      break;
    }
    case MsgType::DhtStore: {
      DhtRecord rec = DhtRecord::from_doc(p.at("record"));
      if (!record_valid(rec) || rec.publisher() != env.sender) {
        ++stats_.records_rejected;
        return;
      }
      store_.put(rec);
      break;
    }
    case MsgType::DhtReply: {
      auto it = lookups_.find(env.session);
      if (it == lookups_.end()) return;
      std::vector<Contact> peers;
      for (const auto& d : p.at("peers").as_seq()) peers.push_back(Contact::of(Did::parse(d.as_text())));
      std::vector<DhtRecord> records;
      for (const auto& r : p.at("records").as_seq()) {
        try {
          records.push_back(DhtRecord::from_doc(r));
        } catch (const Error&) {
          ++stats_.records_rejected;
        }
      }
      it->second.lookup.on_reply(env.sender, peers, records);
      pump_lookup(env.session, out);
      break;
    }
    default: break;
  }
}

void Agent::on_announce(const Envelope& env, Out& out) {
  const Doc& p = env.payload;
  if (const Doc* r = p.find("record")) {
    DhtRecord rec = DhtRecord::from_doc(*r);
    AgentCard card;
    try {
      card = verify_record(rec);
    } catch (const Error&) {
      ++stats_.records_rejected;
      return;
    }
    if (card.identity != env.sender || rec.key != did_key(card.identity)) {
      ++stats_.records_rejected;
      return;
    }
    learn_key(card.identity, rec.public_key);
    auto& slot = bus_cards_[card.identity.str()];
    if (slot.second.identity.empty() || slot.first < rec.stored_at) slot = {rec.stored_at, card};
    return;
  }
  const std::string& cap = p.at("query").as_text();
  if (registered_ && cfg_.behavior.provides() && cfg_.card.has_capability(cap)) {
    Doc reply;
    reply.set("record", own_record_.to_doc());
    send(out, make(MsgType::Announce, env.sender, env.session, std::move(reply)));
  }
}

// ---------------------------------------------------------------------------
// negotiation

void Agent::on_negotiation(const Envelope& env, Out& out) {
  if (ctx_->mode != ProtocolMode::LocalTrusted && !authenticated_ever_.count(env.sender)) {
    ++stats_.unauthenticated_processed;
  }
  if (ctx_->mode == ProtocolMode::VerboseRpc) authenticated_.erase(env.sender);

  if (env.type == MsgType::Rate && env.payload.contains("entry")) {
    if (cfg_.behavior.kind == BehaviorKind::Registry) {
      on_registry_rate(env);
    } else {
      ++stats_.unknown_session;
    }
    return;
  }
  auto it = sessions_.find(env.session);
  if (it == sessions_.end()) {
    if (env.type != MsgType::Probe) {
      ++stats_.unknown_session;
      return;
    }
    SessionRecord rec;
    rec.session = NegotiationSession::provider(env.session, self_, env.sender);
    rec.opened_at = ctx_->now;
    it = sessions_.emplace(env.session, std::move(rec)).first;
  }
  apply(it->second, EnvelopeIn{env}, out);
}

void Agent::apply(SessionRecord& rec, const SessionEvent& ev, Out& out) {
  StepContext sc;
  sc.keys = &cfg_.keys;
  sc.now = ctx_->now;
  sc.stage_timeout = ctx_->stage_timeout;
  if (auto k = keys_.find(rec.session.peer.str()); k != keys_.end()) sc.peer_key = k->second;
  StepResult r = step(rec.session, ev, sc);
  rec.session = std::move(r.session);
  for (auto& env : r.outbound) {
    if (env.type == MsgType::Commit) rec.commit_envelope = env;
    send(out, std::move(env), true);
  }
  for (const auto& e : r.effects) on_effect(rec, e, out);
}

void Agent::on_effect(SessionRecord& rec, const Effect& e, Out& out) {
  const SessionId sid = rec.session.id;
  std::visit(
      overloaded{
          [&](const effect::ProtocolViolation&) { ++stats_.protocol_violations; },
          [&](const effect::ArmTimer& t) { arm(out, t.at, SessionDeadline{sid}); },
          [&](const effect::EvaluateProbe& p) { evaluate_probe(rec, p.intent, out); },
          [&](const effect::BidArrived&) {
            apply(rec, command::Accept{}, out);
            if (rec.session.state == SessionState::Committed) {
              apply(rec, command::Dispatch{}, out);
              if (rec.plan) {
                if (auto pit = plans_.find(*rec.plan); pit != plans_.end()) mark_executing(pit->second.plan, rec.subtask);
              }
            }
          },
          [&](const effect::ExecuteTask&) {
            ++stats_.executions;
            if (!rec.authorized) ++stats_.executions_without_poi;
            apply(rec, command::StartExecution{}, out);
            if (cfg_.behavior.kind == BehaviorKind::Delegating) {
              PlanRecord sub;
              sub.plan.root_intent = *rec.session.intent;
              sub.plan.retry = cfg_.delegate_retry;
              for (const auto& s : cfg_.delegates) {
                Subtask st;
                st.intent = s.intent;
                if (s.check_result) st.expected_result = expected_result_digest(s.intent);
                sub.plan.subtasks.push_back(std::move(st));
              }
              sub.chain = chain_from_doc(rec.session.poi_chain);
              sub.parent_session = sid;
              begin_plan(std::move(sub), out);
              return;
            }
            std::int64_t ms = cfg_.actual_ms.value_or(cfg_.behavior.kind == BehaviorKind::Slow
                                                          ? cfg_.pricing.completion_ms * 10
                                                          : cfg_.pricing.completion_ms);
            arm(out, ctx_->now + ms, ExecDone{sid});
          },
          [&](const effect::Settled& s) {
            rec.settled_at = ctx_->now;
            InteractionScores scores = score_interaction(s.report);
            apply(rec, command::Rate{scores.composite}, out);
            if (ctx_->registry && *ctx_->registry != self_ && rec.commit_envelope) {
              ReputationEntry entry = make_entry(cfg_.keys, rec.session.peer, sid, scores, ctx_->now);
              Doc p;
              p.set("commit", to_hex(rec.commit_envelope->encode()));
              p.set("entry", entry.to_doc());
              send(out, make(MsgType::Rate, *ctx_->registry, sid, std::move(p)), true);
            }
            if (rec.plan) {
              auto pit = plans_.find(*rec.plan);
              if (pit == plans_.end()) return;
              Subtask& st = pit->second.plan.subtasks.at(rec.subtask);
              if (st.session != sid) return;
              mark_settled(pit->second.plan, rec.subtask, s.report);
              if (st.status == SubtaskStatus::Unassigned) discover(*rec.plan, rec.subtask, out);
              check_plan(*rec.plan, out);
            }
          },
          [&](const effect::ProviderSettled&) {},
          [&](const effect::Aborted&) {
            if (rec.plan) {
              auto pit = plans_.find(*rec.plan);
              if (pit == plans_.end()) return;
              const Subtask& st = pit->second.plan.subtasks.at(rec.subtask);
              if (st.session == sid && st.status != SubtaskStatus::Done && st.status != SubtaskStatus::Failed) {
                subtask_failed(*rec.plan, rec.subtask, out);
              }
              return;
            }
            for (auto& [_, p] : plans_) {
              if (p.parent_session == sid) p.parent_session.reset();
            }
          },
      },
      e);
}

void Agent::evaluate_probe(SessionRecord& rec, const Intent& intent, Out& out) {
  auto decline = [&](DeclineReason r) { apply(rec, command::DeclineProbe{r}, out); };
  if (!cfg_.behavior.provides()) return decline(DeclineReason::CapabilityUnsupported);
  bool authorized = false;
  try {
    authorized = authorizes(chain_from_doc(rec.session.poi_chain), intent, self_,
                            ctx_->anchors ? *ctx_->anchors : no_anchors());
  } catch (const Error&) {
    authorized = false;
  }
  if (!authorized) {
    ++stats_.unauthorized_probes;
    return decline(DeclineReason::Unauthorized);
  }
  if (!cfg_.card.has_capability(intent.capability)) return decline(DeclineReason::CapabilityUnsupported);
  auto bid = make_bid(intent, cfg_.card, cfg_.pricing, rec.session.retry, ctx_->now, ctx_->stage_timeout);
  if (auto* d = std::get_if<Decline>(&bid)) return decline(d->reason);
  rec.authorized = true;
  apply(rec, command::SubmitBid{std::get<Bid>(bid)}, out);
}

void Agent::on_registry_rate(const Envelope& env) {
  try {
    Bytes raw = from_hex(env.payload.at("commit").as_text());
    Envelope commit = Envelope::decode(raw);
    ReputationEntry entry = ReputationEntry::from_doc(env.payload.at("entry"));
    auto k = keys_.find(env.sender.str());
    if (k == keys_.end() || entry.rater != env.sender) throw Error(Errc::NotAParty, "rater is not the sender");
    ledger_.append(entry, k->second, parties_from_commit(commit, k->second));
  } catch (const Error&) {
    ++stats_.ledger_rejects;
  }
}

// ---------------------------------------------------------------------------
// timers

void Agent::on_timer(std::uint64_t id, Out& out) {
  auto node = timers_.extract(id);
  if (node.empty()) return;
  std::visit(overloaded{
                 [&](const SessionDeadline& t) {
                   if (auto it = sessions_.find(t.sid); it != sessions_.end()) apply(it->second, TimerFired{}, out);
                 },
                 [&](const AuthDeadline& t) {
                   auto it = sessions_.find(t.sid);
                   if (it != sessions_.end() && it->second.session.state == SessionState::Init) {
                     apply(it->second, command::Abort{"authentication timeout"}, out);
                   }
                 },
                 [&](const ExecDone& t) {
                   auto it = sessions_.find(t.sid);
                   if (it == sessions_.end() || it->second.session.state != SessionState::Executing) return;
                   const Intent& intent = *it->second.session.intent;
                   Doc result = task_result(intent);
                   if (cfg_.behavior.kind == BehaviorKind::Faulty) result.put("digest", std::string(64, '0'));
                   apply(it->second, command::DeliverResult{std::move(result)}, out);
                 },
                 [&](const LookupRound& t) {
                   auto it = lookups_.find(t.lookup);
                   if (it == lookups_.end() || it->second.lookup.rounds() != t.round) return;
                   for (const auto& d : it->second.lookup.pending()) it->second.lookup.on_failure(d);
                   pump_lookup(t.lookup, out);
                 },
                 [&](const DiscoveryWait& t) {
                   if (--discovery_waits_[{t.plan, t.subtask}] <= 0) candidates_ready(t.plan, t.subtask, out);
                 },
             },
             node.mapped());
}

// ---------------------------------------------------------------------------
// plans

void Agent::begin_plan(PlanRecord rec, Out& out) {
  rec.id = next_plan_++;
  rec.started_at = ctx_->now;
  bool authorized = false;
  try {
    check_chain(rec.chain, ctx_->anchors ? *ctx_->anchors : no_anchors(), rec.plan.max_depth);
    authorized = rec.chain.back().delegatee == self_;
  } catch (const Error&) {
    authorized = false;
  }
  std::uint64_t id = rec.id;
  plans_.emplace(id, std::move(rec));
  PlanRecord& p = plans_.at(id);
  if (!authorized) {
    for (std::size_t i = 0; i < p.plan.subtasks.size(); ++i) mark_failed(p.plan, i, "plan not authorized");
    if (p.plan.subtasks.empty()) p.plan.failure = "plan not authorized";
    p.finished_at = ctx_->now;
    return;
  }
  for (std::size_t i = 0; i < p.plan.subtasks.size(); ++i) discover(id, i, out);
  check_plan(id, out);
}

void Agent::discover(std::uint64_t plan, std::size_t idx, Out& out) {
  const PlanRecord& p = plans_.at(plan);
  const std::string& cap = p.plan.subtasks.at(idx).intent.capability;
  found_.erase({plan, idx});
  int waits = 1;
  if (!ctx_->segment_peers.empty()) {
    ++waits;
    Doc q;
    q.set("public_key", to_hex(cfg_.keys.public_key));
    q.set("query", cap);
    for (const auto& peer : ctx_->segment_peers) send(out, make(MsgType::Announce, peer, rng_.bytes<16>(), q));
    arm(out, ctx_->now + ctx_->local_query_timeout, DiscoveryWait{plan, idx});
  }
  discovery_waits_[{plan, idx}] = waits;
  start_lookup(capability_key(cap), true, Discover{plan, idx}, out);
}

void Agent::candidates_ready(std::uint64_t plan, std::size_t idx, Out& out) {
  discovery_waits_.erase({plan, idx});
  auto pit = plans_.find(plan);
  if (pit == plans_.end()) return;
  PlanRecord& p = pit->second;
  if (p.plan.subtasks.at(idx).status != SubtaskStatus::Unassigned) return;
  const std::string& cap = p.plan.subtasks[idx].intent.capability;
  std::map<std::string, AgentCard> merged;
  for (const auto& c : found_[{plan, idx}]) merged[c.identity.str()] = c;
  for (const auto& [did, heard] : bus_cards_) {
    if (heard.second.has_capability(cap)) merged.try_emplace(did, heard.second);
  }
  found_.erase({plan, idx});
  std::vector<AgentCard> cands;
  for (auto& [_, c] : merged) cands.push_back(std::move(c));
  AgentCard provider;
  try {
    provider = choose_provider(p.plan, idx, cands, self_);
  } catch (const Error& e) {
    mark_failed(p.plan, idx, e.what());
    check_plan(plan, out);
    return;
  }
  open_session(plan, idx, provider, out);
}

void Agent::open_session(std::uint64_t plan, std::size_t idx, const AgentCard& provider, Out& out) {
  PlanRecord& p = plans_.at(plan);
  Subtask& st = p.plan.subtasks.at(idx);
  ProofOfIntent poi;
  try {
    poi = build_poi(cfg_.keys, st.intent, provider.identity, &p.chain.back(), p.plan.max_depth);
  } catch (const Error& e) {
    mark_failed(p.plan, idx, e.what());
    check_plan(plan, out);
    return;
  }
  SessionId sid = rng_.bytes<16>();
  mark_negotiating(p.plan, idx, provider.identity, sid, poi);
  SessionRecord rec;
  rec.session = NegotiationSession::requester(sid, self_, provider.identity);
  rec.plan = plan;
  rec.subtask = idx;
  rec.opened_at = ctx_->now;
  SessionRecord& r = sessions_.emplace(sid, std::move(rec)).first->second;
  if (ctx_->mode == ProtocolMode::LocalTrusted || authenticated_.count(provider.identity)) {
    send_probe(r, out);
    return;
  }
  waiting_auth_[provider.identity].push_back(sid);
  bool pending = std::any_of(outstanding_.begin(), outstanding_.end(),
                             [&](const auto& kv) { return kv.second.second == provider.identity; });
  if (!pending) challenge(provider.identity, {}, out);
  arm(out, ctx_->now + ctx_->stage_timeout, AuthDeadline{sid});
}

void Agent::send_probe(SessionRecord& rec, Out& out) {
  const PlanRecord& p = plans_.at(*rec.plan);
  const Subtask& st = p.plan.subtasks.at(rec.subtask);
  std::vector<ProofOfIntent> chain = p.chain;
  chain.push_back(*st.poi);
  command::SendProbe cmd;
  cmd.intent = st.intent;
  cmd.retry = p.plan.retry;
  cmd.poi_chain = chain_to_doc(chain);
  cmd.expected_result = st.expected_result;
  apply(rec, cmd, out);
}

void Agent::subtask_failed(std::uint64_t plan, std::size_t idx, Out& out) {
  PlanRecord& p = plans_.at(plan);
  if (on_failure(p.plan, idx).renegotiate) discover(plan, idx, out);
  check_plan(plan, out);
}

void Agent::check_plan(std::uint64_t plan, Out& out) {
  PlanRecord& p = plans_.at(plan);
  PlanStatus status = p.plan.status();
  if (status == PlanStatus::InProgress || p.finished_at) return;
  p.finished_at = ctx_->now;
  if (!p.parent_session) return;
  auto it = sessions_.find(*p.parent_session);
  if (it == sessions_.end() || it->second.session.state != SessionState::Executing) return;
  if (status == PlanStatus::Complete) {
    apply(it->second, command::DeliverResult{task_result(p.plan.root_intent)}, out);
  } else {
    apply(it->second, command::Abort{"delegated work failed"}, out);
  }
}

// ---------------------------------------------------------------------------
// persistence

namespace {

void write_file(const std::filesystem::path& path, std::string_view body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::IoError, "cannot write " + path.string());
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw Error(Errc::IoError, "short write to " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::IoError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

void persist(const std::filesystem::path& dir, const StateSnapshot& snap) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "registry", ec);
  if (!ec) std::filesystem::create_directories(dir / "transcripts", ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "ledger.log", snap.ledger.serialize());
  for (const auto& [did, rec] : snap.registry) {
    write_file(dir / "registry" / (Did::parse(did).id() + ".rec"), canonical_encode(rec.to_doc()) + "\n");
  }
  for (const auto& [name, doc] : snap.transcripts) {
    write_file(dir / "transcripts" / (name + ".json"), canonical_encode(doc) + "\n");
  }
}

StateSnapshot load_state(const std::filesystem::path& dir) {
  StateSnapshot snap;
  if (!std::filesystem::exists(dir)) return snap;
  if (std::filesystem::exists(dir / "ledger.log")) snap.ledger = Ledger::parse(read_file(dir / "ledger.log"));
  if (std::filesystem::is_directory(dir / "registry")) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir / "registry")) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& path : files) {
      if (path.extension() != ".rec") continue;
      try {
        std::string body = read_file(path);
        if (body.empty() || body.back() != '\n') throw Error(Errc::CorruptState, "missing newline");
        body.pop_back();
        DhtRecord rec = DhtRecord::from_doc(canonical_decode(body));
        AgentCard card = verify_record(rec);
        if (card.identity.id() != path.stem().string()) throw Error(Errc::CorruptState, "file name");
        snap.registry[card.identity.str()] = rec;
      } catch (const Error& e) {
        if (e.code() == Errc::IoError) throw;
        throw Error(Errc::CorruptState, path.filename().string() + ": " + e.what());
      }
    }
  }
  if (std::filesystem::is_directory(dir / "transcripts")) {
    for (const auto& e : std::filesystem::directory_iterator(dir / "transcripts")) {
      if (e.path().extension() != ".json") continue;
      std::string body = read_file(e.path());
      if (!body.empty() && body.back() == '\n') body.pop_back();
      try {
        snap.transcripts[e.path().stem().string()] = canonical_decode(body);
      } catch (const Error& err) {
        throw Error(Errc::CorruptState, e.path().filename().string() + ": " + err.what());
      }
    }
  }
  return snap;
}

}  // namespace acp

#include "acp/orchestration.hpp"

#include <algorithm>

namespace acp {

namespace {

constexpr std::string_view kPoiDomain = "acp/proof-of-intent/v1\n";

Bytes poi_signing_bytes(const ProofOfIntent& p) {
  std::string s(kPoiDomain);
  s += canonical_encode(p.unsigned_doc());
  return Bytes(s.begin(), s.end());
}

[[noreturn]] void invalid(const std::string& why) { throw Error(Errc::ChainInvalid, why); }

}  // namespace

Doc ProofOfIntent::unsigned_doc() const {
  Doc d;
  d.set("authorizer", authorizer.str());
  d.set("authorizer_key", to_hex(authorizer_key));
  d.set("delegatee", delegatee.str());
  d.set("depth", depth);
  d.set("intent_digest", to_hex(intent_digest));
  if (parent_digest) d.set("parent_digest", to_hex(*parent_digest));
  return d;
}

Doc ProofOfIntent::to_doc() const {
  Doc d = unsigned_doc();
  d.set("signature", to_hex(signature));
  return d;
}

ProofOfIntent ProofOfIntent::from_doc(const Doc& d) {
  ProofOfIntent p;
  p.authorizer = Did::parse(d.at("authorizer").as_text());
  p.authorizer_key = array_from_hex<32>(d.at("authorizer_key").as_text());
  p.delegatee = Did::parse(d.at("delegatee").as_text());
  std::int64_t depth = d.at("depth").as_int();
  if (depth < 0 || depth > 1'000) throw Error(Errc::EncodingError, "depth out of range");
  p.depth = static_cast<int>(depth);
  p.intent_digest = array_from_hex<32>(d.at("intent_digest").as_text());
  if (const Doc* parent = d.find("parent_digest")) p.parent_digest = array_from_hex<32>(parent->as_text());
  p.signature = array_from_hex<64>(d.at("signature").as_text());
  if (d.as_map().size() != (p.parent_digest ? 7u : 6u)) throw Error(Errc::EncodingError, "unexpected PoI field");
  return p;
}

Digest ProofOfIntent::digest() const { return sha256(canonical_encode(to_doc())); }

ProofOfIntent build_poi(const KeyPair& kp, const Intent& intent, const Did& delegatee, const ProofOfIntent* parent,
                        int max_depth) {
  ProofOfIntent p;
  p.intent_digest = intent_digest(intent);
  p.authorizer = did_from_public_key(kp.public_key);
  p.authorizer_key = kp.public_key;
  p.delegatee = delegatee;
  if (parent != nullptr) {
    if (parent->delegatee != p.authorizer) invalid("signer is not the parent's delegatee");
    p.parent_digest = parent->digest();
    p.depth = parent->depth + 1;
  }
  if (p.depth > max_depth) throw Error(Errc::DepthExceeded, std::to_string(p.depth));
  p.signature = sign(kp, poi_signing_bytes(p));
  return p;
}

void check_chain(const std::vector<ProofOfIntent>& chain, const std::set<Did>& anchors, int max_depth) {
  if (chain.empty()) invalid("empty chain");
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const ProofOfIntent& link = chain[i];
    if (link.depth > max_depth) throw Error(Errc::DepthExceeded, std::to_string(link.depth));
    if (link.depth != static_cast<int>(i)) invalid("link " + std::to_string(i) + ": depth");
    if (did_from_public_key(link.authorizer_key) != link.authorizer) {
      invalid("link " + std::to_string(i) + ": authorizer key");
    }
    if (!verify(link.authorizer_key, poi_signing_bytes(link), link.signature)) {
      invalid("link " + std::to_string(i) + ": signature");
    }
    if (i == 0) {
      if (link.parent_digest) invalid("root has a parent");
      if (!anchors.count(link.authorizer)) invalid("root is not a trust anchor");
      continue;
    }
    const ProofOfIntent& parent = chain[i - 1];
    if (!link.parent_digest || *link.parent_digest != parent.digest()) {
      invalid("link " + std::to_string(i) + ": parent digest");
    }
    if (link.authorizer != parent.delegatee) invalid("link " + std::to_string(i) + ": authorizer hand-off");
  }
}

bool verify_chain(const std::vector<ProofOfIntent>& chain, const std::set<Did>& anchors, int max_depth) {
  try {
    check_chain(chain, anchors, max_depth);
    return true;
  } catch (const Error&) {
    return false;
  }
}

std::vector<ProofOfIntent> PoiStore::chain_to(const ProofOfIntent& leaf, int max_depth) const {
  std::vector<ProofOfIntent> chain{leaf};
  while (chain.back().parent_digest) {
    if (static_cast<int>(chain.size()) > max_depth + 1) throw Error(Errc::DepthExceeded, "chain too long");
    auto it = links_.find(*chain.back().parent_digest);
    if (it == links_.end()) invalid("missing parent link");
    chain.push_back(it->second);
  }
  std::reverse(chain.begin(), chain.end());
  return chain;
}

bool verify_chain(const ProofOfIntent& leaf, const PoiStore& store, const std::set<Did>& anchors, int max_depth) {
  try {
    check_chain(store.chain_to(leaf, max_depth), anchors, max_depth);
    return true;
  } catch (const Error&) {
    return false;
  }
}

Doc chain_to_doc(const std::vector<ProofOfIntent>& chain) {
  Doc d = Doc::seq();
  for (const auto& p : chain) d.push(p.to_doc());
  return d;
}

std::vector<ProofOfIntent> chain_from_doc(const Doc& d) {
  std::vector<ProofOfIntent> out;
  for (const auto& item : d.as_seq()) out.push_back(ProofOfIntent::from_doc(item));
  return out;
}

bool authorizes(const std::vector<ProofOfIntent>& chain, const Intent& intent, const Did& provider,
                const std::set<Did>& anchors, int max_depth) {
  if (!verify_chain(chain, anchors, max_depth)) return false;
  const ProofOfIntent& leaf = chain.back();
  return leaf.delegatee == provider && leaf.intent_digest == intent_digest(intent);
}

// ---------------------------------------------------------------------------

std::string_view to_string(SubtaskStatus s) {
  switch (s) {
    case SubtaskStatus::Unassigned: return "Unassigned";
    case SubtaskStatus::Negotiating: return "Negotiating";
    case SubtaskStatus::Executing: return "Executing";
    case SubtaskStatus::Done: return "Done";
    case SubtaskStatus::Failed: return "Failed";
  }
  return "?";
}

std::string_view to_string(PlanStatus s) {
  switch (s) {
    case PlanStatus::InProgress: return "InProgress";
    case PlanStatus::Complete: return "Complete";
    case PlanStatus::Failed: return "Failed";
  }
  return "?";
}

PlanStatus TaskPlan::status() const {
  bool all_done = true;
  for (const auto& s : subtasks) {
    if (s.status == SubtaskStatus::Failed) return PlanStatus::Failed;
    all_done = all_done && s.status == SubtaskStatus::Done;
  }
  return all_done ? PlanStatus::Complete : PlanStatus::InProgress;
}

std::vector<std::size_t> TaskPlan::unassigned() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < subtasks.size(); ++i) {
    if (subtasks[i].status == SubtaskStatus::Unassigned) out.push_back(i);
  }
  return out;
}

std::set<Did> TaskPlan::coalition() const {
  std::set<Did> out;
  for (const auto& s : subtasks) {
    if (s.status == SubtaskStatus::Done && s.assigned) out.insert(*s.assigned);
  }
  return out;
}

Doc TaskPlan::outcome_doc() const {
  Doc subs = Doc::seq();
  for (const auto& s : subtasks) {
    Doc d;
    d.set("attempts", static_cast<std::int64_t>(s.attempts));
    d.set("capability", s.intent.capability);
    d.set("poi_depth", s.poi ? static_cast<std::int64_t>(s.poi->depth) : std::int64_t{-1});
    d.set("provider", s.assigned ? s.assigned->str() : std::string());
    d.set("status", std::string(to_string(s.status)));
    if (s.report) {
      d.set("accuracy_ok", s.report->accuracy_ok);
      d.set("latency_ratio", s.report->latency_ratio);
    }
    subs.push(std::move(d));
  }
  Doc coalition_doc = Doc::seq();
  for (const auto& c : coalition()) coalition_doc.push(c.str());
  Doc d;
  d.set("capability", root_intent.capability);
  d.set("coalition", std::move(coalition_doc));
  if (!failure.empty()) d.set("failure", failure);
  d.set("status", std::string(to_string(status())));
  d.set("subtasks", std::move(subs));
  return d;
}

AgentCard choose_provider(const TaskPlan& plan, std::size_t idx, const std::vector<AgentCard>& candidates,
                          const Did& self) {
  const Subtask& st = plan.subtasks.at(idx);
  std::vector<AgentCard> allowed;
  for (const auto& c : candidates) {
    if (c.identity != self && !st.excluded.count(c.identity)) allowed.push_back(c);
  }
  auto ranked = rank_candidates(allowed, st.intent);
  if (ranked.empty()) throw Error(Errc::SubtaskUnservable, st.intent.capability);
  return ranked.front();
}

void mark_negotiating(TaskPlan& plan, std::size_t idx, const Did& provider, const SessionId& session,
                      const ProofOfIntent& poi) {
  Subtask& st = plan.subtasks.at(idx);
  st.assigned = provider;
  st.session = session;
  st.poi = poi;
  st.report.reset();
  st.status = SubtaskStatus::Negotiating;
  ++st.attempts;
}

void mark_executing(TaskPlan& plan, std::size_t idx) {
  Subtask& st = plan.subtasks.at(idx);
  if (st.status == SubtaskStatus::Negotiating) st.status = SubtaskStatus::Executing;
}

void mark_settled(TaskPlan& plan, std::size_t idx, const SettlementReport& report) {
  Subtask& st = plan.subtasks.at(idx);
  st.report = report;
  if (report.accuracy_ok) {
    st.status = SubtaskStatus::Done;
  } else {
    on_failure(plan, idx);
  }
}

void mark_failed(TaskPlan& plan, std::size_t idx, std::string why) {
  plan.subtasks.at(idx).status = SubtaskStatus::Failed;
  if (plan.failure.empty()) plan.failure = std::move(why);
}

FailureAction on_failure(TaskPlan& plan, std::size_t idx) {
  Subtask& st = plan.subtasks.at(idx);
  FailureAction action;
  ++st.failures;
  if (st.assigned) {
    st.excluded.insert(*st.assigned);
    action.excluded = st.assigned;
  }
  if (plan.retry.renegotiate_on_failure && st.failures <= plan.retry.max_retries) {
    st.status = SubtaskStatus::Unassigned;
    st.session.reset();
    action.renegotiate = true;
  } else {
    mark_failed(plan, idx, "retry budget spent for " + st.intent.capability);
  }
  return action;
}

void delegate(TaskPlan& plan, const KeyPair& self, const ProofOfIntent& parent, const CandidateSource& source,
              const NegotiationDriver& drive) {
  const Did me = did_from_public_key(self.public_key);
  for (std::size_t idx = 0; idx < plan.subtasks.size(); ++idx) {
    while (plan.subtasks[idx].status == SubtaskStatus::Unassigned) {
      Subtask& st = plan.subtasks[idx];
      AgentCard provider;
      try {
        provider = choose_provider(plan, idx, source(st.intent), me);
      } catch (const Error& e) {
        mark_failed(plan, idx, e.what());
        if (st.attempts == 0) throw;
        break;
      }
      ProofOfIntent poi = build_poi(self, st.intent, provider.identity, &parent, plan.max_depth);
      SessionId placeholder{};
      mark_negotiating(plan, idx, provider.identity, placeholder, poi);
      DriveResult r = drive(plan.subtasks[idx], provider, poi);
      Subtask& cur = plan.subtasks[idx];
      if (r.session) cur.session = r.session;
      switch (r.kind) {
        case DriveResult::Kind::Executing: mark_executing(plan, idx); break;
        case DriveResult::Kind::Settled:
          mark_executing(plan, idx);
          mark_settled(plan, idx, r.report.value_or(SettlementReport{}));
          break;
        case DriveResult::Kind::Failed: on_failure(plan, idx); break;
      }
    }
  }
}

}  // namespace acp

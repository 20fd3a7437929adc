#include "acp/semantic.hpp"

#include <algorithm>
#include <set>

namespace acp {

namespace {

constexpr std::array<std::string_view, 4> kActionNames = {"QUERY", "EXECUTE", "DELEGATE", "NEGOTIATE"};

[[noreturn]] void card_invalid(const std::string& field) { throw Error(Errc::CardInvalid, field); }

}  // namespace

std::string_view to_string(IntentAction a) { return kActionNames[static_cast<std::size_t>(a)]; }

IntentAction intent_action_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kActionNames.size(); ++i) {
    if (kActionNames[i] == s) return static_cast<IntentAction>(i);
  }
  throw Error(Errc::EncodingError, "unknown intent action " + std::string(s));
}

bool is_capability_name(std::string_view s) {
  if (s.empty() || s.front() < 'a' || s.front() > 'z' || s.back() == '_') return false;
  char prev = '\0';
  for (char c : s) {
    bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
    if (!ok || (c == '_' && prev == '_')) return false;
    prev = c;
  }
  return true;
}

// ---------------------------------------------------------------------------

Doc ConstraintSet::to_doc() const {
  Doc d;
  if (data_residency) d.set("data_residency", *data_residency);
  if (max_cost) d.set("max_cost", *max_cost);
  if (max_latency_ms) d.set("max_latency_ms", *max_latency_ms);
  return d;
}

ConstraintSet ConstraintSet::from_doc(const Doc& d) {
  ConstraintSet c;
  for (const auto& [key, value] : d.as_map()) {
    if (key == "max_latency_ms") {
      c.max_latency_ms = value.as_int();
      if (*c.max_latency_ms <= 0) throw Error(Errc::EncodingError, "max_latency_ms must be > 0");
    } else if (key == "max_cost") {
      c.max_cost = value.as_decimal();
      if (*c.max_cost <= Decimal{}) throw Error(Errc::EncodingError, "max_cost must be > 0");
    } else if (key == "data_residency") {
      c.data_residency = value.as_text();
      if (c.data_residency->empty()) throw Error(Errc::EncodingError, "data_residency must be nonempty");
    } else {
      throw Error(Errc::EncodingError, "unknown constraint " + key);
    }
  }
  return c;
}

Doc Intent::to_doc() const {
  Doc d;
  d.set("action", std::string(to_string(action)));
  d.set("capability", capability);
  d.set("constraints", constraints.to_doc());
  d.set("parameters", parameters);
  return d;
}

Intent Intent::from_doc(const Doc& d) {
  Intent i;
  i.action = intent_action_from_string(d.at("action").as_text());
  i.capability = d.at("capability").as_text();
  if (!is_capability_name(i.capability)) throw Error(Errc::EncodingError, "capability must be lowercase snake_case");
  i.constraints = ConstraintSet::from_doc(d.at("constraints"));
  i.parameters = d.at("parameters");
  if (!i.parameters.is_map()) throw Error(Errc::EncodingError, "parameters must be a map");
  if (d.as_map().size() != 4) throw Error(Errc::EncodingError, "unexpected intent field");
  return i;
}

Digest intent_digest(const Intent& intent) { return sha256(canonical_encode(intent.to_doc())); }

// ---------------------------------------------------------------------------

Doc AgentCard::to_doc() const {
  Doc caps = Doc::seq();
  for (const auto& c : capabilities) caps.push(c);
  Doc trust;
  trust.set("interactions", interaction_count);
  trust.set("score", trust_score);
  Doc d;
  d.set("capabilities", std::move(caps));
  d.set("constraints", constraints.to_doc());
  d.set("identity", identity.str());
  d.set("interface", interface);
  d.set("trust_score", std::move(trust));
  return d;
}

bool AgentCard::has_capability(std::string_view c) const {
  return std::find(capabilities.begin(), capabilities.end(), c) != capabilities.end();
}

AgentCard validate_card(const Doc& doc) {
  static const std::set<std::string, std::less<>> kFields = {"capabilities", "constraints", "identity", "interface",
                                                             "trust_score"};
  if (!doc.is_map()) card_invalid("card");
  for (const auto& [key, _] : doc.as_map()) {
    if (!kFields.count(key)) card_invalid(key);
  }
  for (const auto& f : kFields) {
    if (!doc.contains(f)) card_invalid(f);
  }

  AgentCard card;
  try {
    card.identity = Did::parse(doc.at("identity").as_text());
  } catch (const Error&) {
    card_invalid("identity");
  }

  try {
    for (const auto& c : doc.at("capabilities").as_seq()) card.capabilities.push_back(c.as_text());
  } catch (const Error&) {
    card_invalid("capabilities");
  }
  if (card.capabilities.empty()) card_invalid("capabilities");
  std::set<std::string> unique(card.capabilities.begin(), card.capabilities.end());
  if (unique.size() != card.capabilities.size()) card_invalid("capabilities");
  for (const auto& c : card.capabilities) {
    if (!is_capability_name(c)) card_invalid("capabilities");
  }

  try {
    card.constraints = ConstraintSet::from_doc(doc.at("constraints"));
  } catch (const Error&) {
    card_invalid("constraints");
  }

  const Doc& trust = doc.at("trust_score");
  try {
    if (trust.as_map().size() != 2) card_invalid("trust_score");
    card.trust_score = trust.at("score").as_decimal();
    card.interaction_count = trust.at("interactions").as_int();
  } catch (const Error& e) {
    if (e.code() == Errc::CardInvalid) throw;
    card_invalid("trust_score");
  }
  if (card.trust_score < Decimal{} || Decimal::from_int(1) < card.trust_score) card_invalid("trust_score");
  if (card.interaction_count < 0) card_invalid("trust_score");

  try {
    card.interface = doc.at("interface").as_text();
  } catch (const Error&) {
    card_invalid("interface");
  }
  return card;
}

bool matches(const AgentCard& card, const Intent& intent) {
  if (!card.has_capability(intent.capability)) return false;
  const auto& want = intent.constraints;
  const auto& offer = card.constraints;
  if (want.data_residency && offer.data_residency && *want.data_residency != *offer.data_residency) return false;
  if (want.max_latency_ms && offer.max_latency_ms && *offer.max_latency_ms > *want.max_latency_ms) return false;
  return true;
}

std::vector<AgentCard> rank_candidates(const std::vector<AgentCard>& cards, const Intent& intent) {
  std::vector<AgentCard> out;
  for (const auto& c : cards) {
    if (matches(c, intent)) out.push_back(c);
  }
  std::stable_sort(out.begin(), out.end(), [](const AgentCard& a, const AgentCard& b) {
    if (a.trust_score != b.trust_score) return b.trust_score < a.trust_score;
    if (a.interaction_count != b.interaction_count) return a.interaction_count > b.interaction_count;
    return a.identity < b.identity;
  });
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct FieldRule {
  std::string_view key;
  Doc::Kind kind;
  bool required;
};

void check_fields(MsgType type, const Doc& payload, std::initializer_list<FieldRule> rules) {
  if (!payload.is_map()) throw Error(Errc::PayloadInvalid, std::string(to_string(type)) + ": payload must be a map");
  std::size_t present = 0;
  for (const auto& rule : rules) {
    const Doc* v = payload.find(rule.key);
    if (v == nullptr) {
      if (rule.required) {
        throw Error(Errc::PayloadInvalid, std::string(to_string(type)) + ": missing " + std::string(rule.key));
      }
      continue;
    }
    ++present;
    bool ok = v->kind() == rule.kind || (rule.kind == Doc::Kind::Decimal && v->is_number());
    if (!ok) throw Error(Errc::PayloadInvalid, std::string(to_string(type)) + ": bad kind for " + std::string(rule.key));
  }
  if (present != payload.as_map().size()) {
    throw Error(Errc::PayloadInvalid, std::string(to_string(type)) + ": unexpected field");
  }
}

using K = Doc::Kind;

}  // namespace

void check_payload(MsgType type, const Doc& payload) {
  switch (type) {
    case MsgType::Probe:
      check_fields(type, payload, {{"intent", K::Map, true}, {"poi_chain", K::Seq, true}, {"retry_policy", K::Map, true}});
      break;
    case MsgType::Bid: check_fields(type, payload, {{"bid", K::Map, true}}); break;
    case MsgType::Commit: check_fields(type, payload, {{"commit_hash", K::Text, true}, {"sla", K::Map, true}}); break;
    case MsgType::Decline:
    case MsgType::Abort: check_fields(type, payload, {{"reason", K::Text, true}}); break;
    case MsgType::Result: check_fields(type, payload, {{"proof", K::Map, true}, {"result", K::Map, true}}); break;
    case MsgType::Rate:
      check_fields(type, payload,
                   {{"composite", K::Decimal, false}, {"commit", K::Text, false}, {"entry", K::Map, false}});
      if (!payload.contains("composite") && !(payload.contains("entry") && payload.contains("commit"))) {
        throw Error(Errc::PayloadInvalid, "RATE: needs composite or entry+commit");
      }
      break;
    case MsgType::Announce:
      check_fields(type, payload,
                   {{"record", K::Map, false}, {"query", K::Text, false}, {"public_key", K::Text, false}});
      if (payload.contains("record") == payload.contains("query") ||
          payload.contains("query") != payload.contains("public_key")) {
        throw Error(Errc::PayloadInvalid, "ANNOUNCE: a record, or a query with public_key");
      }
      break;
    case MsgType::DhtFind:
      check_fields(type, payload,
                   {{"key", K::Text, true}, {"public_key", K::Text, true}, {"want_value", K::Bool, true}});
      break;
    case MsgType::DhtStore:
      check_fields(type, payload, {{"public_key", K::Text, true}, {"record", K::Map, true}});
      break;
    case MsgType::DhtReply:
      check_fields(type, payload,
                   {{"key", K::Text, true}, {"peers", K::Seq, true}, {"public_key", K::Text, true},
                    {"records", K::Seq, true}});
      break;
    case MsgType::Challenge:
      check_fields(type, payload,
                   {{"challenge", K::Map, true}, {"dropped", K::Seq, false}, {"public_key", K::Text, true}});
      break;
    case MsgType::ChallengeResponse:
      check_fields(type, payload,
                   {{"nonce", K::Text, true}, {"public_key", K::Text, true}, {"signature", K::Text, true}});
      break;
  }
}

}  // namespace acp

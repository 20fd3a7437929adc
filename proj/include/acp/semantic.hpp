#pragma once

#include "acp/common.hpp"
#include "acp/decimal.hpp"
#include "acp/doc.hpp"
#include "acp/envelope.hpp"
#include "acp/identity.hpp"

#include <optional>
#include <string>
#include <vector>

namespace acp {

enum class IntentAction { Query, Execute, Delegate, Negotiate };

std::string_view to_string(IntentAction a);
IntentAction intent_action_from_string(std::string_view s);

/// Lowercase snake_case: [a-z][a-z0-9_]*, no trailing or doubled '_'.
bool is_capability_name(std::string_view s);

struct ConstraintSet {
  std::optional<std::int64_t> max_latency_ms;
  std::optional<Decimal> max_cost;
  std::optional<std::string> data_residency;

  Doc to_doc() const;
  /// Throws EncodingError naming the offending key.
  static ConstraintSet from_doc(const Doc& d);
  bool operator==(const ConstraintSet&) const = default;
};

struct Intent {
  IntentAction action = IntentAction::Execute;
  std::string capability;
  Doc parameters = Doc::map();
  ConstraintSet constraints;

  Doc to_doc() const;
  static Intent from_doc(const Doc& d);
};

/// SHA-256 of the intent's canonical encoding.
Digest intent_digest(const Intent& intent);

struct AgentCard {
  Did identity;
  std::vector<std::string> capabilities;
  ConstraintSet constraints;
  Decimal trust_score = Decimal::from_micros(500'000);
  std::int64_t interaction_count = 0;
  std::string interface;

  Doc to_doc() const;
  bool has_capability(std::string_view c) const;
};

/// Checks every card invariant. Errors are CardInvalid with the failing
/// field name as detail (e.g. "capabilities", "trust_score").
AgentCard validate_card(const Doc& doc);

/// capability advertised, residency equal when both sides state one, and the
/// provider's advertised latency no worse than the requested bound.
bool matches(const AgentCard& card, const Intent& intent);

/// Matching cards ordered by trust desc, interaction count desc, Did asc.
std::vector<AgentCard> rank_candidates(const std::vector<AgentCard>& cards, const Intent& intent);

/// Structural check of a protocol payload for its message type; throws
/// PayloadInvalid naming the first problem.
void check_payload(MsgType type, const Doc& payload);

}  // namespace acp

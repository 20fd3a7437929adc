#include "acp/simnet.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <queue>
#include <sstream>

#include <omp.h>

namespace acp {

namespace {

// ---------------------------------------------------------------------------
// scenario reading

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw Error(Errc::ScenarioInvalid, path + ": " + what);
}

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

std::string at_index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

void only(const Doc& d, const std::string& path, std::initializer_list<std::string_view> keys) {
  if (!d.is_map()) bad(path.empty() ? "scenario" : path, "expected a map");
  for (const auto& [k, _] : d.as_map()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) bad(join(path, k), "unknown field");
  }
}

// Runs conv on a sub-document, rewrapping any library error with the path.
template <class F>
auto convert(const Doc& d, const std::string& path, F&& conv) {
  try {
    return conv(d);
  } catch (const Error& e) {
    if (e.code() == Errc::ScenarioInvalid) throw;
    bad(path, e.detail());
  }
}

template <class F>
auto opt_field(const Doc& d, const std::string& path, std::string_view key, F&& conv)
    -> std::optional<decltype(conv(d))> {
  const Doc* f = d.find(key);
  if (!f) return std::nullopt;
  return convert(*f, join(path, key), conv);
}

template <class F>
auto req_field(const Doc& d, const std::string& path, std::string_view key, F&& conv) {
  const Doc* f = d.find(key);
  if (!f) bad(join(path, key), "missing field");
  return convert(*f, join(path, key), conv);
}

const auto as_int = [](const Doc& d) { return d.as_int(); };
const auto as_text = [](const Doc& d) { return d.as_text(); };
const auto as_bool = [](const Doc& d) { return d.as_bool(); };
const auto as_decimal = [](const Doc& d) { return d.as_decimal(); };
const auto as_intent = [](const Doc& d) { return Intent::from_doc(d); };
const auto as_retry = [](const Doc& d) { return RetryPolicy::from_doc(d); };

std::int64_t non_negative(std::int64_t v, const std::string& path) {
  if (v < 0) bad(path, "must not be negative");
  return v;
}

std::vector<std::string> text_list(const Doc& d, const std::string& path) {
  std::vector<std::string> out;
  if (!d.is_seq()) bad(path, "expected a list");
  for (std::size_t i = 0; i < d.as_seq().size(); ++i) out.push_back(convert(d.as_seq()[i], at_index(path, i), as_text));
  return out;
}

KeyPair key_for(const Doc& agent, const std::string& path, std::uint64_t run_seed, const std::string& name) {
  if (auto hex = opt_field(agent, path, "seed", as_text)) {
    return convert(agent.at("seed"), join(path, "seed"), [&](const Doc&) {
      auto raw = array_from_hex<32>(*hex);
      return generate_keypair(raw);
    });
  }
  Sha256Stream h;
  h.update("acp-sim-key\n").update_u64(run_seed).update(name);
  Digest seed = h.finish();
  return generate_keypair(seed);
}

PricingPolicy parse_pricing(const Doc& d, const std::string& path) {
  only(d, path, {"floor_cost", "completion_ms", "default_max_latency_ms"});
  PricingPolicy p;
  if (auto v = opt_field(d, path, "floor_cost", as_decimal)) p.floor_cost = *v;
  if (auto v = opt_field(d, path, "completion_ms", as_int)) p.completion_ms = non_negative(*v, join(path, "completion_ms"));
  if (auto v = opt_field(d, path, "default_max_latency_ms", as_int)) {
    if (*v <= 0) bad(join(path, "default_max_latency_ms"), "must be positive");
    p.default_max_latency_ms = *v;
  }
  return p;
}

std::vector<SubtaskSpec> parse_subtasks(const Doc& d, const std::string& path) {
  if (!d.is_seq()) bad(path, "expected a list");
  std::vector<SubtaskSpec> out;
  for (std::size_t i = 0; i < d.as_seq().size(); ++i) {
    const Doc& s = d.as_seq()[i];
    std::string p = at_index(path, i);
    SubtaskSpec spec;
    if (s.is_map() && s.contains("intent")) {
      only(s, p, {"intent", "check_result"});
      spec.intent = req_field(s, p, "intent", as_intent);
      if (auto c = opt_field(s, p, "check_result", as_bool)) spec.check_result = *c;
    } else {
      spec.intent = convert(s, p, as_intent);
    }
    out.push_back(std::move(spec));
  }
  return out;
}

PlanSpec parse_plan_body(const Doc& d, const std::string& path) {
  PlanSpec spec;
  spec.root_intent = req_field(d, path, "intent", as_intent);
  if (const Doc* s = d.find("subtasks")) {
    spec.subtasks = parse_subtasks(*s, join(path, "subtasks"));
  } else {
    spec.subtasks.push_back({spec.root_intent, true});
  }
  if (auto r = opt_field(d, path, "retry", as_retry)) spec.retry = *r;
  if (auto m = opt_field(d, path, "max_depth", as_int)) {
    if (*m < 1 || *m > kDefaultMaxDepth) bad(join(path, "max_depth"), "out of range");
    spec.max_depth = static_cast<int>(*m);
  }
  return spec;
}

AgentConfig parse_agent(const Doc& d, const std::string& path, std::uint64_t seed) {
  only(d, path,
       {"name", "seed", "behavior", "card", "segment", "pricing", "actual_ms", "delegates", "delegate_retry"});
  AgentConfig cfg;
  cfg.name = req_field(d, path, "name", as_text);
  if (cfg.name.empty()) bad(join(path, "name"), "must not be empty");
  cfg.keys = key_for(d, path, seed, cfg.name);
  std::string behavior = req_field(d, path, "behavior", as_text);

  Doc card_doc;
  if (const Doc* c = d.find("card")) {
    only(*c, join(path, "card"), {"capabilities", "constraints", "trust_score", "interface"});
    card_doc = *c;
  } else {
    std::string head = behavior.substr(0, behavior.find(':'));
    card_doc.set("capabilities", Doc::Seq{Doc(head)});
  }
  card_doc.put("identity", did_from_public_key(cfg.keys.public_key).str());
  if (!card_doc.contains("interface")) card_doc.put("interface", "sim://" + cfg.name);
  if (!card_doc.contains("constraints")) card_doc.put("constraints", Doc::map());
  if (!card_doc.contains("trust_score")) {
    Doc trust;
    trust.set("interactions", 0);
    trust.set("score", Decimal::from_micros(500'000));
    card_doc.put("trust_score", std::move(trust));
  }
  cfg.card = convert(card_doc, join(path, "card"), [](const Doc& c) { return validate_card(c); });

  try {
    cfg.behavior = parse_behavior(behavior, cfg.card);
  } catch (const Error& e) {
    bad(join(path, "behavior"), e.detail());
  }
  if (auto s = opt_field(d, path, "segment", as_text)) cfg.segment = *s;
  if (const Doc* p = d.find("pricing")) cfg.pricing = parse_pricing(*p, join(path, "pricing"));
  if (auto a = opt_field(d, path, "actual_ms", as_int)) cfg.actual_ms = non_negative(*a, join(path, "actual_ms"));
  if (const Doc* del = d.find("delegates")) cfg.delegates = parse_subtasks(*del, join(path, "delegates"));
  if (auto r = opt_field(d, path, "delegate_retry", as_retry)) cfg.delegate_retry = *r;
  try {
    validate_config(cfg);
  } catch (const Error& e) {
    bad(path, e.detail());
  }
  return cfg;
}

void parse_population(const Doc& d, const std::string& path, std::uint64_t seed, std::optional<std::size_t> count_override,
                      std::vector<AgentConfig>& agents) {
  only(d, path, {"count", "prefix", "behavior", "capabilities", "pricing", "actual_ms", "segment_size"});
  std::int64_t count = req_field(d, path, "count", as_int);
  if (count_override) count = static_cast<std::int64_t>(*count_override);
  if (count < 0) bad(join(path, "count"), "must not be negative");
  std::string prefix = opt_field(d, path, "prefix", as_text).value_or("n");
  std::string behavior = opt_field(d, path, "behavior", as_text).value_or("provider");
  std::vector<std::string> caps = d.contains("capabilities") ? text_list(d.at("capabilities"), join(path, "capabilities"))
                                                              : std::vector<std::string>{"generic_task"};
  if (caps.empty()) bad(join(path, "capabilities"), "must not be empty");
  PricingPolicy pricing;
  if (const Doc* p = d.find("pricing")) pricing = parse_pricing(*p, join(path, "pricing"));
  auto actual = opt_field(d, path, "actual_ms", as_int);
  std::int64_t segment_size = opt_field(d, path, "segment_size", as_int).value_or(0);

  for (std::int64_t i = 0; i < count; ++i) {
    Doc a;
    a.set("name", prefix + std::to_string(i));
    a.set("behavior", behavior);
    Doc card;
    card.set("capabilities", Doc::Seq{Doc(caps[static_cast<std::size_t>(i) % caps.size()])});
    a.set("card", std::move(card));
    if (segment_size > 0) a.set("segment", prefix + "-seg" + std::to_string(i / segment_size));
    AgentConfig cfg = parse_agent(a, at_index(path, static_cast<std::size_t>(i)), seed);
    cfg.pricing = pricing;
    if (actual) cfg.actual_ms = *actual;
    agents.push_back(std::move(cfg));
  }
}

Expectations parse_expect(const Doc& d, const std::string& path) {
  only(d, path,
       {"success_rate_min", "complete_within_ms", "min_coalition", "coalition_capabilities", "ledger_verified",
        "max_mean_negotiation_ms", "no_invariant_violations"});
  Expectations e;
  e.min_success_rate = opt_field(d, path, "success_rate_min", as_decimal);
  e.complete_within_ms = opt_field(d, path, "complete_within_ms", as_int);
  if (auto c = opt_field(d, path, "min_coalition", as_int)) e.min_coalition = static_cast<std::size_t>(*c);
  if (const Doc* c = d.find("coalition_capabilities")) {
    e.coalition_capabilities = text_list(*c, join(path, "coalition_capabilities"));
  }
  e.ledger_verified = opt_field(d, path, "ledger_verified", as_bool).value_or(false);
  if (auto m = opt_field(d, path, "max_mean_negotiation_ms", as_decimal)) e.max_mean_negotiation_ms = m->to_double();
  e.no_invariant_violations = opt_field(d, path, "no_invariant_violations", as_bool).value_or(true);
  return e;
}

}  // namespace

Scenario scenario_from_doc(const Doc& doc, std::uint64_t seed, std::optional<std::size_t> population) {
  only(doc, "",
       {"horizon_ms", "link", "mode", "stage_timeout_ms", "rpc_timeout_ms", "join_spacing_ms", "anchors", "agents",
        "population", "plans", "load", "events", "lookups", "expect"});
  Scenario sc;
  if (auto h = opt_field(doc, "", "horizon_ms", as_int)) {
    if (*h <= 0) bad("horizon_ms", "must be positive");
    sc.horizon_ms = *h;
  }
  if (const Doc* l = doc.find("link")) {
    only(*l, "link", {"base_latency_ms", "jitter_ms", "drop_probability"});
    if (auto v = opt_field(*l, "link", "base_latency_ms", as_int)) sc.link.base_latency_ms = non_negative(*v, "link.base_latency_ms");
    if (auto v = opt_field(*l, "link", "jitter_ms", as_int)) sc.link.jitter_ms = non_negative(*v, "link.jitter_ms");
    if (auto v = opt_field(*l, "link", "drop_probability", as_decimal)) {
      if (*v < Decimal() || *v >= Decimal::from_int(1)) bad("link.drop_probability", "must be in [0, 1)");
      sc.link.drop_probability = *v;
    }
  }
  if (auto m = opt_field(doc, "", "mode", as_text)) {
    sc.mode = convert(doc.at("mode"), "mode", [&](const Doc&) { return protocol_mode_from_string(*m); });
  }
  if (auto v = opt_field(doc, "", "stage_timeout_ms", as_int)) {
    if (*v <= 0) bad("stage_timeout_ms", "must be positive");
    sc.stage_timeout_ms = *v;
  }
  if (auto v = opt_field(doc, "", "rpc_timeout_ms", as_int)) {
    if (*v <= 0) bad("rpc_timeout_ms", "must be positive");
    sc.rpc_timeout_ms = *v;
  }
  if (auto v = opt_field(doc, "", "join_spacing_ms", as_int)) sc.join_spacing_ms = non_negative(*v, "join_spacing_ms");

  if (const Doc* a = doc.find("anchors")) {
    if (!a->is_seq()) bad("anchors", "expected a list");
    for (std::size_t i = 0; i < a->as_seq().size(); ++i) {
      const Doc& entry = a->as_seq()[i];
      std::string p = at_index("anchors", i);
      Doc norm = entry.is_text() ? Doc(Doc::Map{{"name", entry}}) : entry;
      only(norm, p, {"name", "seed"});
      std::string name = req_field(norm, p, "name", as_text);
      if (sc.anchors.count(name)) bad(p, "duplicate anchor " + name);
      sc.anchors.emplace(name, key_for(norm, p, seed, "anchor:" + name));
    }
  }

  std::map<std::string, std::size_t> names;
  auto add_names = [&](std::size_t from, const std::string& path) {
    for (std::size_t i = from; i < sc.agents.size(); ++i) {
      if (!names.emplace(sc.agents[i].name, i).second) bad(path, "duplicate agent name " + sc.agents[i].name);
    }
  };
  if (const Doc* a = doc.find("agents")) {
    if (!a->is_seq()) bad("agents", "expected a list");
    for (std::size_t i = 0; i < a->as_seq().size(); ++i) {
      sc.agents.push_back(parse_agent(a->as_seq()[i], at_index("agents", i), seed));
    }
    add_names(0, "agents");
  }
  if (const Doc* p = doc.find("population")) {
    std::size_t before = sc.agents.size();
    parse_population(*p, "population", seed, population, sc.agents);
    add_names(before, "population");
  }
  std::size_t registries = 0;
  for (const auto& a : sc.agents) registries += a.behavior.kind == BehaviorKind::Registry;
  if (registries > 1) bad("agents", "at most one registry agent");

  auto check_agent = [&](const std::string& name, const std::string& path) {
    if (!names.count(name)) bad(path, "unknown agent " + name);
  };
  auto check_anchor = [&](const std::string& name, const std::string& path) {
    if (!sc.anchors.count(name)) bad(path, "unknown anchor " + name);
  };

  if (const Doc* plans = doc.find("plans")) {
    if (!plans->is_seq()) bad("plans", "expected a list");
    for (std::size_t i = 0; i < plans->as_seq().size(); ++i) {
      const Doc& d = plans->as_seq()[i];
      std::string p = at_index("plans", i);
      only(d, p, {"at", "requester", "anchor", "intent", "subtasks", "retry", "max_depth"});
      PlanInjection inj;
      inj.at = non_negative(req_field(d, p, "at", as_int), join(p, "at"));
      inj.requester = req_field(d, p, "requester", as_text);
      check_agent(inj.requester, join(p, "requester"));
      inj.anchor = req_field(d, p, "anchor", as_text);
      check_anchor(inj.anchor, join(p, "anchor"));
      inj.spec = parse_plan_body(d, p);
      sc.plans.push_back(std::move(inj));
    }
  }
  if (const Doc* load = doc.find("load")) {
    const std::string p = "load";
    only(*load, p, {"plans", "over_ms", "start_at", "requesters", "anchor", "plan"});
    std::int64_t count = opt_field(*load, p, "plans", as_int).value_or(50);
    std::int64_t over = opt_field(*load, p, "over_ms", as_int).value_or(10'000);
    std::int64_t start = opt_field(*load, p, "start_at", as_int).value_or(0);
    if (count <= 0) bad("load.plans", "must be positive");
    if (over < 0) bad("load.over_ms", "must not be negative");
    std::vector<std::string> requesters = text_list(req_field(*load, p, "requesters", [](const Doc& d) { return d; }),
                                                    "load.requesters");
    if (requesters.empty()) bad("load.requesters", "must not be empty");
    for (std::size_t i = 0; i < requesters.size(); ++i) check_agent(requesters[i], at_index("load.requesters", i));
    std::string anchor = req_field(*load, p, "anchor", as_text);
    check_anchor(anchor, "load.anchor");
    const Doc* body = load->find("plan");
    if (!body) bad("load.plan", "missing field");
    only(*body, "load.plan", {"intent", "subtasks", "retry", "max_depth"});
    PlanSpec spec = parse_plan_body(*body, "load.plan");
    for (std::int64_t i = 0; i < count; ++i) {
      PlanInjection inj;
      inj.at = start + over * i / count;
      inj.requester = requesters[static_cast<std::size_t>(i) % requesters.size()];
      inj.anchor = anchor;
      inj.spec = spec;
      sc.plans.push_back(std::move(inj));
    }
  }
  if (const Doc* events = doc.find("events")) {
    if (!events->is_seq()) bad("events", "expected a list");
    for (std::size_t i = 0; i < events->as_seq().size(); ++i) {
      const Doc& d = events->as_seq()[i];
      std::string p = at_index("events", i);
      only(d, p, {"at", "agent", "kind"});
      AgentEvent ev;
      ev.at = non_negative(req_field(d, p, "at", as_int), join(p, "at"));
      if (ev.at > sc.horizon_ms) bad(join(p, "at"), "beyond the horizon");
      ev.agent = req_field(d, p, "agent", as_text);
      check_agent(ev.agent, join(p, "agent"));
      std::string kind = req_field(d, p, "kind", as_text);
      if (kind != "down" && kind != "up") bad(join(p, "kind"), "expected down or up");
      ev.up = kind == "up";
      sc.events.push_back(std::move(ev));
    }
  }
  if (const Doc* lookups = doc.find("lookups")) {
    if (!lookups->is_seq()) bad("lookups", "expected a list");
    for (std::size_t i = 0; i < lookups->as_seq().size(); ++i) {
      const Doc& d = lookups->as_seq()[i];
      std::string p = at_index("lookups", i);
      only(d, p, {"at", "count", "want_value"});
      LookupBatch b;
      b.at = non_negative(req_field(d, p, "at", as_int), join(p, "at"));
      b.count = static_cast<std::size_t>(non_negative(req_field(d, p, "count", as_int), join(p, "count")));
      b.want_value = opt_field(d, p, "want_value", as_bool).value_or(false);
      sc.lookups.push_back(b);
    }
  }
  if (const Doc* e = doc.find("expect")) sc.expect = parse_expect(*e, "expect");
  return sc;
}

Scenario parse_scenario(std::string_view text, std::uint64_t seed, std::optional<std::size_t> population) {
  Doc doc;
  try {
    doc = parse_document(text);
  } catch (const Error& e) {
    throw Error(Errc::ScenarioInvalid, e.detail());
  }
  return scenario_from_doc(doc, seed, population);
}

Doc inject_failure(const Doc& scenario, std::string_view agent, SimTime at) {
  // Parse once to validate the name and time against the document as given.
  Scenario sc = scenario_from_doc(scenario, 0);
  if (std::none_of(sc.agents.begin(), sc.agents.end(), [&](const AgentConfig& a) { return a.name == agent; })) {
    throw Error(Errc::ScenarioInvalid, "events: unknown agent " + std::string(agent));
  }
  if (at < 0 || at > sc.horizon_ms) throw Error(Errc::ScenarioInvalid, "events: time outside the horizon");
  Doc out = scenario;
  if (!out.contains("events")) out.set("events", Doc::seq());
  Doc ev;
  ev.set("agent", std::string(agent));
  ev.set("at", at);
  ev.set("kind", "down");
  out.as_map().at("events").push(std::move(ev));
  return out;
}

// ---------------------------------------------------------------------------
// metrics

std::string metrics_csv_header() {
  return "N,plans_started,plans_complete,task_success_rate,mean_latency_ms,p95_latency_ms,mean_negotiation_ms,"
         "mean_overhead,dht_mean_hops,messages_sent,messages_delivered,messages_dropped";
}

namespace {

std::string fixed(double v, int places = 4) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(places);
  ss << v;
  return ss.str();
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double p95_of(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  auto idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size()))) - 1;
  return v[idx];
}

}  // namespace

std::string metrics_csv_row(const RunMetrics& m) {
  std::ostringstream ss;
  ss << m.n << ',' << m.plans_started << ',' << m.plans_complete << ',' << fixed(m.task_success_rate) << ','
     << fixed(m.mean_latency_ms) << ',' << fixed(m.p95_latency_ms) << ',' << fixed(m.mean_negotiation_ms) << ','
     << fixed(m.mean_overhead) << ',' << fixed(m.dht_mean_hops) << ',' << m.messages_sent << ','
     << m.messages_delivered << ',' << (m.dropped_link + m.dropped_down);
  return ss.str();
}

bool RunResult::expectations_hold() const {
  return std::all_of(expectations.begin(), expectations.end(), [](const ExpectationResult& e) { return e.pass; });
}

Doc RunResult::outcomes_doc() const {
  Doc list = Doc::seq();
  for (const auto& o : outcomes) list.push(o);
  return list;
}

StateSnapshot RunResult::snapshot() const {
  StateSnapshot s;
  s.ledger = ledger;
  s.registry = registry;
  s.transcripts = transcripts;
  return s;
}

// ---------------------------------------------------------------------------
// simulator

namespace {

namespace ev {
struct Deliver {
  std::size_t to = 0;
  Bytes frame;
  SimTime sent_at = 0;
};
struct Timer {
  std::size_t agent = 0;
  std::uint64_t id = 0;
};
struct Down {
  std::size_t agent = 0;
};
struct Up {
  std::size_t agent = 0;
};
struct Inject {
  std::size_t agent = 0;
  NodeEvent event;
};
}  // namespace ev

using EventBody = std::variant<ev::Deliver, ev::Timer, ev::Down, ev::Up, ev::Inject>;

struct SimEvent {
  SimTime at = 0;
  std::uint64_t seq = 0;
  EventBody body;
};

struct Later {
  bool operator()(const SimEvent& a, const SimEvent& b) const {
    return a.at != b.at ? a.at > b.at : a.seq > b.seq;
  }
};

class Simulator {
 public:
  Simulator(const Scenario& sc, std::uint64_t seed) : sc_(sc), net_rng_(derive_seed(seed, 0)) {
    for (const auto& [_, kp] : sc.anchors) anchor_dids_.insert(did_from_public_key(kp.public_key));
    for (std::size_t i = 0; i < sc.agents.size(); ++i) {
      agents_.push_back(std::make_unique<Agent>(sc.agents[i], derive_seed(seed, i + 1)));
      index_.emplace(agents_.back()->did(), i);
      by_name_.emplace(sc.agents[i].name, i);
      if (sc.agents[i].behavior.kind == BehaviorKind::Registry) registry_ = agents_.back()->did();
    }
    down_.assign(agents_.size(), false);
    build_contexts();
    schedule_setup();
  }

  RunResult run() {
    while (!queue_.empty() && queue_.top().at <= sc_.horizon_ms) {
      SimEvent e = queue_.top();
      queue_.pop();
      now_ = e.at;
      trace_.update_u64(static_cast<std::uint64_t>(e.at)).update_u64(e.seq).update_u64(e.body.index());
      execute(e);
    }
    std::uint64_t in_flight = 0;
    while (!queue_.empty()) {
      in_flight += std::holds_alternative<ev::Deliver>(queue_.top().body);
      queue_.pop();
    }
    return collect(in_flight);
  }

 private:
  void build_contexts() {
    contexts_.resize(agents_.size());
    std::map<std::string, std::vector<Did>> segments;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      if (!sc_.agents[i].segment.empty()) segments[sc_.agents[i].segment].push_back(agents_[i]->did());
    }
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      NodeContext& c = contexts_[i];
      c.mode = sc_.mode;
      c.stage_timeout = sc_.stage_timeout_ms;
      c.rpc_timeout = sc_.rpc_timeout_ms;
      c.local_query_timeout = 2 * (sc_.link.base_latency_ms + sc_.link.jitter_ms) + 5;
      c.registry = registry_;
      c.anchors = &anchor_dids_;
      c.is_down = [this](const Did& d) {
        auto it = index_.find(d);
        return it == index_.end() || down_[it->second];
      };
      if (!sc_.agents[i].segment.empty()) {
        for (const auto& d : segments[sc_.agents[i].segment]) {
          if (d != agents_[i]->did()) c.segment_peers.push_back(d);
        }
      }
    }
  }

  void push(SimTime at, EventBody body) { queue_.push({at, seq_++, std::move(body)}); }

  void schedule_setup() {
    std::vector<std::size_t> joined;
    SimTime t = 0;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      if (!sc_.agents[i].behavior.in_dht()) continue;
      if (!joined.empty()) contexts_[i].bootstrap.push_back(agents_[joined[net_rng_.uniform(joined.size())]]->did());
      push(t, ev::Inject{i, node_event::Join{}});
      joined.push_back(i);
      t += sc_.join_spacing_ms;
    }
    for (const auto& p : sc_.plans) {
      std::size_t r = by_name_.at(p.requester);
      const KeyPair& anchor = sc_.anchors.at(p.anchor);
      std::vector<ProofOfIntent> chain{build_poi(anchor, p.spec.root_intent, agents_[r]->did(), nullptr, p.spec.max_depth)};
      push(p.at, ev::Inject{r, node_event::StartPlan{p.spec, std::move(chain)}});
    }
    for (const auto& e : sc_.events) {
      std::size_t a = by_name_.at(e.agent);
      if (e.up) {
        push(e.at, ev::Up{a});
      } else {
        push(e.at, ev::Down{a});
      }
    }
    for (const auto& b : sc_.lookups) {
      if (joined.empty()) break;
      for (std::size_t k = 0; k < b.count; ++k) {
        std::size_t from = joined[net_rng_.uniform(joined.size())];
        Digest key{};
        if (b.want_value) {
          key = did_key(agents_[joined[net_rng_.uniform(joined.size())]]->did());
        } else {
          key = net_rng_.bytes<32>();
        }
        push(b.at, ev::Inject{from, node_event::MeasureLookup{key, b.want_value}});
      }
    }
  }

  void execute(SimEvent& e) {
    std::visit(
        [&](auto& body) {
          using T = std::decay_t<decltype(body)>;
          if constexpr (std::is_same_v<T, ev::Deliver>) {
            trace_.update_u64(body.to).update(ByteView(body.frame));
            if (down_[body.to]) {
              ++dropped_down_;
              return;
            }
            ++delivered_;
            latencies_.push_back(static_cast<double>(now_ - body.sent_at));
            dispatch(body.to, node_event::Deliver{std::move(body.frame)});
          } else if constexpr (std::is_same_v<T, ev::Timer>) {
            trace_.update_u64(body.agent).update_u64(body.id);
            if (!down_[body.agent]) dispatch(body.agent, node_event::TimerFire{body.id});
          } else if constexpr (std::is_same_v<T, ev::Down>) {
            trace_.update_u64(body.agent);
            down_[body.agent] = true;
          } else if constexpr (std::is_same_v<T, ev::Up>) {
            trace_.update_u64(body.agent);
            down_[body.agent] = false;
          } else {
            trace_.update_u64(body.agent);
            if (!down_[body.agent]) dispatch(body.agent, body.event);
          }
        },
        e.body);
  }

  void dispatch(std::size_t i, const NodeEvent& event) {
    NodeContext& ctx = contexts_[i];
    ctx.now = now_;
    Actions actions = agents_[i]->handle(event, ctx);
    for (const auto& env : actions.send) transmit(env);
    for (const auto& t : actions.timers) push(std::max(t.at, now_), ev::Timer{i, t.id});
  }

  void transmit(const Envelope& env) {
    ++sent_;
    overhead_sum_ += envelope_overhead(env);
    auto it = index_.find(env.recipient);
    if (it == index_.end()) {
      ++dropped_down_;
      return;
    }
    if (sc_.link.drop_probability.micros() > 0 && net_rng_.chance_micros(sc_.link.drop_probability.micros())) {
      ++dropped_link_;
      return;
    }
    SimTime delay = sc_.link.base_latency_ms;
    if (sc_.link.jitter_ms > 0) delay += static_cast<SimTime>(net_rng_.uniform(static_cast<std::uint64_t>(sc_.link.jitter_ms) + 1));
    push(now_ + delay, ev::Deliver{it->second, frame(env), now_});
  }

  RunResult collect(std::uint64_t in_flight) {
    RunResult r;
    RunMetrics& m = r.metrics;
    m.n = agents_.size();
    m.messages_sent = sent_;
    m.messages_delivered = delivered_;
    m.dropped_link = dropped_link_;
    m.dropped_down = dropped_down_;
    m.in_flight = in_flight;
    m.mean_latency_ms = mean_of(latencies_);
    m.p95_latency_ms = p95_of(latencies_);
    m.mean_overhead = sent_ ? overhead_sum_ / static_cast<double>(sent_) : 0;
    r.finished_at = now_;

    struct RootPlan {
      SimTime started;
      std::size_t agent;
      std::uint64_t id;
    };
    std::vector<RootPlan> roots;
    std::vector<RootPlan> all_plans;
    std::vector<double> negotiation;
    std::vector<double> hops;
    std::set<Did> coalition;
    for (std::size_t i = 0; i < agents_.size(); ++i) {
      const Agent& a = *agents_[i];
      for (const auto& [id, p] : a.plans()) {
        all_plans.push_back({p.started_at, i, id});
        if (p.chain.size() == 1) roots.push_back({p.started_at, i, id});
        for (const auto& st : p.plan.subtasks) {
          if (st.status != SubtaskStatus::Done || !st.assigned) continue;
          const auto& caps = sc_.expect.coalition_capabilities;
          if (caps.empty() || std::find(caps.begin(), caps.end(), st.intent.capability) != caps.end()) {
            coalition.insert(*st.assigned);
          }
        }
      }
      for (const auto& [sid, s] : a.sessions()) {
        r.transcripts[sc_.agents[i].name + "-" + to_hex(sid)] = s.session.transcript_doc();
        if (s.session.role != Role::Requester || !s.settled_at) continue;
        negotiation.push_back(static_cast<double>(*s.settled_at - s.opened_at));
        ++r.settled_sessions;
      }
      for (const auto& l : a.lookup_stats()) {
        if (!l.measured) continue;
        hops.push_back(static_cast<double>(l.hops));
        r.lookup_hops.push_back(l.hops);
      }
      if (a.registered()) r.registry[a.did().str()] = a.own_record();
      if (registry_ && a.did() == *registry_) r.ledger = a.ledger();
      r.agents.push_back({sc_.agents[i].name, a.did(), a.stats()});
    }
    auto by_start = [](const RootPlan& x, const RootPlan& y) {
      return std::tie(x.started, x.agent, x.id) < std::tie(y.started, y.agent, y.id);
    };
    std::sort(roots.begin(), roots.end(), by_start);
    std::sort(all_plans.begin(), all_plans.end(), by_start);

    SimTime last_finish = 0;
    bool all_complete = true;
    for (const auto& rp : roots) {
      const PlanRecord& p = agents_[rp.agent]->plans().at(rp.id);
      bool complete = p.plan.status() == PlanStatus::Complete && p.finished_at;
      m.plans_complete += complete;
      all_complete = all_complete && complete;
      if (p.finished_at) last_finish = std::max(last_finish, *p.finished_at);
    }
    for (const auto& rp : all_plans) {
      const PlanRecord& p = agents_[rp.agent]->plans().at(rp.id);
      Doc o;
      o.set("delegated", p.chain.size() > 1);
      o.set("finished_at", p.finished_at ? *p.finished_at : std::int64_t{-1});
      o.set("outcome", p.plan.outcome_doc());
      o.set("requester", sc_.agents[rp.agent].name);
      o.set("started_at", p.started_at);
      r.outcomes.push_back(std::move(o));
    }
    m.plans_started = roots.size();
    m.task_success_rate = roots.empty() ? 0 : static_cast<double>(m.plans_complete) / static_cast<double>(roots.size());
    m.mean_negotiation_ms = mean_of(negotiation);
    m.dht_mean_hops = mean_of(hops);
    m.dht_p95_hops = p95_of(hops);
    m.dht_lookups = hops.size();
    r.trace_hash = trace_.finish();

    const Expectations& x = sc_.expect;
    if (x.min_success_rate) {
      double want = x.min_success_rate->to_double();
      r.expectations.push_back({"success_rate", m.task_success_rate >= want,
                                fixed(m.task_success_rate) + " vs minimum " + fixed(want)});
    }
    if (x.complete_within_ms) {
      bool ok = !roots.empty() && all_complete && last_finish <= *x.complete_within_ms;
      r.expectations.push_back({"complete_within", ok,
                                std::to_string(m.plans_complete) + "/" + std::to_string(roots.size()) +
                                    " complete, last at " + std::to_string(last_finish) + " ms"});
    }
    if (x.min_coalition) {
      r.expectations.push_back({"coalition", coalition.size() >= *x.min_coalition,
                                std::to_string(coalition.size()) + " providers vs minimum " +
                                    std::to_string(*x.min_coalition)});
    }
    if (x.ledger_verified) {
      bool ok = registry_.has_value();
      std::string detail = "no registry agent";
      if (ok) {
        try {
          Ledger reread = Ledger::parse(r.ledger.serialize());
          ok = reread.head() == Ledger::chain_digest(r.ledger.entries()) && r.ledger.size() == r.settled_sessions;
          detail = std::to_string(r.ledger.size()) + " entries for " + std::to_string(r.settled_sessions) +
                   " settled sessions";
        } catch (const Error& e) {
          ok = false;
          detail = e.what();
        }
      }
      r.expectations.push_back({"ledger_verified", ok, detail});
    }
    if (x.max_mean_negotiation_ms) {
      r.expectations.push_back({"negotiation_latency", !negotiation.empty() && m.mean_negotiation_ms < *x.max_mean_negotiation_ms,
                                fixed(m.mean_negotiation_ms) + " ms vs limit " + fixed(*x.max_mean_negotiation_ms)});
    }
    if (x.no_invariant_violations) {
      std::uint64_t bad_exec = 0, bad_auth = 0;
      for (const auto& a : r.agents) {
        bad_exec += a.stats.executions_without_poi;
        bad_auth += a.stats.unauthenticated_processed;
      }
      r.expectations.push_back({"invariants", bad_exec == 0 && bad_auth == 0,
                                std::to_string(bad_exec) + " unauthorized executions, " + std::to_string(bad_auth) +
                                    " unauthenticated messages processed"});
    }
    return r;
  }

  const Scenario& sc_;
  Rng net_rng_;
  std::vector<std::unique_ptr<Agent>> agents_;
  std::vector<NodeContext> contexts_;
  std::map<Did, std::size_t> index_;
  std::map<std::string, std::size_t> by_name_;
  std::vector<bool> down_;
  std::set<Did> anchor_dids_;
  std::optional<Did> registry_;

  std::priority_queue<SimEvent, std::vector<SimEvent>, Later> queue_;
  std::uint64_t seq_ = 0;
  SimTime now_ = 0;
  Sha256Stream trace_;

  std::uint64_t sent_ = 0;
  std::uint64_t delivered_ = 0;
  std::uint64_t dropped_link_ = 0;
  std::uint64_t dropped_down_ = 0;
  double overhead_sum_ = 0;
  std::vector<double> latencies_;
};

}  // namespace

RunResult run(const Scenario& scenario, std::uint64_t seed) {
  ensure_crypto_initialized();
  Simulator sim(scenario, seed);
  return sim.run();
}

void write_run(const std::filesystem::path& dir, const RunResult& r) {
  persist(dir, r.snapshot());
  auto write = [&](const std::string& name, const std::string& body) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    f << body;
    if (!f) throw Error(Errc::IoError, "cannot write " + (dir / name).string());
  };
  write("metrics.csv", metrics_csv_header() + "\n" + metrics_csv_row(r.metrics) + "\n");
  write("outcomes.json", pretty(r.outcomes_doc()));
  write("trace.sha256", to_hex(r.trace_hash) + "\n");
}

// ---------------------------------------------------------------------------
// sweeps

LogFit fit_log2(const std::vector<std::pair<std::size_t, double>>& mean_hops) {
  LogFit fit;
  double sxy = 0, sxx = 0, sy = 0;
  for (const auto& [n, y] : mean_hops) {
    double x = std::log2(static_cast<double>(n));
    sxy += x * y;
    sxx += x * x;
    sy += y;
  }
  if (sxx == 0) return fit;
  fit.c = sxy / sxx;
  double mean_y = sy / static_cast<double>(mean_hops.size());
  double ss_res = 0, ss_tot = 0;
  for (const auto& [n, y] : mean_hops) {
    double pred = fit.c * std::log2(static_cast<double>(n));
    ss_res += (y - pred) * (y - pred);
    ss_tot += (y - mean_y) * (y - mean_y);
  }
  fit.r2 = ss_tot > 0 ? 1 - ss_res / ss_tot : (ss_res == 0 ? 1 : 0);
  return fit;
}

namespace {

SweepRow sweep_one(const Doc& tmpl, std::size_t n, std::uint64_t seed) {
  Scenario sc = scenario_from_doc(tmpl, seed, n);
  RunResult r = run(sc, seed);
  return {n, seed, r.metrics, std::move(r.lookup_hops)};
}

}  // namespace

std::vector<SweepRow> sweep_serial(const Doc& scenario_template, const std::vector<std::size_t>& counts,
                                   const std::vector<std::uint64_t>& seeds) {
  std::vector<SweepRow> rows;
  for (std::size_t n : counts) {
    for (std::uint64_t s : seeds) rows.push_back(sweep_one(scenario_template, n, s));
  }
  return rows;
}

std::vector<SweepRow> sweep_parallel(const Doc& scenario_template, const std::vector<std::size_t>& counts,
                                     const std::vector<std::uint64_t>& seeds) {
  ensure_crypto_initialized();
  const std::size_t total = counts.size() * seeds.size();
  std::vector<SweepRow> rows(total);
  std::vector<std::exception_ptr> errors(total);
  // Largest simulations first so the dynamic schedule balances better.
  std::vector<std::size_t> order(total);
  for (std::size_t i = 0; i < total; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a / seeds.size()] > counts[b / seeds.size()]; });
#pragma omp parallel for schedule(dynamic, 1)
  for (std::int64_t k = 0; k < static_cast<std::int64_t>(total); ++k) {
    std::size_t job = order[static_cast<std::size_t>(k)];
    try {
      rows[job] = sweep_one(scenario_template, counts[job / seeds.size()], seeds[job % seeds.size()]);
    } catch (...) {
      errors[job] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

std::string sweep_csv_header() {
  return "N,seed,mean_hops,p95_hops,c_fit,r2_fit,mean_negotiation_ms,task_success_rate,messages_sent";
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::map<std::size_t, std::pair<double, std::size_t>> per_n;
  for (const auto& r : rows) {
    auto& acc = per_n[r.n];
    acc.first += r.metrics.dht_mean_hops;
    acc.second += 1;
  }
  std::vector<std::pair<std::size_t, double>> means;
  for (const auto& [n, acc] : per_n) means.emplace_back(n, acc.first / static_cast<double>(acc.second));
  LogFit fit = fit_log2(means);
  std::ostringstream ss;
  ss << sweep_csv_header() << '\n';
  for (const auto& r : rows) {
    ss << r.n << ',' << r.seed << ',' << fixed(r.metrics.dht_mean_hops) << ',' << fixed(r.metrics.dht_p95_hops) << ','
       << fixed(fit.c) << ',' << fixed(fit.r2) << ',' << fixed(r.metrics.mean_negotiation_ms) << ','
       << fixed(r.metrics.task_success_rate) << ',' << r.metrics.messages_sent << '\n';
  }
  return ss.str();
}

}  // namespace acp

#pragma once

#include "acp/node.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace acp {

struct LinkModel {
  std::int64_t base_latency_ms = 10;
  std::int64_t jitter_ms = 0;           // uniform in [0, jitter]
  Decimal drop_probability;             // in [0, 1)
};

struct PlanInjection {
  SimTime at = 0;
  std::string requester;  // agent name
  std::string anchor;     // trust anchor that signs the root authorization
  PlanSpec spec;
};

struct AgentEvent {
  SimTime at = 0;
  std::string agent;
  bool up = false;
};

struct LookupBatch {
  SimTime at = 0;
  std::size_t count = 0;
  bool want_value = false;
};

/// Declared outcome checks; `sim run` exits 3 when any of them fails.
struct Expectations {
  std::optional<Decimal> min_success_rate;
  std::optional<SimTime> complete_within_ms;
  std::optional<std::size_t> min_coalition;
  std::vector<std::string> coalition_capabilities;  // empty: any capability
  bool ledger_verified = false;
  std::optional<double> max_mean_negotiation_ms;
  bool no_invariant_violations = true;
};

struct ExpectationResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct Scenario {
  SimTime horizon_ms = 60'000;
  LinkModel link;
  ProtocolMode mode = ProtocolMode::Acp;
  SimTime stage_timeout_ms = kStageTimeoutMs;
  SimTime rpc_timeout_ms = 100;
  SimTime join_spacing_ms = 5;
  std::vector<AgentConfig> agents;     // explicit agents first, then population
  std::map<std::string, KeyPair> anchors;
  std::vector<PlanInjection> plans;    // explicit plans plus expanded load
  std::vector<AgentEvent> events;
  std::vector<LookupBatch> lookups;
  Expectations expect;
};

/// Parses a scenario file (lenient document syntax). Syntax errors carry
/// the line; semantic errors name the field path, e.g.
/// "agents[2].card.capabilities". Agent keys come from the agent's "seed"
/// when present, otherwise from SHA-256 of the run seed and the agent name.
/// Throws ScenarioInvalid.
Scenario parse_scenario(std::string_view text, std::uint64_t seed, std::optional<std::size_t> population = {});
Scenario scenario_from_doc(const Doc& doc, std::uint64_t seed, std::optional<std::size_t> population = {});

/// Returns the scenario document with an AgentDown event for the named
/// agent at t. Throws ScenarioInvalid for an unknown agent or t outside the
/// horizon.
Doc inject_failure(const Doc& scenario, std::string_view agent, SimTime at);

struct RunMetrics {
  std::size_t n = 0;
  std::size_t plans_started = 0;
  std::size_t plans_complete = 0;
  double task_success_rate = 0;
  double mean_latency_ms = 0;  // one-way delivery
  double p95_latency_ms = 0;
  double mean_negotiation_ms = 0;  // session open to settlement
  double mean_overhead = 0;
  double dht_mean_hops = 0;
  double dht_p95_hops = 0;
  std::size_t dht_lookups = 0;
  std::uint64_t messages_sent = 0;
  std::uint64_t messages_delivered = 0;
  std::uint64_t dropped_link = 0;
  std::uint64_t dropped_down = 0;
  std::uint64_t in_flight = 0;  // still queued at the horizon
};

std::string metrics_csv_header();
std::string metrics_csv_row(const RunMetrics& m);

struct AgentSummary {
  std::string name;
  Did did;
  AgentStats stats;
};

struct RunResult {
  RunMetrics metrics;
  Digest trace_hash{};
  SimTime finished_at = 0;
  std::vector<Doc> outcomes;              // every plan, delegated ones included, in start order
  std::map<std::string, Doc> transcripts;  // "<agent>-<session hex>" -> transcript
  std::vector<AgentSummary> agents;
  Ledger ledger;                           // the registry agent's ledger
  std::map<std::string, DhtRecord> registry;
  std::vector<ExpectationResult> expectations;
  std::uint64_t settled_sessions = 0;      // requester-side settlements
  std::vector<std::size_t> lookup_hops;    // measured lookups only

  bool expectations_hold() const;
  Doc outcomes_doc() const;
  StateSnapshot snapshot() const;
};

/// Runs the scenario to an empty queue or the horizon. Deterministic in
/// (scenario, seed); single-threaded.
RunResult run(const Scenario& scenario, std::uint64_t seed);

/// Writes metrics.csv, outcomes.json and the state directory layout
/// (ledger.log, registry/, transcripts/). Throws IoError.
void write_run(const std::filesystem::path& dir, const RunResult& r);

// ---------------------------------------------------------------------------
// sweeps

struct SweepRow {
  std::size_t n = 0;
  std::uint64_t seed = 0;
  RunMetrics metrics;
  std::vector<std::size_t> hops;
};

struct LogFit {
  double c = 0;   // hops = c * log2(N), through the origin
  double r2 = 0;  // coefficient of determination against that model
};

/// Least-squares through-origin fit of mean hops against log2 N over the
/// per-N means.
LogFit fit_log2(const std::vector<std::pair<std::size_t, double>>& mean_hops);

/// One full simulation per (N, seed). The serial version is the reference;
/// the parallel version runs whole simulations on OpenMP threads and must
/// produce identical rows.
std::vector<SweepRow> sweep_serial(const Doc& scenario_template, const std::vector<std::size_t>& counts,
                                   const std::vector<std::uint64_t>& seeds);
std::vector<SweepRow> sweep_parallel(const Doc& scenario_template, const std::vector<std::size_t>& counts,
                                     const std::vector<std::uint64_t>& seeds);

std::string sweep_csv_header();
/// Rows plus the global fit column.
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace acp

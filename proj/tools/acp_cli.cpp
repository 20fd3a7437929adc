// Command-line driver: keys, cards, simulations, sweeps, ledgers, envelopes.
//
// Exit codes
//   0  success
//   2  validation failure (bad arguments, invalid card/scenario/envelope)
//   3  a scenario's declared expectations did not hold
//   4  I/O error or corrupt state directory

#include "acp/simnet.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kExpectation = 3;
constexpr int kIo = 4;

int exit_code_for(acp::Errc code) {
  switch (code) {
    case acp::Errc::IoError:
    case acp::Errc::CorruptState: return kIo;
    default: return kValidation;
  }
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw acp::Error(acp::Errc::IoError, "cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view body) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  if (!f) throw acp::Error(acp::Errc::IoError, "cannot write " + path);
}

// Run seeds: decimal, or hex with a 0x prefix.
std::uint64_t parse_seed(const std::string& text) {
  try {
    std::size_t used = 0;
    std::uint64_t v = 0;
    if (text.rfind("0x", 0) == 0 || text.rfind("0X", 0) == 0) {
      v = std::stoull(text.substr(2), &used, 16);
      used += 2;
    } else {
      v = std::stoull(text, &used, 10);
    }
    if (used != text.size() || text.empty() || text[0] == '-') throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw acp::Error(acp::Errc::ScenarioInvalid, "bad seed " + text);
  }
}

// "1..10" (inclusive) or "1,2,5".
std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  if (auto dots = text.find(".."); dots != std::string::npos) {
    std::uint64_t lo = parse_seed(text.substr(0, dots));
    std::uint64_t hi = parse_seed(text.substr(dots + 2));
    if (hi < lo || hi - lo > 100000) throw acp::Error(acp::Errc::ScenarioInvalid, "bad seed range " + text);
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    return out;
  }
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(parse_seed(part));
  if (out.empty()) throw acp::Error(acp::Errc::ScenarioInvalid, "empty seed list");
  return out;
}

acp::KeyPair load_key(const std::string& path) {
  std::string raw = read_file(path);
  return acp::keypair_from_file_bytes(acp::as_bytes(raw));
}

acp::AgentCard load_card(const std::string& path) {
  std::string text = read_file(path);
  acp::Doc doc;
  try {
    doc = acp::parse_document(text);
  } catch (const acp::Error& e) {
    throw acp::Error(acp::Errc::CardInvalid, e.detail());
  }
  return acp::validate_card(doc);
}

// --- subcommand bodies -------------------------------------------------------

struct KeygenOpts {
  std::string seed;
  std::string out;
};

int cmd_keygen(const KeygenOpts& o) {
  acp::Bytes seed = acp::from_hex(o.seed);
  acp::KeyPair kp = acp::generate_keypair(seed);
  acp::Bytes body = acp::key_file_bytes(kp);
  write_file(o.out, std::string_view(reinterpret_cast<const char*>(body.data()), body.size()));
  std::cout << acp::did_from_public_key(kp.public_key).str() << "\n";
  return kOk;
}

struct CardNewOpts {
  std::string key;
  std::vector<std::string> capabilities;
  std::optional<std::int64_t> max_latency_ms;
  std::optional<std::string> max_cost;
  std::optional<std::string> residency;
  std::string trust = "0.5";
  std::int64_t interactions = 0;
  std::string interface;
  std::string out;
};

int cmd_card_new(const CardNewOpts& o) {
  acp::KeyPair kp = load_key(o.key);
  acp::AgentCard card;
  card.identity = acp::did_from_public_key(kp.public_key);
  card.capabilities = o.capabilities;
  card.constraints.max_latency_ms = o.max_latency_ms;
  if (o.max_cost) card.constraints.max_cost = acp::Decimal::parse(*o.max_cost);
  card.constraints.data_residency = o.residency;
  card.trust_score = acp::Decimal::parse(o.trust);
  card.interaction_count = o.interactions;
  card.interface = o.interface.empty() ? "sim://" + card.identity.id() : o.interface;
  card = acp::validate_card(card.to_doc());
  write_file(o.out, acp::pretty(card.to_doc()));
  std::cout << card.identity.str() << "\n";
  return kOk;
}

int cmd_card_show(const std::string& file) {
  acp::AgentCard card = load_card(file);
  std::cout << acp::pretty(card.to_doc());
  return kOk;
}

int cmd_card_validate(const std::string& file) {
  acp::AgentCard card = load_card(file);
  std::cout << "ok " << card.identity.str() << "\n";
  return kOk;
}

struct CardRecordOpts {
  std::string card;
  std::string key;
  std::int64_t stored_at = 0;
  std::string out;
};

int cmd_card_record(const CardRecordOpts& o) {
  acp::AgentCard card = load_card(o.card);
  acp::KeyPair kp = load_key(o.key);
  acp::DhtRecord rec = acp::make_record(kp, card, acp::did_key(card.identity), o.stored_at);
  acp::verify_record(rec);
  write_file(o.out, acp::canonical_encode(rec.to_doc()) + "\n");
  return kOk;
}

struct SimRunOpts {
  std::string scenario;
  std::string seed = "1";
  std::string out;
};

int cmd_sim_run(const SimRunOpts& o) {
  std::uint64_t seed = parse_seed(o.seed);
  acp::Scenario sc = acp::parse_scenario(read_file(o.scenario), seed);
  acp::RunResult r = acp::run(sc, seed);
  if (!o.out.empty()) acp::write_run(o.out, r);
  std::cout << acp::metrics_csv_header() << "\n" << acp::metrics_csv_row(r.metrics) << "\n";
  std::cout << "trace " << acp::to_hex(r.trace_hash) << "\n";
  for (const auto& e : r.expectations) {
    std::cout << (e.pass ? "pass " : "FAIL ") << e.name << ": " << e.detail << "\n";
  }
  if (!r.expectations_hold()) {
    std::cerr << "error: scenario expectations did not hold\n";
    return kExpectation;
  }
  return kOk;
}

struct SimSweepOpts {
  std::string scenario;
  std::vector<std::size_t> agents;
  std::string seeds = "1";
  std::string out;
  bool serial = false;
};

int cmd_sim_sweep(const SimSweepOpts& o) {
  acp::Doc tmpl;
  try {
    tmpl = acp::parse_document(read_file(o.scenario));
  } catch (const acp::Error& e) {
    if (e.code() == acp::Errc::IoError) throw;
    throw acp::Error(acp::Errc::ScenarioInvalid, e.detail());
  }
  for (std::size_t n : o.agents) {
    if (n < 2) throw acp::Error(acp::Errc::ScenarioInvalid, "agent counts must be at least 2");
  }
  auto seeds = parse_seed_list(o.seeds);
  auto rows = o.serial ? acp::sweep_serial(tmpl, o.agents, seeds) : acp::sweep_parallel(tmpl, o.agents, seeds);
  std::string csv = acp::sweep_csv(rows);
  if (!o.out.empty()) {
    write_file(o.out, csv);
  } else {
    std::cout << csv;
  }
  return kOk;
}

struct LedgerShowOpts {
  std::string state;
  std::string did;
};

int cmd_ledger_show(const LedgerShowOpts& o) {
  if (!std::filesystem::is_directory(o.state)) throw acp::Error(acp::Errc::IoError, "no state directory " + o.state);
  acp::StateSnapshot snap = acp::load_state(o.state);
  std::cout << "entries " << snap.ledger.size() << "\n";
  std::cout << "head " << acp::to_hex(snap.ledger.head()) << "\n";
  std::vector<acp::Did> who;
  if (!o.did.empty()) {
    who.push_back(acp::Did::parse(o.did));
  } else {
    who = snap.ledger.ratees();
  }
  std::cout << "did,trust,interactions\n";
  for (const auto& d : who) {
    acp::TrustScore t = snap.ledger.trust(d);
    std::cout << d.str() << ',' << t.score.to_string() << ',' << t.interactions << "\n";
  }
  return kOk;
}

struct VerifyOpts {
  std::string envelope;
  std::string card;
};

int cmd_verify_envelope(const VerifyOpts& o) {
  std::string framed = read_file(o.envelope);
  std::string rec_text = read_file(o.card);
  acp::DhtRecord rec;
  try {
    rec = acp::DhtRecord::from_doc(acp::parse_document(rec_text));
  } catch (const acp::Error& e) {
    throw acp::Error(acp::Errc::RecordRejected, e.detail());
  }
  acp::AgentCard card = acp::verify_record(rec);
  acp::Envelope env = acp::unframe(acp::as_bytes(framed));
  if (env.sender != card.identity) {
    throw acp::Error(acp::Errc::InvalidSignature, "envelope sender " + env.sender.str() + " is not " +
                                                      card.identity.str());
  }
  acp::open_envelope(env, rec.public_key);
  std::cout << "ok " << acp::to_string(env.type) << " from " << env.sender.str() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Agent coordination protocol toolkit", "acp"};
  app.require_subcommand(1);
  int result = kOk;

  KeygenOpts keygen;
  auto* k = app.add_subcommand("keygen", "Derive an Ed25519 key file from a 32-byte hex seed");
  k->add_option("--seed", keygen.seed, "64 hex digits")->required();
  k->add_option("--out", keygen.out, "Key file to write")->required();
  k->callback([&] { result = cmd_keygen(keygen); });

  auto* card = app.add_subcommand("card", "Create, inspect and validate Agent Cards");
  card->require_subcommand(1);
  CardNewOpts card_new;
  auto* cn = card->add_subcommand("new", "Write a card for a key file");
  cn->add_option("--key", card_new.key, "Key file")->required();
  cn->add_option("--capabilities", card_new.capabilities, "Capability names")->required()->delimiter(',');
  cn->add_option("--max-latency-ms", card_new.max_latency_ms, "Advertised latency bound");
  cn->add_option("--max-cost", card_new.max_cost, "Advertised cost bound");
  cn->add_option("--residency", card_new.residency, "Data residency region");
  cn->add_option("--trust", card_new.trust, "Trust score in [0,1]");
  cn->add_option("--interactions", card_new.interactions, "Interaction count");
  cn->add_option("--interface", card_new.interface, "Endpoint text");
  cn->add_option("--out", card_new.out, "Card file to write")->required();
  cn->callback([&] { result = cmd_card_new(card_new); });

  std::string card_file;
  auto* cs = card->add_subcommand("show", "Print a card in canonical form");
  cs->add_option("file", card_file, "Card file")->required();
  cs->callback([&] { result = cmd_card_show(card_file); });
  auto* cv = card->add_subcommand("validate", "Check a card; errors name the failing field");
  cv->add_option("file", card_file, "Card file")->required();
  cv->callback([&] { result = cmd_card_validate(card_file); });

  CardRecordOpts card_record;
  auto* cr = card->add_subcommand("record", "Sign a card into a registry record");
  cr->add_option("file", card_record.card, "Card file")->required();
  cr->add_option("--key", card_record.key, "Key file of the card's identity")->required();
  cr->add_option("--stored-at", card_record.stored_at, "Record timestamp (ms)");
  cr->add_option("--out", card_record.out, "Record file to write")->required();
  cr->callback([&] { result = cmd_card_record(card_record); });

  auto* sim = app.add_subcommand("sim", "Run simulated networks");
  sim->require_subcommand(1);
  SimRunOpts sim_run;
  auto* sr = sim->add_subcommand("run", "Run one scenario");
  sr->add_option("--scenario", sim_run.scenario, "Scenario file")->required();
  sr->add_option("--seed", sim_run.seed, "Run seed (decimal, or hex with 0x)");
  sr->add_option("--out", sim_run.out, "Output directory for metrics, outcomes and state");
  sr->callback([&] { result = cmd_sim_run(sim_run); });

  SimSweepOpts sim_sweep;
  auto* sw = sim->add_subcommand("sweep", "Run a scenario template over agent counts and seeds");
  sw->add_option("--scenario", sim_sweep.scenario, "Scenario template with a population section")->required();
  sw->add_option("--agents", sim_sweep.agents, "Agent counts, comma separated")->required()->delimiter(',');
  sw->add_option("--seeds", sim_sweep.seeds, "Seed range a..b or list a,b,c");
  sw->add_option("--seed", sim_sweep.seeds, "Single seed");
  sw->add_option("--out", sim_sweep.out, "CSV file to write instead of stdout");
  sw->add_flag("--serial", sim_sweep.serial, "Use the single-threaded reference sweep");
  sw->callback([&] { result = cmd_sim_sweep(sim_sweep); });

  auto* ledger = app.add_subcommand("ledger", "Inspect the reputation ledger");
  ledger->require_subcommand(1);
  LedgerShowOpts ledger_show;
  auto* ls = ledger->add_subcommand("show", "Print trust scores from a state directory");
  ls->add_option("--state", ledger_show.state, "State directory")->required();
  ls->add_option("--did", ledger_show.did, "Only this Did");
  ls->callback([&] { result = cmd_ledger_show(ledger_show); });

  VerifyOpts verify;
  auto* ve = app.add_subcommand("verify-envelope", "Check an envelope signature against a registry record");
  ve->add_option("file", verify.envelope, "Framed envelope file")->required();
  ve->add_option("--card", verify.card, "Signed registry record of the sender")->required();
  ve->callback([&] { result = cmd_verify_envelope(verify); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const acp::Error& e) {
    std::cerr << "error: " << acp::errc_name(e.code()) << ": " << e.detail() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return result;
}

// Acceptance run: one line per criterion, PASS or FAIL, with the measured
// numbers next to the bound they are held to. Exit status is the number of
// failed criteria.

#include "acp/kernels.hpp"
#include "acp/reputation.hpp"
#include "acp/simnet.hpp"
#include "../support/fixtures.hpp"
#include "../support/lifecycle_oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace acp;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scenario_path(const char* name) { return fs::path(fx::source_dir()) / "scenarios" / (std::string(name) + ".json"); }
Doc scenario_doc(const char* name) { return parse_document(read_text(scenario_path(name))); }

template <typename F>
bool rejected(F&& f) {
  try {
    f();
  } catch (const Error&) {
    return true;
  }
  return false;
}

// ---------------------------------------------------------------------------

Verdict lifecycle() {
  auto t0 = Clock::now();
  fx::Conformance table = fx::table_conformance();
  fx::FuzzReport fuzz = fx::fuzz_lifecycle(0xacce97, 100'000);
  double secs = seconds_since(t0);
  bool ok = table.mismatches == 0 && fuzz.sequences == 100'000 && fuzz.crashes == 0 &&
            fuzz.broken_invariants == 0 && secs < 60.0;
  return {ok, std::to_string(table.cells) + " cells, " + std::to_string(table.mismatches) + " mismatches; " +
                  std::to_string(fuzz.sequences) + " sequences / " + std::to_string(fuzz.steps) + " steps, " +
                  std::to_string(fuzz.crashes) + " crashes, " + std::to_string(fuzz.broken_invariants) +
                  " broken invariants; " + fmt("%.1f s (limit 60 s)", secs)};
}

// ---------------------------------------------------------------------------

struct AttackTally {
  std::size_t attacks = 0;
  std::size_t rejected = 0;
  std::size_t controls = 0;
  std::size_t controls_accepted = 0;

  void attack(bool was_rejected) {
    ++attacks;
    rejected += was_rejected ? 1 : 0;
  }
  void control(bool accepted) {
    ++controls;
    controls_accepted += accepted ? 1 : 0;
  }
};

Doc random_payload(Rng& rng) {
  Doc d;
  d.set("capability", "market_analysis");
  d.set("nonce", static_cast<std::int64_t>(rng.uniform(1'000'000)));
  std::string text(1 + rng.uniform(200), 'x');
  for (auto& c : text) c = static_cast<char>('a' + rng.uniform(26));
  d.set("text", text);
  return d;
}

void envelope_attacks(Rng& rng, const std::vector<KeyPair>& keys, AttackTally& t, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const KeyPair& from = keys[rng.uniform(keys.size())];
    const KeyPair& attacker = keys[rng.uniform(keys.size())];
    EnvelopeHeader h{kAllMsgTypes[rng.uniform(kAllMsgTypes.size())], fx::did_of(keys[0]), rng.bytes<16>(),
                     rng.uniform(1000), static_cast<SimTime>(rng.uniform(1'000'000))};
    Envelope env = seal(from, h, random_payload(rng));
    t.control(!rejected([&] { open_envelope(Envelope::decode(env.encode()), from.public_key); }));

    switch (rng.uniform(3)) {
      case 0: {  // one flipped byte anywhere on the wire
        Bytes wire = env.encode();
        wire[rng.uniform(wire.size())] ^= static_cast<std::uint8_t>(1 + rng.uniform(255));
        t.attack(rejected([&] { open_envelope(Envelope::decode(wire), from.public_key); }));
        break;
      }
      case 1: {  // payload edited after signing
        Envelope edited = env;
        edited.payload.put("nonce", static_cast<std::int64_t>(rng.uniform(1'000'000)) + 1'000'000);
        t.attack(rejected([&] { open_envelope(edited, from.public_key); }));
        break;
      }
      default: {  // someone else signs in the sender's name
        if (attacker.public_key == from.public_key) {
          Envelope wrong = env;
          wrong.sequence += 1;
          t.attack(rejected([&] { open_envelope(wrong, from.public_key); }));
          break;
        }
        Envelope forged = seal(attacker, h, env.payload);
        forged.sender = env.sender;
        t.attack(rejected([&] { open_envelope(forged, from.public_key); }));
        t.attack(rejected([&] { open_envelope(forged, attacker.public_key); }));
        break;
      }
    }
  }
}

void card_attacks(Rng& rng, const std::vector<KeyPair>& keys, AttackTally& t, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const KeyPair& owner = keys[rng.uniform(keys.size())];
    const KeyPair& attacker = keys[(rng.uniform(keys.size() - 1) + 1 + (&owner - keys.data())) % keys.size()];
    AgentCard card = fx::card_for(owner, {"market_analysis"}, "0.5", static_cast<std::int64_t>(rng.uniform(100)));
    DhtRecord rec = make_record(owner, card, did_key(card.identity), static_cast<SimTime>(rng.uniform(100'000)));
    t.control(record_valid(rec));

    DhtRecord bad = rec;
    switch (rng.uniform(5)) {
      case 0: bad.card.put("trust_score", parse_document(R"({"score": 1, "interactions": 99999})")); break;
      case 1: bad.card.put("capabilities", parse_document(R"(["market_analysis", "payments"])")); break;
      case 2: bad = make_record(attacker, card, did_key(card.identity), rec.stored_at); break;
      case 3: bad.publisher_signature[rng.uniform(64)] ^= 1; break;
      default: bad.key = did_key(fx::did_of(attacker)); break;
    }
    t.attack(!record_valid(bad));
  }
}

void replay_attacks(Rng& rng, const std::vector<KeyPair>& keys, AttackTally& t, std::size_t n) {
  NonceRegistry consumed;
  ReplayGuard guard;
  for (std::size_t i = 0; i < n; ++i) {
    const KeyPair& kp = keys[rng.uniform(keys.size())];
    if (rng.uniform(2) == 0) {
      SimTime now = static_cast<SimTime>(i) * 10;
      Challenge c = issue_challenge(fx::did_of(keys[0]), rng, now);
      Signature sig = answer_challenge(kp, c);
      t.control(!rejected([&] {
        if (!verify_challenge(kp.public_key, c, sig, consumed, now + 1)) throw Error(Errc::InvalidSignature, "");
      }));
      t.attack(rejected([&] { verify_challenge(kp.public_key, c, sig, consumed, now + 2); }));
    } else {
      EnvelopeHeader h{MsgType::Probe, fx::did_of(keys[0]), rng.bytes<16>(), rng.uniform(10), 0};
      Envelope env = seal(kp, h, random_payload(rng));
      t.control(!rejected([&] { open_envelope(env, kp.public_key, &guard); }));
      t.attack(rejected([&] { open_envelope(env, kp.public_key, &guard); }));
    }
  }
}

void poi_attacks(Rng& rng, const std::vector<KeyPair>& keys, AttackTally& t, std::size_t n) {
  Intent intent = fx::market_intent();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t len = 1 + rng.uniform(6);
    std::vector<std::size_t> who;
    for (std::size_t k = 0; k <= len; ++k) who.push_back(rng.uniform(keys.size()));
    std::vector<ProofOfIntent> chain;
    for (std::size_t k = 0; k < len; ++k) {
      chain.push_back(build_poi(keys[who[k]], intent, fx::did_of(keys[who[k + 1]]), chain.empty() ? nullptr : &chain.back()));
    }
    std::set<Did> anchors{fx::did_of(keys[who[0]])};
    t.control(verify_chain(chain, anchors));

    std::vector<ProofOfIntent> bad = chain;
    std::size_t at = rng.uniform(bad.size());
    const KeyPair& outsider = keys[rng.uniform(keys.size())];
    bool anchors_changed = false;
    std::set<Did> other_anchors{fx::did_of(keys[(who[0] + 1) % keys.size()])};
    switch (rng.uniform(6)) {
      case 0: bad[at].signature[rng.uniform(64)] ^= 1; break;
      case 1: bad[at].intent_digest[rng.uniform(32)] ^= 1; break;
      case 2: bad[at].delegatee = fx::did_of(keys[(who[at + 1] + 1) % keys.size()]); break;
      case 3:  // a link dropped: a middle one, or the root of a two-link chain
        if (bad.size() >= 3) {
          bad.erase(bad.begin() + 1 + static_cast<std::ptrdiff_t>(rng.uniform(bad.size() - 2)));
        } else if (bad.size() == 2) {
          bad.erase(bad.begin());
        } else {
          anchors_changed = true;
        }
        break;
      case 4: {  // a validly signed link from someone never delegated to
        ProofOfIntent fake_parent = at == 0 ? bad[0] : bad[at - 1];
        fake_parent.delegatee = fx::did_of(outsider);
        ProofOfIntent forged = build_poi(outsider, intent, bad[at].delegatee, at == 0 ? nullptr : &fake_parent);
        if (at > 0) forged.parent_digest = bad[at - 1].digest();
        if (outsider.public_key == keys[who[at]].public_key) {
          forged.signature[0] ^= 1;  // same signer would be legitimate; break it instead
        }
        bad[at] = forged;
        break;
      }
      default: anchors_changed = true; break;
    }
    if (anchors_changed && other_anchors == anchors) other_anchors = {Did::parse("did:acp:Nobody")};
    t.attack(!verify_chain(bad, anchors_changed ? other_anchors : anchors));
  }
}

Verdict zero_trust() {
  Rng rng(0x2e40);
  std::vector<KeyPair> keys;
  for (int i = 0; i < 12; ++i) keys.push_back(generate_keypair(rng.bytes<32>()));
  AttackTally env, card, replay, poi;
  envelope_attacks(rng, keys, env, 3000);
  card_attacks(rng, keys, card, 3000);
  replay_attacks(rng, keys, replay, 3000);
  poi_attacks(rng, keys, poi, 3000);

  std::size_t attacks = env.attacks + card.attacks + replay.attacks + poi.attacks;
  std::size_t rejected_total = env.rejected + card.rejected + replay.rejected + poi.rejected;
  std::size_t controls = env.controls + card.controls + replay.controls + poi.controls;
  std::size_t controls_ok = env.controls_accepted + card.controls_accepted + replay.controls_accepted +
                            poi.controls_accepted;
  auto part = [](const char* name, const AttackTally& t) {
    return std::string(name) + " " + std::to_string(t.rejected) + "/" + std::to_string(t.attacks);
  };
  bool ok = attacks >= 10'000 && rejected_total == attacks && controls_ok == controls;
  return {ok, std::to_string(rejected_total) + "/" + std::to_string(attacks) + " attacks rejected (" +
                  part("envelopes", env) + ", " + part("cards", card) + ", " + part("replays", replay) + ", " +
                  part("poi", poi) + "); " + std::to_string(controls_ok) + "/" + std::to_string(controls) +
                  " untouched controls accepted"};
}

// ---------------------------------------------------------------------------

Verdict dht_scaling() {
  auto t0 = Clock::now();
  std::vector<std::pair<std::size_t, double>> means;
  std::string detail;
  for (std::size_t n : {16, 64, 256, 1024}) {
    SeededNetwork sn = build_seeded_network(n, 0xd47 + n);
    auto queries = random_queries(n, 100, 0x9e + n);
    auto results = find_batch_parallel(sn.net, queries);
    double sum = 0;
    for (const auto& r : results) sum += static_cast<double>(r.hops);
    double mean = sum / static_cast<double>(results.size());
    means.push_back({n, mean});
    detail += "N=" + std::to_string(n) + fmt(" %.2f, ", mean);
  }
  LogFit fit = fit_log2(means);
  double secs = seconds_since(t0);
  bool ok = fit.c <= 2.0 && fit.r2 >= 0.8 && secs < 300.0;
  return {ok, "mean hops " + detail + fmt("c=%.3f (limit 2), ", fit.c) + fmt("R2=%.3f (min 0.8), ", fit.r2) +
                  fmt("%.1f s", secs)};
}

// ---------------------------------------------------------------------------

Verdict overhead() {
  KeyPair kp = fx::key(0x01);
  Doc payload;
  payload.set("data", std::string(1024 - 11, 'a'));  // {"data":"..."} is exactly 1 KiB
  if (canonical_encode(payload).size() != 1024) return {false, "payload sizing"};
  Envelope env = seal(kp, EnvelopeHeader{MsgType::Result, fx::did_of(fx::key(0x02)), {}, 7, 1000}, payload);
  double ov = envelope_overhead(env);

  Doc base = scenario_doc("happy_path");
  base.as_map().erase("expect");
  double latency[3];
  const char* modes[3] = {"local_trusted", "acp", "verbose_rpc"};
  for (int i = 0; i < 3; ++i) {
    Doc d = base;
    d.put("mode", modes[i]);
    RunResult r = run(scenario_from_doc(d, 1), 1);
    latency[i] = r.metrics.plans_complete == 1 ? r.metrics.mean_negotiation_ms : -1;
  }
  bool ordered = latency[0] > 0 && latency[0] < latency[1] && latency[1] < latency[2];
  bool ok = ov >= 0.04 && ov <= 0.12 && ordered;
  return {ok, fmt("1 KiB envelope overhead %.2f%% (bounds 4%%..12%%); ", ov * 100) +
                  fmt("end-to-end negotiation local %.0f ms < ", latency[0]) + fmt("acp %.0f ms < ", latency[1]) +
                  fmt("verbose %.0f ms", latency[2])};
}

// ---------------------------------------------------------------------------

Verdict high_load() {
  Doc with = scenario_doc("high_load");
  with.as_map().erase("expect");
  Doc without = with;
  without.as_map().at("load").as_map().at("plan").put(
      "retry", parse_document(R"({"max_retries": 0, "renegotiate_on_failure": false})"));
  std::size_t started[2] = {0, 0}, complete[2] = {0, 0};
  for (std::uint64_t seed : {1, 2, 3}) {
    for (int i = 0; i < 2; ++i) {
      RunResult r = run(scenario_from_doc(i == 0 ? with : without, seed), seed);
      started[i] += r.metrics.plans_started;
      complete[i] += r.metrics.plans_complete;
    }
  }
  double rate[2];
  for (int i = 0; i < 2; ++i) rate[i] = started[i] ? static_cast<double>(complete[i]) / started[i] : 0.0;
  bool ok = started[0] == 150 && rate[0] >= 0.96 && rate[1] < rate[0];
  return {ok, "seeds 1-3, 50 plans each, 1% link drop: with retries " + std::to_string(complete[0]) + "/" +
                  std::to_string(started[0]) + fmt(" = %.3f (min 0.96); ", rate[0]) + "without " +
                  std::to_string(complete[1]) + "/" + std::to_string(started[1]) + fmt(" = %.3f", rate[1])};
}

// ---------------------------------------------------------------------------

Verdict supply_chain() {
  RunResult r = run(parse_scenario(read_text(scenario_path("supply_chain")), 1), 1);
  std::string detail;
  for (const auto& e : r.expectations) detail += (e.pass ? "" : "FAILED ") + e.name + " (" + e.detail + "); ";
  bool top_complete = !r.outcomes.empty() && r.outcomes[0].at("outcome").at("status").as_text() == "Complete";
  Ledger reread = Ledger::parse(r.ledger.serialize());
  bool chain_ok = reread.head() == Ledger::chain_digest(r.ledger.entries());
  return {r.expectations_hold() && top_complete && chain_ok && r.ledger.size() == r.settled_sessions,
          detail + "ledger " + std::to_string(r.ledger.size()) + " entries re-verified"};
}

// ---------------------------------------------------------------------------

bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
  std::vector<fs::path> la, lb;
  for (const auto& e : fs::recursive_directory_iterator(a)) la.push_back(fs::relative(e.path(), a));
  for (const auto& e : fs::recursive_directory_iterator(b)) lb.push_back(fs::relative(e.path(), b));
  std::sort(la.begin(), la.end());
  std::sort(lb.begin(), lb.end());
  if (la != lb) return false;
  for (const auto& rel : la) {
    if (fs::is_directory(a / rel)) continue;
    ++files;
    if (read_text(a / rel) != read_text(b / rel)) return false;
  }
  return true;
}

Verdict determinism() {
  fs::path root = fs::temp_directory_path() / ("acp-acceptance-" + std::to_string(std::random_device{}()));
  std::size_t files = 0, runs = 0;
  bool ok = true;
  std::string detail;
  for (const auto& entry : fs::directory_iterator(fs::path(fx::source_dir()) / "scenarios")) {
    std::string name = entry.path().stem().string();
    std::string text = read_text(entry.path());
    for (std::uint64_t seed : {1, 0xC0FFEE}) {
      RunResult a = run(parse_scenario(text, seed), seed);
      RunResult b = run(parse_scenario(text, seed), seed);
      write_run(root / name / "a", a);
      write_run(root / name / "b", b);
      bool same = a.trace_hash == b.trace_hash && same_tree(root / name / "a", root / name / "b", files);
      if (!same) detail += name + " differs; ";
      ok = ok && same;
      ++runs;
      fs::remove_all(root / name);
    }
  }
  fs::remove_all(root);
  return {ok, detail + std::to_string(runs) + " scenario/seed pairs run twice, " + std::to_string(files) +
                  " output files compared byte for byte, trace hashes equal"};
}

// ---------------------------------------------------------------------------

Verdict reputation_math() {
  std::vector<std::string> broken;
  auto expect = [&](bool cond, const char* what) {
    if (!cond) broken.push_back(what);
  };

  SettlementReport example{true, Decimal::parse("1.5"), 0, 0};
  InteractionScores s = score_interaction(example);
  expect(s.composite == Decimal::parse("0.85"), "0.85 composite example");
  expect(score_interaction(SettlementReport{true, Decimal::parse("0.5"), 1, 0}).composite == Decimal{},
         "security zeroing");

  Rng rng(0x4e9);
  std::vector<KeyPair> raters;
  for (int i = 0; i < 5; ++i) raters.push_back(generate_keypair(rng.bytes<32>()));
  Did ratee = fx::did_of(fx::key(0x77));
  std::size_t appends = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Ledger ledger;
    expect(ledger.trust(ratee).score == Decimal::parse("0.5"), "empty prior");
    std::size_t len = 1 + rng.uniform(40);
    for (std::size_t k = 0; k < len; ++k) {
      const KeyPair& r = raters[rng.uniform(raters.size())];
      SessionId sid = rng.bytes<16>();
      SettlementReport rep{rng.uniform(3) != 0, Decimal::from_micros(static_cast<std::int64_t>(rng.uniform(2'500'000))),
                           rng.uniform(6) == 0 ? 1u : 0u, 0};
      if (rng.uniform(4) == 0) rep = SettlementReport{true, Decimal::parse("1"), 0, 0};  // composite exactly 1
      InteractionScores sc = score_interaction(rep);
      TrustScore before = ledger.trust(ratee);
      ledger.append(make_entry(r, ratee, sid, sc, static_cast<SimTime>(k)), r.public_key, {sid, fx::did_of(r), ratee});
      ++appends;
      TrustScore after = ledger.trust(ratee);
      expect(after.score > Decimal{} && after.score < Decimal::parse("1"), "trust strictly inside (0,1)");
      if (sc.composite == Decimal::parse("1")) expect(after.score >= before.score, "good append never lowers");
      if (sc.composite == Decimal{}) expect(after.score <= before.score, "bad append never raises");
    }
    std::string text = ledger.serialize();
    expect(Ledger::parse(text).head() == ledger.head(), "round trip");
    // Flip one character in an entry line.
    std::size_t first_entry = text.find('\n') + 1;
    std::string tampered = text;
    std::size_t pos = first_entry + rng.uniform(text.size() - first_entry - 1);
    if (tampered[pos] != '\n') {
      tampered[pos] = tampered[pos] == 'a' ? 'b' : 'a';
      expect(tampered == text || rejected([&] { Ledger::parse(tampered); }), "tamper detected");
    }
    // Drop the last entry line.
    std::string cut = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
    expect(rejected([&] { Ledger::parse(cut); }), "truncation detected");
  }
  std::sort(broken.begin(), broken.end());
  broken.erase(std::unique(broken.begin(), broken.end()), broken.end());
  std::string detail = "0.5*1 + 0.3*0.5 + 0.2*1 = " + s.composite.to_string() + "; " + std::to_string(appends) +
                       " random appends over 50 ledgers";
  for (const auto& b : broken) detail += "; broken: " + b;
  return {broken.empty(), detail};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Verdict()> check;
  };
  const Criterion criteria[] = {
      {"lifecycle conformance", lifecycle},
      {"zero-trust rejection", zero_trust},
      {"dht logarithmic scaling", dht_scaling},
      {"envelope overhead and latency ordering", overhead},
      {"high-load success", high_load},
      {"supply-chain scenario", supply_chain},
      {"determinism", determinism},
      {"reputation math", reputation_math},
  };
  int failed = 0;
  int idx = 0;
  for (const auto& c : criteria) {
    ++idx;
    Verdict v;
    try {
      v = c.check();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    std::printf("%s %d %s: %s\n", v.pass ? "PASS" : "FAIL", idx, c.name, v.detail.c_str());
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  return failed;
}

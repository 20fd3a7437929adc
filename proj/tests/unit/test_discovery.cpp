#include "doctest.h"

#include "acp/discovery.hpp"
#include "acp/kernels.hpp"
#include "../support/fixtures.hpp"

#include <algorithm>
#include <numeric>

using namespace acp;

namespace {

NodeId id_with_first_byte(std::uint8_t b) {
  NodeId n{};
  n[0] = b;
  return n;
}

template <typename F>
Errc error_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no acp::Error thrown");
  return Errc::IoError;
}

/// Dids whose distance to owner falls in the given bucket.
std::vector<Did> dids_in_bucket(const Did& owner, int bucket, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Did> out;
  NodeId oid = node_id_of(owner);
  while (out.size() < count) {
    Did d = did_from_public_key(generate_keypair(rng.bytes<32>()).public_key);
    if (msb_index(distance(oid, node_id_of(d))) == bucket) out.push_back(d);
  }
  return out;
}

std::vector<std::size_t> brute_closest(const DhtNetwork& net, const Digest& key, std::size_t k) {
  std::vector<std::size_t> idx(net.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return closer(key, net.node(a).id, net.node(b).id); });
  if (idx.size() > k) idx.resize(k);
  return idx;
}

}  // namespace

TEST_CASE("XOR distance") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    NodeId a = rng.bytes<32>(), b = rng.bytes<32>(), c = rng.bytes<32>();
    CHECK(distance(a, a) == NodeId{});
    CHECK(distance(a, b) == distance(b, a));
    CHECK(distance(distance(a, b), distance(b, c)) == distance(a, c));
  }
  CHECK(msb_index(distance(id_with_first_byte(0x80), NodeId{})) == 255);
  CHECK(msb_index(distance(id_with_first_byte(0x01), NodeId{})) == 248);
  NodeId low{};
  low[31] = 1;
  CHECK(msb_index(low) == 0);
  CHECK(msb_index(NodeId{}) == -1);
  CHECK(closer(NodeId{}, low, id_with_first_byte(1)));
  CHECK_FALSE(closer(NodeId{}, low, low));
}

TEST_CASE("routing table insertion") {
  Did owner = fx::did_of(fx::key(1));
  RoutingTable rt(owner);

  SUBCASE("a peer lands in the bucket of its distance MSB") {
    Did peer = fx::did_of(fx::key(2));
    CHECK(rt.insert(peer, 5) == RoutingTable::Insert::Added);
    int b = msb_index(distance(rt.owner_id(), node_id_of(peer)));
    REQUIRE(rt.bucket(b).size() == 1);
    CHECK(rt.bucket(b)[0].contact.did == peer);
    CHECK(rt.insert(peer, 9) == RoutingTable::Insert::Refreshed);
    CHECK(rt.size() == 1);
    CHECK(rt.bucket(b)[0].last_seen == 9);
  }
  SUBCASE("the owner cannot be inserted") {
    CHECK(error_of([&] { rt.insert(owner, 0); }) == Errc::SelfInsert);
  }
  SUBCASE("a full bucket of live peers drops the newcomer") {
    auto peers = dids_in_bucket(owner, 255, kBucketSize + 1, 3);
    for (std::size_t i = 0; i < kBucketSize; ++i) CHECK(rt.insert(peers[i], static_cast<SimTime>(i)) ==
                                                        RoutingTable::Insert::Added);
    CHECK(rt.insert(peers.back(), 100, [](const Did&) { return false; }) == RoutingTable::Insert::Dropped);
    CHECK(rt.bucket(255).size() == kBucketSize);
    CHECK_FALSE(rt.contains(peers.back()));
  }
  SUBCASE("a down LRU peer is evicted for the newcomer") {
    auto peers = dids_in_bucket(owner, 255, kBucketSize + 1, 3);
    for (std::size_t i = 0; i < kBucketSize; ++i) rt.insert(peers[i], static_cast<SimTime>(i));
    Did lru = peers[0];
    CHECK(rt.insert(peers.back(), 100, [&](const Did& d) { return d == lru; }) == RoutingTable::Insert::Evicted);
    CHECK_FALSE(rt.contains(lru));
    CHECK(rt.contains(peers.back()));
    CHECK(rt.bucket(255).size() == kBucketSize);
    CHECK(rt.bucket(255).back().contact.did == peers.back());
  }
  SUBCASE("invariants hold after many random inserts") {
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
      Did d = did_from_public_key(generate_keypair(rng.bytes<32>()).public_key);
      rt.insert(d, i, [&](const Did&) { return rng.uniform(4) == 0; });
    }
    std::set<std::string> seen;
    for (int b = 0; b < kIdBits; ++b) {
      CHECK(rt.bucket(b).size() <= kBucketSize);
      for (const auto& p : rt.bucket(b)) {
        CHECK(msb_index(distance(rt.owner_id(), p.contact.id)) == b);
        CHECK(seen.insert(p.contact.did.str()).second);
      }
    }
    auto c = rt.closest(NodeId{}, 5);
    for (std::size_t i = 1; i < c.size(); ++i) CHECK(closer(NodeId{}, c[i - 1].id, c[i].id));
  }
}

TEST_CASE("records are checked before they are stored or returned") {
  KeyPair a = fx::key(1);
  KeyPair b = fx::key(2);
  AgentCard card = fx::card_for(a, {"market_analysis"});
  DhtRecord rec = make_record(a, card, capability_key("market_analysis"), 10);
  CHECK(verify_record(rec).identity == card.identity);
  CHECK(DhtRecord::from_doc(rec.to_doc()).to_doc() == rec.to_doc());

  DhtRecord forged = make_record(b, card, capability_key("market_analysis"), 10);
  CHECK(error_of([&] { verify_record(forged); }) == Errc::RecordRejected);

  DhtRecord wrong_key = make_record(a, card, capability_key("route_planning"), 10);
  CHECK(error_of([&] { verify_record(wrong_key); }) == Errc::RecordRejected);

  DhtRecord tampered = rec;
  tampered.stored_at = 11;
  CHECK(error_of([&] { verify_record(tampered); }) == Errc::RecordRejected);

  RecordStore store;
  CHECK(store.put(rec));
  DhtRecord newer = make_record(a, card, capability_key("market_analysis"), 20);
  CHECK(store.put(newer));
  CHECK_FALSE(store.put(rec));
  REQUIRE(store.get(rec.key).size() == 1);
  CHECK(store.get(rec.key)[0].stored_at == 20);
}

TEST_CASE("a lone node that stores the key answers in zero hops") {
  DhtNetwork net;
  KeyPair a = fx::key(1);
  net.add_node(fx::did_of(a), a.public_key);
  net.publish_card(0, a, fx::card_for(a, {"market_analysis"}), 0);
  FindResult r = net.iterative_find(0, capability_key("market_analysis"));
  CHECK(r.hops == 0);
  CHECK(r.records.size() == 1);
  CHECK(net.lookup_capability(0, "market_analysis").size() == 1);
}

TEST_CASE("publish, look up and reject on a seeded network") {
  SeededNetwork s = build_seeded_network(64, 77);
  DhtNetwork& net = s.net;
  AgentCard card = fx::card_for(s.keys[5], {"ocean_freight"});
  card.identity = net.node(5).did;
  auto stored = net.publish_card(5, s.keys[5], card, 100);
  CHECK(stored.size() >= kBucketSize);

  for (std::size_t start : {0, 17, 63}) {
    auto found = net.lookup_capability(start, "ocean_freight");
    REQUIRE(found.size() == 1);
    CHECK(found[0].identity == card.identity);
  }
  CHECK(net.lookup_capability(3, "never_published").empty());

  AgentCard newer = card;
  newer.trust_score = Decimal::parse("0.75");
  net.publish_card(5, s.keys[5], newer, 200);
  auto found = net.lookup_capability(40, "ocean_freight");
  REQUIRE(found.size() == 1);
  CHECK(found[0].trust_score == Decimal::parse("0.75"));

  AgentCard stolen = card;  // claims node 5's Did, signed with node 6's key
  CHECK(error_of([&] { net.publish_card(6, s.keys[6], stolen, 300); }) == Errc::RecordRejected);
  for (std::size_t i = 0; i < net.size(); ++i) {
    for (const auto& r : net.node(i).store.get(capability_key("ocean_freight"))) CHECK(record_valid(r));
  }
}

TEST_CASE("an unstored key yields the k closest nodes and no record") {
  SeededNetwork s = build_seeded_network(128, 3);
  auto queries = random_queries(s.net.size(), 40, 9);
  int exact = 0;
  for (const auto& q : queries) {
    FindResult r = s.net.iterative_find(q.start, q.key, true);
    CHECK(r.records.empty());
    CHECK(r.closest.size() == kBucketSize);
    for (std::size_t i = 1; i < r.closest.size(); ++i) CHECK(closer(q.key, r.closest[i - 1].id, r.closest[i].id));
    // The origin never reports itself, so compare against the closest
    // other node.
    auto truth = brute_closest(s.net, q.key, 2);
    std::size_t want = truth[0] == q.start ? truth[1] : truth[0];
    exact += r.closest.front().did == s.net.node(want).did ? 1 : 0;
  }
  CHECK(exact == 40);
}

TEST_CASE("lookups never beat the breadth-first ideal and are reproducible") {
  SeededNetwork a = build_seeded_network(256, 21);
  SeededNetwork b = build_seeded_network(256, 21);
  auto queries = random_queries(256, 100, 4);
  for (const auto& q : queries) {
    FindResult ra = a.net.iterative_find(q.start, q.key, false);
    FindResult rb = b.net.iterative_find(q.start, q.key, false);
    CHECK(ra.hops == rb.hops);
    REQUIRE(ra.closest.size() == rb.closest.size());
    for (std::size_t i = 0; i < ra.closest.size(); ++i) CHECK(ra.closest[i].did == rb.closest[i].did);

    std::size_t ideal = ideal_hops(a.net, q.start, q.key);
    REQUIRE(ideal != SIZE_MAX);
    auto truth = brute_closest(a.net, q.key, 1).front();
    if (truth != q.start && !ra.closest.empty() && ra.closest.front().did == a.net.node(truth).did) {
      CHECK(ra.hops >= ideal);
    }
  }
}

TEST_CASE("mean hops grow with the network") {
  double prev = 0;
  for (std::size_t n : {16, 64, 256}) {
    SeededNetwork s = build_seeded_network(n, 1);
    auto res = find_batch_serial(s.net, random_queries(n, 100, 2));
    double mean = 0;
    for (const auto& r : res) mean += static_cast<double>(r.hops);
    mean /= static_cast<double>(res.size());
    CAPTURE(n);
    CHECK(mean >= prev);
    CHECK(mean <= 2.0 * std::log2(static_cast<double>(n)));
    prev = mean;
  }
}

TEST_CASE("a lookup with every peer down is unavailable") {
  SeededNetwork s = build_seeded_network(16, 8);
  for (std::size_t i = 1; i < s.net.size(); ++i) s.net.set_down(i, true);
  CHECK(error_of([&] { s.net.iterative_find(0, capability_key("x"), true); }) == Errc::DiscoveryUnavailable);
}

TEST_CASE("local bus discovery is per segment and signature-checked") {
  KeyPair a = fx::key(1), b = fx::key(2), c = fx::key(3), m = fx::key(4);
  AgentCard ca = fx::card_for(a, {"ocean_freight"});
  AgentCard cb = fx::card_for(b, {"ocean_freight"});
  AgentCard cc = fx::card_for(c, {"ocean_freight"});
  LocalBus bus;
  bus.attach(ca.identity, "lan1");
  bus.attach(cb.identity, "lan1");
  bus.attach(cc.identity, "lan2");
  bus.announce(a, ca, 0);
  bus.announce(b, cb, 0);
  bus.announce(c, cc, 0);

  auto seen_by_a = bus.query(ca.identity, "ocean_freight", 0, 25);
  REQUIRE(seen_by_a.size() == 1);
  CHECK(seen_by_a[0].identity == cb.identity);
  auto seen_by_b = bus.query(cb.identity, "ocean_freight", 0, 25);
  REQUIRE(seen_by_b.size() == 1);
  CHECK(seen_by_b[0].identity == ca.identity);
  CHECK(bus.query(cc.identity, "ocean_freight", 0, 25).empty());

  DhtRecord tampered = make_record(b, cb, did_key(cb.identity), 5);
  tampered.card.put("interface", "sim://evil");
  bus.inject("lan2", tampered, 1);
  DhtRecord forged = make_record(m, cb, did_key(cb.identity), 5);
  bus.inject("lan2", forged, 1);
  CHECK(bus.query(cc.identity, "ocean_freight", 0, 25).empty());

  bus.announce(b, cb, 100);
  CHECK(bus.query(ca.identity, "ocean_freight", 0, 25).size() == 1);
}

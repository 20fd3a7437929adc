#include "doctest.h"

#include "acp/kernels.hpp"
#include "../support/fixtures.hpp"

#include <omp.h>

using namespace acp;

TEST_CASE("parallel find batch equals the serial reference") {
  SeededNetwork s = build_seeded_network(200, 12);
  auto queries = random_queries(s.net.size(), 300, 13);
  for (std::size_t i = 0; i < queries.size(); i += 3) queries[i].want_value = true;
  for (int threads : {1, 2, 4}) {
    omp_set_num_threads(threads);
    auto serial = find_batch_serial(s.net, queries);
    auto parallel = find_batch_parallel(s.net, queries);
    REQUIRE(serial.size() == parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
      CHECK(serial[i].hops == parallel[i].hops);
      REQUIRE(serial[i].closest.size() == parallel[i].closest.size());
      for (std::size_t j = 0; j < serial[i].closest.size(); ++j)
        CHECK(serial[i].closest[j].did == parallel[i].closest[j].did);
      CHECK(serial[i].records.size() == parallel[i].records.size());
    }
  }
}

TEST_CASE("parallel verify batch equals the serial reference") {
  Rng rng(31);
  std::vector<KeyPair> keys;
  for (int i = 0; i < 8; ++i) keys.push_back(generate_keypair(rng.bytes<32>()));
  std::vector<Envelope> envs;
  std::vector<PublicKey> pks;
  for (int i = 0; i < 500; ++i) {
    const KeyPair& kp = keys[rng.uniform(keys.size())];
    Doc p;
    p.set("i", i);
    EnvelopeHeader h{MsgType::Announce, fx::did_of(keys[0]), SessionId{}, static_cast<std::uint64_t>(i), i};
    Envelope e = seal(kp, h, p);
    switch (rng.uniform(4)) {
      case 0: e.signature[rng.uniform(64)] ^= 1; break;
      case 1: pks.push_back(keys[rng.uniform(keys.size())].public_key); envs.push_back(e); continue;
      default: break;
    }
    envs.push_back(e);
    pks.push_back(kp.public_key);
  }
  auto serial = verify_batch_serial(envs, pks);
  for (int threads : {1, 3}) {
    omp_set_num_threads(threads);
    CHECK(verify_batch_parallel(envs, pks) == serial);
  }
  std::size_t ok = 0;
  for (auto v : serial) ok += v;
  CHECK(ok > 0);
  CHECK(ok < serial.size());
  pks.pop_back();
  CHECK_THROWS_AS(verify_batch_parallel(envs, pks), Error);
}

TEST_CASE("ideal hops is zero at the closest node and finite on a joined network") {
  SeededNetwork s = build_seeded_network(32, 4);
  Digest key = s.net.node(7).id;
  CHECK(ideal_hops(s.net, 7, key) == 0);
  for (std::size_t i = 0; i < s.net.size(); ++i) CHECK(ideal_hops(s.net, i, key) < s.net.size());
}

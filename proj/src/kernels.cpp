#include "acp/kernels.hpp"

#include <deque>
#include <exception>

#include <omp.h>

namespace acp {

SeededNetwork build_seeded_network(std::size_t n, std::uint64_t seed) {
  ensure_crypto_initialized();
  SeededNetwork s;
  Rng rng(derive_seed(seed, 0x6e6574));
  for (std::size_t i = 0; i < n; ++i) {
    auto key_seed = rng.bytes<32>();
    s.keys.push_back(generate_keypair(key_seed));
    s.net.add_node(did_from_public_key(s.keys.back().public_key), s.keys.back().public_key);
  }
  for (std::size_t i = 1; i < n; ++i) s.net.join(i, rng.uniform(i));
  for (std::size_t i = 0; i < n; ++i) {
    AgentCard card;
    card.identity = s.net.node(i).did;
    card.capabilities = {"node_" + std::to_string(i % 8)};
    card.interface = "sim://" + std::to_string(i);
    s.net.publish(i, make_record(s.keys[i], card, did_key(card.identity), 0));
  }
  return s;
}

std::vector<FindQuery> random_queries(std::size_t nodes, std::size_t count, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x717279));
  std::vector<FindQuery> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    FindQuery q;
    q.start = rng.uniform(nodes);
    q.key = rng.bytes<32>();
    out.push_back(q);
  }
  return out;
}

std::vector<FindResult> find_batch_serial(const DhtNetwork& net, const std::vector<FindQuery>& queries) {
  std::vector<FindResult> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(net.iterative_find(q.start, q.key, q.want_value));
  return out;
}

std::vector<FindResult> find_batch_parallel(const DhtNetwork& net, const std::vector<FindQuery>& queries) {
  std::vector<FindResult> out(queries.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(queries.size()); ++i) {
    const auto& q = queries[static_cast<std::size_t>(i)];
    try {
      out[static_cast<std::size_t>(i)] = net.iterative_find(q.start, q.key, q.want_value);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

std::size_t ideal_hops(const DhtNetwork& net, std::size_t start, const Digest& key) {
  std::size_t target = 0;
  for (std::size_t i = 1; i < net.size(); ++i) {
    if (closer(key, net.node(i).id, net.node(target).id)) target = i;
  }
  if (target == start) return 0;
  std::vector<std::size_t> dist(net.size(), SIZE_MAX);
  std::deque<std::size_t> queue{start};
  dist[start] = 0;
  while (!queue.empty()) {
    std::size_t at = queue.front();
    queue.pop_front();
    for (const auto& c : net.node(at).table.all()) {
      auto j = net.index_of(c.did);
      if (!j || dist[*j] != SIZE_MAX) continue;
      dist[*j] = dist[at] + 1;
      if (*j == target) return dist[*j];
      queue.push_back(*j);
    }
  }
  return SIZE_MAX;
}

namespace {

std::uint8_t verify_one(const Envelope& env, const PublicKey& pk) {
  if (did_from_public_key(pk) != env.sender) return 0;
  return verify(pk, env.signed_bytes(), env.signature) ? 1 : 0;
}

}  // namespace

std::vector<std::uint8_t> verify_batch_serial(const std::vector<Envelope>& envs, const std::vector<PublicKey>& keys) {
  if (envs.size() != keys.size()) throw Error(Errc::EncodingError, "envelope and key counts differ");
  std::vector<std::uint8_t> out(envs.size());
  for (std::size_t i = 0; i < envs.size(); ++i) out[i] = verify_one(envs[i], keys[i]);
  return out;
}

std::vector<std::uint8_t> verify_batch_parallel(const std::vector<Envelope>& envs,
                                                const std::vector<PublicKey>& keys) {
  if (envs.size() != keys.size()) throw Error(Errc::EncodingError, "envelope and key counts differ");
  ensure_crypto_initialized();
  std::vector<std::uint8_t> out(envs.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(envs.size()); ++i) {
    auto k = static_cast<std::size_t>(i);
    out[k] = verify_one(envs[k], keys[k]);
  }
  return out;
}

}  // namespace acp

#pragma once

// Batch kernels with a serial reference and an OpenMP version each. The two
// must agree element for element; tests compare them and the benchmark
// target times them.

#include "acp/discovery.hpp"
#include "acp/envelope.hpp"

#include <vector>

namespace acp {

struct SeededNetwork {
  DhtNetwork net;
  std::vector<KeyPair> keys;
};

/// n nodes with seeded keys. Node i joins through a uniformly chosen
/// earlier node, then every node publishes its Did record.
SeededNetwork build_seeded_network(std::size_t n, std::uint64_t seed);

struct FindQuery {
  std::size_t start = 0;
  Digest key{};
  bool want_value = false;
};

/// Uniform random origins and uniform random 256-bit keys.
std::vector<FindQuery> random_queries(std::size_t nodes, std::size_t count, std::uint64_t seed);

std::vector<FindResult> find_batch_serial(const DhtNetwork& net, const std::vector<FindQuery>& queries);
std::vector<FindResult> find_batch_parallel(const DhtNetwork& net, const std::vector<FindQuery>& queries);

/// Fewest query rounds any lookup from start could need to reach the node
/// closest to key: breadth-first distance over routing-table edges.
/// Returns 0 when start is itself the closest node.
std::size_t ideal_hops(const DhtNetwork& net, std::size_t start, const Digest& key);

/// 1 where the envelope's signature verifies under keys[i] and the sender
/// Did matches that key, else 0.
std::vector<std::uint8_t> verify_batch_serial(const std::vector<Envelope>& envs, const std::vector<PublicKey>& keys);
std::vector<std::uint8_t> verify_batch_parallel(const std::vector<Envelope>& envs,
                                                const std::vector<PublicKey>& keys);

}  // namespace acp

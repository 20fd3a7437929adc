// Serial reference kernels against their OpenMP versions. Thread count is
// whatever OMP_NUM_THREADS says; each pair reports items per second.

#include "acp/kernels.hpp"
#include "acp/simnet.hpp"

#include <benchmark/benchmark.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace {

const acp::SeededNetwork& network() {
  static const acp::SeededNetwork net = acp::build_seeded_network(512, 0xbe7c);
  return net;
}

const std::vector<acp::FindQuery>& queries() {
  static const auto q = acp::random_queries(512, 2000, 0x51);
  return q;
}

struct SignedBatch {
  std::vector<acp::Envelope> envs;
  std::vector<acp::PublicKey> keys;
};

const SignedBatch& batch() {
  static const SignedBatch b = [] {
    SignedBatch out;
    acp::Rng rng(0x5e);
    for (int i = 0; i < 2000; ++i) {
      acp::KeyPair kp = acp::generate_keypair(rng.bytes<32>());
      acp::Doc payload;
      payload.set("blob", std::string(1024 - 11, 'q'));
      acp::EnvelopeHeader h{acp::MsgType::Result, acp::did_from_public_key(kp.public_key), rng.bytes<16>(),
                            static_cast<std::uint64_t>(i), 0};
      out.envs.push_back(acp::seal(kp, h, payload));
      out.keys.push_back(kp.public_key);
    }
    return out;
  }();
  return b;
}

const acp::Doc& sweep_template() {
  static const acp::Doc d = [] {
    std::ifstream in(std::filesystem::path(ACP_SOURCE_DIR) / "scenarios" / "dht_sweep.json");
    std::stringstream ss;
    ss << in.rdbuf();
    return acp::parse_document(ss.str());
  }();
  return d;
}

void BM_FindSerial(benchmark::State& st) {
  network();
  queries();
  for (auto _ : st) benchmark::DoNotOptimize(acp::find_batch_serial(network().net, queries()));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(queries().size()));
}

void BM_FindParallel(benchmark::State& st) {
  network();
  queries();
  for (auto _ : st) benchmark::DoNotOptimize(acp::find_batch_parallel(network().net, queries()));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(queries().size()));
}

void BM_VerifySerial(benchmark::State& st) {
  batch();
  for (auto _ : st) benchmark::DoNotOptimize(acp::verify_batch_serial(batch().envs, batch().keys));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(batch().envs.size()));
}

void BM_VerifyParallel(benchmark::State& st) {
  batch();
  for (auto _ : st) benchmark::DoNotOptimize(acp::verify_batch_parallel(batch().envs, batch().keys));
  st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(batch().envs.size()));
}

const std::vector<std::size_t> kSweepCounts = {16, 32};
const std::vector<std::uint64_t> kSweepSeeds = {1, 2};

void BM_SweepSerial(benchmark::State& st) {
  sweep_template();
  for (auto _ : st) benchmark::DoNotOptimize(acp::sweep_serial(sweep_template(), kSweepCounts, kSweepSeeds));
  st.SetItemsProcessed(st.iterations() * 4);
}

void BM_SweepParallel(benchmark::State& st) {
  for (auto _ : st) benchmark::DoNotOptimize(acp::sweep_parallel(sweep_template(), kSweepCounts, kSweepSeeds));
  st.SetItemsProcessed(st.iterations() * 4);
}

}  // namespace

BENCHMARK(BM_FindSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_FindParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_VerifySerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_VerifyParallel)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SweepSerial)->Unit(benchmark::kMillisecond)->Iterations(2);
BENCHMARK(BM_SweepParallel)->Unit(benchmark::kMillisecond)->Iterations(2);

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "bionet/harness.hpp"
#include "bionet/mcc.hpp"
#include "bionet/wire.hpp"

using namespace bionet;

namespace {

const mcc::MatcherParams kParams;

struct Store {
  explicit Store(std::size_t n) {
    sets.reserve(n);
    for (std::size_t i = 0; i < n; ++i) sets.push_back(mcc::build_cylinders(harness::corpus_finger(1, i), kParams));
    for (std::size_t i = 0; i < n; ++i) {
      IdentityId id{};
      store_be64(id.data() + 8, i);
      gallery.push_back({id, &sets[i]});
    }
  }
  std::vector<mcc::CylinderSet> sets;
  std::vector<mcc::GalleryEntry> gallery;
};

void BM_BuildCylinders(benchmark::State& state) {
  const auto t = harness::corpus_finger(1, 0);
  for (auto _ : state) benchmark::DoNotOptimize(mcc::build_cylinders(t, kParams));
}
BENCHMARK(BM_BuildCylinders);

void BM_LocalSimilarity(benchmark::State& state) {
  const auto a = mcc::build_cylinders(harness::corpus_finger(1, 0), kParams);
  const auto b = mcc::build_cylinders(harness::corpus_finger(1, 1), kParams);
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& x = a.cylinders[i % a.cylinders.size()];
    const auto& y = b.cylinders[(i * 7) % b.cylinders.size()];
    benchmark::DoNotOptimize(mcc::local_similarity(x, y, kParams));
    ++i;
  }
}
BENCHMARK(BM_LocalSimilarity);

void BM_MatchScore(benchmark::State& state) {
  const auto finger = harness::corpus_finger(1, 0);
  const auto a = mcc::build_cylinders(finger, kParams);
  const auto b = mcc::build_cylinders(harness::corpus_capture(finger, 1, 0, 1), kParams);
  for (auto _ : state) benchmark::DoNotOptimize(mcc::match_score(a, b, kParams));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_MatchScore);

void BM_Identify(benchmark::State& state) {
  const Store store(static_cast<std::size_t>(state.range(0)));
  const auto probe =
      mcc::build_cylinders(harness::corpus_capture(harness::corpus_finger(1, 3), 1, 3, 1), kParams);
  const auto workers = static_cast<unsigned>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(mcc::identify(probe, store.gallery, kParams, workers));
  state.SetItemsProcessed(state.iterations() * state.range(0));  // matches
}
BENCHMARK(BM_Identify)->Args({100, 1})->Args({1000, 1})->Args({1000, 2})->Args({1000, 4})->UseRealTime();

void BM_SealOpen(benchmark::State& state) {
  wire::KeyMaterial key{};
  key.fill(7);
  wire::LinkKey sealer(key, 1);
  const Bytes plain(static_cast<std::size_t>(state.range(0)), 0x5A);
  const Bytes aad(26, 0x01);
  for (auto _ : state) {
    const Bytes sealed = wire::seal(plain, sealer, aad);
    benchmark::DoNotOptimize(wire::open(sealed, key, 1, aad));
  }
  state.SetBytesProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SealOpen)->Arg(64)->Arg(600)->Arg(4096);

void BM_FrameRoundTrip(benchmark::State& state) {
  wire::KeyMaterial key{};
  key.fill(9);
  wire::Keyring a(1), b(2);
  a.add_peer(2, wire::Role::Pos, key);
  b.add_peer(1, wire::Role::Acquirer, key);
  const auto pin = wire::Pin::parse("0427");
  const wire::Message m = wire::PosAuthReq{1200, id_from_label<8>("SHOP"),
                                           encode_template(harness::corpus_finger(1, 0))};
  for (auto _ : state) benchmark::DoNotOptimize(b.open_frame(a.make_frame(2, pin, TxnId{}, m)));
}
BENCHMARK(BM_FrameRoundTrip);

}  // namespace

BENCHMARK_MAIN();

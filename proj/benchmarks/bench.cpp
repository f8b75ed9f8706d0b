#include <filesystem>
#include <random>

#include <benchmark/benchmark.h>

#include "dialingle/classifier.hpp"
#include "dialingle/corpus.hpp"
#include "dialingle/geo.hpp"
#include "dialingle/selection.hpp"

using namespace dialingle;

namespace {

const std::filesystem::path kAlpine = std::filesystem::path(DIALINGLE_DATA_DIR) / "synthetic" / "alpine3";

const std::vector<Example>& examples() {
  static const auto ex = load_examples(kAlpine / "corpus.jsonl");
  return ex;
}

const TrainedModel& model() {
  static const auto m = [] {
    auto c = ModelConfig{};
    c.epochs = 5;
    return train(examples(), c);
  }();
  return m;
}

void BM_Featurize(benchmark::State& state) {
  const ModelConfig config;
  const auto& text = examples().front().text;
  for (auto _ : state) benchmark::DoNotOptimize(featurize(text, config));
}
BENCHMARK(BM_Featurize);

void BM_Predict(benchmark::State& state) {
  const auto& m = model();
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(m.predict(examples()[i++ % examples().size()].text));
}
BENCHMARK(BM_Predict);

void BM_RescoreAll(benchmark::State& state) {
  ManualClock clock;
  CorpusStore store(clock);
  store.register_family(load_registry(kAlpine / "registry.json"));
  store.ingest_corpus(kAlpine / "corpus.jsonl", "alpine3");
  const auto view = store.snapshot("alpine3");
  for (auto _ : state) benchmark::DoNotOptimize(rescore_all(*view, model(), 1));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * view->groups.size()));
}
BENCHMARK(BM_RescoreAll)->Unit(benchmark::kMillisecond);

void BM_TrainEpoch(benchmark::State& state) {
  ModelConfig c;
  c.epochs = 1;
  for (auto _ : state) benchmark::DoNotOptimize(train(examples(), c));
}
BENCHMARK(BM_TrainEpoch)->Unit(benchmark::kMillisecond);

void BM_RegionBoundary(benchmark::State& state) {
  LanguageFamily fam;
  fam.family_id = "bench";
  fam.bounding_box = {0, 0, 10, 10};
  fam.hex_resolution = 0.1;
  std::mt19937_64 rng(1);
  CellSet cells;
  HexCell cur{20, 20};
  const int dq[6] = {1, 1, 0, -1, -1, 0}, dr[6] = {0, -1, -1, 0, 1, 1};
  while (cells.size() < static_cast<std::size_t>(state.range(0))) {
    const int d = static_cast<int>(rng() % 6);
    cur = {cur.q + dq[d], cur.r + dr[d]};
    cells.insert(cur);
  }
  for (auto _ : state) benchmark::DoNotOptimize(region_boundary(cells, fam));
}
BENCHMARK(BM_RegionBoundary)->Arg(12)->Arg(50)->Arg(500);

}  // namespace

BENCHMARK_MAIN();

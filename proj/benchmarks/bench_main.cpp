// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "metashard/collectives.hpp"
#include "metashard/data_gen.hpp"
#include "metashard/meta_io.hpp"
#include "metashard/meta_step.hpp"
#include "test_support.hpp"

namespace metashard {
namespace {

void BM_RingAllReduce(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  comm::WorkerGroup g(n);
  for (auto _ : state) {
    g.run([&](std::size_t me) {
      std::vector<double> buf(k, static_cast<double>(me));
      benchmark::DoNotOptimize(g.ring_all_reduce(me, std::move(buf)));
    });
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * n * k * sizeof(double)));
}
BENCHMARK(BM_RingAllReduce)->Args({2, 1024})->Args({4, 1024})->Args({4, 65536})->UseRealTime();

void BM_Gather(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  comm::WorkerGroup g(n);
  for (auto _ : state) {
    g.run([&](std::size_t me) { benchmark::DoNotOptimize(g.gather(me, 0, std::vector<double>(k, 1.0))); });
  }
}
BENCHMARK(BM_Gather)->Args({4, 1024})->Args({4, 65536})->UseRealTime();

// One task's meta-gradient at the default model size (dim 8, MLP 16-8-1,
// 16 support + 16 query samples).
void BM_TaskMetaGradient(benchmark::State& state) {
  SplitMix64 rng(3);
  const TaskBatch batch = testing::random_batch(rng, 0, 16, 16, 8, 200);
  PrefetchResult p;
  p.ids = feature_ids(batch);
  p.rows = testing::random_tensor(rng, p.ids.size(), 8, -0.1, 0.1);
  p.owners.assign(p.ids.size(), 0);
  const DenseParams dense = testing::random_params(rng, {16, 8, 1});
  HyperParams h;
  h.mode = state.range(0) == 0 ? GradMode::kFullSecondOrder : GradMode::kFirstOrder;
  for (auto _ : state) benchmark::DoNotOptimize(task_meta_gradients(p, dense, batch, h));
  state.SetLabel(to_string(h.mode));
}
BENCHMARK(BM_TaskMetaGradient)->Arg(0)->Arg(1);

void BM_RecordScan(benchmark::State& state) {
  datagen::TaskFamily f;
  f.num_tasks = 100;
  f.samples_per_task = 320;
  testing::TempPath path("bench_scan");
  io::preprocess_to_file(datagen::generate(f), 32, 1, path.path());
  const io::RecordFile file = io::RecordFile::open(path.path());
  for (auto _ : state) {
    benchmark::DoNotOptimize(io::load_task_batches(file, 0, 1));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * file.header().record_count));
}
BENCHMARK(BM_RecordScan);

}  // namespace
}  // namespace metashard

BENCHMARK_MAIN();

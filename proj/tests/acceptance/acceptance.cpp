// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance run. Prints one line per criterion:
//
//   [criterion N] PASS|FAIL|SKIPPED  <what was measured>
//
// and exits nonzero if any criterion failed. Pass a list of criterion
// numbers to run a subset.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "commands.hpp"
#include "metashard/collectives.hpp"
#include "metashard/data_gen.hpp"
#include "metashard/meta_io.hpp"
#include "metashard/trainer.hpp"
#include "test_support.hpp"

namespace {

using namespace metashard;
using testing::TempPath;

enum class Verdict { kPass, kFail, kSkipped };

struct Outcome {
  Verdict verdict = Verdict::kFail;
  std::string detail;
};

Outcome pass_if(bool ok, std::string detail) { return {ok ? Verdict::kPass : Verdict::kFail, std::move(detail)}; }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Default workload: vocab 1e4, dense width 8, embedding dim 8, MLP 16-8-1,
// batch 32; 200 tasks x 160 samples gives 1000 batches, 250 per worker at n=4.
datagen::TaskFamily default_family() {
  datagen::TaskFamily f;
  f.num_tasks = 200;
  f.samples_per_task = 160;
  f.vocab_size = 10000;
  f.dense_width = 8;
  f.seed = 2026;
  return f;
}

TrainConfig default_config(const std::filesystem::path& data) {
  TrainConfig c;
  c.hyper.alpha = 0.1;
  c.hyper.beta = 0.1;
  c.batch_size = 32;
  c.model.embedding_dim = 8;
  c.model.mlp_dims = {16, 8, 1};
  c.model.seed = 7;
  c.iterations = 200;
  c.convergence_tol = 0.0;
  c.data_path = data.string();
  return c;
}

std::filesystem::path write_dataset(const TempPath& dir, const std::string& name, const datagen::TaskFamily& f,
                                    std::uint64_t shuffle_seed) {
  const auto path = dir.path() / name;
  io::preprocess_to_file(datagen::generate(f), 32, shuffle_seed, path);
  return path;
}

// 1. Parallel vs serial reference, every iteration.
Outcome serial_equivalence(const TempPath& dir) {
  const auto data = write_dataset(dir, "c1.rec", default_family(), 1);
  const auto t0 = std::chrono::steady_clock::now();
  const cli::VerifyReport r = cli::cmd_verify(default_config(data), {1, 2, 4},
                                              {GradMode::kFullSecondOrder, GradMode::kFirstOrder}, 1e-9);
  const double secs = seconds_since(t0);
  std::string detail;
  bool iterations_ok = true;
  for (const auto& run : r.runs) {
    iterations_ok = iterations_ok && run.divergence.size() == 200;
    detail += fmt("n=%zu %s max %.3g; ", run.workers, to_string(run.mode) == "first_order" ? "fo" : "full",
                  run.max_divergence);
  }
  detail += fmt("runtime %.1f s (limit 120)", secs);
  return pass_if(r.passed && iterations_ok && secs <= 120.0, detail);
}

// 2. Traffic laws, exact.
Outcome traffic_laws() {
  bool ok = true;
  std::string detail;
  for (auto [n, k] : {std::pair<std::size_t, std::size_t>{2, 1024}, {4, 1024}, {8, 4096}}) {
    comm::WorkerGroup g(n);
    g.run([&](std::size_t me) {
      std::vector<double> buf(k, 1.0);
      g.ring_all_reduce(me, buf);
      g.gather(me, 0, buf);
    });
    const std::uint64_t ring_law = 2 * k * (n - 1) / n;
    for (std::size_t w = 0; w < n; ++w) {
      ok = ok && g.stats(w).primitive(comm::Primitive::kAllReduce).elements_sent == ring_law;
    }
    const std::uint64_t gathered = g.stats(0).primitive(comm::Primitive::kGather).elements_received;
    ok = ok && gathered == k * (n - 1);
    detail += fmt("(N=%zu,K=%zu) ring %llu/worker gather %llu; ", n, k,
                  static_cast<unsigned long long>(g.stats(0).primitive(comm::Primitive::kAllReduce).elements_sent),
                  static_cast<unsigned long long>(gathered));
  }
  return pass_if(ok, detail);
}

// 3. Two lookup all_to_all calls per iteration at overlap 0, 0.5 and 1.
Outcome prefetch_calls() {
  const std::size_t n = 4;
  const std::size_t iters = 20;
  bool ok = true;
  std::string detail;
  datagen::TaskFamily f = default_family();
  f.num_tasks = 40;
  f.samples_per_task = 64;
  const auto samples = datagen::generate(f);
  const auto batches = io::assign_batches(samples, 32);
  for (double overlap : {0.0, 0.5, 1.0}) {
    std::vector<std::vector<TaskBatch>> lists(n);
    std::size_t shared = 0;
    std::size_t query_ids = 0;
    for (std::size_t i = 0; i < n * iters; ++i) {
      TaskBatch b = *io::split_support_query(io::SampleGroup{batches[i].task_id, batches[i].batch_id, batches[i].samples});
      const std::vector<FeatureId> support = feature_ids(b.support);
      // The first overlap * slots query id slots reuse distinct support ids;
      // the rest get ids the support set cannot contain.
      std::size_t slots = 0;
      for (const auto& q : b.query) slots += q.feature_ids.size();
      const auto limit = static_cast<std::size_t>(overlap * static_cast<double>(slots));
      std::size_t slot = 0;
      for (auto& q : b.query) {
        for (auto& id : q.feature_ids) {
          id = slot < limit ? support[slot % support.size()] : f.vocab_size + i * 1000 + slot;
          ++slot;
        }
      }
      const std::vector<FeatureId> qids = feature_ids(b.query);
      query_ids += qids.size();
      for (FeatureId id : qids) shared += std::binary_search(support.begin(), support.end(), id) ? 1 : 0;
      lists[i % n].push_back(std::move(b));
    }
    TrainConfig c = default_config({});
    c.iterations = iters;
    comm::WorkerGroup g(n);
    train_loop(c, g, lists);
    std::uint64_t per_worker_max = 0;
    for (std::size_t w = 0; w < n; ++w) {
      const std::uint64_t calls = g.stats(w).channel("lookup").calls;
      ok = ok && calls == 2 * iters;
      per_worker_max = std::max(per_worker_max, calls);
    }
    detail += fmt("overlap %.1f (measured %.2f): %.2f calls/iter; ", overlap,
                  static_cast<double>(shared) / static_cast<double>(query_ids),
                  static_cast<double>(per_worker_max) / iters);
  }
  return pass_if(ok, detail);
}

// 4. Full second-order meta-gradient vs central differences of the
// one-inner-step meta-objective, computed without the tape.
Outcome second_order() {
  SplitMix64 rng(404);
  TaskBatch batch = testing::random_batch(rng, 1, 8, 8, 1, 5);
  batch.query.back().feature_ids = {0, 1, 2, 3, 4};
  PrefetchResult p;
  p.ids = feature_ids(batch);
  p.rows = testing::random_tensor(rng, p.ids.size(), 5, -0.7, 0.7);
  p.owners.assign(p.ids.size(), 0);
  const DenseParams dense = testing::random_params(rng, {6, 3, 1});
  HyperParams h;
  h.alpha = 0.4;
  h.mode = GradMode::kFullSecondOrder;
  const MetaGradients g = task_meta_gradients(p, dense, batch, h);
  std::vector<double> grad(g.embedding.data().begin(), g.embedding.data().end());
  grad.insert(grad.end(), g.dense.begin(), g.dense.end());
  if (grad.size() != 50) return {Verdict::kFail, fmt("model has %zu parameters, expected 50", grad.size())};

  const testing::FlatModel base{p.ids, p.rows, dense};
  const std::vector<double> x = base.pack();
  testing::FlatModel probe = base;
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    std::vector<double> d(50);
    for (double& v : d) v = rng.normal();
    double analytic = 0.0;
    for (std::size_t i = 0; i < 50; ++i) analytic += grad[i] * d[i];
    const double h_step = 1e-4;
    auto objective = [&](double t) {
      std::vector<double> y = x;
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += t * d[i];
      probe.unpack(y);
      return testing::plain_meta_objective(probe, batch, h.alpha, true);
    };
    const double central = (objective(h_step) - objective(-h_step)) / (2 * h_step);
    worst = std::max(worst, testing::relative_error(analytic, central));
  }
  return pass_if(worst <= 1e-4, fmt("50 parameters, 20 directions, max relative error %.3g (limit 1e-4)", worst));
}

// 5. Record-file pipeline invariants on 1e5 samples.
Outcome meta_io_invariants(const TempPath& dir) {
  datagen::TaskFamily f = default_family();
  f.samples_per_task = 500;
  const auto samples = datagen::generate(f);
  const auto path = dir.path() / "c5.rec";
  const io::PreprocessedDataset data = io::preprocess_to_file(samples, 32, 55, path);
  const io::RecordFile file = io::RecordFile::open(path);

  bool uniform = true;
  bool conserved = true;
  bool cover = true;
  bool monotone = true;
  auto sorted = data.batches;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.batch_id < b.batch_id; });
  const bool order = sorted == io::assign_batches(samples, 32) && sorted != data.batches;
  const std::multiset<MetaSample> want(samples.begin(), samples.end());

  for (std::size_t n : {1u, 2u, 4u, 8u}) {
    std::multiset<MetaSample> seen;
    std::vector<std::size_t> owner(file.index().size(), n);
    for (std::size_t w = 0; w < n; ++w) {
      const io::BatchRange range = io::worker_batch_range(file.index().size(), w, n);
      for (std::size_t b = range.first; b < range.last; ++b) {
        if (owner[b] != n) cover = false;
        owner[b] = w;
      }
      io::RangeReader reader = io::load_worker_range(file, w, n);
      std::uint64_t last = reader.position();
      reader.set_observer([&](std::uint64_t begin, std::uint64_t end) {
        if (begin < last || end < begin) monotone = false;
        last = end;
      });
      std::size_t groups = 0;
      for (const io::SampleGroup& g : io::group_batch(reader)) {
        ++groups;
        for (const auto& s : g.samples) {
          uniform = uniform && s.task_id == g.task_id;
          seen.insert(s);
        }
      }
      cover = cover && groups == range.size();
    }
    cover = cover && std::none_of(owner.begin(), owner.end(), [&](std::size_t o) { return o == n; });
    conserved = conserved && seen == want;
  }
  return pass_if(uniform && conserved && order && cover && monotone,
                 fmt("%zu samples, %zu batches: (a) uniform %s (b) conserved %s (c) order %s (d) cover %s "
                     "(e) monotone %s",
                     samples.size(), data.batches.size(), uniform ? "yes" : "no", conserved ? "yes" : "no",
                     order ? "yes" : "no", cover ? "yes" : "no", monotone ? "yes" : "no"));
}

// 6. Post-inner-step query loss on held-out batches of the same task family
// after 500 meta iterations vs. at initialization.
Outcome adaptation(const TempPath& dir) {
  datagen::TaskFamily f;
  f.num_tasks = 200;
  f.samples_per_task = 320;
  f.vocab_size = 10000;
  f.signal_scale = 16.0;
  f.item_weight = 0.25;
  f.task_spread = 0.5;
  f.seed = 5;
  const auto train_path = write_dataset(dir, "c6_train.rec", f, 11);
  f.sample_seed = 99;
  f.samples_per_task = 32;
  const auto held_path = write_dataset(dir, "c6_held.rec", f, 12);

  TrainConfig c = default_config(train_path);
  c.n_workers = 4;
  c.hyper.alpha = 0.5;
  c.hyper.beta = 0.25;
  c.iterations = 500;
  const auto held = io::load_task_batches(io::RecordFile::open(held_path), 0, 1).batches;
  const AdaptationReport before = evaluate_adaptation(init_serial_model(c.model), held, c.hyper);
  comm::WorkerGroup g(c.n_workers);
  const TrainResult r = train_loop(c, g, load_training_batches(c));
  if (r.iterations != 500) return {Verdict::kFail, fmt("ran %zu iterations, expected 500", r.iterations)};
  const AdaptationReport after = evaluate_adaptation(gather_model(r.models), held, c.hyper);
  const double ratio = after.adapted_query_loss / before.adapted_query_loss;
  return pass_if(ratio < 0.5, fmt("held-out adapted query loss %.4f -> %.4f over %zu tasks, ratio %.4f (limit 0.5); "
                                  "training query loss %.4f -> %.4f",
                                  before.adapted_query_loss, after.adapted_query_loss, after.tasks, ratio,
                                  r.mean_query_loss.front(), r.mean_query_loss.back()));
}

// 7. Throughput at n=4 vs n=1, mean of 3 runs. Needs at least 4 cores.
Outcome scaling(const TempPath& dir) {
  const auto data = write_dataset(dir, "c7.rec", default_family(), 3);
  TrainConfig c = default_config(data);
  c.iterations = 100;
  const cli::BenchReport r = cli::cmd_bench(c, {1, 4}, 3);
  const double ratio = r.runs[1].mean_samples_per_second / r.runs[0].mean_samples_per_second;
  const unsigned cores = std::thread::hardware_concurrency();
  const std::string detail = fmt("%u hardware threads; n=1 %.0f samples/s, n=4 %.0f samples/s, ratio %.2f (need 2.0)",
                                 cores, r.runs[0].mean_samples_per_second, r.runs[1].mean_samples_per_second, ratio);
  if (cores < 4) return {Verdict::kSkipped, detail + "; fewer than 4 cores"};
  return pass_if(ratio >= 2.0, detail);
}

std::string read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string metrics_without_timing(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::string line;
  std::string out;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    j.erase("elapsed_ns");
    out += j.dump() + "\n";
  }
  return out;
}

// 8. Two identical cmd_train runs.
Outcome determinism(const TempPath& dir) {
  const auto data = write_dataset(dir, "c8.rec", default_family(), 8);
  std::vector<std::string> models;
  std::vector<std::string> metrics;
  std::vector<std::string> losses;
  for (int run = 0; run < 2; ++run) {
    TrainConfig c = default_config(data);
    c.n_workers = 4;
    c.iterations = 50;
    c.metrics_path = (dir.path() / ("c8_metrics_" + std::to_string(run) + ".jsonl")).string();
    const auto out = dir.path() / ("c8_run_" + std::to_string(run));
    cli::cmd_train(c, out);
    models.push_back(read_all(out / "model.bin"));
    metrics.push_back(metrics_without_timing(c.metrics_path));
    losses.push_back(cli::read_json_file(out / "summary.json")["mean_query_loss"].dump());
  }
  const bool same_model = !models[0].empty() && models[0] == models[1];
  const bool same_metrics = !metrics[0].empty() && metrics[0] == metrics[1] && losses[0] == losses[1];
  return pass_if(same_model && same_metrics, fmt("model.bin %zu bytes identical: %s; metrics identical: %s",
                                                 models[0].size(), same_model ? "yes" : "no",
                                                 same_metrics ? "yes" : "no"));
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));
  TempPath dir("metashard_acceptance");
  std::filesystem::create_directories(dir.path());

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria{
      {1, [&] { return serial_equivalence(dir); }},
      {2, [] { return traffic_laws(); }},
      {3, [] { return prefetch_calls(); }},
      {4, [] { return second_order(); }},
      {5, [&] { return meta_io_invariants(dir); }},
      {6, [&] { return adaptation(dir); }},
      {7, [&] { return scaling(dir); }},
      {8, [&] { return determinism(dir); }},
  };
  int failed = 0;
  for (const auto& [id, check] : criteria) {
    if (!wanted.empty() && !wanted.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {Verdict::kFail, std::string("exception: ") + e.what()};
    }
    const char* word = o.verdict == Verdict::kPass ? "PASS" : o.verdict == Verdict::kFail ? "FAIL" : "SKIPPED";
    if (o.verdict == Verdict::kFail) ++failed;
    std::cout << "[criterion " << id << "] " << word << "  " << o.detail << fmt("  (%.1f s)", seconds_since(t0))
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

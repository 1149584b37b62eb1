// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>

#include "metashard/collectives.hpp"
#include "metashard/csv.hpp"
#include "metashard/errors.hpp"

namespace metashard::cli {

int report_exception(const char* command) {
  const char* kind = "internal fault";
  int code = kInternalFault;
  std::string what;
  try {
    throw;
  } catch (const InputError& e) {
    kind = "bad input", code = kBadInput, what = e.what();
  } catch (const std::invalid_argument& e) {
    kind = "bad input", code = kBadInput, what = e.what();
  } catch (const DataCorruption& e) {
    kind = "corrupt data", code = kBadInput, what = e.what();
  } catch (const nlohmann::json::exception& e) {
    kind = "bad config", code = kBadInput, what = e.what();
  } catch (const std::exception& e) {
    what = e.what();
  } catch (...) {
    what = "unknown exception";
  }
  std::cerr << "metashard " << command << ": " << kind << ": " << what << '\n';
  return code;
}

std::size_t resolve_workers(std::optional<std::size_t> flag, std::size_t configured) {
  if (flag) return *flag;
  if (const char* env = std::getenv(kWorkersEnv); env != nullptr && *env != '\0') {
    std::size_t value = 0;
    const char* end = env + std::char_traits<char>::length(env);
    const auto [ptr, ec] = std::from_chars(env, end, value);
    if (ec != std::errc{} || ptr != end || value == 0) {
      throw InputError(std::string(kWorkersEnv) + " must be a positive integer, got '" + env + "'");
    }
    return value;
  }
  return configured;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  return read_json_file(path).get<TrainConfig>();
}

std::size_t cmd_gen_data(const datagen::TaskFamily& family, const std::filesystem::path& out_csv) {
  const std::vector<MetaSample> samples = datagen::generate(family);
  std::ofstream out(out_csv, std::ios::trunc);
  if (!out) throw InputError("cannot write " + out_csv.string());
  io::write_csv(out, samples);
  if (!out) throw std::runtime_error("write failed: " + out_csv.string());
  return samples.size();
}

io::PreprocessedDataset cmd_preprocess(const std::filesystem::path& csv, std::size_t batch_size,
                                       std::uint64_t seed, const std::filesystem::path& out) {
  std::ifstream in(csv);
  if (!in) throw InputError("cannot open " + csv.string());
  const std::vector<MetaSample> samples = io::read_csv(in);
  return io::preprocess_to_file(samples, batch_size, seed, out);
}

nlohmann::json train_summary(const TrainConfig& config, const TrainResult& result) {
  nlohmann::json losses = nlohmann::json::array();
  for (double v : result.mean_query_loss) losses.push_back(v);
  return nlohmann::json{{"config", config},
                        {"iterations", result.iterations},
                        {"stop", to_string(result.stop)},
                        {"samples", result.samples},
                        {"wall_seconds", result.wall_seconds},
                        {"samples_per_second", result.samples_per_second()},
                        {"mean_query_loss", losses},
                        {"comm", result.comm.to_json()}};
}

TrainResult cmd_train(const TrainConfig& config, const std::filesystem::path& out_dir) {
  if (!std::filesystem::exists(config.data_path)) throw InputError("no such data file: " + config.data_path);
  const auto batches = load_training_batches(config);
  comm::WorkerGroup group(config.n_workers);
  TrainResult result = train_loop(config, group, batches);

  if (!config.metrics_path.empty()) {
    std::ofstream metrics(config.metrics_path, std::ios::trunc);
    if (!metrics) throw InputError("cannot write " + config.metrics_path);
    write_metrics(metrics, result.metrics);
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_model(out_dir / "model.bin", gather_model(result.models));
    std::ofstream summary(out_dir / "summary.json", std::ios::trunc);
    summary << train_summary(config, result).dump(2) << '\n';
  }
  return result;
}

nlohmann::json VerifyReport::to_json() const {
  nlohmann::json j{{"tolerance", tolerance}, {"passed", passed}, {"runs", nlohmann::json::array()}};
  for (const VerifyRun& r : runs) {
    j["runs"].push_back({{"workers", r.workers},
                         {"mode", to_string(r.mode)},
                         {"iterations", r.divergence.size()},
                         {"max_divergence", r.max_divergence},
                         {"max_replica_spread", r.max_replica_spread},
                         {"passed", r.passed},
                         {"divergence", r.divergence}});
  }
  return j;
}

VerifyReport cmd_verify(const TrainConfig& base, const std::vector<std::size_t>& workers,
                        const std::vector<GradMode>& modes, double tolerance) {
  VerifyReport report;
  report.tolerance = tolerance;
  std::map<std::size_t, std::vector<std::vector<TaskBatch>>> cache;
  for (std::size_t n : workers) {
    TrainConfig config = base;
    config.n_workers = n;
    if (!cache.contains(n)) cache.emplace(n, load_training_batches(config));
    for (GradMode mode : modes) {
      config.hyper.mode = mode;
      VerifyRun run;
      run.workers = n;
      run.mode = mode;
      SerialModel serial = init_serial_model(config.model);
      comm::WorkerGroup group(n);
      train_loop(config, group, cache.at(n),
                 [&](std::size_t, std::span<const MetaModel> models, std::span<const TaskBatch> batches) {
                   serial_step(serial, batches, config.hyper);
                   run.divergence.push_back(max_divergence(gather_model(models), serial));
                   run.max_replica_spread = std::max(run.max_replica_spread, replica_spread(models));
                 });
      for (double d : run.divergence) run.max_divergence = std::max(run.max_divergence, d);
      run.passed = run.max_divergence <= tolerance && run.max_replica_spread == 0.0;
      report.passed = report.passed && run.passed;
      report.runs.push_back(std::move(run));
    }
  }
  return report;
}

TrafficComparison compare_traffic(std::size_t workers, std::size_t elements) {
  comm::WorkerGroup group(workers);
  group.run([&](std::size_t me) {
    std::vector<double> buf(elements, static_cast<double>(me));
    group.gather(me, 0, buf);
    group.ring_all_reduce(me, std::move(buf));
  });
  TrafficComparison t;
  t.workers = workers;
  t.elements = elements;
  t.gather_root_received = group.stats(0).primitive(comm::Primitive::kGather).elements_received;
  t.allreduce_sent_per_worker = group.stats(0).primitive(comm::Primitive::kAllReduce).elements_sent;
  return t;
}

nlohmann::json BenchReport::to_json() const {
  nlohmann::json j{{"runs", nlohmann::json::array()}};
  for (const BenchRun& r : runs) {
    j["runs"].push_back({{"workers", r.workers},
                         {"mode", to_string(r.mode)},
                         {"iterations", r.iterations},
                         {"samples_per_second", r.samples_per_second},
                         {"wall_seconds", r.wall_seconds},
                         {"mean_samples_per_second", r.mean_samples_per_second},
                         {"speedup_ratio", r.speedup_ratio},
                         {"throughput_ratio", r.throughput_ratio},
                         {"comm", r.comm.to_json()}});
  }
  j["traffic"] = {{"workers", traffic.workers},
                  {"elements", traffic.elements},
                  {"gather_root_received", traffic.gather_root_received},
                  {"ring_all_reduce_sent_per_worker", traffic.allreduce_sent_per_worker}};
  return j;
}

BenchReport cmd_bench(const TrainConfig& base, const std::vector<std::size_t>& workers,
                      std::size_t repeats) {
  if (workers.empty()) throw InputError("bench needs at least one worker count");
  if (repeats == 0) throw InputError("bench needs at least one repeat");
  BenchReport report;
  for (std::size_t n : workers) {
    TrainConfig config = base;
    config.n_workers = n;
    config.convergence_tol = 0.0;
    config.metrics_path.clear();
    const auto batches = load_training_batches(config);
    BenchRun run;
    run.workers = n;
    run.mode = config.hyper.mode;
    for (std::size_t r = 0; r < repeats; ++r) {
      comm::WorkerGroup group(n);
      const TrainResult result = train_loop(config, group, batches);
      run.samples_per_second.push_back(result.samples_per_second());
      run.wall_seconds.push_back(result.wall_seconds);
      run.iterations = result.iterations;
      run.comm = result.comm;
    }
    run.mean_samples_per_second =
        std::accumulate(run.samples_per_second.begin(), run.samples_per_second.end(), 0.0) /
        static_cast<double>(repeats);
    report.runs.push_back(std::move(run));
  }
  const BenchRun& first = report.runs.front();
  for (BenchRun& run : report.runs) {
    if (&run == &first) {
      run.throughput_ratio = 1.0;
      run.speedup_ratio = 1.0;
      continue;
    }
    run.throughput_ratio = run.mean_samples_per_second / first.mean_samples_per_second;
    run.speedup_ratio = run.throughput_ratio * static_cast<double>(first.workers) /
                        static_cast<double>(run.workers);
  }
  report.traffic = compare_traffic(4, 1024);
  return report;
}

}  // namespace metashard::cli

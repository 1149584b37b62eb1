// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metashard/data_gen.hpp"
#include "metashard/meta_io.hpp"
#include "metashard/trainer.hpp"

namespace metashard::cli {

enum ExitCode : int { kOk = 0, kBadInput = 1, kToleranceBreach = 2, kInternalFault = 3 };

/// Bad user input that is not already a std::invalid_argument (missing file etc).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Maps the exception currently being handled to an exit code and prints it.
int report_exception(const char* command);

/// Environment variable that overrides the configured worker count.
inline constexpr const char* kWorkersEnv = "METASHARD_WORKERS";

/// --workers if given, else $METASHARD_WORKERS if set, else the config value.
std::size_t resolve_workers(std::optional<std::size_t> flag, std::size_t configured);

nlohmann::json read_json_file(const std::filesystem::path& path);
TrainConfig load_train_config(const std::filesystem::path& path);

// gen-data -----------------------------------------------------------------

std::size_t cmd_gen_data(const datagen::TaskFamily& family, const std::filesystem::path& out_csv);

// preprocess ---------------------------------------------------------------

io::PreprocessedDataset cmd_preprocess(const std::filesystem::path& csv, std::size_t batch_size,
                                       std::uint64_t seed, const std::filesystem::path& out);

// train --------------------------------------------------------------------

/// Trains from config.data_path; writes metrics (config.metrics_path, if set),
/// and, if out_dir is non-empty, model.bin and summary.json into it.
TrainResult cmd_train(const TrainConfig& config, const std::filesystem::path& out_dir);

nlohmann::json train_summary(const TrainConfig& config, const TrainResult& result);

// verify -------------------------------------------------------------------

struct VerifyRun {
  std::size_t workers = 0;
  GradMode mode = GradMode::kFullSecondOrder;
  std::vector<double> divergence;  // per iteration, max |parallel - serial|
  double max_divergence = 0.0;
  double max_replica_spread = 0.0;
  bool passed = false;
};

struct VerifyReport {
  double tolerance = 1e-9;
  std::vector<VerifyRun> runs;
  bool passed = true;

  nlohmann::json to_json() const;
};

/// Trains with each (workers, mode) pair and after every iteration compares
/// the gathered parallel model with a serial single-table co-simulation fed
/// the same task batches.
VerifyReport cmd_verify(const TrainConfig& base, const std::vector<std::size_t>& workers,
                        const std::vector<GradMode>& modes, double tolerance);

// bench --------------------------------------------------------------------

struct BenchRun {
  std::size_t workers = 0;
  GradMode mode = GradMode::kFullSecondOrder;
  std::vector<double> samples_per_second;  // one per repeat
  std::vector<double> wall_seconds;
  double mean_samples_per_second = 0.0;
  double speedup_ratio = 0.0;   // mean_thr(n) / (n * mean_thr(1))
  double throughput_ratio = 0.0;  // mean_thr(n) / mean_thr(1)
  std::size_t iterations = 0;
  comm::CommStats comm;  // of the last repeat; identical across repeats
};

struct TrafficComparison {
  std::size_t workers = 0;
  std::size_t elements = 0;
  std::uint64_t gather_root_received = 0;
  std::uint64_t allreduce_sent_per_worker = 0;
};

struct BenchReport {
  std::vector<BenchRun> runs;
  TrafficComparison traffic;

  nlohmann::json to_json() const;
};

/// Gather root traffic vs ring all-reduce per-worker traffic for one buffer.
TrafficComparison compare_traffic(std::size_t workers, std::size_t elements);

/// Runs every worker count `repeats` times on the same workload. Speedups
/// are relative to the first entry of `workers`, which should be 1.
BenchReport cmd_bench(const TrainConfig& base, const std::vector<std::size_t>& workers,
                      std::size_t repeats);

}  // namespace metashard::cli

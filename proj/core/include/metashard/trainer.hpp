// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "metashard/collectives.hpp"
#include "metashard/embedding.hpp"
#include "metashard/meta_step.hpp"
#include "metashard/mlp.hpp"
#include "metashard/sample.hpp"

namespace metashard {

struct ModelConfig {
  std::size_t embedding_dim = 8;
  std::vector<std::size_t> mlp_dims{16, 8, 1};  // front() == embedding_dim + dense width
  Activation hidden = Activation::kTanh;
  std::uint64_t seed = 1;

  void validate() const;
};

/// One worker's state: its embedding shard and its replica of the dense net.
struct MetaModel {
  EmbeddingShard shard;
  DenseParams dense;
  HyperParams hyper;
};

/// Every replica starts from the same seed-keyed initialization, so no
/// communication is needed to agree on theta.
MetaModel init_model(const ModelConfig& config, const HyperParams& hyper, std::size_t me,
                     std::size_t num_workers);

/// Deduplicates support and query ids once, then one all_to_all round trip on
/// channel "lookup": ids to owners, rows back.
PrefetchResult prefetch_embeddings(comm::WorkerGroup& group, std::size_t me, const TaskBatch& batch,
                                   EmbeddingShard& shard);

/// Routes each prefetched row's gradient to its owner (all_to_all on channel
/// "gradient", packed as [id bits, g_0..g_{d-1}]) and applies it with step
/// beta; sums dense gradients with ring_all_reduce on channel "dense" and
/// applies theta -= beta * sum on every replica.
void outer_step(comm::WorkerGroup& group, std::size_t me, MetaModel& model,
                const PrefetchResult& prefetch, const MetaGradients& grads);

struct StepResult {
  double support_loss = 0.0;
  double query_loss = 0.0;
  std::size_t samples = 0;
};

/// prefetch -> inner -> overlap -> outer for one worker and one task batch.
StepResult meta_iteration(comm::WorkerGroup& group, std::size_t me, MetaModel& model,
                          const TaskBatch& batch);

/// Whole model in one context with an unsharded table.
struct SerialModel {
  EmbeddingShard table;
  DenseParams dense;
};

SerialModel init_serial_model(const ModelConfig& config);

/// One meta update over `batches` (one per worker, in worker order): per-task
/// meta-gradients against the same snapshot, summed in task order, applied
/// once. Returns the per-task query losses.
std::vector<double> serial_step(SerialModel& model, std::span<const TaskBatch> batches,
                                const HyperParams& hyper);

SerialModel serial_reference(std::span<const TaskBatch> batches, SerialModel model,
                             const HyperParams& hyper);

/// Union of the shards plus worker 0's dense replica.
SerialModel gather_model(std::span<const MetaModel> models);

/// Max absolute difference over dense parameters and embedding rows; a row
/// stored in only one model is compared against its initial value.
double max_divergence(const SerialModel& a, const SerialModel& b);

/// Max absolute difference between any replica and replica 0.
double replica_spread(std::span<const MetaModel> models);

void save_model(std::ostream& out, const SerialModel& model);
SerialModel load_model(std::istream& in, std::uint64_t seed);
void save_model(const std::filesystem::path& path, const SerialModel& model);

struct AdaptationReport {
  double unadapted_query_loss = 0.0;  // meta model applied to the query set directly
  double adapted_query_loss = 0.0;    // after hyper.inner_steps steps on the support set
  std::size_t tasks = 0;
};

/// Forward-only evaluation over `batches`; the model is not changed.
AdaptationReport evaluate_adaptation(const SerialModel& model, std::span<const TaskBatch> batches,
                                     const HyperParams& hyper);

struct TrainConfig {
  std::size_t n_workers = 1;
  HyperParams hyper;
  std::size_t batch_size = 32;
  ModelConfig model;
  std::size_t iterations = 100;
  std::string data_path;
  std::string metrics_path;
  double support_ratio = 0.5;
  double convergence_tol = 1e-4;  // <= 0 disables the moving-average stop
  std::size_t convergence_window = 50;
  bool check_replicas = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct IterationRecord {
  std::size_t iter = 0;
  std::size_t worker = 0;
  double query_loss = 0.0;
  std::size_t samples = 0;
  std::int64_t elapsed_ns = 0;

  nlohmann::json to_json() const;
};

enum class StopReason : std::uint8_t { kBudget, kConverged, kDataExhausted };
const char* to_string(StopReason r);

struct TrainResult {
  std::vector<MetaModel> models;
  std::vector<IterationRecord> metrics;    // sorted by (iter, worker)
  std::vector<double> mean_query_loss;     // across workers, per iteration
  std::size_t iterations = 0;
  StopReason stop = StopReason::kBudget;
  comm::CommStats comm;
  std::size_t samples = 0;
  double wall_seconds = 0.0;

  double samples_per_second() const { return wall_seconds > 0 ? samples / wall_seconds : 0.0; }
};

/// True when the mean of the last `window` entries of `history` improved on the
/// mean of the `window` before it by less than `tol` (relative). Never true
/// with tol <= 0 or fewer than 2 * window entries.
bool improvement_stalled(std::span<const double> history, std::size_t window, double tol);

/// Called on worker 0 after every iteration while all other workers wait;
/// `batches` are the task batches consumed in that iteration, in worker order.
using IterationHook = std::function<void(std::size_t iter, std::span<const MetaModel> models,
                                         std::span<const TaskBatch> batches)>;

/// Runs meta iterations over per-worker batch lists until the budget,
/// the convergence rule, or the shortest list runs out. The relative
/// improvement rule compares the mean loss of the last `window` iterations
/// with that of the `window` before it.
TrainResult train_loop(const TrainConfig& config, comm::WorkerGroup& group,
                       const std::vector<std::vector<TaskBatch>>& worker_batches,
                       const IterationHook& hook = {});

/// Loads each worker's range of the record file at config.data_path.
/// Throws std::invalid_argument if the file's batch size disagrees with the config.
std::vector<std::vector<TaskBatch>> load_training_batches(const TrainConfig& config);

void write_metrics(std::ostream& out, std::span<const IterationRecord> metrics);

}  // namespace metashard

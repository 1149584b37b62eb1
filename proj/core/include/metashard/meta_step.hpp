// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metashard/autodiff.hpp"
#include "metashard/embedding.hpp"
#include "metashard/mlp.hpp"
#include "metashard/sample.hpp"
#include "metashard/tensor.hpp"

namespace metashard {

enum class GradMode : std::uint8_t { kFullSecondOrder, kFirstOrder };
enum class LossKind : std::uint8_t { kBce, kMse };

GradMode parse_grad_mode(const std::string& name);
std::string to_string(GradMode mode);
LossKind parse_loss(const std::string& name);
std::string to_string(LossKind loss);

struct HyperParams {
  double alpha = 0.1;  // inner step size
  double beta = 0.1;   // outer step size
  std::size_t inner_steps = 1;
  GradMode mode = GradMode::kFullSecondOrder;
  LossKind loss = LossKind::kBce;
  // Scales a worker's local meta-gradient down to this L2 norm; 0 disables.
  double clip_norm = 0.0;

  void validate() const;
};

/// Embedding rows a worker holds for one task batch: the deduplicated union
/// of support and query feature ids, fetched together.
struct PrefetchResult {
  std::vector<FeatureId> ids;        // sorted, unique
  Tensor rows;                       // [ids.size(), dim], row i belongs to ids[i]
  std::vector<std::size_t> owners;   // owning worker of ids[i]

  std::size_t index_of(FeatureId id) const;  // throws std::out_of_range if absent
  bool contains(FeatureId id) const;
  std::size_t dim() const { return rows.cols(); }
};

/// Sorted unique feature ids of `samples`.
std::vector<FeatureId> feature_ids(std::span<const MetaSample> samples);
/// Sorted unique union over support and query.
std::vector<FeatureId> feature_ids(const TaskBatch& batch);

/// Prefetch against a table that owns every needed row (single-worker or
/// unsharded use). Owners are filled in for `num_workers` shards.
PrefetchResult local_prefetch(EmbeddingShard& table, const TaskBatch& batch,
                              std::size_t num_workers = 1);

/// Builds loss(f(embedding, net; samples)): each sample's input row is the
/// mean of its feature rows followed by its dense features.
NodeId task_loss(Graph& graph, NodeId embedding, const MlpNodes& net,
                 const PrefetchResult& prefetch, std::span<const MetaSample> samples,
                 LossKind loss);

/// Tape and handles of one worker's inner adaptation.
struct InnerOutputs {
  Graph graph;
  NodeId meta_embedding = 0;   // prefetched rows (the meta parameters)
  MlpNodes meta_dense;         // theta
  NodeId adapted_embedding = 0;
  MlpNodes adapted_dense;      // theta'
  std::vector<double> support_losses;  // one per inner step
  std::vector<bool> support_rows;      // prefetch row touched by the support set

  Tensor adapted_rows() const { return graph.value(adapted_embedding); }
  DenseParams adapted_params() const { return read_params(graph, adapted_dense); }
};

/// xi' = xi - alpha * grad_xi L_sup and theta' = theta - alpha * grad_theta L_sup,
/// repeated hyper.inner_steps times. Rows absent from the support set get a
/// zero gradient and so keep their prefetched value. In full second-order
/// mode the adapted values stay differentiable functions of the meta
/// parameters; in first-order mode each step yields fresh leaves.
/// Throws std::out_of_range if a support id was not prefetched.
InnerOutputs inner_step(const PrefetchResult& prefetch, const DenseParams& dense,
                        std::span<const MetaSample> support, const HyperParams& hyper);

/// Rows the outer loop reads: support-touched ids take the adapted row, all
/// other ids keep the stale prefetched row.
struct QueryView {
  NodeId embedding = 0;              // [ids.size(), dim] over all prefetched ids
  std::vector<FeatureId> query_ids;  // sorted unique ids of the query set
  Tensor query_rows;                 // rows for query_ids
};

QueryView overlap_update(InnerOutputs& inner, const PrefetchResult& prefetch,
                         std::span<const MetaSample> query);

/// Local contribution of one task to the meta-gradient.
struct MetaGradients {
  double support_loss = 0.0;  // first inner step
  double query_loss = 0.0;    // L_query at the adapted parameters
  Tensor embedding;           // [prefetch.ids.size(), dim]
  std::vector<double> dense;  // DenseParams::flatten() layout
};

/// Gradient of L_query with respect to the meta parameters (xi rows, theta).
/// Throws NumericalError if the loss or any gradient entry is non-finite.
MetaGradients outer_gradients(InnerOutputs& inner, const QueryView& view,
                              const PrefetchResult& prefetch, std::span<const MetaSample> query,
                              const HyperParams& hyper);

/// inner_step -> overlap_update -> outer_gradients (+ optional clipping).
MetaGradients task_meta_gradients(const PrefetchResult& prefetch, const DenseParams& dense,
                                  const TaskBatch& batch, const HyperParams& hyper);

/// Forward-only loss of `samples` at the given parameters.
double evaluate_loss(const PrefetchResult& prefetch, const DenseParams& dense,
                     std::span<const MetaSample> samples, LossKind loss);

}  // namespace metashard

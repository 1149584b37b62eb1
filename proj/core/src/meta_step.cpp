// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include "metashard/meta_step.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "metashard/errors.hpp"

namespace metashard {

GradMode parse_grad_mode(const std::string& name) {
  if (name == "full_second_order" || name == "full") return GradMode::kFullSecondOrder;
  if (name == "first_order" || name == "fo") return GradMode::kFirstOrder;
  throw std::invalid_argument("unknown gradient mode '" + name + "'");
}

std::string to_string(GradMode mode) {
  return mode == GradMode::kFullSecondOrder ? "full_second_order" : "first_order";
}

LossKind parse_loss(const std::string& name) {
  if (name == "bce") return LossKind::kBce;
  if (name == "mse") return LossKind::kMse;
  throw std::invalid_argument("unknown loss '" + name + "'");
}

std::string to_string(LossKind loss) { return loss == LossKind::kBce ? "bce" : "mse"; }

void HyperParams::validate() const {
  if (!(alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
  if (!(beta > 0.0)) throw std::invalid_argument("beta must be > 0");
  if (inner_steps < 1) throw std::invalid_argument("inner_steps must be >= 1");
  if (clip_norm < 0.0) throw std::invalid_argument("clip_norm must be >= 0");
}

std::size_t PrefetchResult::index_of(FeatureId id) const {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) {
    throw std::out_of_range("feature " + std::to_string(id) + " was not prefetched");
  }
  return static_cast<std::size_t>(it - ids.begin());
}

bool PrefetchResult::contains(FeatureId id) const {
  return std::binary_search(ids.begin(), ids.end(), id);
}

std::vector<FeatureId> feature_ids(std::span<const MetaSample> samples) {
  std::vector<FeatureId> ids;
  for (const auto& s : samples) ids.insert(ids.end(), s.feature_ids.begin(), s.feature_ids.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<FeatureId> feature_ids(const TaskBatch& batch) {
  std::vector<FeatureId> ids = feature_ids(batch.support);
  const std::vector<FeatureId> q = feature_ids(batch.query);
  std::vector<FeatureId> merged;
  merged.reserve(ids.size() + q.size());
  std::set_union(ids.begin(), ids.end(), q.begin(), q.end(), std::back_inserter(merged));
  return merged;
}

PrefetchResult local_prefetch(EmbeddingShard& table, const TaskBatch& batch, std::size_t num_workers) {
  PrefetchResult p;
  p.ids = feature_ids(batch);
  p.rows = table.lookup(p.ids).vectors;
  p.owners.reserve(p.ids.size());
  for (FeatureId id : p.ids) p.owners.push_back(shard_of(id, num_workers));
  return p;
}

NodeId task_loss(Graph& graph, NodeId embedding, const MlpNodes& net,
                 const PrefetchResult& prefetch, std::span<const MetaSample> samples,
                 LossKind loss) {
  if (samples.empty()) throw std::invalid_argument("task_loss: empty sample set");
  const std::size_t m = samples.size();
  const std::size_t width = samples.front().dense.size();
  Tensor pool(m, prefetch.ids.size());
  Tensor dense(m, width);
  Tensor labels(m, 1);
  for (std::size_t s = 0; s < m; ++s) {
    const auto& sample = samples[s];
    if (sample.dense.size() != width) throw ShapeError("task_loss: ragged dense features");
    if (sample.feature_ids.empty()) throw std::invalid_argument("task_loss: sample without feature ids");
    const double w = 1.0 / static_cast<double>(sample.feature_ids.size());
    for (FeatureId id : sample.feature_ids) pool(s, prefetch.index_of(id)) += w;
    std::copy(sample.dense.begin(), sample.dense.end(), dense.row(s).begin());
    labels(s, 0) = sample.label;
  }
  const NodeId pooled = graph.matmul(graph.constant(std::move(pool)), embedding);
  const NodeId input = graph.concat_cols(pooled, graph.constant(std::move(dense)));
  const NodeId out = forward_mlp(graph, net, input);
  if (graph.value(out).cols() != 1) {
    throw ShapeError("task_loss: network must have a single output, got " +
                     shape_string(graph.value(out)));
  }
  return loss == LossKind::kBce ? bce_with_logits(graph, out, labels) : mse_loss(graph, out, labels);
}

namespace {

Tensor sgd_step(const Tensor& x, double lr, const Tensor& g) {
  Tensor out = x;
  auto dst = out.data();
  auto grad = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= lr * grad[i];
  return out;
}

}  // namespace

InnerOutputs inner_step(const PrefetchResult& prefetch, const DenseParams& dense,
                        std::span<const MetaSample> support, const HyperParams& hyper) {
  if (hyper.inner_steps < 1) throw std::invalid_argument("inner_steps must be >= 1");
  InnerOutputs out;
  Graph& g = out.graph;
  out.meta_embedding = g.parameter(prefetch.rows);
  out.meta_dense = add_parameters(g, dense);
  out.support_rows.assign(prefetch.ids.size(), false);
  for (FeatureId id : feature_ids(support)) out.support_rows[prefetch.index_of(id)] = true;

  const bool full = hyper.mode == GradMode::kFullSecondOrder;
  NodeId emb = out.meta_embedding;
  MlpNodes net = out.meta_dense;
  for (std::size_t step = 0; step < hyper.inner_steps; ++step) {
    const NodeId loss = task_loss(g, emb, net, prefetch, support, hyper.loss);
    out.support_losses.push_back(g.value(loss).item());

    std::vector<NodeId> wrt{emb};
    const std::vector<NodeId> params = net.all();
    wrt.insert(wrt.end(), params.begin(), params.end());
    const std::vector<NodeId> grads = g.grad(loss, wrt, full);

    auto update = [&](NodeId x, NodeId grad) {
      if (full) return g.sub(x, g.scale(grad, hyper.alpha));
      return g.parameter(sgd_step(g.value(x), hyper.alpha, g.value(grad)));
    };
    emb = update(emb, grads[0]);
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      net.weights[l] = update(net.weights[l], grads[1 + 2 * l]);
      net.biases[l] = update(net.biases[l], grads[2 + 2 * l]);
    }
  }
  out.adapted_embedding = emb;
  out.adapted_dense = net;
  return out;
}

QueryView overlap_update(InnerOutputs& inner, const PrefetchResult& prefetch,
                         std::span<const MetaSample> query) {
  Graph& g = inner.graph;
  const std::size_t dim = prefetch.dim();
  Tensor keep_adapted(prefetch.ids.size(), dim);
  Tensor keep_stale(prefetch.ids.size(), dim);
  for (std::size_t r = 0; r < prefetch.ids.size(); ++r) {
    const double a = inner.support_rows[r] ? 1.0 : 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      keep_adapted(r, d) = a;
      keep_stale(r, d) = 1.0 - a;
    }
  }
  QueryView view;
  view.embedding = g.add(g.mul(g.constant(std::move(keep_adapted)), inner.adapted_embedding),
                         g.mul(g.constant(std::move(keep_stale)), inner.meta_embedding));
  view.query_ids = feature_ids(query);
  view.query_rows = Tensor(view.query_ids.size(), dim);
  const Tensor& all = g.value(view.embedding);
  for (std::size_t i = 0; i < view.query_ids.size(); ++i) {
    const auto row = all.row(prefetch.index_of(view.query_ids[i]));
    std::copy(row.begin(), row.end(), view.query_rows.row(i).begin());
  }
  return view;
}

MetaGradients outer_gradients(InnerOutputs& inner, const QueryView& view,
                              const PrefetchResult& prefetch, std::span<const MetaSample> query,
                              const HyperParams& hyper) {
  Graph& g = inner.graph;
  const NodeId loss = task_loss(g, view.embedding, inner.adapted_dense, prefetch, query, hyper.loss);

  MetaGradients out;
  out.support_loss = inner.support_losses.empty() ? 0.0 : inner.support_losses.front();
  out.query_loss = g.value(loss).item();

  const bool full = hyper.mode == GradMode::kFullSecondOrder;
  // First-order: adapted values are treated as the meta parameters themselves,
  // so the gradient w.r.t. theta' and xi' stands in for the meta-gradient.
  std::vector<NodeId> wrt{inner.meta_embedding};
  if (!full) wrt.push_back(inner.adapted_embedding);
  const std::vector<NodeId> dense_nodes = full ? inner.meta_dense.all() : inner.adapted_dense.all();
  wrt.insert(wrt.end(), dense_nodes.begin(), dense_nodes.end());
  const std::vector<NodeId> grads = g.grad(loss, wrt, false);

  out.embedding = g.value(grads[0]);
  std::size_t next = 1;
  if (!full) {
    const Tensor& via_adapted = g.value(grads[next++]);
    auto dst = out.embedding.data();
    auto src = via_adapted.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
  for (; next < grads.size(); ++next) {
    const auto values = g.value(grads[next]).data();
    out.dense.insert(out.dense.end(), values.begin(), values.end());
  }

  const bool finite = std::isfinite(out.query_loss) && out.embedding.all_finite() &&
                      std::all_of(out.dense.begin(), out.dense.end(), [](double v) { return std::isfinite(v); });
  if (!finite) {
    throw NumericalError("non-finite meta-gradient (query loss " + std::to_string(out.query_loss) +
                         ", support loss " + std::to_string(out.support_loss) + ")");
  }
  return out;
}

MetaGradients task_meta_gradients(const PrefetchResult& prefetch, const DenseParams& dense,
                                  const TaskBatch& batch, const HyperParams& hyper) {
  InnerOutputs inner = inner_step(prefetch, dense, batch.support, hyper);
  const QueryView view = overlap_update(inner, prefetch, batch.query);
  MetaGradients grads = outer_gradients(inner, view, prefetch, batch.query, hyper);
  if (hyper.clip_norm > 0.0) {
    double sq = 0.0;
    for (double v : grads.embedding.data()) sq += v * v;
    for (double v : grads.dense) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > hyper.clip_norm) {
      const double s = hyper.clip_norm / norm;
      for (double& v : grads.embedding.data()) v *= s;
      for (double& v : grads.dense) v *= s;
    }
  }
  return grads;
}

double evaluate_loss(const PrefetchResult& prefetch, const DenseParams& dense,
                     std::span<const MetaSample> samples, LossKind loss) {
  Graph g;
  const NodeId emb = g.constant(prefetch.rows);
  const MlpNodes net = add_constants(g, dense);
  return g.value(task_loss(g, emb, net, prefetch, samples, loss)).item();
}

}  // namespace metashard

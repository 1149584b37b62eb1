// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include "metashard/embedding.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

#include "metashard/binary_io.hpp"
#include "metashard/errors.hpp"
#include "metashard/rng.hpp"

namespace metashard {

std::size_t shard_of(FeatureId id, std::size_t num_workers) {
  if (num_workers == 0) throw std::invalid_argument("shard_of: worker count must be >= 1");
  return static_cast<std::size_t>(id % num_workers);
}

ShardMap::ShardMap(std::size_t num_workers) : num_workers_(num_workers) {
  if (num_workers == 0) throw std::invalid_argument("ShardMap: worker count must be >= 1");
}

std::vector<double> initial_row(std::uint64_t seed, FeatureId id, std::size_t dim) {
  SplitMix64 rng(hash_combine(seed, id));
  std::vector<double> row(dim);
  for (double& v : row) v = rng.uniform(-0.01, 0.01);
  return row;
}

EmbeddingShard::EmbeddingShard(std::size_t owner, std::size_t num_workers, std::size_t dim,
                               std::uint64_t seed)
    : owner_(owner), map_(num_workers), dim_(dim), seed_(seed) {
  if (owner >= num_workers) throw std::invalid_argument("EmbeddingShard: owner out of range");
  if (dim == 0) throw std::invalid_argument("EmbeddingShard: dim must be positive");
}

std::vector<double>& EmbeddingShard::row_for(FeatureId id) {
  if (!owns(id)) {
    throw RoutingError("feature " + std::to_string(id) + " belongs to shard " +
                       std::to_string(map_(id)) + ", not " + std::to_string(owner_));
  }
  auto it = rows_.find(id);
  if (it == rows_.end()) it = rows_.emplace(id, initial_row(seed_, id, dim_)).first;
  return it->second;
}

void EmbeddingShard::put(FeatureId id, std::vector<double> row) {
  if (row.size() != dim_) {
    throw ShapeError("put: row of width " + std::to_string(row.size()) + " into table of dim " +
                     std::to_string(dim_));
  }
  row_for(id) = std::move(row);
}

EmbeddingBatch EmbeddingShard::lookup(std::span<const FeatureId> ids, RowOrigin origin) {
  EmbeddingBatch batch;
  batch.origin = origin;
  std::unordered_set<FeatureId> seen;
  for (FeatureId id : ids) {
    if (seen.insert(id).second) batch.ids.push_back(id);
  }
  batch.vectors = Tensor(batch.ids.size(), dim_);
  for (std::size_t i = 0; i < batch.ids.size(); ++i) {
    const auto& row = row_for(batch.ids[i]);
    std::copy(row.begin(), row.end(), batch.vectors.row(i).begin());
  }
  return batch;
}

void EmbeddingShard::apply_sparse_grads(std::span<const SparseGrad> grads, double lr) {
  for (const auto& g : grads) {
    if (g.grad.size() != dim_) {
      throw ShapeError("sparse grad for feature " + std::to_string(g.id) + " has length " +
                       std::to_string(g.grad.size()) + ", table dim is " + std::to_string(dim_));
    }
    if (!owns(g.id)) {
      throw RoutingError("sparse grad for feature " + std::to_string(g.id) +
                         " sent to shard " + std::to_string(owner_));
    }
  }
  std::vector<const SparseGrad*> order;
  order.reserve(grads.size());
  for (const auto& g : grads) order.push_back(&g);
  std::stable_sort(order.begin(), order.end(),
                   [](const SparseGrad* a, const SparseGrad* b) { return a->id < b->id; });

  std::vector<double> sum(dim_);
  for (std::size_t i = 0; i < order.size();) {
    const FeatureId id = order[i]->id;
    std::fill(sum.begin(), sum.end(), 0.0);
    for (; i < order.size() && order[i]->id == id; ++i) {
      for (std::size_t d = 0; d < dim_; ++d) sum[d] += order[i]->grad[d];
    }
    auto& row = row_for(id);
    for (std::size_t d = 0; d < dim_; ++d) row[d] -= lr * sum[d];
  }
}

const std::vector<double>* EmbeddingShard::find(FeatureId id) const {
  auto it = rows_.find(id);
  return it == rows_.end() ? nullptr : &it->second;
}

void EmbeddingShard::save(std::ostream& out) const {
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
  binary::write<std::uint64_t>(out, rows_.size());
  for (const auto& [id, row] : rows_) {
    binary::write<std::uint64_t>(out, id);
    for (double v : row) binary::write<double>(out, v);
  }
}

EmbeddingShard EmbeddingShard::load(std::istream& in, std::size_t owner, std::size_t num_workers,
                                    std::uint64_t seed) {
  const auto dim = binary::read<std::uint32_t>(in);
  const auto count = binary::read<std::uint64_t>(in);
  EmbeddingShard shard(owner, num_workers, dim, seed);
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto id = binary::read<std::uint64_t>(in);
    if (!shard.owns(id)) {
      throw DataCorruption("checkpoint row " + std::to_string(id) + " not owned by shard " +
                           std::to_string(owner));
    }
    std::vector<double> row(dim);
    for (double& v : row) v = binary::read<double>(in);
    if (!shard.rows_.emplace(id, std::move(row)).second) {
      throw DataCorruption("checkpoint repeats row " + std::to_string(id));
    }
  }
  return shard;
}

}  // namespace metashard

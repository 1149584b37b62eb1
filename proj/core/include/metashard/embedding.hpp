// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "metashard/tensor.hpp"

namespace metashard {

using FeatureId = std::uint64_t;

/// Owner of feature `id` among `num_workers` row shards (plain modulo).
/// Throws std::invalid_argument when num_workers == 0.
std::size_t shard_of(FeatureId id, std::size_t num_workers);

class ShardMap {
 public:
  explicit ShardMap(std::size_t num_workers);

  std::size_t num_workers() const noexcept { return num_workers_; }
  std::size_t operator()(FeatureId id) const noexcept { return id % num_workers_; }

 private:
  std::size_t num_workers_;
};

/// Initial value of row `id`: uniform in [-0.01, 0.01), keyed only by
/// (seed, id) so every shard layout sees the same table.
std::vector<double> initial_row(std::uint64_t seed, FeatureId id, std::size_t dim);

enum class RowOrigin : std::uint8_t { kSupport, kQuery, kBoth };

struct EmbeddingBatch {
  std::vector<FeatureId> ids;  // unique
  Tensor vectors;              // [ids.size(), dim]
  RowOrigin origin = RowOrigin::kBoth;
};

struct SparseGrad {
  FeatureId id;
  std::vector<double> grad;
};

/// One worker's slice of the embedding table. Rows are created lazily on
/// first lookup. Only the owning worker touches a shard.
class EmbeddingShard {
 public:
  EmbeddingShard(std::size_t owner, std::size_t num_workers, std::size_t dim, std::uint64_t seed);

  std::size_t owner() const noexcept { return owner_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_workers() const noexcept { return map_.num_workers(); }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t num_rows() const noexcept { return rows_.size(); }
  bool owns(FeatureId id) const noexcept { return map_(id) == owner_; }

  /// Current rows for `ids`, deduplicated in first-appearance order.
  /// Throws RoutingError if any id belongs to another shard.
  EmbeddingBatch lookup(std::span<const FeatureId> ids, RowOrigin origin = RowOrigin::kBoth);

  /// row[id] -= lr * sum of the grads listed for id. Entries are stably
  /// ordered by id and duplicates summed in list order before applying, so
  /// the result does not depend on how the list is permuted across ids.
  void apply_sparse_grads(std::span<const SparseGrad> grads, double lr);

  /// Overwrites (or creates) one owned row. Throws RoutingError / ShapeError.
  void put(FeatureId id, std::vector<double> row);

  /// Stored row or nullptr; never initializes.
  const std::vector<double>* find(FeatureId id) const;
  const std::map<FeatureId, std::vector<double>>& rows() const noexcept { return rows_; }

  /// Little-endian: dim u32, row count u64, then per row id u64 + dim x f64.
  void save(std::ostream& out) const;
  static EmbeddingShard load(std::istream& in, std::size_t owner, std::size_t num_workers,
                             std::uint64_t seed);

 private:
  std::vector<double>& row_for(FeatureId id);

  std::size_t owner_;
  ShardMap map_;
  std::size_t dim_;
  std::uint64_t seed_;
  std::map<FeatureId, std::vector<double>> rows_;
};

}  // namespace metashard

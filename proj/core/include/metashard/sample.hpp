// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

namespace metashard {

using TaskId = std::uint64_t;

/// One labeled record: the unit the data pipeline moves around.
struct MetaSample {
  TaskId task_id = 0;
  std::vector<std::uint64_t> feature_ids;  // sparse ids, nonempty
  std::vector<double> dense;               // fixed width per dataset
  double label = 0.0;                      // 0/1, or real-valued for regression

  friend bool operator==(const MetaSample&, const MetaSample&) = default;
  friend auto operator<=>(const MetaSample&, const MetaSample&) = default;
};

/// A task-uniform batch split into the inner-loop (support) and outer-loop
/// (query) mini-batches.
struct TaskBatch {
  TaskId task_id = 0;
  std::vector<MetaSample> support;
  std::vector<MetaSample> query;

  std::size_t num_samples() const noexcept { return support.size() + query.size(); }

  // Throws std::invalid_argument unless both sets are nonempty and every
  // sample carries task_id.
  void validate() const;

  friend bool operator==(const TaskBatch&, const TaskBatch&) = default;
};

}  // namespace metashard

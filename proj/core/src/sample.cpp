// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include "metashard/sample.hpp"

#include <stdexcept>
#include <string>

namespace metashard {

void TaskBatch::validate() const {
  if (support.empty() || query.empty()) {
    throw std::invalid_argument("task " + std::to_string(task_id) +
                                ": support and query sets must both be nonempty");
  }
  for (const auto* set : {&support, &query}) {
    for (const auto& s : *set) {
      if (s.task_id != task_id) {
        throw std::invalid_argument("task batch " + std::to_string(task_id) +
                                    " contains a sample of task " + std::to_string(s.task_id));
      }
    }
  }
}

}  // namespace metashard

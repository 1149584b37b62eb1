// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace metashard {

// Tensor shapes do not compose for the requested operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A feature id reached a shard that does not own it.
class RoutingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Collective misuse or a peer failure: epoch/kind mismatch, aborted group.
class CollectiveFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// On-disk or in-stream data violates a format invariant.
class DataCorruption : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A gradient or loss became non-finite.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace metashard

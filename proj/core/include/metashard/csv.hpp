// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "metashard/sample.hpp"

namespace metashard::io {

// Text interchange format consumed by the preprocessor:
//
//   task_id,label,dense_0,...,dense_{W-1},ids
//   7,1,0.25,...,-1.5,1203,88,4410
//
// The header names W dense columns; every row has 2 + W leading fields
// followed by one or more feature ids.

void write_csv(std::ostream& out, std::span<const MetaSample> samples);

/// Throws std::invalid_argument on a malformed header or row (with line number).
std::vector<MetaSample> read_csv(std::istream& in);

}  // namespace metashard::io

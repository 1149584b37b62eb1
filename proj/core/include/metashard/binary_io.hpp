// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <type_traits>

#include "metashard/errors.hpp"

namespace metashard::binary {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts need byte swaps");

template <class T>
  requires std::is_arithmetic_v<T>
void write(std::ostream& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.write(buf, sizeof(T));
}

template <class T>
  requires std::is_arithmetic_v<T>
T read(std::istream& in) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) throw DataCorruption("unexpected end of stream");
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

}  // namespace metashard::binary

// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include "metashard/csv.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace metashard::io {
namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <class T>
T parse(std::string_view field, std::size_t line_no) {
  T value{};
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw std::invalid_argument("csv line " + std::to_string(line_no) + ": cannot parse '" +
                                std::string(field) + "'");
  }
  return value;
}

void append_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

}  // namespace

void write_csv(std::ostream& out, std::span<const MetaSample> samples) {
  const std::size_t width = samples.empty() ? 0 : samples.front().dense.size();
  std::string line = "task_id,label";
  for (std::size_t i = 0; i < width; ++i) line += ",dense_" + std::to_string(i);
  line += ",ids\n";
  out << line;
  for (const auto& s : samples) {
    if (s.dense.size() != width) throw std::invalid_argument("write_csv: inconsistent dense width");
    line = std::to_string(s.task_id);
    line += ',';
    append_double(line, s.label);
    for (double v : s.dense) {
      line += ',';
      append_double(line, v);
    }
    for (auto id : s.feature_ids) {
      line += ',';
      line += std::to_string(id);
    }
    line += '\n';
    out << line;
  }
}

std::vector<MetaSample> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("csv: missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "task_id" || header[1] != "label" || header.back() != "ids") {
    throw std::invalid_argument("csv: header must be task_id,label,dense_0..dense_{W-1},ids");
  }
  const std::size_t width = header.size() - 3;
  for (std::size_t i = 0; i < width; ++i) {
    if (header[2 + i] != "dense_" + std::to_string(i)) {
      throw std::invalid_argument("csv: expected column dense_" + std::to_string(i));
    }
  }

  std::vector<MetaSample> samples;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split(line);
    if (fields.size() < width + 3) {
      throw std::invalid_argument("csv line " + std::to_string(line_no) + ": expected at least " +
                                  std::to_string(width + 3) + " fields");
    }
    MetaSample s;
    s.task_id = parse<std::uint64_t>(fields[0], line_no);
    s.label = parse<double>(fields[1], line_no);
    s.dense.reserve(width);
    for (std::size_t i = 0; i < width; ++i) s.dense.push_back(parse<double>(fields[2 + i], line_no));
    for (std::size_t i = 2 + width; i < fields.size(); ++i) {
      s.feature_ids.push_back(parse<std::uint64_t>(fields[i], line_no));
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace metashard::io

// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include "metashard/meta_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "metashard/binary_io.hpp"
#include "metashard/errors.hpp"
#include "metashard/rng.hpp"

namespace metashard::io {

std::size_t PreprocessedDataset::record_count() const {
  std::size_t n = 0;
  for (const auto& b : batches) n += b.samples.size();
  return n;
}

std::size_t PreprocessedDataset::partial_batches() const {
  return static_cast<std::size_t>(
      std::count_if(batches.begin(), batches.end(), [](const SampleBatch& b) { return b.partial; }));
}

std::vector<SampleBatch> assign_batches(std::span<const MetaSample> samples, std::size_t batch_size) {
  if (samples.empty()) throw std::invalid_argument("preprocess: empty input");
  if (batch_size < 2) {
    throw std::invalid_argument("preprocess: batch_size must be >= 2 to split support/query");
  }
  const std::size_t width = samples.front().dense.size();
  for (const auto& s : samples) {
    if (s.feature_ids.empty()) {
      throw std::invalid_argument("preprocess: sample of task " + std::to_string(s.task_id) +
                                  " has no feature ids");
    }
    if (s.dense.size() != width) {
      throw std::invalid_argument("preprocess: dense width " + std::to_string(s.dense.size()) +
                                  " differs from " + std::to_string(width));
    }
  }

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return samples[a].task_id < samples[b].task_id;
  });

  std::vector<SampleBatch> batches;
  std::uint64_t next_id = 0;
  for (std::size_t i = 0; i < order.size();) {
    const TaskId task = samples[order[i]].task_id;
    SampleBatch batch{next_id++, task, {}, false};
    for (; i < order.size() && samples[order[i]].task_id == task && batch.samples.size() < batch_size; ++i) {
      batch.samples.push_back(samples[order[i]]);
    }
    batch.partial = batch.samples.size() < batch_size;
    batches.push_back(std::move(batch));
  }
  return batches;
}

void shuffle_batches(std::vector<SampleBatch>& batches, std::uint64_t seed) {
  SplitMix64 rng(hash_combine(seed, 0x73687566ULL));
  for (std::size_t i = batches.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(batches[i - 1], batches[j]);
  }
}

PreprocessedDataset preprocess(std::span<const MetaSample> samples, std::size_t batch_size,
                               std::uint64_t seed) {
  PreprocessedDataset data;
  data.batches = assign_batches(samples, batch_size);
  data.batch_size = static_cast<std::uint32_t>(batch_size);
  data.dense_width = static_cast<std::uint32_t>(samples.front().dense.size());
  shuffle_batches(data.batches, seed);
  return data;
}

namespace {

void encode_record(std::ostream& out, const MetaSample& s, std::uint64_t batch_id) {
  binary::write<std::uint64_t>(out, s.task_id);
  binary::write<std::uint64_t>(out, batch_id);
  binary::write<std::uint32_t>(out, static_cast<std::uint32_t>(s.feature_ids.size()));
  for (auto id : s.feature_ids) binary::write<std::uint64_t>(out, id);
  for (double v : s.dense) binary::write<double>(out, v);
  binary::write<double>(out, s.label);
}

std::uint32_t crc_update(std::uint32_t crc, const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(crc, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

}  // namespace

void write_record_file(const std::filesystem::path& path, const PreprocessedDataset& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");

  out.write(kMagic, sizeof(kMagic));
  binary::write<std::uint32_t>(out, kFormatVersion);
  binary::write<std::uint32_t>(out, data.batch_size);
  binary::write<std::uint32_t>(out, data.dense_width);
  binary::write<std::uint64_t>(out, data.record_count());
  binary::write<std::uint64_t>(out, data.batches.size());

  std::vector<BatchIndexEntry> index;
  index.reserve(data.batches.size());
  std::uint32_t crc = crc_update(0, nullptr, 0);
  std::uint64_t offset = kHeaderBytes;
  std::ostringstream buf;
  for (const auto& batch : data.batches) {
    index.push_back({batch.batch_id, offset, static_cast<std::uint32_t>(batch.samples.size())});
    buf.str({});
    for (const auto& s : batch.samples) {
      if (s.dense.size() != data.dense_width) {
        throw std::invalid_argument("write_record_file: dense width mismatch in batch " +
                                    std::to_string(batch.batch_id));
      }
      encode_record(buf, s, batch.batch_id);
    }
    const std::string bytes = buf.str();
    crc = crc_update(crc, bytes.data(), bytes.size());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    offset += bytes.size();
  }
  for (const auto& e : index) {
    binary::write<std::uint64_t>(out, e.batch_id);
    binary::write<std::uint64_t>(out, e.byte_offset);
    binary::write<std::uint32_t>(out, e.record_count);
  }
  binary::write<std::uint32_t>(out, crc);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

PreprocessedDataset preprocess_to_file(std::span<const MetaSample> samples, std::size_t batch_size,
                                       std::uint64_t seed, const std::filesystem::path& path) {
  PreprocessedDataset data = preprocess(samples, batch_size, seed);
  write_record_file(path, data);
  return data;
}

BatchRange worker_batch_range(std::size_t batch_count, std::size_t worker, std::size_t n) {
  if (n == 0 || worker >= n) {
    throw std::invalid_argument("worker " + std::to_string(worker) + " outside group of " +
                                std::to_string(n));
  }
  const std::size_t base = batch_count / n;
  const std::size_t extra = batch_count % n;
  const std::size_t first = worker * base + std::min(worker, extra);
  return {first, first + base + (worker < extra ? 1 : 0)};
}

RecordFile RecordFile::open(const std::filesystem::path& path, bool verify) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open record file " + path.string());
  const std::uint64_t file_size = std::filesystem::file_size(path);
  if (file_size < kHeaderBytes + 4) throw DataCorruption(path.string() + ": too short for a record file");

  char magic[4];
  in.read(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataCorruption(path.string() + ": bad magic");

  RecordFile f;
  f.path_ = path;
  f.header_.version = binary::read<std::uint32_t>(in);
  if (f.header_.version != kFormatVersion) {
    throw DataCorruption(path.string() + ": unsupported version " + std::to_string(f.header_.version));
  }
  f.header_.batch_size = binary::read<std::uint32_t>(in);
  f.header_.dense_width = binary::read<std::uint32_t>(in);
  f.header_.record_count = binary::read<std::uint64_t>(in);
  f.header_.batch_count = binary::read<std::uint64_t>(in);

  const std::uint64_t tail = f.header_.batch_count * kIndexEntryBytes + 4;
  if (f.header_.batch_count > file_size || tail > file_size - kHeaderBytes) {
    throw DataCorruption(path.string() + ": index does not fit in file");
  }
  f.body_end_ = file_size - tail;

  in.seekg(static_cast<std::streamoff>(f.body_end_));
  f.index_.resize(f.header_.batch_count);
  std::uint64_t records = 0;
  std::unordered_set<std::uint64_t> ids;
  for (std::size_t i = 0; i < f.index_.size(); ++i) {
    auto& e = f.index_[i];
    e.batch_id = binary::read<std::uint64_t>(in);
    e.byte_offset = binary::read<std::uint64_t>(in);
    e.record_count = binary::read<std::uint32_t>(in);
    const std::uint64_t expected_min = i == 0 ? kHeaderBytes : f.index_[i - 1].byte_offset + 1;
    if ((i == 0 && e.byte_offset != kHeaderBytes) || e.byte_offset < expected_min ||
        e.byte_offset >= f.body_end_) {
      throw DataCorruption(path.string() + ": index entry " + std::to_string(i) +
                           " has invalid offset " + std::to_string(e.byte_offset));
    }
    if (!ids.insert(e.batch_id).second) {
      throw DataCorruption(path.string() + ": duplicate batch id " + std::to_string(e.batch_id));
    }
    records += e.record_count;
  }
  if (records != f.header_.record_count) {
    throw DataCorruption(path.string() + ": index counts " + std::to_string(records) +
                         " records, header says " + std::to_string(f.header_.record_count));
  }
  f.checksum_ = binary::read<std::uint32_t>(in);

  if (verify) {
    in.seekg(static_cast<std::streamoff>(kHeaderBytes));
    std::uint32_t crc = crc_update(0, nullptr, 0);
    std::vector<char> buf(1 << 16);
    std::uint64_t remaining = f.body_end_ - kHeaderBytes;
    while (remaining > 0) {
      const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(remaining, buf.size()));
      if (!in.read(buf.data(), static_cast<std::streamsize>(n))) {
        throw DataCorruption(path.string() + ": truncated body");
      }
      crc = crc_update(crc, buf.data(), n);
      remaining -= n;
    }
    if (crc != f.checksum_) throw DataCorruption(path.string() + ": body checksum mismatch");
  }
  return f;
}

RangeReader RecordFile::read(BatchRange range) const {
  if (range.first > range.last || range.last > index_.size()) {
    throw std::out_of_range("batch range [" + std::to_string(range.first) + "," +
                            std::to_string(range.last) + ") outside " +
                            std::to_string(index_.size()) + " batches");
  }
  if (range.empty()) return RangeReader(path_, body_end_, body_end_, header_.dense_width);
  const std::uint64_t begin = index_[range.first].byte_offset;
  const std::uint64_t end = range.last < index_.size() ? index_[range.last].byte_offset : body_end_;
  return RangeReader(path_, begin, end, header_.dense_width);
}

RangeReader::RangeReader(const std::filesystem::path& path, std::uint64_t begin, std::uint64_t end,
                         std::uint32_t dense_width)
    : in_(path, std::ios::binary), pos_(begin), end_(end), dense_width_(dense_width) {
  if (!in_) throw std::runtime_error("cannot open record file " + path.string());
  in_.seekg(static_cast<std::streamoff>(begin));
}

void RangeReader::read_bytes(void* dst, std::size_t n) {
  if (pos_ + n > end_) throw DataCorruption("record crosses the end of its range");
  if (!in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n))) {
    throw DataCorruption("unexpected end of record file");
  }
  if (observer_) observer_(pos_, pos_ + n);
  pos_ += n;
}

std::optional<PreprocessedRecord> RangeReader::next() {
  if (pos_ >= end_) return std::nullopt;
  auto read_u64 = [&] {
    std::uint64_t v;
    read_bytes(&v, sizeof v);
    return v;
  };
  PreprocessedRecord rec;
  rec.sample.task_id = read_u64();
  rec.batch_id = read_u64();
  std::uint32_t n_ids;
  read_bytes(&n_ids, sizeof n_ids);
  if (n_ids == 0) throw DataCorruption("record with zero feature ids");
  rec.sample.feature_ids.resize(n_ids);
  read_bytes(rec.sample.feature_ids.data(), n_ids * sizeof(std::uint64_t));
  rec.sample.dense.resize(dense_width_);
  read_bytes(rec.sample.dense.data(), dense_width_ * sizeof(double));
  read_bytes(&rec.sample.label, sizeof(double));
  ++records_read_;
  return rec;
}

RangeReader load_worker_range(const RecordFile& file, std::size_t worker, std::size_t n) {
  const BatchRange range = worker_batch_range(file.index().size(), worker, n);
  if (range.empty()) {
    std::cerr << "warning: worker " << worker << " of " << n << " gets no batches ("
              << file.index().size() << " in " << file.path().string() << ")\n";
  }
  return file.read(range);
}

std::optional<SampleGroup> GroupBatcher::next() {
  if (!pending_) pending_ = reader_.next();
  if (!pending_) return std::nullopt;
  SampleGroup group{pending_->sample.task_id, pending_->batch_id, {}};
  group.samples.push_back(std::move(pending_->sample));
  pending_.reset();
  while (auto rec = reader_.next()) {
    if (rec->batch_id != group.batch_id) {
      pending_ = std::move(rec);
      break;
    }
    if (rec->sample.task_id != group.task_id) {
      throw DataCorruption("batch " + std::to_string(group.batch_id) + " mixes task " +
                           std::to_string(group.task_id) + " and task " +
                           std::to_string(rec->sample.task_id));
    }
    group.samples.push_back(std::move(rec->sample));
  }
  return group;
}

std::vector<SampleGroup> group_batch(RangeReader& reader) {
  GroupBatcher batcher(reader);
  std::vector<SampleGroup> groups;
  while (auto g = batcher.next()) groups.push_back(std::move(*g));
  return groups;
}

std::optional<TaskBatch> split_support_query(const SampleGroup& group, double ratio) {
  const std::size_t n = group.samples.size();
  if (n < 2) return std::nullopt;
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("support ratio must lie in [0, 1]");
  auto support = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n)));
  support = std::clamp<std::size_t>(support, 1, n - 1);
  TaskBatch batch;
  batch.task_id = group.task_id;
  batch.support.assign(group.samples.begin(), group.samples.begin() + static_cast<std::ptrdiff_t>(support));
  batch.query.assign(group.samples.begin() + static_cast<std::ptrdiff_t>(support), group.samples.end());
  return batch;
}

WorkerBatches load_task_batches(const RecordFile& file, std::size_t worker, std::size_t n,
                                double support_ratio) {
  WorkerBatches out;
  RangeReader reader = load_worker_range(file, worker, n);
  GroupBatcher batcher(reader);
  while (auto group = batcher.next()) {
    out.records += group->samples.size();
    if (auto batch = split_support_query(*group, support_ratio)) {
      out.batches.push_back(std::move(*batch));
    } else {
      ++out.skipped_singletons;
    }
  }
  return out;
}

}  // namespace metashard::io

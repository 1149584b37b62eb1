// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "metashard/sample.hpp"

namespace metashard::io {

/// Task-sorted, batch-id-labelled samples plus the batch-level ordering.
///
/// Offline side of the pipeline:
///   1. stable-sort samples by task id,
///   2. cut each task's run into batches of `batch_size` (the trailing
///      remainder becomes a partial batch) with globally increasing ids,
///   3. permute whole batches with a seed-keyed Fisher-Yates shuffle.
/// Records never change batch, and a batch never mixes tasks.
struct SampleBatch {
  std::uint64_t batch_id = 0;
  TaskId task_id = 0;
  std::vector<MetaSample> samples;
  bool partial = false;  // fewer than batch_size samples

  friend bool operator==(const SampleBatch&, const SampleBatch&) = default;
};

struct PreprocessedDataset {
  std::uint32_t batch_size = 0;
  std::uint32_t dense_width = 0;
  std::vector<SampleBatch> batches;  // in on-disk (shuffled) order

  std::size_t record_count() const;
  std::size_t partial_batches() const;
};

/// Steps 1 and 2 only; batches come out in batch-id order.
/// Throws std::invalid_argument on empty input, batch_size < 2, an empty
/// feature list, or inconsistent dense widths.
std::vector<SampleBatch> assign_batches(std::span<const MetaSample> samples, std::size_t batch_size);

/// Seed-keyed Fisher-Yates over whole batches.
void shuffle_batches(std::vector<SampleBatch>& batches, std::uint64_t seed);

PreprocessedDataset preprocess(std::span<const MetaSample> samples, std::size_t batch_size,
                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Record file
//
//   header  "GMIO" | version u32 = 1 | batch_size u32 | dense_width u32 |
//           record_count u64 | batch_count u64                    (32 bytes)
//   body    per record: task_id u64 | batch_id u64 | n_ids u32 |
//           ids u64 x n_ids | dense f64 x dense_width | label f64
//   index   per batch: batch_id u64 | byte_offset u64 | record_count u32
//   footer  CRC-32 (zlib polynomial) of the body bytes, u32
//
// All integers little-endian; byte_offset is absolute from the file start.
// ---------------------------------------------------------------------------

inline constexpr char kMagic[4] = {'G', 'M', 'I', 'O'};
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint64_t kHeaderBytes = 32;
inline constexpr std::uint64_t kIndexEntryBytes = 20;

struct FileHeader {
  std::uint32_t version = kFormatVersion;
  std::uint32_t batch_size = 0;
  std::uint32_t dense_width = 0;
  std::uint64_t record_count = 0;
  std::uint64_t batch_count = 0;
};

struct BatchIndexEntry {
  std::uint64_t batch_id = 0;
  std::uint64_t byte_offset = 0;
  std::uint32_t record_count = 0;
};

struct PreprocessedRecord {
  MetaSample sample;
  std::uint64_t batch_id = 0;
};

void write_record_file(const std::filesystem::path& path, const PreprocessedDataset& data);

/// preprocess() followed by write_record_file(); returns the dataset written.
PreprocessedDataset preprocess_to_file(std::span<const MetaSample> samples, std::size_t batch_size,
                                       std::uint64_t seed, const std::filesystem::path& path);

/// Contiguous batch-index interval [first, last).
struct BatchRange {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t size() const noexcept { return last - first; }
  bool empty() const noexcept { return first == last; }
  friend bool operator==(const BatchRange&, const BatchRange&) = default;
};

/// Splits `batch_count` batches into `n` contiguous groups; the first
/// (batch_count % n) workers get one extra batch.
BatchRange worker_batch_range(std::size_t batch_count, std::size_t worker, std::size_t n);

/// Sequential reader over one contiguous byte range of the body.
class RangeReader {
 public:
  using ReadObserver = std::function<void(std::uint64_t begin, std::uint64_t end)>;

  std::optional<PreprocessedRecord> next();

  std::uint64_t position() const noexcept { return pos_; }
  std::uint64_t end() const noexcept { return end_; }
  std::size_t records_read() const noexcept { return records_read_; }

  /// Called with [begin, end) byte positions of every read issued.
  void set_observer(ReadObserver observer) { observer_ = std::move(observer); }

 private:
  friend class RecordFile;
  RangeReader(const std::filesystem::path& path, std::uint64_t begin, std::uint64_t end,
              std::uint32_t dense_width);

  void read_bytes(void* dst, std::size_t n);

  std::ifstream in_;
  std::uint64_t pos_ = 0;
  std::uint64_t end_ = 0;
  std::uint32_t dense_width_ = 0;
  std::size_t records_read_ = 0;
  ReadObserver observer_;
};

/// Immutable view of a record file: header and batch index in memory, body
/// read on demand through RangeReaders.
class RecordFile {
 public:
  /// Throws DataCorruption on a malformed header/index or, with `verify`, a
  /// checksum mismatch.
  static RecordFile open(const std::filesystem::path& path, bool verify = true);

  const FileHeader& header() const noexcept { return header_; }
  std::span<const BatchIndexEntry> index() const noexcept { return index_; }
  std::uint64_t body_end() const noexcept { return body_end_; }
  std::uint32_t checksum() const noexcept { return checksum_; }
  const std::filesystem::path& path() const noexcept { return path_; }

  RangeReader read(BatchRange range) const;

 private:
  std::filesystem::path path_;
  FileHeader header_;
  std::vector<BatchIndexEntry> index_;
  std::uint64_t body_end_ = 0;
  std::uint32_t checksum_ = 0;
};

/// Reader over worker i's share of whole batches. Workers past the batch
/// count get an empty range (and a warning on stderr).
RangeReader load_worker_range(const RecordFile& file, std::size_t worker, std::size_t n);

struct SampleGroup {
  TaskId task_id = 0;
  std::uint64_t batch_id = 0;
  std::vector<MetaSample> samples;
};

/// Assembles consecutive records sharing a batch id into one task-uniform
/// group. Throws DataCorruption if a batch mixes tasks.
class GroupBatcher {
 public:
  explicit GroupBatcher(RangeReader& reader) : reader_(reader) {}

  std::optional<SampleGroup> next();

 private:
  RangeReader& reader_;
  std::optional<PreprocessedRecord> pending_;
};

std::vector<SampleGroup> group_batch(RangeReader& reader);

/// First ceil(ratio * size) samples become support, clamped so that both
/// sides are nonempty. Returns nullopt for groups smaller than 2.
std::optional<TaskBatch> split_support_query(const SampleGroup& group, double ratio = 0.5);

struct WorkerBatches {
  std::vector<TaskBatch> batches;
  std::size_t skipped_singletons = 0;
  std::size_t records = 0;
};

/// load_worker_range -> group_batch -> split_support_query for one worker.
WorkerBatches load_task_batches(const RecordFile& file, std::size_t worker, std::size_t n,
                                double support_ratio = 0.5);

}  // namespace metashard::io

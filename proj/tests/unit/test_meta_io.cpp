// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "metashard/csv.hpp"
#include "metashard/errors.hpp"
#include "metashard/meta_io.hpp"
#include "test_support.hpp"

namespace metashard::io {
namespace {

using testing::TempPath;

MetaSample sample(TaskId task, std::vector<std::uint64_t> ids, double label = 1.0, std::vector<double> dense = {0.0}) {
  return MetaSample{task, std::move(ids), std::move(dense), label};
}

// Tasks of uneven sizes, interleaved, with distinct contents so multiset
// comparisons are meaningful.
std::vector<MetaSample> random_samples(SplitMix64& rng, std::size_t count, std::size_t tasks, std::size_t width = 2) {
  std::vector<MetaSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(testing::random_sample(rng, rng.below(tasks), width, 1000));
  }
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Bitwise reflected CRC-32 (polynomial 0xEDB88320), independent of zlib.
std::uint32_t crc32_reference(std::string_view bytes) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (unsigned char c : bytes) {
    crc ^= c;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

template <class T>
void put_le(std::string& out, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

TEST(AssignBatches, SingleTaskSplitsIntoFullBatches) {
  const std::vector<MetaSample> in(4, sample(7, {1}));
  const auto batches = assign_batches(in, 2);
  ASSERT_EQ(batches.size(), 2u);
  for (const auto& b : batches) {
    EXPECT_EQ(b.task_id, 7u);
    EXPECT_EQ(b.samples.size(), 2u);
    EXPECT_FALSE(b.partial);
  }
}

TEST(AssignBatches, RemainderKeptAsFlaggedPartial) {
  // B appears first in the input; the stable sort puts task 1 (A) first.
  const std::vector<MetaSample> in{sample(2, {10}), sample(1, {1}), sample(1, {2}), sample(2, {11}), sample(1, {3})};
  const auto batches = assign_batches(in, 2);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].task_id, 1u);
  EXPECT_EQ(batches[0].samples, (std::vector<MetaSample>{sample(1, {1}), sample(1, {2})}));
  EXPECT_FALSE(batches[0].partial);
  EXPECT_EQ(batches[1].samples, (std::vector<MetaSample>{sample(1, {3})}));
  EXPECT_TRUE(batches[1].partial);
  EXPECT_EQ(batches[2].samples, (std::vector<MetaSample>{sample(2, {10}), sample(2, {11})}));
  EXPECT_FALSE(batches[2].partial);
  for (std::size_t i = 0; i < batches.size(); ++i) EXPECT_EQ(batches[i].batch_id, i);
}

TEST(AssignBatches, RejectsBadInput) {
  EXPECT_THROW(assign_batches({}, 2), std::invalid_argument);
  const std::vector<MetaSample> one{sample(1, {1})};
  EXPECT_THROW(assign_batches(one, 1), std::invalid_argument);
  const std::vector<MetaSample> no_ids{sample(1, {})};
  EXPECT_THROW(assign_batches(no_ids, 2), std::invalid_argument);
  const std::vector<MetaSample> ragged{sample(1, {1}, 1.0, {0.0}), sample(1, {1}, 1.0, {0.0, 1.0})};
  EXPECT_THROW(assign_batches(ragged, 2), std::invalid_argument);
}

TEST(ShuffleBatches, SeedKeyedPermutationOfWholeBatches) {
  SplitMix64 rng(1);
  const auto samples = random_samples(rng, 400, 20);
  const auto sorted = assign_batches(samples, 4);
  auto a = sorted;
  auto b = sorted;
  auto c = sorted;
  shuffle_batches(a, 5);
  shuffle_batches(b, 5);
  shuffle_batches(c, 6);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_NE(a, sorted);
  for (auto* shuffled : {&a, &c}) {
    auto back = *shuffled;
    std::sort(back.begin(), back.end(), [](const auto& x, const auto& y) { return x.batch_id < y.batch_id; });
    EXPECT_EQ(back, sorted);
  }
}

TEST(WorkerBatchRange, ExamplesAndRemainderRule) {
  for (std::size_t w = 0; w < 4; ++w) EXPECT_EQ(worker_batch_range(8, w, 4), (BatchRange{2 * w, 2 * w + 2}));
  std::vector<std::size_t> sizes;
  for (std::size_t w = 0; w < 4; ++w) sizes.push_back(worker_batch_range(10, w, 4).size());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 3, 2, 2}));
  EXPECT_EQ(worker_batch_range(5, 0, 1), (BatchRange{0, 5}));
  EXPECT_TRUE(worker_batch_range(2, 3, 4).empty());
  EXPECT_THROW(worker_batch_range(5, 4, 4), std::invalid_argument);
}

// Exhaustive over small (batches, n): contiguous, disjoint, complete, and
// sizes differ by at most one with the larger ones first.
TEST(WorkerBatchRange, PartitionsEveryBatchCount) {
  for (std::size_t count = 0; count <= 40; ++count) {
    for (std::size_t n = 1; n <= 12; ++n) {
      std::size_t next = 0;
      std::size_t prev_size = count + 1;
      for (std::size_t w = 0; w < n; ++w) {
        const BatchRange r = worker_batch_range(count, w, n);
        EXPECT_EQ(r.first, next);
        EXPECT_LE(r.size(), prev_size);
        EXPECT_LE(r.size(), count / n + 1);
        EXPECT_GE(r.size(), count / n);
        prev_size = r.size();
        next = r.last;
      }
      EXPECT_EQ(next, count);
    }
  }
}

TEST(RecordFile, ByteExactLayout) {
  TempPath path("layout");
  PreprocessedDataset data;
  data.batch_size = 2;
  data.dense_width = 1;
  data.batches.push_back(SampleBatch{9, 7, {sample(7, {3, 4}, 1.0, {0.5})}, true});
  write_record_file(path.path(), data);

  std::string body;
  put_le<std::uint64_t>(body, 7);
  put_le<std::uint64_t>(body, 9);
  put_le<std::uint32_t>(body, 2);
  put_le<std::uint64_t>(body, 3);
  put_le<std::uint64_t>(body, 4);
  put_le<double>(body, 0.5);
  put_le<double>(body, 1.0);
  std::string want = "GMIO";
  put_le<std::uint32_t>(want, 1);
  put_le<std::uint32_t>(want, 2);
  put_le<std::uint32_t>(want, 1);
  put_le<std::uint64_t>(want, 1);
  put_le<std::uint64_t>(want, 1);
  want += body;
  put_le<std::uint64_t>(want, 9);
  put_le<std::uint64_t>(want, 32);
  put_le<std::uint32_t>(want, 1);
  put_le<std::uint32_t>(want, crc32_reference(body));
  EXPECT_EQ(slurp(path.path()), want);

  const RecordFile f = RecordFile::open(path.path());
  EXPECT_EQ(f.checksum(), crc32_reference(body));
  EXPECT_EQ(f.header().record_count, 1u);
  EXPECT_EQ(f.body_end(), 32u + body.size());
}

TEST(RecordFile, CorruptionIsDetected) {
  TempPath path("corrupt");
  SplitMix64 rng(2);
  const auto samples = random_samples(rng, 60, 5);
  preprocess_to_file(samples, 4, 1, path.path());
  const std::string good = slurp(path.path());
  ASSERT_NO_THROW(RecordFile::open(path.path()));

  std::string flipped = good;
  flipped[40] ^= 0x01;  // inside the body
  spit(path.path(), flipped);
  EXPECT_THROW(RecordFile::open(path.path()), DataCorruption);
  EXPECT_NO_THROW(RecordFile::open(path.path(), false));

  std::string magic = good;
  magic[0] = 'X';
  spit(path.path(), magic);
  EXPECT_THROW(RecordFile::open(path.path()), DataCorruption);

  spit(path.path(), good.substr(0, good.size() - 30));
  EXPECT_THROW(RecordFile::open(path.path()), DataCorruption);

  spit(path.path(), good.substr(0, 10));
  EXPECT_THROW(RecordFile::open(path.path()), DataCorruption);
}

TEST(RecordFile, IndexAddressesBatchBoundaries) {
  TempPath path("index");
  SplitMix64 rng(3);
  const auto data = preprocess_to_file(random_samples(rng, 200, 9), 5, 4, path.path());
  const RecordFile f = RecordFile::open(path.path());
  ASSERT_EQ(f.index().size(), data.batches.size());
  for (std::size_t b = 0; b < data.batches.size(); ++b) {
    const auto& e = f.index()[b];
    EXPECT_EQ(e.batch_id, data.batches[b].batch_id);
    EXPECT_EQ(e.record_count, data.batches[b].samples.size());
    if (b > 0) {
      EXPECT_GT(e.byte_offset, f.index()[b - 1].byte_offset);
    }
    RangeReader r = f.read({b, b + 1});
    EXPECT_EQ(r.position(), e.byte_offset);
    std::size_t k = 0;
    while (auto rec = r.next()) {
      EXPECT_EQ(rec->batch_id, e.batch_id);
      EXPECT_EQ(rec->sample, data.batches[b].samples[k++]);
    }
    EXPECT_EQ(k, e.record_count);
  }
  EXPECT_THROW(f.read({2, 1}), std::out_of_range);
}

// Builds a record file from hand-made batches and returns its groups.
std::vector<SampleGroup> groups_of(const std::vector<SampleBatch>& batches) {
  TempPath path("groups");
  PreprocessedDataset data;
  data.batch_size = 2;
  data.dense_width = 1;
  data.batches = batches;
  write_record_file(path.path(), data);
  const RecordFile f = RecordFile::open(path.path());
  RangeReader r = load_worker_range(f, 0, 1);
  return group_batch(r);
}

TEST(GroupBatch, Examples) {
  auto g = groups_of({SampleBatch{0, 1, {sample(1, {1}), sample(1, {2})}}, SampleBatch{1, 2, {sample(2, {3})}}});
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].task_id, 1u);
  EXPECT_EQ(g[0].samples.size(), 2u);
  EXPECT_EQ(g[1].task_id, 2u);
  EXPECT_EQ(g[1].samples.size(), 1u);

  g = groups_of({SampleBatch{0, 5, {sample(5, {1}), sample(5, {2})}}, SampleBatch{1, 5, {sample(5, {3}), sample(5, {4})}}});
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0].batch_id, 0u);
  EXPECT_EQ(g[1].batch_id, 1u);

  EXPECT_THROW(groups_of({SampleBatch{0, 1, {sample(1, {1}), sample(2, {2})}}}), DataCorruption);
}

TEST(SplitSupportQuery, CeilAndClampRules) {
  auto group_of = [](std::size_t n) {
    SampleGroup g{3, 0, {}};
    for (std::size_t i = 0; i < n; ++i) g.samples.push_back(sample(3, {i + 1}));
    return g;
  };
  using Sizes = std::pair<std::size_t, std::size_t>;
  auto sizes = [](const std::optional<TaskBatch>& b) { return Sizes(b->support.size(), b->query.size()); };
  EXPECT_EQ(sizes(split_support_query(group_of(4))), Sizes(2, 2));
  EXPECT_EQ(sizes(split_support_query(group_of(3))), Sizes(2, 1));
  EXPECT_EQ(sizes(split_support_query(group_of(5), 0.9)), Sizes(4, 1));
  EXPECT_EQ(sizes(split_support_query(group_of(5), 0.0)), Sizes(1, 4));
  EXPECT_FALSE(split_support_query(group_of(1)));
  EXPECT_THROW(split_support_query(group_of(4), 1.5), std::invalid_argument);
  const TaskBatch b = *split_support_query(group_of(3));
  EXPECT_EQ(b.support[0].feature_ids[0], 1u);
  EXPECT_EQ(b.query[0].feature_ids[0], 3u);
}

TEST(LoadTaskBatches, SingletonsSkippedAndCounted) {
  TempPath path("singletons");
  // Task 1 has 3 samples (batch of 2 plus a singleton), task 2 has 2.
  const std::vector<MetaSample> in{sample(1, {1}), sample(1, {2}), sample(1, {3}), sample(2, {4}), sample(2, {5})};
  preprocess_to_file(in, 2, 1, path.path());
  const WorkerBatches wb = load_task_batches(RecordFile::open(path.path()), 0, 1);
  EXPECT_EQ(wb.batches.size(), 2u);
  EXPECT_EQ(wb.skipped_singletons, 1u);
  EXPECT_EQ(wb.records, 5u);
}

// Pipeline properties over random inputs: task uniformity, conservation,
// batch-level shuffle, disjoint cover and sequential reads.
TEST(Pipeline, PropertiesOverRandomInputs) {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t count = 20 + rng.below(400);
    const std::size_t tasks = 1 + rng.below(30);
    const std::size_t batch = 2 + rng.below(9);
    const auto samples = random_samples(rng, count, tasks);
    TempPath path("pipeline");
    const PreprocessedDataset data = preprocess_to_file(samples, batch, rng(), path.path());
    const RecordFile f = RecordFile::open(path.path());

    auto sorted = data.batches;
    std::sort(sorted.begin(), sorted.end(), [](const auto& x, const auto& y) { return x.batch_id < y.batch_id; });
    EXPECT_EQ(sorted, assign_batches(samples, batch));

    for (std::size_t n : {1u, 2u, 3u, 4u, 8u}) {
      std::multiset<MetaSample> seen;
      std::set<std::uint64_t> batch_ids;
      for (std::size_t w = 0; w < n; ++w) {
        RangeReader r = load_worker_range(f, w, n);
        std::uint64_t last = r.position();
        r.set_observer([&](std::uint64_t begin, std::uint64_t end) {
          EXPECT_GE(begin, last);
          EXPECT_GE(end, begin);
          last = end;
        });
        for (const SampleGroup& g : group_batch(r)) {
          EXPECT_TRUE(batch_ids.insert(g.batch_id).second);
          EXPECT_LE(g.samples.size(), batch);
          for (const auto& s : g.samples) {
            EXPECT_EQ(s.task_id, g.task_id);
            seen.insert(s);
          }
        }
        EXPECT_EQ(r.position(), r.end());
      }
      EXPECT_EQ(seen, std::multiset<MetaSample>(samples.begin(), samples.end()));
      EXPECT_EQ(batch_ids.size(), data.batches.size());
    }
  }
}

TEST(Csv, RoundTripAndErrors) {
  SplitMix64 rng(5);
  const auto samples = random_samples(rng, 50, 4, 3);
  std::stringstream buf;
  write_csv(buf, samples);
  EXPECT_EQ(read_csv(buf), samples);

  std::stringstream header_only("task_id,label,dense_0,ids\n");
  EXPECT_TRUE(read_csv(header_only).empty());
  std::stringstream bad_header("task,label,ids\n");
  EXPECT_THROW(read_csv(bad_header), std::invalid_argument);
  std::stringstream no_ids("task_id,label,dense_0,ids\n1,0,0.5\n");
  EXPECT_THROW(read_csv(no_ids), std::invalid_argument);
  std::stringstream junk("task_id,label,dense_0,ids\n1,0,abc,3\n");
  EXPECT_THROW(read_csv(junk), std::invalid_argument);
}

}  // namespace
}  // namespace metashard::io

// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "metashard/errors.hpp"

namespace metashard::comm {

enum class Primitive : std::uint8_t { kAllToAll, kAllReduce, kGather, kBroadcast, kBarrier };
inline constexpr std::size_t kNumPrimitives = 5;

const char* to_string(Primitive p);

/// Every payload element is 8 bytes (u64 ids or f64 values).
inline constexpr std::uint64_t kBytesPerElement = 8;

struct PrimitiveStats {
  std::uint64_t calls = 0;
  std::uint64_t elements_sent = 0;
  std::uint64_t elements_received = 0;

  PrimitiveStats& operator+=(const PrimitiveStats& o) {
    calls += o.calls;
    elements_sent += o.elements_sent;
    elements_received += o.elements_received;
    return *this;
  }
  friend bool operator==(const PrimitiveStats&, const PrimitiveStats&) = default;
};

/// Exact payload-element ledger of one worker (or a sum over workers).
/// Counts exclude envelopes and local self-delivery. Each call is also
/// booked under a caller-chosen channel name so that, e.g., embedding lookups
/// and gradient returns through all_to_all can be told apart.
class CommStats {
 public:
  void record(Primitive p, std::string_view channel, std::uint64_t sent, std::uint64_t received);

  const PrimitiveStats& primitive(Primitive p) const { return by_primitive_[static_cast<std::size_t>(p)]; }
  PrimitiveStats channel(std::string_view name) const;
  const std::map<std::string, PrimitiveStats, std::less<>>& channels() const { return by_channel_; }

  CommStats& operator+=(const CommStats& other);

  /// {"all_to_all": {calls, elements_sent, elements_received, bytes_sent,
  /// bytes_received}, ..., "channels": {name: {...}}}
  nlohmann::json to_json() const;

 private:
  PrimitiveStats by_primitive_[kNumPrimitives];
  std::map<std::string, PrimitiveStats, std::less<>> by_channel_;
};

/// Raised in workers blocked on a collective after another worker failed.
class GroupAborted : public CollectiveFault {
 public:
  using CollectiveFault::CollectiveFault;
};

/// N lock-step worker contexts inside one process, exchanging payloads over
/// in-memory FIFO mailboxes (one per sender/receiver pair).
///
/// Every collective call advances the caller's epoch; all messages of a call
/// carry (primitive, epoch) and receivers reject anything else, so workers
/// that disagree on the collective sequence fail with a CollectiveFault
/// naming both epochs instead of hanging. A worker that leaves run() while a
/// peer still waits on it is reported the same way.
class WorkerGroup {
 public:
  explicit WorkerGroup(std::size_t n);
  WorkerGroup(const WorkerGroup&) = delete;
  WorkerGroup& operator=(const WorkerGroup&) = delete;

  std::size_t size() const noexcept { return n_; }

  /// Runs body(me) on n threads and joins them. If any worker throws, the
  /// group is aborted and the first root-cause exception is rethrown.
  void run(const std::function<void(std::size_t me)>& body);

  /// Bucket j goes to worker j; returns what each worker addressed to me, in
  /// sender order. Element type must be 8 bytes (u64 or double).
  template <class T>
  std::vector<std::vector<T>> all_to_all(std::size_t me, std::vector<std::vector<T>> buckets,
                                         std::string_view channel = "all_to_all");

  /// Ring reduce-scatter + all-gather over ceil(K/n)-sized chunks. The sum
  /// order is fixed by chunk and ring position, so all workers receive
  /// bit-identical results run after run.
  std::vector<double> ring_all_reduce(std::size_t me, std::vector<double> buf,
                                      std::string_view channel = "all_reduce");

  /// Root gets every buffer in worker order; others get nullopt.
  std::optional<std::vector<std::vector<double>>> gather(std::size_t me, std::size_t root,
                                                         std::vector<double> buf,
                                                         std::string_view channel = "gather");

  std::vector<double> broadcast(std::size_t me, std::size_t root, std::vector<double> buf,
                                std::string_view channel = "broadcast");

  void barrier(std::size_t me);

  void abort(const std::string& reason);
  bool aborted() const noexcept { return aborted_.load(); }

  std::uint64_t epoch(std::size_t me) const { return workers_.at(me)->epoch; }
  const CommStats& stats(std::size_t me) const { return workers_.at(me)->stats; }
  CommStats total_stats() const;
  void reset_stats();

 private:
  using Payload = std::variant<std::vector<double>, std::vector<std::uint64_t>>;

  struct Message {
    Primitive kind;
    std::uint64_t epoch;
    std::uint64_t meta;  // collective-specific consistency tag (e.g. total length)
    Payload payload;
  };

  struct Worker {
    std::mutex mu;
    std::condition_variable cv;
    std::vector<std::deque<Message>> inbox;  // indexed by sender
    std::uint64_t epoch = 0;                 // owned by the worker thread
    std::atomic<std::uint64_t> published_epoch{0};
    std::atomic<bool> finished{false};
    CommStats stats;
  };

  std::uint64_t begin(std::size_t me);
  void check_worker(std::size_t me) const;
  void send(std::size_t from, std::size_t to, Message msg);
  Message recv(std::size_t me, std::size_t from, Primitive kind, std::uint64_t epoch);

  std::size_t n_;
  std::vector<std::unique_ptr<Worker>> workers_;
  std::atomic<bool> aborted_{false};
  std::string abort_reason_;
  std::mutex abort_mu_;

  // barrier state
  std::mutex barrier_mu_;
  std::condition_variable barrier_cv_;
  std::size_t barrier_count_ = 0;
  std::uint64_t barrier_generation_ = 0;
  std::uint64_t barrier_epoch_ = 0;
};

extern template std::vector<std::vector<double>> WorkerGroup::all_to_all<double>(
    std::size_t, std::vector<std::vector<double>>, std::string_view);
extern template std::vector<std::vector<std::uint64_t>> WorkerGroup::all_to_all<std::uint64_t>(
    std::size_t, std::vector<std::vector<std::uint64_t>>, std::string_view);

}  // namespace metashard::comm

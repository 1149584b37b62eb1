// Copyright 2026 The metashard Authors
// SPDX-License-Identifier: Apache-2.0

#include "metashard/collectives.hpp"

#include <algorithm>
#include <stdexcept>
#include <thread>

namespace metashard::comm {

const char* to_string(Primitive p) {
  switch (p) {
    case Primitive::kAllToAll: return "all_to_all";
    case Primitive::kAllReduce: return "ring_all_reduce";
    case Primitive::kGather: return "gather";
    case Primitive::kBroadcast: return "broadcast";
    case Primitive::kBarrier: return "barrier";
  }
  return "?";
}

void CommStats::record(Primitive p, std::string_view channel, std::uint64_t sent,
                       std::uint64_t received) {
  const PrimitiveStats delta{1, sent, received};
  by_primitive_[static_cast<std::size_t>(p)] += delta;
  auto it = by_channel_.find(channel);
  if (it == by_channel_.end()) it = by_channel_.emplace(std::string(channel), PrimitiveStats{}).first;
  it->second += delta;
}

PrimitiveStats CommStats::channel(std::string_view name) const {
  auto it = by_channel_.find(name);
  return it == by_channel_.end() ? PrimitiveStats{} : it->second;
}

CommStats& CommStats::operator+=(const CommStats& other) {
  for (std::size_t i = 0; i < kNumPrimitives; ++i) by_primitive_[i] += other.by_primitive_[i];
  for (const auto& [name, s] : other.by_channel_) by_channel_[name] += s;
  return *this;
}

namespace {

nlohmann::json stats_json(const PrimitiveStats& s) {
  return {{"calls", s.calls},
          {"elements_sent", s.elements_sent},
          {"elements_received", s.elements_received},
          {"bytes_sent", s.elements_sent * kBytesPerElement},
          {"bytes_received", s.elements_received * kBytesPerElement}};
}

}  // namespace

nlohmann::json CommStats::to_json() const {
  nlohmann::json out = nlohmann::json::object();
  for (std::size_t i = 0; i < kNumPrimitives; ++i) {
    out[to_string(static_cast<Primitive>(i))] = stats_json(by_primitive_[i]);
  }
  nlohmann::json channels = nlohmann::json::object();
  for (const auto& [name, s] : by_channel_) channels[name] = stats_json(s);
  out["channels"] = std::move(channels);
  return out;
}

WorkerGroup::WorkerGroup(std::size_t n) : n_(n) {
  if (n == 0) throw std::invalid_argument("WorkerGroup needs at least one worker");
  for (std::size_t i = 0; i < n; ++i) {
    auto w = std::make_unique<Worker>();
    w->inbox.resize(n);
    workers_.push_back(std::move(w));
  }
}

void WorkerGroup::run(const std::function<void(std::size_t me)>& body) {
  aborted_ = false;
  abort_reason_.clear();
  barrier_count_ = 0;
  for (auto& w : workers_) {
    std::lock_guard lock(w->mu);
    for (auto& q : w->inbox) q.clear();
    w->finished = false;
    w->epoch = 0;
    w->published_epoch = 0;
  }

  std::vector<std::exception_ptr> errors(n_);
  std::vector<std::thread> threads;
  threads.reserve(n_);
  for (std::size_t me = 0; me < n_; ++me) {
    threads.emplace_back([&, me] {
      try {
        body(me);
      } catch (const std::exception& e) {
        errors[me] = std::current_exception();
        abort("worker " + std::to_string(me) + " failed: " + e.what());
      } catch (...) {
        errors[me] = std::current_exception();
        abort("worker " + std::to_string(me) + " failed");
      }
      workers_[me]->finished = true;
      for (auto& w : workers_) {
        std::lock_guard lock(w->mu);
        w->cv.notify_all();
      }
      {
        std::lock_guard lock(barrier_mu_);
        barrier_cv_.notify_all();
      }
    });
  }
  for (auto& t : threads) t.join();

  std::exception_ptr first;
  for (auto& e : errors) {
    if (!e) continue;
    if (!first) first = e;
    try {
      std::rethrow_exception(e);
    } catch (const GroupAborted&) {
      continue;
    } catch (...) {
      std::rethrow_exception(e);
    }
  }
  if (first) std::rethrow_exception(first);
}

void WorkerGroup::abort(const std::string& reason) {
  {
    std::lock_guard lock(abort_mu_);
    if (!aborted_) abort_reason_ = reason;
    aborted_ = true;
  }
  for (auto& w : workers_) {
    std::lock_guard lock(w->mu);
    w->cv.notify_all();
  }
  std::lock_guard lock(barrier_mu_);
  barrier_cv_.notify_all();
}

CommStats WorkerGroup::total_stats() const {
  CommStats total;
  for (const auto& w : workers_) total += w->stats;
  return total;
}

void WorkerGroup::reset_stats() {
  for (auto& w : workers_) w->stats = CommStats{};
}

void WorkerGroup::check_worker(std::size_t me) const {
  if (me >= n_) {
    throw std::invalid_argument("worker index " + std::to_string(me) + " outside group of " +
                                std::to_string(n_));
  }
}

std::uint64_t WorkerGroup::begin(std::size_t me) {
  check_worker(me);
  if (aborted_) {
    std::lock_guard lock(abort_mu_);
    throw GroupAborted("group aborted: " + abort_reason_);
  }
  auto& w = *workers_[me];
  const std::uint64_t e = ++w.epoch;
  w.published_epoch = e;
  return e;
}

void WorkerGroup::send(std::size_t from, std::size_t to, Message msg) {
  auto& w = *workers_[to];
  {
    std::lock_guard lock(w.mu);
    w.inbox[from].push_back(std::move(msg));
  }
  w.cv.notify_all();
}

WorkerGroup::Message WorkerGroup::recv(std::size_t me, std::size_t from, Primitive kind,
                                       std::uint64_t epoch) {
  auto& w = *workers_[me];
  std::unique_lock lock(w.mu);
  auto& q = w.inbox[from];
  w.cv.wait(lock, [&] { return !q.empty() || aborted_ || workers_[from]->finished; });
  if (q.empty()) {
    if (aborted_) {
      std::lock_guard alock(abort_mu_);
      throw GroupAborted("group aborted: " + abort_reason_);
    }
    throw CollectiveFault("deadlock: worker " + std::to_string(me) + " waits in " +
                          to_string(kind) + " at epoch " + std::to_string(epoch) +
                          " but worker " + std::to_string(from) + " exited at epoch " +
                          std::to_string(workers_[from]->published_epoch.load()));
  }
  Message msg = std::move(q.front());
  q.pop_front();
  if (msg.kind != kind || msg.epoch != epoch) {
    throw CollectiveFault("epoch mismatch: worker " + std::to_string(me) + " in " +
                          to_string(kind) + " at epoch " + std::to_string(epoch) +
                          " received " + to_string(msg.kind) + " epoch " +
                          std::to_string(msg.epoch) + " from worker " + std::to_string(from));
  }
  return msg;
}

template <class T>
std::vector<std::vector<T>> WorkerGroup::all_to_all(std::size_t me,
                                                    std::vector<std::vector<T>> buckets,
                                                    std::string_view channel) {
  static_assert(sizeof(T) == kBytesPerElement);
  const std::uint64_t e = begin(me);
  if (buckets.size() != n_) {
    throw std::invalid_argument("all_to_all: " + std::to_string(buckets.size()) +
                                " buckets for a group of " + std::to_string(n_));
  }
  std::uint64_t sent = 0;
  std::uint64_t received = 0;
  for (std::size_t j = 0; j < n_; ++j) {
    if (j == me) continue;
    sent += buckets[j].size();
    send(me, j, Message{Primitive::kAllToAll, e, 0, Payload(std::move(buckets[j]))});
  }
  std::vector<std::vector<T>> out(n_);
  out[me] = std::move(buckets[me]);
  for (std::size_t j = 0; j < n_; ++j) {
    if (j == me) continue;
    Message msg = recv(me, j, Primitive::kAllToAll, e);
    auto* payload = std::get_if<std::vector<T>>(&msg.payload);
    if (payload == nullptr) {
      throw CollectiveFault("all_to_all: element type mismatch from worker " + std::to_string(j));
    }
    received += payload->size();
    out[j] = std::move(*payload);
  }
  workers_[me]->stats.record(Primitive::kAllToAll, channel, sent, received);
  return out;
}

template std::vector<std::vector<double>> WorkerGroup::all_to_all<double>(
    std::size_t, std::vector<std::vector<double>>, std::string_view);
template std::vector<std::vector<std::uint64_t>> WorkerGroup::all_to_all<std::uint64_t>(
    std::size_t, std::vector<std::vector<std::uint64_t>>, std::string_view);

std::vector<double> WorkerGroup::ring_all_reduce(std::size_t me, std::vector<double> buf,
                                                 std::string_view channel) {
  const std::uint64_t e = begin(me);
  auto& stats = workers_[me]->stats;
  if (n_ == 1) {
    stats.record(Primitive::kAllReduce, channel, 0, 0);
    return buf;
  }
  const std::size_t total = buf.size();
  const std::size_t chunk = (total + n_ - 1) / n_;
  auto lo = [&](std::size_t c) { return std::min(c * chunk, total); };
  auto hi = [&](std::size_t c) { return std::min((c + 1) * chunk, total); };
  const std::size_t right = (me + 1) % n_;
  const std::size_t left = (me + n_ - 1) % n_;

  std::uint64_t sent = 0;
  std::uint64_t received = 0;
  auto step = [&](std::size_t send_chunk, std::size_t recv_chunk, bool reduce) {
    std::vector<double> out(buf.begin() + static_cast<std::ptrdiff_t>(lo(send_chunk)),
                            buf.begin() + static_cast<std::ptrdiff_t>(hi(send_chunk)));
    sent += out.size();
    send(me, right, Message{Primitive::kAllReduce, e, total, Payload(std::move(out))});
    Message msg = recv(me, left, Primitive::kAllReduce, e);
    if (msg.meta != total) {
      throw std::invalid_argument("ring_all_reduce: buffer length mismatch, worker " +
                                  std::to_string(me) + " has " + std::to_string(total) +
                                  ", worker " + std::to_string(left) + " has " +
                                  std::to_string(msg.meta));
    }
    const auto& in = std::get<std::vector<double>>(msg.payload);
    received += in.size();
    const std::size_t base = lo(recv_chunk);
    for (std::size_t i = 0; i < in.size(); ++i) {
      buf[base + i] = reduce ? in[i] + buf[base + i] : in[i];
    }
  };
  // Reduce-scatter: after n-1 steps worker me holds the full sum of chunk me+1.
  for (std::size_t s = 0; s + 1 < n_; ++s) {
    step((me + n_ - s) % n_, (me + 2 * n_ - s - 1) % n_, true);
  }
  // All-gather the reduced chunks around the ring.
  for (std::size_t s = 0; s + 1 < n_; ++s) {
    step((me + 1 + n_ - s) % n_, (me + n_ - s) % n_, false);
  }
  stats.record(Primitive::kAllReduce, channel, sent, received);
  return buf;
}

std::optional<std::vector<std::vector<double>>> WorkerGroup::gather(std::size_t me,
                                                                    std::size_t root,
                                                                    std::vector<double> buf,
                                                                    std::string_view channel) {
  const std::uint64_t e = begin(me);
  if (root >= n_) throw std::invalid_argument("gather: root " + std::to_string(root) + " out of range");
  auto& stats = workers_[me]->stats;
  if (me != root) {
    const std::uint64_t k = buf.size();
    send(me, root, Message{Primitive::kGather, e, k, Payload(std::move(buf))});
    stats.record(Primitive::kGather, channel, k, 0);
    return std::nullopt;
  }
  std::vector<std::vector<double>> all(n_);
  std::uint64_t received = 0;
  for (std::size_t j = 0; j < n_; ++j) {
    if (j == me) continue;
    Message msg = recv(me, j, Primitive::kGather, e);
    if (msg.meta != buf.size()) {
      throw std::invalid_argument("gather: worker " + std::to_string(j) + " sent " +
                                  std::to_string(msg.meta) + " elements, root has " +
                                  std::to_string(buf.size()));
    }
    all[j] = std::get<std::vector<double>>(std::move(msg.payload));
    received += all[j].size();
  }
  all[me] = std::move(buf);
  stats.record(Primitive::kGather, channel, 0, received);
  return all;
}

std::vector<double> WorkerGroup::broadcast(std::size_t me, std::size_t root,
                                           std::vector<double> buf, std::string_view channel) {
  const std::uint64_t e = begin(me);
  if (root >= n_) throw std::invalid_argument("broadcast: root " + std::to_string(root) + " out of range");
  auto& stats = workers_[me]->stats;
  if (me == root) {
    std::uint64_t sent = 0;
    for (std::size_t j = 0; j < n_; ++j) {
      if (j == me) continue;
      sent += buf.size();
      send(me, j, Message{Primitive::kBroadcast, e, buf.size(), Payload(buf)});
    }
    stats.record(Primitive::kBroadcast, channel, sent, 0);
    return buf;
  }
  Message msg = recv(me, root, Primitive::kBroadcast, e);
  auto out = std::get<std::vector<double>>(std::move(msg.payload));
  stats.record(Primitive::kBroadcast, channel, 0, out.size());
  return out;
}

void WorkerGroup::barrier(std::size_t me) {
  const std::uint64_t e = begin(me);
  std::unique_lock lock(barrier_mu_);
  if (barrier_count_ == 0) {
    barrier_epoch_ = e;
  } else if (barrier_epoch_ != e) {
    const std::uint64_t expected = barrier_epoch_;
    lock.unlock();
    throw CollectiveFault("epoch mismatch at barrier: worker " + std::to_string(me) +
                          " at epoch " + std::to_string(e) + ", others at epoch " +
                          std::to_string(expected));
  }
  workers_[me]->stats.record(Primitive::kBarrier, "barrier", 0, 0);
  const std::uint64_t gen = barrier_generation_;
  if (++barrier_count_ == n_) {
    barrier_count_ = 0;
    ++barrier_generation_;
    barrier_cv_.notify_all();
    return;
  }
  auto someone_left = [&] {
    return std::any_of(workers_.begin(), workers_.end(), [](const auto& w) { return w->finished.load(); });
  };
  barrier_cv_.wait(lock, [&] { return barrier_generation_ != gen || aborted_ || someone_left(); });
  if (barrier_generation_ != gen) return;
  if (aborted_) {
    std::lock_guard alock(abort_mu_);
    throw GroupAborted("group aborted: " + abort_reason_);
  }
  throw CollectiveFault("deadlock: worker " + std::to_string(me) + " waits at barrier epoch " +
                        std::to_string(e) + " but a peer already exited");
}

}  // namespace metashard::comm

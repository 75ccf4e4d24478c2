/*
 * Copyright 2026 The SpeedyFeed Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Asynchronous dynamic batching. Producer threads turn user logs into
// training instances, route each to a length bucket, and emit a mini-batch
// whenever a bucket's padded-token total reaches the budget.

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "speedyfeed/batch.hpp"
#include "speedyfeed/corpus.hpp"
#include "speedyfeed/errors.hpp"

namespace speedyfeed::pipeline {

// Blocking FIFO with a fixed capacity. Close() acts as the end-of-stream
// sentinel: Pop() drains remaining items and then returns nullopt. Poison()
// makes every later Push/Pop rethrow the stored error.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ConfigError("queue capacity must be positive");
  }

  // Returns false when the queue was closed or poisoned before the item fit.
  bool Push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_ || error_; });
    if (closed_ || error_) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> Pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_ || error_; });
    if (error_) std::rethrow_exception(error_);
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void Close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  void Poison(std::exception_ptr error) {
    std::lock_guard lock(mu_);
    if (!error_) error_ = error;
    not_empty_.notify_all();
    not_full_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return items_.size();
  }
  std::size_t capacity() const { return capacity_; }

 private:
  const std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable not_empty_, not_full_;
  std::deque<T> items_;
  bool closed_ = false;
  std::exception_ptr error_;
};

struct LoaderConfig {
  // Bucket b covers instance max-lengths [boundaries[b], boundaries[b+1]).
  std::vector<std::size_t> boundaries = {0, 64, 97};
  std::size_t token_budget = 39800;
  std::size_t producers = 2;
  std::size_t queue_capacity = 8;
  std::uint64_t seed = 11;
  std::size_t max_history = 50;
  std::size_t negative_ratio = 1;

  std::size_t num_buckets() const { return boundaries.size() - 1; }
  // `max_length` is the longest possible refined news (3 * top_k).
  void Validate(std::size_t max_length) const;
};

std::size_t Route(std::size_t max_length, std::span<const std::size_t> boundaries);

// Instances resident in one length bucket, padded to their longest news.
class Bucket {
 public:
  Bucket(std::size_t lo, std::size_t hi) : lo_(lo), hi_(hi) {}

  std::size_t lo() const { return lo_; }
  std::size_t hi() const { return hi_; }
  bool empty() const { return instances_.empty(); }
  std::size_t size() const { return instances_.size(); }
  // Pre-merge tensor size with every slot padded to the current max length.
  std::size_t padded_total() const;

  void Add(model::TrainInstance instance, std::size_t max_length);
  // Empties the bucket into a batch; accounting uses `store`.
  MiniBatch Drain(std::size_t bucket_index, const NewsStore& store);

 private:
  std::size_t lo_, hi_;
  std::vector<model::TrainInstance> instances_;
  std::size_t max_length_ = 0;
  std::size_t max_history_ = 0;
  std::size_t max_negatives_ = 0;
};

// Size of one instance's own pre-merge tensors.
std::size_t InstanceCost(const model::TrainInstance& instance, std::size_t max_length);

// Drains the bucket when its padded total reaches the budget.
std::optional<MiniBatch> TryEmit(Bucket& bucket, std::size_t bucket_index,
                                 std::size_t token_budget, const NewsStore& store);

// Sum valid / sum (valid + padded); 1 for no tokens at all.
double DataEfficiency(std::span<const MiniBatch> batches);
double PostMergeDataEfficiency(std::span<const MiniBatch> batches, const NewsStore& store);

// Reads several log files on parallel threads; output follows file order.
std::vector<data::UserLog> LoadLogFiles(std::span<const std::string> paths);

// Same permutation for every producer count.
std::vector<std::size_t> EpochOrder(std::size_t num_logs, std::uint64_t seed,
                                    std::uint64_t epoch);

// Instance of the user at `log_index` with negatives drawn from a stream
// that depends only on (seed, epoch, log_index). Users with fewer than two
// clicks have no instance.
std::optional<model::TrainInstance> MakeInstance(const data::UserLog& log, std::size_t log_index,
                                                 const NewsStore& store,
                                                 const LoaderConfig& config,
                                                 std::uint64_t epoch);

struct LoaderStats {
  std::size_t instances = 0;
  std::size_t skipped_users = 0;
  std::size_t batches = 0;
  std::size_t oversize_batches = 0;
};

// One epoch of batches. Producer threads start on construction; Next()
// returns nullopt after the last batch and rethrows producer failures.
class BatchLoader {
 public:
  BatchLoader(std::span<const data::UserLog> logs, const NewsStore& store,
              LoaderConfig config, std::uint64_t epoch);
  ~BatchLoader();
  BatchLoader(const BatchLoader&) = delete;
  BatchLoader& operator=(const BatchLoader&) = delete;

  std::optional<MiniBatch> Next();
  // Valid once Next() has returned nullopt.
  LoaderStats stats() const;

 private:
  void Produce(std::size_t worker);
  // False once the consumer is gone or the queue is poisoned.
  bool Emit(MiniBatch batch);
  void Shutdown();

  std::span<const data::UserLog> logs_;
  const NewsStore& store_;
  LoaderConfig config_;
  std::uint64_t epoch_;
  std::vector<std::size_t> order_;
  std::vector<Bucket> buckets_;
  std::vector<std::unique_ptr<std::mutex>> bucket_mu_;
  BoundedQueue<MiniBatch> queue_;
  mutable std::mutex stats_mu_;
  LoaderStats stats_;
  std::size_t live_producers_;
  std::vector<std::thread> workers_;
};

// Groups ready instances into length-bucketed batches exactly as a single
// producer would, in the given order, flushing partial buckets at the end.
std::vector<MiniBatch> BatchInstances(std::span<const model::TrainInstance> instances,
                                      const NewsStore& store,
                                      std::span<const std::size_t> boundaries,
                                      std::size_t token_budget);

// Synchronous variant used by benchmarks and tests: every batch of one epoch
// in emission order, single producer.
std::vector<MiniBatch> CollectEpoch(std::span<const data::UserLog> logs, const NewsStore& store,
                                    const LoaderConfig& config, std::uint64_t epoch);

}  // namespace speedyfeed::pipeline

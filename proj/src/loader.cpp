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

#include "speedyfeed/loader.hpp"

#include <algorithm>
#include <numeric>

#include <spdlog/spdlog.h>

#include "speedyfeed/rng.hpp"

namespace speedyfeed::pipeline {

void LoaderConfig::Validate(std::size_t max_length) const {
  if (boundaries.size() < 2) throw ConfigError("loader needs at least one bucket");
  if (boundaries.front() != 0) throw ConfigError("first bucket boundary must be 0");
  for (std::size_t i = 1; i < boundaries.size(); ++i) {
    if (boundaries[i] <= boundaries[i - 1]) {
      throw ConfigError("bucket boundaries must be strictly increasing");
    }
  }
  if (boundaries.back() <= max_length) {
    throw ConfigError("bucket boundaries end at " + std::to_string(boundaries.back()) +
                      " but news can have " + std::to_string(max_length) + " tokens");
  }
  if (token_budget == 0) throw ConfigError("token_budget must be positive");
  if (producers == 0) throw ConfigError("producers must be positive");
  if (queue_capacity == 0) throw ConfigError("queue_capacity must be positive");
  if (max_history < 2) throw ConfigError("max_history must be at least 2");
  if (negative_ratio == 0) throw ConfigError("negative_ratio must be positive");
}

std::size_t Route(std::size_t max_length, std::span<const std::size_t> boundaries) {
  const auto it = std::upper_bound(boundaries.begin(), boundaries.end(), max_length);
  if (it == boundaries.begin() || it == boundaries.end()) {
    throw ConfigError("no bucket covers length " + std::to_string(max_length));
  }
  return static_cast<std::size_t>(it - boundaries.begin()) - 1;
}

namespace {

std::size_t NegativeCount(const model::TrainInstance& instance) {
  std::size_t n = 0;
  for (const auto& negs : instance.negatives) n += negs.size();
  return n;
}

}  // namespace

std::size_t InstanceCost(const model::TrainInstance& instance, std::size_t max_length) {
  return (instance.history.size() + NegativeCount(instance)) * max_length;
}

std::size_t Bucket::padded_total() const {
  return instances_.size() * (max_history_ + max_negatives_) * max_length_;
}

void Bucket::Add(model::TrainInstance instance, std::size_t max_length) {
  if (max_length < lo_ || max_length >= hi_) {
    throw InternalError("instance of length " + std::to_string(max_length) +
                        " routed to the wrong bucket");
  }
  max_length_ = std::max(max_length_, max_length);
  max_history_ = std::max(max_history_, instance.history.size());
  max_negatives_ = std::max(max_negatives_, NegativeCount(instance));
  instances_.push_back(std::move(instance));
}

MiniBatch Bucket::Drain(std::size_t bucket_index, const NewsStore& store) {
  MiniBatch batch;
  batch.bucket = bucket_index;
  batch.padded_length = max_length_;
  batch.instances = std::move(instances_);
  const TokenCounts counts = PreMergeTokens(batch.instances, store, batch.padded_length);
  batch.valid_tokens = counts.valid;
  batch.padded_tokens = counts.padded;
  instances_.clear();
  max_length_ = max_history_ = max_negatives_ = 0;
  return batch;
}

std::optional<MiniBatch> TryEmit(Bucket& bucket, std::size_t bucket_index,
                                 std::size_t token_budget, const NewsStore& store) {
  if (bucket.empty() || bucket.padded_total() < token_budget) return std::nullopt;
  return bucket.Drain(bucket_index, store);
}

double DataEfficiency(std::span<const MiniBatch> batches) {
  double valid = 0.0, total = 0.0;
  for (const auto& b : batches) {
    valid += static_cast<double>(b.valid_tokens);
    total += static_cast<double>(b.valid_tokens + b.padded_tokens);
  }
  return total > 0.0 ? valid / total : 1.0;
}

double PostMergeDataEfficiency(std::span<const MiniBatch> batches, const NewsStore& store) {
  double valid = 0.0, total = 0.0;
  for (const auto& b : batches) {
    const TokenCounts c = PostMergeTokens(b.instances, store, b.padded_length);
    valid += static_cast<double>(c.valid);
    total += static_cast<double>(c.total());
  }
  return total > 0.0 ? valid / total : 1.0;
}

std::vector<data::UserLog> LoadLogFiles(std::span<const std::string> paths) {
  std::vector<std::vector<data::UserLog>> parts(paths.size());
  std::vector<std::exception_ptr> errors(paths.size());
  {
    std::vector<std::jthread> readers;
    for (std::size_t i = 0; i < paths.size(); ++i) {
      readers.emplace_back([&, i] {
        try {
          parts[i] = data::ReadLogFile(paths[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<data::UserLog> logs;
  for (auto& p : parts) {
    logs.insert(logs.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return logs;
}

std::vector<std::size_t> EpochOrder(std::size_t num_logs, std::uint64_t seed,
                                    std::uint64_t epoch) {
  std::vector<std::size_t> order(num_logs);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = Rng::Derive(seed, epoch);
  rng.Shuffle(order);
  return order;
}

std::optional<model::TrainInstance> MakeInstance(const data::UserLog& log, std::size_t log_index,
                                                 const NewsStore& store,
                                                 const LoaderConfig& config,
                                                 std::uint64_t epoch) {
  model::TrainInstance inst = model::BuildInstance(log, config.max_history);
  if (inst.history.size() < 2) return std::nullopt;
  for (const auto& id : inst.history) {
    if (!store.Contains(id)) throw DataError("user " + log.user_id + " clicked unknown news " + id);
  }
  Rng rng = Rng::Derive(config.seed ^ (0x5bd1e995ULL * (epoch + 1)), log_index);
  model::AssignNegatives(inst, store.ids(), config.negative_ratio, rng);
  return inst;
}

namespace {

// Routes one instance into its bucket and returns the batch it completes.
// Instances above the budget on their own become singleton batches.
std::optional<MiniBatch> Place(model::TrainInstance inst, std::vector<Bucket>& buckets,
                               std::vector<std::unique_ptr<std::mutex>>& mutexes,
                               std::span<const std::size_t> boundaries,
                               std::size_t token_budget, const NewsStore& store) {
  const std::size_t len = InstanceMaxLength(inst, store);
  const std::size_t b = Route(len, boundaries);
  const std::size_t cost = InstanceCost(inst, len);
  if (cost > token_budget) {
    spdlog::warn("user {} needs {} tokens, above the budget of {}; emitted alone", inst.user_id,
                 cost, token_budget);
    Bucket single(buckets[b].lo(), buckets[b].hi());
    single.Add(std::move(inst), len);
    MiniBatch batch = single.Drain(b, store);
    batch.oversize = true;
    return batch;
  }
  std::lock_guard lock(*mutexes[b]);
  buckets[b].Add(std::move(inst), len);
  return TryEmit(buckets[b], b, token_budget, store);
}

std::vector<Bucket> MakeBuckets(std::span<const std::size_t> boundaries,
                                std::vector<std::unique_ptr<std::mutex>>& mutexes) {
  if (boundaries.size() < 2) throw ConfigError("loader needs at least one bucket");
  std::vector<Bucket> buckets;
  for (std::size_t b = 0; b + 1 < boundaries.size(); ++b) {
    buckets.emplace_back(boundaries[b], boundaries[b + 1]);
    mutexes.push_back(std::make_unique<std::mutex>());
  }
  return buckets;
}

}  // namespace

std::vector<MiniBatch> BatchInstances(std::span<const model::TrainInstance> instances,
                                      const NewsStore& store,
                                      std::span<const std::size_t> boundaries,
                                      std::size_t token_budget) {
  std::vector<std::unique_ptr<std::mutex>> mutexes;
  std::vector<Bucket> buckets = MakeBuckets(boundaries, mutexes);
  std::vector<MiniBatch> out;
  for (const auto& inst : instances) {
    if (auto batch = Place(inst, buckets, mutexes, boundaries, token_budget, store)) {
      out.push_back(std::move(*batch));
    }
  }
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    if (!buckets[b].empty()) out.push_back(buckets[b].Drain(b, store));
  }
  return out;
}

BatchLoader::BatchLoader(std::span<const data::UserLog> logs, const NewsStore& store,
                         LoaderConfig config, std::uint64_t epoch)
    : logs_(logs),
      store_(store),
      config_(std::move(config)),
      epoch_(epoch),
      order_(EpochOrder(logs.size(), config_.seed, epoch)),
      queue_(config_.queue_capacity),
      live_producers_(config_.producers) {
  buckets_ = MakeBuckets(config_.boundaries, bucket_mu_);
  for (std::size_t w = 0; w < config_.producers; ++w) {
    workers_.emplace_back([this, w] { Produce(w); });
  }
}

BatchLoader::~BatchLoader() { Shutdown(); }

void BatchLoader::Shutdown() {
  queue_.Close();
  for (auto& t : workers_) {
    if (t.joinable()) t.join();
  }
}

bool BatchLoader::Emit(MiniBatch batch) {
  {
    std::lock_guard lock(stats_mu_);
    ++stats_.batches;
    if (batch.oversize) ++stats_.oversize_batches;
  }
  return queue_.Push(std::move(batch));
}

void BatchLoader::Produce(std::size_t worker) {
  try {
    for (std::size_t k = worker; k < order_.size(); k += config_.producers) {
      const std::size_t index = order_[k];
      auto inst = MakeInstance(logs_[index], index, store_, config_, epoch_);
      {
        std::lock_guard lock(stats_mu_);
        ++(inst ? stats_.instances : stats_.skipped_users);
      }
      if (!inst) continue;
      auto ready = Place(std::move(*inst), buckets_, bucket_mu_, config_.boundaries,
                         config_.token_budget, store_);
      if (ready && !Emit(std::move(*ready))) return;
    }
    bool last;
    {
      std::lock_guard lock(stats_mu_);
      last = --live_producers_ == 0;
    }
    if (last) {
      // Epoch-end flush of partially filled buckets.
      for (std::size_t b = 0; b < buckets_.size(); ++b) {
        std::optional<MiniBatch> rest;
        {
          std::lock_guard lock(*bucket_mu_[b]);
          if (!buckets_[b].empty()) rest = buckets_[b].Drain(b, store_);
        }
        if (rest && !Emit(std::move(*rest))) return;
      }
      queue_.Close();
    }
  } catch (...) {
    queue_.Poison(std::current_exception());
  }
}

std::optional<MiniBatch> BatchLoader::Next() { return queue_.Pop(); }

LoaderStats BatchLoader::stats() const {
  std::lock_guard lock(stats_mu_);
  return stats_;
}

std::vector<MiniBatch> CollectEpoch(std::span<const data::UserLog> logs, const NewsStore& store,
                                    const LoaderConfig& config, std::uint64_t epoch) {
  LoaderConfig single = config;
  single.producers = 1;
  BatchLoader loader(logs, store, single, epoch);
  std::vector<MiniBatch> out;
  while (auto b = loader.Next()) out.push_back(std::move(*b));
  return out;
}

}  // namespace speedyfeed::pipeline

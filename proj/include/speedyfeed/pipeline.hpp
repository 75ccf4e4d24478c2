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

// Light-weighted encoding pipeline: all news of a mini-batch are gathered
// into one deduplicated set, served from the embedding cache when fresh and
// the lookup draw allows it, otherwise encoded once, then dispatched back to
// their slots for the autoregressive loss.

#pragma once

#include <cstdint>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "speedyfeed/batch.hpp"
#include "speedyfeed/encoder.hpp"
#include "speedyfeed/user_model.hpp"

namespace speedyfeed::pipeline {

// p_t = 1 - exp(-beta t).
double LookupRate(std::uint64_t step, double beta);

struct CacheConfig {
  double beta = 2e-3;
  // Maximum servable age in steps; 0 disables the cache.
  std::uint64_t gamma = 20;
  // Draw the lookup decision per news instead of once per step.
  bool per_news = false;
  std::uint64_t seed = 7;

  void Validate() const;
  bool enabled() const { return gamma > 0; }
};

// In-process embedding cache. Concurrent readers, exclusive writers.
class EmbeddingCache {
 public:
  struct Entry {
    std::vector<double> vector;
    std::uint64_t step = 0;
  };

  // Entry of `id` when step - produced_at <= gamma.
  std::optional<Entry> LookupFresh(const std::string& id, std::uint64_t step,
                                   std::uint64_t gamma) const;
  void Write(const std::string& id, std::span<const double> vector, std::uint64_t step);
  // Drops entries older than gamma at `step`; returns how many were dropped.
  std::size_t Sweep(std::uint64_t step, std::uint64_t gamma);
  std::size_t size() const;
  void Clear();

 private:
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, Entry> entries_;
};

struct SlotRef {
  std::size_t instance = 0;
  std::size_t slot = 0;
};

// Distinct valid news ids of a batch in first-occurrence order, with every
// slot each id occupies.
struct MergedSet {
  std::vector<std::string> ids;
  std::vector<std::vector<SlotRef>> refs;
  std::size_t num_slots = 0;
};

// `slots[i]` lists instance i's news ids; kPadNewsId entries are skipped.
MergedSet GatherMerge(std::span<const std::vector<std::string>> slots);
MergedSet GatherMerge(const MiniBatch& batch);

struct CachePartition {
  bool lookup_attempted = false;
  // Indices into MergedSet::ids.
  std::vector<std::size_t> hits;
  std::vector<std::size_t> misses;
  std::vector<std::vector<double>> hit_vectors;
};

// Decides which merged ids are served from the cache at `step`. Throws
// InternalError if a served entry is older than gamma.
CachePartition PartitionByCache(const MergedSet& merged, const EmbeddingCache& cache,
                                std::uint64_t step, const CacheConfig& config, Rng& rng);

// Per-instance [slots, d] embedding blocks: every slot of merged id m gets
// row row_of_merged[m] of `table`; slots without a merged id (padding) get
// the zero dummy vector. Throws InternalError if a merged id has no row.
std::vector<ad::Tensor> Dispatch(const MergedSet& merged, const ad::Tensor& table,
                                 std::span<const int> row_of_merged,
                                 std::span<const std::size_t> slots_per_instance);

struct StepStats {
  std::uint64_t step = 0;
  std::size_t instances = 0;
  std::size_t merged = 0;
  std::size_t hits = 0;
  std::size_t invocations = 0;
  bool lookup_attempted = false;
  double loss = 0.0;
  std::size_t valid_tokens = 0;
  std::size_t padded_tokens = 0;
  std::size_t post_merge_valid_tokens = 0;
  std::size_t post_merge_padded_tokens = 0;
  std::uint64_t attention_multiplies = 0;
};

// One JSON object per line: {step, merged, hits, invocations, loss,
// valid_tokens, padded_tokens, ...}.
std::string StepStatsJson(const StepStats& stats);

struct PipelineConfig {
  CacheConfig cache;
  std::size_t negative_ratio = 1;
};

class Pipeline {
 public:
  Pipeline(const model::BusLM& encoder, const model::UserModel& user_model,
           const NewsStore& store, PipelineConfig config);

  // Forward + backward of one batch at `step`. Gradients accumulate into the
  // parameters; the caller owns the optimizer step. Cached embeddings enter
  // the graph as constants.
  StepStats TrainingStep(const MiniBatch& batch, std::uint64_t step,
                         Rng* dropout_rng = nullptr);

  // Loss of a batch with the cache bypassed and no gradient; used for
  // validation.
  double EvaluateLoss(const MiniBatch& batch);

  EmbeddingCache& cache() { return cache_; }
  const PipelineConfig& config() const { return config_; }
  std::uint64_t total_invocations() const { return total_invocations_; }
  std::uint64_t total_hits() const { return total_hits_; }

 private:
  ad::Tensor BatchLoss(const MiniBatch& batch, const MergedSet& merged,
                       const ad::Tensor& table, const std::vector<int>& row_of_merged) const;

  const model::BusLM& encoder_;
  const model::UserModel& user_model_;
  const NewsStore& store_;
  PipelineConfig config_;
  EmbeddingCache cache_;
  Rng cache_rng_;
  std::uint64_t total_invocations_ = 0;
  std::uint64_t total_hits_ = 0;
};

struct NaiveResult {
  double loss = 0.0;
  std::size_t invocations = 0;
  std::uint64_t attention_multiplies = 0;
};

// Baseline per-click workflow for target history[t]: encodes the t history
// news, the positive and its negatives from scratch with the reference
// encoder, computes the single loss term, and backpropagates it.
NaiveResult NaiveTrainingStep(const model::TrainInstance& instance, std::size_t t,
                              const model::BusLM& encoder, const model::UserModel& user_model,
                              const NewsStore& store);

// Autoregressive loss of one user without centralized encoding: every slot
// (duplicates included) is encoded, then the joint loss is backpropagated.
NaiveResult AutoregressiveStep(const model::TrainInstance& instance,
                               const model::BusLM& encoder, const model::UserModel& user_model,
                               const NewsStore& store, std::size_t ratio);

// Encoder invocations of the naive workflow over a user with T clicks and R
// negatives per target: sum_{t=1}^{T-1} (t + 1 + R).
std::uint64_t NaiveInvocations(std::size_t clicks, std::size_t ratio);
// Upper bound for the autoregressive pipeline: T + (T-1) R.
std::uint64_t PipelineInvocationBound(std::size_t clicks, std::size_t ratio);

}  // namespace speedyfeed::pipeline

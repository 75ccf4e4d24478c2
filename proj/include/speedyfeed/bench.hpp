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

// Efficiency benchmark. The same training instances run through five
// workflows, each adding one technique to the previous:
//   (a) naive: every click is its own instance, every news encoded per use
//   (b) autoregressive: one instance per user, every slot encoded
//   (c) centralized: dynamic batches, deduplicated news set per batch
//   (d) cache: (c) plus the embedding cache
//   (e) segmentation: (d) with a K=3 bus encoder instead of K=1
// Parameters stay fixed, so (a)-(d) compute identical losses when the cache
// serves exact copies. Counts are exact; wall time is informational.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "speedyfeed/encoder.hpp"
#include "speedyfeed/loader.hpp"
#include "speedyfeed/pipeline.hpp"

namespace speedyfeed::bench {

struct BenchConfig {
  // Encoder of (e); (a)-(d) use the same settings with one segment holding
  // all three fields.
  model::EncoderConfig encoder;
  std::size_t negative_ratio = 1;
  std::vector<std::size_t> boundaries = {0, 64, 97};
  std::size_t token_budget = 39800;
  pipeline::CacheConfig cache;
  // Passes of (c)-(e) over the data; later passes let the lookup rate ramp.
  std::size_t epochs = 1;
  // Compute the per-click losses of (a); off leaves (a) as pure counting.
  bool run_naive = true;
  std::uint64_t seed = 5;
};

struct ConfigResult {
  std::string name;
  std::string description;
  // Per epoch.
  double invocations = 0.0;
  double cache_hits = 0.0;
  double attention_multiplies = 0.0;
  double steps = 0.0;
  double data_efficiency = 0.0;
  // Summed loss of the first epoch; NaN when not computed.
  double loss = 0.0;
  double wall_seconds = 0.0;
  // (a) / this config.
  double invocation_ratio = 0.0;
  double attention_ratio = 0.0;
};

struct BenchReport {
  std::size_t users = 0;
  std::size_t clicks = 0;
  std::vector<ConfigResult> configs;
};

// Users with exactly `clicks` uniformly drawn news each, negatives assigned.
std::vector<model::TrainInstance> UniformInstances(const pipeline::NewsStore& store,
                                                   std::size_t users, std::size_t clicks,
                                                   std::size_t ratio, std::uint64_t seed);

BenchReport RunBench(const std::vector<model::TrainInstance>& instances,
                     const pipeline::NewsStore& store, const BenchConfig& config);

std::string BenchReportJson(const BenchReport& report);
std::string BenchReportCsv(const BenchReport& report);
// Fixed-width table for terminals.
std::string BenchReportTable(const BenchReport& report);

}  // namespace speedyfeed::bench

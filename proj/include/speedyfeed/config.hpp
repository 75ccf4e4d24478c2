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

// Run configuration shared by every subcommand. Stored as JSON; unknown
// keys are rejected. Every random stream is derived from the top-level seed.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "speedyfeed/corpus.hpp"
#include "speedyfeed/encoder.hpp"
#include "speedyfeed/eval.hpp"
#include "speedyfeed/loader.hpp"
#include "speedyfeed/pipeline.hpp"
#include "speedyfeed/refine.hpp"

namespace speedyfeed {

struct PathConfig {
  std::string data_dir = "data/generated";
  std::string out_dir = "runs/default";
  // Empty: reports go to out_dir.
  std::string report_dir;
  // Empty: the built-in stopword list.
  std::string stopwords;
};

struct OptimConfig {
  double encoder_lr = 1e-3;
  double user_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t epochs = 1;
  // Steps between checkpoints; 0 saves only at the end.
  std::size_t checkpoint_every = 200;
  // Stop after this many steps in total; 0 means no limit.
  std::size_t max_steps = 0;
};

struct BenchRunConfig {
  std::size_t users = 50;
  // Uniform history length; 0 uses the training logs instead.
  std::size_t clicks = 35;
  std::size_t epochs = 1;
  bool run_naive = true;
};

struct RunConfig {
  std::uint64_t seed = 1;
  PathConfig paths;
  data::CorpusOptions corpus;
  data::LogOptions logs;
  double test_fraction = 0.2;
  text::RefineConfig refine;
  model::EncoderConfig encoder;
  pipeline::CacheConfig cache;
  pipeline::LoaderConfig loader;
  OptimConfig optim;
  TrainConfig train;
  eval::EvalConfig eval;
  BenchRunConfig bench;

  // Derives the per-module seeds from `seed`, loads the stopword file and
  // ties dependent fields (encoder lengths to refine.top_k). Call after
  // every override.
  void Resolve();
  // Full check before any work; throws ConfigError. encoder.vocab_size is
  // filled from the vocabulary later and not checked here.
  void Validate() const;
};

// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig ParseRunConfig(const std::string& json_text);
RunConfig LoadRunConfig(const std::string& path);
std::string RunConfigJson(const RunConfig& config);
void SaveRunConfig(const std::string& path, const RunConfig& config);

}  // namespace speedyfeed

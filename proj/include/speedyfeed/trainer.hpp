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

// End-to-end plumbing: dataset files, model construction, the training loop
// with checkpoint/resume, and the metrics stream.

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "speedyfeed/config.hpp"
#include "speedyfeed/optim.hpp"

namespace speedyfeed {

// File names inside the data directory.
inline constexpr const char* kNewsFile = "news.tsv";
inline constexpr const char* kTrainLogFile = "train_logs.tsv";
inline constexpr const char* kTestLogFile = "test_logs.tsv";
inline constexpr const char* kVocabFile = "vocab.tsv";

struct Dataset {
  std::vector<data::NewsArticle> corpus;
  text::Vocabulary vocab;
  pipeline::NewsStore store;
  std::vector<data::UserLog> train;
  std::vector<data::UserLog> test;
};

struct GenerateSummary {
  std::vector<double> alphas;
  std::vector<double> shares;
  std::size_t clicks = 0;
};

// Writes corpus, vocabulary and the time-split logs into paths.data_dir.
GenerateSummary GenerateDataset(const RunConfig& config);
// Builds everything in memory without touching the disk.
Dataset MakeDataset(const RunConfig& config);
// Reads the files written by GenerateDataset and refines the corpus.
Dataset LoadDataset(const RunConfig& config);

struct Model {
  ad::ParameterSet params;
  std::unique_ptr<model::BusLM> encoder;
  std::unique_ptr<model::UserModel> user;
};

// encoder.vocab_size is taken from `vocab_size`.
std::unique_ptr<Model> BuildModel(const RunConfig& config, std::size_t vocab_size);

struct TrainProgress {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  // Batches of `epoch` already trained on.
  std::uint64_t batches_in_epoch = 0;
};

// Parameters ("param.<name>"), optimizer state and progress in one archive,
// written through a temporary file and renamed into place.
void SaveTrainingState(const std::string& path, const Model& model, const ad::Adam* adam,
                       const TrainProgress& progress);
// Loads parameters (and the optimizer state when `adam` is given).
TrainProgress LoadTrainingState(const std::string& path, Model& model, ad::Adam* adam);

ad::Adam MakeOptimizer(const OptimConfig& config);

struct TrainSummary {
  TrainProgress progress;
  std::size_t steps_run = 0;
  // Loss per predicted click of the first and last step of this run.
  double first_loss = 0.0;
  double last_loss = 0.0;
  bool interrupted = false;
};

struct TrainOptions {
  std::string out_dir;
  bool resume = false;
  // Polled between steps; true saves a checkpoint and returns.
  std::function<bool()> stop_requested;
  // Called after each step with its stats.
  std::function<void(const pipeline::StepStats&)> on_step;
};

// Runs config.train.epochs epochs (minus what a resumed checkpoint already
// covers). Writes <out_dir>/checkpoint.bin and appends to
// <out_dir>/metrics.jsonl. Resuming replays the epoch's batch sequence, which
// is exact with one producer.
TrainSummary Train(const RunConfig& config, const Dataset& dataset, Model& model,
                   const TrainOptions& options);

inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kMetricsFile = "metrics.jsonl";

}  // namespace speedyfeed

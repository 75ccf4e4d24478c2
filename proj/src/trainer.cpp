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

#include "speedyfeed/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <spdlog/spdlog.h>

#include "json.hpp"
#include "speedyfeed/checkpoint.hpp"
#include "speedyfeed/errors.hpp"

namespace speedyfeed {

namespace fs = std::filesystem;

namespace {

std::string DataPath(const RunConfig& c, const char* name) {
  return (fs::path(c.paths.data_dir) / name).string();
}

std::size_t PredictedClicks(const pipeline::MiniBatch& batch) {
  std::size_t n = 0;
  for (const auto& inst : batch.instances) n += inst.history.size() - 1;
  return n;
}

}  // namespace

Dataset MakeDataset(const RunConfig& config) {
  Dataset d;
  d.corpus = data::GenerateCorpus(config.corpus);
  const auto logs = data::GenerateLogs(d.corpus, config.logs);
  auto split = data::TemporalSplit(logs, config.test_fraction);
  d.train = std::move(split.train);
  d.test = std::move(split.test);
  d.vocab = text::Vocabulary::Build(d.corpus, config.refine.stopwords);
  d.store = pipeline::NewsStore(text::RefineCorpus(d.corpus, d.vocab, config.refine));
  return d;
}

GenerateSummary GenerateDataset(const RunConfig& config) {
  fs::create_directories(config.paths.data_dir);
  const auto corpus = data::GenerateCorpus(config.corpus);
  const auto logs = data::GenerateLogs(corpus, config.logs);
  const auto split = data::TemporalSplit(logs, config.test_fraction);
  data::WriteCorpusFile(DataPath(config, kNewsFile), corpus);
  data::WriteLogFile(DataPath(config, kTrainLogFile), split.train);
  data::WriteLogFile(DataPath(config, kTestLogFile), split.test);
  text::Vocabulary::Build(corpus, config.refine.stopwords).Save(DataPath(config, kVocabFile));
  GenerateSummary s;
  s.alphas = {0.01, 0.03, 0.05, 0.10, 0.20, 0.30};
  s.shares = data::TopClickShares(logs, corpus.size(), s.alphas);
  for (const auto& l : logs) s.clicks += l.NumClicks();
  return s;
}

Dataset LoadDataset(const RunConfig& config) {
  Dataset d;
  d.corpus = data::ReadCorpusFile(DataPath(config, kNewsFile));
  d.vocab = text::Vocabulary::Load(DataPath(config, kVocabFile));
  const std::string logs[] = {DataPath(config, kTrainLogFile), DataPath(config, kTestLogFile)};
  d.train = pipeline::LoadLogFiles(std::span(logs, 1));
  d.test = pipeline::LoadLogFiles(std::span(logs + 1, 1));
  d.store = pipeline::NewsStore(text::RefineCorpus(d.corpus, d.vocab, config.refine));
  for (const auto* part : {&d.train, &d.test}) {
    for (const auto& log : *part) {
      for (const auto& imp : log.impressions) {
        for (const auto* list : {&imp.clicked, &imp.impressed}) {
          for (const auto& id : *list) {
            if (!d.store.Contains(id)) {
              throw DataError("user " + log.user_id + " references unknown news " + id);
            }
          }
        }
      }
    }
  }
  return d;
}

std::unique_ptr<Model> BuildModel(const RunConfig& config, std::size_t vocab_size) {
  auto m = std::make_unique<Model>();
  model::EncoderConfig enc = config.encoder;
  enc.vocab_size = vocab_size;
  Rng rng = Rng::Derive(config.seed, 6);
  m->encoder = std::make_unique<model::BusLM>(enc, m->params, rng);
  m->user = std::make_unique<model::UserModel>(enc.hidden_dim, m->params, rng);
  return m;
}

ad::Adam MakeOptimizer(const OptimConfig& c) {
  ad::AdamHyper h;
  h.beta1 = c.beta1;
  h.beta2 = c.beta2;
  h.eps = c.eps;
  return ad::Adam(h, {{"encoder", c.encoder_lr}, {"user", c.user_lr}});
}

void SaveTrainingState(const std::string& path, const Model& model, const ad::Adam* adam,
                       const TrainProgress& progress) {
  ad::NamedTensors tensors;
  for (const auto& e : model.params.entries()) tensors.emplace_back("param." + e.name, e.tensor);
  if (adam) {
    for (auto& s : adam->ExportState()) tensors.push_back(std::move(s));
  }
  tensors.emplace_back("progress", ad::Tensor::FromData({3}, {static_cast<double>(progress.step),
                                                              static_cast<double>(progress.epoch),
                                                              static_cast<double>(progress.batches_in_epoch)}));
  const std::string tmp = path + ".tmp";
  ad::SaveCheckpoint(tmp, tensors);
  fs::rename(tmp, path);
}

TrainProgress LoadTrainingState(const std::string& path, Model& model, ad::Adam* adam) {
  const ad::NamedTensors tensors = ad::LoadCheckpoint(path);
  ad::NamedTensors params, optim;
  TrainProgress progress;
  bool have_progress = false;
  for (const auto& [name, t] : tensors) {
    if (name.rfind("param.", 0) == 0) {
      params.emplace_back(name.substr(6), t);
    } else if (name.rfind("adam.", 0) == 0) {
      optim.emplace_back(name, t);
    } else if (name == "progress" && t.numel() == 3) {
      progress.step = static_cast<std::uint64_t>(t[0]);
      progress.epoch = static_cast<std::uint64_t>(t[1]);
      progress.batches_in_epoch = static_cast<std::uint64_t>(t[2]);
      have_progress = true;
    }
  }
  if (params.size() != model.params.size()) {
    throw DataError(path + " holds " + std::to_string(params.size()) + " parameters, the model has " +
                    std::to_string(model.params.size()));
  }
  if (!have_progress) throw DataError(path + " has no progress record");
  model.params.CopyValuesFrom(params);
  if (adam) adam->ImportState(optim);
  return progress;
}

TrainSummary Train(const RunConfig& config, const Dataset& dataset, Model& model,
                   const TrainOptions& options) {
  fs::create_directories(options.out_dir);
  const std::string ckpt = (fs::path(options.out_dir) / kCheckpointFile).string();
  const std::string metrics_path = (fs::path(options.out_dir) / kMetricsFile).string();

  ad::Adam adam = MakeOptimizer(config.optim);
  TrainSummary summary;
  TrainProgress& progress = summary.progress;
  if (options.resume) {
    progress = LoadTrainingState(ckpt, model, &adam);
    spdlog::info("resumed at step {} (epoch {}, batch {})", progress.step, progress.epoch,
                 progress.batches_in_epoch);
  }
  std::ofstream metrics(metrics_path, options.resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw DataError("cannot write " + metrics_path);

  pipeline::PipelineConfig pc;
  pc.cache = config.cache;
  pc.negative_ratio = config.loader.negative_ratio;
  pipeline::Pipeline pipe(*model.encoder, *model.user, dataset.store, pc);

  bool first = true;
  auto save = [&] { SaveTrainingState(ckpt, model, &adam, progress); };
  for (; progress.epoch < config.train.epochs; ++progress.epoch, progress.batches_in_epoch = 0) {
    pipeline::BatchLoader loader(dataset.train, dataset.store, config.loader, progress.epoch);
    std::uint64_t skip = progress.batches_in_epoch;
    while (auto batch = loader.Next()) {
      if (skip > 0) {
        --skip;
        continue;
      }
      if ((config.train.max_steps > 0 && progress.step >= config.train.max_steps) ||
          (options.stop_requested && options.stop_requested())) {
        summary.interrupted = true;
        save();
        return summary;
      }
      model.params.ZeroGrad();
      Rng dropout = Rng::Derive(config.seed ^ 0xd50bULL, progress.step);
      const pipeline::StepStats stats = pipe.TrainingStep(*batch, progress.step, &dropout);
      adam.Step(model.params);
      const double per_click = stats.loss / static_cast<double>(PredictedClicks(*batch));
      if (first) {
        summary.first_loss = per_click;
        first = false;
      }
      summary.last_loss = per_click;
      ++summary.steps_run;
      ++progress.step;
      ++progress.batches_in_epoch;

      auto line = nlohmann::ordered_json::parse(pipeline::StepStatsJson(stats));
      line["epoch"] = progress.epoch;
      line["loss_per_click"] = per_click;
      metrics << line.dump() << '\n';
      if (options.on_step) options.on_step(stats);
      if (config.train.checkpoint_every > 0 && progress.step % config.train.checkpoint_every == 0) {
        metrics.flush();
        save();
      }
    }
    spdlog::info("epoch {} done at step {}", progress.epoch, progress.step);
  }
  save();
  return summary;
}

}  // namespace speedyfeed

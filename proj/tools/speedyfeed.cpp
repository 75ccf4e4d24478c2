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

// speedyfeed: generate data, train, evaluate and benchmark.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "speedyfeed/bench.hpp"
#include "speedyfeed/config.hpp"
#include "speedyfeed/errors.hpp"
#include "speedyfeed/eval.hpp"
#include "speedyfeed/trainer.hpp"

namespace fs = std::filesystem;
using namespace speedyfeed;

namespace {

std::atomic<bool> g_stop{false};

void OnSignal(int) { g_stop = true; }

// Flag values that override the config file when given.
struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_dir, out_dir, report_dir;
  std::optional<std::size_t> num_news, num_users, epochs, max_steps, producers;
  std::optional<std::size_t> bench_users, bench_clicks, bench_epochs;
  std::optional<double> zipf, zipf_cutoff, encoder_lr, user_lr;
  bool disable_cache = false;
  bool no_bus = false;
  bool no_naive = false;
};

void AddCommon(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON run config");
  cmd->add_option("--seed", o.seed, "Top-level random seed");
  cmd->add_option("--data-dir", o.data_dir, "Dataset directory");
}

RunConfig Resolve(const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : LoadRunConfig(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.data_dir) c.paths.data_dir = *o.data_dir;
  if (o.out_dir) c.paths.out_dir = *o.out_dir;
  if (o.report_dir) c.paths.report_dir = *o.report_dir;
  if (o.num_news) c.corpus.num_news = *o.num_news;
  if (o.num_users) c.logs.num_users = *o.num_users;
  if (o.zipf) c.logs.zipf_exponent = *o.zipf;
  if (o.zipf_cutoff) c.logs.zipf_cutoff = *o.zipf_cutoff;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.max_steps) c.train.max_steps = *o.max_steps;
  if (o.producers) c.loader.producers = *o.producers;
  if (o.encoder_lr) c.optim.encoder_lr = *o.encoder_lr;
  if (o.user_lr) c.optim.user_lr = *o.user_lr;
  if (o.bench_users) c.bench.users = *o.bench_users;
  if (o.bench_clicks) c.bench.clicks = *o.bench_clicks;
  if (o.bench_epochs) c.bench.epochs = *o.bench_epochs;
  if (o.disable_cache) c.cache.gamma = 0;
  if (o.no_bus) c.encoder.use_bus = false;
  if (o.no_naive) c.bench.run_naive = false;
  c.Resolve();
  c.Validate();
  return c;
}

std::string ReportDir(const RunConfig& c) {
  return c.paths.report_dir.empty() ? c.paths.out_dir : c.paths.report_dir;
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

int GenData(const RunConfig& c) {
  const GenerateSummary s = GenerateDataset(c);
  SaveRunConfig((fs::path(c.paths.data_dir) / "config.json").string(), c);
  std::cout << "wrote " << c.corpus.num_news << " news and " << c.logs.num_users << " users ("
            << s.clicks << " clicks) to " << c.paths.data_dir << "\n";
  std::cout << "top-alpha click shares:\n";
  for (std::size_t i = 0; i < s.alphas.size(); ++i) {
    std::printf("  top %4.1f%%  %6.2f%%\n", 100.0 * s.alphas[i], 100.0 * s.shares[i]);
  }
  return 0;
}

int TrainCmd(const RunConfig& c, bool resume) {
  const Dataset d = LoadDataset(c);
  auto model = BuildModel(c, d.vocab.size());
  fs::create_directories(c.paths.out_dir);
  SaveRunConfig((fs::path(c.paths.out_dir) / "config.json").string(), c);
  TrainOptions opts;
  opts.out_dir = c.paths.out_dir;
  opts.resume = resume;
  opts.stop_requested = [] { return g_stop.load(); };
  opts.on_step = [](const pipeline::StepStats& s) {
    if (s.step % 50 == 0) {
      spdlog::info("step {} loss {:.4f} merged {} hits {} invocations {}", s.step, s.loss,
                   s.merged, s.hits, s.invocations);
    }
  };
  const TrainSummary s = Train(c, d, *model, opts);
  std::cout << (s.interrupted ? "stopped" : "finished") << " at step " << s.progress.step
            << " (epoch " << s.progress.epoch << "), " << s.steps_run << " steps this run\n";
  if (s.steps_run > 0) {
    std::printf("loss per click: first %.4f, last %.4f\n", s.first_loss, s.last_loss);
  }
  std::cout << "checkpoint: " << (fs::path(c.paths.out_dir) / kCheckpointFile).string() << "\n";
  return 0;
}

int EvalCmd(const RunConfig& c, const std::string& checkpoint_flag) {
  const Dataset d = LoadDataset(c);
  auto model = BuildModel(c, d.vocab.size());
  const std::string ckpt = checkpoint_flag.empty()
                               ? (fs::path(c.paths.out_dir) / kCheckpointFile).string()
                               : checkpoint_flag;
  if (ckpt != "none") LoadTrainingState(ckpt, *model, nullptr);
  eval::EvalReport r = eval::Evaluate(*model->encoder, *model->user, model->params, d.store,
                                      d.train, d.test, c.eval);
  r.config_fingerprint = eval::Fingerprint(RunConfigJson(c));
  const fs::path dir = ReportDir(c);
  fs::create_directories(dir);
  WriteText(dir / "eval.json", eval::EvalReportJson(r) + "\n");
  WriteText(dir / "eval.csv", eval::EvalReportCsv(r));
  SaveRunConfig((dir / "config.json").string(), c);
  std::printf("AUC %.4f  MRR %.4f  NDCG@5 %.4f  NDCG@10 %.4f\n", r.auc, r.mrr, r.ndcg5, r.ndcg10);
  for (const auto& [k, v] : r.recall) std::printf("Recall@%zu %.4f\n", k, v);
  std::printf("%zu impressions (%zu excluded), %zu users (%zu skipped)\n", r.impressions,
              r.excluded_impressions, r.users, r.skipped_users);
  std::cout << "reports in " << dir.string() << "\n";
  return 0;
}

int BenchCmd(const RunConfig& c) {
  const Dataset d = LoadDataset(c);
  std::vector<model::TrainInstance> instances;
  if (c.bench.clicks > 0) {
    instances = bench::UniformInstances(d.store, c.bench.users, c.bench.clicks,
                                        c.loader.negative_ratio, c.loader.seed);
  } else {
    for (std::size_t i = 0; i < d.train.size() && instances.size() < c.bench.users; ++i) {
      if (auto inst = pipeline::MakeInstance(d.train[i], i, d.store, c.loader, 0)) {
        instances.push_back(std::move(*inst));
      }
    }
  }
  bench::BenchConfig bc;
  bc.encoder = c.encoder;
  bc.encoder.vocab_size = d.vocab.size();
  bc.encoder.max_segment_len = c.refine.top_k;
  bc.negative_ratio = c.loader.negative_ratio;
  bc.boundaries = c.loader.boundaries;
  bc.token_budget = c.loader.token_budget;
  bc.cache = c.cache;
  bc.epochs = c.bench.epochs;
  bc.run_naive = c.bench.run_naive;
  bc.seed = c.seed;
  const bench::BenchReport r = bench::RunBench(instances, d.store, bc);
  const fs::path dir = ReportDir(c);
  fs::create_directories(dir);
  WriteText(dir / "bench.json", bench::BenchReportJson(r) + "\n");
  WriteText(dir / "bench.csv", bench::BenchReportCsv(r));
  SaveRunConfig((dir / "config.json").string(), c);
  std::cout << bench::BenchReportTable(r);
  std::cout << "reports in " << dir.string() << "\n";
  return 0;
}

void ConfigureLogging() {
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("SPEEDY_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  }
}

}  // namespace

int main(int argc, char** argv) {
  ConfigureLogging();
  CLI::App app{"SpeedyFeed news recommendation training"};
  app.require_subcommand(1);
  Overrides o;
  bool resume = false;
  std::string checkpoint;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus and click logs");
  AddCommon(gen, o);
  gen->add_option("--num-news", o.num_news);
  gen->add_option("--num-users", o.num_users);
  gen->add_option("--zipf", o.zipf, "Popularity exponent");
  gen->add_option("--zipf-cutoff", o.zipf_cutoff, "Popularity cutoff, fraction of news");

  auto* train = app.add_subcommand("train", "Train the model");
  AddCommon(train, o);
  train->add_option("--out-dir", o.out_dir);
  train->add_option("--epochs", o.epochs);
  train->add_option("--max-steps", o.max_steps, "Stop after this many steps in total");
  train->add_option("--producers", o.producers, "Loader threads");
  train->add_option("--encoder-lr", o.encoder_lr);
  train->add_option("--user-lr", o.user_lr);
  train->add_flag("--resume", resume, "Continue from the checkpoint in --out-dir");
  train->add_flag("--disable-cache", o.disable_cache, "Set the expiration step to 0");
  train->add_flag("--no-bus", o.no_bus, "Train without the segment bus");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out logs");
  AddCommon(ev, o);
  ev->add_option("--out-dir", o.out_dir);
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file, or 'none' for initial weights");
  ev->add_option("--report-dir", o.report_dir);
  ev->add_flag("--no-bus", o.no_bus, "Model was trained without the segment bus");

  auto* bn = app.add_subcommand("bench", "Compare encoder workloads of the training workflows");
  AddCommon(bn, o);
  bn->add_option("--report-dir", o.report_dir);
  bn->add_option("--users", o.bench_users);
  bn->add_option("--clicks", o.bench_clicks, "Uniform history length; 0 uses the train logs");
  bn->add_option("--epochs", o.bench_epochs);
  bn->add_flag("--no-naive", o.no_naive, "Count the naive workflow without running it");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  std::signal(SIGINT, OnSignal);
  std::signal(SIGTERM, OnSignal);
  try {
    const RunConfig c = Resolve(o);
    if (gen->parsed()) return GenData(c);
    if (train->parsed()) return TrainCmd(c, resume);
    if (ev->parsed()) return EvalCmd(c, checkpoint);
    return BenchCmd(c);
  } catch (const ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 2;
  } catch (const ParseError& e) {
    spdlog::error("data error: {}", e.what());
    return 3;
  } catch (const DataError& e) {
    spdlog::error("data error: {}", e.what());
    return 3;
  } catch (const NumericalError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return 4;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}

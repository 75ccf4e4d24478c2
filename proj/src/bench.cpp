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

#include "speedyfeed/bench.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "speedyfeed/errors.hpp"

namespace speedyfeed::bench {

namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

double Ratio(double base, double value) {
  return value > 0.0 ? base / value : std::numeric_limits<double>::infinity();
}

// Attention multiplications of one reference encoding of every distinct news.
std::unordered_map<std::string, std::uint64_t> AttentionCosts(
    const std::vector<model::TrainInstance>& instances, const pipeline::NewsStore& store,
    const model::BusLM& encoder) {
  ad::NoRecordScope no_record;
  std::unordered_map<std::string, std::uint64_t> cost;
  for (const auto& inst : instances) {
    for (const auto& id : pipeline::InstanceSlots(inst)) {
      if (cost.count(id)) continue;
      model::EncodeStats s;
      encoder.EncodeReference(store.Get(id), &s);
      cost.emplace(id, s.attention_multiplies);
    }
  }
  return cost;
}

ConfigResult RunPipeline(const std::string& name, const std::string& description,
                         const std::vector<pipeline::MiniBatch>& batches,
                         const model::BusLM& encoder, const model::UserModel& user_model,
                         ad::ParameterSet& params, const pipeline::NewsStore& store,
                         const pipeline::CacheConfig& cache, std::size_t epochs,
                         std::size_t ratio) {
  ConfigResult r;
  r.name = name;
  r.description = description;
  pipeline::PipelineConfig pc;
  pc.cache = cache;
  pc.negative_ratio = ratio;
  pipeline::Pipeline pipe(encoder, user_model, store, pc);
  const auto start = Clock::now();
  std::uint64_t step = 0, attention = 0;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (const auto& batch : batches) {
      params.ZeroGrad();
      const pipeline::StepStats s = pipe.TrainingStep(batch, step++);
      attention += s.attention_multiplies;
      if (e == 0) r.loss += s.loss;
    }
  }
  params.ZeroGrad();
  r.wall_seconds = Seconds(start);
  const double n = static_cast<double>(epochs);
  r.invocations = static_cast<double>(pipe.total_invocations()) / n;
  r.cache_hits = static_cast<double>(pipe.total_hits()) / n;
  r.attention_multiplies = static_cast<double>(attention) / n;
  r.steps = static_cast<double>(batches.size());
  r.data_efficiency = pipeline::PostMergeDataEfficiency(batches, store);
  return r;
}

}  // namespace

std::vector<model::TrainInstance> UniformInstances(const pipeline::NewsStore& store,
                                                   std::size_t users, std::size_t clicks,
                                                   std::size_t ratio, std::uint64_t seed) {
  if (clicks < 2) throw ConfigError("uniform histories need at least two clicks");
  if (store.size() < 2) throw DataError("need at least two news");
  std::vector<model::TrainInstance> out;
  for (std::size_t u = 0; u < users; ++u) {
    Rng rng = Rng::Derive(seed, u);
    model::TrainInstance inst;
    inst.user_id = "B" + std::to_string(u + 1);
    for (std::size_t t = 0; t < clicks; ++t) {
      inst.history.push_back(store.ids()[rng.UniformInt(store.size())]);
    }
    inst.pools.assign(clicks, {});
    model::AssignNegatives(inst, store.ids(), ratio, rng);
    out.push_back(std::move(inst));
  }
  return out;
}

BenchReport RunBench(const std::vector<model::TrainInstance>& instances,
                     const pipeline::NewsStore& store, const BenchConfig& config) {
  if (instances.empty()) throw DataError("bench needs at least one instance");
  config.cache.Validate();
  if (!config.cache.enabled()) throw ConfigError("bench needs gamma > 0 for the cache configs");
  if (config.epochs == 0) throw ConfigError("bench needs at least one epoch");
  const std::size_t ratio = config.negative_ratio;

  model::EncoderConfig k3 = config.encoder;
  k3.num_segments = 3;
  model::EncoderConfig k1 = k3;
  k1.num_segments = 1;
  k1.max_segment_len = 3 * k3.max_segment_len;
  ad::ParameterSet p1, p3;
  Rng r1(config.seed), r3(config.seed);
  const model::BusLM enc1(k1, p1, r1);
  const model::UserModel user1(k1.hidden_dim, p1, r1);
  const model::BusLM enc3(k3, p3, r3);
  const model::UserModel user3(k3.hidden_dim, p3, r3);

  BenchReport report;
  report.users = instances.size();
  for (const auto& inst : instances) report.clicks += inst.history.size();

  std::size_t longest = 0;
  for (const auto& inst : instances) longest = std::max(longest, pipeline::InstanceMaxLength(inst, store));
  const std::vector<std::size_t> one_bucket = {0, longest + 1};
  const auto flat_batches = pipeline::BatchInstances(instances, store, one_bucket, config.token_budget);
  const double flat_de = pipeline::DataEfficiency(flat_batches);

  // (a)
  {
    ConfigResult r;
    r.name = "a";
    r.description = "naive per-click";
    const auto start = Clock::now();
    const auto cost = AttentionCosts(instances, store, enc1);
    std::uint64_t invocations = 0, attention = 0;
    for (const auto& inst : instances) {
      for (std::size_t t = 1; t < inst.history.size(); ++t) {
        if (config.run_naive) {
          p1.ZeroGrad();
          const auto res = pipeline::NaiveTrainingStep(inst, t, enc1, user1, store);
          r.loss += res.loss;
          invocations += res.invocations;
          attention += res.attention_multiplies;
          continue;
        }
        for (std::size_t i = 0; i <= t; ++i) attention += cost.at(inst.history[i]);
        for (const auto& id : inst.negatives[t - 1]) attention += cost.at(id);
        invocations += t + 1 + inst.negatives[t - 1].size();
      }
      r.steps += static_cast<double>(inst.history.size() - 1);
    }
    p1.ZeroGrad();
    if (!config.run_naive) r.loss = std::numeric_limits<double>::quiet_NaN();
    r.wall_seconds = Seconds(start);
    r.invocations = static_cast<double>(invocations);
    r.attention_multiplies = static_cast<double>(attention);
    r.data_efficiency = flat_de;
    report.configs.push_back(r);
  }
  // (b)
  {
    ConfigResult r;
    r.name = "b";
    r.description = "+autoregressive";
    const auto start = Clock::now();
    std::uint64_t invocations = 0, attention = 0;
    for (const auto& inst : instances) {
      p1.ZeroGrad();
      const auto res = pipeline::AutoregressiveStep(inst, enc1, user1, store, ratio);
      r.loss += res.loss;
      invocations += res.invocations;
      attention += res.attention_multiplies;
    }
    p1.ZeroGrad();
    r.wall_seconds = Seconds(start);
    r.invocations = static_cast<double>(invocations);
    r.attention_multiplies = static_cast<double>(attention);
    r.steps = static_cast<double>(instances.size());
    r.data_efficiency = flat_de;
    report.configs.push_back(r);
  }
  const auto batches =
      pipeline::BatchInstances(instances, store, config.boundaries, config.token_budget);
  pipeline::CacheConfig off = config.cache;
  off.gamma = 0;
  report.configs.push_back(RunPipeline("c", "+centralized batching", batches, enc1, user1, p1,
                                       store, off, 1, ratio));
  report.configs.push_back(RunPipeline("d", "+cache", batches, enc1, user1, p1, store,
                                       config.cache, config.epochs, ratio));
  report.configs.push_back(RunPipeline("e", "+bus segmentation (K=3)", batches, enc3, user3, p3,
                                       store, config.cache, config.epochs, ratio));

  const ConfigResult& base = report.configs.front();
  for (auto& r : report.configs) {
    r.invocation_ratio = Ratio(base.invocations, r.invocations);
    r.attention_ratio = Ratio(base.attention_multiplies, r.attention_multiplies);
  }
  return report;
}

std::string BenchReportJson(const BenchReport& report) {
  nlohmann::ordered_json j;
  j["users"] = report.users;
  j["clicks"] = report.clicks;
  j["configs"] = nlohmann::ordered_json::array();
  for (const auto& r : report.configs) {
    nlohmann::ordered_json c;
    c["name"] = r.name;
    c["description"] = r.description;
    c["invocations"] = r.invocations;
    c["cache_hits"] = r.cache_hits;
    c["attention_multiplies"] = r.attention_multiplies;
    c["steps"] = r.steps;
    c["data_efficiency"] = r.data_efficiency;
    c["loss"] = std::isnan(r.loss) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.loss);
    c["wall_seconds"] = r.wall_seconds;
    c["invocation_ratio"] = r.invocation_ratio;
    c["attention_ratio"] = r.attention_ratio;
    j["configs"].push_back(c);
  }
  return j.dump(2);
}

std::string BenchReportCsv(const BenchReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "name,description,invocations,cache_hits,attention_multiplies,steps,data_efficiency,"
         "loss,wall_seconds,invocation_ratio,attention_ratio\n";
  for (const auto& r : report.configs) {
    out << r.name << ",\"" << r.description << "\"," << r.invocations << ',' << r.cache_hits
        << ',' << r.attention_multiplies << ',' << r.steps << ',' << r.data_efficiency << ','
        << r.loss << ',' << r.wall_seconds << ',' << r.invocation_ratio << ','
        << r.attention_ratio << '\n';
  }
  return out.str();
}

std::string BenchReportTable(const BenchReport& report) {
  std::ostringstream out;
  out << report.users << " users, " << report.clicks << " clicks\n";
  out << std::left << std::setw(4) << "cfg" << std::setw(26) << "workflow" << std::right
      << std::setw(12) << "invocations" << std::setw(10) << "hits" << std::setw(9) << "DE"
      << std::setw(10) << "inv x" << std::setw(10) << "attn x" << std::setw(10) << "wall s"
      << '\n';
  for (const auto& r : report.configs) {
    out << std::left << std::setw(4) << r.name << std::setw(26) << r.description << std::right
        << std::fixed << std::setprecision(0) << std::setw(12) << r.invocations << std::setw(10)
        << r.cache_hits << std::setprecision(3) << std::setw(9) << r.data_efficiency
        << std::setprecision(2) << std::setw(10) << r.invocation_ratio << std::setw(10)
        << r.attention_ratio << std::setw(10) << r.wall_seconds << '\n';
  }
  return out.str();
}

}  // namespace speedyfeed::bench

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

#include "speedyfeed/pipeline.hpp"

#include <cmath>
#include <mutex>

#include "json.hpp"
#include "speedyfeed/errors.hpp"

namespace speedyfeed::pipeline {

using ad::Tensor;

double LookupRate(std::uint64_t step, double beta) {
  return 1.0 - std::exp(-beta * static_cast<double>(step));
}

void CacheConfig::Validate() const {
  if (!(beta > 0.0)) throw ConfigError("cache.beta must be > 0");
}

std::optional<EmbeddingCache::Entry> EmbeddingCache::LookupFresh(const std::string& id,
                                                                 std::uint64_t step,
                                                                 std::uint64_t gamma) const {
  std::shared_lock lock(mutex_);
  const auto it = entries_.find(id);
  if (it == entries_.end() || it->second.step > step || step - it->second.step > gamma) {
    return std::nullopt;
  }
  return it->second;
}

void EmbeddingCache::Write(const std::string& id, std::span<const double> vector,
                           std::uint64_t step) {
  std::unique_lock lock(mutex_);
  Entry& e = entries_[id];
  e.vector.assign(vector.begin(), vector.end());
  e.step = step;
}

std::size_t EmbeddingCache::Sweep(std::uint64_t step, std::uint64_t gamma) {
  std::unique_lock lock(mutex_);
  return std::erase_if(entries_, [&](const auto& kv) {
    return kv.second.step <= step && step - kv.second.step > gamma;
  });
}

std::size_t EmbeddingCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

void EmbeddingCache::Clear() {
  std::unique_lock lock(mutex_);
  entries_.clear();
}

MergedSet GatherMerge(std::span<const std::vector<std::string>> slots) {
  MergedSet merged;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    for (std::size_t s = 0; s < slots[i].size(); ++s) {
      const std::string& id = slots[i][s];
      if (id == data::kPadNewsId) continue;
      auto [it, fresh] = index.try_emplace(id, merged.ids.size());
      if (fresh) {
        merged.ids.push_back(id);
        merged.refs.emplace_back();
      }
      merged.refs[it->second].push_back({i, s});
      ++merged.num_slots;
    }
  }
  return merged;
}

MergedSet GatherMerge(const MiniBatch& batch) {
  std::vector<std::vector<std::string>> slots;
  slots.reserve(batch.instances.size());
  for (const auto& inst : batch.instances) slots.push_back(InstanceSlots(inst));
  return GatherMerge(slots);
}

CachePartition PartitionByCache(const MergedSet& merged, const EmbeddingCache& cache,
                                std::uint64_t step, const CacheConfig& config, Rng& rng) {
  CachePartition part;
  if (!config.enabled()) {
    for (std::size_t m = 0; m < merged.ids.size(); ++m) part.misses.push_back(m);
    return part;
  }
  const double p = LookupRate(step, config.beta);
  if (!config.per_news) part.lookup_attempted = rng.Bernoulli(p);
  for (std::size_t m = 0; m < merged.ids.size(); ++m) {
    bool attempt = part.lookup_attempted;
    if (config.per_news) {
      attempt = rng.Bernoulli(p);
      part.lookup_attempted |= attempt;
    }
    std::optional<EmbeddingCache::Entry> entry;
    if (attempt) entry = cache.LookupFresh(merged.ids[m], step, config.gamma);
    if (!entry) {
      part.misses.push_back(m);
      continue;
    }
    if (step - entry->step > config.gamma) {
      throw InternalError("cache served " + merged.ids[m] + " produced at step " +
                          std::to_string(entry->step) + " at step " + std::to_string(step));
    }
    part.hits.push_back(m);
    part.hit_vectors.push_back(std::move(entry->vector));
  }
  return part;
}

std::vector<Tensor> Dispatch(const MergedSet& merged, const Tensor& table,
                             std::span<const int> row_of_merged,
                             std::span<const std::size_t> slots_per_instance) {
  std::vector<std::vector<int>> rows(slots_per_instance.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].assign(slots_per_instance[i], -1);
  for (std::size_t m = 0; m < merged.ids.size(); ++m) {
    if (m >= row_of_merged.size() || row_of_merged[m] < 0) {
      throw InternalError("no embedding for merged news " + merged.ids[m]);
    }
    for (const SlotRef& ref : merged.refs[m]) {
      if (ref.instance >= rows.size() || ref.slot >= rows[ref.instance].size()) {
        throw InternalError("back-reference outside the batch layout");
      }
      rows[ref.instance][ref.slot] = row_of_merged[m];
    }
  }
  std::vector<Tensor> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.push_back(ad::GatherRows(table, r));
  return out;
}

std::string StepStatsJson(const StepStats& s) {
  nlohmann::ordered_json j;
  j["step"] = s.step;
  j["instances"] = s.instances;
  j["merged"] = s.merged;
  j["hits"] = s.hits;
  j["invocations"] = s.invocations;
  j["lookup_attempted"] = s.lookup_attempted;
  j["loss"] = s.loss;
  j["valid_tokens"] = s.valid_tokens;
  j["padded_tokens"] = s.padded_tokens;
  j["post_merge_valid_tokens"] = s.post_merge_valid_tokens;
  j["post_merge_padded_tokens"] = s.post_merge_padded_tokens;
  j["attention_multiplies"] = s.attention_multiplies;
  return j.dump();
}

Pipeline::Pipeline(const model::BusLM& encoder, const model::UserModel& user_model,
                   const NewsStore& store, PipelineConfig config)
    : encoder_(encoder),
      user_model_(user_model),
      store_(store),
      config_(config),
      cache_rng_(config.cache.seed) {
  config_.cache.Validate();
  if (config_.negative_ratio < 1) throw ConfigError("negative_ratio must be >= 1");
}

Tensor Pipeline::BatchLoss(const MiniBatch& batch, const MergedSet& merged,
                           const Tensor& table, const std::vector<int>& row_of_merged) const {
  const std::size_t ratio = config_.negative_ratio;
  std::vector<std::size_t> slots;
  for (const auto& inst : batch.instances) {
    if (inst.history.size() < 2) {
      throw DataError("user " + inst.user_id + " has fewer than two clicks");
    }
    if (inst.negatives.size() != inst.history.size() - 1) {
      throw DataError("user " + inst.user_id + " is missing negatives");
    }
    for (const auto& n : inst.negatives) {
      if (n.size() != ratio) throw DataError("user " + inst.user_id + " has a wrong negative count");
    }
    slots.push_back(inst.history.size() + (inst.history.size() - 1) * ratio);
  }
  const auto blocks = Dispatch(merged, table, row_of_merged, slots);
  Tensor total;
  for (std::size_t i = 0; i < batch.instances.size(); ++i) {
    const std::size_t t = batch.instances[i].history.size();
    const Tensor theta = ad::SliceRows(blocks[i], 0, t);
    const Tensor negatives = ad::SliceRows(blocks[i], t, slots[i]);
    const Tensor loss = user_model_.AutoregressiveLoss(theta, negatives, ratio);
    total = total.defined() ? ad::Add(total, loss) : loss;
  }
  return total;
}

StepStats Pipeline::TrainingStep(const MiniBatch& batch, std::uint64_t step, Rng* dropout_rng) {
  if (batch.instances.empty()) throw DataError("empty mini-batch");
  StepStats stats;
  stats.step = step;
  stats.instances = batch.instances.size();
  stats.valid_tokens = batch.valid_tokens;
  stats.padded_tokens = batch.padded_tokens;
  const TokenCounts post = PostMergeTokens(batch.instances, store_, batch.padded_length);
  stats.post_merge_valid_tokens = post.valid;
  stats.post_merge_padded_tokens = post.padded;

  const MergedSet merged = GatherMerge(batch);
  CachePartition part = PartitionByCache(merged, cache_, step, config_.cache, cache_rng_);
  stats.merged = merged.ids.size();
  stats.hits = part.hits.size();
  stats.invocations = part.misses.size();
  stats.lookup_attempted = part.lookup_attempted;

  const std::size_t d = encoder_.config().hidden_dim;
  ad::Tape tape;
  Tensor loss, encoded;
  {
    ad::RecordScope scope(tape);
    std::vector<const text::RefinedNews*> to_encode;
    for (std::size_t m : part.misses) to_encode.push_back(&store_.Get(merged.ids[m]));
    model::EncodeStats enc;
    encoded = encoder_.EncodeBatch(to_encode, &enc, dropout_rng);
    stats.attention_multiplies = enc.attention_multiplies;

    std::vector<int> row_of_merged(merged.ids.size(), -1);
    for (std::size_t i = 0; i < part.misses.size(); ++i) {
      row_of_merged[part.misses[i]] = static_cast<int>(i);
    }
    Tensor table = encoded;
    if (!part.hits.empty()) {
      std::vector<double> values;
      values.reserve(part.hits.size() * d);
      for (std::size_t j = 0; j < part.hits.size(); ++j) {
        values.insert(values.end(), part.hit_vectors[j].begin(), part.hit_vectors[j].end());
        row_of_merged[part.hits[j]] = static_cast<int>(part.misses.size() + j);
      }
      const Tensor cached = Tensor::FromData({part.hits.size(), d}, std::move(values));
      const Tensor pieces[] = {encoded, cached};
      table = part.misses.empty() ? cached : ad::Concat(pieces, 0);
    }
    loss = BatchLoss(batch, merged, table, row_of_merged);
  }
  stats.loss = loss.item();
  if (!std::isfinite(stats.loss)) throw NumericalError("non-finite loss at step " + std::to_string(step));

  if (config_.cache.enabled()) {
    for (std::size_t i = 0; i < part.misses.size(); ++i) {
      cache_.Write(merged.ids[part.misses[i]], encoded.data().subspan(i * d, d), step);
    }
    if (step % config_.cache.gamma == 0) cache_.Sweep(step, config_.cache.gamma);
  }
  tape.Backward(loss);
  total_invocations_ += stats.invocations;
  total_hits_ += stats.hits;
  return stats;
}

double Pipeline::EvaluateLoss(const MiniBatch& batch) {
  ad::NoRecordScope no_record;
  const MergedSet merged = GatherMerge(batch);
  std::vector<const text::RefinedNews*> news;
  std::vector<int> rows;
  for (std::size_t m = 0; m < merged.ids.size(); ++m) {
    news.push_back(&store_.Get(merged.ids[m]));
    rows.push_back(static_cast<int>(m));
  }
  return BatchLoss(batch, merged, encoder_.EncodeBatch(news), rows).item();
}

NaiveResult NaiveTrainingStep(const model::TrainInstance& instance, std::size_t t,
                              const model::BusLM& encoder, const model::UserModel& user_model,
                              const NewsStore& store) {
  if (t < 1 || t >= instance.history.size() || instance.negatives.size() < t) {
    throw DimensionError("NaiveTrainingStep: target " + std::to_string(t) + " unavailable");
  }
  NaiveResult result;
  model::EncodeStats enc;
  ad::Tape tape;
  Tensor loss;
  {
    ad::RecordScope scope(tape);
    auto encode_rows = [&](std::span<const std::string> ids) {
      std::vector<Tensor> rows;
      for (const auto& id : ids) {
        rows.push_back(encoder.EncodeReference(store.Get(id), &enc));
        ++result.invocations;
      }
      const std::size_t d = rows[0].dim(0);
      return ad::Reshape(ad::Concat(rows, 0), {rows.size(), d});
    };
    const Tensor history = encode_rows(std::span(instance.history).subspan(0, t));
    const Tensor positive = encoder.EncodeReference(store.Get(instance.history[t]), &enc);
    ++result.invocations;
    const Tensor negatives = encode_rows(instance.negatives[t - 1]);
    loss = user_model.TimestampLoss(history, positive, negatives);
  }
  result.loss = loss.item();
  result.attention_multiplies = enc.attention_multiplies;
  tape.Backward(loss);
  return result;
}

NaiveResult AutoregressiveStep(const model::TrainInstance& instance,
                               const model::BusLM& encoder, const model::UserModel& user_model,
                               const NewsStore& store, std::size_t ratio) {
  const std::vector<std::string> slots = InstanceSlots(instance);
  const std::size_t t = instance.history.size();
  if (t < 2 || slots.size() != t + (t - 1) * ratio) {
    throw DataError("user " + instance.user_id + " has an incomplete instance");
  }
  std::vector<const text::RefinedNews*> news;
  for (const auto& id : slots) news.push_back(&store.Get(id));
  NaiveResult result;
  model::EncodeStats enc;
  ad::Tape tape;
  Tensor loss;
  {
    ad::RecordScope scope(tape);
    const Tensor table = encoder.EncodeBatch(news, &enc);
    loss = user_model.AutoregressiveLoss(ad::SliceRows(table, 0, t),
                                         ad::SliceRows(table, t, slots.size()), ratio);
  }
  result.loss = loss.item();
  result.invocations = slots.size();
  result.attention_multiplies = enc.attention_multiplies;
  tape.Backward(loss);
  return result;
}

std::uint64_t NaiveInvocations(std::size_t clicks, std::size_t ratio) {
  std::uint64_t total = 0;
  for (std::size_t t = 1; t < clicks; ++t) total += t + 1 + ratio;
  return total;
}

std::uint64_t PipelineInvocationBound(std::size_t clicks, std::size_t ratio) {
  return clicks + (clicks - 1) * ratio;
}

}  // namespace speedyfeed::pipeline

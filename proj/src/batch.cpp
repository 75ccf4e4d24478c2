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

#include "speedyfeed/batch.hpp"

#include <algorithm>
#include <unordered_set>

#include "speedyfeed/errors.hpp"

namespace speedyfeed::pipeline {

NewsStore::NewsStore(std::vector<text::RefinedNews> news) : news_(std::move(news)) {
  for (std::size_t i = 0; i < news_.size(); ++i) {
    if (!index_.emplace(news_[i].news_id, i).second) {
      throw DataError("duplicate news id " + news_[i].news_id);
    }
    ids_.push_back(news_[i].news_id);
  }
}

bool NewsStore::Contains(std::string_view id) const {
  return index_.count(std::string(id)) > 0;
}

const text::RefinedNews& NewsStore::Get(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) throw DataError("unknown news id " + std::string(id));
  return news_[it->second];
}

std::size_t NewsStore::Length(std::string_view id) const { return Get(id).NumTokens(); }

std::vector<std::string> InstanceSlots(const model::TrainInstance& instance) {
  std::vector<std::string> slots = instance.history;
  for (const auto& negs : instance.negatives) slots.insert(slots.end(), negs.begin(), negs.end());
  return slots;
}

std::size_t InstanceMaxLength(const model::TrainInstance& instance, const NewsStore& store) {
  std::size_t best = 0;
  for (const auto& id : InstanceSlots(instance)) best = std::max(best, store.Length(id));
  return best;
}

TokenCounts PreMergeTokens(std::span<const model::TrainInstance> instances,
                           const NewsStore& store, std::size_t padded_length) {
  std::size_t max_history = 0, max_negatives = 0;
  for (const auto& inst : instances) {
    max_history = std::max(max_history, inst.history.size());
    std::size_t negs = 0;
    for (const auto& n : inst.negatives) negs += n.size();
    max_negatives = std::max(max_negatives, negs);
  }
  TokenCounts c;
  for (const auto& inst : instances) {
    for (const auto& id : InstanceSlots(inst)) c.valid += store.Length(id);
  }
  const std::size_t total = instances.size() * (max_history + max_negatives) * padded_length;
  c.padded = total - c.valid;
  return c;
}

TokenCounts PostMergeTokens(std::span<const model::TrainInstance> instances,
                            const NewsStore& store, std::size_t padded_length) {
  std::unordered_set<std::string> seen;
  TokenCounts c;
  for (const auto& inst : instances) {
    for (const auto& id : InstanceSlots(inst)) {
      if (id == data::kPadNewsId || !seen.insert(id).second) continue;
      c.valid += store.Length(id);
    }
  }
  c.padded = seen.size() * padded_length - c.valid;
  return c;
}

}  // namespace speedyfeed::pipeline

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

// News lookup and the mini-batch unit shared by the loader and the trainer.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "speedyfeed/refine.hpp"
#include "speedyfeed/user_model.hpp"

namespace speedyfeed::pipeline {

// Refined articles addressable by news id.
class NewsStore {
 public:
  NewsStore() = default;
  explicit NewsStore(std::vector<text::RefinedNews> news);

  bool Contains(std::string_view id) const;
  // Throws DataError for unknown ids.
  const text::RefinedNews& Get(std::string_view id) const;
  std::size_t Length(std::string_view id) const;
  std::size_t size() const { return news_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<text::RefinedNews>& news() const { return news_; }

 private:
  std::vector<text::RefinedNews> news_;
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Slot ids of an instance: the history in order, then every target's
// negatives (target-major).
std::vector<std::string> InstanceSlots(const model::TrainInstance& instance);

// Longest refined news among an instance's slots.
std::size_t InstanceMaxLength(const model::TrainInstance& instance, const NewsStore& store);

struct MiniBatch {
  std::vector<model::TrainInstance> instances;
  std::size_t bucket = 0;
  // Every news of the batch padded to this many tokens.
  std::size_t padded_length = 0;
  // Token accounting of the per-instance (pre-merge) tensors.
  std::size_t valid_tokens = 0;
  std::size_t padded_tokens = 0;
  // A single instance above the token budget.
  bool oversize = false;
};

// Pre-merge tensors: a [B, H_max] history tensor and a [B, (H_max-1) R]
// negative tensor, every slot padded to `padded_length` tokens.
struct TokenCounts {
  std::size_t valid = 0;
  std::size_t padded = 0;
  std::size_t total() const { return valid + padded; }
};
TokenCounts PreMergeTokens(std::span<const model::TrainInstance> instances,
                           const NewsStore& store, std::size_t padded_length);
// Post-merge tensor: one row per distinct news id, padded the same way.
TokenCounts PostMergeTokens(std::span<const model::TrainInstance> instances,
                            const NewsStore& store, std::size_t padded_length);

}  // namespace speedyfeed::pipeline

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

// Attentive user encoder and the autoregressive next-click loss.
//
// A user's clicked news embeddings theta_1..theta_T are pooled with weights
// softmax(a . theta_l) over every prefix, giving mu_1..mu_{T-1}; mu_t is
// trained to score the next click theta_{t+1} above R sampled negatives.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "speedyfeed/corpus.hpp"
#include "speedyfeed/ops.hpp"
#include "speedyfeed/optim.hpp"
#include "speedyfeed/rng.hpp"

namespace speedyfeed::model {

struct TrainInstance {
  std::string user_id;
  // Clicked news in time order, at most L entries.
  std::vector<std::string> history;
  // pools[t]: impressed-not-clicked news of the impression containing
  // history[t]. pools[0] is never used as a negative pool.
  std::vector<std::vector<std::string>> pools;
  // negatives[t - 1]: the R negatives paired with target history[t].
  std::vector<std::vector<std::string>> negatives;
};

// Flattens a log into one instance. Multi-click impressions contribute their
// clicks in news-id order; only the most recent `max_history` clicks are
// kept. Negatives are left empty.
TrainInstance BuildInstance(const data::UserLog& log, std::size_t max_history);

// R negatives for target history[t] (t >= 1): uniform draws from pools[t]
// when nonempty, otherwise uniform over `all_news` excluding the target.
std::vector<std::string> SampleNegatives(const TrainInstance& instance, std::size_t t,
                                         std::span<const std::string> all_news,
                                         std::size_t ratio, Rng& rng);

// Fills instance.negatives for every target.
void AssignNegatives(TrainInstance& instance, std::span<const std::string> all_news,
                     std::size_t ratio, Rng& rng);

class UserModel {
 public:
  // Registers "user.attention" (group "user").
  UserModel(std::size_t hidden_dim, ad::ParameterSet& params, Rng& rng);

  const ad::Tensor& attention() const { return attention_; }

  // mu_t for the prefix theta[0..t), theta: [t, d]. Reference form.
  ad::Tensor EmbedPrefix(const ad::Tensor& theta) const;

  // mu_1..mu_{T-1} for theta: [T, d] -> [T-1, d], computed incrementally.
  // Masked rows (dummy vectors) take no weight.
  ad::Tensor AllPrefixEmbeddings(const ad::Tensor& theta,
                                 const ad::Mask* mask = nullptr) const;

  // Autoregressive loss of one user: theta [T, d] in click order and
  // negatives [(T-1) * R, d], row (t-1) * R + r being the r-th negative of
  // target t.
  ad::Tensor AutoregressiveLoss(const ad::Tensor& theta, const ad::Tensor& negatives,
                                std::size_t ratio) const;

  // -log softmax score of one target: history [t, d], positive [d],
  // negatives [R, d]. Reference form of a single term.
  ad::Tensor TimestampLoss(const ad::Tensor& history, const ad::Tensor& positive,
                           const ad::Tensor& negatives) const;

 private:
  ad::Tensor attention_;
};

double Score(std::span<const double> user, std::span<const double> news);

}  // namespace speedyfeed::model

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

#include "speedyfeed/user_model.hpp"

#include <algorithm>
#include <cmath>

#include "speedyfeed/errors.hpp"

namespace speedyfeed::model {

using ad::Tensor;

TrainInstance BuildInstance(const data::UserLog& log, std::size_t max_history) {
  TrainInstance inst;
  inst.user_id = log.user_id;
  for (const auto& imp : log.impressions) {
    std::vector<std::string> clicked = imp.clicked;
    std::sort(clicked.begin(), clicked.end());
    for (auto& id : clicked) {
      inst.history.push_back(std::move(id));
      inst.pools.push_back(imp.impressed);
    }
  }
  if (max_history > 0 && inst.history.size() > max_history) {
    const auto drop = static_cast<std::ptrdiff_t>(inst.history.size() - max_history);
    inst.history.erase(inst.history.begin(), inst.history.begin() + drop);
    inst.pools.erase(inst.pools.begin(), inst.pools.begin() + drop);
  }
  return inst;
}

std::vector<std::string> SampleNegatives(const TrainInstance& instance, std::size_t t,
                                         std::span<const std::string> all_news,
                                         std::size_t ratio, Rng& rng) {
  if (ratio < 1) throw ConfigError("negative ratio must be >= 1");
  if (t < 1 || t >= instance.history.size()) {
    throw DimensionError("SampleNegatives: target " + std::to_string(t) + " outside history");
  }
  const std::string& positive = instance.history[t];
  const auto& pool = instance.pools[t];
  std::vector<std::string> out;
  if (!pool.empty()) {
    for (std::size_t r = 0; r < ratio; ++r) out.push_back(pool[rng.UniformInt(pool.size())]);
    return out;
  }
  if (all_news.size() < 2) throw DataError("negative sampling needs at least two news");
  while (out.size() < ratio) {
    const std::string& cand = all_news[rng.UniformInt(all_news.size())];
    if (cand != positive) out.push_back(cand);
  }
  return out;
}

void AssignNegatives(TrainInstance& instance, std::span<const std::string> all_news,
                     std::size_t ratio, Rng& rng) {
  instance.negatives.clear();
  for (std::size_t t = 1; t < instance.history.size(); ++t) {
    instance.negatives.push_back(SampleNegatives(instance, t, all_news, ratio, rng));
  }
}

UserModel::UserModel(std::size_t hidden_dim, ad::ParameterSet& params, Rng& rng) {
  std::vector<double> a(hidden_dim);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
  for (double& x : a) x = rng.Normal(0.0, stddev);
  attention_ = params.Add("user.attention", Tensor::FromData({hidden_dim}, a), "user");
}

Tensor UserModel::EmbedPrefix(const Tensor& theta) const {
  if (theta.rank() != 2 || theta.dim(0) == 0) {
    throw DimensionError("EmbedPrefix: need at least one history embedding");
  }
  const std::size_t t = theta.dim(0), d = theta.dim(1);
  const Tensor scores = ad::Reshape(ad::MatMul(theta, ad::Reshape(attention_, {d, 1})), {t});
  const Tensor w = ad::Softmax(scores);
  return ad::Reshape(ad::MatMul(ad::Reshape(w, {1, t}), theta), {d});
}

Tensor UserModel::AllPrefixEmbeddings(const Tensor& theta, const ad::Mask* mask) const {
  if (theta.rank() != 2 || theta.dim(0) < 2) {
    throw DimensionError("AllPrefixEmbeddings: need at least two history embeddings");
  }
  const std::size_t t = theta.dim(0), d = theta.dim(1);
  const Tensor scores = ad::MatMul(theta, ad::Reshape(attention_, {d, 1}));
  return ad::SliceRows(ad::PrefixSoftmaxPool(scores, theta, mask), 0, t - 1);
}

Tensor UserModel::AutoregressiveLoss(const Tensor& theta, const Tensor& negatives,
                                     std::size_t ratio) const {
  const std::size_t t = theta.dim(0);
  if (ratio < 1 || negatives.rank() != 2 || negatives.dim(0) != (t - 1) * ratio) {
    throw DimensionError("AutoregressiveLoss: expected " + std::to_string((t - 1) * ratio) +
                         " negatives, got " + ad::ShapeString(negatives.shape()));
  }
  const Tensor mu = AllPrefixEmbeddings(theta);
  std::vector<Tensor> columns = {ad::RowDot(mu, ad::SliceRows(theta, 1, t))};
  if (ratio == 1) {
    columns.push_back(ad::RowDot(mu, negatives));
  } else {
    // Negative r of every target, gathered into a [T-1, d] block.
    for (std::size_t r = 0; r < ratio; ++r) {
      std::vector<int> rows;
      for (std::size_t i = 0; i + 1 < t; ++i) rows.push_back(static_cast<int>(i * ratio + r));
      columns.push_back(ad::RowDot(mu, ad::GatherRows(negatives, rows)));
    }
  }
  const Tensor logits =
      ad::Transpose(ad::Reshape(ad::Concat(columns, 0), {ratio + 1, t - 1}));
  return ad::Scale(ad::Sum(ad::PickColumn(ad::LogSoftmax(logits), 0)), -1.0);
}

Tensor UserModel::TimestampLoss(const Tensor& history, const Tensor& positive,
                                const Tensor& negatives) const {
  const Tensor mu = EmbedPrefix(history);
  const std::size_t d = mu.dim(0);
  const Tensor parts[] = {ad::Reshape(positive, {1, d}), negatives};
  const Tensor candidates = ad::Concat(parts, 0);
  const Tensor logits = ad::Reshape(ad::MatMul(candidates, ad::Reshape(mu, {d, 1})),
                                    {1, candidates.dim(0)});
  return ad::Scale(ad::Sum(ad::PickColumn(ad::LogSoftmax(logits), 0)), -1.0);
}

double Score(std::span<const double> user, std::span<const double> news) {
  if (user.size() != news.size()) throw DimensionError("Score: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < user.size(); ++i) s += user[i] * news[i];
  return s;
}

}  // namespace speedyfeed::model

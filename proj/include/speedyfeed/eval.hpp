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

// Offline ranking metrics over impressions and exact inner-product recall.
//
// Rankings sort by descending score; equal scores are ordered by candidate
// id (or by position when no ids are given) so results are deterministic.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "speedyfeed/batch.hpp"
#include "speedyfeed/corpus.hpp"
#include "speedyfeed/encoder.hpp"
#include "speedyfeed/errors.hpp"
#include "speedyfeed/user_model.hpp"

namespace speedyfeed::eval {

// The label set of an impression cannot define the metric.
class MetricUndefined : public DataError {
 public:
  using DataError::DataError;
};

// Candidate positions in ranked order.
std::vector<std::size_t> RankOrder(std::span<const double> scores,
                                   std::span<const std::string> ids = {});

// Probability that a positive outranks a negative; ties count 1/2.
double Auc(std::span<const double> scores, std::span<const int> labels);
// Reciprocal rank of the best-ranked positive.
double Mrr(std::span<const double> scores, std::span<const int> labels,
           std::span<const std::string> ids = {});
// Binary gains, log2(rank + 1) discount, normalized by the ideal ranking.
double NdcgAtK(std::span<const double> scores, std::span<const int> labels, std::size_t k,
               std::span<const std::string> ids = {});

// Row-major [n, d] news embeddings with their ids.
struct EmbeddingIndex {
  std::vector<std::string> ids;
  std::vector<double> rows;
  std::size_t dim = 0;

  std::size_t size() const { return ids.size(); }
  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(rows).subspan(i * dim, dim);
  }
};

// Exact top-k by inner product over the whole index (k clamped to its
// size), ties by index position.
std::vector<std::size_t> TopK(std::span<const double> query, const EmbeddingIndex& index,
                              std::size_t k);
// |top-k intersect clicked| / |clicked| for distinct clicked ids.
double RecallAtK(std::span<const double> query, std::span<const std::string> clicked,
                 const EmbeddingIndex& index, std::size_t k);

// Encodes every news of the store without recording gradients.
EmbeddingIndex BuildIndex(const model::BusLM& encoder, const pipeline::NewsStore& store,
                          std::size_t threads = 1, std::size_t chunk = 256);

struct EvalConfig {
  std::size_t max_history = 50;
  std::vector<std::size_t> recall_ks = {50, 100, 200};
  std::size_t threads = 1;
};

struct EvalReport {
  double auc = 0.0;
  double mrr = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  std::vector<std::pair<std::size_t, double>> recall;
  std::size_t impressions = 0;
  // Impressions without both a positive and a negative.
  std::size_t excluded_impressions = 0;
  std::size_t users = 0;
  // Test users with no training clicks.
  std::size_t skipped_users = 0;
  std::string config_fingerprint;
  std::string dataset_fingerprint;
  std::string model_fingerprint;
};

// User embeddings come from each user's training clicks only; every test
// impression ranks its clicked and impressed news. Metrics are means over
// impressions, recall is a mean over users.
EvalReport Evaluate(const model::BusLM& encoder, const model::UserModel& user_model,
                    const ad::ParameterSet& params, const pipeline::NewsStore& store,
                    std::span<const data::UserLog> train, std::span<const data::UserLog> test,
                    const EvalConfig& config);

// 64-bit FNV-1a as 16 hex digits.
std::string Fingerprint(std::string_view bytes);
std::string ParameterFingerprint(const ad::ParameterSet& params);
std::string DatasetFingerprint(const pipeline::NewsStore& store,
                               std::span<const data::UserLog> test);

std::string EvalReportJson(const EvalReport& report);
// Header line plus one row: metric names then values.
std::string EvalReportCsv(const EvalReport& report);

}  // namespace speedyfeed::eval

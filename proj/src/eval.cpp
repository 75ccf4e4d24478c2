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

#include "speedyfeed/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <functional>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

namespace speedyfeed::eval {

namespace {

void CheckSizes(std::span<const double> scores, std::span<const int> labels,
                std::span<const std::string> ids) {
  if (scores.size() != labels.size() || (!ids.empty() && ids.size() != scores.size())) {
    throw DimensionError("scores, labels and ids differ in length");
  }
}

std::size_t CountPositives(std::span<const int> labels) {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(),
                                                [](int l) { return l != 0; }));
}

// Runs body(i) for i in [0, n) on `threads` workers; the first exception wins.
void ParallelFor(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& body) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < threads; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(error_mu);
            if (!error) error = std::current_exception();
            next = n;
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

double Dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::vector<std::size_t> RankOrder(std::span<const double> scores,
                                   std::span<const std::string> ids) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (!ids.empty() && ids[a] != ids[b]) return ids[a] < ids[b];
    return a < b;
  });
  return order;
}

double Auc(std::span<const double> scores, std::span<const int> labels) {
  CheckSizes(scores, labels, {});
  const std::size_t pos = CountPositives(labels);
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw MetricUndefined("AUC needs a positive and a negative");
  // Rank-sum with midranks for ties.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) rank_sum += mid;
    }
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double Mrr(std::span<const double> scores, std::span<const int> labels,
           std::span<const std::string> ids) {
  CheckSizes(scores, labels, ids);
  if (CountPositives(labels) == 0) throw MetricUndefined("MRR needs a positive");
  const auto order = RankOrder(scores, ids);
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] != 0) return 1.0 / static_cast<double>(r + 1);
  }
  return 0.0;
}

double NdcgAtK(std::span<const double> scores, std::span<const int> labels, std::size_t k,
               std::span<const std::string> ids) {
  CheckSizes(scores, labels, ids);
  const std::size_t pos = CountPositives(labels);
  if (pos == 0) throw MetricUndefined("NDCG needs a positive");
  const auto order = RankOrder(scores, ids);
  double dcg = 0.0, ideal = 0.0;
  for (std::size_t r = 0; r < std::min(k, order.size()); ++r) {
    const double discount = 1.0 / std::log2(static_cast<double>(r) + 2.0);
    if (labels[order[r]] != 0) dcg += discount;
    if (r < pos) ideal += discount;
  }
  return dcg / ideal;
}

std::vector<std::size_t> TopK(std::span<const double> query, const EmbeddingIndex& index,
                              std::size_t k) {
  if (query.size() != index.dim) throw DimensionError("query and index dims differ");
  k = std::min(k, index.size());
  std::vector<double> scores(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) scores[i] = Dot(query, index.row(i));
  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  order.resize(k);
  return order;
}

double RecallAtK(std::span<const double> query, std::span<const std::string> clicked,
                 const EmbeddingIndex& index, std::size_t k) {
  const std::unordered_set<std::string> wanted(clicked.begin(), clicked.end());
  if (wanted.empty()) throw MetricUndefined("recall needs a clicked news");
  std::size_t found = 0;
  for (std::size_t i : TopK(query, index, k)) found += wanted.count(index.ids[i]);
  return static_cast<double>(found) / static_cast<double>(wanted.size());
}

EmbeddingIndex BuildIndex(const model::BusLM& encoder, const pipeline::NewsStore& store,
                          std::size_t threads, std::size_t chunk) {
  EmbeddingIndex index;
  index.ids = store.ids();
  index.dim = encoder.config().hidden_dim;
  index.rows.assign(store.size() * index.dim, 0.0);
  const std::size_t chunks = (store.size() + chunk - 1) / chunk;
  ParallelFor(chunks, threads, [&](std::size_t c) {
    ad::NoRecordScope no_record;
    std::vector<const text::RefinedNews*> news;
    const std::size_t begin = c * chunk, end = std::min(store.size(), begin + chunk);
    for (std::size_t i = begin; i < end; ++i) news.push_back(&store.news()[i]);
    const ad::Tensor emb = encoder.EncodeBatch(news);
    std::copy(emb.data().begin(), emb.data().end(),
              index.rows.begin() + static_cast<std::ptrdiff_t>(begin * index.dim));
  });
  return index;
}

namespace {

struct UserResult {
  bool skipped = false;
  double auc = 0.0, mrr = 0.0, ndcg5 = 0.0, ndcg10 = 0.0;
  std::size_t impressions = 0, excluded = 0;
  std::vector<double> recall;
  bool has_recall = false;
};

}  // namespace

EvalReport Evaluate(const model::BusLM& encoder, const model::UserModel& user_model,
                    const ad::ParameterSet& params, const pipeline::NewsStore& store,
                    std::span<const data::UserLog> train, std::span<const data::UserLog> test,
                    const EvalConfig& config) {
  const EmbeddingIndex index = BuildIndex(encoder, store, config.threads);
  std::unordered_map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < index.size(); ++i) row_of.emplace(index.ids[i], i);
  auto row = [&](const std::string& id) {
    const auto it = row_of.find(id);
    if (it == row_of.end()) throw DataError("unknown news id " + id);
    return index.row(it->second);
  };
  std::unordered_map<std::string, const data::UserLog*> train_of;
  for (const auto& log : train) train_of.emplace(log.user_id, &log);

  const std::size_t d = index.dim;
  std::vector<UserResult> results(test.size());
  ParallelFor(test.size(), config.threads, [&](std::size_t u) {
    ad::NoRecordScope no_record;
    UserResult& r = results[u];
    const auto it = train_of.find(test[u].user_id);
    std::vector<std::string> history;
    if (it != train_of.end()) history = model::BuildInstance(*it->second, config.max_history).history;
    if (history.empty()) {
      r.skipped = true;
      return;
    }
    std::vector<double> theta;
    for (const auto& id : history) {
      const auto v = row(id);
      theta.insert(theta.end(), v.begin(), v.end());
    }
    const ad::Tensor mu_t =
        user_model.EmbedPrefix(ad::Tensor::FromData({history.size(), d}, std::move(theta)));
    const std::vector<double> mu(mu_t.data().begin(), mu_t.data().end());

    std::vector<std::string> clicked_all;
    for (const auto& imp : test[u].impressions) {
      std::vector<std::string> ids;
      std::vector<int> labels;
      for (const auto& id : imp.clicked) {
        ids.push_back(id);
        labels.push_back(1);
        clicked_all.push_back(id);
      }
      for (const auto& id : imp.impressed) {
        ids.push_back(id);
        labels.push_back(0);
      }
      if (imp.clicked.empty() || imp.impressed.empty()) {
        ++r.excluded;
        continue;
      }
      std::vector<double> scores;
      for (const auto& id : ids) scores.push_back(Dot(mu, row(id)));
      r.auc += Auc(scores, labels);
      r.mrr += Mrr(scores, labels, ids);
      r.ndcg5 += NdcgAtK(scores, labels, 5, ids);
      r.ndcg10 += NdcgAtK(scores, labels, 10, ids);
      ++r.impressions;
    }
    if (!clicked_all.empty()) {
      r.has_recall = true;
      const std::size_t kmax =
          config.recall_ks.empty()
              ? 0
              : *std::max_element(config.recall_ks.begin(), config.recall_ks.end());
      const auto top = TopK(mu, index, kmax);
      const std::unordered_set<std::string> wanted(clicked_all.begin(), clicked_all.end());
      for (std::size_t k : config.recall_ks) {
        std::size_t found = 0;
        for (std::size_t i = 0; i < std::min(k, top.size()); ++i) found += wanted.count(index.ids[top[i]]);
        r.recall.push_back(static_cast<double>(found) / static_cast<double>(wanted.size()));
      }
    }
  });

  EvalReport report;
  std::vector<double> recall_sum(config.recall_ks.size(), 0.0);
  std::size_t recall_users = 0;
  for (const auto& r : results) {
    if (r.skipped) {
      ++report.skipped_users;
      continue;
    }
    ++report.users;
    report.auc += r.auc;
    report.mrr += r.mrr;
    report.ndcg5 += r.ndcg5;
    report.ndcg10 += r.ndcg10;
    report.impressions += r.impressions;
    report.excluded_impressions += r.excluded;
    if (r.has_recall) {
      ++recall_users;
      for (std::size_t i = 0; i < r.recall.size(); ++i) recall_sum[i] += r.recall[i];
    }
  }
  if (report.impressions > 0) {
    const double n = static_cast<double>(report.impressions);
    report.auc /= n;
    report.mrr /= n;
    report.ndcg5 /= n;
    report.ndcg10 /= n;
  }
  for (std::size_t i = 0; i < config.recall_ks.size(); ++i) {
    report.recall.emplace_back(config.recall_ks[i],
                               recall_users ? recall_sum[i] / static_cast<double>(recall_users) : 0.0);
  }
  report.dataset_fingerprint = DatasetFingerprint(store, test);
  report.model_fingerprint = ParameterFingerprint(params);
  return report;
}

std::string Fingerprint(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

std::string ParameterFingerprint(const ad::ParameterSet& params) {
  std::string bytes;
  for (const auto& e : params.entries()) {
    bytes += e.name;
    bytes.push_back('\0');
    const auto data = e.tensor.data();
    bytes.append(reinterpret_cast<const char*>(data.data()), data.size_bytes());
  }
  return Fingerprint(bytes);
}

std::string DatasetFingerprint(const pipeline::NewsStore& store,
                               std::span<const data::UserLog> test) {
  std::ostringstream s;
  for (const auto& n : store.news()) {
    s << n.news_id;
    for (const auto& seg : n.segments) {
      s << '|';
      for (const auto& t : seg) s << t.token_id << ':' << t.count << ',';
    }
    s << '\n';
  }
  for (const auto& log : test) s << data::SerializeUserLog(log) << '\n';
  return Fingerprint(s.str());
}

std::string EvalReportJson(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["auc"] = r.auc;
  j["mrr"] = r.mrr;
  j["ndcg@5"] = r.ndcg5;
  j["ndcg@10"] = r.ndcg10;
  for (const auto& [k, v] : r.recall) j["recall@" + std::to_string(k)] = v;
  j["impressions"] = r.impressions;
  j["excluded_impressions"] = r.excluded_impressions;
  j["users"] = r.users;
  j["skipped_users"] = r.skipped_users;
  j["config_fingerprint"] = r.config_fingerprint;
  j["dataset_fingerprint"] = r.dataset_fingerprint;
  j["model_fingerprint"] = r.model_fingerprint;
  return j.dump(2);
}

std::string EvalReportCsv(const EvalReport& r) {
  std::ostringstream head, row;
  row.precision(17);
  head << "auc,mrr,ndcg@5,ndcg@10";
  row << r.auc << ',' << r.mrr << ',' << r.ndcg5 << ',' << r.ndcg10;
  for (const auto& [k, v] : r.recall) {
    head << ",recall@" << k;
    row << ',' << v;
  }
  head << ",impressions,excluded_impressions,users,skipped_users,"
          "config_fingerprint,dataset_fingerprint,model_fingerprint\n";
  row << ',' << r.impressions << ',' << r.excluded_impressions << ',' << r.users << ','
      << r.skipped_users << ',' << r.config_fingerprint << ',' << r.dataset_fingerprint << ','
      << r.model_fingerprint << '\n';
  return head.str() + row.str();
}

}  // namespace speedyfeed::eval

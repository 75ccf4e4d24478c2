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

#include "speedyfeed/refine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "speedyfeed/errors.hpp"

namespace speedyfeed::text {

namespace {

const std::string& FieldText(const data::NewsArticle& a, std::size_t field) {
  switch (field) {
    case 0:
      return a.title;
    case 1:
      return a.abstract;
    default:
      return a.body;
  }
}

bool IsAlnum(char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

}  // namespace

std::vector<std::string> Tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  for (char c : text) {
    if (IsAlnum(c)) {
      current += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
    } else if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

std::vector<ObowEntry> BuildObow(std::span<const std::string> tokens,
                                 const StopwordSet& stopwords) {
  std::vector<ObowEntry> out;
  std::unordered_map<std::string_view, std::size_t> slot;
  for (const auto& t : tokens) {
    if (stopwords.count(t)) continue;
    auto [it, fresh] = slot.try_emplace(t, out.size());
    if (fresh) {
      out.push_back({t, 1, static_cast<int>(out.size())});
    } else {
      ++out[it->second].count;
    }
  }
  return out;
}

void RefineConfig::Validate() const {
  if (!(k1 > 0.0)) throw ConfigError("refine.k1 must be > 0");
  if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("refine.b must be in [0, 1]");
  if (top_k < 1) throw ConfigError("refine.top_k must be >= 1");
  if (freq_clip < 1) throw ConfigError("refine.freq_clip must be >= 1");
}

Vocabulary Vocabulary::Build(std::span<const data::NewsArticle> corpus,
                             const StopwordSet& stopwords) {
  Vocabulary v;
  std::unordered_map<std::string, std::size_t> df;
  std::array<double, kNumFields> total{};
  for (const auto& a : corpus) {
    std::unordered_set<std::string> seen;
    for (std::size_t f = 0; f < kNumFields; ++f) {
      const auto tokens = Tokenize(FieldText(a, f));
      total[f] += static_cast<double>(tokens.size());
      for (const auto& t : tokens) {
        if (!stopwords.count(t)) seen.insert(t);
      }
    }
    for (const auto& t : seen) ++df[t];
  }
  std::vector<std::pair<std::string, std::size_t>> sorted(df.begin(), df.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& x, const auto& y) {
    return x.second != y.second ? x.second > y.second : x.first < y.first;
  });
  v.tokens_ = {"[PAD]", "[CLS]", "[UNK]"};
  v.df_ = {0, 0, 0};
  for (auto& [token, count] : sorted) {
    v.index_.emplace(token, static_cast<int>(v.tokens_.size()));
    v.tokens_.push_back(token);
    v.df_.push_back(count);
  }
  v.num_docs_ = corpus.size();
  for (std::size_t f = 0; f < kNumFields; ++f) {
    v.avgdl_[f] = corpus.empty() ? 0.0 : total[f] / static_cast<double>(corpus.size());
  }
  return v;
}

int Vocabulary::Id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::Token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[id];
}

std::size_t Vocabulary::df(std::string_view token) const {
  const int id = Id(token);
  return id == kUnk ? 0 : df_[id];
}

void Vocabulary::Save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  out << std::setprecision(17);
  out << "num_docs\t" << num_docs_ << "\tavgdl";
  for (double a : avgdl_) out << '\t' << a;
  out << '\n';
  for (std::size_t id = kNumReserved; id < tokens_.size(); ++id) {
    out << tokens_[id] << '\t' << id << '\t' << df_[id] << '\n';
  }
}

Vocabulary Vocabulary::Load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary " + path);
  Vocabulary v;
  v.tokens_ = {"[PAD]", "[CLS]", "[UNK]"};
  v.df_ = {0, 0, 0};
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": missing header", 1);
  {
    std::istringstream h(line);
    std::string k1, k2;
    h >> k1 >> v.num_docs_ >> k2;
    for (double& a : v.avgdl_) h >> a;
    if (!h || k1 != "num_docs" || k2 != "avgdl") {
      throw ParseError(path + ": malformed header", 1);
    }
  }
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string token;
    std::size_t id = 0, df = 0;
    if (!(row >> token >> id >> df)) throw ParseError(path + ": malformed row", line_number);
    if (id != v.tokens_.size()) {
      throw ParseError(path + ": ids must be dense and ordered", line_number, 1);
    }
    if (df > v.num_docs_) throw ParseError(path + ": df exceeds num_docs", line_number, 2);
    v.index_.emplace(token, static_cast<int>(id));
    v.tokens_.push_back(token);
    v.df_.push_back(df);
  }
  return v;
}

bool Vocabulary::operator==(const Vocabulary& other) const {
  return tokens_ == other.tokens_ && df_ == other.df_ && num_docs_ == other.num_docs_ &&
         avgdl_ == other.avgdl_;
}

double Idf(std::size_t df, std::size_t num_docs) {
  const double n = static_cast<double>(num_docs);
  const double d = static_cast<double>(df);
  return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

double Bm25(double tf, std::size_t df, std::size_t num_docs, double doc_len,
            double avgdl, double k1, double b) {
  const double norm = avgdl > 0.0 ? doc_len / avgdl : 1.0;
  return Idf(df, num_docs) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
}

double Bm25Score(std::string_view word, std::span<const std::string> segment_tokens,
                 const Vocabulary& vocab, std::size_t field,
                 const RefineConfig& config) {
  const auto tf = std::count(segment_tokens.begin(), segment_tokens.end(), word);
  return Bm25(static_cast<double>(tf), vocab.df(word), vocab.num_docs(),
              static_cast<double>(segment_tokens.size()), vocab.avgdl(field),
              config.k1, config.b);
}

std::size_t RefinedNews::NumTokens() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += s.size();
  return n;
}

std::vector<std::size_t> SelectTopK(std::span<const double> scores, std::size_t top_k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  if (order.size() <= top_k) return order;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return scores[x] > scores[y]; });
  order.resize(top_k);
  std::sort(order.begin(), order.end());
  return order;
}

RefinedNews RefineArticle(const data::NewsArticle& article, const Vocabulary& vocab,
                          const RefineConfig& config) {
  RefinedNews out;
  out.news_id = article.news_id;
  for (std::size_t f = 0; f < kNumFields; ++f) {
    const auto tokens = Tokenize(FieldText(article, f));
    const auto obow = BuildObow(tokens, config.stopwords);
    const double doc_len = static_cast<double>(tokens.size());
    std::vector<double> scores(obow.size());
    for (std::size_t i = 0; i < obow.size(); ++i) {
      scores[i] = Bm25(obow[i].count, vocab.df(obow[i].word), vocab.num_docs(), doc_len,
                       vocab.avgdl(f), config.k1, config.b);
    }
    for (std::size_t i : SelectTopK(scores, config.top_k)) {
      out.segments[f].push_back(
          {vocab.Id(obow[i].word), obow[i].count, obow[i].first_rank});
    }
  }
  return out;
}

std::vector<RefinedNews> RefineCorpus(std::span<const data::NewsArticle> corpus,
                                      const Vocabulary& vocab,
                                      const RefineConfig& config) {
  std::vector<RefinedNews> out;
  out.reserve(corpus.size());
  for (const auto& a : corpus) out.push_back(RefineArticle(a, vocab, config));
  return out;
}

int FrequencyIndex(int count, int freq_clip) {
  if (count < 1) throw DataError("frequency index of count " + std::to_string(count));
  return std::min(count, freq_clip);
}

}  // namespace speedyfeed::text

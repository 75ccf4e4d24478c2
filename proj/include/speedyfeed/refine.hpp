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

// Content refinement: tokenization, ordered bag-of-words, BM25 top-k
// selection per segment and the vocabulary that carries the corpus
// statistics.

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "speedyfeed/corpus.hpp"
#include "speedyfeed/stopwords.hpp"

namespace speedyfeed::text {

// Title, abstract, body.
inline constexpr std::size_t kNumFields = 3;

// Lowercase ASCII alphanumeric runs; every other byte separates tokens.
std::vector<std::string> Tokenize(std::string_view text);

struct ObowEntry {
  std::string word;
  int count = 0;
  int first_rank = 0;

  bool operator==(const ObowEntry&) const = default;
};

// One entry per distinct non-stopword, in order of first appearance.
std::vector<ObowEntry> BuildObow(std::span<const std::string> tokens,
                                 const StopwordSet& stopwords);

struct RefineConfig {
  double k1 = 2.0;
  double b = 0.75;
  std::size_t top_k = 32;
  int freq_clip = 8;
  StopwordSet stopwords = DefaultStopwordSet();

  // Throws ConfigError.
  void Validate() const;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kUnk = 2;
  static constexpr int kNumReserved = 3;

  // Ids are assigned by descending document frequency, ties by token, so a
  // rebuild from the same corpus is identical. A document is one article;
  // average lengths are kept per field over raw token counts.
  static Vocabulary Build(std::span<const data::NewsArticle> corpus,
                          const StopwordSet& stopwords);

  int Id(std::string_view token) const;
  const std::string& Token(int id) const;
  std::size_t size() const { return tokens_.size(); }

  std::size_t df(std::string_view token) const;
  std::size_t num_docs() const { return num_docs_; }
  double avgdl(std::size_t field) const { return avgdl_[field]; }

  // TSV: a header `num_docs N avgdl A0 A1 A2` then `token id df` rows for
  // the non-reserved ids in id order.
  void Save(const std::string& path) const;
  static Vocabulary Load(const std::string& path);

  bool operator==(const Vocabulary& other) const;

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> df_;
  std::unordered_map<std::string, int> index_;
  std::size_t num_docs_ = 0;
  std::array<double, kNumFields> avgdl_{};
};

double Idf(std::size_t df, std::size_t num_docs);

// Okapi BM25 of one term: idf * tf (k1+1) / (tf + k1 (1 - b + b |d|/avgdl)).
double Bm25(double tf, std::size_t df, std::size_t num_docs, double doc_len,
            double avgdl, double k1, double b);

// Score of `word` within a tokenized segment of field `field`. Unknown words
// count as df = 0.
double Bm25Score(std::string_view word, std::span<const std::string> segment_tokens,
                 const Vocabulary& vocab, std::size_t field,
                 const RefineConfig& config);

struct RefinedToken {
  int token_id = Vocabulary::kUnk;
  int count = 0;
  int first_rank = 0;

  bool operator==(const RefinedToken&) const = default;
};

struct RefinedNews {
  std::string news_id;
  std::array<std::vector<RefinedToken>, kNumFields> segments;

  std::size_t NumTokens() const;
  bool operator==(const RefinedNews&) const = default;
};

// Indices of the `top_k` highest scores (ties: lower index first), returned
// in ascending index order.
std::vector<std::size_t> SelectTopK(std::span<const double> scores, std::size_t top_k);

RefinedNews RefineArticle(const data::NewsArticle& article, const Vocabulary& vocab,
                          const RefineConfig& config);

std::vector<RefinedNews> RefineCorpus(std::span<const data::NewsArticle> corpus,
                                      const Vocabulary& vocab,
                                      const RefineConfig& config);

// Index into the frequency embedding table: min(count, freq_clip).
int FrequencyIndex(int count, int freq_clip);

}  // namespace speedyfeed::text

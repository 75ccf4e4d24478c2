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

// Synthetic news corpora, user click logs, and their on-disk formats.
//
// Corpus file: one article per line, `news_id \t title \t abstract \t body`.
// Log file: one user per line,
//   `User-ID # Impression-0 ... # Impression-N`
// where each impression is `Impression-ID # Time # Clicked-list #
// Impressed-list` and lists are comma-separated news ids. The canonical
// serialization pads every '#' with single spaces.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace speedyfeed::data {

inline constexpr std::string_view kPadNewsId = "PAD";

struct NewsArticle {
  std::string news_id;
  std::string title;
  std::string abstract;
  std::string body;
  // Generator-only ground truth; -1 for articles read from disk.
  int latent_topic = -1;
};

struct Impression {
  std::string impression_id;
  std::int64_t time = 0;
  std::vector<std::string> clicked;
  std::vector<std::string> impressed;

  bool operator==(const Impression&) const = default;
};

struct UserLog {
  std::string user_id;
  std::vector<Impression> impressions;

  bool operator==(const UserLog&) const = default;
  std::size_t NumClicks() const;
};

struct CorpusOptions {
  std::size_t num_news = 10000;
  std::size_t vocab_size = 5000;
  std::size_t num_topics = 20;
  std::uint64_t seed = 1;
  // Probability that a content token comes from the article's topic rather
  // than the shared background distribution.
  double topic_token_share = 0.5;
  // Probability of emitting a stopword in place of a content token.
  double stopword_rate = 0.25;
};

std::vector<NewsArticle> GenerateCorpus(const CorpusOptions& options);

struct LogOptions {
  std::size_t num_users = 5000;
  double zipf_exponent = 1.1;
  // Popularity decays as rank^-s * exp(-rank / (cutoff * num_news)); values
  // <= 0 disable the cutoff (pure Zipf).
  double zipf_cutoff = 0.15;
  double mean_clicks = 15.0;
  std::size_t impressed_per_impression = 4;
  std::size_t favorite_topics = 2;
  // Click-weight multiplier of a user's favorite topics.
  double preference_boost = 20.0;
  std::uint64_t seed = 2;
};

std::vector<UserLog> GenerateLogs(std::span<const NewsArticle> corpus,
                                  const LogOptions& options);

// Throws ParseError naming the 0-based field index on malformed records.
UserLog ParseUserLog(std::string_view line, std::size_t line_number = 0);
std::string SerializeUserLog(const UserLog& log);

// Checks the impression/user invariants: nonempty clicks, clicked and
// impressed disjoint, strictly increasing times.
void ValidateUserLog(const UserLog& log, std::size_t line_number = 0);

void WriteCorpus(std::ostream& out, std::span<const NewsArticle> corpus);
std::vector<NewsArticle> ReadCorpus(std::istream& in);
void WriteCorpusFile(const std::string& path, std::span<const NewsArticle> corpus);
std::vector<NewsArticle> ReadCorpusFile(const std::string& path);

void WriteLogs(std::ostream& out, std::span<const UserLog> logs);
std::vector<UserLog> ReadLogs(std::istream& in);
void WriteLogFile(const std::string& path, std::span<const UserLog> logs);
std::vector<UserLog> ReadLogFile(const std::string& path);

// Share of all clicks captured by the top-alpha most clicked articles, for
// each alpha (fractions of `num_news`).
std::vector<double> TopClickShares(std::span<const UserLog> logs,
                                   std::size_t num_news,
                                   std::span<const double> alphas);

// Splits every user's impressions in time order: the last `test_fraction`
// (rounded down, at least one when the user has two or more impressions) go
// to the held-out part.
struct SplitLogs {
  std::vector<UserLog> train;
  std::vector<UserLog> test;
};
SplitLogs TemporalSplit(std::span<const UserLog> logs, double test_fraction);

}  // namespace speedyfeed::data

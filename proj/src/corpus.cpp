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

#include "speedyfeed/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include "speedyfeed/errors.hpp"
#include "speedyfeed/rng.hpp"
#include "speedyfeed/stopwords.hpp"

namespace speedyfeed::data {

namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

// Deterministic pronounceable word for a vocabulary index: two CV syllables
// for the first 4900 indices, three afterwards.
std::string SynthWord(std::size_t index) {
  const std::size_t syllables = kConsonants.size() * kVowels.size();
  std::size_t n = index;
  std::size_t count = 2;
  if (n >= syllables * syllables) {
    n -= syllables * syllables;
    count = 3;
  }
  std::string word;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t s = n % syllables;
    n /= syllables;
    word += kConsonants[s / kVowels.size()];
    word += kVowels[s % kVowels.size()];
  }
  return word;
}

std::vector<double> ZipfWeights(std::size_t n, double exponent) {
  std::vector<double> w(n);
  for (std::size_t r = 0; r < n; ++r) w[r] = std::pow(static_cast<double>(r + 1), -exponent);
  return w;
}

struct TopicModel {
  std::vector<std::string> words;
  DiscreteSampler background;
  std::vector<std::vector<std::size_t>> topic_words;
  std::vector<DiscreteSampler> topic_samplers;
};

TopicModel BuildTopicModel(const CorpusOptions& options, Rng& rng) {
  TopicModel model;
  const StopwordSet stop = DefaultStopwordSet();
  for (std::size_t i = 0; model.words.size() < options.vocab_size; ++i) {
    std::string w = SynthWord(i);
    if (!stop.count(w)) model.words.push_back(std::move(w));
  }
  const auto bg = ZipfWeights(options.vocab_size, 1.0);
  model.background = DiscreteSampler(bg);

  std::vector<std::size_t> perm(options.vocab_size);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.Shuffle(perm);
  model.topic_words.resize(options.num_topics);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    model.topic_words[i % options.num_topics].push_back(perm[i]);
  }
  for (const auto& words : model.topic_words) {
    if (words.empty()) {
      // More topics than words: fall back to the background distribution.
      model.topic_samplers.push_back(model.background);
      continue;
    }
    const auto w = ZipfWeights(words.size(), 1.0);
    model.topic_samplers.emplace_back(w);
  }
  return model;
}

std::string SampleText(const TopicModel& model, const CorpusOptions& options,
                       int topic, std::size_t length, Rng& rng) {
  std::string text;
  for (std::size_t i = 0; i < length; ++i) {
    std::string token;
    if (rng.Bernoulli(options.stopword_rate)) {
      token = kDefaultStopwords[rng.UniformInt(kDefaultStopwords.size())];
    } else if (rng.Bernoulli(options.topic_token_share) &&
               !model.topic_words[topic].empty()) {
      const auto& words = model.topic_words[topic];
      token = model.words[words[model.topic_samplers[topic].Sample(rng)]];
    } else {
      token = model.words[model.background.Sample(rng)];
    }
    if (i == 0) token[0] = static_cast<char>(token[0] - 'a' + 'A');
    if (!text.empty()) text += ' ';
    text += token;
    const double u = rng.Uniform();
    if (u < 0.04) {
      text += ',';
    } else if (u < 0.08) {
      text += '.';
    }
  }
  return text;
}

void RequirePositive(std::size_t value, const char* name) {
  if (value == 0) throw ConfigError(std::string(name) + " must be >= 1");
}

std::string_view Trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> Split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

std::vector<std::string> ParseIdList(std::string_view field, std::size_t line,
                                     std::size_t index) {
  std::vector<std::string> out;
  if (field.empty()) return out;
  for (std::string_view id : Split(field, ',')) {
    id = Trim(id);
    if (id.empty()) throw ParseError("empty news id in list", line, index);
    out.emplace_back(id);
  }
  return out;
}

std::string JoinIds(const std::vector<std::string>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ',';
    out += ids[i];
  }
  return out;
}

}  // namespace

std::size_t UserLog::NumClicks() const {
  std::size_t n = 0;
  for (const auto& imp : impressions) n += imp.clicked.size();
  return n;
}

std::vector<NewsArticle> GenerateCorpus(const CorpusOptions& options) {
  RequirePositive(options.num_news, "num_news");
  RequirePositive(options.vocab_size, "vocab_size");
  RequirePositive(options.num_topics, "num_topics");
  Rng rng(options.seed);
  const TopicModel model = BuildTopicModel(options, rng);

  std::vector<NewsArticle> corpus;
  corpus.reserve(options.num_news);
  for (std::size_t i = 0; i < options.num_news; ++i) {
    Rng article_rng = Rng::Derive(options.seed, i);
    NewsArticle a;
    a.news_id = "N" + std::to_string(i + 1);
    a.latent_topic = static_cast<int>(article_rng.UniformInt(options.num_topics));
    a.title = SampleText(model, options, a.latent_topic,
                         article_rng.UniformInt(10, 20), article_rng);
    a.abstract = SampleText(model, options, a.latent_topic,
                            article_rng.UniformInt(20, 40), article_rng);
    a.body = SampleText(model, options, a.latent_topic,
                        article_rng.UniformInt(100, 600), article_rng);
    corpus.push_back(std::move(a));
  }
  return corpus;
}

std::vector<UserLog> GenerateLogs(std::span<const NewsArticle> corpus,
                                  const LogOptions& options) {
  if (corpus.empty()) throw ConfigError("GenerateLogs: corpus is empty");
  RequirePositive(options.num_users, "num_users");
  if (!(options.zipf_exponent >= 0.0)) throw ConfigError("zipf exponent must be >= 0");
  if (!(options.mean_clicks >= 1.0)) throw ConfigError("mean_clicks must be >= 1");
  if (!(options.preference_boost >= 1.0)) throw ConfigError("preference_boost must be >= 1");

  const std::size_t n = corpus.size();
  Rng rng(options.seed);

  // Popularity rank is a random permutation of the corpus.
  std::vector<std::size_t> rank_of(n);
  for (std::size_t i = 0; i < n; ++i) rank_of[i] = i;
  rng.Shuffle(rank_of);
  std::vector<double> popularity(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = static_cast<double>(rank_of[i] + 1);
    double w = std::pow(r, -options.zipf_exponent);
    if (options.zipf_cutoff > 0.0) {
      w *= std::exp(-r / (options.zipf_cutoff * static_cast<double>(n)));
    }
    popularity[i] = w;
  }
  const DiscreteSampler global(popularity);

  int num_topics = 1;
  for (const auto& a : corpus) num_topics = std::max(num_topics, a.latent_topic + 1);
  std::vector<std::vector<std::size_t>> topic_articles(num_topics);
  for (std::size_t i = 0; i < n; ++i) {
    topic_articles[std::max(corpus[i].latent_topic, 0)].push_back(i);
  }
  std::vector<DiscreteSampler> topic_samplers(num_topics);
  std::vector<double> topic_mass(num_topics, 0.0);
  for (int k = 0; k < num_topics; ++k) {
    if (topic_articles[k].empty()) continue;
    std::vector<double> w;
    for (std::size_t i : topic_articles[k]) w.push_back(popularity[i]);
    topic_samplers[k] = DiscreteSampler(w);
    topic_mass[k] = topic_samplers[k].total();
  }

  const double stop_p = 1.0 / options.mean_clicks;
  std::vector<UserLog> logs;
  logs.reserve(options.num_users);
  for (std::size_t u = 0; u < options.num_users; ++u) {
    Rng urng = Rng::Derive(options.seed, u);
    std::vector<double> topic_weight(topic_mass);
    std::vector<int> topics;
    for (int k = 0; k < num_topics; ++k) {
      if (topic_mass[k] > 0.0) topics.push_back(k);
    }
    urng.Shuffle(topics);
    const std::size_t favorites = std::min(options.favorite_topics, topics.size());
    for (std::size_t f = 0; f < favorites; ++f) {
      topic_weight[topics[f]] *= options.preference_boost;
    }
    const DiscreteSampler topic_sampler(topic_weight);

    UserLog log;
    log.user_id = "U" + std::to_string(u + 1);
    const std::size_t clicks = 1 + urng.Geometric(stop_p);
    std::unordered_set<std::size_t> seen;
    std::int64_t time = static_cast<std::int64_t>(urng.UniformInt(1000000));
    for (std::size_t c = 0; c < clicks; ++c) {
      std::size_t article = 0;
      for (int attempt = 0; attempt < 20; ++attempt) {
        const std::size_t k = topic_sampler.Sample(urng);
        article = topic_articles[k][topic_samplers[k].Sample(urng)];
        if (!seen.count(article)) break;
      }
      seen.insert(article);

      Impression imp;
      imp.impression_id = log.user_id + "-" + std::to_string(c + 1);
      time += 1 + static_cast<std::int64_t>(urng.UniformInt(3600));
      imp.time = time;
      imp.clicked.push_back(corpus[article].news_id);
      const std::size_t want = std::min(options.impressed_per_impression, n - 1);
      std::unordered_set<std::size_t> shown = {article};
      for (std::size_t attempt = 0; imp.impressed.size() < want && attempt < 50 * want + 50;
           ++attempt) {
        const std::size_t cand = global.Sample(urng);
        if (shown.insert(cand).second) imp.impressed.push_back(corpus[cand].news_id);
      }
      log.impressions.push_back(std::move(imp));
    }
    logs.push_back(std::move(log));
  }
  return logs;
}

void ValidateUserLog(const UserLog& log, std::size_t line_number) {
  if (log.user_id.empty()) throw ParseError("empty user id", line_number, 0);
  if (log.impressions.empty()) throw ParseError("user has no impressions", line_number);
  for (std::size_t i = 0; i < log.impressions.size(); ++i) {
    const Impression& imp = log.impressions[i];
    const std::size_t base = 1 + 4 * i;
    if (imp.clicked.empty()) {
      throw ParseError("clicked list is empty", line_number, base + 2);
    }
    const std::unordered_set<std::string> clicked(imp.clicked.begin(), imp.clicked.end());
    for (const auto& id : imp.impressed) {
      if (clicked.count(id)) {
        throw ParseError("news " + id + " is both clicked and impressed",
                         line_number, base + 3);
      }
    }
    if (i > 0 && imp.time <= log.impressions[i - 1].time) {
      throw ParseError("impression times must strictly increase", line_number,
                       base + 1);
    }
  }
}

UserLog ParseUserLog(std::string_view line, std::size_t line_number) {
  const auto raw = Split(line, '#');
  std::vector<std::string_view> fields;
  for (auto f : raw) fields.push_back(Trim(f));
  if (fields.size() < 5 || (fields.size() - 1) % 4 != 0) {
    // Index of the first field a well-formed record would still need.
    const std::size_t missing = fields.size();
    throw ParseError("expected 'User-ID # Impression-ID # Time # Clicked-list # "
                     "Impressed-list' groups; got " +
                         std::to_string(fields.size()) + " fields",
                     line_number, missing);
  }
  UserLog log;
  log.user_id = std::string(fields[0]);
  if (log.user_id.empty()) throw ParseError("empty user id", line_number, 0);
  for (std::size_t base = 1; base < fields.size(); base += 4) {
    Impression imp;
    imp.impression_id = std::string(fields[base]);
    if (imp.impression_id.empty()) {
      throw ParseError("empty impression id", line_number, base);
    }
    const std::string_view t = fields[base + 1];
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), imp.time);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
      throw ParseError("time '" + std::string(t) + "' is not an integer",
                       line_number, base + 1);
    }
    imp.clicked = ParseIdList(fields[base + 2], line_number, base + 2);
    imp.impressed = ParseIdList(fields[base + 3], line_number, base + 3);
    log.impressions.push_back(std::move(imp));
  }
  ValidateUserLog(log, line_number);
  return log;
}

std::string SerializeUserLog(const UserLog& log) {
  std::string out = log.user_id;
  for (const auto& imp : log.impressions) {
    out += " # " + imp.impression_id;
    out += " # " + std::to_string(imp.time);
    out += " # " + JoinIds(imp.clicked);
    out += " # " + JoinIds(imp.impressed);
  }
  return out;
}

void WriteCorpus(std::ostream& out, std::span<const NewsArticle> corpus) {
  for (const auto& a : corpus) {
    for (const std::string* f : {&a.news_id, &a.title, &a.abstract, &a.body}) {
      if (f->find_first_of("\t\n\r") != std::string::npos) {
        throw DataError("article " + a.news_id + " contains a tab or newline");
      }
    }
    out << a.news_id << '\t' << a.title << '\t' << a.abstract << '\t' << a.body << '\n';
  }
}

std::vector<NewsArticle> ReadCorpus(std::istream& in) {
  std::vector<NewsArticle> corpus;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = Split(line, '\t');
    if (fields.size() != 4) {
      throw ParseError("expected 4 tab-separated fields, got " +
                           std::to_string(fields.size()),
                       line_number, std::min<std::size_t>(fields.size(), 4));
    }
    NewsArticle a;
    a.news_id = std::string(fields[0]);
    a.title = std::string(fields[1]);
    a.abstract = std::string(fields[2]);
    a.body = std::string(fields[3]);
    if (a.news_id.empty() || a.news_id == kPadNewsId) {
      throw ParseError("invalid news id '" + a.news_id + "'", line_number, 0);
    }
    if (!ids.insert(a.news_id).second) {
      throw ParseError("duplicate news id " + a.news_id, line_number, 0);
    }
    corpus.push_back(std::move(a));
  }
  return corpus;
}

void WriteCorpusFile(const std::string& path, std::span<const NewsArticle> corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  WriteCorpus(out, corpus);
}

std::vector<NewsArticle> ReadCorpusFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus " + path);
  try {
    return ReadCorpus(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

void WriteLogs(std::ostream& out, std::span<const UserLog> logs) {
  for (const auto& log : logs) out << SerializeUserLog(log) << '\n';
}

std::vector<UserLog> ReadLogs(std::istream& in) {
  std::vector<UserLog> logs;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (Trim(line).empty()) continue;
    logs.push_back(ParseUserLog(line, line_number));
  }
  return logs;
}

void WriteLogFile(const std::string& path, std::span<const UserLog> logs) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path + " for writing");
  WriteLogs(out, logs);
}

std::vector<UserLog> ReadLogFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open log file " + path);
  try {
    return ReadLogs(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

std::vector<double> TopClickShares(std::span<const UserLog> logs,
                                   std::size_t num_news,
                                   std::span<const double> alphas) {
  std::unordered_map<std::string, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& log : logs) {
    for (const auto& imp : log.impressions) {
      for (const auto& id : imp.clicked) {
        ++counts[id];
        ++total;
      }
    }
  }
  std::vector<std::size_t> sorted;
  sorted.reserve(counts.size());
  for (const auto& [id, c] : counts) sorted.push_back(c);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  std::vector<double> shares;
  for (double alpha : alphas) {
    const auto top = static_cast<std::size_t>(
        std::max(1.0, std::round(alpha * static_cast<double>(num_news))));
    std::size_t captured = 0;
    for (std::size_t i = 0; i < std::min(top, sorted.size()); ++i) captured += sorted[i];
    shares.push_back(total == 0 ? 0.0 : static_cast<double>(captured) / total);
  }
  return shares;
}

SplitLogs TemporalSplit(std::span<const UserLog> logs, double test_fraction) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test fraction must be in [0, 1)");
  }
  SplitLogs out;
  for (const auto& log : logs) {
    const std::size_t n = log.impressions.size();
    std::size_t held = static_cast<std::size_t>(std::floor(test_fraction * n));
    if (held == 0 && n >= 2 && test_fraction > 0.0) held = 1;
    UserLog train{log.user_id, {}};
    train.impressions.assign(log.impressions.begin(), log.impressions.end() - held);
    out.train.push_back(std::move(train));
    if (held > 0) {
      UserLog test{log.user_id, {}};
      test.impressions.assign(log.impressions.end() - held, log.impressions.end());
      out.test.push_back(std::move(test));
    }
  }
  return out;
}

}  // namespace speedyfeed::data

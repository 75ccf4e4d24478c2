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

#include "speedyfeed/config.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "json.hpp"
#include "speedyfeed/errors.hpp"
#include "speedyfeed/rng.hpp"
#include "speedyfeed/stopwords.hpp"

namespace speedyfeed {

namespace {

using Json = nlohmann::ordered_json;

// Reads fields present in a JSON object and reports keys nobody asked for.
class Reader {
 public:
  explicit Reader(const Json& root) { stack_.push_back({&root, "", {}}); }

  template <typename T>
  void Field(const std::string& key, T& value) {
    Frame& f = stack_.back();
    f.used.insert(key);
    const auto it = f.json->find(key);
    if (it == f.json->end()) return;
    try {
      if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t> ||
                    std::is_same_v<T, int>) {
        if (!it->is_number_integer() || it->template get<std::int64_t>() < 0) {
          throw ConfigError(Name(key) + " must be a non-negative integer");
        }
      }
      if constexpr (std::is_same_v<T, double>) {
        if (!it->is_number()) throw ConfigError(Name(key) + " must be a number");
      }
      value = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(Name(key) + " has the wrong type");
    }
  }

  void Section(const std::string& key, const std::function<void()>& body) {
    Frame& f = stack_.back();
    f.used.insert(key);
    const auto it = f.json->find(key);
    if (it == f.json->end()) return;
    if (!it->is_object()) throw ConfigError(Name(key) + " must be an object");
    stack_.push_back({&*it, Name(key), {}});
    body();
    Finish();
    stack_.pop_back();
  }

  void Finish() {
    const Frame& f = stack_.back();
    for (const auto& [k, v] : f.json->items()) {
      if (!f.used.count(k)) throw ConfigError("unknown config key " + Name(k));
    }
  }

 private:
  struct Frame {
    const Json* json;
    std::string path;
    std::set<std::string> used;
  };
  std::string Name(const std::string& key) const {
    const std::string& p = stack_.back().path;
    return p.empty() ? key : p + "." + key;
  }
  std::vector<Frame> stack_;
};

class Writer {
 public:
  template <typename T>
  void Field(const std::string& key, T& value) {
    (*stack_.back())[key] = value;
  }
  void Section(const std::string& key, const std::function<void()>& body) {
    Json& parent = *stack_.back();
    parent[key] = Json::object();
    stack_.push_back(&parent[key]);
    body();
    stack_.pop_back();
  }
  Json root = Json::object();

 private:
  std::vector<Json*> stack_ = {&root};
};

// The single list of configurable fields, shared by reading and writing.
template <typename V>
void Visit(RunConfig& c, V& v) {
  v.Field("seed", c.seed);
  v.Section("paths", [&] {
    v.Field("data_dir", c.paths.data_dir);
    v.Field("out_dir", c.paths.out_dir);
    v.Field("report_dir", c.paths.report_dir);
    v.Field("stopwords", c.paths.stopwords);
  });
  v.Section("corpus", [&] {
    v.Field("num_news", c.corpus.num_news);
    v.Field("vocab_size", c.corpus.vocab_size);
    v.Field("num_topics", c.corpus.num_topics);
    v.Field("topic_token_share", c.corpus.topic_token_share);
    v.Field("stopword_rate", c.corpus.stopword_rate);
  });
  v.Section("logs", [&] {
    v.Field("num_users", c.logs.num_users);
    v.Field("zipf_exponent", c.logs.zipf_exponent);
    v.Field("zipf_cutoff", c.logs.zipf_cutoff);
    v.Field("mean_clicks", c.logs.mean_clicks);
    v.Field("impressed_per_impression", c.logs.impressed_per_impression);
    v.Field("favorite_topics", c.logs.favorite_topics);
    v.Field("preference_boost", c.logs.preference_boost);
    v.Field("test_fraction", c.test_fraction);
  });
  v.Section("refine", [&] {
    v.Field("k1", c.refine.k1);
    v.Field("b", c.refine.b);
    v.Field("top_k", c.refine.top_k);
    v.Field("freq_clip", c.refine.freq_clip);
  });
  v.Section("encoder", [&] {
    v.Field("num_layers", c.encoder.num_layers);
    v.Field("hidden_dim", c.encoder.hidden_dim);
    v.Field("num_heads", c.encoder.num_heads);
    v.Field("num_segments", c.encoder.num_segments);
    v.Field("ffn_dim", c.encoder.ffn_dim);
    v.Field("dropout", c.encoder.dropout);
    v.Field("use_bus", c.encoder.use_bus);
  });
  v.Section("cache", [&] {
    v.Field("beta", c.cache.beta);
    v.Field("gamma", c.cache.gamma);
    v.Field("per_news", c.cache.per_news);
  });
  v.Section("loader", [&] {
    v.Field("boundaries", c.loader.boundaries);
    v.Field("token_budget", c.loader.token_budget);
    v.Field("producers", c.loader.producers);
    v.Field("queue_capacity", c.loader.queue_capacity);
    v.Field("max_history", c.loader.max_history);
    v.Field("negative_ratio", c.loader.negative_ratio);
  });
  v.Section("optim", [&] {
    v.Field("encoder_lr", c.optim.encoder_lr);
    v.Field("user_lr", c.optim.user_lr);
    v.Field("beta1", c.optim.beta1);
    v.Field("beta2", c.optim.beta2);
    v.Field("eps", c.optim.eps);
  });
  v.Section("train", [&] {
    v.Field("epochs", c.train.epochs);
    v.Field("checkpoint_every", c.train.checkpoint_every);
    v.Field("max_steps", c.train.max_steps);
  });
  v.Section("eval", [&] {
    v.Field("recall_ks", c.eval.recall_ks);
    v.Field("threads", c.eval.threads);
  });
  v.Section("bench", [&] {
    v.Field("users", c.bench.users);
    v.Field("clicks", c.bench.clicks);
    v.Field("epochs", c.bench.epochs);
    v.Field("run_naive", c.bench.run_naive);
  });
}

}  // namespace

void RunConfig::Resolve() {
  corpus.seed = Rng::Derive(seed, 1).NextU64();
  logs.seed = Rng::Derive(seed, 2).NextU64();
  loader.seed = Rng::Derive(seed, 3).NextU64();
  cache.seed = Rng::Derive(seed, 4).NextU64();
  refine.stopwords = paths.stopwords.empty() ? DefaultStopwordSet() : LoadStopwords(paths.stopwords);
  encoder.max_segment_len = refine.top_k;
  encoder.freq_clip = refine.freq_clip;
  eval.max_history = loader.max_history;
  if (encoder.num_segments == 1) encoder.max_segment_len = text::kNumFields * refine.top_k;
}

void RunConfig::Validate() const {
  if (corpus.num_news < 2) throw ConfigError("corpus.num_news must be >= 2");
  if (corpus.num_topics < 1) throw ConfigError("corpus.num_topics must be >= 1");
  if (corpus.vocab_size < corpus.num_topics) throw ConfigError("corpus.vocab_size must be >= num_topics");
  if (!(corpus.topic_token_share >= 0.0 && corpus.topic_token_share <= 1.0)) {
    throw ConfigError("corpus.topic_token_share must be in [0, 1]");
  }
  if (!(corpus.stopword_rate >= 0.0 && corpus.stopword_rate < 1.0)) {
    throw ConfigError("corpus.stopword_rate must be in [0, 1)");
  }
  if (logs.num_users < 1) throw ConfigError("logs.num_users must be >= 1");
  if (!(logs.zipf_exponent > 0.0)) throw ConfigError("logs.zipf_exponent must be > 0");
  if (!(logs.mean_clicks >= 1.0)) throw ConfigError("logs.mean_clicks must be >= 1");
  if (logs.impressed_per_impression < 1) throw ConfigError("logs.impressed_per_impression must be >= 1");
  if (!(logs.preference_boost >= 1.0)) throw ConfigError("logs.preference_boost must be >= 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("logs.test_fraction must be in (0, 1)");
  refine.Validate();
  model::EncoderConfig enc = encoder;
  enc.vocab_size = text::Vocabulary::kNumReserved + 1;
  enc.Validate();
  cache.Validate();
  loader.Validate(text::kNumFields * refine.top_k);
  if (!(optim.encoder_lr > 0.0) || !(optim.user_lr > 0.0)) throw ConfigError("optim learning rates must be > 0");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
    throw ConfigError("optim betas must be in [0, 1)");
  }
  if (!(optim.eps > 0.0)) throw ConfigError("optim.eps must be > 0");
  if (train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (eval.threads < 1) throw ConfigError("eval.threads must be >= 1");
  for (std::size_t k : eval.recall_ks) {
    if (k < 1) throw ConfigError("eval.recall_ks entries must be >= 1");
  }
  if (bench.users < 1) throw ConfigError("bench.users must be >= 1");
  if (bench.clicks == 1) throw ConfigError("bench.clicks must be 0 or >= 2");
  if (bench.epochs < 1) throw ConfigError("bench.epochs must be >= 1");
}

RunConfig ParseRunConfig(const std::string& json_text) {
  Json root;
  try {
    root = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  Reader r(root);
  Visit(c, r);
  r.Finish();
  return c;
}

RunConfig LoadRunConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream s;
  s << in.rdbuf();
  return ParseRunConfig(s.str());
}

std::string RunConfigJson(const RunConfig& config) {
  RunConfig copy = config;
  Writer w;
  Visit(copy, w);
  return w.root.dump(2) + "\n";
}

void SaveRunConfig(const std::string& path, const RunConfig& config) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out << RunConfigJson(config);
}

}  // namespace speedyfeed

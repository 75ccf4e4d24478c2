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

#include "speedyfeed/encoder.hpp"

#include <cmath>
#include <string>

#include "speedyfeed/errors.hpp"

namespace speedyfeed::model {

using ad::Tensor;

namespace {

Tensor RandomTensor(ad::Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(ad::NumElements(shape));
  for (double& x : v) x = rng.Normal(0.0, stddev);
  return Tensor::FromData(std::move(shape), std::move(v));
}

Tensor Filled(ad::Shape shape, double value) {
  return Tensor::FromData(shape, std::vector<double>(ad::NumElements(shape), value));
}

// [n] -> [n, 1] scores of q . tanh(x W + b) for every row of x.
Tensor AdditiveScores(const Tensor& x, const PoolParams& pool) {
  const std::size_t d = pool.q.dim(0);
  return ad::MatMul(ad::Tanh(ad::Linear(x, pool.w, pool.b)), ad::Reshape(pool.q, {d, 1}));
}

Tensor MaskedPool(const Tensor& rows, const ad::Mask& mask, const PoolParams& pool) {
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  const Tensor scores = ad::Reshape(AdditiveScores(rows, pool), {n});
  const Tensor alpha = ad::Softmax(scores, &mask);
  return ad::Reshape(ad::MatMul(ad::Reshape(alpha, {1, n}), rows), {d});
}

bool AnyVisible(const ad::Mask& mask) {
  for (auto m : mask) {
    if (m) return true;
  }
  return false;
}

}  // namespace

void EncoderConfig::Validate() const {
  if (num_layers < 1) throw ConfigError("encoder.num_layers must be >= 1");
  if (hidden_dim < 1 || num_heads < 1 || hidden_dim % num_heads != 0) {
    throw ConfigError("encoder.hidden_dim must be a positive multiple of num_heads");
  }
  if (num_segments != 1 && num_segments != text::kNumFields) {
    throw ConfigError("encoder.num_segments must be 1 or " +
                      std::to_string(text::kNumFields));
  }
  if (max_segment_len < 1) throw ConfigError("encoder.max_segment_len must be >= 1");
  if (ffn_dim < 1) throw ConfigError("encoder.ffn_dim must be >= 1");
  if (vocab_size <= static_cast<std::size_t>(text::Vocabulary::kNumReserved)) {
    throw ConfigError("encoder.vocab_size must exceed the reserved ids");
  }
  if (freq_clip < 1) throw ConfigError("encoder.freq_clip must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("encoder.dropout must be in [0, 1)");
}

Tensor GatherBus(std::span<const Tensor> segment_states) {
  std::vector<Tensor> rows;
  rows.reserve(segment_states.size());
  for (const Tensor& h : segment_states) rows.push_back(ad::SliceRows(h, 0, 1));
  return ad::Concat(rows, 0);
}

Tensor BusTransformerLayer(const Tensor& h, const Tensor& bus, const LayerParams& layer,
                           const ad::Mask& mask, std::size_t num_heads,
                           std::uint64_t* attention_multiplies) {
  const std::size_t len = h.dim(0), d = h.dim(1);
  if (mask.size() != len) {
    throw DimensionError("BusTransformerLayer: mask has " + std::to_string(mask.size()) +
                         " entries for " + std::to_string(len) + " rows");
  }
  const std::size_t bus_rows = bus.defined() ? bus.dim(0) : 0;
  if (bus.defined() && (bus.rank() != 2 || bus.dim(1) != d)) {
    throw DimensionError("BusTransformerLayer: bus shape " + ad::ShapeString(bus.shape()));
  }
  Tensor kv_in = h;
  if (bus.defined()) {
    const Tensor parts[] = {h, bus};
    kv_in = ad::Concat(parts, 0);
  }
  const std::size_t nk = len + bus_rows;
  ad::Mask score_mask(len * nk, 1);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < len; ++j) score_mask[i * nk + j] = mask[j];
  }
  const Tensor q = ad::Linear(h, layer.wq, layer.bq);
  const Tensor k = ad::Linear(kv_in, layer.wk, layer.bk);
  const Tensor v = ad::Linear(kv_in, layer.wv, layer.bv);
  const std::size_t dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> heads;
  for (std::size_t hd = 0; hd < num_heads; ++hd) {
    const Tensor qh = ad::SliceCols(q, hd * dh, (hd + 1) * dh);
    const Tensor kh = ad::SliceCols(k, hd * dh, (hd + 1) * dh);
    const Tensor vh = ad::SliceCols(v, hd * dh, (hd + 1) * dh);
    const Tensor scores = ad::Scale(ad::MatMulTransposed(qh, kh), scale);
    heads.push_back(ad::MatMul(ad::Softmax(scores, &score_mask), vh));
  }
  if (attention_multiplies) *attention_multiplies += static_cast<std::uint64_t>(len) * nk * d;
  const Tensor attended = ad::Linear(ad::Concat(heads, 1), layer.wo, layer.bo);
  const Tensor x1 = ad::LayerNorm(ad::Add(h, attended), layer.ln1_gain, layer.ln1_bias);
  const Tensor ffn = ad::Linear(ad::Gelu(ad::Linear(x1, layer.w1, layer.b1)), layer.w2, layer.b2);
  return ad::LayerNorm(ad::Add(x1, ffn), layer.ln2_gain, layer.ln2_bias);
}

Tensor PoolTokens(const Tensor& h, const ad::Mask& mask, const PoolParams& pool) {
  if (mask.size() != h.dim(0)) throw DimensionError("PoolTokens: mask/shape mismatch");
  if (!AnyVisible(mask)) return Tensor::Zeros({h.dim(1)});
  return MaskedPool(h, mask, pool);
}

Tensor PoolSegments(std::span<const Tensor> segment_vectors, const ad::Mask& segment_mask,
                    const PoolParams& pool) {
  if (segment_mask.size() != segment_vectors.size()) {
    throw DimensionError("PoolSegments: mask/segment count mismatch");
  }
  if (!AnyVisible(segment_mask)) throw DataError("PoolSegments: every segment is empty");
  const std::size_t k = segment_vectors.size(), d = segment_vectors[0].dim(0);
  const Tensor stacked = ad::Reshape(ad::Concat(segment_vectors, 0), {k, d});
  return MaskedPool(stacked, segment_mask, pool);
}

std::uint64_t AttentionScoreMultiplies(std::span<const std::size_t> lens,
                                       std::size_t bus_rows, std::size_t hidden_dim) {
  std::uint64_t total = 0;
  for (std::size_t len : lens) total += static_cast<std::uint64_t>(len) * (len + bus_rows) * hidden_dim;
  return total;
}

BusLM::BusLM(const EncoderConfig& config, ad::ParameterSet& params, Rng& rng)
    : config_(config) {
  config_.Validate();
  const std::size_t d = config_.hidden_dim, f = config_.ffn_dim;
  const double emb_std = 0.1;
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double f_std = 1.0 / std::sqrt(static_cast<double>(f));
  const std::string g = "encoder";
  token_emb_ = params.Add("enc.token_emb", RandomTensor({config_.vocab_size, d}, emb_std, rng), g);
  position_emb_ = params.Add("enc.position_emb",
                             RandomTensor({config_.max_segment_len + 1, d}, emb_std, rng), g);
  segment_emb_ = params.Add("enc.segment_emb",
                            RandomTensor({config_.num_segments, d}, emb_std, rng), g);
  frequency_emb_ = params.Add(
      "enc.frequency_emb",
      RandomTensor({static_cast<std::size_t>(config_.freq_clip) + 1, d}, emb_std, rng), g);
  emb_ln_gain_ = params.Add("enc.emb_ln.gain", Filled({d}, 1.0), g);
  emb_ln_bias_ = params.Add("enc.emb_ln.bias", Filled({d}, 0.0), g);
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = "enc.layer" + std::to_string(l) + ".";
    LayerParams lp;
    lp.wq = params.Add(p + "wq", RandomTensor({d, d}, w_std, rng), g);
    lp.bq = params.Add(p + "bq", Filled({d}, 0.0), g);
    lp.wk = params.Add(p + "wk", RandomTensor({d, d}, w_std, rng), g);
    lp.bk = params.Add(p + "bk", Filled({d}, 0.0), g);
    lp.wv = params.Add(p + "wv", RandomTensor({d, d}, w_std, rng), g);
    lp.bv = params.Add(p + "bv", Filled({d}, 0.0), g);
    lp.wo = params.Add(p + "wo", RandomTensor({d, d}, w_std, rng), g);
    lp.bo = params.Add(p + "bo", Filled({d}, 0.0), g);
    lp.ln1_gain = params.Add(p + "ln1.gain", Filled({d}, 1.0), g);
    lp.ln1_bias = params.Add(p + "ln1.bias", Filled({d}, 0.0), g);
    lp.w1 = params.Add(p + "w1", RandomTensor({d, f}, w_std, rng), g);
    lp.b1 = params.Add(p + "b1", Filled({f}, 0.0), g);
    lp.w2 = params.Add(p + "w2", RandomTensor({f, d}, f_std, rng), g);
    lp.b2 = params.Add(p + "b2", Filled({d}, 0.0), g);
    lp.ln2_gain = params.Add(p + "ln2.gain", Filled({d}, 1.0), g);
    lp.ln2_bias = params.Add(p + "ln2.bias", Filled({d}, 0.0), g);
    layers_.push_back(std::move(lp));
  }
  token_pool_.w = params.Add("enc.token_pool.w", RandomTensor({d, d}, w_std, rng), g);
  token_pool_.b = params.Add("enc.token_pool.b", Filled({d}, 0.0), g);
  token_pool_.q = params.Add("enc.token_pool.q", RandomTensor({d}, w_std, rng), g);
  segment_pool_.w = params.Add("enc.segment_pool.w", RandomTensor({d, d}, w_std, rng), g);
  segment_pool_.b = params.Add("enc.segment_pool.b", Filled({d}, 0.0), g);
  segment_pool_.q = params.Add("enc.segment_pool.q", RandomTensor({d}, w_std, rng), g);
}

std::vector<std::vector<BusLM::InputToken>> BusLM::SegmentTokens(
    const text::RefinedNews& news) const {
  std::vector<std::vector<InputToken>> out(config_.num_segments);
  for (std::size_t f = 0; f < text::kNumFields; ++f) {
    auto& seg = out[config_.num_segments == 1 ? 0 : f];
    if (seg.empty()) seg.push_back({text::Vocabulary::kCls, 0, 1});
    for (const auto& t : news.segments[f]) {
      if (t.token_id < 0 || static_cast<std::size_t>(t.token_id) >= config_.vocab_size) {
        throw DataError("news " + news.news_id + ": token id " + std::to_string(t.token_id) +
                        " outside the embedding table");
      }
      const int position = static_cast<int>(seg.size());
      seg.push_back({t.token_id, position, text::FrequencyIndex(t.count, config_.freq_clip)});
    }
  }
  for (const auto& seg : out) {
    if (seg.size() - 1 > config_.max_segment_len) {
      throw DimensionError("news " + news.news_id + ": segment of " +
                           std::to_string(seg.size() - 1) + " words exceeds max_segment_len " +
                           std::to_string(config_.max_segment_len));
    }
  }
  return out;
}

std::vector<std::size_t> BusLM::SegmentLengths(const text::RefinedNews& news) const {
  std::vector<std::size_t> lens;
  for (const auto& seg : SegmentTokens(news)) lens.push_back(seg.size());
  return lens;
}

std::vector<SegmentInput> BusLM::EmbedInputs(const text::RefinedNews& news) const {
  std::vector<SegmentInput> out;
  const auto segments = SegmentTokens(news);
  for (std::size_t j = 0; j < segments.size(); ++j) {
    const auto& seg = segments[j];
    std::vector<int> tok, pos, sid(seg.size(), static_cast<int>(j)), freq;
    for (const auto& t : seg) {
      tok.push_back(t.token);
      pos.push_back(t.position);
      freq.push_back(t.frequency);
    }
    Tensor x = ad::Add(ad::Add(ad::EmbeddingLookup(token_emb_, tok),
                               ad::EmbeddingLookup(position_emb_, pos)),
                       ad::Add(ad::EmbeddingLookup(segment_emb_, sid),
                               ad::EmbeddingLookup(frequency_emb_, freq)));
    SegmentInput in;
    in.states = ad::LayerNorm(x, emb_ln_gain_, emb_ln_bias_);
    in.mask.assign(seg.size(), 1);
    in.empty = seg.size() == 1;
    out.push_back(std::move(in));
  }
  return out;
}

Tensor BusLM::EncodeReference(const text::RefinedNews& news, EncodeStats* stats) const {
  auto inputs = EmbedInputs(news);
  std::vector<Tensor> h;
  ad::Mask segment_mask;
  for (auto& in : inputs) {
    h.push_back(in.states);
    segment_mask.push_back(in.empty ? 0 : 1);
  }
  std::uint64_t multiplies = 0;
  for (const auto& layer : layers_) {
    const Tensor bus = config_.use_bus ? GatherBus(h) : Tensor();
    std::vector<Tensor> next;
    for (std::size_t j = 0; j < h.size(); ++j) {
      next.push_back(BusTransformerLayer(h[j], bus, layer, inputs[j].mask,
                                         config_.num_heads, &multiplies));
    }
    h = std::move(next);
  }
  std::vector<Tensor> pooled;
  for (std::size_t j = 0; j < h.size(); ++j) {
    pooled.push_back(PoolTokens(h[j], inputs[j].mask, token_pool_));
  }
  Tensor e = PoolSegments(pooled, segment_mask, segment_pool_);
  if (stats) {
    ++stats->articles;
    for (const auto& in : inputs) stats->tokens += in.mask.size();
    stats->attention_multiplies += multiplies;
  }
  return e;
}

Tensor BusLM::EncodeBatch(std::span<const text::RefinedNews* const> news,
                          EncodeStats* stats, Rng* dropout_rng) const {
  const std::size_t k = config_.num_segments, d = config_.hidden_dim;
  if (news.empty()) return Tensor::Zeros({0, d});
  const double rate = config_.dropout;
  if (rate > 0.0 && dropout_rng == nullptr) {
    throw ConfigError("EncodeBatch: dropout enabled without a random source");
  }

  ad::PackedLayout layout;
  layout.shared_rows.resize(news.size());
  std::vector<int> tok, pos, sid, freq;
  std::vector<std::vector<std::size_t>> token_groups;
  std::vector<std::vector<std::size_t>> segment_groups(news.size());
  for (std::size_t i = 0; i < news.size(); ++i) {
    const auto segments = SegmentTokens(*news[i]);
    for (std::size_t j = 0; j < k; ++j) {
      const auto& seg = segments[j];
      const std::size_t offset = tok.size();
      layout.segments.push_back({offset, seg.size(), i});
      layout.shared_rows[i].push_back(offset);
      std::vector<std::size_t> rows;
      for (const auto& t : seg) {
        rows.push_back(tok.size());
        tok.push_back(t.token);
        pos.push_back(t.position);
        sid.push_back(static_cast<int>(j));
        freq.push_back(t.frequency);
      }
      token_groups.push_back(std::move(rows));
      if (seg.size() > 1) segment_groups[i].push_back(i * k + j);
    }
    if (segment_groups[i].empty()) {
      throw DataError("news " + news[i]->news_id + " has no content words");
    }
  }
  layout.num_rows = tok.size();

  auto drop = [&](const Tensor& x) {
    return rate > 0.0 ? ad::Dropout(x, rate, *dropout_rng) : x;
  };
  Tensor x = ad::Add(ad::Add(ad::EmbeddingLookup(token_emb_, tok),
                             ad::EmbeddingLookup(position_emb_, pos)),
                     ad::Add(ad::EmbeddingLookup(segment_emb_, sid),
                             ad::EmbeddingLookup(frequency_emb_, freq)));
  x = drop(ad::LayerNorm(x, emb_ln_gain_, emb_ln_bias_));
  std::uint64_t multiplies = 0;
  for (const auto& layer : layers_) {
    const Tensor q = ad::Linear(x, layer.wq, layer.bq);
    const Tensor kk = ad::Linear(x, layer.wk, layer.bk);
    const Tensor v = ad::Linear(x, layer.wv, layer.bv);
    const Tensor attended = ad::SegmentAttention(q, kk, v, layout, config_.num_heads,
                                                 config_.use_bus, &multiplies);
    const Tensor x1 = ad::LayerNorm(
        ad::Add(x, drop(ad::Linear(attended, layer.wo, layer.bo))), layer.ln1_gain,
        layer.ln1_bias);
    const Tensor ffn =
        ad::Linear(ad::Gelu(ad::Linear(x1, layer.w1, layer.b1)), layer.w2, layer.b2);
    x = ad::LayerNorm(ad::Add(x1, drop(ffn)), layer.ln2_gain, layer.ln2_bias);
  }
  const Tensor segment_vectors =
      ad::GroupSoftmaxPool(AdditiveScores(x, token_pool_), x, token_groups);
  Tensor e = ad::GroupSoftmaxPool(AdditiveScores(segment_vectors, segment_pool_),
                                  segment_vectors, segment_groups);
  if (stats) {
    stats->articles += news.size();
    stats->tokens += tok.size();
    stats->attention_multiplies += multiplies;
  }
  return e;
}

}  // namespace speedyfeed::model

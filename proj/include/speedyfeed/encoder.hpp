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

// BusLM news encoder. A news article is split into K segments that are
// encoded by shared transformer layers; at every layer the first hidden
// state of each segment is gathered into a bus that is appended to the keys
// and values (not the queries) of every segment. Token states are pooled per
// segment, then segments are pooled into one embedding.
//
// Two implementations share the parameters: per-segment reference
// functions built from generic ops, and EncodeBatch, which packs all
// segments of many articles into one row block.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "speedyfeed/ops.hpp"
#include "speedyfeed/optim.hpp"
#include "speedyfeed/refine.hpp"
#include "speedyfeed/rng.hpp"

namespace speedyfeed::model {

struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t hidden_dim = 32;
  std::size_t num_heads = 2;
  // 3 encodes title, abstract and body separately; 1 concatenates them.
  std::size_t num_segments = 3;
  std::size_t max_segment_len = 32;
  std::size_t ffn_dim = 64;
  std::size_t vocab_size = 0;
  int freq_clip = 8;
  double dropout = 0.0;
  // false gives the "w.o. Bus" ablation: segments never see each other.
  bool use_bus = true;

  void Validate() const;
};

struct LayerParams {
  ad::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  ad::Tensor ln1_gain, ln1_bias;
  ad::Tensor w1, b1, w2, b2;
  ad::Tensor ln2_gain, ln2_bias;
};

// Additive attention pooling, score(h) = q . tanh(h W + b).
struct PoolParams {
  ad::Tensor w, b, q;
};

// One segment ready for the transformer: [len, d] states where row 0 is the
// segment's CLS, and a visibility mask of the same length.
struct SegmentInput {
  ad::Tensor states;
  ad::Mask mask;
  // No content words; excluded from segment pooling.
  bool empty = false;
};

// Counters accumulated by the encoder.
struct EncodeStats {
  std::uint64_t articles = 0;
  std::uint64_t tokens = 0;
  std::uint64_t attention_multiplies = 0;
};

// Bus of a layer: row j is the first state of segment j.
ad::Tensor GatherBus(std::span<const ad::Tensor> segment_states);

// One transformer layer on segment states h[len,d]. Queries come from h;
// keys and values from [h; bus] (bus may be undefined to disable it).
// Padding positions (mask 0) are invisible as keys; bus rows always visible.
ad::Tensor BusTransformerLayer(const ad::Tensor& h, const ad::Tensor& bus,
                               const LayerParams& layer, const ad::Mask& mask,
                               std::size_t num_heads,
                               std::uint64_t* attention_multiplies = nullptr);

// Attention pooling of the visible rows of h; zero vector when none is
// visible.
ad::Tensor PoolTokens(const ad::Tensor& h, const ad::Mask& mask, const PoolParams& pool);

// Attention pooling over the segment vectors whose mask entry is set.
// Throws DataError when no segment is visible.
ad::Tensor PoolSegments(std::span<const ad::Tensor> segment_vectors,
                        const ad::Mask& segment_mask, const PoolParams& pool);

// Multiplications spent on attention scores for segment lengths `lens`
// (CLS included) with `bus_rows` extra keys per segment, per layer.
std::uint64_t AttentionScoreMultiplies(std::span<const std::size_t> lens,
                                       std::size_t bus_rows, std::size_t hidden_dim);

class BusLM {
 public:
  // Registers all parameters in `params` under "enc." names, group
  // "encoder", initialized from `rng`.
  BusLM(const EncoderConfig& config, ad::ParameterSet& params, Rng& rng);

  const EncoderConfig& config() const { return config_; }
  const std::vector<LayerParams>& layers() const { return layers_; }
  const PoolParams& token_pool() const { return token_pool_; }
  const PoolParams& segment_pool() const { return segment_pool_; }

  // Token + position + segment + frequency embeddings, layer-normalized,
  // for each of the K segments.
  std::vector<SegmentInput> EmbedInputs(const text::RefinedNews& news) const;

  // Reference composition on one article; returns [d].
  ad::Tensor EncodeReference(const text::RefinedNews& news,
                             EncodeStats* stats = nullptr) const;

  // Packed encoding of many articles; returns [n, d] in input order.
  // `dropout_rng` is required when config().dropout > 0 and ignored
  // otherwise.
  ad::Tensor EncodeBatch(std::span<const text::RefinedNews* const> news,
                         EncodeStats* stats = nullptr, Rng* dropout_rng = nullptr) const;

  // Segment lengths (CLS included) of an article under this config.
  std::vector<std::size_t> SegmentLengths(const text::RefinedNews& news) const;

 private:
  struct InputToken {
    int token = 0;
    int position = 0;
    int frequency = 1;
  };
  std::vector<std::vector<InputToken>> SegmentTokens(const text::RefinedNews& news) const;

  EncoderConfig config_;
  ad::Tensor token_emb_, position_emb_, segment_emb_, frequency_emb_;
  ad::Tensor emb_ln_gain_, emb_ln_bias_;
  std::vector<LayerParams> layers_;
  PoolParams token_pool_, segment_pool_;
};

}  // namespace speedyfeed::model

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

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "speedyfeed/rng.hpp"
#include "speedyfeed/tensor.hpp"

namespace speedyfeed::ad {

// One byte per element, nonzero = visible.
using Mask = std::vector<std::uint8_t>;

// [m,k] x [k,n] -> [m,n].
Tensor MatMul(const Tensor& a, const Tensor& b);
// [m,k] x [n,k]^T -> [m,n].
Tensor MatMulTransposed(const Tensor& a, const Tensor& b);
Tensor Transpose(const Tensor& a);

// x[m,n] + bias[n] broadcast over rows.
Tensor AddRowVector(const Tensor& x, const Tensor& bias);
// x[m,k] . w[k,n] + bias[n].
Tensor Linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor Add(const Tensor& a, const Tensor& b);
Tensor Sub(const Tensor& a, const Tensor& b);
Tensor Mul(const Tensor& a, const Tensor& b);
Tensor Scale(const Tensor& a, double factor);

Tensor Sum(const Tensor& a);
Tensor Mean(const Tensor& a);

Tensor Tanh(const Tensor& a);
// Exact GELU, x * Phi(x).
Tensor Gelu(const Tensor& a);

// Softmax over the last axis of a rank-1 or rank-2 tensor. Masked entries
// are exactly zero; a row without any visible entry is an error.
Tensor Softmax(const Tensor& x, const Mask* mask = nullptr);
Tensor LogSoftmax(const Tensor& x);

// Row-wise layer normalization of x[m,n] with gain[n] and bias[n].
Tensor LayerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-5);

// Rows `ids` of table[V,d] -> [ids.size(), d].
Tensor EmbeddingLookup(const Tensor& table, std::span<const int> ids);

// Rank-1 tensors along axis 0, or rank-2 tensors along axis 0 or 1.
Tensor Concat(std::span<const Tensor> parts, std::size_t axis);

Tensor SliceRows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor SliceCols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor Reshape(const Tensor& x, Shape shape);

// Rows of source[n,d] by index; index -1 yields a zero row (the dummy vector
// for padded slots). Repeated indices share one source row.
Tensor GatherRows(const Tensor& source, std::span<const int> indices);

// Row-wise inner products of a[n,d] and b[n,d] -> [n].
Tensor RowDot(const Tensor& a, const Tensor& b);
// Column j of x[n,m] -> [n].
Tensor PickColumn(const Tensor& x, std::size_t column);

// Inverted dropout; identity when rate == 0.
Tensor Dropout(const Tensor& x, double rate, Rng& rng);

// Rows [offset, offset + length) of a packed [R,d] tensor that attend to
// each other, plus the extra key/value rows shared by their group.
struct SegmentSpan {
  std::size_t offset = 0;
  std::size_t length = 0;
  std::size_t group = 0;
};

struct PackedLayout {
  std::vector<SegmentSpan> segments;
  // Per group, rows appended to the key/value set of every member segment.
  std::vector<std::vector<std::size_t>> shared_rows;
  std::size_t num_rows = 0;
};

// Multi-head scaled dot-product attention over packed rows. Queries of a
// segment see the segment's own rows followed by its group's shared rows
// (when `use_shared`), in that order. Every row must belong to exactly one
// segment. `score_multiplies`, when given, is incremented by the number of
// query-key multiplications, sum over segments of len * keys * d.
Tensor SegmentAttention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const PackedLayout& layout, std::size_t num_heads,
                        bool use_shared, std::uint64_t* score_multiplies = nullptr);

// Softmax-weighted sum of value rows per group: out[g] = sum_r a_r v_r over
// the member rows r of g, a = softmax(scores[members]). Groups without
// members produce a zero row. scores has one entry per value row.
Tensor GroupSoftmaxPool(const Tensor& scores, const Tensor& values,
                        const std::vector<std::vector<std::size_t>>& groups);

// Causal softmax pooling: out[t] = sum_{l <= t} w_{t,l} values[l] with
// w_{t,.} = softmax(scores[0..t]) restricted to visible rows. Computed with
// a running log-normalizer in O(T d); rows with no visible prefix are zero.
Tensor PrefixSoftmaxPool(const Tensor& scores, const Tensor& values,
                         const Mask* mask = nullptr);

}  // namespace speedyfeed::ad

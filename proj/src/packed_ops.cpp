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

// Attention and pooling kernels over packed variable-length segments.

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "speedyfeed/errors.hpp"
#include "speedyfeed/ops.hpp"

namespace speedyfeed::ad {

using internal::MakeResult;
using internal::RecordingTape;

namespace {

struct AttentionPlan {
  PackedLayout layout;
  std::size_t heads = 1;
  std::size_t d = 0;
  bool use_shared = true;
  // Key rows per segment, own rows first.
  std::vector<std::vector<std::size_t>> keys;
  // Softmax probabilities, per segment: [heads][len][keys].
  std::vector<std::vector<double>> probs;
};

void ValidateLayout(const PackedLayout& layout, std::size_t rows) {
  if (layout.num_rows != rows) {
    throw DimensionError("SegmentAttention: layout covers " +
                         std::to_string(layout.num_rows) + " rows, tensor has " +
                         std::to_string(rows));
  }
  std::vector<std::uint8_t> covered(rows, 0);
  for (const auto& s : layout.segments) {
    if (s.length == 0 || s.offset + s.length > rows) {
      throw DimensionError("SegmentAttention: segment outside the packed rows");
    }
    if (s.group >= layout.shared_rows.size()) {
      throw DimensionError("SegmentAttention: segment group out of range");
    }
    for (std::size_t r = s.offset; r < s.offset + s.length; ++r) {
      if (covered[r]++) throw DimensionError("SegmentAttention: overlapping segments");
    }
  }
  if (std::find(covered.begin(), covered.end(), 0) != covered.end()) {
    throw DimensionError("SegmentAttention: row not covered by any segment");
  }
  for (const auto& g : layout.shared_rows) {
    for (std::size_t r : g) {
      if (r >= rows) throw DimensionError("SegmentAttention: shared row out of range");
    }
  }
}

}  // namespace

Tensor SegmentAttention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const PackedLayout& layout, std::size_t num_heads,
                        bool use_shared, std::uint64_t* score_multiplies) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("SegmentAttention: q, k, v must share a rank-2 shape");
  }
  const std::size_t rows = q.dim(0), d = q.dim(1);
  if (num_heads == 0 || d % num_heads != 0) {
    throw DimensionError("SegmentAttention: width " + std::to_string(d) +
                         " not divisible by " + std::to_string(num_heads) + " heads");
  }
  ValidateLayout(layout, rows);
  const std::size_t dh = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto plan = std::make_shared<AttentionPlan>();
  plan->heads = num_heads;
  plan->d = d;
  plan->use_shared = use_shared;
  plan->keys.resize(layout.segments.size());
  plan->probs.resize(layout.segments.size());

  const auto qv = q.data(), kv = k.data(), vv = v.data();
  std::vector<double> out(rows * d, 0.0);
  std::uint64_t multiplies = 0;
  std::vector<double> scores;
  for (std::size_t s = 0; s < layout.segments.size(); ++s) {
    const SegmentSpan& seg = layout.segments[s];
    auto& keys = plan->keys[s];
    for (std::size_t r = 0; r < seg.length; ++r) keys.push_back(seg.offset + r);
    if (use_shared) {
      const auto& shared = layout.shared_rows[seg.group];
      keys.insert(keys.end(), shared.begin(), shared.end());
    }
    const std::size_t nk = keys.size();
    multiplies += static_cast<std::uint64_t>(seg.length) * nk * d;
    auto& p = plan->probs[s];
    p.assign(num_heads * seg.length * nk, 0.0);
    scores.resize(nk);
    for (std::size_t h = 0; h < num_heads; ++h) {
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < seg.length; ++i) {
        const double* qi = qv.data() + (seg.offset + i) * d + c0;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < nk; ++j) {
          const double* kj = kv.data() + keys[j] * d + c0;
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * scale;
          mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        double* prow = p.data() + (h * seg.length + i) * nk;
        double* oi = out.data() + (seg.offset + i) * d + c0;
        for (std::size_t j = 0; j < nk; ++j) {
          prow[j] = scores[j] / z;
          const double* vj = vv.data() + keys[j] * d + c0;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += prow[j] * vj[c];
        }
      }
    }
  }
  if (score_multiplies) *score_multiplies += multiplies;

  Tape* tape = RecordingTape({&q, &k, &v});
  Tensor c = MakeResult("SegmentAttention", {rows, d}, std::move(out), tape);
  if (tape) {
    plan->layout = layout;
    tape->Record(c.shared_node(), [qn = q.shared_node(), kn = k.shared_node(),
                                   vn = v.shared_node(), cn = c.node(), plan, scale] {
      const std::size_t d = plan->d, heads = plan->heads, dh = d / heads;
      const auto& qv = qn->value;
      const auto& kv = kn->value;
      const auto& vv = vn->value;
      const auto& g = cn->grad;
      auto& gq = qn->EnsureGrad();
      auto& gk = kn->EnsureGrad();
      auto& gv = vn->EnsureGrad();
      std::vector<double> dp;
      for (std::size_t s = 0; s < plan->layout.segments.size(); ++s) {
        const SegmentSpan& seg = plan->layout.segments[s];
        const auto& keys = plan->keys[s];
        const std::size_t nk = keys.size();
        dp.resize(nk);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t c0 = h * dh;
          for (std::size_t i = 0; i < seg.length; ++i) {
            const std::size_t qi = (seg.offset + i) * d + c0;
            const double* prow = plan->probs[s].data() + (h * seg.length + i) * nk;
            const double* gi = g.data() + qi;
            double weighted = 0.0;
            for (std::size_t j = 0; j < nk; ++j) {
              const std::size_t vj = keys[j] * d + c0;
              double dot = 0.0;
              for (std::size_t c = 0; c < dh; ++c) {
                dot += gi[c] * vv[vj + c];
                gv[vj + c] += prow[j] * gi[c];
              }
              dp[j] = dot;
              weighted += prow[j] * dot;
            }
            for (std::size_t j = 0; j < nk; ++j) {
              const double ds = prow[j] * (dp[j] - weighted) * scale;
              if (ds == 0.0) continue;
              const std::size_t kj = keys[j] * d + c0;
              for (std::size_t c = 0; c < dh; ++c) {
                gq[qi + c] += ds * kv[kj + c];
                gk[kj + c] += ds * qv[qi + c];
              }
            }
          }
        }
      }
    });
  }
  return c;
}

Tensor GroupSoftmaxPool(const Tensor& scores, const Tensor& values,
                        const std::vector<std::vector<std::size_t>>& groups) {
  if (values.rank() != 2 || scores.numel() != values.dim(0)) {
    throw DimensionError("GroupSoftmaxPool: scores " + ShapeString(scores.shape()) +
                         " do not match values " + ShapeString(values.shape()));
  }
  const std::size_t rows = values.dim(0), d = values.dim(1);
  for (const auto& g : groups) {
    for (std::size_t r : g) {
      if (r >= rows) throw DimensionError("GroupSoftmaxPool: member row out of range");
    }
  }
  const auto sv = scores.data(), vv = values.data();
  auto weights = std::make_shared<std::vector<std::vector<double>>>(groups.size());
  std::vector<double> out(groups.size() * d, 0.0);
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& members = groups[gi];
    if (members.empty()) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t r : members) mx = std::max(mx, sv[r]);
    auto& w = (*weights)[gi];
    w.resize(members.size());
    double z = 0.0;
    for (std::size_t m = 0; m < members.size(); ++m) {
      w[m] = std::exp(sv[members[m]] - mx);
      z += w[m];
    }
    for (std::size_t m = 0; m < members.size(); ++m) {
      w[m] /= z;
      for (std::size_t c = 0; c < d; ++c) out[gi * d + c] += w[m] * vv[members[m] * d + c];
    }
  }
  Tape* tape = RecordingTape({&scores, &values});
  Tensor c = MakeResult("GroupSoftmaxPool", {groups.size(), d}, std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [sn = scores.shared_node(), vn = values.shared_node(),
                                   cn = c.node(), groups, weights, d] {
      const auto& g = cn->grad;
      const auto& vv = vn->value;
      const auto& ov = cn->value;
      const bool want_s = sn->requires_grad, want_v = vn->requires_grad;
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& members = groups[gi];
        const auto& w = (*weights)[gi];
        const double* go = g.data() + gi * d;
        double out_dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) out_dot += ov[gi * d + c] * go[c];
        for (std::size_t m = 0; m < members.size(); ++m) {
          const std::size_t r = members[m];
          if (want_v) {
            auto& gv = vn->EnsureGrad();
            for (std::size_t c = 0; c < d; ++c) gv[r * d + c] += w[m] * go[c];
          }
          if (want_s) {
            double dot = 0.0;
            for (std::size_t c = 0; c < d; ++c) dot += vv[r * d + c] * go[c];
            sn->EnsureGrad()[r] += w[m] * (dot - out_dot);
          }
        }
      }
    });
  }
  return c;
}

Tensor PrefixSoftmaxPool(const Tensor& scores, const Tensor& values, const Mask* mask) {
  if (values.rank() != 2 || scores.numel() != values.dim(0)) {
    throw DimensionError("PrefixSoftmaxPool: scores " + ShapeString(scores.shape()) +
                         " do not match values " + ShapeString(values.shape()));
  }
  const std::size_t rows = values.dim(0), d = values.dim(1);
  if (mask && mask->size() != rows) throw DimensionError("PrefixSoftmaxPool: mask size");
  const auto sv = scores.data(), vv = values.data();
  const double kNone = -std::numeric_limits<double>::infinity();
  // log of the running normalizer sum_{l <= t} exp(s_l).
  auto log_norm = std::make_shared<std::vector<double>>(rows, kNone);
  std::vector<double> out(rows * d, 0.0);
  std::vector<double> acc(d, 0.0);
  double running = kNone;
  for (std::size_t t = 0; t < rows; ++t) {
    if (!mask || (*mask)[t]) {
      const double s = sv[t];
      if (running == kNone) {
        running = s;
        for (std::size_t c = 0; c < d; ++c) acc[c] = vv[t * d + c];
      } else {
        // acc holds the normalized mean; fold in row t with weight e^s / S.
        const double next = std::max(running, s) +
                            std::log(std::exp(running - std::max(running, s)) +
                                     std::exp(s - std::max(running, s)));
        const double keep = std::exp(running - next);
        const double add = std::exp(s - next);
        for (std::size_t c = 0; c < d; ++c) acc[c] = keep * acc[c] + add * vv[t * d + c];
        running = next;
      }
    }
    (*log_norm)[t] = running;
    if (running != kNone) std::copy(acc.begin(), acc.end(), out.begin() + t * d);
  }
  Tape* tape = RecordingTape({&scores, &values});
  Tensor c = MakeResult("PrefixSoftmaxPool", {rows, d}, std::move(out), tape);
  if (tape) {
    Mask visible = mask ? *mask : Mask(rows, 1);
    tape->Record(c.shared_node(), [sn = scores.shared_node(), vn = values.shared_node(),
                                   cn = c.node(), log_norm, visible, rows, d] {
      const auto& g = cn->grad;
      const auto& ov = cn->value;
      const auto& vv = vn->value;
      const auto& sv = sn->value;
      const auto& ln = *log_norm;
      const double kNone = -std::numeric_limits<double>::infinity();
      // Reverse accumulation: R_t = g_t + e^{ln_t - ln_{t+1}} R_{t+1}, and
      // the same recursion for C_t with the scalar out_t . g_t.
      std::vector<double> r(d, 0.0);
      double cacc = 0.0;
      for (std::size_t t = rows; t-- > 0;) {
        if (ln[t] == kNone) continue;
        const double factor = t + 1 < rows ? std::exp(ln[t] - ln[t + 1]) : 0.0;
        double og = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          r[k] = g[t * d + k] + factor * r[k];
          og += ov[t * d + k] * g[t * d + k];
        }
        cacc = og + factor * cacc;
        if (!visible[t]) continue;
        const double w = std::exp(sv[t] - ln[t]);
        if (vn->requires_grad) {
          auto& gv = vn->EnsureGrad();
          for (std::size_t k = 0; k < d; ++k) gv[t * d + k] += w * r[k];
        }
        if (sn->requires_grad) {
          double vr = 0.0;
          for (std::size_t k = 0; k < d; ++k) vr += vv[t * d + k] * r[k];
          sn->EnsureGrad()[t] += w * (vr - cacc);
        }
      }
    });
  }
  return c;
}

}  // namespace speedyfeed::ad

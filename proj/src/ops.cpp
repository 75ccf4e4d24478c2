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

#include "speedyfeed/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "speedyfeed/errors.hpp"

namespace speedyfeed::ad {

using internal::MakeResult;
using internal::RecordingTape;

namespace {

void RequireRank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " +
                         ShapeString(t.shape()));
  }
}

void RequireSameShape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         ShapeString(a.shape()) + " vs " +
                         ShapeString(b.shape()));
  }
}

// Rows and columns of a tensor viewed as a matrix over its last axis.
std::pair<std::size_t, std::size_t> RowsCols(const Tensor& t) {
  if (t.rank() == 1) return {1, t.dim(0)};
  if (t.rank() == 2) return {t.dim(0), t.dim(1)};
  throw DimensionError("expected rank 1 or 2, got " + ShapeString(t.shape()));
}

// c[m,n] += a[m,k] . b[k,n]
void GemmNN(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m,n] += a[m,k] . b[n,k]^T
void GemmNT(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// c[k,n] += a[m,k]^T . b[m,n]
void GemmTN(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

double NormalCdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double NormalPdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

}  // namespace

Tensor MatMul(const Tensor& a, const Tensor& b) {
  RequireRank(a, 2, "MatMul");
  RequireRank(b, 2, "MatMul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("MatMul: inner dimensions differ " +
                         ShapeString(a.shape()) + " x " +
                         ShapeString(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  GemmNN(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tape* tape = RecordingTape({&a, &b});
  Tensor c = MakeResult("MatMul", {m, n}, std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [an = a.shared_node(), bn = b.shared_node(),
                                   cn = c.node(), m, k, n] {
      const double* gc = cn->grad.data();
      if (an->requires_grad) {
        GemmNT(gc, bn->value.data(), an->EnsureGrad().data(), m, n, k);
      }
      if (bn->requires_grad) {
        GemmTN(an->value.data(), gc, bn->EnsureGrad().data(), m, k, n);
      }
    });
  }
  return c;
}

Tensor MatMulTransposed(const Tensor& a, const Tensor& b) {
  RequireRank(a, 2, "MatMulTransposed");
  RequireRank(b, 2, "MatMulTransposed");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("MatMulTransposed: inner dimensions differ " +
                         ShapeString(a.shape()) + " x " +
                         ShapeString(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  GemmNT(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tape* tape = RecordingTape({&a, &b});
  Tensor c = MakeResult("MatMulTransposed", {m, n}, std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [an = a.shared_node(), bn = b.shared_node(),
                                   cn = c.node(), m, k, n] {
      const double* gc = cn->grad.data();
      // dA = dC . B, dB = dC^T . A
      if (an->requires_grad) {
        GemmNN(gc, bn->value.data(), an->EnsureGrad().data(), m, n, k);
      }
      if (bn->requires_grad) {
        GemmTN(gc, an->value.data(), bn->EnsureGrad().data(), m, n, k);
      }
    });
  }
  return c;
}

Tensor Transpose(const Tensor& a) {
  RequireRank(a, 2, "Transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  const auto src = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  Tape* tape = RecordingTape({&a});
  Tensor c = MakeResult("Transpose", {n, m}, std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [an = a.shared_node(), cn = c.node(), m, n] {
      auto& ga = an->EnsureGrad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += cn->grad[j * m + i];
    });
  }
  return c;
}

Tensor AddRowVector(const Tensor& x, const Tensor& bias) {
  RequireRank(bias, 1, "AddRowVector");
  const auto [m, n] = RowsCols(x);
  if (bias.dim(0) != n) {
    throw DimensionError("AddRowVector: bias " + ShapeString(bias.shape()) +
                         " does not match " + ShapeString(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  Tape* tape = RecordingTape({&x, &bias});
  Tensor c = MakeResult("AddRowVector", x.shape(), std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [xn = x.shared_node(), bn = bias.shared_node(),
                                   cn = c.node(), m = m, n = n] {
      const auto& gc = cn->grad;
      if (xn->requires_grad) {
        auto& gx = xn->EnsureGrad();
        for (std::size_t i = 0; i < gc.size(); ++i) gx[i] += gc[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->EnsureGrad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += gc[i * n + j];
      }
    });
  }
  return c;
}

Tensor Linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return AddRowVector(MatMul(x, w), bias);
}

Tensor Add(const Tensor& a, const Tensor& b) {
  RequireSameShape(a, b, "Add");
  std::vector<double> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tape* tape = RecordingTape({&a, &b});
  Tensor c = MakeResult("Add", a.shape(), std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(),
                 [an = a.shared_node(), bn = b.shared_node(), cn = c.node()] {
                   for (Node* in : {an.get(), bn.get()}) {
                     if (!in->requires_grad) continue;
                     auto& g = in->EnsureGrad();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += cn->grad[i];
                   }
                 });
  }
  return c;
}

Tensor Sub(const Tensor& a, const Tensor& b) { return Add(a, Scale(b, -1.0)); }

Tensor Mul(const Tensor& a, const Tensor& b) {
  RequireSameShape(a, b, "Mul");
  std::vector<double> out(a.numel());
  const auto av = a.data(), bv = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tape* tape = RecordingTape({&a, &b});
  Tensor c = MakeResult("Mul", a.shape(), std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(),
                 [an = a.shared_node(), bn = b.shared_node(), cn = c.node()] {
                   if (an->requires_grad) {
                     auto& g = an->EnsureGrad();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += cn->grad[i] * bn->value[i];
                   }
                   if (bn->requires_grad) {
                     auto& g = bn->EnsureGrad();
                     for (std::size_t i = 0; i < g.size(); ++i)
                       g[i] += cn->grad[i] * an->value[i];
                   }
                 });
  }
  return c;
}

Tensor Scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  Tape* tape = RecordingTape({&a});
  Tensor c = MakeResult("Scale", a.shape(), std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [an = a.shared_node(), cn = c.node(), factor] {
      auto& g = an->EnsureGrad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += cn->grad[i] * factor;
    });
  }
  return c;
}

Tensor Sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tape* tape = RecordingTape({&a});
  Tensor c = MakeResult("Sum", {}, {s}, tape);
  if (tape) {
    tape->Record(c.shared_node(), [an = a.shared_node(), cn = c.node()] {
      auto& g = an->EnsureGrad();
      for (double& v : g) v += cn->grad[0];
    });
  }
  return c;
}

Tensor Mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("Mean of an empty tensor");
  return Scale(Sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor Tanh(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  Tape* tape = RecordingTape({&a});
  Tensor c = MakeResult("Tanh", a.shape(), std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [an = a.shared_node(), cn = c.node()] {
      auto& g = an->EnsureGrad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double y = cn->value[i];
        g[i] += cn->grad[i] * (1.0 - y * y);
      }
    });
  }
  return c;
}

Tensor Gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  const auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * NormalCdf(av[i]);
  Tape* tape = RecordingTape({&a});
  Tensor c = MakeResult("Gelu", a.shape(), std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [an = a.shared_node(), cn = c.node()] {
      auto& g = an->EnsureGrad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = an->value[i];
        g[i] += cn->grad[i] * (NormalCdf(x) + x * NormalPdf(x));
      }
    });
  }
  return c;
}

Tensor Softmax(const Tensor& x, const Mask* mask) {
  const auto [rows, cols] = RowsCols(x);
  if (mask != nullptr && mask->size() != x.numel()) {
    throw DimensionError("Softmax: mask has " + std::to_string(mask->size()) +
                         " entries for " + ShapeString(x.shape()));
  }
  const auto xv = x.data();
  std::vector<double> out(x.numel(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
      if (mask && !(*mask)[base + j]) continue;
      mx = std::max(mx, xv[base + j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw NumericalError("Softmax: row " + std::to_string(r) +
                           " has no visible entry");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (mask && !(*mask)[base + j]) continue;
      out[base + j] = std::exp(xv[base + j] - mx);
      z += out[base + j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[base + j] /= z;
  }
  Tape* tape = RecordingTape({&x});
  Tensor c = MakeResult("Softmax", x.shape(), std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(),
                 [xn = x.shared_node(), cn = c.node(), rows = rows, cols = cols] {
                   auto& g = xn->EnsureGrad();
                   const auto& y = cn->value;
                   const auto& gy = cn->grad;
                   for (std::size_t r = 0; r < rows; ++r) {
                     const std::size_t base = r * cols;
                     double dot = 0.0;
                     for (std::size_t j = 0; j < cols; ++j)
                       dot += gy[base + j] * y[base + j];
                     for (std::size_t j = 0; j < cols; ++j)
                       g[base + j] += y[base + j] * (gy[base + j] - dot);
                   }
                 });
  }
  return c;
}

Tensor LogSoftmax(const Tensor& x) {
  const auto [rows, cols] = RowsCols(x);
  const auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * cols;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) mx = std::max(mx, xv[base + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(xv[base + j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) out[base + j] = xv[base + j] - lse;
  }
  Tape* tape = RecordingTape({&x});
  Tensor c = MakeResult("LogSoftmax", x.shape(), std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(),
                 [xn = x.shared_node(), cn = c.node(), rows = rows, cols = cols] {
                   auto& g = xn->EnsureGrad();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const std::size_t base = r * cols;
                     double gsum = 0.0;
                     for (std::size_t j = 0; j < cols; ++j)
                       gsum += cn->grad[base + j];
                     for (std::size_t j = 0; j < cols; ++j)
                       g[base + j] += cn->grad[base + j] -
                                      std::exp(cn->value[base + j]) * gsum;
                   }
                 });
  }
  return c;
}

Tensor LayerNorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps) {
  RequireRank(gain, 1, "LayerNorm");
  RequireRank(bias, 1, "LayerNorm");
  const auto [rows, cols] = RowsCols(x);
  if (gain.dim(0) != cols || bias.dim(0) != cols) {
    throw DimensionError("LayerNorm: gain/bias do not match " +
                         ShapeString(x.shape()));
  }
  const auto xv = x.data(), gv = gain.data(), bv = bias.data();
  std::vector<double> out(x.numel());
  // Normalized values and inverse std per row, kept for the backward pass.
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * cols;
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += xv[base + j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double d = xv[base + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) {
      xhat[base + j] = (xv[base + j] - mean) * inv_std[r];
      out[base + j] = xhat[base + j] * gv[j] + bv[j];
    }
  }
  Tape* tape = RecordingTape({&x, &gain, &bias});
  Tensor c = MakeResult("LayerNorm", x.shape(), std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [xn = x.shared_node(), gn = gain.shared_node(),
                                   bn = bias.shared_node(), cn = c.node(),
                                   xhat = std::move(xhat),
                                   inv_std = std::move(inv_std), rows = rows,
                                   cols = cols] {
      const auto& gy = cn->grad;
      if (gn->requires_grad) {
        auto& gg = gn->EnsureGrad();
        for (std::size_t i = 0; i < gy.size(); ++i) gg[i % cols] += gy[i] * xhat[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->EnsureGrad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i % cols] += gy[i];
      }
      if (xn->requires_grad) {
        auto& gx = xn->EnsureGrad();
        const double n = static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * cols;
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            const double gh = gy[base + j] * gn->value[j];
            sum_g += gh;
            sum_gx += gh * xhat[base + j];
          }
          for (std::size_t j = 0; j < cols; ++j) {
            const double gh = gy[base + j] * gn->value[j];
            gx[base + j] +=
                inv_std[r] * (gh - sum_g / n - xhat[base + j] * sum_gx / n);
          }
        }
      }
    });
  }
  return c;
}

Tensor EmbeddingLookup(const Tensor& table, std::span<const int> ids) {
  RequireRank(table, 2, "EmbeddingLookup");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  const auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw DimensionError("EmbeddingLookup: id " + std::to_string(ids[i]) +
                           " outside table of " + std::to_string(vocab) +
                           " rows");
    }
    std::copy_n(tv.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  Tape* tape = RecordingTape({&table});
  Tensor c = MakeResult("EmbeddingLookup", {ids.size(), d}, std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(),
                 [tn = table.shared_node(), cn = c.node(),
                  ids = std::vector<int>(ids.begin(), ids.end()), d] {
                   auto& g = tn->EnsureGrad();
                   for (std::size_t i = 0; i < ids.size(); ++i)
                     for (std::size_t j = 0; j < d; ++j)
                       g[ids[i] * d + j] += cn->grad[i * d + j];
                 });
  }
  return c;
}

Tensor Concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("Concat of zero tensors");
  const std::size_t rank = parts[0].rank();
  if (rank == 0 || rank > 2 || axis >= rank) {
    throw DimensionError("Concat: unsupported axis " + std::to_string(axis) +
                         " for " + ShapeString(parts[0].shape()));
  }
  for (const Tensor& p : parts) {
    if (p.rank() != rank) throw DimensionError("Concat: rank mismatch");
    if (rank == 2 && p.dim(1 - axis) != parts[0].dim(1 - axis)) {
      throw DimensionError("Concat: " + ShapeString(p.shape()) + " vs " +
                           ShapeString(parts[0].shape()) + " on axis " +
                           std::to_string(axis));
    }
  }
  Shape shape = parts[0].shape();
  shape[axis] = 0;
  for (const Tensor& p : parts) shape[axis] += p.dim(axis);

  std::vector<double> out;
  out.reserve(NumElements(shape));
  // Column offset of each part, used for axis-1 concatenation.
  std::vector<std::size_t> offsets;
  if (axis == 0) {
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  } else {
    const std::size_t rows = shape[0], cols = shape[1];
    out.assign(rows * cols, 0.0);
    std::size_t off = 0;
    for (const Tensor& p : parts) {
      offsets.push_back(off);
      const std::size_t pc = p.dim(1);
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(p.data().begin() + r * pc, pc, out.begin() + r * cols + off);
      off += pc;
    }
  }
  Tape* tape = RecordingTape(parts);
  Tensor c = MakeResult("Concat", shape, std::move(out), tape);
  if (tape) {
    std::vector<std::shared_ptr<Node>> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.shared_node());
    tape->Record(c.shared_node(), [nodes = std::move(nodes), cn = c.node(), axis,
                                   offsets = std::move(offsets)] {
      if (axis == 0) {
        std::size_t off = 0;
        for (const auto& n : nodes) {
          if (n->requires_grad) {
            auto& g = n->EnsureGrad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += cn->grad[off + i];
          }
          off += n->value.size();
        }
        return;
      }
      const std::size_t rows = cn->shape[0], cols = cn->shape[1];
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const auto& n = nodes[k];
        if (!n->requires_grad) continue;
        auto& g = n->EnsureGrad();
        const std::size_t pc = n->shape[1];
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < pc; ++j)
            g[r * pc + j] += cn->grad[r * cols + offsets[k] + j];
      }
    });
  }
  return c;
}

Tensor SliceRows(const Tensor& x, std::size_t begin, std::size_t end) {
  RequireRank(x, 2, "SliceRows");
  if (begin > end || end > x.dim(0)) {
    throw DimensionError("SliceRows: [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " +
                         ShapeString(x.shape()));
  }
  const std::size_t cols = x.dim(1);
  std::vector<double> out(x.data().begin() + begin * cols,
                          x.data().begin() + end * cols);
  Tape* tape = RecordingTape({&x});
  Tensor c = MakeResult("SliceRows", {end - begin, cols}, std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [xn = x.shared_node(), cn = c.node(),
                                   off = begin * cols] {
      auto& g = xn->EnsureGrad();
      for (std::size_t i = 0; i < cn->grad.size(); ++i) g[off + i] += cn->grad[i];
    });
  }
  return c;
}

Tensor SliceCols(const Tensor& x, std::size_t begin, std::size_t end) {
  RequireRank(x, 2, "SliceCols");
  if (begin > end || end > x.dim(1)) {
    throw DimensionError("SliceCols: [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") outside " +
                         ShapeString(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1), width = end - begin;
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(x.data().begin() + r * cols + begin, width,
                out.begin() + r * width);
  Tape* tape = RecordingTape({&x});
  Tensor c = MakeResult("SliceCols", {rows, width}, std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [xn = x.shared_node(), cn = c.node(), rows,
                                   cols, width, begin] {
      auto& g = xn->EnsureGrad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < width; ++j)
          g[r * cols + begin + j] += cn->grad[r * width + j];
    });
  }
  return c;
}

Tensor Reshape(const Tensor& x, Shape shape) {
  if (NumElements(shape) != x.numel()) {
    throw DimensionError("Reshape: " + ShapeString(x.shape()) + " -> " +
                         ShapeString(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  Tape* tape = RecordingTape({&x});
  Tensor c = MakeResult("Reshape", std::move(shape), std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [xn = x.shared_node(), cn = c.node()] {
      auto& g = xn->EnsureGrad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += cn->grad[i];
    });
  }
  return c;
}

Tensor GatherRows(const Tensor& source, std::span<const int> indices) {
  RequireRank(source, 2, "GatherRows");
  const std::size_t n = source.dim(0), d = source.dim(1);
  std::vector<double> out(indices.size() * d, 0.0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < -1 || (idx >= 0 && static_cast<std::size_t>(idx) >= n)) {
      throw DimensionError("GatherRows: index " + std::to_string(idx) +
                           " outside " + ShapeString(source.shape()));
    }
    if (idx >= 0) std::copy_n(source.data().begin() + idx * d, d, out.begin() + i * d);
  }
  Tape* tape = RecordingTape({&source});
  Tensor c = MakeResult("GatherRows", {indices.size(), d}, std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(),
                 [sn = source.shared_node(), cn = c.node(),
                  idx = std::vector<int>(indices.begin(), indices.end()), d] {
                   auto& g = sn->EnsureGrad();
                   for (std::size_t i = 0; i < idx.size(); ++i) {
                     if (idx[i] < 0) continue;
                     for (std::size_t j = 0; j < d; ++j)
                       g[idx[i] * d + j] += cn->grad[i * d + j];
                   }
                 });
  }
  return c;
}

Tensor RowDot(const Tensor& a, const Tensor& b) {
  RequireRank(a, 2, "RowDot");
  RequireSameShape(a, b, "RowDot");
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i] += a.data()[i * d + j] * b.data()[i * d + j];
  Tape* tape = RecordingTape({&a, &b});
  Tensor c = MakeResult("RowDot", {n}, std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [an = a.shared_node(), bn = b.shared_node(),
                                   cn = c.node(), n, d] {
      if (an->requires_grad) {
        auto& g = an->EnsureGrad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            g[i * d + j] += cn->grad[i] * bn->value[i * d + j];
      }
      if (bn->requires_grad) {
        auto& g = bn->EnsureGrad();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            g[i * d + j] += cn->grad[i] * an->value[i * d + j];
      }
    });
  }
  return c;
}

Tensor PickColumn(const Tensor& x, std::size_t column) {
  RequireRank(x, 2, "PickColumn");
  const std::size_t n = x.dim(0), m = x.dim(1);
  if (column >= m) {
    throw DimensionError("PickColumn: column " + std::to_string(column) +
                         " outside " + ShapeString(x.shape()));
  }
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = x.data()[i * m + column];
  Tape* tape = RecordingTape({&x});
  Tensor c = MakeResult("PickColumn", {n}, std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [xn = x.shared_node(), cn = c.node(), n, m,
                                   column] {
      auto& g = xn->EnsureGrad();
      for (std::size_t i = 0; i < n; ++i) g[i * m + column] += cn->grad[i];
    });
  }
  return c;
}

Tensor Dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("Dropout: rate must be in [0, 1)");
  }
  if (rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> scale(x.numel());
  for (double& s : scale) s = rng.Bernoulli(rate) ? 0.0 : keep_scale;
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * scale[i];
  Tape* tape = RecordingTape({&x});
  Tensor c = MakeResult("Dropout", x.shape(), std::move(out), tape);
  if (tape) {
    tape->Record(c.shared_node(), [xn = x.shared_node(), cn = c.node(),
                                   scale = std::move(scale)] {
      auto& g = xn->EnsureGrad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += cn->grad[i] * scale[i];
    });
  }
  return c;
}

}  // namespace speedyfeed::ad

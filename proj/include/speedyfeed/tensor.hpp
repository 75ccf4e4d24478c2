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

// Dense float64 tensors with define-by-run reverse-mode differentiation.
//
// Ops record themselves on the thread's active Tape (see RecordScope) when at
// least one input requires a gradient. Without an active tape every op runs
// in inference mode and builds no graph.
//
//   ad::Tape tape;
//   ad::Tensor loss;
//   {
//     ad::RecordScope scope(tape);
//     loss = ad::Sum(ad::MatMul(w, x));
//   }
//   tape.Backward(loss);   // w.grad() now holds d loss / d w

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace speedyfeed::ad {

using Shape = std::vector<std::size_t>;

std::size_t NumElements(const Shape& shape);
std::string ShapeString(const Shape& shape);

class Tape;

struct Node {
  Shape shape;
  std::vector<double> value;
  // Empty until the first gradient contribution arrives.
  std::vector<double> grad;
  bool requires_grad = false;
  // Tape that produced this node; null for leaves and constants.
  const Tape* producer = nullptr;

  std::vector<double>& EnsureGrad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

// Shared handle to a Node. Copies alias the same storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor Zeros(Shape shape, bool requires_grad = false);
  static Tensor FromData(Shape shape, std::vector<double> data,
                         bool requires_grad = false);
  static Tensor Scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // Writable access is reserved for leaves (parameters and inputs); values
  // produced by an op are immutable.
  std::span<double> mutable_data();

  double item() const;
  double operator[](std::size_t flat) const { return node_->value[flat]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->producer == nullptr; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Accumulated gradient; all zeros when nothing has been accumulated.
  std::vector<double> grad() const;
  std::span<double> mutable_grad() { return node_->EnsureGrad(); }
  void ZeroGrad();

  // Constant copy of the current value, cut from any graph.
  Tensor Detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& shared_node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  friend Tensor WrapNode(std::shared_ptr<Node> node);

  std::shared_ptr<Node> node_;
};

Tensor WrapNode(std::shared_ptr<Node> node);

// Ordered record of executed ops. Entries are appended as ops run, so every
// op's inputs precede it. A tape supports exactly one Backward call.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

  // Accumulates d loss / d leaf into every requires_grad leaf reached from
  // `loss`. A loss that does not require grad (a constant, or anything built
  // on an empty tape) contributes nothing.
  void Backward(const Tensor& loss);

  // Used by op implementations.
  void Record(std::shared_ptr<Node> output, BackwardFn fn);

 private:
  struct Entry {
    std::shared_ptr<Node> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// Makes `tape` the recording target of the current thread for its lifetime.
class RecordScope {
 public:
  explicit RecordScope(Tape& tape);
  ~RecordScope();
  RecordScope(const RecordScope&) = delete;
  RecordScope& operator=(const RecordScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording on the current thread (inference inside a training step).
class NoRecordScope {
 public:
  NoRecordScope();
  ~NoRecordScope();
  NoRecordScope(const NoRecordScope&) = delete;
  NoRecordScope& operator=(const NoRecordScope&) = delete;

 private:
  Tape* previous_;
};

Tape* ActiveTape();

namespace internal {

// Returns the active tape when any input requires a gradient, else null.
Tape* RecordingTape(std::initializer_list<const Tensor*> inputs);
Tape* RecordingTape(std::span<const Tensor> inputs);

// Wraps freshly computed values, checks them for NaN/Inf and, when `tape` is
// non-null, marks the result as produced by it. `op` names the failing op.
Tensor MakeResult(const char* op, Shape shape, std::vector<double> values,
                  Tape* tape);

}  // namespace internal

}  // namespace speedyfeed::ad

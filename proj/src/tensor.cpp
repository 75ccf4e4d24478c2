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

#include "speedyfeed/tensor.hpp"

#include <cmath>

#include "speedyfeed/errors.hpp"

namespace speedyfeed::ad {

namespace {
thread_local Tape* active_tape = nullptr;
}  // namespace

std::size_t NumElements(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string ShapeString(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor WrapNode(std::shared_ptr<Node> node) { return Tensor(std::move(node)); }

Tensor Tensor::Zeros(Shape shape, bool requires_grad) {
  std::vector<double> data(NumElements(shape), 0.0);
  return FromData(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::FromData(Shape shape, std::vector<double> data,
                        bool requires_grad) {
  if (NumElements(shape) != data.size()) {
    throw DimensionError("Tensor: shape " + ShapeString(shape) + " holds " +
                         std::to_string(NumElements(shape)) +
                         " values, got " + std::to_string(data.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::Scalar(double value) { return FromData({}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         ShapeString(shape()));
  }
  return node_->shape[axis];
}

std::span<double> Tensor::mutable_data() {
  if (!is_leaf()) throw InternalError("mutable_data on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + ShapeString(shape()));
  }
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw DimensionError("at(row, col) needs a rank-2 tensor");
  return node_->value[row * node_->shape[1] + col];
}

std::vector<double> Tensor::grad() const {
  if (node_->grad.empty()) return std::vector<double>(numel(), 0.0);
  return node_->grad;
}

void Tensor::ZeroGrad() { node_->grad.clear(); }

Tensor Tensor::Detach() const { return FromData(shape(), node_->value); }

void Tape::Record(std::shared_ptr<Node> output, BackwardFn fn) {
  if (consumed_) throw InternalError("recording on a consumed tape");
  entries_.push_back({std::move(output), std::move(fn)});
}

void Tape::Backward(const Tensor& loss) {
  if (consumed_) throw InternalError("Backward called twice on the same tape");
  if (!loss.defined() || loss.numel() != 1) {
    throw DimensionError("Backward needs a scalar loss");
  }
  consumed_ = true;
  if (!loss.requires_grad()) {
    entries_.clear();
    return;
  }
  if (loss.node()->producer != this) {
    entries_.clear();
    throw InternalError("loss was not produced on this tape");
  }
  loss.node()->EnsureGrad()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->fn();
  }
  // Releases intermediates; leaves keep their accumulated gradients.
  entries_.clear();
}

RecordScope::RecordScope(Tape& tape) : previous_(active_tape) {
  active_tape = &tape;
}

RecordScope::~RecordScope() { active_tape = previous_; }

NoRecordScope::NoRecordScope() : previous_(active_tape) {
  active_tape = nullptr;
}

NoRecordScope::~NoRecordScope() { active_tape = previous_; }

Tape* ActiveTape() { return active_tape; }

namespace internal {

Tape* RecordingTape(std::initializer_list<const Tensor*> inputs) {
  if (active_tape == nullptr) return nullptr;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return active_tape;
  }
  return nullptr;
}

Tape* RecordingTape(std::span<const Tensor> inputs) {
  if (active_tape == nullptr) return nullptr;
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return active_tape;
  }
  return nullptr;
}

Tensor MakeResult(const char* op, Shape shape, std::vector<double> values,
                  Tape* tape) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericalError(std::string(op) + ": non-finite value in output");
    }
  }
  Tensor out = Tensor::FromData(std::move(shape), std::move(values));
  if (tape != nullptr) {
    out.node()->requires_grad = true;
    out.node()->producer = tape;
  }
  return out;
}

}  // namespace internal

}  // namespace speedyfeed::ad

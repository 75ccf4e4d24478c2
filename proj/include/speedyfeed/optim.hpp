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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "speedyfeed/tensor.hpp"

namespace speedyfeed::ad {

struct NamedParameter {
  std::string name;
  Tensor tensor;
  // Optimizer group, e.g. "encoder" or "user".
  std::string group;
};

// Ordered registry of trainable tensors.
class ParameterSet {
 public:
  Tensor Add(std::string name, Tensor tensor, std::string group);

  const std::vector<NamedParameter>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t NumScalars() const;

  // Throws ConfigError for unknown names.
  const Tensor& Get(const std::string& name) const;
  bool Contains(const std::string& name) const;

  void ZeroGrad();
  // Copies values from `source` by name; shapes must agree.
  void CopyValuesFrom(const std::vector<std::pair<std::string, Tensor>>& source);

 private:
  std::vector<NamedParameter> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

// One bias-corrected Adam update of `param` in place. `step` is the 1-based
// index of this update.
void AdamUpdate(std::span<double> param, std::span<const double> grad,
                AdamMoments& moments, std::uint64_t step, double lr,
                const AdamHyper& hyper);

// Adam over a ParameterSet with one learning rate per parameter group.
class Adam {
 public:
  Adam(AdamHyper hyper, std::map<std::string, double> group_lr);

  // Applies the accumulated gradients of every parameter. Throws
  // NumericalError, leaving all parameters untouched, when any gradient is
  // non-finite. Parameters without gradient count as zero gradient.
  void Step(ParameterSet& params);

  std::uint64_t steps() const { return steps_; }
  double LearningRate(const std::string& group) const;

  // Moments and step counter as named tensors for checkpointing.
  std::vector<std::pair<std::string, Tensor>> ExportState() const;
  void ImportState(const std::vector<std::pair<std::string, Tensor>>& state);

 private:
  AdamHyper hyper_;
  std::map<std::string, double> group_lr_;
  std::map<std::string, AdamMoments> moments_;
  std::uint64_t steps_ = 0;
};

}  // namespace speedyfeed::ad

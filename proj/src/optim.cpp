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

#include "speedyfeed/optim.hpp"

#include <algorithm>
#include <cmath>

#include "speedyfeed/errors.hpp"

namespace speedyfeed::ad {

Tensor ParameterSet::Add(std::string name, Tensor tensor, std::string group) {
  if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
  if (!tensor.is_leaf()) throw InternalError("parameter " + name + " is not a leaf");
  tensor.node()->requires_grad = true;
  index_[name] = entries_.size();
  entries_.push_back({std::move(name), tensor, std::move(group)});
  return tensor;
}

std::size_t ParameterSet::NumScalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

const Tensor& ParameterSet::Get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return entries_[it->second].tensor;
}

bool ParameterSet::Contains(const std::string& name) const {
  return index_.count(name) > 0;
}

void ParameterSet::ZeroGrad() {
  for (auto& e : entries_) e.tensor.ZeroGrad();
}

void ParameterSet::CopyValuesFrom(
    const std::vector<std::pair<std::string, Tensor>>& source) {
  for (const auto& [name, value] : source) {
    if (!Contains(name)) continue;
    Tensor target = Get(name);
    if (target.shape() != value.shape()) {
      throw DataError("parameter " + name + " has shape " +
                      ShapeString(target.shape()) + ", checkpoint holds " +
                      ShapeString(value.shape()));
    }
    std::copy(value.data().begin(), value.data().end(),
              target.mutable_data().begin());
  }
  for (const auto& e : entries_) {
    const bool found = std::any_of(source.begin(), source.end(),
                                   [&](const auto& s) { return s.first == e.name; });
    if (!found) throw DataError("checkpoint lacks parameter " + e.name);
  }
}

void AdamUpdate(std::span<double> param, std::span<const double> grad,
                AdamMoments& moments, std::uint64_t step, double lr,
                const AdamHyper& hyper) {
  if (param.size() != grad.size()) {
    throw DimensionError("AdamUpdate: parameter/gradient size mismatch");
  }
  if (moments.m.empty()) {
    moments.m.assign(param.size(), 0.0);
    moments.v.assign(param.size(), 0.0);
  }
  if (moments.m.size() != param.size() || moments.v.size() != param.size()) {
    throw DimensionError("AdamUpdate: optimizer state size mismatch");
  }
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    moments.m[i] = hyper.beta1 * moments.m[i] + (1.0 - hyper.beta1) * grad[i];
    moments.v[i] =
        hyper.beta2 * moments.v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
    const double m_hat = moments.m[i] / c1;
    const double v_hat = moments.v[i] / c2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

Adam::Adam(AdamHyper hyper, std::map<std::string, double> group_lr)
    : hyper_(hyper), group_lr_(std::move(group_lr)) {
  for (const auto& [group, lr] : group_lr_) {
    if (!(lr >= 0.0) || !std::isfinite(lr)) {
      throw ConfigError("learning rate for group " + group + " must be >= 0");
    }
  }
}

double Adam::LearningRate(const std::string& group) const {
  const auto it = group_lr_.find(group);
  if (it == group_lr_.end()) {
    throw ConfigError("no learning rate configured for group " + group);
  }
  return it->second;
}

void Adam::Step(ParameterSet& params) {
  for (const auto& e : params.entries()) {
    LearningRate(e.group);
    if (!e.tensor.has_grad()) continue;
    for (double g : e.tensor.node()->grad) {
      if (!std::isfinite(g)) {
        throw NumericalError("non-finite gradient in " + e.name +
                             "; optimizer step rejected");
      }
    }
  }
  ++steps_;
  for (const auto& e : params.entries()) {
    Tensor t = e.tensor;
    const std::vector<double> grad = t.grad();
    AdamUpdate(t.mutable_data(), grad, moments_[e.name], steps_,
               LearningRate(e.group), hyper_);
  }
}

std::vector<std::pair<std::string, Tensor>> Adam::ExportState() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("adam.steps",
                   Tensor::FromData({1}, {static_cast<double>(steps_)}));
  for (const auto& [name, mom] : moments_) {
    out.emplace_back("adam.m." + name, Tensor::FromData({mom.m.size()}, mom.m));
    out.emplace_back("adam.v." + name, Tensor::FromData({mom.v.size()}, mom.v));
  }
  return out;
}

void Adam::ImportState(const std::vector<std::pair<std::string, Tensor>>& state) {
  moments_.clear();
  steps_ = 0;
  for (const auto& [name, t] : state) {
    if (name == "adam.steps") {
      steps_ = static_cast<std::uint64_t>(t.item());
    } else if (name.rfind("adam.m.", 0) == 0) {
      const auto d = t.data();
      moments_[name.substr(7)].m.assign(d.begin(), d.end());
    } else if (name.rfind("adam.v.", 0) == 0) {
      const auto d = t.data();
      moments_[name.substr(7)].v.assign(d.begin(), d.end());
    }
  }
}

}  // namespace speedyfeed::ad

/* Copyright 2026 The emc-probe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "emc/param_vector.hpp"

#include <algorithm>

#include "emc/error.hpp"

namespace emc {

std::size_t ParamVector::add(std::string name, Shape shape) {
  Segment seg{std::move(name), values_.size(), std::move(shape)};
  values_.resize(values_.size() + seg.size(), 0.0);
  segments_.push_back(std::move(seg));
  return segments_.size() - 1;
}

std::span<double> ParamVector::segment(std::size_t i) {
  const auto& s = segments_.at(i);
  return std::span<double>(values_).subspan(s.offset, s.size());
}

std::span<const double> ParamVector::segment(std::size_t i) const {
  const auto& s = segments_.at(i);
  return std::span<const double>(values_).subspan(s.offset, s.size());
}

std::size_t ParamVector::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name == name) return i;
  }
  throw Error("no parameter segment named '" + std::string(name) + "'");
}

Tensor ParamVector::unflatten(std::size_t i) const {
  auto s = segment(i);
  return Tensor(segments_[i].shape, std::vector<double>(s.begin(), s.end()));
}

std::vector<Tensor> ParamVector::unflatten() const {
  std::vector<Tensor> out;
  out.reserve(segments_.size());
  for (std::size_t i = 0; i < segments_.size(); ++i) out.push_back(unflatten(i));
  return out;
}

void ParamVector::flatten(std::span<const Tensor> tensors) {
  if (tensors.size() != segments_.size()) {
    throw ShapeError("flatten: expected " + std::to_string(segments_.size()) +
                     " tensors, got " + std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].shape() != segments_[i].shape) {
      throw ShapeError("flatten: segment '" + segments_[i].name + "' has shape " +
                       shape_str(segments_[i].shape) + ", got " +
                       shape_str(tensors[i].shape()));
    }
    std::ranges::copy(tensors[i].data(), segment(i).begin());
  }
}

}  // namespace emc

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

#ifndef EMC_PARAM_VECTOR_HPP_
#define EMC_PARAM_VECTOR_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emc/tensor.hpp"

namespace emc {

/// Location of one named tensor inside a flat parameter vector.
struct Segment {
  std::string name;
  std::size_t offset = 0;
  Shape shape;

  std::size_t size() const { return shape_size(shape); }
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Flat parameter storage plus the table that maps it back onto tensors.
/// Segments are contiguous and laid out in insertion order.
class ParamVector {
 public:
  ParamVector() = default;

  /// Appends a zero-filled segment and returns its index.
  std::size_t add(std::string name, Shape shape);

  std::size_t size() const { return values_.size(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& vec() { return values_; }
  const std::vector<double>& vec() const { return values_; }

  const std::vector<Segment>& segments() const { return segments_; }
  std::span<double> segment(std::size_t i);
  std::span<const double> segment(std::size_t i) const;
  std::size_t index_of(std::string_view name) const;

  Tensor unflatten(std::size_t i) const;
  std::vector<Tensor> unflatten() const;
  /// Writes `tensors` back in segment order; shapes must match exactly.
  void flatten(std::span<const Tensor> tensors);

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<Segment> segments_;
  std::vector<double> values_;
};

}  // namespace emc

#endif  // EMC_PARAM_VECTOR_HPP_

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

#ifndef EMC_DATA_HPP_
#define EMC_DATA_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "emc/tensor.hpp"

namespace emc::data {

/// Immutable sample store. `inputs` is (N, features) or (N, C, H, W).
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t num_classes = 0;
  std::string name;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const;
  std::size_t sample_size() const;
  bool is_spatial() const { return inputs.rank() == 4; }

  /// Throws unless shapes agree and every label is in [0, num_classes).
  void validate() const;

  /// Rows in the given order, shape (rows.size(), sample_shape...).
  Tensor gather_inputs(std::span<const std::size_t> rows) const;
  std::vector<int> gather_labels(std::span<const std::size_t> rows) const;
  Dataset subset(std::span<const std::size_t> rows) const;
};

/// Throws if two samples have bit-identical inputs but different labels.
void check_no_conflicting_duplicates(const Dataset& ds);

// --- EMCT tensor files ------------------------------------------------------
//
// bytes 0-3 "EMCT", byte 4 version (1), byte 5 dtype, byte 6 ndim, then ndim
// little-endian u32 dims, then the row-major little-endian payload.

enum class DType : std::uint8_t { f32 = 1, f64 = 2, u16 = 3 };

struct EmctArray {
  DType dtype = DType::f64;
  Shape shape;
  std::vector<double> values;  // widened; u16 values are exact
};

EmctArray read_emct(const std::filesystem::path& path);
void write_emct(const std::filesystem::path& path, const EmctArray& array);

/// Reads the JSON manifest {"inputs", "labels", "num_classes", "name"} and
/// the two EMCT files it names (paths relative to the manifest).
Dataset load_tensor_file(const std::filesystem::path& manifest);
/// Writes `<stem>.inputs.emct`, `<stem>.labels.emct` next to `manifest`.
void save_tensor_files(const Dataset& ds, const std::filesystem::path& manifest,
                       DType input_dtype = DType::f64);

/// RFC-4180 CSV with a header row. Every column except `label_column` is a
/// numeric feature; features are standardized to zero mean and unit
/// (population) variance, constant columns become zero.
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column,
                 std::size_t num_classes);

/// Gaussian clusters: class c is N(separation * mu_c, I) with seeded unit
/// directions mu_c. Labels are balanced to within one sample.
Dataset synth_clusters(std::size_t classes, std::size_t features, std::size_t samples,
                       double separation, std::uint64_t seed);

// --- Interventions ------------------------------------------------------------

enum class TransformKind {
  none,
  random_labels,
  gaussian_inputs,
  fixed_permutation,
  merge_classes,
  binarize,
  resize,
};

struct TransformSpec {
  TransformKind kind = TransformKind::none;
  std::size_t groups = 0;  // merge_classes
  std::size_t height = 0;  // resize
  std::size_t width = 0;   // resize
  std::uint64_t seed = 0;

  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;
};

std::string to_string(TransformKind kind);
TransformKind transform_kind_from_string(const std::string& s);

/// Pure function of (transform, ds).
Dataset apply(const TransformSpec& transform, const Dataset& ds);

struct SubsetSampler {
  std::size_t n = 0;
  std::uint64_t seed = 0;
};

/// n distinct row indices in seeded order.
std::vector<std::size_t> sample_rows(std::size_t population, const SubsetSampler& sampler);
Dataset subsample(const Dataset& ds, const SubsetSampler& sampler);

}  // namespace emc::data

#endif  // EMC_DATA_HPP_

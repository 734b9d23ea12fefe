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

#ifndef EMC_REPARAM_HPP_
#define EMC_REPARAM_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "emc/models.hpp"
#include "emc/optim.hpp"
#include "emc/trainable.hpp"

namespace emc::reparam {

struct SubspaceSpec {
  std::size_t dim = 1;
  std::uint64_t seed = 0;
  /// 0 selects 1/sqrt(dim).
  double scale = 0.0;
  /// Orthonormalize the projection columns (requires it to fit in memory).
  bool orthonormalize = false;

  double effective_scale() const;
  void validate(std::size_t ambient) const;
  friend bool operator==(const SubspaceSpec&, const SubspaceSpec&) = default;
};

/// Trains z in theta(z) = theta0 + scale * P z, P a seeded d x D matrix of
/// i.i.d. standard normals. z starts at 0. P is held in memory when it has at
/// most 2^24 entries and regenerated column by column otherwise.
class SubspaceModel final : public Trainable {
 public:
  SubspaceModel(models::Model base, SubspaceSpec spec);

  ParamVector& params() override { return z_; }
  const ParamVector& params() const override { return z_; }
  const models::Model& base() const { return base_; }
  const SubspaceSpec& spec() const { return spec_; }

  /// Column j of P (unscaled).
  std::vector<double> column(std::size_t j) const;
  /// theta0 + scale * P z.
  std::vector<double> ambient(std::span<const double> z) const;

  double loss_grad(std::span<const double> z, const data::Dataset& ds,
                   std::span<const std::size_t> rows, double smoothing,
                   std::span<double> grad) const override;
  std::vector<int> predict(std::span<const double> z, const data::Dataset& ds,
                           std::span<const std::size_t> rows) const override;

 private:
  void generate_column(std::size_t j, std::span<double> out) const;

  models::Model base_;
  SubspaceSpec spec_;
  double scale_;
  std::vector<double> theta0_;
  std::vector<double> dense_;  // column-major d x D, or empty
  ParamVector z_;
};

struct QuantSpec {
  std::size_t bits = 8;
  void validate() const;
  friend bool operator==(const QuantSpec&, const QuantSpec&) = default;
};

/// Symmetric per-tensor fake quantization:
/// q = clamp(round(x / s), -(2^(b-1) - 1), 2^(b-1) - 1) * s with
/// s = max|x| / (2^(b-1) - 1), and s = 1 for an all-zero tensor.
std::vector<double> fake_quantize(std::span<const double> x, std::size_t bits,
                                  double* scale_out = nullptr);

/// Quantization-aware wrapper: forward and evaluation use fake-quantized
/// weights, gradients pass straight through to the full-precision latents.
/// Certificates are evaluated on the plain loss at the quantized point.
class QuantizedModel final : public Trainable {
 public:
  QuantizedModel(models::Model base, QuantSpec spec);

  ParamVector& params() override { return base_.params(); }
  const ParamVector& params() const override { return base_.params(); }
  const models::Model& base() const { return base_; }
  std::size_t bits_per_param() const override { return spec_.bits; }

  std::vector<double> quantized(std::span<const double> theta) const;

  double loss_grad(std::span<const double> theta, const data::Dataset& ds,
                   std::span<const std::size_t> rows, double smoothing,
                   std::span<double> grad) const override;
  std::vector<int> predict(std::span<const double> theta, const data::Dataset& ds,
                           std::span<const std::size_t> rows) const override;
  std::vector<double> certificate_point() const override;
  double certificate_loss_grad(std::span<const double> point, const data::Dataset& ds,
                               std::span<const std::size_t> rows, double smoothing,
                               std::span<double> grad) const override;

 private:
  models::Model base_;
  QuantSpec spec_;
};

/// Trains `model` through a QuantizedModel and copies the latents back.
optim::TrainReport quantized_train(models::Model& model, const data::Dataset& ds,
                                   const QuantSpec& quant, const optim::OptimizerSpec& opt,
                                   const optim::RegularizerSpec& reg,
                                   const optim::EarlyStop* early_stop = nullptr);

}  // namespace emc::reparam

#endif  // EMC_REPARAM_HPP_

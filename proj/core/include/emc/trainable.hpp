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

#ifndef EMC_TRAINABLE_HPP_
#define EMC_TRAINABLE_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "emc/data.hpp"
#include "emc/param_vector.hpp"

namespace emc {

/// Anything the training loop and the convergence certificates can drive: a
/// plain network, a subspace reparameterization, a fake-quantized network.
class Trainable {
 public:
  virtual ~Trainable() = default;

  /// The trainable coordinates.
  virtual ParamVector& params() = 0;
  virtual const ParamVector& params() const = 0;

  /// Mean (optionally label-smoothed) cross-entropy over `rows` evaluated at
  /// `theta`. Writes d(loss)/d(theta) into `grad` unless it is empty.
  virtual double loss_grad(std::span<const double> theta, const data::Dataset& ds,
                           std::span<const std::size_t> rows, double smoothing,
                           std::span<double> grad) const = 0;

  virtual std::vector<int> predict(std::span<const double> theta, const data::Dataset& ds,
                                   std::span<const std::size_t> rows) const = 0;

  /// Point at which the minimum certificates are evaluated and the loss whose
  /// gradient/Hessian they inspect. Defaults to the trainable coordinates.
  virtual std::vector<double> certificate_point() const { return params().vec(); }
  virtual double certificate_loss_grad(std::span<const double> point, const data::Dataset& ds,
                                       std::span<const std::size_t> rows, double smoothing,
                                       std::span<double> grad) const {
    return loss_grad(point, ds, rows, smoothing, grad);
  }

  /// Storage width of one trainable scalar.
  virtual std::size_t bits_per_param() const { return 32; }
};

/// Row indices 0..n-1.
std::vector<std::size_t> all_rows(std::size_t n);

/// Fraction of rows whose argmax prediction equals the label.
double accuracy(const Trainable& model, std::span<const double> theta,
                const data::Dataset& ds);

/// Mean loss and gradient over the whole dataset, accumulated in chunks of
/// `chunk` rows. With `certificate` set the certificate loss is used.
double full_loss_grad(const Trainable& model, std::span<const double> theta,
                      const data::Dataset& ds, double smoothing, std::span<double> grad,
                      bool certificate = false, std::size_t chunk = 512);

/// Trainable scalars times bits per scalar.
std::size_t effective_bits(const Trainable& model);

}  // namespace emc

#endif  // EMC_TRAINABLE_HPP_

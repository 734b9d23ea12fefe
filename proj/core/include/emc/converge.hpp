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

#ifndef EMC_CONVERGE_HPP_
#define EMC_CONVERGE_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>

#include "emc/autodiff.hpp"
#include "emc/trainable.hpp"

namespace emc::converge {

/// Thresholds for the three minimum certificates.
struct ConvergenceCriteria {
  double grad_norm_threshold = 1e-3;
  std::size_t plateau_epochs = 10;
  double eig_threshold = -1e-2;
  std::size_t lanczos_iters = 40;
  std::uint64_t lanczos_seed = 0;
  /// Finite-difference step for Hessian-vector products; 0 selects
  /// 1e-4 * (1 + max|theta|).
  double hvp_epsilon = 0.0;

  void validate() const;
  friend bool operator==(const ConvergenceCriteria&, const ConvergenceCriteria&) = default;
};

struct ConvergenceReport {
  double loss = 0.0;
  double grad_norm = 0.0;
  bool grad_ok = false;
  bool plateaued = false;
  /// False when the Lanczos pass was skipped.
  bool eig_checked = false;
  double min_eig_estimate = 0.0;
  bool eig_ok = false;
  bool is_minimum = false;
  std::size_t lanczos_iterations = 0;
  bool lanczos_breakdown = false;
  double lanczos_residual = 0.0;

  friend bool operator==(const ConvergenceReport&, const ConvergenceReport&) = default;
};

using LinearOperator = std::function<void(std::span<const double>, std::span<double>)>;

struct LanczosResult {
  double min_ritz = 0.0;
  double max_ritz = 0.0;
  std::size_t iterations = 0;
  /// The Krylov space became invariant before `iters` steps.
  bool breakdown = false;
  /// |beta_k * s_k| for the smallest Ritz pair.
  double residual = 0.0;
};

/// Lanczos tridiagonalization of a symmetric operator with full
/// reorthogonalization and a seeded Gaussian start vector.
LanczosResult lanczos(const LinearOperator& op, std::size_t dim, std::size_t iters,
                      std::uint64_t seed);

/// Euclidean norm of the mean certificate-loss gradient over the whole
/// dataset.
double full_gradient_norm(const Trainable& model, const data::Dataset& ds,
                          double smoothing = 0.0);

/// True iff none of the last `plateau_epochs` entries falls below the minimum
/// of the entries before them by more than a relative 1e-6. Needs at least
/// one entry ahead of the window.
bool plateau(std::span<const double> loss_history, std::size_t plateau_epochs);

/// Smallest Ritz value of the Hessian of a loss given by its gradient.
double min_hessian_eig(const ad::GradFn& grad, std::span<const double> point,
                       const ConvergenceCriteria& criteria, LanczosResult* diag = nullptr);

double min_hessian_eig(const Trainable& model, const data::Dataset& ds,
                       const ConvergenceCriteria& criteria, double smoothing = 0.0,
                       LanczosResult* diag = nullptr);

/// Evaluates all three certificates. Does not modify `model`.
ConvergenceReport verify(const Trainable& model, const data::Dataset& ds,
                         std::span<const double> loss_history,
                         const ConvergenceCriteria& criteria, double smoothing = 0.0);

}  // namespace emc::converge

#endif  // EMC_CONVERGE_HPP_

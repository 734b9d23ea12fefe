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

#include "emc/converge.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <random>

#include "emc/error.hpp"
#include "emc/rng.hpp"

namespace emc::converge {

void ConvergenceCriteria::validate() const {
  if (plateau_epochs < 1) throw ConfigError("plateau_epochs must be >= 1");
  if (lanczos_iters < 2) throw ConfigError("lanczos_iters must be >= 2");
  if (!(grad_norm_threshold > 0.0)) throw ConfigError("grad_norm_threshold must be positive");
  if (hvp_epsilon < 0.0) throw ConfigError("hvp_epsilon must be >= 0");
}

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

LanczosResult lanczos(const LinearOperator& op, std::size_t dim, std::size_t iters,
                      std::uint64_t seed) {
  if (dim == 0) throw Error("lanczos: empty operator");
  const std::size_t m = std::min(iters, dim);
  Rng rng(derive_seed({seed, 0x1a2c05u}));
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> q;
  q.reserve(m);
  std::vector<double> v(dim);
  for (double& x : v) x = normal(rng);
  const double n0 = std::sqrt(dot(v, v));
  for (double& x : v) x /= n0;
  q.push_back(v);

  std::vector<double> alpha, beta;
  std::vector<double> w(dim);
  LanczosResult res;
  double scale = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    op(q[j], w);
    for (double x : w) {
      if (!std::isfinite(x)) throw NumericError("lanczos: operator returned non-finite values");
    }
    const double a = dot(q[j], w);
    alpha.push_back(a);
    scale = std::max(scale, std::abs(a));
    // Full reorthogonalization against every basis vector, twice.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& qi : q) {
        const double c = dot(qi, w);
        for (std::size_t k = 0; k < dim; ++k) w[k] -= c * qi[k];
      }
    }
    const double b = std::sqrt(dot(w, w));
    res.iterations = j + 1;
    if (j + 1 == m) {
      beta.push_back(b);
      break;
    }
    scale = std::max(scale, b);
    if (b <= 1e-10 * std::max(scale, 1e-300)) {
      res.breakdown = true;
      beta.push_back(b);
      break;
    }
    beta.push_back(b);
    for (double& x : w) x /= b;
    q.push_back(w);
  }

  const auto k = static_cast<Eigen::Index>(alpha.size());
  Eigen::VectorXd diag = Eigen::Map<const Eigen::VectorXd>(alpha.data(), k);
  Eigen::VectorXd sub(std::max<Eigen::Index>(k - 1, 0));
  for (Eigen::Index i = 0; i + 1 < k; ++i) sub[i] = beta[static_cast<std::size_t>(i)];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig;
  eig.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  if (eig.info() != Eigen::Success) throw NumericError("lanczos: tridiagonal solve failed");
  res.min_ritz = eig.eigenvalues()[0];
  res.max_ritz = eig.eigenvalues()[k - 1];
  res.residual = std::abs(beta.back() * eig.eigenvectors()(k - 1, 0));
  return res;
}

double full_gradient_norm(const Trainable& model, const data::Dataset& ds, double smoothing) {
  const auto point = model.certificate_point();
  std::vector<double> g(point.size());
  full_loss_grad(model, point, ds, smoothing, g, true);
  double s = 0.0;
  for (double x : g) {
    if (!std::isfinite(x)) throw NumericError("full gradient has non-finite entries");
    s += x * x;
  }
  return std::sqrt(s);
}

bool plateau(std::span<const double> h, std::size_t k) {
  if (k == 0 || h.size() <= k) return false;
  const std::size_t start = h.size() - k;
  const double best = *std::min_element(h.begin(), h.begin() + static_cast<std::ptrdiff_t>(start));
  const double floor = best - 1e-6 * std::abs(best);
  for (std::size_t i = start; i < h.size(); ++i) {
    if (h[i] < floor) return false;
  }
  return true;
}

double min_hessian_eig(const ad::GradFn& grad, std::span<const double> point,
                       const ConvergenceCriteria& criteria, LanczosResult* diag) {
  for (double x : point) {
    if (!std::isfinite(x)) throw NumericError("min_hessian_eig: non-finite parameters");
  }
  const double eps =
      criteria.hvp_epsilon > 0.0 ? criteria.hvp_epsilon : ad::default_hvp_epsilon(point);
  LinearOperator op = [&](std::span<const double> v, std::span<double> out) {
    const auto hv = ad::hvp(grad, point, v, eps);
    std::ranges::copy(hv, out.begin());
  };
  const auto r = lanczos(op, point.size(), criteria.lanczos_iters, criteria.lanczos_seed);
  if (diag) *diag = r;
  return r.min_ritz;
}

double min_hessian_eig(const Trainable& model, const data::Dataset& ds,
                       const ConvergenceCriteria& criteria, double smoothing,
                       LanczosResult* diag) {
  const auto point = model.certificate_point();
  ad::GradFn g = [&](std::span<const double> th) {
    std::vector<double> out(th.size());
    full_loss_grad(model, th, ds, smoothing, out, true);
    return out;
  };
  return min_hessian_eig(g, point, criteria, diag);
}

ConvergenceReport verify(const Trainable& model, const data::Dataset& ds,
                         std::span<const double> loss_history,
                         const ConvergenceCriteria& criteria, double smoothing) {
  criteria.validate();
  ConvergenceReport r;
  const auto point = model.certificate_point();
  std::vector<double> g(point.size());
  r.loss = full_loss_grad(model, point, ds, smoothing, g, true);
  double s = 0.0;
  for (double x : g) s += x * x;
  r.grad_norm = std::sqrt(s);
  if (!std::isfinite(r.grad_norm)) throw NumericError("full gradient has non-finite entries");
  r.grad_ok = r.grad_norm <= criteria.grad_norm_threshold;
  r.plateaued = plateau(loss_history, criteria.plateau_epochs);
  LanczosResult diag;
  r.min_eig_estimate = min_hessian_eig(model, ds, criteria, smoothing, &diag);
  r.eig_checked = true;
  r.lanczos_iterations = diag.iterations;
  r.lanczos_breakdown = diag.breakdown;
  r.lanczos_residual = diag.residual;
  r.eig_ok = r.min_eig_estimate >= criteria.eig_threshold;
  r.is_minimum = r.grad_ok && r.plateaued && r.eig_ok;
  return r;
}

}  // namespace emc::converge

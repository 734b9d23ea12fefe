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

#include "emc/reparam.hpp"

#include <Eigen/QR>
#include <cmath>
#include <random>

#include "emc/error.hpp"
#include "emc/rng.hpp"

namespace emc::reparam {

namespace {
constexpr std::size_t kMaxDenseEntries = std::size_t{1} << 24;
}

double SubspaceSpec::effective_scale() const {
  return scale > 0.0 ? scale : 1.0 / std::sqrt(static_cast<double>(dim));
}

void SubspaceSpec::validate(std::size_t ambient) const {
  if (dim < 1) throw ConfigError("subspace dim must be >= 1");
  if (dim > ambient) {
    throw ConfigError("subspace dim " + std::to_string(dim) + " exceeds ambient dimension " +
                      std::to_string(ambient));
  }
  if (scale < 0.0) throw ConfigError("subspace scale must be >= 0");
}

SubspaceModel::SubspaceModel(models::Model base, SubspaceSpec spec)
    : base_(std::move(base)), spec_(spec), scale_(spec.effective_scale()),
      theta0_(base_.params().vec()) {
  const std::size_t d = theta0_.size();
  spec_.validate(d);
  z_.add("z", {spec_.dim});
  if (d * spec_.dim <= kMaxDenseEntries) {
    dense_.resize(d * spec_.dim);
    for (std::size_t j = 0; j < spec_.dim; ++j)
      generate_column(j, std::span<double>(dense_).subspan(j * d, d));
    if (spec_.orthonormalize) {
      Eigen::Map<Eigen::MatrixXd> p(dense_.data(), static_cast<Eigen::Index>(d),
                                    static_cast<Eigen::Index>(spec_.dim));
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(p);
      Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(p.rows(), p.cols());
      p = q;
    }
  } else if (spec_.orthonormalize) {
    throw ConfigError("orthonormalized subspace projection too large to hold in memory");
  }
}

void SubspaceModel::generate_column(std::size_t j, std::span<double> out) const {
  Rng rng(derive_seed({spec_.seed, 0xc0105u, j}));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& x : out) x = normal(rng);
}

std::vector<double> SubspaceModel::column(std::size_t j) const {
  const std::size_t d = theta0_.size();
  if (!dense_.empty()) {
    return std::vector<double>(dense_.begin() + static_cast<std::ptrdiff_t>(j * d),
                               dense_.begin() + static_cast<std::ptrdiff_t>((j + 1) * d));
  }
  std::vector<double> col(d);
  generate_column(j, col);
  return col;
}

std::vector<double> SubspaceModel::ambient(std::span<const double> z) const {
  if (z.size() != spec_.dim) throw ShapeError("subspace coordinate has wrong length");
  const std::size_t d = theta0_.size();
  std::vector<double> theta = theta0_;
  std::vector<double> col(dense_.empty() ? d : 0);
  for (std::size_t j = 0; j < spec_.dim; ++j) {
    if (z[j] == 0.0) continue;
    const double* c = col.data();
    if (dense_.empty()) {
      generate_column(j, col);
    } else {
      c = dense_.data() + j * d;
    }
    const double a = scale_ * z[j];
    for (std::size_t i = 0; i < d; ++i) theta[i] += a * c[i];
  }
  return theta;
}

double SubspaceModel::loss_grad(std::span<const double> z, const data::Dataset& ds,
                                std::span<const std::size_t> rows, double smoothing,
                                std::span<double> grad) const {
  const auto theta = ambient(z);
  if (grad.empty()) return base_.loss_grad(theta, ds, rows, smoothing, {});
  const std::size_t d = theta.size();
  std::vector<double> g(d);
  const double loss = base_.loss_grad(theta, ds, rows, smoothing, g);
  std::vector<double> col(dense_.empty() ? d : 0);
  for (std::size_t j = 0; j < spec_.dim; ++j) {
    const double* c = col.data();
    if (dense_.empty()) {
      generate_column(j, col);
    } else {
      c = dense_.data() + j * d;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += c[i] * g[i];
    grad[j] = scale_ * s;
  }
  return loss;
}

std::vector<int> SubspaceModel::predict(std::span<const double> z, const data::Dataset& ds,
                                        std::span<const std::size_t> rows) const {
  return base_.predict(ambient(z), ds, rows);
}

// ---------------------------------------------------------------------------

void QuantSpec::validate() const {
  if (bits < 2 || bits > 16) throw ConfigError("quantization bits must lie in [2, 16]");
}

std::vector<double> fake_quantize(std::span<const double> x, std::size_t bits,
                                  double* scale_out) {
  const double qmax = std::ldexp(1.0, static_cast<int>(bits) - 1) - 1.0;
  double maxabs = 0.0;
  for (double v : x) maxabs = std::max(maxabs, std::abs(v));
  const double s = maxabs > 0.0 ? maxabs / qmax : 1.0;
  if (scale_out) *scale_out = s;
  std::vector<double> q(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    q[i] = std::clamp(std::round(x[i] / s), -qmax, qmax) * s;
  }
  return q;
}

QuantizedModel::QuantizedModel(models::Model base, QuantSpec spec)
    : base_(std::move(base)), spec_(spec) {
  spec_.validate();
}

std::vector<double> QuantizedModel::quantized(std::span<const double> theta) const {
  std::vector<double> out(theta.size());
  for (const auto& seg : base_.params().segments()) {
    const auto q = fake_quantize(theta.subspan(seg.offset, seg.size()), spec_.bits);
    std::ranges::copy(q, out.begin() + static_cast<std::ptrdiff_t>(seg.offset));
  }
  return out;
}

double QuantizedModel::loss_grad(std::span<const double> theta, const data::Dataset& ds,
                                 std::span<const std::size_t> rows, double smoothing,
                                 std::span<double> grad) const {
  return base_.loss_grad(quantized(theta), ds, rows, smoothing, grad);
}

std::vector<int> QuantizedModel::predict(std::span<const double> theta,
                                         const data::Dataset& ds,
                                         std::span<const std::size_t> rows) const {
  return base_.predict(quantized(theta), ds, rows);
}

std::vector<double> QuantizedModel::certificate_point() const {
  return quantized(base_.params().values());
}

double QuantizedModel::certificate_loss_grad(std::span<const double> point,
                                             const data::Dataset& ds,
                                             std::span<const std::size_t> rows,
                                             double smoothing, std::span<double> grad) const {
  return base_.loss_grad(point, ds, rows, smoothing, grad);
}

optim::TrainReport quantized_train(models::Model& model, const data::Dataset& ds,
                                   const QuantSpec& quant, const optim::OptimizerSpec& opt,
                                   const optim::RegularizerSpec& reg,
                                   const optim::EarlyStop* early_stop) {
  QuantizedModel q(model, quant);
  auto report = optim::train(q, ds, opt, reg, early_stop);
  model.params() = q.params();
  return report;
}

}  // namespace emc::reparam

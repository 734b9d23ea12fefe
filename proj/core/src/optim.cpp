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

#include "emc/optim.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include "emc/error.hpp"
#include "emc/rng.hpp"

namespace emc::optim {

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::gd: return "gd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
    case OptimizerKind::shampoo: return "shampoo";
  }
  return "?";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  for (auto k : {OptimizerKind::sgd, OptimizerKind::gd, OptimizerKind::adam,
                 OptimizerKind::adamw, OptimizerKind::shampoo})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown optimizer '" + s + "'");
}

std::string to_string(Schedule s) { return s == Schedule::constant ? "constant" : "cosine"; }

Schedule schedule_from_string(const std::string& s) {
  if (s == "constant") return Schedule::constant;
  if (s == "cosine") return Schedule::cosine;
  throw ConfigError("unknown schedule '" + s + "'");
}

void OptimizerSpec::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("betas must lie in [0, 1)");
  }
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (shampoo_update_every < 1) throw ConfigError("shampoo_update_every must be >= 1");
  if (!(shampoo_damping > 0.0)) throw ConfigError("shampoo_damping must be positive");
  if (lr_min < 0.0 || lr_min > lr) throw ConfigError("lr_min must lie in [0, lr]");
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon must be positive");
}

void RegularizerSpec::validate() const {
  if (sam_rho < 0.0) throw ConfigError("sam_rho must be >= 0");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw ConfigError("label_smoothing must lie in [0, 1)");
  }
}

double cosine_lr(double t, double T, double lr_max, double lr_min) {
  if (T <= 0.0) return lr_max;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t / T));
}

double scheduled_lr(const OptimizerSpec& spec, std::size_t epoch) {
  if (spec.schedule == Schedule::constant) return spec.lr;
  return cosine_lr(static_cast<double>(epoch), static_cast<double>(spec.max_epochs), spec.lr,
                   spec.lr_min);
}

// ---------------------------------------------------------------------------

void Sgd::step(std::span<double> theta, std::span<const double> grad, double lr) {
  if (momentum_ == 0.0) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      theta[i] -= lr * (grad[i] + weight_decay_ * theta[i]);
    }
    return;
  }
  if (buf_.empty()) buf_.assign(theta.size(), 0.0);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    buf_[i] = momentum_ * buf_[i] + grad[i] + weight_decay_ * theta[i];
    theta[i] -= lr * buf_[i];
  }
}

Adam::Adam(double beta1, double beta2, double epsilon, double weight_decay, bool decoupled)
    : beta1_(beta1), beta2_(beta2), epsilon_(epsilon), weight_decay_(weight_decay),
      decoupled_(decoupled) {}

void Adam::step(std::span<double> theta, std::span<const double> grad, double lr) {
  if (m_.empty()) {
    m_.assign(theta.size(), 0.0);
    v_.assign(theta.size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    double g = grad[i];
    if (decoupled_) {
      theta[i] -= lr * weight_decay_ * theta[i];
    } else {
      g += weight_decay_ * theta[i];
    }
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    theta[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + epsilon_);
  }
}

std::optional<Eigen::MatrixXd> inverse_fourth_root(const Eigen::MatrixXd& a, double damping) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  if (eig.info() != Eigen::Success) return std::nullopt;
  Eigen::VectorXd d = eig.eigenvalues();
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    d[i] = std::pow(std::max(d[i], 0.0) + damping, -0.25);
    if (!std::isfinite(d[i])) return std::nullopt;
  }
  const auto& v = eig.eigenvectors();
  return Eigen::MatrixXd(v * d.asDiagonal() * v.transpose());
}

Shampoo::Shampoo(std::vector<Segment> segments, double damping, std::size_t update_every,
                 double weight_decay, std::size_t max_side)
    : damping_(damping), update_every_(update_every), weight_decay_(weight_decay),
      max_side_(max_side) {
  for (const auto& s : segments) {
    Block b;
    b.offset = s.offset;
    b.rows = s.shape.size() <= 1 ? 1 : s.shape[0];
    b.cols = s.size() / b.rows;
    const auto r = static_cast<Eigen::Index>(b.rows), c = static_cast<Eigen::Index>(b.cols);
    if (b.rows <= max_side_) {
      b.left = Eigen::MatrixXd::Zero(r, r);
      b.left_root = Eigen::MatrixXd::Identity(r, r);
    }
    if (b.cols <= max_side_) {
      b.right = Eigen::MatrixXd::Zero(c, c);
      b.right_root = Eigen::MatrixXd::Identity(c, c);
    }
    blocks_.push_back(std::move(b));
  }
}

void Shampoo::step(std::span<double> theta, std::span<const double> grad, double lr) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const bool refresh = t_ % update_every_ == 0;
  ++t_;
  for (auto& b : blocks_) {
    const auto r = static_cast<Eigen::Index>(b.rows), c = static_cast<Eigen::Index>(b.cols);
    Eigen::Map<RowMat> th(theta.data() + b.offset, r, c);
    RowMat g = Eigen::Map<const RowMat>(grad.data() + b.offset, r, c);
    if (weight_decay_ != 0.0) g += weight_decay_ * th;
    const bool has_left = b.left.size() > 0, has_right = b.right.size() > 0;
    if (has_left) b.left.noalias() += g * g.transpose();
    if (has_right) b.right.noalias() += g.transpose() * g;
    bool ok = true;
    if (refresh) {
      if (has_left) {
        auto root = inverse_fourth_root(b.left, damping_);
        if (root) b.left_root = std::move(*root); else ok = false;
      }
      if (has_right) {
        auto root = inverse_fourth_root(b.right, damping_);
        if (root) b.right_root = std::move(*root); else ok = false;
      }
    }
    if (!ok) {
      ++fallbacks_;
      th -= lr * g;
      continue;
    }
    RowMat update = g;
    if (has_left) update = b.left_root * update;
    if (has_right) update = update * b.right_root;
    th -= lr * update;
  }
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerSpec& spec, const ParamVector& layout) {
  switch (spec.kind) {
    case OptimizerKind::sgd:
      return std::make_unique<Sgd>(spec.momentum, spec.weight_decay);
    case OptimizerKind::gd:
      return std::make_unique<Sgd>(0.0, spec.weight_decay);
    case OptimizerKind::adam:
      return std::make_unique<Adam>(spec.beta1, spec.beta2, spec.adam_epsilon,
                                    spec.weight_decay, false);
    case OptimizerKind::adamw:
      return std::make_unique<Adam>(spec.beta1, spec.beta2, spec.adam_epsilon,
                                    spec.weight_decay, true);
    case OptimizerKind::shampoo:
      return std::make_unique<Shampoo>(layout.segments(), spec.shampoo_damping,
                                       spec.shampoo_update_every, spec.weight_decay);
  }
  throw ConfigError("unknown optimizer");
}

std::vector<double> sam_gradient(const ad::GradFn& grad, std::span<const double> theta,
                                 double rho) {
  auto g = grad(theta);
  double norm = 0.0;
  for (double x : g) norm += x * x;
  norm = std::sqrt(norm);
  if (rho == 0.0 || norm == 0.0) return g;
  std::vector<double> p(theta.begin(), theta.end());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += rho * g[i] / norm;
  return grad(p);
}

// ---------------------------------------------------------------------------

TrainReport train(Trainable& model, const data::Dataset& ds, const OptimizerSpec& opt,
                  const RegularizerSpec& reg, const EarlyStop* early_stop) {
  opt.validate();
  reg.validate();
  if (ds.size() == 0) throw Error("train: empty dataset");
  if (early_stop) early_stop->criteria.validate();

  const std::size_t n = ds.size();
  const std::size_t batch = opt.kind == OptimizerKind::gd ? n : std::min(opt.batch_size, n);
  auto optimizer = make_optimizer(opt, model.params());
  std::vector<double> theta = model.params().vec();
  std::vector<double> grad(theta.size());
  std::vector<double> perturbed;
  std::vector<std::size_t> order = all_rows(n);
  Rng rng(derive_seed({opt.seed, 0x5b0ffu}));

  TrainReport report;
  std::size_t next_eig_check = 0;
  for (std::size_t epoch = 0; epoch < opt.max_epochs; ++epoch) {
    const double lr = scheduled_lr(opt, epoch);
    if (batch < n) std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t step = 0;
    for (std::size_t start = 0; start < n; start += batch, ++step) {
      const std::size_t len = std::min(batch, n - start);
      const auto rows = std::span<const std::size_t>(order).subspan(start, len);
      const double loss = model.loss_grad(theta, ds, rows, reg.label_smoothing, grad);
      if (!std::isfinite(loss)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step));
      }
      if (loss > 1e6) {
        throw TrainingError("diverged: loss " + std::to_string(loss) + " at epoch " +
                            std::to_string(epoch) + ", step " + std::to_string(step));
      }
      if (reg.sam_rho > 0.0) {
        double norm = 0.0;
        for (double g : grad) norm += g * g;
        norm = std::sqrt(norm);
        if (norm > 0.0) {
          perturbed = theta;
          for (std::size_t i = 0; i < theta.size(); ++i)
            perturbed[i] += reg.sam_rho * grad[i] / norm;
          model.loss_grad(perturbed, ds, rows, reg.label_smoothing, grad);
        }
      }
      optimizer->step(theta, grad, lr);
      epoch_loss += loss * static_cast<double>(len);
    }
    report.loss_history.push_back(epoch_loss / static_cast<double>(n));
    report.lr_trace.push_back(lr);
    report.epochs_run = epoch + 1;

    if (!early_stop) continue;
    const auto& crit = early_stop->criteria;
    if (!converge::plateau(report.loss_history, crit.plateau_epochs)) continue;
    model.params().vec() = theta;
    if (accuracy(model, theta, ds) < early_stop->fit_threshold) continue;
    const double gnorm = converge::full_gradient_norm(model, ds, reg.label_smoothing);
    if (gnorm > crit.grad_norm_threshold || epoch < next_eig_check) continue;
    converge::LanczosResult diag;
    const double eig = converge::min_hessian_eig(model, ds, crit, reg.label_smoothing, &diag);
    if (eig < crit.eig_threshold) {
      // A failed Lanczos pass is expensive; wait a full window before retrying.
      next_eig_check = epoch + crit.plateau_epochs;
      continue;
    }
    converge::ConvergenceReport cert;
    cert.loss = full_loss_grad(model, model.certificate_point(), ds, reg.label_smoothing, {},
                               true);
    cert.grad_norm = gnorm;
    cert.grad_ok = true;
    cert.plateaued = true;
    cert.eig_checked = true;
    cert.min_eig_estimate = eig;
    cert.eig_ok = true;
    cert.is_minimum = true;
    cert.lanczos_iterations = diag.iterations;
    cert.lanczos_breakdown = diag.breakdown;
    cert.lanczos_residual = diag.residual;
    report.certificate = cert;
    report.stopped_early = true;
    break;
  }
  model.params().vec() = theta;
  report.final_train_accuracy = accuracy(model, theta, ds);
  report.final_params = std::move(theta);
  if (auto* s = dynamic_cast<Shampoo*>(optimizer.get())) report.shampoo_fallbacks = s->fallbacks();
  return report;
}

// ---------------------------------------------------------------------------

TuneGrid default_grid(const OptimizerSpec& base, std::size_t n) {
  std::vector<std::size_t> batches;
  if (base.kind == OptimizerKind::gd) {
    batches.push_back(n);
  } else {
    for (std::size_t b : {32u, 64u, 128u, 256u})
      if (b <= n) batches.push_back(b);
    if (batches.empty()) batches.push_back(n);
  }
  const bool adaptive = base.kind == OptimizerKind::adam || base.kind == OptimizerKind::adamw;
  const double lo = adaptive ? 1e-5 : 1e-3;
  const double hi = 1e-2;
  const int points = adaptive ? 7 : 5;
  TuneGrid grid;
  for (std::size_t b : batches) {
    for (int i = 0; i < points; ++i) {
      OptimizerSpec s = base;
      s.batch_size = b;
      s.lr = lo * std::pow(hi / lo, static_cast<double>(i) / (points - 1));
      s.lr_min = std::min(s.lr_min, s.lr);
      grid.candidates.push_back(s);
    }
  }
  return grid;
}

OptimizerSpec tune(const models::ModelSpec& model_spec, const data::Dataset& ds,
                   const TuneGrid& grid) {
  if (grid.candidates.empty()) throw ConfigError("tune: empty grid");
  struct Score {
    double loss, acc, lr;
    std::size_t index;
  };
  std::optional<Score> best;
  for (std::size_t i = 0; i < grid.candidates.size(); ++i) {
    OptimizerSpec s = grid.candidates[i];
    s.max_epochs = std::min(s.max_epochs, grid.max_epochs_tune);
    models::Model model(model_spec);
    Score sc{0.0, 0.0, s.lr, i};
    try {
      train(model, ds, s, grid.regularizer);
      sc.loss = full_loss_grad(model, model.params().values(), ds,
                               grid.regularizer.label_smoothing, {});
      sc.acc = accuracy(model, model.params().values(), ds);
    } catch (const TrainingError&) {
      continue;
    } catch (const NumericError&) {
      continue;
    }
    if (!std::isfinite(sc.loss)) continue;
    const bool better = !best || sc.loss < best->loss ||
                        (sc.loss == best->loss &&
                         (sc.acc > best->acc || (sc.acc == best->acc && sc.lr < best->lr)));
    if (better) best = sc;
  }
  if (!best) throw TrainingError("tune: every grid point diverged");
  return grid.candidates[best->index];
}

}  // namespace emc::optim

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

#ifndef EMC_OPTIM_HPP_
#define EMC_OPTIM_HPP_

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emc/autodiff.hpp"
#include "emc/converge.hpp"
#include "emc/models.hpp"
#include "emc/trainable.hpp"

namespace emc::optim {

enum class OptimizerKind { sgd, gd, adam, adamw, shampoo };
enum class Schedule { constant, cosine };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);
std::string to_string(Schedule s);
Schedule schedule_from_string(const std::string& s);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.01;
  std::size_t batch_size = 32;  // ignored by gd
  double momentum = 0.0;        // sgd
  double beta1 = 0.9;           // adam, adamw
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0;    // decoupled for adamw, L2 otherwise
  std::size_t shampoo_update_every = 20;
  double shampoo_damping = 1e-6;
  Schedule schedule = Schedule::cosine;
  double lr_min = 0.0;
  std::size_t max_epochs = 2000;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const OptimizerSpec&, const OptimizerSpec&) = default;
};

struct RegularizerSpec {
  double sam_rho = 0.0;  // 0 disables SAM
  double label_smoothing = 0.0;

  void validate() const;
  friend bool operator==(const RegularizerSpec&, const RegularizerSpec&) = default;
};

struct TrainReport {
  double final_train_accuracy = 0.0;
  std::vector<double> loss_history;  // mean minibatch loss per epoch
  std::size_t epochs_run = 0;
  std::vector<double> final_params;
  std::vector<double> lr_trace;
  bool stopped_early = false;
  /// Certificates that justified an early stop.
  std::optional<converge::ConvergenceReport> certificate;
  std::size_t shampoo_fallbacks = 0;
};

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * t / T)) / 2
double cosine_lr(double t, double T, double lr_max, double lr_min);
/// Learning rate for `epoch` (0-based) of `spec.max_epochs`.
double scheduled_lr(const OptimizerSpec& spec, std::size_t epoch);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::span<double> theta, std::span<const double> grad, double lr) = 0;
};

/// theta -= lr * buf, buf = momentum * buf + (grad + wd * theta).
class Sgd final : public Optimizer {
 public:
  explicit Sgd(double momentum = 0.0, double weight_decay = 0.0)
      : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(std::span<double> theta, std::span<const double> grad, double lr) override;

 private:
  double momentum_;
  double weight_decay_;
  std::vector<double> buf_;
};

/// Bias-corrected Adam. With `decoupled` the weight decay is applied as
/// theta -= lr * wd * theta before the adaptive step (AdamW); otherwise it is
/// added to the gradient.
class Adam final : public Optimizer {
 public:
  Adam(double beta1, double beta2, double epsilon, double weight_decay, bool decoupled);
  void step(std::span<double> theta, std::span<const double> grad, double lr) override;

 private:
  double beta1_, beta2_, epsilon_, weight_decay_;
  bool decoupled_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

/// (A + damping * I)^(-1/4) of a symmetric positive semidefinite matrix via
/// its eigendecomposition. Negative rounding noise in the spectrum is clamped
/// to zero. Empty on solver failure.
std::optional<Eigen::MatrixXd> inverse_fourth_root(const Eigen::MatrixXd& a, double damping);

/// Two-sided matrix Shampoo. Each parameter tensor is viewed as a matrix
/// (first dim x the rest; vectors as 1 x n). Statistics L += G G^T and
/// R += G^T G; the update is L^(-1/4) G R^(-1/4), with the roots refreshed
/// every `update_every` steps. Sides longer than `max_side` stay
/// unpreconditioned.
class Shampoo final : public Optimizer {
 public:
  Shampoo(std::vector<Segment> segments, double damping, std::size_t update_every,
          double weight_decay = 0.0, std::size_t max_side = 1024);
  void step(std::span<double> theta, std::span<const double> grad, double lr) override;

  std::size_t fallbacks() const { return fallbacks_; }
  /// Current (L + damping I)^(-1/4) and (R + damping I)^(-1/4) of a segment.
  const Eigen::MatrixXd& left_root(std::size_t segment) const { return blocks_.at(segment).left_root; }
  const Eigen::MatrixXd& right_root(std::size_t segment) const { return blocks_.at(segment).right_root; }

 private:
  struct Block {
    std::size_t offset = 0, rows = 0, cols = 0;
    Eigen::MatrixXd left, right, left_root, right_root;
  };
  std::vector<Block> blocks_;
  double damping_;
  std::size_t update_every_;
  double weight_decay_;
  std::size_t max_side_;
  std::size_t t_ = 0;
  std::size_t fallbacks_ = 0;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerSpec& spec, const ParamVector& layout);

/// Gradient at theta + rho * g / |g| where g is the gradient at theta. Falls
/// back to g when |g| = 0.
std::vector<double> sam_gradient(const ad::GradFn& grad, std::span<const double> theta,
                                 double rho);

/// Optional early stop: accuracy >= fit_threshold and all three certificates.
struct EarlyStop {
  converge::ConvergenceCriteria criteria;
  double fit_threshold = 1.0;
};

/// Mini-batch training with seeded per-epoch shuffling (no shuffle when one
/// batch covers the data). gd uses one full-batch step per epoch. Throws
/// TrainingError on a non-finite loss or a loss above 1e6. Leaves the final
/// parameters in `model.params()`.
TrainReport train(Trainable& model, const data::Dataset& ds, const OptimizerSpec& opt,
                  const RegularizerSpec& reg, const EarlyStop* early_stop = nullptr);

struct TuneGrid {
  std::vector<OptimizerSpec> candidates;
  std::size_t max_epochs_tune = 50;
  RegularizerSpec regularizer;
};

/// Batch sizes {32, 64, 128, 256} capped at n (n alone if none fit) crossed
/// with 5 log-spaced learning rates in [1e-3, 1e-2] for sgd/gd/shampoo or 7
/// in [1e-5, 1e-2] for adam/adamw.
TuneGrid default_grid(const OptimizerSpec& base, std::size_t n);

/// Candidate with the lowest full-data training loss after a short budget;
/// ties go to higher accuracy, then smaller lr. Throws TrainingError if every
/// candidate diverges.
OptimizerSpec tune(const models::ModelSpec& model_spec, const data::Dataset& ds,
                   const TuneGrid& grid);

}  // namespace emc::optim

#endif  // EMC_OPTIM_HPP_

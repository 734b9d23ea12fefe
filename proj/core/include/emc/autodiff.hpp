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

#ifndef EMC_AUTODIFF_HPP_
#define EMC_AUTODIFF_HPP_

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "emc/param_vector.hpp"
#include "emc/tensor.hpp"

namespace emc::ad {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t kInvalid = static_cast<std::size_t>(-1);
  std::size_t id = kInvalid;
  bool valid() const { return id != kInvalid; }
};

/// Reverse-mode tape. Every primitive appends one node; backward() walks the
/// nodes in reverse recording order, which is a reverse topological order
/// because a node can only reference earlier nodes.
///
/// Not thread-safe. Build one tape per gradient evaluation.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  /// Differentiable input.
  Var leaf(Tensor value);
  /// Input that never receives a gradient.
  Var constant(Tensor value);
  /// Appends the output of a primitive. Throws NumericError when `value`
  /// contains NaN or Inf.
  Var record(std::string op, Tensor value, std::vector<Var> inputs,
             Backward backward);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  /// Accumulated gradient; all zeros for nodes the loss does not depend on.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const std::string& op(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient of `v`. Called from backward closures.
  void accumulate(Var v, std::span<const double> g);

  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be a scalar.
  void backward(Var loss);

  /// Node ids whose backward closure ran during the last backward().
  const std::vector<std::size_t>& last_backward_order() const { return visited_; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<double> grad;  // lazily sized
    std::vector<Var> inputs;
    Backward backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  std::vector<std::size_t> visited_;
  const std::string* current_op_ = nullptr;
};

// Primitives. Shapes are checked and mismatches throw ShapeError. No implicit
// broadcasting: bias addition is the only op that expands a dimension.

Var matmul(Tape& t, Var a, Var b);            // (m,k) x (k,n) -> (m,n)
Var add(Tape& t, Var a, Var b);               // same shape
Var mul(Tape& t, Var a, Var b);               // elementwise, same shape
Var scale(Tape& t, Var a, double c);
Var sum(Tape& t, Var a);                      // -> scalar
Var add_bias(Tape& t, Var x, Var bias);       // (m,n) + (n)
Var reshape(Tape& t, Var x, Shape shape);
Var relu(Tape& t, Var x);
Var tanh(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
Var identity(Tape& t, Var x);

/// x: (B,C,H,W), weight: (O,C,KH,KW), bias: (O) or invalid Var.
/// Lowered to a patch-gather followed by one matrix product.
Var conv2d(Tape& t, Var x, Var weight, Var bias, std::size_t stride,
           std::size_t padding);
/// Non-overlapping k x k mean pooling; trailing rows/cols that do not fill a
/// window are dropped. Throws ShapeError if the output would be empty.
Var avg_pool2d(Tape& t, Var x, std::size_t k);
/// (B,C,H,W) -> (B,C)
Var global_avg_pool(Tape& t, Var x);

/// Mean softmax cross-entropy of (B,K) logits against integer labels. With
/// smoothing e > 0 the target is (1-e)*onehot + e/K.
Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels,
                          double smoothing = 0.0);

/// Scalar loss built from the parameter leaves handed to it, one leaf per
/// segment of the ParamVector.
using LossFn = std::function<Var(Tape&, std::span<const Var>)>;
using GradFn = std::function<std::vector<double>(std::span<const double>)>;

/// d(loss)/d(params), flattened with the layout of `params`.
std::vector<double> grad(const LossFn& loss_fn, const ParamVector& params,
                         double* loss_out = nullptr);

/// Gradient evaluated at `theta` using the segment layout of `layout`.
std::vector<double> grad_at(const LossFn& loss_fn, const ParamVector& layout,
                            std::span<const double> theta,
                            double* loss_out = nullptr);

/// 1e-4 * (1 + max|theta|).
double default_hvp_epsilon(std::span<const double> theta);

/// Hessian-vector product by central differences of the gradient along
/// u = v/|v|, rescaled by |v|. Exact up to rounding for quadratic losses.
std::vector<double> hvp(const GradFn& grad_fn, std::span<const double> theta,
                        std::span<const double> v, double epsilon);

std::vector<double> hvp(const LossFn& loss_fn, const ParamVector& params,
                        std::span<const double> v, double epsilon);

}  // namespace emc::ad

#endif  // EMC_AUTODIFF_HPP_

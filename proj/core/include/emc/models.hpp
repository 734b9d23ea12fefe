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

#ifndef EMC_MODELS_HPP_
#define EMC_MODELS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "emc/autodiff.hpp"
#include "emc/trainable.hpp"

namespace emc::models {

enum class Family { mlp, cnn, resnet_cnn, linear };
enum class Activation { relu, tanh, sigmoid, identity };
enum class Axis { width, depth };

std::string to_string(Family f);
std::string to_string(Activation a);
Family family_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

/// Architecture description. `depth` counts hidden layers (mlp), conv layers
/// (cnn) or residual blocks of two convs (resnet_cnn); the linear head is
/// never counted. `input_shape` is {features} or {C, H, W}; mlp and linear
/// flatten spatial inputs.
struct ModelSpec {
  Family family = Family::mlp;
  Shape input_shape;
  std::size_t num_classes = 2;
  std::size_t width = 1;
  std::size_t depth = 1;
  Activation activation = Activation::relu;
  std::uint64_t init_seed = 0;

  /// Throws ConfigError on invalid sizes, ShapeError when pooling would
  /// shrink a feature map below 1x1.
  void validate() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Closed-form count of trainable scalars, biases included.
std::size_t param_count(const ModelSpec& spec);

/// Segment layout of the flattened parameters, zero-filled.
ParamVector make_layout(const ModelSpec& spec);

/// Copies of `spec` that differ only along `axis`. `values` must be strictly
/// increasing.
std::vector<ModelSpec> scale_series(const ModelSpec& spec, Axis axis,
                                    std::span<const std::size_t> values);

/// A network of one of the families above over autodiff primitives.
///
/// cnn: `depth` 3x3 same-padded stride-1 convs with `width` filters, each
/// followed by the activation, a 2x2 average pool after every second conv
/// (except the last), global average pooling and one linear head.
/// resnet_cnn: a stem conv, then `depth` blocks x + conv(act(conv(x))) with
/// the same pooling rule, then the same head.
class Model final : public Trainable {
 public:
  /// Builds and initializes with fan-in scaled uniform draws,
  /// bound sqrt(1/fan_in), from a generator seeded by spec.init_seed.
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  ParamVector& params() override { return params_; }
  const ParamVector& params() const override { return params_; }

  /// Logits (B, num_classes) for `input` of shape (B, input_shape...).
  ad::Var forward(ad::Tape& tape, std::span<const ad::Var> params, ad::Var input) const;

  Tensor logits(std::span<const double> theta, const Tensor& inputs) const;

  double loss_grad(std::span<const double> theta, const data::Dataset& ds,
                   std::span<const std::size_t> rows, double smoothing,
                   std::span<double> grad) const override;
  std::vector<int> predict(std::span<const double> theta, const data::Dataset& ds,
                           std::span<const std::size_t> rows) const override;

 private:
  ad::Var activate(ad::Tape& tape, ad::Var x) const;
  void check_input(const Shape& sample_shape) const;

  ModelSpec spec_;
  ParamVector params_;
};

Model build(const ModelSpec& spec);

}  // namespace emc::models

#endif  // EMC_MODELS_HPP_

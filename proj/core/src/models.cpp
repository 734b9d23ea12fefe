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

#include "emc/models.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "emc/error.hpp"
#include "emc/rng.hpp"

namespace emc::models {

std::string to_string(Family f) {
  switch (f) {
    case Family::mlp: return "mlp";
    case Family::cnn: return "cnn";
    case Family::resnet_cnn: return "resnet_cnn";
    case Family::linear: return "linear";
  }
  return "?";
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "?";
}

Family family_from_string(const std::string& s) {
  for (auto f : {Family::mlp, Family::cnn, Family::resnet_cnn, Family::linear})
    if (to_string(f) == s) return f;
  throw ConfigError("unknown model family '" + s + "'");
}

Activation activation_from_string(const std::string& s) {
  for (auto a : {Activation::relu, Activation::tanh, Activation::sigmoid, Activation::identity})
    if (to_string(a) == s) return a;
  throw ConfigError("unknown activation '" + s + "'");
}

namespace {

constexpr std::size_t kKernel = 3;

bool is_conv(Family f) { return f == Family::cnn || f == Family::resnet_cnn; }

// Pool after every second conv layer (or block), never after the last one.
bool pools_after(std::size_t layer, std::size_t depth) {
  return layer % 2 == 1 && layer + 1 < depth;
}

std::size_t flat_features(const ModelSpec& s) { return shape_size(s.input_shape); }

}  // namespace

void ModelSpec::validate() const {
  if (width < 1) throw ConfigError("model width must be >= 1");
  if (depth < 1) throw ConfigError("model depth must be >= 1");
  if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
  if (input_shape.empty() || shape_size(input_shape) == 0) {
    throw ConfigError("model input_shape must be non-empty");
  }
  if (is_conv(family)) {
    if (input_shape.size() != 3) {
      throw ConfigError(to_string(family) + " needs input_shape (C,H,W), got " +
                        shape_str(input_shape));
    }
    std::size_t h = input_shape[1], w = input_shape[2];
    for (std::size_t l = 0; l < depth; ++l) {
      if (pools_after(l, depth)) {
        h /= 2;
        w /= 2;
        if (h < 1 || w < 1) {
          throw ShapeError("input " + shape_str(input_shape) + " collapses below 1x1 after " +
                           std::to_string(l + 1) + " layers of " + to_string(family));
        }
      }
    }
  }
}

std::size_t param_count(const ModelSpec& s) {
  s.validate();
  const std::size_t w = s.width, k = s.num_classes, d = s.depth;
  switch (s.family) {
    case Family::linear:
      return flat_features(s) * k + k;
    case Family::mlp:
      return (flat_features(s) * w + w) + (d - 1) * (w * w + w) + (w * k + k);
    case Family::cnn: {
      const std::size_t c = s.input_shape[0];
      const std::size_t kk = kKernel * kKernel;
      return (c * kk * w + w) + (d - 1) * (w * kk * w + w) + (w * k + k);
    }
    case Family::resnet_cnn: {
      const std::size_t c = s.input_shape[0];
      const std::size_t kk = kKernel * kKernel;
      return (c * kk * w + w) + d * 2 * (w * kk * w + w) + (w * k + k);
    }
  }
  return 0;
}

ParamVector make_layout(const ModelSpec& s) {
  s.validate();
  ParamVector p;
  const std::size_t w = s.width, k = s.num_classes;
  auto dense = [&](const std::string& name, std::size_t in, std::size_t out) {
    p.add(name + ".weight", {in, out});
    p.add(name + ".bias", {out});
  };
  auto conv = [&](const std::string& name, std::size_t in, std::size_t out) {
    p.add(name + ".weight", {out, in, kKernel, kKernel});
    p.add(name + ".bias", {out});
  };
  switch (s.family) {
    case Family::linear:
      dense("head", flat_features(s), k);
      break;
    case Family::mlp:
      for (std::size_t l = 0; l < s.depth; ++l)
        dense("fc" + std::to_string(l), l == 0 ? flat_features(s) : w, w);
      dense("head", w, k);
      break;
    case Family::cnn:
      for (std::size_t l = 0; l < s.depth; ++l)
        conv("conv" + std::to_string(l), l == 0 ? s.input_shape[0] : w, w);
      dense("head", w, k);
      break;
    case Family::resnet_cnn:
      conv("stem", s.input_shape[0], w);
      for (std::size_t b = 0; b < s.depth; ++b) {
        conv("block" + std::to_string(b) + ".conv0", w, w);
        conv("block" + std::to_string(b) + ".conv1", w, w);
      }
      dense("head", w, k);
      break;
  }
  return p;
}

std::vector<ModelSpec> scale_series(const ModelSpec& spec, Axis axis,
                                    std::span<const std::size_t> values) {
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] <= values[i - 1]) {
      throw ConfigError("scale_series values must be strictly increasing");
    }
  }
  std::vector<ModelSpec> out;
  for (std::size_t v : values) {
    ModelSpec s = spec;
    (axis == Axis::width ? s.width : s.depth) = v;
    s.validate();
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------

Model::Model(ModelSpec spec) : spec_(std::move(spec)), params_(make_layout(spec_)) {
  Rng rng(derive_seed({spec_.init_seed, 0x1417u}));
  const auto& segs = params_.segments();
  for (std::size_t i = 0; i < segs.size(); ++i) {
    // Weights are (in, out) for dense layers and (out, in, kh, kw) for convs;
    // a bias shares the fan-in of the weight right before it.
    const Segment& w = segs[i].shape.size() == 1 ? segs[i - 1] : segs[i];
    const std::size_t fan_in =
        w.shape.size() == 2 ? w.shape[0] : w.shape[1] * w.shape[2] * w.shape[3];
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : params_.segment(i)) v = u(rng);
  }
}

Model build(const ModelSpec& spec) { return Model(spec); }

ad::Var Model::activate(ad::Tape& t, ad::Var x) const {
  switch (spec_.activation) {
    case Activation::relu: return ad::relu(t, x);
    case Activation::tanh: return ad::tanh(t, x);
    case Activation::sigmoid: return ad::sigmoid(t, x);
    case Activation::identity: return ad::identity(t, x);
  }
  return x;
}

void Model::check_input(const Shape& sample_shape) const {
  const bool ok = is_conv(spec_.family) ? sample_shape == spec_.input_shape
                                        : shape_size(sample_shape) == flat_features(spec_);
  if (!ok) {
    throw ShapeError("model expects samples of shape " + shape_str(spec_.input_shape) +
                     ", got " + shape_str(sample_shape));
  }
}

ad::Var Model::forward(ad::Tape& t, std::span<const ad::Var> p, ad::Var input) const {
  const Shape& in_shape = t.value(input).shape();
  if (in_shape.empty()) throw ShapeError("model input needs a batch dimension");
  const std::size_t batch = in_shape[0];
  check_input(Shape(in_shape.begin() + 1, in_shape.end()));
  if (p.size() != params_.segments().size()) {
    throw ShapeError("model has " + std::to_string(params_.segments().size()) +
                     " parameter tensors, got " + std::to_string(p.size()));
  }
  std::size_t next = 0;
  auto dense = [&](ad::Var x) {
    ad::Var y = ad::matmul(t, x, p[next]);
    y = ad::add_bias(t, y, p[next + 1]);
    next += 2;
    return y;
  };
  auto conv = [&](ad::Var x) {
    ad::Var y = ad::conv2d(t, x, p[next], p[next + 1], 1, kKernel / 2);
    next += 2;
    return y;
  };

  ad::Var h = input;
  switch (spec_.family) {
    case Family::linear:
      h = ad::reshape(t, h, {batch, flat_features(spec_)});
      break;
    case Family::mlp:
      h = ad::reshape(t, h, {batch, flat_features(spec_)});
      for (std::size_t l = 0; l < spec_.depth; ++l) h = activate(t, dense(h));
      break;
    case Family::cnn:
      for (std::size_t l = 0; l < spec_.depth; ++l) {
        h = activate(t, conv(h));
        if (pools_after(l, spec_.depth)) h = ad::avg_pool2d(t, h, 2);
      }
      h = ad::global_avg_pool(t, h);
      break;
    case Family::resnet_cnn:
      h = activate(t, conv(h));
      for (std::size_t b = 0; b < spec_.depth; ++b) {
        ad::Var branch = activate(t, conv(h));
        branch = conv(branch);
        h = ad::add(t, h, branch);
        if (pools_after(b, spec_.depth)) h = ad::avg_pool2d(t, h, 2);
      }
      h = ad::global_avg_pool(t, h);
      break;
  }
  return dense(h);
}

namespace {

std::vector<ad::Var> leaves_for(ad::Tape& t, const ParamVector& layout,
                                std::span<const double> theta, bool differentiable) {
  if (theta.size() != layout.size()) {
    throw ShapeError("model has " + std::to_string(layout.size()) + " parameters, got " +
                     std::to_string(theta.size()));
  }
  std::vector<ad::Var> out;
  for (const auto& seg : layout.segments()) {
    auto s = theta.subspan(seg.offset, seg.size());
    Tensor v(seg.shape, std::vector<double>(s.begin(), s.end()));
    out.push_back(differentiable ? t.leaf(std::move(v)) : t.constant(std::move(v)));
  }
  return out;
}

}  // namespace

Tensor Model::logits(std::span<const double> theta, const Tensor& inputs) const {
  ad::Tape t;
  auto p = leaves_for(t, params_, theta, false);
  return t.value(forward(t, p, t.constant(inputs)));
}

double Model::loss_grad(std::span<const double> theta, const data::Dataset& ds,
                        std::span<const std::size_t> rows, double smoothing,
                        std::span<double> grad) const {
  ad::Tape t;
  const bool want_grad = !grad.empty();
  auto p = leaves_for(t, params_, theta, want_grad);
  ad::Var x = t.constant(ds.gather_inputs(rows));
  const auto labels = ds.gather_labels(rows);
  ad::Var loss = ad::softmax_cross_entropy(t, forward(t, p, x), labels, smoothing);
  const double value = t.value(loss).item();
  if (want_grad) {
    if (grad.size() != theta.size()) throw ShapeError("gradient buffer has wrong size");
    t.backward(loss);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const Tensor g = t.grad(p[i]);
      std::ranges::copy(g.data(), grad.begin() + static_cast<std::ptrdiff_t>(
                                                    params_.segments()[i].offset));
    }
  }
  return value;
}

std::vector<int> Model::predict(std::span<const double> theta, const data::Dataset& ds,
                                std::span<const std::size_t> rows) const {
  const Tensor z = logits(theta, ds.gather_inputs(rows));
  const std::size_t k = spec_.num_classes;
  std::vector<int> out(rows.size());
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const double* row = z.data().data() + b * k;
    out[b] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

}  // namespace emc::models

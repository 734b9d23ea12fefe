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

#include "emc/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cfloat>
#include <cmath>
#include <memory>

#include "emc/error.hpp"

namespace emc::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

CMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return CMap(t.data().data(), static_cast<Eigen::Index>(rows),
              static_cast<Eigen::Index>(cols));
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename F>
Var unary(Tape& t, const char* name, Var x, F&& f, Tape::Backward backward) {
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  auto in = xv.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return t.record(name, std::move(out), {x}, std::move(backward));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite value in leaf tensor");
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite value in constant tensor");
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> inputs,
                 Backward backward) {
  if (!value.all_finite()) {
    throw NumericError("non-finite value produced by " + op);
  }
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (Var in : inputs) {
    if (in.valid() && nodes_.at(in.id).requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return Tensor(n.value.shape(), n.grad);
}

void Tape::accumulate(Var v, std::span<const double> g) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (g.size() != n.value.size()) {
    throw ShapeError("gradient size mismatch in backward of " +
                     (current_op_ ? *current_op_ : std::string("?")));
  }
  for (double x : g) {
    if (!std::isfinite(x)) {
      throw NumericError("non-finite gradient in backward of " +
                         (current_op_ ? *current_op_ : std::string("?")));
    }
  }
  if (n.grad.empty()) {
    n.grad.assign(g.begin(), g.end());
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
  }
}

void Tape::backward(Var loss) {
  if (nodes_.at(loss.id).value.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     shape_str(nodes_[loss.id].value.shape()));
  }
  for (auto& n : nodes_) n.grad.clear();
  visited_.clear();
  nodes_[loss.id].grad.assign(1, 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    visited_.push_back(i);
    current_op_ = &n.op;
    const Tensor g(n.value.shape(), n.grad);
    n.backward(*this, g);
  }
  current_op_ = nullptr;
}

// ---------------------------------------------------------------------------
// Primitives

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
          "matmul: cannot multiply " + shape_str(av.shape()) + " by " +
              shape_str(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  MMap(out.data().data(), m, n).noalias() = as_matrix(av, m, k) * as_matrix(bv, k, n);
  return t.record("matmul", std::move(out), {a, b},
                  [a, b, m, k, n](Tape& tp, const Tensor& g) {
                    auto gm = as_matrix(g, m, n);
                    if (tp.requires_grad(a)) {
                      Tensor da({m, k});
                      MMap(da.data().data(), m, k).noalias() =
                          gm * as_matrix(tp.value(b), k, n).transpose();
                      tp.accumulate(a, da.data());
                    }
                    if (tp.requires_grad(b)) {
                      Tensor db({k, n});
                      MMap(db.data().data(), k, n).noalias() =
                          as_matrix(tp.value(a), m, k).transpose() * gm;
                      tp.accumulate(b, db.data());
                    }
                  });
}

Var add(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.shape() == bv.shape(), "add: shape mismatch " + shape_str(av.shape()) +
                                        " vs " + shape_str(bv.shape()));
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return t.record("add", std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    tp.accumulate(a, g.data());
    tp.accumulate(b, g.data());
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  require(av.shape() == bv.shape(), "mul: shape mismatch " + shape_str(av.shape()) +
                                        " vs " + shape_str(bv.shape()));
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return t.record("mul", std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    std::vector<double> buf(g.size());
    if (tp.requires_grad(a)) {
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * bv[i];
      tp.accumulate(a, buf);
    }
    if (tp.requires_grad(b)) {
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] = g[i] * av[i];
      tp.accumulate(b, buf);
    }
  });
}

Var scale(Tape& t, Var a, double c) {
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * av[i];
  return t.record("scale", std::move(out), {a}, [a, c](Tape& tp, const Tensor& g) {
    std::vector<double> buf(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] = c * g[i];
    tp.accumulate(a, buf);
  });
}

Var sum(Tape& t, Var a) {
  const Tensor& av = t.value(a);
  double s = 0.0;
  for (double x : av.data()) s += x;
  const std::size_t n = av.size();
  return t.record("sum", Tensor::scalar(s), {a}, [a, n](Tape& tp, const Tensor& g) {
    std::vector<double> buf(n, g[0]);
    tp.accumulate(a, buf);
  });
}

Var add_bias(Tape& t, Var x, Var bias) {
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(bias);
  require(xv.rank() == 2 && bv.rank() == 1 && bv.dim(0) == xv.dim(1),
          "add_bias: cannot add " + shape_str(bv.shape()) + " to " +
              shape_str(xv.shape()));
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  return t.record("add_bias", std::move(out), {x, bias},
                  [x, bias, m, n](Tape& tp, const Tensor& g) {
                    tp.accumulate(x, g.data());
                    if (tp.requires_grad(bias)) {
                      std::vector<double> db(n, 0.0);
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
                      tp.accumulate(bias, db);
                    }
                  });
}

Var reshape(Tape& t, Var x, Shape shape) {
  Tensor out = t.value(x).reshaped(std::move(shape));
  return t.record("reshape", std::move(out), {x},
                  [x](Tape& tp, const Tensor& g) { tp.accumulate(x, g.data()); });
}

Var relu(Tape& t, Var x) {
  return unary(t, "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [x](Tape& tp, const Tensor& g) {
                 const Tensor& xv = tp.value(x);
                 std::vector<double> buf(g.size());
                 for (std::size_t i = 0; i < g.size(); ++i)
                   buf[i] = xv[i] > 0.0 ? g[i] : 0.0;
                 tp.accumulate(x, buf);
               });
}

Var tanh(Tape& t, Var x) {
  Var y{t.size()};  // id the output will receive
  return unary(t, "tanh", x, [](double v) { return std::tanh(v); },
               [x, y](Tape& tp, const Tensor& g) {
                 const Tensor& yv = tp.value(y);
                 std::vector<double> buf(g.size());
                 for (std::size_t i = 0; i < g.size(); ++i)
                   buf[i] = g[i] * (1.0 - yv[i] * yv[i]);
                 tp.accumulate(x, buf);
               });
}

Var sigmoid(Tape& t, Var x) {
  Var y{t.size()};
  return unary(t, "sigmoid", x,
               [](double v) {
                 if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                 const double e = std::exp(v);
                 return e / (1.0 + e);
               },
               [x, y](Tape& tp, const Tensor& g) {
                 const Tensor& yv = tp.value(y);
                 std::vector<double> buf(g.size());
                 for (std::size_t i = 0; i < g.size(); ++i)
                   buf[i] = g[i] * yv[i] * (1.0 - yv[i]);
                 tp.accumulate(x, buf);
               });
}

Var identity(Tape& t, Var x) {
  Tensor out = t.value(x);
  return t.record("identity", std::move(out), {x},
                  [x](Tape& tp, const Tensor& g) { tp.accumulate(x, g.data()); });
}

Var conv2d(Tape& t, Var x, Var weight, Var bias, std::size_t stride,
           std::size_t padding) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(weight);
  require(xv.rank() == 4 && wv.rank() == 4 && xv.dim(1) == wv.dim(1),
          "conv2d: input " + shape_str(xv.shape()) + " incompatible with kernel " +
              shape_str(wv.shape()));
  require(stride >= 1, "conv2d: stride must be >= 1");
  const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t O = wv.dim(0), KH = wv.dim(2), KW = wv.dim(3);
  require(H + 2 * padding >= KH && W + 2 * padding >= KW,
          "conv2d: kernel larger than padded input");
  if (bias.valid()) {
    const Tensor& bv = t.value(bias);
    require(bv.rank() == 1 && bv.dim(0) == O, "conv2d: bias must have shape (" +
                                                  std::to_string(O) + ")");
  }
  const std::size_t Ho = (H + 2 * padding - KH) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - KW) / stride + 1;
  const std::size_t HWo = Ho * Wo;
  const std::size_t P = B * HWo;
  const std::size_t Ckk = C * KH * KW;

  // Patch matrix: row (c, kh, kw), column (b, oh, ow).
  auto cols = std::make_shared<RowMat>(static_cast<Eigen::Index>(Ckk),
                                       static_cast<Eigen::Index>(P));
  cols->setZero();
  const auto pad = static_cast<std::ptrdiff_t>(padding);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t kh = 0; kh < KH; ++kh)
      for (std::size_t kw = 0; kw < KW; ++kw) {
        double* row = cols->row(static_cast<Eigen::Index>((c * KH + kh) * KW + kw)).data();
        for (std::size_t b = 0; b < B; ++b) {
          const double* img = xv.data().data() + (b * C + c) * H * W;
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            const auto ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - pad;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ow = 0; ow < Wo; ++ow) {
              const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kw) - pad;
              if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
              row[b * HWo + oh * Wo + ow] = img[ih * static_cast<std::ptrdiff_t>(W) + iw];
            }
          }
        }
      }

  RowMat out_mat = as_matrix(wv, O, Ckk) * (*cols);
  Tensor out({B, O, Ho, Wo});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o) {
      const double bo = bias.valid() ? t.value(bias)[o] : 0.0;
      const double* src = out_mat.row(static_cast<Eigen::Index>(o)).data() + b * HWo;
      double* dst = out.data().data() + (b * O + o) * HWo;
      for (std::size_t i = 0; i < HWo; ++i) dst[i] = src[i] + bo;
    }

  return t.record(
      "conv2d", std::move(out), {x, weight, bias},
      [=](Tape& tp, const Tensor& g) {
        RowMat dmat(static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(P));
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t o = 0; o < O; ++o) {
            const double* src = g.data().data() + (b * O + o) * HWo;
            double* dst = dmat.row(static_cast<Eigen::Index>(o)).data() + b * HWo;
            std::copy(src, src + HWo, dst);
          }
        if (tp.requires_grad(weight)) {
          Tensor dw(tp.value(weight).shape());
          MMap(dw.data().data(), O, Ckk).noalias() = dmat * cols->transpose();
          tp.accumulate(weight, dw.data());
        }
        if (bias.valid() && tp.requires_grad(bias)) {
          std::vector<double> db(O);
          for (std::size_t o = 0; o < O; ++o) db[o] = dmat.row(static_cast<Eigen::Index>(o)).sum();
          tp.accumulate(bias, db);
        }
        if (tp.requires_grad(x)) {
          RowMat dcols = as_matrix(tp.value(weight), O, Ckk).transpose() * dmat;
          std::vector<double> dx(B * C * H * W, 0.0);
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t kh = 0; kh < KH; ++kh)
              for (std::size_t kw = 0; kw < KW; ++kw) {
                const double* row =
                    dcols.row(static_cast<Eigen::Index>((c * KH + kh) * KW + kw)).data();
                for (std::size_t b = 0; b < B; ++b) {
                  double* img = dx.data() + (b * C + c) * H * W;
                  for (std::size_t oh = 0; oh < Ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - pad;
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t ow = 0; ow < Wo; ++ow) {
                      const auto iw = static_cast<std::ptrdiff_t>(ow * stride + kw) - pad;
                      if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(W)) continue;
                      img[ih * static_cast<std::ptrdiff_t>(W) + iw] +=
                          row[b * HWo + oh * Wo + ow];
                    }
                  }
                }
              }
          tp.accumulate(x, dx);
        }
      });
}

Var avg_pool2d(Tape& t, Var x, std::size_t k) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 4, "avg_pool2d: expected (B,C,H,W), got " + shape_str(xv.shape()));
  require(k >= 1, "avg_pool2d: window must be >= 1");
  const std::size_t B = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const std::size_t Ho = H / k, Wo = W / k;
  require(Ho >= 1 && Wo >= 1, "avg_pool2d: " + std::to_string(k) + "x" +
                                  std::to_string(k) + " pooling collapses " +
                                  std::to_string(H) + "x" + std::to_string(W) +
                                  " below 1x1");
  const double inv = 1.0 / static_cast<double>(k * k);
  Tensor out({B, C, Ho, Wo});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* src = xv.data().data() + bc * H * W;
    double* dst = out.data().data() + bc * Ho * Wo;
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) s += src[(oh * k + i) * W + ow * k + j];
        dst[oh * Wo + ow] = s * inv;
      }
  }
  return t.record("avg_pool2d", std::move(out), {x},
                  [=](Tape& tp, const Tensor& g) {
                    std::vector<double> dx(B * C * H * W, 0.0);
                    for (std::size_t bc = 0; bc < B * C; ++bc) {
                      const double* src = g.data().data() + bc * Ho * Wo;
                      double* dst = dx.data() + bc * H * W;
                      for (std::size_t oh = 0; oh < Ho; ++oh)
                        for (std::size_t ow = 0; ow < Wo; ++ow) {
                          const double v = src[oh * Wo + ow] * inv;
                          for (std::size_t i = 0; i < k; ++i)
                            for (std::size_t j = 0; j < k; ++j)
                              dst[(oh * k + i) * W + ow * k + j] += v;
                        }
                    }
                    tp.accumulate(x, dx);
                  });
}

Var global_avg_pool(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  require(xv.rank() == 4,
          "global_avg_pool: expected (B,C,H,W), got " + shape_str(xv.shape()));
  const std::size_t B = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
  const double inv = 1.0 / static_cast<double>(HW);
  Tensor out({B, C});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    double s = 0.0;
    for (std::size_t i = 0; i < HW; ++i) s += xv[bc * HW + i];
    out[bc] = s * inv;
  }
  return t.record("global_avg_pool", std::move(out), {x},
                  [=](Tape& tp, const Tensor& g) {
                    std::vector<double> dx(B * C * HW);
                    for (std::size_t bc = 0; bc < B * C; ++bc)
                      std::fill_n(dx.begin() + static_cast<std::ptrdiff_t>(bc * HW), HW,
                                  g[bc] * inv);
                    tp.accumulate(x, dx);
                  });
}

Var softmax_cross_entropy(Tape& t, Var logits, std::span<const int> labels,
                          double smoothing) {
  const Tensor& zv = t.value(logits);
  require(zv.rank() == 2, "softmax_cross_entropy: logits must be (B,K), got " +
                              shape_str(zv.shape()));
  const std::size_t B = zv.dim(0), K = zv.dim(1);
  require(labels.size() == B, "softmax_cross_entropy: " + std::to_string(labels.size()) +
                                  " labels for batch of " + std::to_string(B));
  require(B >= 1 && K >= 1, "softmax_cross_entropy: empty batch");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) {
    throw Error("label smoothing must lie in [0, 1)");
  }
  const double off = smoothing / static_cast<double>(K);
  const double on = 1.0 - smoothing + off;
  // d(loss)/d(logits) before the 1/B factor: softmax - target
  auto delta = std::make_shared<std::vector<double>>(B * K);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      throw Error("softmax_cross_entropy: label " + std::to_string(y) +
                  " outside [0, " + std::to_string(K) + ")");
    }
    const double* z = zv.data().data() + b * K;
    const double zmax = *std::max_element(z, z + K);
    double se = 0.0;
    for (std::size_t k = 0; k < K; ++k) se += std::exp(z[k] - zmax);
    const double lse = zmax + std::log(se);
    double row = lse;
    if (smoothing == 0.0) {
      row -= z[y];
    } else {
      for (std::size_t k = 0; k < K; ++k)
        row -= (k == static_cast<std::size_t>(y) ? on : off) * z[k];
    }
    total += row;
    for (std::size_t k = 0; k < K; ++k) {
      const double target =
          smoothing == 0.0 ? (k == static_cast<std::size_t>(y) ? 1.0 : 0.0)
                           : (k == static_cast<std::size_t>(y) ? on : off);
      (*delta)[b * K + k] = std::exp(z[k] - lse) - target;
    }
  }
  const double invB = 1.0 / static_cast<double>(B);
  return t.record("softmax_cross_entropy", Tensor::scalar(total * invB), {logits},
                  [logits, delta, invB](Tape& tp, const Tensor& g) {
                    std::vector<double> dz(delta->size());
                    const double s = g[0] * invB;
                    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] = s * (*delta)[i];
                    tp.accumulate(logits, dz);
                  });
}

// ---------------------------------------------------------------------------
// Gradients and Hessian-vector products

std::vector<double> grad_at(const LossFn& loss_fn, const ParamVector& layout,
                            std::span<const double> theta, double* loss_out) {
  if (theta.size() != layout.size()) {
    throw ShapeError("grad: parameter vector has " + std::to_string(theta.size()) +
                     " entries, layout expects " + std::to_string(layout.size()));
  }
  Tape tape;
  std::vector<Var> leaves;
  leaves.reserve(layout.segments().size());
  for (const auto& seg : layout.segments()) {
    auto s = theta.subspan(seg.offset, seg.size());
    leaves.push_back(tape.leaf(Tensor(seg.shape, std::vector<double>(s.begin(), s.end()))));
  }
  Var loss = loss_fn(tape, leaves);
  tape.backward(loss);
  if (loss_out) *loss_out = tape.value(loss).item();
  std::vector<double> out(layout.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    Tensor g = tape.grad(leaves[i]);
    std::ranges::copy(g.data(), out.begin() + static_cast<std::ptrdiff_t>(
                                                  layout.segments()[i].offset));
  }
  return out;
}

std::vector<double> grad(const LossFn& loss_fn, const ParamVector& params,
                         double* loss_out) {
  return grad_at(loss_fn, params, params.values(), loss_out);
}

double default_hvp_epsilon(std::span<const double> theta) {
  double m = 0.0;
  for (double x : theta) m = std::max(m, std::abs(x));
  return 1e-4 * (1.0 + m);
}

std::vector<double> hvp(const GradFn& grad_fn, std::span<const double> theta,
                        std::span<const double> v, double epsilon) {
  if (v.size() != theta.size()) {
    throw ShapeError("hvp: direction has " + std::to_string(v.size()) +
                     " entries, parameters have " + std::to_string(theta.size()));
  }
  if (!(epsilon > 0.0)) throw Error("hvp: epsilon must be positive");
  double vnorm = 0.0;
  for (double x : v) vnorm += x * x;
  vnorm = std::sqrt(vnorm);
  if (!(vnorm >= 1e-12)) throw Error("hvp: direction norm below 1e-12");
  double tmax = 0.0;
  for (double x : theta) tmax = std::max(tmax, std::abs(x));
  if (epsilon < 4.0 * DBL_EPSILON * tmax || epsilon < DBL_MIN) {
    throw NumericError("hvp: epsilon underflows relative to max|theta|");
  }
  std::vector<double> plus(theta.begin(), theta.end());
  std::vector<double> minus(theta.begin(), theta.end());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double step = epsilon * v[i] / vnorm;
    plus[i] += step;
    minus[i] -= step;
  }
  const auto gp = grad_fn(plus);
  const auto gm = grad_fn(minus);
  const double c = vnorm / (2.0 * epsilon);
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (gp[i] - gm[i]) * c;
    if (!std::isfinite(out[i])) throw NumericError("hvp: non-finite result");
  }
  return out;
}

std::vector<double> hvp(const LossFn& loss_fn, const ParamVector& params,
                        std::span<const double> v, double epsilon) {
  GradFn g = [&](std::span<const double> th) { return grad_at(loss_fn, params, th); };
  return hvp(g, params.values(), v, epsilon);
}

}  // namespace emc::ad

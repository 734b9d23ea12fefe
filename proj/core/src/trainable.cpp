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

#include "emc/trainable.hpp"

#include <algorithm>
#include <numeric>

#include "emc/error.hpp"

namespace emc {

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  return rows;
}

double accuracy(const Trainable& model, std::span<const double> theta,
                const data::Dataset& ds) {
  if (ds.size() == 0) throw Error("accuracy of an empty dataset");
  const auto rows = all_rows(ds.size());
  const auto pred = model.predict(theta, ds, rows);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) hit += pred[i] == ds.labels[i];
  return static_cast<double>(hit) / static_cast<double>(rows.size());
}

double full_loss_grad(const Trainable& model, std::span<const double> theta,
                      const data::Dataset& ds, double smoothing, std::span<double> grad,
                      bool certificate, std::size_t chunk) {
  const std::size_t n = ds.size();
  if (n == 0) throw Error("loss over an empty dataset");
  if (chunk == 0) chunk = n;
  const auto rows = all_rows(n);
  std::vector<double> part(grad.empty() ? 0 : grad.size());
  std::ranges::fill(grad, 0.0);
  double loss = 0.0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t len = std::min(chunk, n - start);
    auto sub = std::span<const std::size_t>(rows).subspan(start, len);
    const double w = static_cast<double>(len) / static_cast<double>(n);
    const double l = certificate ? model.certificate_loss_grad(theta, ds, sub, smoothing, part)
                                 : model.loss_grad(theta, ds, sub, smoothing, part);
    loss += w * l;
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += w * part[i];
  }
  return loss;
}

std::size_t effective_bits(const Trainable& model) {
  return model.params().size() * model.bits_per_param();
}

}  // namespace emc

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

#include "emc/metrics.hpp"

#include <cmath>

#include "emc/error.hpp"

namespace emc::runner {

double pct_emc_increase(const capacity::EmcResult& semantic,
                        const capacity::EmcResult& random) {
  return pct_emc_increase(static_cast<double>(semantic.emc), static_cast<double>(random.emc));
}

double pct_emc_increase(double semantic, double random) {
  if (random == 0.0) throw Error("pct_emc_increase: random-label EMC is 0");
  return 100.0 * (semantic - random) / random;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("pearson: length mismatch");
  if (x.size() < 2) throw Error("pearson: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("pearson: zero variance");
  return sxy / std::sqrt(sxx * syy);
}

double generalization_gap(const Trainable& model, const data::Dataset& train,
                          const data::Dataset& test) {
  if (train.size() == 0 || test.size() == 0) throw Error("generalization_gap: empty dataset");
  const auto theta = model.params().values();
  return accuracy(model, theta, train) - accuracy(model, theta, test);
}

double sample_stderr(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

}  // namespace emc::runner

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

#ifndef EMC_METRICS_HPP_
#define EMC_METRICS_HPP_

#include <span>

#include "emc/capacity.hpp"
#include "emc/trainable.hpp"

namespace emc::runner {

/// 100 * (semantic - random) / random. Throws when random is 0.
double pct_emc_increase(const capacity::EmcResult& semantic,
                        const capacity::EmcResult& random);
double pct_emc_increase(double semantic, double random);

/// Sample Pearson correlation. Throws on unequal lengths, fewer than 2
/// points or zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

/// Train accuracy minus test accuracy of `model` at its current parameters.
double generalization_gap(const Trainable& model, const data::Dataset& train,
                          const data::Dataset& test);

/// Sample standard deviation over sqrt(n); 0 for fewer than two values.
double sample_stderr(std::span<const double> values);

}  // namespace emc::runner

#endif  // EMC_METRICS_HPP_

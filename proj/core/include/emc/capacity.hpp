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

#ifndef EMC_CAPACITY_HPP_
#define EMC_CAPACITY_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emc/converge.hpp"
#include "emc/data.hpp"
#include "emc/models.hpp"
#include "emc/optim.hpp"
#include "emc/reparam.hpp"

namespace emc::capacity {

enum class Growth { double_then_bisect, linear };

std::string to_string(Growth g);
Growth growth_from_string(const std::string& s);

struct EmcConfig {
  std::size_t start_n = 1;
  Growth growth = Growth::double_then_bisect;
  std::size_t step = 1;  // linear schedule increment
  double fit_threshold = 1.0;
  std::size_t retry_seeds = 3;
  std::size_t max_n = 0;  // 0 selects the dataset size
  std::uint64_t trial_seed_base = 0;

  void validate(std::size_t dataset_size) const;
  friend bool operator==(const EmcConfig&, const EmcConfig&) = default;
};

/// Result of one subset-sample / re-initialize / train / verify attempt.
struct ProbeOutcome {
  bool fit = false;
  double train_accuracy = 0.0;
  std::size_t epochs_run = 0;
  double final_loss = 0.0;
  std::optional<converge::ConvergenceReport> convergence;
  std::string diagnostic;
  /// Trained parameters; kept in memory only.
  std::vector<double> final_params;
  friend bool operator==(const ProbeOutcome&, const ProbeOutcome&) = default;
};

struct Attempt {
  std::uint64_t seed = 0;
  ProbeOutcome outcome;
  friend bool operator==(const Attempt&, const Attempt&) = default;
};

struct TraceEntry {
  std::size_t n = 0;
  std::vector<Attempt> attempts;
  bool fit() const;
  friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

struct EmcResult {
  /// Largest n with a certified fit; 0 when even start_n failed.
  std::size_t emc = 0;
  bool saturated = false;    // fit at max_n
  bool below_start = false;  // start_n failed every attempt
  std::vector<TraceEntry> trace;  // in probing order
  EmcConfig config;

  std::size_t probe_count() const;
  /// The fitting attempt at n = emc, if any.
  const Attempt* emc_attempt() const;
  friend bool operator==(const EmcResult&, const EmcResult&) = default;
};

using ProbeFn = std::function<ProbeOutcome(std::size_t n, std::uint64_t seed)>;

/// Seed of the given retry at sample size n.
std::uint64_t attempt_seed(std::uint64_t base, std::size_t n, std::size_t attempt);

/// Grows n until a confirmed failure (1 + retry_seeds failing attempts), then
/// bisects the bracket between the largest success and the smallest failure.
/// double_then_bisect doubles n; linear adds `step`. A size counts as fitted
/// as soon as one attempt fits.
EmcResult search(const ProbeFn& probe, const EmcConfig& config, std::size_t dataset_size);

/// Everything a probe needs besides the data and the seed.
struct ProbeSetup {
  models::ModelSpec model;
  optim::OptimizerSpec optimizer;
  optim::RegularizerSpec regularizer;
  converge::ConvergenceCriteria criteria;
  double fit_threshold = 1.0;
  std::optional<reparam::SubspaceSpec> subspace;
  std::optional<reparam::QuantSpec> quant;
  /// Stop training once accuracy and all certificates pass.
  bool early_stop = true;
};

/// The subset and freshly initialized trainable a probe with `seed` uses.
data::Dataset probe_subset(const data::Dataset& ds, std::size_t n, std::uint64_t seed);
std::unique_ptr<Trainable> probe_trainable(const ProbeSetup& setup, std::uint64_t seed);

/// Draws an n-row subset, builds a fresh model and optimizer stream from
/// `seed`, trains and certifies. fit = accuracy >= fit_threshold and a
/// certified minimum. The Lanczos pass is skipped once a cheaper condition
/// already failed. Training errors yield fit = false with a diagnostic.
ProbeOutcome probe(const ProbeSetup& setup, const data::Dataset& ds, std::size_t n,
                   std::uint64_t seed);

/// Mean of log10(emc). Throws if any emc is 0.
double avg_log_emc(std::span<const EmcResult> results);

/// 10x the median full-gradient norm over full-budget fits on `n`-sample
/// subsets that reach the accuracy threshold with a plateau and a passing
/// eigenvalue check. Throws TrainingError if no attempt qualifies.
double calibrate_grad_threshold(const ProbeSetup& setup, const data::Dataset& ds,
                                std::size_t n, std::size_t attempts, std::uint64_t seed);

/// Builds the trainable object described by `setup` around `spec`.
std::unique_ptr<Trainable> make_trainable(const ProbeSetup& setup,
                                          const models::ModelSpec& spec,
                                          std::uint64_t subspace_seed);

}  // namespace emc::capacity

#endif  // EMC_CAPACITY_HPP_

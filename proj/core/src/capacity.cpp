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

#include "emc/capacity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "emc/error.hpp"
#include "emc/rng.hpp"

namespace emc::capacity {

std::string to_string(Growth g) {
  return g == Growth::linear ? "linear" : "double_then_bisect";
}

Growth growth_from_string(const std::string& s) {
  if (s == "linear") return Growth::linear;
  if (s == "double_then_bisect") return Growth::double_then_bisect;
  throw ConfigError("unknown growth schedule '" + s + "'");
}

void EmcConfig::validate(std::size_t dataset_size) const {
  if (start_n < 1) throw ConfigError("start_n must be >= 1");
  if (!(fit_threshold > 0.0 && fit_threshold <= 1.0)) {
    throw ConfigError("fit_threshold must lie in (0, 1]");
  }
  if (step < 1) throw ConfigError("step must be >= 1");
  const std::size_t top = max_n == 0 ? dataset_size : max_n;
  if (top > dataset_size) {
    throw ConfigError("max_n " + std::to_string(top) + " exceeds dataset size " +
                      std::to_string(dataset_size));
  }
  if (start_n > top) {
    throw ConfigError("start_n " + std::to_string(start_n) + " exceeds max_n " +
                      std::to_string(top));
  }
}

bool TraceEntry::fit() const {
  return std::ranges::any_of(attempts, [](const Attempt& a) { return a.outcome.fit; });
}

std::size_t EmcResult::probe_count() const {
  std::size_t c = 0;
  for (const auto& e : trace) c += e.attempts.size();
  return c;
}

const Attempt* EmcResult::emc_attempt() const {
  for (const auto& e : trace) {
    if (e.n != emc) continue;
    for (const auto& a : e.attempts)
      if (a.outcome.fit) return &a;
  }
  return nullptr;
}

std::uint64_t attempt_seed(std::uint64_t base, std::size_t n, std::size_t attempt) {
  return derive_seed({base, 0xe3cu, n, attempt});
}

EmcResult search(const ProbeFn& probe_fn, const EmcConfig& config, std::size_t dataset_size) {
  config.validate(dataset_size);
  const std::size_t max_n = config.max_n == 0 ? dataset_size : config.max_n;
  EmcResult result;
  result.config = config;

  auto evaluate = [&](std::size_t n) {
    TraceEntry entry;
    entry.n = n;
    for (std::size_t a = 0; a <= config.retry_seeds; ++a) {
      const std::uint64_t seed = attempt_seed(config.trial_seed_base, n, a);
      entry.attempts.push_back({seed, probe_fn(n, seed)});
      if (entry.attempts.back().outcome.fit) break;
    }
    const bool fit = entry.fit();
    result.trace.push_back(std::move(entry));
    return fit;
  };

  std::size_t lo = 0;  // largest confirmed success
  std::size_t hi = 0;  // smallest confirmed failure, 0 = none yet
  std::size_t n = config.start_n;
  while (true) {
    if (evaluate(n)) {
      lo = n;
      if (n == max_n) break;
      const std::size_t next =
          config.growth == Growth::double_then_bisect ? 2 * n : n + config.step;
      n = std::min(next, max_n);
    } else {
      hi = n;
      break;
    }
  }
  if (hi == 0) {
    result.saturated = true;
  } else if (lo == 0) {
    result.below_start = true;
  }
  if (hi != 0 && lo != 0) {
    while (hi - lo > 1) {
      const std::size_t mid = lo + (hi - lo) / 2;
      if (evaluate(mid)) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
  }
  result.emc = lo;
  return result;
}

std::unique_ptr<Trainable> make_trainable(const ProbeSetup& setup,
                                          const models::ModelSpec& spec,
                                          std::uint64_t subspace_seed) {
  models::Model base(spec);
  if (setup.subspace && setup.quant) {
    throw ConfigError("subspace and quantized training cannot be combined");
  }
  if (setup.subspace) {
    reparam::SubspaceSpec s = *setup.subspace;
    s.seed = subspace_seed;
    return std::make_unique<reparam::SubspaceModel>(std::move(base), s);
  }
  if (setup.quant) return std::make_unique<reparam::QuantizedModel>(std::move(base), *setup.quant);
  return std::make_unique<models::Model>(std::move(base));
}

data::Dataset probe_subset(const data::Dataset& ds, std::size_t n, std::uint64_t seed) {
  return data::subsample(ds, {n, derive_seed({seed, 1})});
}

std::unique_ptr<Trainable> probe_trainable(const ProbeSetup& setup, std::uint64_t seed) {
  models::ModelSpec spec = setup.model;
  spec.init_seed = derive_seed({seed, 2});
  const std::uint64_t subspace_seed =
      derive_seed({setup.subspace ? setup.subspace->seed : 0, seed, 5});
  return make_trainable(setup, spec, subspace_seed);
}

ProbeOutcome probe(const ProbeSetup& setup, const data::Dataset& ds, std::size_t n,
                   std::uint64_t seed) {
  const data::Dataset subset = probe_subset(ds, n, seed);
  optim::OptimizerSpec opt = setup.optimizer;
  opt.seed = derive_seed({seed, 3});
  converge::ConvergenceCriteria crit = setup.criteria;
  crit.lanczos_seed = derive_seed({seed, 4});

  ProbeOutcome out;
  auto model = probe_trainable(setup, seed);
  const double smoothing = setup.regularizer.label_smoothing;
  optim::TrainReport report;
  try {
    const optim::EarlyStop stop{crit, setup.fit_threshold};
    report = optim::train(*model, subset, opt, setup.regularizer,
                          setup.early_stop ? &stop : nullptr);
  } catch (const TrainingError& e) {
    out.diagnostic = e.what();
    return out;
  } catch (const NumericError& e) {
    out.diagnostic = e.what();
    return out;
  }
  out.train_accuracy = report.final_train_accuracy;
  out.epochs_run = report.epochs_run;
  out.final_loss = report.loss_history.empty() ? 0.0 : report.loss_history.back();
  out.final_params = report.final_params;

  if (report.certificate) {
    out.convergence = report.certificate;
  } else {
    converge::ConvergenceReport r;
    const auto point = model->certificate_point();
    std::vector<double> g(point.size());
    r.loss = full_loss_grad(*model, point, subset, smoothing, g, true);
    double s = 0.0;
    for (double x : g) s += x * x;
    r.grad_norm = std::sqrt(s);
    r.grad_ok = r.grad_norm <= crit.grad_norm_threshold;
    r.plateaued = converge::plateau(report.loss_history, crit.plateau_epochs);
    if (out.train_accuracy >= setup.fit_threshold && r.grad_ok && r.plateaued) {
      try {
        converge::LanczosResult diag;
        r.min_eig_estimate = converge::min_hessian_eig(*model, subset, crit, smoothing, &diag);
        r.eig_checked = true;
        r.lanczos_iterations = diag.iterations;
        r.lanczos_breakdown = diag.breakdown;
        r.lanczos_residual = diag.residual;
        r.eig_ok = r.min_eig_estimate >= crit.eig_threshold;
      } catch (const NumericError& e) {
        out.diagnostic = e.what();
      }
    }
    r.is_minimum = r.grad_ok && r.plateaued && r.eig_ok;
    out.convergence = r;
  }
  out.fit = out.train_accuracy >= setup.fit_threshold && out.convergence->is_minimum;
  if (!out.fit && out.diagnostic.empty()) {
    if (out.train_accuracy < setup.fit_threshold) {
      out.diagnostic = "accuracy below threshold";
    } else if (!out.convergence->grad_ok) {
      out.diagnostic = "gradient norm above threshold";
    } else if (!out.convergence->plateaued) {
      out.diagnostic = "loss still decreasing";
    } else {
      out.diagnostic = "negative curvature";
    }
  }
  return out;
}

double avg_log_emc(std::span<const EmcResult> results) {
  if (results.empty()) throw Error("avg_log_emc of no results");
  double s = 0.0;
  for (const auto& r : results) {
    if (r.emc == 0) throw Error("avg_log_emc: EMC of 0 has no logarithm");
    s += std::log10(static_cast<double>(r.emc));
  }
  return s / static_cast<double>(results.size());
}

double calibrate_grad_threshold(const ProbeSetup& setup, const data::Dataset& ds,
                                std::size_t n, std::size_t attempts, std::uint64_t seed) {
  ProbeSetup s = setup;
  s.early_stop = false;
  s.criteria.grad_norm_threshold = std::numeric_limits<double>::max();
  std::vector<double> norms;
  for (std::size_t a = 0; a < attempts; ++a) {
    const auto out = probe(s, ds, n, derive_seed({seed, 0xca11u, a}));
    if (out.fit) norms.push_back(out.convergence->grad_norm);
  }
  if (norms.empty()) {
    throw TrainingError("gradient-norm calibration: no certified fit on " + std::to_string(n) +
                        " samples");
  }
  std::ranges::sort(norms);
  const std::size_t m = norms.size();
  const double median = m % 2 ? norms[m / 2] : 0.5 * (norms[m / 2 - 1] + norms[m / 2]);
  return 10.0 * std::max(median, std::numeric_limits<double>::min());
}

}  // namespace emc::capacity

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

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "emc/error.hpp"
#include "emc/rng.hpp"
#include "support.hpp"

namespace emc::capacity {
namespace {

using testing::Gen;

ProbeOutcome fit_if(bool ok) {
  ProbeOutcome o;
  o.fit = ok;
  return o;
}

// Fits exactly the sizes n <= n_star.
ProbeFn threshold_probe(std::size_t n_star, std::size_t* calls = nullptr) {
  return [=](std::size_t n, std::uint64_t) {
    if (calls) ++*calls;
    return fit_if(n <= n_star);
  };
}

const TraceEntry* find(const EmcResult& r, std::size_t n) {
  for (const auto& e : r.trace)
    if (e.n == n) return &e;
  return nullptr;
}

// --- Search against a threshold oracle --------------------------------------------------

TEST(SearchTest, RecoversThresholdForBothSchedules) {
  testing::for_all(60, 51, [](Gen& g) {
    const std::size_t size = g.size(1, 600);
    const std::size_t n_star = g.size(1, size);
    for (Growth growth : {Growth::double_then_bisect, Growth::linear}) {
      EmcConfig c;
      c.growth = growth;
      c.step = g.size(1, 50);
      c.retry_seeds = g.size(0, 3);
      const auto r = capacity::search(threshold_probe(n_star), c, size);
      EXPECT_EQ(r.emc, n_star) << to_string(growth) << " size=" << size;
      EXPECT_EQ(r.saturated, n_star == size);
      EXPECT_FALSE(r.below_start);
    }
  });
}

TEST(SearchTest, FixedThresholds) {
  for (std::size_t n_star : {1u, 17u, 256u, 1000u}) {
    std::size_t calls = 0;
    const auto r = capacity::search(threshold_probe(n_star, &calls), {}, 1000);
    EXPECT_EQ(r.emc, n_star);
    EXPECT_EQ(calls, r.probe_count());
    // Doubling plus bisection needs O(log n) sizes.
    EXPECT_LE(r.trace.size(), 2 * static_cast<std::size_t>(std::ceil(std::log2(1000.0))) + 2);
  }
}

TEST(SearchTest, StartFailureGivesZero) {
  EmcConfig c;
  c.start_n = 5;
  const auto r = capacity::search(threshold_probe(3), c, 100);
  EXPECT_EQ(r.emc, 0u);
  EXPECT_TRUE(r.below_start);
  EXPECT_FALSE(r.saturated);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_EQ(r.trace[0].attempts.size(), c.retry_seeds + 1);
  EXPECT_EQ(r.emc_attempt(), nullptr);
}

TEST(SearchTest, MaxNCapsTheSearch) {
  EmcConfig c;
  c.max_n = 40;
  const auto r = capacity::search(threshold_probe(1000), c, 1000);
  EXPECT_EQ(r.emc, 40u);
  EXPECT_TRUE(r.saturated);
  EXPECT_EQ(r.trace.back().n, 40u);
}

TEST(SearchTest, LinearScheduleVisitsStepsThenBisects) {
  EmcConfig c;
  c.growth = Growth::linear;
  c.start_n = 10;
  c.step = 10;
  c.retry_seeds = 0;
  const auto r = capacity::search(threshold_probe(34), c, 100);
  std::vector<std::size_t> visited;
  for (const auto& e : r.trace) visited.push_back(e.n);
  EXPECT_EQ(visited, (std::vector<std::size_t>{10, 20, 30, 40, 35, 32, 33, 34}));
  EXPECT_EQ(r.emc, 34u);
}

TEST(SearchTest, AnySuccessfulAttemptCounts) {
  // Only the last retry fits, at every size up to 50.
  EmcConfig c;
  c.retry_seeds = 3;
  ProbeFn probe = [&](std::size_t n, std::uint64_t seed) {
    return fit_if(n <= 50 && seed == attempt_seed(c.trial_seed_base, n, 3));
  };
  const auto r = capacity::search(probe, c, 200);
  EXPECT_EQ(r.emc, 50u);
  for (const auto& e : r.trace) EXPECT_EQ(e.attempts.size(), 4u);
  const Attempt* a = r.emc_attempt();
  ASSERT_NE(a, nullptr);
  EXPECT_EQ(a->seed, attempt_seed(c.trial_seed_base, 50, 3));
}

TEST(SearchTest, StopsRetryingAfterFirstFit) {
  EmcConfig c;
  c.retry_seeds = 5;
  const auto r = capacity::search(threshold_probe(8), c, 64);
  for (const auto& e : r.trace) EXPECT_EQ(e.attempts.size(), e.fit() ? 1u : 6u);
}

TEST(SearchTest, ResultBracketsEvenForIrregularOracles) {
  // Whatever the oracle, emc is a fitted size and emc + 1 a failed one.
  testing::for_all(60, 52, [](Gen& g) {
    const std::size_t size = g.size(2, 300);
    std::vector<bool> table(size + 1);
    for (std::size_t i = 1; i <= size; ++i) table[i] = g.uniform(0, 1) < 0.8;
    EmcConfig c;
    c.retry_seeds = 0;
    c.growth = g.size(0, 1) ? Growth::linear : Growth::double_then_bisect;
    c.step = g.size(1, 20);
    const auto r = capacity::search([&](std::size_t n, std::uint64_t) { return fit_if(table[n]); }, c,
                          size);
    if (r.emc == 0) {
      EXPECT_FALSE(table[1]);
      return;
    }
    EXPECT_TRUE(table[r.emc]);
    if (!r.saturated) {
      const TraceEntry* above = find(r, r.emc + 1);
      ASSERT_NE(above, nullptr);
      EXPECT_FALSE(above->fit());
    }
  });
}

TEST(SearchTest, AttemptSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::size_t n = 1; n <= 50; ++n)
    for (std::size_t a = 0; a < 4; ++a) seen.insert(attempt_seed(9, n, a));
  EXPECT_EQ(seen.size(), 200u);
  EXPECT_NE(attempt_seed(9, 3, 0), attempt_seed(10, 3, 0));
}

TEST(SearchTest, InvalidConfigs) {
  EmcConfig c;
  c.start_n = 0;
  EXPECT_THROW(capacity::search(threshold_probe(1), c, 10), ConfigError);
  c = {};
  c.max_n = 11;
  EXPECT_THROW(capacity::search(threshold_probe(1), c, 10), ConfigError);
  c = {};
  c.start_n = 20;
  EXPECT_THROW(capacity::search(threshold_probe(1), c, 10), ConfigError);
  c = {};
  c.fit_threshold = 0.0;
  EXPECT_THROW(capacity::search(threshold_probe(1), c, 10), ConfigError);
  EXPECT_THROW(growth_from_string("triple"), ConfigError);
}

TEST(AvgLogTest, MeanOfLogs) {
  std::vector<EmcResult> rs(2);
  rs[0].emc = 10;
  rs[1].emc = 1000;
  EXPECT_DOUBLE_EQ(avg_log_emc(rs), 2.0);
  rs[1].emc = 0;
  EXPECT_THROW(avg_log_emc(rs), Error);
  EXPECT_THROW(avg_log_emc({}), Error);
}

// --- Real probes ---------------------------------------------------------------------------

ProbeSetup linear_setup(std::size_t features) {
  ProbeSetup s;
  s.model.family = models::Family::linear;
  s.model.input_shape = {features};
  s.model.num_classes = 2;
  s.optimizer.kind = optim::OptimizerKind::gd;
  s.optimizer.lr = 5.0;
  s.optimizer.max_epochs = 3000;
  return s;
}

data::Dataset noise_data(std::size_t features, std::size_t samples, std::uint64_t seed) {
  const auto ds = data::synth_clusters(2, features, samples, 0.0, seed);
  return data::apply({.kind = data::TransformKind::random_labels, .seed = 7}, ds);
}

TEST(ProbeTest, SmallSubsetFitsWithCertificate) {
  const auto ds = noise_data(6, 100, 53);
  const auto out = probe(linear_setup(6), ds, 3, 11);
  EXPECT_TRUE(out.fit) << out.diagnostic;
  ASSERT_TRUE(out.convergence.has_value());
  EXPECT_TRUE(out.convergence->is_minimum);
  EXPECT_TRUE(out.convergence->eig_checked);
  EXPECT_EQ(out.train_accuracy, 1.0);
  EXPECT_TRUE(out.diagnostic.empty());
  EXPECT_EQ(out.final_params.size(), 14u);
}

TEST(ProbeTest, ImpossibleFitSkipsCurvature) {
  const auto ds = noise_data(2, 200, 54);
  ProbeSetup s = linear_setup(2);
  s.optimizer.max_epochs = 200;
  const auto out = probe(s, ds, 200, 12);
  EXPECT_FALSE(out.fit);
  EXPECT_EQ(out.diagnostic, "accuracy below threshold");
  ASSERT_TRUE(out.convergence.has_value());
  EXPECT_FALSE(out.convergence->eig_checked);
}

TEST(ProbeTest, DivergenceBecomesADiagnostic) {
  const auto ds = data::synth_clusters(2, 3, 50, 100.0, 55);
  ProbeSetup s = linear_setup(3);
  s.model.family = models::Family::mlp;
  s.model.width = 8;
  s.optimizer.lr = 1e6;
  s.optimizer.schedule = optim::Schedule::constant;
  const auto out = probe(s, ds, 50, 13);
  EXPECT_FALSE(out.fit);
  EXPECT_FALSE(out.diagnostic.empty());
}

TEST(ProbeTest, SeedDeterminesOutcome) {
  const auto ds = noise_data(4, 60, 56);
  ProbeSetup s = linear_setup(4);
  s.optimizer.max_epochs = 300;
  EXPECT_EQ(probe(s, ds, 8, 21), probe(s, ds, 8, 21));
  EXPECT_NE(probe_subset(ds, 8, 21).labels, probe_subset(ds, 8, 22).labels);
  EXPECT_EQ(probe_subset(ds, 8, 21).size(), 8u);
}

TEST(ProbeTest, EarlyStopAgreesWithFullBudget) {
  const auto ds = noise_data(5, 80, 57);
  ProbeSetup s = linear_setup(5);
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    ProbeSetup full = s;
    full.early_stop = false;
    const auto a = probe(s, ds, 4, seed), b = probe(full, ds, 4, seed);
    EXPECT_EQ(a.fit, b.fit) << a.diagnostic << " / " << b.diagnostic;
    EXPECT_LE(a.epochs_run, b.epochs_run);
  }
}

TEST(ProbeTest, LinearSearchEndToEnd) {
  // A linear classifier with d parameters fits random labels on a few times
  // d points at most and on some points at least.
  const std::size_t f = 4;
  const auto ds = noise_data(f, 200, 58);
  const ProbeSetup s = linear_setup(f);
  EmcConfig c;
  c.retry_seeds = 1;
  const auto r = capacity::search([&](std::size_t n, std::uint64_t seed) { return probe(s, ds, n, seed); },
                        c, ds.size());
  EXPECT_GE(r.emc, 2u);
  EXPECT_LE(r.emc, 4 * (f + 1));
  const Attempt* a = r.emc_attempt();
  ASSERT_NE(a, nullptr);
  EXPECT_TRUE(a->outcome.fit);
}

TEST(CalibrationTest, ThresholdIsTenTimesMedianNorm) {
  const auto ds = noise_data(5, 80, 59);
  ProbeSetup s = linear_setup(5);
  s.optimizer.max_epochs = 500;
  s.regularizer.label_smoothing = 0.1;
  const double t = calibrate_grad_threshold(s, ds, 4, 3, 5);
  EXPECT_GT(t, 0.0);
  ProbeSetup full = s;
  full.early_stop = false;
  full.criteria.grad_norm_threshold = std::numeric_limits<double>::max();
  std::vector<double> norms;
  for (std::size_t a = 0; a < 3; ++a) {
    const auto out = probe(full, ds, 4, derive_seed({5, 0xca11u, a}));
    if (out.fit) norms.push_back(out.convergence->grad_norm);
  }
  ASSERT_FALSE(norms.empty());
  std::ranges::sort(norms);
  const std::size_t m = norms.size();
  const double median = m % 2 ? norms[m / 2] : 0.5 * (norms[m / 2 - 1] + norms[m / 2]);
  EXPECT_DOUBLE_EQ(t, 10 * median);
}

TEST(CalibrationTest, NoQualifyingFitThrows) {
  const auto ds = noise_data(1, 100, 60);
  ProbeSetup s = linear_setup(1);
  s.optimizer.max_epochs = 20;
  EXPECT_THROW(calibrate_grad_threshold(s, ds, 100, 2, 1), TrainingError);
}

}  // namespace
}  // namespace emc::capacity

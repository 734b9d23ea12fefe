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

// Kernel timings: forward/backward passes, curvature probes, optimizer steps
// and one complete capacity probe.

#include <benchmark/benchmark.h>

#include "emc/capacity.hpp"
#include "emc/converge.hpp"
#include "emc/data.hpp"
#include "emc/models.hpp"
#include "emc/optim.hpp"

namespace {

using namespace emc;

models::ModelSpec mlp(std::size_t width) {
  models::ModelSpec s;
  s.family = models::Family::mlp;
  s.input_shape = {64};
  s.num_classes = 10;
  s.width = width;
  s.depth = 1;
  return s;
}

models::ModelSpec cnn(std::size_t width) {
  models::ModelSpec s;
  s.family = models::Family::cnn;
  s.input_shape = {3, 16, 16};
  s.num_classes = 10;
  s.width = width;
  s.depth = 2;
  return s;
}

data::Dataset images(std::size_t n) {
  auto flat = data::synth_clusters(10, 3 * 16 * 16, n, 3.0, 1);
  flat.inputs = flat.inputs.reshaped({n, 3, 16, 16});
  return flat;
}

void BM_MlpLossGrad(benchmark::State& state) {
  const std::size_t n = static_cast<std::size_t>(state.range(1));
  const auto ds = data::synth_clusters(10, 64, n, 3.0, 1);
  const models::Model m(mlp(static_cast<std::size_t>(state.range(0))));
  const auto rows = all_rows(n);
  std::vector<double> g(m.params().size());
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.loss_grad(m.params().values(), ds, rows, 0.0, g));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_MlpLossGrad)->Args({16, 256})->Args({64, 256})->Args({256, 256});

void BM_CnnLossGrad(benchmark::State& state) {
  const std::size_t n = 64;
  const auto ds = images(n);
  const models::Model m(cnn(static_cast<std::size_t>(state.range(0))));
  const auto rows = all_rows(n);
  std::vector<double> g(m.params().size());
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.loss_grad(m.params().values(), ds, rows, 0.0, g));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_CnnLossGrad)->Arg(4)->Arg(16);

void BM_MinHessianEig(benchmark::State& state) {
  const auto ds = data::synth_clusters(10, 64, 128, 3.0, 1);
  const models::Model m(mlp(32));
  converge::ConvergenceCriteria c;
  c.lanczos_iters = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(converge::min_hessian_eig(m, ds, c));
}
BENCHMARK(BM_MinHessianEig)->Arg(10)->Arg(40)->Unit(benchmark::kMillisecond);

void BM_OptimizerStep(benchmark::State& state) {
  const models::Model m(mlp(64));
  optim::OptimizerSpec s;
  s.kind = static_cast<optim::OptimizerKind>(state.range(0));
  auto opt = optim::make_optimizer(s, m.params());
  std::vector<double> theta = m.params().vec(), g(theta.size(), 1e-3);
  for (auto _ : state) opt->step(theta, g, 1e-3);
  state.SetLabel(optim::to_string(s.kind));
}
BENCHMARK(BM_OptimizerStep)
    ->Arg(static_cast<int>(optim::OptimizerKind::sgd))
    ->Arg(static_cast<int>(optim::OptimizerKind::adam))
    ->Arg(static_cast<int>(optim::OptimizerKind::shampoo));

void BM_Probe(benchmark::State& state) {
  const auto ds = data::apply({.kind = data::TransformKind::random_labels, .seed = 7},
                              data::synth_clusters(10, 64, 256, 3.0, 1));
  capacity::ProbeSetup s;
  s.model = mlp(16);
  s.optimizer.kind = optim::OptimizerKind::adam;
  s.optimizer.lr = 0.03;
  s.optimizer.max_epochs = 500;
  const std::size_t n = static_cast<std::size_t>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(capacity::probe(s, ds, n, seed++));
}
BENCHMARK(BM_Probe)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

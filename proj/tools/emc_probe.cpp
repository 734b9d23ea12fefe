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

// emc-probe: runs EMC sweeps from a JSON config and reports on their records.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "emc/error.hpp"
#include "emc/runner.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kTrialFailures = 2;
constexpr int kIoError = 3;

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const emc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const emc::ShapeError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const emc::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kTrialFailures;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Effective model complexity probes"};
  app.require_subcommand(1);

  std::string config_path;
  std::string dir;
  std::string metric = "curve";
  std::optional<std::size_t> jobs;
  std::optional<std::uint64_t> seed;
  bool resume = false;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run the sweep described by a config file");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  run->add_option("--seed", seed, "Override the config seed");
  run->add_flag("--resume", resume, "Reuse finished records with a matching config");
  run->add_flag("-q,--quiet", quiet, "No per-record progress");

  auto* rep = app.add_subcommand("report", "Summarize the records of a finished run");
  rep->add_option("dir", dir, "Output directory of a run")->required();
  rep->add_option("--metric", metric, "curve | avglog | gap | pearson")
      ->check(CLI::IsMember({"curve", "avglog", "gap", "pearson"}));

  auto* val = app.add_subcommand("validate", "Check a config and its data without training");
  val->add_option("config", config_path, "Experiment config (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  if (*val) {
    return guarded([&] {
      auto cfg = emc::runner::load_config(config_path);
      emc::runner::validate(cfg);
      std::cout << "ok: " << cfg.name << "\n";
      return kOk;
    });
  }

  if (*rep) {
    return guarded([&] {
      const auto records = emc::runner::load_records(dir);
      std::cout << emc::runner::report(records, metric);
      return kOk;
    });
  }

  return guarded([&] {
    auto cfg = emc::runner::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    emc::runner::validate(cfg);
    emc::runner::SweepOptions options;
    options.jobs = cfg.jobs;
    options.resume = resume;
    options.log = quiet ? nullptr : &std::cerr;
    const auto result = emc::runner::run_sweep(cfg, options);
    std::cerr << result.records.size() << " records (" << result.computed << " computed, "
              << result.reused << " reused, " << result.failed << " failed)\n";
    return result.failed > 0 ? kTrialFailures : kOk;
  });
}

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

#ifndef EMC_RUNNER_HPP_
#define EMC_RUNNER_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "emc/capacity.hpp"
#include "emc/data.hpp"
#include "emc/metrics.hpp"
#include "emc/models.hpp"
#include "emc/optim.hpp"
#include "emc/reparam.hpp"

namespace emc::runner {

using nlohmann::json;

struct DatasetSource {
  std::string source = "synth_clusters";  // synth_clusters | csv | emct
  // synth_clusters
  std::size_t classes = 10;
  std::size_t features = 64;
  std::size_t samples = 1000;
  double separation = 3.0;
  std::uint64_t seed = 0;
  /// Per-sample shape the features are laid out in, e.g. {1, 8, 8}; empty
  /// keeps them flat.
  Shape sample_shape;
  // csv / emct
  std::string path;
  std::string label_column;
  std::size_t num_classes = 0;
  /// Rows set aside as a test set before any intervention.
  std::size_t holdout = 0;

  friend bool operator==(const DatasetSource&, const DatasetSource&) = default;
};

/// A named chain of interventions, e.g. {"random", [random_labels]}.
struct Variant {
  std::string label;
  std::vector<data::TransformSpec> transforms;
  friend bool operator==(const Variant&, const Variant&) = default;
};

struct TuneConfig {
  optim::OptimizerSpec base;
  std::size_t max_epochs_tune = 50;
  std::size_t subset = 256;  // rows used for tuning
  friend bool operator==(const TuneConfig&, const TuneConfig&) = default;
};

struct SubspaceConfig {
  std::size_t dim = 0;    // absolute dimension, or
  double fraction = 0.0;  // fraction of the parameter count
  std::uint64_t seed = 0;
  double scale = 0.0;
  bool orthonormalize = false;
  friend bool operator==(const SubspaceConfig&, const SubspaceConfig&) = default;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSource dataset;
  std::vector<Variant> variants{{"semantic", {}}};
  models::ModelSpec model;
  std::optional<models::Axis> scale_axis;
  std::vector<std::size_t> scale_values;
  std::optional<optim::OptimizerSpec> optimizer;
  std::optional<TuneConfig> tune;
  optim::RegularizerSpec regularizer;
  capacity::EmcConfig emc;
  converge::ConvergenceCriteria convergence;
  bool auto_grad_threshold = false;
  std::size_t calibration_n = 8;
  std::size_t calibration_attempts = 3;
  std::optional<SubspaceConfig> subspace;
  std::optional<reparam::QuantSpec> quant;
  std::size_t replicates = 1;
  std::string plot_x = "param_count";  // or effective_bits
  bool svg = true;
  std::vector<std::string> gap_pair{"semantic", "random"};
  std::string output_dir = "emc_out";
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  /// Directory relative paths in the config resolve against.
  std::filesystem::path base_dir;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Strict parse: unknown keys, wrong types and invalid values throw
/// ConfigError.
ExperimentConfig parse_config(const json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Full normalized config. Runtime-only fields (output_dir, jobs) are left
/// out of the echo so records do not depend on them.
json config_echo(const ExperimentConfig& cfg);
json to_json(const ExperimentConfig& cfg);

/// The data an experiment trains on plus the optional held-out set.
struct PreparedData {
  data::Dataset train;
  std::optional<data::Dataset> test;
};

PreparedData prepare_data(const ExperimentConfig& cfg);
/// Model specs of the sweep with input shape and class count filled in.
std::vector<models::ModelSpec> model_specs(const ExperimentConfig& cfg,
                                           const data::Dataset& ds);
/// Parses, loads the data and checks every model against it. No training.
void validate(const ExperimentConfig& cfg);

/// Accuracies of a model trained on the full training split, scored on the holdout.
struct Generalization {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double gap = 0.0;
  friend bool operator==(const Generalization&, const Generalization&) = default;
};

struct RunRecord {
  std::string id;
  json config;  // echo
  std::size_t model_index = 0;
  std::string variant;
  std::size_t replicate = 0;
  models::ModelSpec model;
  std::size_t param_count = 0;
  std::size_t effective_bits = 0;
  optim::OptimizerSpec optimizer;
  double grad_norm_threshold = 0.0;
  capacity::EmcResult emc;
  std::optional<Generalization> generalization;
  std::string error;

  friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

json to_json(const RunRecord& r);
RunRecord record_from_json(const json& j);
json to_json(const capacity::EmcResult& r);
capacity::EmcResult emc_result_from_json(const json& j);
json to_json(const models::ModelSpec& s);
models::ModelSpec model_spec_from_json(const json& j);
json to_json(const optim::OptimizerSpec& s);
optim::OptimizerSpec optimizer_spec_from_json(const json& j);

/// Deterministic text for a record file: sorted keys, shortest round-trip
/// float formatting, trailing newline.
std::string dump(const json& j);

struct SweepOptions {
  std::size_t jobs = 1;
  bool resume = false;
  std::ostream* log = nullptr;
};

struct SweepResult {
  std::vector<RunRecord> records;  // sorted by id
  std::size_t computed = 0;
  std::size_t reused = 0;
  std::size_t failed = 0;
};

/// One EMC search per (model spec x variant x replicate). Records are written
/// to <output_dir>/records/<id>.json as they complete; with `resume`, records
/// whose config echo matches are loaded instead of recomputed. Writes
/// summary.csv and plot data at the end.
SweepResult run_sweep(const ExperimentConfig& cfg, const SweepOptions& options);

std::vector<RunRecord> load_records(const std::filesystem::path& output_dir);

/// One row per record with a fixed column order.
std::string summary_csv(std::span<const RunRecord> records);
void export_json(std::span<const RunRecord> records, const std::filesystem::path& path);
std::vector<RunRecord> import_json(const std::filesystem::path& path);

struct PlotPoint {
  double x = 0.0;
  double y = 0.0;
  std::string series;
  double stderr_ = 0.0;
  std::size_t seeds = 0;
};

/// Records grouped by (series, x); y is the mean EMC over replicates.
std::vector<PlotPoint> plot_points(std::span<const RunRecord> records, const std::string& x_axis);
std::string plot_csv(std::span<const PlotPoint> points);
/// Log-log line chart.
std::string plot_svg(std::span<const PlotPoint> points, const std::string& x_label);
/// Writes summary.csv, plots/emc_vs_<x>.csv and optionally the SVG.
void emit_outputs(std::span<const RunRecord> records, const std::filesystem::path& output_dir,
                  const std::string& x_axis, bool svg);

/// Text reports for the CLI: curve | avglog | gap | pearson.
std::string report(std::span<const RunRecord> records, const std::string& metric);

}  // namespace emc::runner

#endif  // EMC_RUNNER_HPP_

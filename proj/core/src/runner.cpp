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

#include "emc/runner.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "emc/error.hpp"
#include "emc/rng.hpp"

namespace emc::runner {

namespace fs = std::filesystem;

namespace {

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& at(const std::string& key) {
    if (!has(key)) throw ConfigError("missing key '" + where(key) + "'");
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (has(key)) out = convert<T>(at(key), where(key));
  }

  template <class T>
  T require(const std::string& key) {
    return convert<T>(at(key), where(key));
  }

  std::string where(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError("unknown key '" + where(item.key()) + "'");
  }

  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      return v.get<double>();
    } else {
      static_assert(std::is_integral_v<T>);
      if (v.is_number_unsigned()) return v.get<T>();
      if (v.is_number_integer()) {
        if (v.get<std::int64_t>() < 0) throw ConfigError(where + ": must not be negative");
        return static_cast<T>(v.get<std::int64_t>());
      }
      throw ConfigError(where + ": expected a non-negative integer");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class T>
std::vector<T> array_of(const json& v, const std::string& where) {
  if (!v.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out.push_back(Obj::convert<T>(v[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

// Enum parsers throw ConfigError with the offending key.
template <class F>
auto parse_enum(Obj& o, const std::string& key, F from_string) {
  const auto s = o.require<std::string>(key);
  try {
    return from_string(s);
  } catch (const Error& e) {
    throw ConfigError(o.where(key) + ": " + e.what());
  }
}

bool valid_label(const std::string& s) {
  if (s.empty() || s.size() > 64) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
           c == '_' || c == '-';
  });
}

DatasetSource parse_dataset(const json& j) {
  Obj o(j, "dataset");
  DatasetSource d;
  d.source = o.require<std::string>("source");
  if (d.source == "synth_clusters") {
    o.get("classes", d.classes);
    o.get("features", d.features);
    o.get("samples", d.samples);
    o.get("separation", d.separation);
    o.get("seed", d.seed);
    if (d.classes < 2) throw ConfigError("dataset.classes must be at least 2");
    if (d.features == 0 || d.samples == 0)
      throw ConfigError("dataset.features and dataset.samples must be positive");
    if (o.has("sample_shape")) {
      d.sample_shape = array_of<std::size_t>(o.at("sample_shape"), "dataset.sample_shape");
      if (shape_size(d.sample_shape) != d.features)
        throw ConfigError("dataset.sample_shape must hold exactly `features` values");
    }
  } else if (d.source == "csv") {
    d.path = o.require<std::string>("path");
    d.label_column = o.require<std::string>("label_column");
    d.num_classes = o.require<std::size_t>("num_classes");
  } else if (d.source == "emct") {
    d.path = o.require<std::string>("manifest");
  } else {
    throw ConfigError("dataset.source: unknown source '" + d.source +
                      "' (synth_clusters, csv, emct)");
  }
  o.get("holdout", d.holdout);
  o.finish();
  return d;
}

json to_json(const DatasetSource& d) {
  json j{{"source", d.source}, {"holdout", d.holdout}};
  if (d.source == "synth_clusters") {
    j["classes"] = d.classes;
    j["features"] = d.features;
    j["samples"] = d.samples;
    j["separation"] = d.separation;
    j["seed"] = d.seed;
    if (!d.sample_shape.empty()) j["sample_shape"] = d.sample_shape;
  } else if (d.source == "csv") {
    j["path"] = d.path;
    j["label_column"] = d.label_column;
    j["num_classes"] = d.num_classes;
  } else {
    j["manifest"] = d.path;
  }
  return j;
}

data::TransformSpec parse_transform(const json& j, const std::string& where) {
  Obj o(j, where);
  data::TransformSpec t;
  t.kind = parse_enum(o, "kind", data::transform_kind_from_string);
  using K = data::TransformKind;
  if (t.kind == K::random_labels || t.kind == K::gaussian_inputs ||
      t.kind == K::fixed_permutation)
    o.get("seed", t.seed);
  if (t.kind == K::merge_classes) t.groups = o.require<std::size_t>("groups");
  if (t.kind == K::resize) {
    t.height = o.require<std::size_t>("height");
    t.width = o.require<std::size_t>("width");
    if (t.height == 0 || t.width == 0) throw ConfigError(where + ": resize to an empty image");
  }
  o.finish();
  return t;
}

json to_json(const data::TransformSpec& t) {
  using K = data::TransformKind;
  json j{{"kind", data::to_string(t.kind)}};
  if (t.kind == K::random_labels || t.kind == K::gaussian_inputs ||
      t.kind == K::fixed_permutation)
    j["seed"] = t.seed;
  if (t.kind == K::merge_classes) j["groups"] = t.groups;
  if (t.kind == K::resize) {
    j["height"] = t.height;
    j["width"] = t.width;
  }
  return j;
}

optim::OptimizerSpec parse_optimizer(const json& j, const std::string& where) {
  Obj o(j, where);
  optim::OptimizerSpec s;
  if (o.has("kind")) s.kind = parse_enum(o, "kind", optim::optimizer_kind_from_string);
  o.get("lr", s.lr);
  o.get("batch_size", s.batch_size);
  o.get("momentum", s.momentum);
  o.get("beta1", s.beta1);
  o.get("beta2", s.beta2);
  o.get("adam_epsilon", s.adam_epsilon);
  o.get("weight_decay", s.weight_decay);
  o.get("shampoo_update_every", s.shampoo_update_every);
  o.get("shampoo_damping", s.shampoo_damping);
  if (o.has("schedule")) s.schedule = parse_enum(o, "schedule", optim::schedule_from_string);
  o.get("lr_min", s.lr_min);
  o.get("max_epochs", s.max_epochs);
  o.finish();
  try {
    s.validate();
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return s;
}

models::ModelSpec parse_model(const json& j, bool& has_shape) {
  Obj o(j, "model");
  models::ModelSpec s;
  s.num_classes = 0;
  s.family = parse_enum(o, "family", models::family_from_string);
  o.get("width", s.width);
  o.get("depth", s.depth);
  if (o.has("activation"))
    s.activation = parse_enum(o, "activation", models::activation_from_string);
  has_shape = o.has("input_shape");
  if (has_shape) s.input_shape = array_of<std::size_t>(o.at("input_shape"), "model.input_shape");
  o.get("num_classes", s.num_classes);
  o.finish();
  return s;
}

std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

fs::path resolve(const ExperimentConfig& cfg, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || cfg.base_dir.empty() ? path : cfg.base_dir / path;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// --- Config -----------------------------------------------------------------

ExperimentConfig parse_config(const json& j) {
  Obj o(j, "");
  ExperimentConfig c;
  o.get("name", c.name);
  c.dataset = parse_dataset(o.at("dataset"));

  if (o.has("variants")) {
    const json& vs = o.at("variants");
    if (!vs.is_array() || vs.empty()) throw ConfigError("variants: expected a non-empty array");
    c.variants.clear();
    std::set<std::string> labels;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const std::string where = "variants[" + std::to_string(i) + "]";
      Obj v(vs[i], where);
      Variant var;
      var.label = v.require<std::string>("label");
      if (!valid_label(var.label))
        throw ConfigError(where + ".label must be 1-64 characters of [A-Za-z0-9_-]");
      if (!labels.insert(var.label).second)
        throw ConfigError("duplicate variant label '" + var.label + "'");
      if (v.has("transforms")) {
        const json& ts = v.at("transforms");
        if (!ts.is_array()) throw ConfigError(where + ".transforms: expected an array");
        for (std::size_t k = 0; k < ts.size(); ++k)
          var.transforms.push_back(
              parse_transform(ts[k], where + ".transforms[" + std::to_string(k) + "]"));
      }
      v.finish();
      c.variants.push_back(std::move(var));
    }
  }

  bool has_shape = false;
  c.model = parse_model(o.at("model"), has_shape);

  if (o.has("scale")) {
    Obj s(o.at("scale"), "scale");
    c.scale_axis = parse_enum(s, "axis", [](const std::string& a) {
      if (a == "width") return models::Axis::width;
      if (a == "depth") return models::Axis::depth;
      throw ConfigError("unknown axis '" + a + "' (width, depth)");
    });
    c.scale_values = array_of<std::size_t>(s.at("values"), "scale.values");
    s.finish();
    if (c.scale_values.empty()) throw ConfigError("scale.values must not be empty");
    for (std::size_t i = 0; i < c.scale_values.size(); ++i) {
      if (c.scale_values[i] == 0) throw ConfigError("scale.values must be positive");
      if (i > 0 && c.scale_values[i] <= c.scale_values[i - 1])
        throw ConfigError("scale.values must be strictly increasing");
    }
  }

  if (o.has("optimizer") == o.has("tune"))
    throw ConfigError("exactly one of 'optimizer' or 'tune' is required");
  if (o.has("optimizer")) c.optimizer = parse_optimizer(o.at("optimizer"), "optimizer");
  if (o.has("tune")) {
    Obj t(o.at("tune"), "tune");
    TuneConfig tc;
    if (t.has("base")) tc.base = parse_optimizer(t.at("base"), "tune.base");
    t.get("max_epochs_tune", tc.max_epochs_tune);
    t.get("subset", tc.subset);
    t.finish();
    if (tc.max_epochs_tune == 0 || tc.subset == 0)
      throw ConfigError("tune.max_epochs_tune and tune.subset must be positive");
    c.tune = tc;
  }

  if (o.has("regularizer")) {
    Obj r(o.at("regularizer"), "regularizer");
    r.get("sam_rho", c.regularizer.sam_rho);
    r.get("label_smoothing", c.regularizer.label_smoothing);
    r.finish();
    try {
      c.regularizer.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("regularizer: ") + e.what());
    }
  }

  if (o.has("emc")) {
    Obj e(o.at("emc"), "emc");
    e.get("start_n", c.emc.start_n);
    if (e.has("growth")) c.emc.growth = parse_enum(e, "growth", capacity::growth_from_string);
    e.get("step", c.emc.step);
    e.get("fit_threshold", c.emc.fit_threshold);
    e.get("retry_seeds", c.emc.retry_seeds);
    e.get("max_n", c.emc.max_n);
    e.get("trial_seed_base", c.emc.trial_seed_base);
    e.finish();
  }

  if (o.has("convergence")) {
    Obj v(o.at("convergence"), "convergence");
    if (v.has("grad_norm_threshold")) {
      const json& g = v.at("grad_norm_threshold");
      if (g.is_string()) {
        if (g.get<std::string>() != "auto")
          throw ConfigError("convergence.grad_norm_threshold: expected a number or \"auto\"");
        c.auto_grad_threshold = true;
      } else {
        c.convergence.grad_norm_threshold =
            Obj::convert<double>(g, "convergence.grad_norm_threshold");
      }
    }
    v.get("plateau_epochs", c.convergence.plateau_epochs);
    v.get("eig_threshold", c.convergence.eig_threshold);
    v.get("lanczos_iters", c.convergence.lanczos_iters);
    v.get("hvp_epsilon", c.convergence.hvp_epsilon);
    v.get("calibration_n", c.calibration_n);
    v.get("calibration_attempts", c.calibration_attempts);
    v.finish();
    try {
      c.convergence.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("convergence: ") + e.what());
    }
    if (c.calibration_n == 0 || c.calibration_attempts == 0)
      throw ConfigError("convergence.calibration_n and calibration_attempts must be positive");
  }

  if (o.has("reparam")) {
    Obj r(o.at("reparam"), "reparam");
    if (r.has("subspace")) {
      Obj s(r.at("subspace"), "reparam.subspace");
      SubspaceConfig sc;
      if (s.has("dim") == s.has("fraction"))
        throw ConfigError("reparam.subspace: exactly one of 'dim' or 'fraction' is required");
      s.get("dim", sc.dim);
      s.get("fraction", sc.fraction);
      s.get("seed", sc.seed);
      s.get("scale", sc.scale);
      s.get("orthonormalize", sc.orthonormalize);
      s.finish();
      if (s.has("dim") && sc.dim == 0) throw ConfigError("reparam.subspace.dim must be positive");
      if (s.has("fraction") && !(sc.fraction > 0.0 && sc.fraction <= 1.0))
        throw ConfigError("reparam.subspace.fraction must be in (0, 1]");
      if (sc.scale < 0.0 || !std::isfinite(sc.scale))
        throw ConfigError("reparam.subspace.scale must be finite and non-negative");
      c.subspace = sc;
    }
    if (r.has("quant")) {
      Obj q(r.at("quant"), "reparam.quant");
      reparam::QuantSpec qs;
      q.get("bits", qs.bits);
      q.finish();
      try {
        qs.validate();
      } catch (const Error& e) {
        throw ConfigError(std::string("reparam.quant: ") + e.what());
      }
      c.quant = qs;
    }
    r.finish();
    if (c.subspace && c.quant)
      throw ConfigError("reparam: subspace and quant cannot be combined");
  }

  o.get("replicates", c.replicates);
  if (c.replicates == 0) throw ConfigError("replicates must be positive");

  if (o.has("plot")) {
    Obj p(o.at("plot"), "plot");
    p.get("x", c.plot_x);
    p.get("svg", c.svg);
    p.finish();
    if (c.plot_x != "param_count" && c.plot_x != "effective_bits")
      throw ConfigError("plot.x must be param_count or effective_bits");
  }
  if (o.has("metrics")) {
    Obj m(o.at("metrics"), "metrics");
    if (m.has("gap_pair")) {
      c.gap_pair = array_of<std::string>(m.at("gap_pair"), "metrics.gap_pair");
      if (c.gap_pair.size() != 2) throw ConfigError("metrics.gap_pair needs two variant labels");
    }
    m.finish();
  }

  o.get("output_dir", c.output_dir);
  o.get("seed", c.seed);
  o.get("jobs", c.jobs);
  if (c.jobs == 0) throw ConfigError("jobs must be positive");
  o.finish();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  ExperimentConfig c = parse_config(j);
  c.base_dir = path.parent_path();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json j = config_echo(c);
  j["output_dir"] = c.output_dir;
  j["jobs"] = c.jobs;
  return j;
}

json config_echo(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["dataset"] = to_json(c.dataset);
  j["variants"] = json::array();
  for (const auto& v : c.variants) {
    json t = json::array();
    for (const auto& s : v.transforms) t.push_back(to_json(s));
    j["variants"].push_back({{"label", v.label}, {"transforms", t}});
  }
  json m{{"family", models::to_string(c.model.family)},
         {"width", c.model.width},
         {"depth", c.model.depth},
         {"activation", models::to_string(c.model.activation)},
         {"num_classes", c.model.num_classes}};
  if (!c.model.input_shape.empty()) m["input_shape"] = c.model.input_shape;
  j["model"] = m;
  if (c.scale_axis)
    j["scale"] = {{"axis", *c.scale_axis == models::Axis::width ? "width" : "depth"},
                  {"values", c.scale_values}};
  auto opt_json = [](const optim::OptimizerSpec& s) {
    json o = to_json(s);
    o.erase("seed");
    return o;
  };
  if (c.optimizer) j["optimizer"] = opt_json(*c.optimizer);
  if (c.tune)
    j["tune"] = {{"base", opt_json(c.tune->base)},
                 {"max_epochs_tune", c.tune->max_epochs_tune},
                 {"subset", c.tune->subset}};
  j["regularizer"] = {{"sam_rho", c.regularizer.sam_rho},
                      {"label_smoothing", c.regularizer.label_smoothing}};
  j["emc"] = {{"start_n", c.emc.start_n},
              {"growth", capacity::to_string(c.emc.growth)},
              {"step", c.emc.step},
              {"fit_threshold", c.emc.fit_threshold},
              {"retry_seeds", c.emc.retry_seeds},
              {"max_n", c.emc.max_n},
              {"trial_seed_base", c.emc.trial_seed_base}};
  json conv{{"plateau_epochs", c.convergence.plateau_epochs},
            {"eig_threshold", c.convergence.eig_threshold},
            {"lanczos_iters", c.convergence.lanczos_iters},
            {"hvp_epsilon", c.convergence.hvp_epsilon},
            {"calibration_n", c.calibration_n},
            {"calibration_attempts", c.calibration_attempts}};
  if (c.auto_grad_threshold) {
    conv["grad_norm_threshold"] = "auto";
  } else {
    conv["grad_norm_threshold"] = c.convergence.grad_norm_threshold;
  }
  j["convergence"] = conv;
  if (c.subspace || c.quant) {
    json r = json::object();
    if (c.subspace) {
      json s{{"seed", c.subspace->seed},
             {"scale", c.subspace->scale},
             {"orthonormalize", c.subspace->orthonormalize}};
      if (c.subspace->dim > 0) {
        s["dim"] = c.subspace->dim;
      } else {
        s["fraction"] = c.subspace->fraction;
      }
      r["subspace"] = s;
    }
    if (c.quant) r["quant"] = {{"bits", c.quant->bits}};
    j["reparam"] = r;
  }
  j["replicates"] = c.replicates;
  j["plot"] = {{"x", c.plot_x}, {"svg", c.svg}};
  j["metrics"] = {{"gap_pair", c.gap_pair}};
  j["seed"] = c.seed;
  return j;
}

// --- Data and validation ------------------------------------------------------

PreparedData prepare_data(const ExperimentConfig& cfg) {
  data::Dataset ds;
  const auto& src = cfg.dataset;
  if (src.source == "synth_clusters") {
    ds = data::synth_clusters(src.classes, src.features, src.samples, src.separation, src.seed);
    if (!src.sample_shape.empty()) {
      Shape shape{ds.size()};
      shape.insert(shape.end(), src.sample_shape.begin(), src.sample_shape.end());
      ds.inputs = ds.inputs.reshaped(std::move(shape));
    }
  } else if (src.source == "csv") {
    ds = data::load_csv(resolve(cfg, src.path), src.label_column, src.num_classes);
  } else {
    ds = data::load_tensor_file(resolve(cfg, src.path));
  }
  PreparedData out;
  if (src.holdout == 0) {
    out.train = std::move(ds);
    return out;
  }
  if (src.holdout >= ds.size())
    throw ConfigError("dataset.holdout (" + std::to_string(src.holdout) +
                      ") must be smaller than the dataset (" + std::to_string(ds.size()) + ")");
  const auto order = data::sample_rows(ds.size(), {ds.size(), derive_seed({cfg.seed, 0x401du})});
  const std::span<const std::size_t> rows(order);
  out.test = ds.subset(rows.first(src.holdout));
  out.train = ds.subset(rows.subspan(src.holdout));
  out.test->name = ds.name + ":test";
  return out;
}

namespace {

data::Dataset apply_variant(const Variant& v, data::Dataset ds) {
  for (const auto& t : v.transforms) ds = data::apply(t, ds);
  return ds;
}

}  // namespace

std::vector<models::ModelSpec> model_specs(const ExperimentConfig& cfg,
                                           const data::Dataset& ds) {
  models::ModelSpec spec = cfg.model;
  if (spec.input_shape.empty()) {
    spec.input_shape = ds.sample_shape();
  } else if (spec.input_shape != ds.sample_shape()) {
    throw ConfigError("model.input_shape " + shape_str(spec.input_shape) +
                      " does not match the data " + shape_str(ds.sample_shape()));
  }
  if (spec.num_classes == 0) {
    spec.num_classes = ds.num_classes;
  } else if (spec.num_classes != ds.num_classes) {
    throw ConfigError("model.num_classes (" + std::to_string(spec.num_classes) +
                      ") does not match the data (" + std::to_string(ds.num_classes) + ")");
  }
  std::vector<models::ModelSpec> specs;
  if (cfg.scale_axis) {
    specs = models::scale_series(spec, *cfg.scale_axis, cfg.scale_values);
  } else {
    specs.push_back(spec);
  }
  for (const auto& s : specs) {
    try {
      s.validate();
    } catch (const ShapeError& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
  }
  return specs;
}

namespace {

std::optional<reparam::SubspaceSpec> subspace_for(const ExperimentConfig& cfg,
                                                  const models::ModelSpec& spec) {
  if (!cfg.subspace) return std::nullopt;
  const std::size_t d = models::param_count(spec);
  reparam::SubspaceSpec s;
  s.dim = cfg.subspace->dim > 0
              ? cfg.subspace->dim
              : std::max<std::size_t>(
                    1, static_cast<std::size_t>(std::llround(cfg.subspace->fraction * d)));
  s.seed = cfg.subspace->seed;
  s.scale = cfg.subspace->scale;
  s.orthonormalize = cfg.subspace->orthonormalize;
  try {
    s.validate(d);
  } catch (const Error& e) {
    throw ConfigError(std::string("reparam.subspace: ") + e.what());
  }
  return s;
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  const PreparedData pd = prepare_data(cfg);
  for (const auto& v : cfg.variants) {
    const data::Dataset ds = apply_variant(v, pd.train);
    try {
      cfg.emc.validate(ds.size());
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("emc: ") + e.what());
    }
    if (cfg.auto_grad_threshold && cfg.calibration_n > ds.size())
      throw ConfigError("convergence.calibration_n exceeds the dataset size");
    for (const auto& spec : model_specs(cfg, ds)) subspace_for(cfg, spec);
  }
}

// --- Record serialization -------------------------------------------------------

json to_json(const models::ModelSpec& s) {
  return {{"family", models::to_string(s.family)},
          {"input_shape", s.input_shape},
          {"num_classes", s.num_classes},
          {"width", s.width},
          {"depth", s.depth},
          {"activation", models::to_string(s.activation)},
          {"init_seed", s.init_seed}};
}

models::ModelSpec model_spec_from_json(const json& j) {
  models::ModelSpec s;
  s.family = models::family_from_string(j.at("family").get<std::string>());
  s.input_shape = j.at("input_shape").get<Shape>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.width = j.at("width").get<std::size_t>();
  s.depth = j.at("depth").get<std::size_t>();
  s.activation = models::activation_from_string(j.at("activation").get<std::string>());
  s.init_seed = j.at("init_seed").get<std::uint64_t>();
  return s;
}

json to_json(const optim::OptimizerSpec& s) {
  return {{"kind", optim::to_string(s.kind)},
          {"lr", s.lr},
          {"batch_size", s.batch_size},
          {"momentum", s.momentum},
          {"beta1", s.beta1},
          {"beta2", s.beta2},
          {"adam_epsilon", s.adam_epsilon},
          {"weight_decay", s.weight_decay},
          {"shampoo_update_every", s.shampoo_update_every},
          {"shampoo_damping", s.shampoo_damping},
          {"schedule", optim::to_string(s.schedule)},
          {"lr_min", s.lr_min},
          {"max_epochs", s.max_epochs},
          {"seed", s.seed}};
}

optim::OptimizerSpec optimizer_spec_from_json(const json& j) {
  optim::OptimizerSpec s;
  s.kind = optim::optimizer_kind_from_string(j.at("kind").get<std::string>());
  s.lr = j.at("lr").get<double>();
  s.batch_size = j.at("batch_size").get<std::size_t>();
  s.momentum = j.at("momentum").get<double>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.adam_epsilon = j.at("adam_epsilon").get<double>();
  s.weight_decay = j.at("weight_decay").get<double>();
  s.shampoo_update_every = j.at("shampoo_update_every").get<std::size_t>();
  s.shampoo_damping = j.at("shampoo_damping").get<double>();
  s.schedule = optim::schedule_from_string(j.at("schedule").get<std::string>());
  s.lr_min = j.at("lr_min").get<double>();
  s.max_epochs = j.at("max_epochs").get<std::size_t>();
  s.seed = j.value("seed", std::uint64_t{0});
  return s;
}

namespace {

json to_json(const converge::ConvergenceReport& r) {
  return {{"loss", r.loss},
          {"grad_norm", r.grad_norm},
          {"grad_ok", r.grad_ok},
          {"plateaued", r.plateaued},
          {"eig_checked", r.eig_checked},
          {"min_eig_estimate", r.min_eig_estimate},
          {"eig_ok", r.eig_ok},
          {"is_minimum", r.is_minimum},
          {"lanczos_iterations", r.lanczos_iterations},
          {"lanczos_breakdown", r.lanczos_breakdown},
          {"lanczos_residual", r.lanczos_residual}};
}

converge::ConvergenceReport report_from_json(const json& j) {
  converge::ConvergenceReport r;
  r.loss = j.at("loss").get<double>();
  r.grad_norm = j.at("grad_norm").get<double>();
  r.grad_ok = j.at("grad_ok").get<bool>();
  r.plateaued = j.at("plateaued").get<bool>();
  r.eig_checked = j.at("eig_checked").get<bool>();
  r.min_eig_estimate = j.at("min_eig_estimate").get<double>();
  r.eig_ok = j.at("eig_ok").get<bool>();
  r.is_minimum = j.at("is_minimum").get<bool>();
  r.lanczos_iterations = j.at("lanczos_iterations").get<std::size_t>();
  r.lanczos_breakdown = j.at("lanczos_breakdown").get<bool>();
  r.lanczos_residual = j.at("lanczos_residual").get<double>();
  return r;
}

json to_json(const capacity::EmcConfig& c) {
  return {{"start_n", c.start_n},
          {"growth", capacity::to_string(c.growth)},
          {"step", c.step},
          {"fit_threshold", c.fit_threshold},
          {"retry_seeds", c.retry_seeds},
          {"max_n", c.max_n},
          {"trial_seed_base", c.trial_seed_base}};
}

capacity::EmcConfig emc_config_from_json(const json& j) {
  capacity::EmcConfig c;
  c.start_n = j.at("start_n").get<std::size_t>();
  c.growth = capacity::growth_from_string(j.at("growth").get<std::string>());
  c.step = j.at("step").get<std::size_t>();
  c.fit_threshold = j.at("fit_threshold").get<double>();
  c.retry_seeds = j.at("retry_seeds").get<std::size_t>();
  c.max_n = j.at("max_n").get<std::size_t>();
  c.trial_seed_base = j.at("trial_seed_base").get<std::uint64_t>();
  return c;
}

}  // namespace

json to_json(const capacity::EmcResult& r) {
  json trace = json::array();
  for (const auto& e : r.trace) {
    json attempts = json::array();
    for (const auto& a : e.attempts) {
      const auto& o = a.outcome;
      attempts.push_back({{"seed", a.seed},
                          {"fit", o.fit},
                          {"train_accuracy", o.train_accuracy},
                          {"epochs_run", o.epochs_run},
                          {"final_loss", o.final_loss},
                          {"diagnostic", o.diagnostic},
                          {"convergence", o.convergence ? to_json(*o.convergence) : json()}});
    }
    trace.push_back({{"n", e.n}, {"fit", e.fit()}, {"attempts", attempts}});
  }
  return {{"emc", r.emc},
          {"saturated", r.saturated},
          {"below_start", r.below_start},
          {"config", to_json(r.config)},
          {"trace", trace}};
}

capacity::EmcResult emc_result_from_json(const json& j) {
  capacity::EmcResult r;
  r.emc = j.at("emc").get<std::size_t>();
  r.saturated = j.at("saturated").get<bool>();
  r.below_start = j.at("below_start").get<bool>();
  r.config = emc_config_from_json(j.at("config"));
  for (const auto& e : j.at("trace")) {
    capacity::TraceEntry t;
    t.n = e.at("n").get<std::size_t>();
    for (const auto& a : e.at("attempts")) {
      capacity::Attempt at;
      at.seed = a.at("seed").get<std::uint64_t>();
      at.outcome.fit = a.at("fit").get<bool>();
      at.outcome.train_accuracy = a.at("train_accuracy").get<double>();
      at.outcome.epochs_run = a.at("epochs_run").get<std::size_t>();
      at.outcome.final_loss = a.at("final_loss").get<double>();
      at.outcome.diagnostic = a.at("diagnostic").get<std::string>();
      if (!a.at("convergence").is_null())
        at.outcome.convergence = report_from_json(a.at("convergence"));
      t.attempts.push_back(std::move(at));
    }
    r.trace.push_back(std::move(t));
  }
  return r;
}

json to_json(const RunRecord& r) {
  json j{{"id", r.id},
         {"config", r.config},
         {"coordinates",
          {{"model_index", r.model_index}, {"variant", r.variant}, {"replicate", r.replicate}}},
         {"model", to_json(r.model)},
         {"param_count", r.param_count},
         {"effective_bits", r.effective_bits},
         {"optimizer", to_json(r.optimizer)},
         {"grad_norm_threshold", r.grad_norm_threshold},
         {"emc", to_json(r.emc)},
         {"error", r.error.empty() ? json() : json(r.error)}};
  if (r.generalization) {
    j["generalization"] = {{"train_accuracy", r.generalization->train_accuracy},
                           {"test_accuracy", r.generalization->test_accuracy},
                           {"gap", r.generalization->gap}};
  } else {
    j["generalization"] = nullptr;
  }
  return j;
}

RunRecord record_from_json(const json& j) {
  try {
    RunRecord r;
    r.id = j.at("id").get<std::string>();
    r.config = j.at("config");
    const json& c = j.at("coordinates");
    r.model_index = c.at("model_index").get<std::size_t>();
    r.variant = c.at("variant").get<std::string>();
    r.replicate = c.at("replicate").get<std::size_t>();
    r.model = model_spec_from_json(j.at("model"));
    r.param_count = j.at("param_count").get<std::size_t>();
    r.effective_bits = j.at("effective_bits").get<std::size_t>();
    r.optimizer = optimizer_spec_from_json(j.at("optimizer"));
    r.grad_norm_threshold = j.at("grad_norm_threshold").get<double>();
    r.emc = emc_result_from_json(j.at("emc"));
    if (!j.at("error").is_null()) r.error = j.at("error").get<std::string>();
    const json& g = j.at("generalization");
    if (!g.is_null())
      r.generalization = Generalization{g.at("train_accuracy").get<double>(),
                                        g.at("test_accuracy").get<double>(),
                                        g.at("gap").get<double>()};
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed record: ") + e.what());
  } catch (const Error& e) {
    throw IoError(std::string("malformed record: ") + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

// --- Sweep ----------------------------------------------------------------------

namespace {

struct Task {
  std::string id;
  std::size_t model_index = 0;
  std::size_t variant_index = 0;
  std::size_t replicate = 0;
};

std::string model_tag(const ExperimentConfig& cfg, std::size_t index) {
  if (!cfg.scale_axis) return "base";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%06zu", *cfg.scale_axis == models::Axis::width ? 'w' : 'd',
                cfg.scale_values[index]);
  return buf;
}

std::string task_id(const ExperimentConfig& cfg, std::size_t model_index,
                    const std::string& variant, std::size_t replicate) {
  char rep[16];
  std::snprintf(rep, sizeof rep, "r%03zu", replicate);
  return model_tag(cfg, model_index) + "." + variant + "." + rep;
}

RunRecord run_task(const ExperimentConfig& cfg, const json& echo, const Task& task,
                   const models::ModelSpec& spec, const data::Dataset& ds,
                   const std::optional<data::Dataset>& test) {
  RunRecord r;
  r.id = task.id;
  r.config = echo;
  r.model_index = task.model_index;
  r.variant = cfg.variants[task.variant_index].label;
  r.replicate = task.replicate;
  r.model = spec;
  r.param_count = models::param_count(spec);
  // Variants share seeds so semantic and intervened runs are paired.
  const std::uint64_t base =
      derive_seed({cfg.seed, cfg.emc.trial_seed_base, task.model_index, task.replicate});
  try {
    capacity::ProbeSetup setup;
    setup.model = spec;
    setup.regularizer = cfg.regularizer;
    setup.criteria = cfg.convergence;
    setup.fit_threshold = cfg.emc.fit_threshold;
    setup.subspace = subspace_for(cfg, spec);
    setup.quant = cfg.quant;

    if (cfg.optimizer) {
      setup.optimizer = *cfg.optimizer;
    } else {
      const std::size_t n = std::min(cfg.tune->subset, ds.size());
      const data::Dataset tune_ds = data::subsample(ds, {n, derive_seed({base, 0x7e5u})});
      optim::TuneGrid grid = optim::default_grid(cfg.tune->base, n);
      grid.max_epochs_tune = cfg.tune->max_epochs_tune;
      grid.regularizer = cfg.regularizer;
      models::ModelSpec tspec = spec;
      tspec.init_seed = derive_seed({base, 0x7e6u});
      setup.optimizer = optim::tune(tspec, tune_ds, grid);
    }
    if (cfg.auto_grad_threshold) {
      setup.criteria.grad_norm_threshold = capacity::calibrate_grad_threshold(
          setup, ds, cfg.calibration_n, cfg.calibration_attempts, derive_seed({base, 0xca1u}));
    }
    r.optimizer = setup.optimizer;
    r.grad_norm_threshold = setup.criteria.grad_norm_threshold;
    r.effective_bits = effective_bits(*capacity::probe_trainable(setup, base));

    capacity::EmcConfig emc = cfg.emc;
    emc.trial_seed_base = base;
    r.emc = capacity::search(
        [&](std::size_t n, std::uint64_t seed) { return capacity::probe(setup, ds, n, seed); },
        emc, ds.size());

    if (test) {
      // Gap of a reference model trained on the whole training split.
      const std::uint64_t ref_seed = derive_seed({base, 0x9e4u});
      const auto ref = capacity::probe(setup, ds, ds.size(), ref_seed);
      if (!ref.final_params.empty()) {
        auto model = capacity::probe_trainable(setup, ref_seed);
        model->params().vec() = ref.final_params;
        Generalization g;
        g.train_accuracy = ref.train_accuracy;
        g.test_accuracy = accuracy(*model, model->params().values(), *test);
        g.gap = g.train_accuracy - g.test_accuracy;
        r.generalization = g;
      }
    }
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  for (auto& t : r.emc.trace)
    for (auto& a : t.attempts) a.outcome.final_params.clear();
  return r;
}

}  // namespace

SweepResult run_sweep(const ExperimentConfig& cfg, const SweepOptions& options) {
  if (options.jobs == 0) throw ConfigError("jobs must be positive");
  const PreparedData pd = prepare_data(cfg);
  const json echo = config_echo(cfg);

  struct VariantData {
    data::Dataset train;
    std::optional<data::Dataset> test;
    std::vector<models::ModelSpec> specs;
  };
  std::vector<VariantData> variants;
  for (const auto& v : cfg.variants) {
    VariantData vd;
    vd.train = apply_variant(v, pd.train);
    if (pd.test) vd.test = apply_variant(v, *pd.test);
    try {
      cfg.emc.validate(vd.train.size());
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("emc: ") + e.what());
    }
    vd.specs = model_specs(cfg, vd.train);
    for (const auto& s : vd.specs) subspace_for(cfg, s);
    variants.push_back(std::move(vd));
  }

  std::vector<Task> tasks;
  const std::size_t n_models = variants.front().specs.size();
  for (std::size_t m = 0; m < n_models; ++m)
    for (std::size_t v = 0; v < cfg.variants.size(); ++v)
      for (std::size_t rep = 0; rep < cfg.replicates; ++rep)
        tasks.push_back({task_id(cfg, m, cfg.variants[v].label, rep), m, v, rep});

  const fs::path out_dir = resolve(cfg, cfg.output_dir);
  const fs::path rec_dir = out_dir / "records";
  std::error_code ec;
  fs::create_directories(rec_dir, ec);
  if (ec) throw IoError("cannot create " + rec_dir.string() + ": " + ec.message());

  std::vector<std::optional<RunRecord>> results(tasks.size());
  std::vector<double> seconds(tasks.size(), -1.0);
  SweepResult sweep;
  if (options.resume) {
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      const fs::path p = rec_dir / (tasks[i].id + ".json");
      if (!fs::exists(p)) continue;
      try {
        RunRecord r = record_from_json(json::parse(read_text(p)));
        if (r.config == echo && r.id == tasks[i].id && r.error.empty()) {
          results[i] = std::move(r);
          ++sweep.reused;
        }
      } catch (const std::exception&) {
        // Unreadable records are recomputed.
      }
    }
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      if (results[i]) continue;
      const Task& t = tasks[i];
      const auto& vd = variants[t.variant_index];
      const auto t0 = std::chrono::steady_clock::now();
      RunRecord r = run_task(cfg, echo, t, vd.specs[t.model_index], vd.train, vd.test);
      const double dt =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const std::string text = dump(to_json(r));
      std::lock_guard<std::mutex> lock(mu);
      write_text(rec_dir / (t.id + ".json"), text);
      seconds[i] = dt;
      if (options.log) {
        *options.log << "[" << t.id << "] ";
        if (r.error.empty()) {
          *options.log << "emc=" << r.emc.emc << " probes=" << r.emc.probe_count();
        } else {
          *options.log << "error: " << r.error;
        }
        *options.log << " (" << fmt(std::round(dt * 100.0) / 100.0) << "s)\n";
        options.log->flush();
      }
      results[i] = std::move(r);
    }
  };
  const std::size_t workers = std::min(options.jobs, tasks.size());
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::string timings = "id,seconds\n";
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    sweep.records.push_back(std::move(*results[i]));
    if (seconds[i] >= 0.0) {
      ++sweep.computed;
      timings += tasks[i].id + "," + fmt(seconds[i]) + "\n";
    }
    if (!sweep.records.back().error.empty()) ++sweep.failed;
  }
  std::sort(sweep.records.begin(), sweep.records.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.id < b.id; });
  write_text(out_dir / "timings.csv", timings);
  emit_outputs(sweep.records, out_dir, cfg.plot_x, cfg.svg);
  return sweep;
}

std::vector<RunRecord> load_records(const fs::path& output_dir) {
  const fs::path dir = output_dir / "records";
  if (!fs::is_directory(dir)) throw IoError("no records directory in " + output_dir.string());
  std::vector<RunRecord> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    json j;
    try {
      j = json::parse(read_text(entry.path()));
    } catch (const json::parse_error& e) {
      throw IoError(entry.path().string() + ": " + e.what());
    }
    out.push_back(record_from_json(j));
  }
  std::sort(out.begin(), out.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.id < b.id; });
  return out;
}

// --- Export -------------------------------------------------------------------------

std::string summary_csv(std::span<const RunRecord> records) {
  std::vector<const RunRecord*> sorted;
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const RunRecord* a, const RunRecord* b) { return a->id < b->id; });
  std::string out =
      "id,model_index,family,width,depth,activation,variant,replicate,param_count,"
      "effective_bits,emc,saturated,below_start,probes,grad_norm_threshold,optimizer,lr,"
      "batch_size,train_accuracy,test_accuracy,generalization_gap,error\n";
  for (const RunRecord* r : sorted) {
    const auto& g = r->generalization;
    out += csv_field(r->id) + "," + std::to_string(r->model_index) + "," +
           models::to_string(r->model.family) + "," + std::to_string(r->model.width) + "," +
           std::to_string(r->model.depth) + "," + models::to_string(r->model.activation) + "," +
           csv_field(r->variant) + "," + std::to_string(r->replicate) + "," +
           std::to_string(r->param_count) + "," + std::to_string(r->effective_bits) + "," +
           std::to_string(r->emc.emc) + "," + (r->emc.saturated ? "1" : "0") + "," +
           (r->emc.below_start ? "1" : "0") + "," + std::to_string(r->emc.probe_count()) + "," +
           fmt(r->grad_norm_threshold) + "," + optim::to_string(r->optimizer.kind) + "," +
           fmt(r->optimizer.lr) + "," + std::to_string(r->optimizer.batch_size) + "," +
           (g ? fmt(g->train_accuracy) : "") + "," + (g ? fmt(g->test_accuracy) : "") + "," +
           (g ? fmt(g->gap) : "") + "," + csv_field(r->error) + "\n";
  }
  return out;
}

void export_json(std::span<const RunRecord> records, const fs::path& path) {
  json arr = json::array();
  for (const auto& r : records) arr.push_back(to_json(r));
  write_text(path, dump(arr));
}

std::vector<RunRecord> import_json(const fs::path& path) {
  json arr;
  try {
    arr = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (!arr.is_array()) throw IoError(path.string() + ": expected an array of records");
  std::vector<RunRecord> out;
  for (const auto& j : arr) out.push_back(record_from_json(j));
  return out;
}

std::vector<PlotPoint> plot_points(std::span<const RunRecord> records,
                                   const std::string& x_axis) {
  if (x_axis != "param_count" && x_axis != "effective_bits")
    throw ConfigError("unknown plot axis '" + x_axis + "'");
  std::map<std::pair<std::string, std::size_t>, std::vector<const RunRecord*>> groups;
  for (const auto& r : records)
    if (r.error.empty()) groups[{r.variant, r.model_index}].push_back(&r);
  std::vector<PlotPoint> out;
  for (auto& [key, rs] : groups) {
    std::sort(rs.begin(), rs.end(),
              [](const RunRecord* a, const RunRecord* b) { return a->id < b->id; });
    std::vector<double> ys;
    for (const RunRecord* r : rs) ys.push_back(static_cast<double>(r->emc.emc));
    double mean = 0.0;
    for (double y : ys) mean += y;
    mean /= static_cast<double>(ys.size());
    PlotPoint p;
    p.x = static_cast<double>(x_axis == "param_count" ? rs.front()->param_count
                                                      : rs.front()->effective_bits);
    p.y = mean;
    p.series = key.first;
    p.stderr_ = sample_stderr(ys);
    p.seeds = ys.size();
    out.push_back(p);
  }
  std::sort(out.begin(), out.end(), [](const PlotPoint& a, const PlotPoint& b) {
    return a.series != b.series ? a.series < b.series : a.x < b.x;
  });
  return out;
}

std::string plot_csv(std::span<const PlotPoint> points) {
  std::string out = "x,y,series,stderr,n_seeds\n";
  for (const auto& p : points)
    out += fmt(p.x) + "," + fmt(p.y) + "," + csv_field(p.series) + "," + fmt(p.stderr_) + "," +
           std::to_string(p.seeds) + "\n";
  return out;
}

std::string plot_svg(std::span<const PlotPoint> points, const std::string& x_label) {
  constexpr double W = 640, H = 420, L = 70, R = 150, T = 20, B = 50;
  std::vector<const PlotPoint*> pts;
  for (const auto& p : points)
    if (p.x > 0.0 && p.y > 0.0) pts.push_back(&p);
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (pts.empty()) {
    s << "<text x=\"" << W / 2 << "\" y=\"" << H / 2
      << "\" text-anchor=\"middle\">no positive data</text>\n</svg>\n";
    return s.str();
  }
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto* p : pts) {
    x0 = std::min(x0, std::log10(p->x));
    x1 = std::max(x1, std::log10(p->x));
    y0 = std::min(y0, std::log10(p->y));
    y1 = std::max(y1, std::log10(p->y));
  }
  x0 = std::floor(x0);
  y0 = std::floor(y0);
  x1 = std::max(std::ceil(x1), x0 + 1);
  y1 = std::max(std::ceil(y1), y0 + 1);
  auto px = [&](double v) { return L + (std::log10(v) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (std::log10(v) - y0) / (y1 - y0) * (H - T - B); };

  s << "<g stroke=\"#ccc\">\n";
  for (double e = x0; e <= x1; ++e) {
    const double x = L + (e - x0) / (x1 - x0) * (W - L - R);
    s << "<line x1=\"" << x << "\" y1=\"" << T << "\" x2=\"" << x << "\" y2=\"" << H - B
      << "\"/>\n";
  }
  for (double e = y0; e <= y1; ++e) {
    const double y = H - B - (e - y0) / (y1 - y0) * (H - T - B);
    s << "<line x1=\"" << L << "\" y1=\"" << y << "\" x2=\"" << W - R << "\" y2=\"" << y
      << "\"/>\n";
  }
  s << "</g>\n";
  for (double e = x0; e <= x1; ++e)
    s << "<text x=\"" << L + (e - x0) / (x1 - x0) * (W - L - R) << "\" y=\"" << H - B + 16
      << "\" text-anchor=\"middle\">1e" << e << "</text>\n";
  for (double e = y0; e <= y1; ++e)
    s << "<text x=\"" << L - 6 << "\" y=\"" << H - B - (e - y0) / (y1 - y0) * (H - T - B) + 4
      << "\" text-anchor=\"end\">1e" << e << "</text>\n";
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" text-anchor=\"middle\">"
    << x_label << "</text>\n"
    << "<text transform=\"translate(16," << (T + H - B) / 2
    << ") rotate(-90)\" text-anchor=\"middle\">EMC</text>\n";

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  std::vector<std::string> series;
  for (const auto* p : pts)
    if (std::find(series.begin(), series.end(), p->series) == series.end())
      series.push_back(p->series);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* c = colors[k % 8];
    s << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (const auto* p : pts)
      if (p->series == series[k]) s << px(p->x) << "," << py(p->y) << " ";
    s << "\"/>\n";
    for (const auto* p : pts)
      if (p->series == series[k])
        s << "<circle cx=\"" << px(p->x) << "\" cy=\"" << py(p->y) << "\" r=\"3\" fill=\"" << c
          << "\"/>\n";
    const double ly = T + 16 + 18.0 * static_cast<double>(k);
    s << "<line x1=\"" << W - R + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - R + 32
      << "\" y2=\"" << ly - 4 << "\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n"
      << "<text x=\"" << W - R + 38 << "\" y=\"" << ly << "\">" << series[k] << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void emit_outputs(std::span<const RunRecord> records, const fs::path& output_dir,
                  const std::string& x_axis, bool svg) {
  std::error_code ec;
  fs::create_directories(output_dir / "plots", ec);
  if (ec) throw IoError("cannot create " + (output_dir / "plots").string());
  write_text(output_dir / "summary.csv", summary_csv(records));
  const auto points = plot_points(records, x_axis);
  write_text(output_dir / "plots" / ("emc_vs_" + x_axis + ".csv"), plot_csv(points));
  if (svg)
    write_text(output_dir / "plots" / ("emc_vs_" + x_axis + ".svg"), plot_svg(points, x_axis));
}

// --- Reports ------------------------------------------------------------------------

namespace {

std::vector<const RunRecord*> ok_sorted(std::span<const RunRecord> records) {
  std::vector<const RunRecord*> out;
  for (const auto& r : records)
    if (r.error.empty()) out.push_back(&r);
  std::sort(out.begin(), out.end(),
            [](const RunRecord* a, const RunRecord* b) { return a->id < b->id; });
  return out;
}

template <class T>
T echo_value(std::span<const RunRecord> records, const char* section, const char* key, T def) {
  if (records.empty()) return def;
  const json& c = records.front().config;
  if (!c.contains(section) || !c.at(section).contains(key)) return def;
  return c.at(section).at(key).get<T>();
}

struct GapRow {
  std::size_t model_index = 0;
  std::size_t param_count = 0;
  double semantic = 0.0;
  double random = 0.0;
  std::optional<double> gen_gap;
};

std::vector<GapRow> gap_rows(std::span<const RunRecord> records) {
  const auto pair = echo_value<std::vector<std::string>>(records, "metrics", "gap_pair",
                                                         {"semantic", "random"});
  struct Acc {
    std::vector<double> sem, rnd, gen;
    std::size_t params = 0;
  };
  std::map<std::size_t, Acc> acc;
  for (const RunRecord* r : ok_sorted(records)) {
    Acc& a = acc[r->model_index];
    a.params = r->param_count;
    if (r->variant == pair[0]) {
      a.sem.push_back(static_cast<double>(r->emc.emc));
      if (r->generalization) a.gen.push_back(r->generalization->gap);
    } else if (r->variant == pair[1]) {
      a.rnd.push_back(static_cast<double>(r->emc.emc));
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  std::vector<GapRow> rows;
  for (const auto& [m, a] : acc) {
    if (a.sem.empty() || a.rnd.empty()) continue;
    GapRow g;
    g.model_index = m;
    g.param_count = a.params;
    g.semantic = mean(a.sem);
    g.random = mean(a.rnd);
    if (!a.gen.empty()) g.gen_gap = mean(a.gen);
    rows.push_back(g);
  }
  return rows;
}

}  // namespace

std::string report(std::span<const RunRecord> records, const std::string& metric) {
  std::ostringstream s;
  if (metric == "curve") {
    const auto x = echo_value<std::string>(records, "plot", "x", "param_count");
    s << plot_csv(plot_points(records, x));
  } else if (metric == "avglog") {
    std::map<std::string, std::vector<capacity::EmcResult>> by_variant;
    for (const RunRecord* r : ok_sorted(records)) by_variant[r->variant].push_back(r->emc);
    s << "variant,avg_log10_emc,records\n";
    for (const auto& [v, rs] : by_variant) {
      s << v << ",";
      try {
        s << fmt(capacity::avg_log_emc(rs));
      } catch (const Error&) {
        s << "n/a";
      }
      s << "," << rs.size() << "\n";
    }
  } else if (metric == "gap") {
    s << "model_index,param_count,semantic_emc,random_emc,pct_increase\n";
    for (const auto& g : gap_rows(records)) {
      s << g.model_index << "," << g.param_count << "," << fmt(g.semantic) << ","
        << fmt(g.random) << ",";
      if (g.random > 0.0) {
        s << fmt(pct_emc_increase(g.semantic, g.random));
      } else {
        s << "n/a";
      }
      s << "\n";
    }
  } else if (metric == "pearson") {
    std::vector<double> xs, ys;
    s << "model_index,param_count,pct_increase,generalization_gap\n";
    for (const auto& g : gap_rows(records)) {
      if (g.random <= 0.0 || !g.gen_gap) continue;
      xs.push_back(pct_emc_increase(g.semantic, g.random));
      ys.push_back(*g.gen_gap);
      s << g.model_index << "," << g.param_count << "," << fmt(xs.back()) << ","
        << fmt(ys.back()) << "\n";
    }
    s << "pearson,";
    try {
      s << fmt(pearson(xs, ys));
    } catch (const Error& e) {
      s << "n/a (" << e.what() << ")";
    }
    s << "\n";
  } else {
    throw ConfigError("unknown metric '" + metric + "' (curve, avglog, gap, pearson)");
  }
  return s.str();
}

}  // namespace emc::runner

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

#include "emc/data.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "emc/error.hpp"
#include "emc/rng.hpp"

namespace emc::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset

Shape Dataset::sample_shape() const {
  if (inputs.rank() < 2) return {};
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

std::size_t Dataset::sample_size() const { return shape_size(sample_shape()); }

void Dataset::validate() const {
  if (inputs.rank() != 2 && inputs.rank() != 4) {
    throw ShapeError("dataset inputs must be (N,features) or (N,C,H,W), got " +
                     shape_str(inputs.shape()));
  }
  if (inputs.dim(0) != labels.size()) {
    throw ShapeError("dataset has " + std::to_string(inputs.dim(0)) + " inputs but " +
                     std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 2) throw Error("dataset needs at least 2 classes");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw Error("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                  " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

Tensor Dataset::gather_inputs(std::span<const std::size_t> rows) const {
  Shape shape = inputs.shape();
  shape[0] = rows.size();
  const std::size_t stride = sample_size();
  Tensor out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double* src = inputs.data().data() + rows[i] * stride;
    std::copy(src, src + stride, out.data().data() + i * stride);
  }
  return out;
}

std::vector<int> Dataset::gather_labels(std::span<const std::size_t> rows) const {
  std::vector<int> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels[rows[i]];
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  return Dataset{gather_inputs(rows), gather_labels(rows), num_classes, name};
}

void check_no_conflicting_duplicates(const Dataset& ds) {
  const std::size_t stride = ds.sample_size();
  std::map<std::vector<double>, std::pair<int, std::size_t>> seen;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double* row = ds.inputs.data().data() + i * stride;
    std::vector<double> key(row, row + stride);
    auto [it, inserted] = seen.try_emplace(std::move(key), ds.labels[i], i);
    if (!inserted && it->second.first != ds.labels[i]) {
      throw Error("rows " + std::to_string(it->second.second) + " and " +
                  std::to_string(i) + " have identical inputs but labels " +
                  std::to_string(it->second.first) + " and " +
                  std::to_string(ds.labels[i]));
    }
  }
}

// ---------------------------------------------------------------------------
// EMCT

namespace {

constexpr char kMagic[4] = {'E', 'M', 'C', 'T'};
constexpr std::uint8_t kVersion = 1;

std::size_t dtype_width(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u16: return 2;
  }
  throw Error("unknown dtype");
}

template <typename T>
void put_le(std::string& out, T v) {
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) std::ranges::reverse(bits);
  out.append(reinterpret_cast<const char*>(bits.data()), bits.size());
}

template <typename T>
T get_le(const unsigned char* p) {
  std::array<unsigned char, sizeof(T)> bits;
  std::memcpy(bits.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::ranges::reverse(bits);
  return std::bit_cast<T>(bits);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

EmctArray read_emct(const fs::path& path) {
  const std::string raw = read_file(path);
  const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
  const std::string where = path.string() + ": ";
  if (raw.size() < 7 || std::memcmp(raw.data(), kMagic, 4) != 0) {
    throw IoError(where + "bad magic, not an EMCT file");
  }
  if (p[4] != kVersion) {
    throw IoError(where + "unsupported EMCT version " + std::to_string(p[4]));
  }
  if (p[5] < 1 || p[5] > 3) {
    throw IoError(where + "unknown dtype code " + std::to_string(p[5]));
  }
  EmctArray a;
  a.dtype = static_cast<DType>(p[5]);
  const std::size_t ndim = p[6];
  const std::size_t header = 7 + 4 * ndim;
  if (raw.size() < header) {
    throw IoError(where + "truncated header: expected " + std::to_string(header) +
                  " bytes, got " + std::to_string(raw.size()));
  }
  for (std::size_t i = 0; i < ndim; ++i) a.shape.push_back(get_le<std::uint32_t>(p + 7 + 4 * i));
  const std::size_t count = shape_size(a.shape);
  const std::size_t width = dtype_width(a.dtype);
  const std::size_t expected = header + count * width;
  if (raw.size() != expected) {
    throw IoError(where + (raw.size() < expected ? "truncated payload" : "trailing bytes") +
                  ": expected " + std::to_string(expected) + " bytes, got " +
                  std::to_string(raw.size()));
  }
  a.values.resize(count);
  const unsigned char* body = p + header;
  for (std::size_t i = 0; i < count; ++i) {
    switch (a.dtype) {
      case DType::f32: a.values[i] = get_le<float>(body + 4 * i); break;
      case DType::f64: a.values[i] = get_le<double>(body + 8 * i); break;
      case DType::u16: a.values[i] = get_le<std::uint16_t>(body + 2 * i); break;
    }
  }
  return a;
}

void write_emct(const fs::path& path, const EmctArray& a) {
  if (a.shape.size() > 255) throw IoError("EMCT supports at most 255 dimensions");
  if (shape_size(a.shape) != a.values.size()) {
    throw ShapeError("EMCT array shape " + shape_str(a.shape) + " does not match " +
                     std::to_string(a.values.size()) + " values");
  }
  std::string out(kMagic, 4);
  out.push_back(static_cast<char>(kVersion));
  out.push_back(static_cast<char>(a.dtype));
  out.push_back(static_cast<char>(a.shape.size()));
  for (std::size_t d : a.shape) {
    if (d > UINT32_MAX) throw IoError("EMCT dimension exceeds u32");
    put_le(out, static_cast<std::uint32_t>(d));
  }
  out.reserve(out.size() + a.values.size() * dtype_width(a.dtype));
  for (double v : a.values) {
    switch (a.dtype) {
      case DType::f32: put_le(out, static_cast<float>(v)); break;
      case DType::f64: put_le(out, v); break;
      case DType::u16:
        if (v < 0 || v > 65535 || v != std::floor(v)) {
          throw IoError("value " + std::to_string(v) + " not representable as u16");
        }
        put_le(out, static_cast<std::uint16_t>(v));
        break;
    }
  }
  write_file(path, out);
}

Dataset load_tensor_file(const fs::path& manifest) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(manifest));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(manifest.string() + ": " + e.what());
  }
  const fs::path dir = manifest.parent_path();
  for (const char* key : {"inputs", "labels", "num_classes"}) {
    if (!j.contains(key)) throw IoError(manifest.string() + ": missing key '" + key + "'");
  }
  const EmctArray x = read_emct(dir / j["inputs"].get<std::string>());
  const EmctArray y = read_emct(dir / j["labels"].get<std::string>());
  if (x.dtype == DType::u16) throw IoError("dtype mismatch: inputs must be f32 or f64");
  if (y.dtype != DType::u16) throw IoError("dtype mismatch: labels must be u16");
  if (y.shape.size() != 1) throw IoError("labels file must be one-dimensional");
  Dataset ds;
  ds.inputs = Tensor(x.shape, x.values);
  ds.labels.assign(y.values.begin(), y.values.end());
  ds.num_classes = j["num_classes"].get<std::size_t>();
  ds.name = j.value("name", manifest.stem().string());
  ds.validate();
  check_no_conflicting_duplicates(ds);
  return ds;
}

void save_tensor_files(const Dataset& ds, const fs::path& manifest, DType input_dtype) {
  if (input_dtype == DType::u16) throw IoError("inputs cannot be stored as u16");
  const std::string stem = manifest.stem().string();
  const fs::path dir = manifest.parent_path();
  const std::string xname = stem + ".inputs.emct";
  const std::string yname = stem + ".labels.emct";
  write_emct(dir / xname, EmctArray{input_dtype, ds.inputs.shape(), ds.inputs.vec()});
  write_emct(dir / yname, EmctArray{DType::u16, Shape{ds.size()},
                                    std::vector<double>(ds.labels.begin(), ds.labels.end())});
  nlohmann::json j = {{"inputs", xname},
                      {"labels", yname},
                      {"num_classes", ds.num_classes},
                      {"name", ds.name}};
  write_file(manifest, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text,
                                                const std::string& where) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t line = 1;
  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_row = [&] {
    end_field();
    if (!(row.size() == 1 && row[0].empty())) rows.push_back(std::move(row));
    row.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started) {
          throw IoError(where + ":" + std::to_string(line) + ": stray quote inside field");
        }
        quoted = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        if (i + 1 < text.size() && text[i + 1] == '\n') break;
        end_row();
        ++line;
        break;
      case '\n':
        end_row();
        ++line;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (quoted) throw IoError(where + ": unterminated quoted field");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

double parse_number(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw IoError(where + ": '" + s + "' is not a number");
  }
  while (used < s.size() && (s[used] == ' ' || s[used] == '\t')) ++used;
  if (used != s.size()) throw IoError(where + ": '" + s + "' is not a number");
  return v;
}

}  // namespace

Dataset load_csv(const fs::path& path, const std::string& label_column,
                 std::size_t num_classes) {
  const std::string where = path.string();
  const auto rows = parse_csv(read_file(path), where);
  if (rows.empty()) throw IoError(where + ": missing header row");
  const auto& header = rows[0];
  const auto label_it = std::ranges::find(header, label_column);
  if (label_it == header.end()) {
    throw IoError(where + ": no column named '" + label_column + "'");
  }
  const std::size_t label_idx = static_cast<std::size_t>(label_it - header.begin());
  const std::size_t cols = header.size();
  const std::size_t features = cols - 1;
  const std::size_t n = rows.size() - 1;
  if (n == 0) throw IoError(where + ": no data rows");

  Dataset ds;
  ds.inputs = Tensor({n, features});
  ds.labels.resize(n);
  ds.num_classes = num_classes;
  ds.name = path.stem().string();
  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = rows[r + 1];
    const std::string loc = where + ":" + std::to_string(r + 2);
    if (row.size() != cols) {
      throw IoError(loc + ": expected " + std::to_string(cols) + " fields, got " +
                  std::to_string(row.size()));
    }
    std::size_t f = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = parse_number(row[c], loc);
      if (c == label_idx) {
        if (v != std::floor(v)) throw IoError(loc + ": label '" + row[c] + "' is not integral");
        if (v < 0 || v >= static_cast<double>(num_classes)) {
          throw IoError(loc + ": label " + row[c] + " outside [0, " +
                      std::to_string(num_classes) + ")");
        }
        ds.labels[r] = static_cast<int>(v);
      } else {
        ds.inputs[r * features + f++] = v;
      }
    }
  }
  ds.validate();
  check_no_conflicting_duplicates(ds);

  for (std::size_t f = 0; f < features; ++f) {
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += ds.inputs[r * features + f];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double d = ds.inputs[r * features + f] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double sd = std::sqrt(var);
    for (std::size_t r = 0; r < n; ++r) {
      double& v = ds.inputs[r * features + f];
      v = sd > 0.0 ? (v - mean) / sd : 0.0;
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic data

Dataset synth_clusters(std::size_t classes, std::size_t features, std::size_t samples,
                       double separation, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("synth_clusters: need at least 2 classes");
  if (samples < classes) throw ConfigError("synth_clusters: need at least one sample per class");
  if (features < 1) throw ConfigError("synth_clusters: need at least one feature");
  Rng rng(derive_seed({seed, 0x5c1u}));
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> centers(classes * features);
  for (std::size_t c = 0; c < classes; ++c) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (std::size_t f = 0; f < features; ++f) {
        const double v = normal(rng);
        centers[c * features + f] = v;
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (std::size_t f = 0; f < features; ++f) centers[c * features + f] *= separation / norm;
  }

  Dataset ds;
  ds.num_classes = classes;
  ds.name = "clusters";
  ds.labels.resize(samples);
  for (std::size_t i = 0; i < samples; ++i) ds.labels[i] = static_cast<int>(i % classes);
  std::shuffle(ds.labels.begin(), ds.labels.end(), rng);
  ds.inputs = Tensor({samples, features});
  for (std::size_t i = 0; i < samples; ++i) {
    const double* mu = centers.data() + static_cast<std::size_t>(ds.labels[i]) * features;
    for (std::size_t f = 0; f < features; ++f) ds.inputs[i * features + f] = mu[f] + normal(rng);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Interventions

std::string to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::none: return "none";
    case TransformKind::random_labels: return "random_labels";
    case TransformKind::gaussian_inputs: return "gaussian_inputs";
    case TransformKind::fixed_permutation: return "fixed_permutation";
    case TransformKind::merge_classes: return "merge_classes";
    case TransformKind::binarize: return "binarize";
    case TransformKind::resize: return "resize";
  }
  return "?";
}

TransformKind transform_kind_from_string(const std::string& s) {
  for (auto k : {TransformKind::none, TransformKind::random_labels,
                 TransformKind::gaussian_inputs, TransformKind::fixed_permutation,
                 TransformKind::merge_classes, TransformKind::binarize,
                 TransformKind::resize}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown transform kind '" + s + "'");
}

namespace {

Dataset merge_classes(const Dataset& ds, std::size_t groups, std::uint64_t seed) {
  if (groups < 2) throw ConfigError("merge_classes: need at least 2 groups");
  if (groups > ds.num_classes) {
    throw ConfigError("merge_classes: cannot merge " + std::to_string(ds.num_classes) +
                " classes into " + std::to_string(groups) + " groups");
  }
  Rng rng(derive_seed({seed, 0x3e7u}));
  std::vector<std::size_t> order(ds.num_classes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> group_of(ds.num_classes);
  for (std::size_t i = 0; i < order.size(); ++i) {
    group_of[order[i]] = static_cast<int>(i % groups);
  }
  Dataset out = ds;
  for (int& y : out.labels) y = group_of[static_cast<std::size_t>(y)];
  out.num_classes = groups;
  return out;
}

// Bilinear with half-pixel centres; interpolation written as a + (b - a) * t
// so constant images are reproduced exactly.
Dataset resize_bilinear(const Dataset& ds, std::size_t out_h, std::size_t out_w) {
  if (!ds.is_spatial()) throw ShapeError("resize: dataset inputs are not (N,C,H,W)");
  if (out_h < 1 || out_w < 1) throw ConfigError("resize: target size must be at least 1x1");
  const std::size_t N = ds.inputs.dim(0), C = ds.inputs.dim(1);
  const std::size_t H = ds.inputs.dim(2), W = ds.inputs.dim(3);
  struct Tap {
    std::size_t lo, hi;
    double t;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> v(out);
    const double s = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * s - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min(lo + 1, in - 1);
      v[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return v;
  };
  const auto ty = taps(H, out_h);
  const auto tx = taps(W, out_w);
  Dataset out = ds;
  out.inputs = Tensor({N, C, out_h, out_w});
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* src = ds.inputs.data().data() + nc * H * W;
    double* dst = out.inputs.data().data() + nc * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double* r0 = src + ty[y].lo * W;
      const double* r1 = src + ty[y].hi * W;
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto [lo, hi, t] = tx[x];
        const double top = r0[lo] + (r0[hi] - r0[lo]) * t;
        const double bot = r1[lo] + (r1[hi] - r1[lo]) * t;
        dst[y * out_w + x] = top + (bot - top) * ty[y].t;
      }
    }
  }
  return out;
}

}  // namespace

Dataset apply(const TransformSpec& transform, const Dataset& ds) {
  switch (transform.kind) {
    case TransformKind::none:
      return ds;
    case TransformKind::random_labels: {
      Rng rng(derive_seed({transform.seed, 0x1abe1u}));
      std::uniform_int_distribution<int> pick(0, static_cast<int>(ds.num_classes) - 1);
      Dataset out = ds;
      for (int& y : out.labels) y = pick(rng);
      return out;
    }
    case TransformKind::gaussian_inputs: {
      Rng rng(derive_seed({transform.seed, 0x9a055u}));
      std::normal_distribution<double> normal(0.0, 1.0);
      Dataset out = ds;
      for (double& v : out.inputs.data()) v = normal(rng);
      return out;
    }
    case TransformKind::fixed_permutation: {
      if (!ds.is_spatial()) {
        throw ShapeError("fixed_permutation: dataset inputs are not (N,C,H,W)");
      }
      const std::size_t stride = ds.sample_size();
      std::vector<std::size_t> perm(stride);
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(derive_seed({transform.seed, 0x9e4bu}));
      std::shuffle(perm.begin(), perm.end(), rng);
      Dataset out = ds;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        const double* src = ds.inputs.data().data() + i * stride;
        double* dst = out.inputs.data().data() + i * stride;
        for (std::size_t p = 0; p < stride; ++p) dst[p] = src[perm[p]];
      }
      return out;
    }
    case TransformKind::merge_classes:
      return merge_classes(ds, transform.groups, transform.seed);
    case TransformKind::binarize:
      return merge_classes(ds, 2, transform.seed);
    case TransformKind::resize:
      return resize_bilinear(ds, transform.height, transform.width);
  }
  throw Error("unknown transform");
}

std::vector<std::size_t> sample_rows(std::size_t population, const SubsetSampler& sampler) {
  if (sampler.n > population) {
    throw Error("cannot sample " + std::to_string(sampler.n) + " rows from " +
                std::to_string(population));
  }
  std::vector<std::size_t> idx(population);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed({sampler.seed, 0x5a3bu}));
  // Partial Fisher-Yates: the first n slots are a uniform ordered draw.
  for (std::size_t i = 0; i < sampler.n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, population - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(sampler.n);
  return idx;
}

Dataset subsample(const Dataset& ds, const SubsetSampler& sampler) {
  const auto rows = sample_rows(ds.size(), sampler);
  return ds.subset(rows);
}

}  // namespace emc::data

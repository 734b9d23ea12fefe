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

// Helpers shared by the unit tests: seeded generators for property tests and
// finite-difference oracles that only ever call the loss.

#ifndef EMC_TESTS_SUPPORT_HPP_
#define EMC_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "emc/tensor.hpp"

namespace emc::testing {

class Gen {
 public:
  explicit Gen(std::uint64_t seed) : rng_(seed) {}

  std::size_t size(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_);
  }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>()(rng_); }

  std::vector<double> normals(std::size_t n, double sd = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = sd * normal();
    return v;
  }

  // Values bounded away from zero so kinked activations stay differentiable
  // under finite-difference steps.
  std::vector<double> away_from_zero(std::size_t n, double gap = 0.1) {
    std::vector<double> v(n);
    for (double& x : v) {
      x = uniform(gap, 2.0);
      if (uniform(0.0, 1.0) < 0.5) x = -x;
    }
    return v;
  }

  Tensor tensor(Shape shape) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), normals(n));
  }

  std::vector<int> labels(std::size_t n, std::size_t k) {
    std::vector<int> v(n);
    for (int& x : v) x = static_cast<int>(size(0, k - 1));
    return v;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Runs `body` on `cases` generators derived from `seed`.
inline void for_all(std::size_t cases, std::uint64_t seed, const std::function<void(Gen&)>& body) {
  for (std::size_t i = 0; i < cases; ++i) {
    Gen g(seed * 1000003 + i);
    body(g);
  }
}

using ScalarFn = std::function<double(std::span<const double>)>;

inline std::vector<double> fd_gradient(const ScalarFn& f, std::span<const double> x, double h) {
  std::vector<double> p(x.begin(), x.end()), g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = p[i];
    p[i] = xi + h;
    const double fp = f(p);
    p[i] = xi - h;
    const double fm = f(p);
    p[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// Row-major dense Hessian from second differences of the loss itself.
inline std::vector<double> fd_hessian(const ScalarFn& f, std::span<const double> x, double h) {
  const std::size_t n = x.size();
  std::vector<double> p(x.begin(), x.end()), H(n * n);
  auto at = [&](std::size_t i, double di, std::size_t j, double dj) {
    p[i] += di;
    p[j] += dj;
    const double v = f(p);
    p[i] -= di;
    p[j] -= dj;
    return v;
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = (at(i, h, j, h) - at(i, h, j, -h) - at(i, -h, j, h) + at(i, -h, j, -h)) /
                       (4.0 * h * h);
      H[i * n + j] = v;
      H[j * n + i] = v;
    }
  }
  return H;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// max |a - b| / max(|b|_inf, floor)
inline double rel_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
  double scale = floor;
  for (double v : b) scale = std::max(scale, std::abs(v));
  return max_abs_diff(a, b) / scale;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("emc_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace emc::testing

#endif  // EMC_TESTS_SUPPORT_HPP_

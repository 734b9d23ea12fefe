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

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "emc/error.hpp"
#include "emc/models.hpp"
#include "emc/optim.hpp"
#include "support.hpp"

namespace emc::data {
namespace {

namespace fs = std::filesystem;
using testing::Gen;

void write(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Dataset images(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
               std::uint64_t seed) {
  Gen g(seed);
  Dataset ds;
  ds.inputs = g.tensor({n, c, h, w});
  ds.labels = g.labels(n, k);
  ds.num_classes = k;
  ds.name = "images";
  return ds;
}

// --- CSV ---------------------------------------------------------------------------

TEST(CsvTest, LoadsSmallFile) {
  const auto dir = testing::temp_dir("csv_small");
  write(dir / "t.csv", "a,label,b\n1,0,2\n3,1,5\n4,0,9\n");
  const Dataset ds = load_csv(dir / "t.csv", "label", 2);
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.num_classes, 2u);
  EXPECT_EQ(ds.inputs.shape(), (Shape{3, 2}));
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 1, 0}));
}

TEST(CsvTest, StandardizesColumns) {
  const auto dir = testing::temp_dir("csv_std");
  std::string text = "x,y,c,label\n";
  Gen g(21);
  for (int i = 0; i < 50; ++i)
    text += std::to_string(g.uniform(-5, 20)) + "," + std::to_string(g.normal() * 100) + ",7," +
            std::to_string(i % 3) + "\n";
  write(dir / "t.csv", text);
  const Dataset ds = load_csv(dir / "t.csv", "label", 3);
  for (std::size_t f = 0; f < 3; ++f) {
    double mean = 0.0, var = 0.0;
    for (std::size_t r = 0; r < 50; ++r) mean += ds.inputs[r * 3 + f];
    mean /= 50;
    for (std::size_t r = 0; r < 50; ++r) var += std::pow(ds.inputs[r * 3 + f] - mean, 2);
    var /= 50;
    EXPECT_NEAR(mean, 0.0, 1e-10);
    if (f < 2) {
      EXPECT_NEAR(var, 1.0, 1e-10);
    } else {
      for (std::size_t r = 0; r < 50; ++r) EXPECT_EQ(ds.inputs[r * 3 + f], 0.0);
    }
  }
}

TEST(CsvTest, QuotedFieldsAndCrlf) {
  const auto dir = testing::temp_dir("csv_quoted");
  write(dir / "t.csv", "\"feat, one\",\"label\"\r\n\"1.5\",1\r\n2.5,0\r\n");
  const Dataset ds = load_csv(dir / "t.csv", "label", 2);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.labels, (std::vector<int>{1, 0}));
}

TEST(CsvTest, RejectsBadInput) {
  const auto dir = testing::temp_dir("csv_bad");
  write(dir / "range.csv", "x,label\n1,0\n2,2\n");
  EXPECT_THROW(load_csv(dir / "range.csv", "label", 2), IoError);
  write(dir / "frac.csv", "x,label\n1,0.5\n");
  EXPECT_THROW(load_csv(dir / "frac.csv", "label", 2), IoError);
  write(dir / "text.csv", "x,label\nabc,0\n");
  EXPECT_THROW(load_csv(dir / "text.csv", "label", 2), IoError);
  write(dir / "dup.csv", "x,label\n1,0\n1,1\n");
  EXPECT_THROW(load_csv(dir / "dup.csv", "label", 2), Error);
  write(dir / "ragged.csv", "x,y,label\n1,2,0\n3,1\n");
  EXPECT_THROW(load_csv(dir / "ragged.csv", "label", 2), IoError);
  EXPECT_THROW(load_csv(dir / "range.csv", "target", 2), IoError);
  EXPECT_THROW(load_csv(dir / "missing.csv", "label", 2), IoError);
}

// --- EMCT --------------------------------------------------------------------------

TEST(EmctTest, RoundTripIsBitIdentical) {
  const auto dir = testing::temp_dir("emct_rt");
  Dataset ds = images(5, 2, 3, 3, 4, 22);
  ds.name = "rt";
  save_tensor_files(ds, dir / "rt.json");
  const Dataset back = load_tensor_file(dir / "rt.json");
  EXPECT_EQ(back.inputs, ds.inputs);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.num_classes, 4u);
  save_tensor_files(back, dir / "rt2.json");
  EXPECT_EQ(slurp(dir / "rt.inputs.emct"), slurp(dir / "rt2.inputs.emct"));
}

TEST(EmctTest, HeaderLayout) {
  const auto dir = testing::temp_dir("emct_header");
  EmctArray a;
  a.dtype = DType::f32;
  a.shape = {2, 1, 2, 2};
  a.values = {1, 2, 3, 4, 5, 6, 7, 8};
  write_emct(dir / "x.emct", a);
  const std::string bytes = slurp(dir / "x.emct");
  ASSERT_EQ(bytes.size(), 7u + 4 * 4 + 8 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "EMCT");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5], 1);
  EXPECT_EQ(bytes[6], 4);
  EXPECT_EQ(static_cast<unsigned char>(bytes[7]), 2);
  EXPECT_EQ(bytes[8], 0);
  const EmctArray back = read_emct(dir / "x.emct");
  EXPECT_EQ(back.shape, a.shape);
  EXPECT_EQ(back.values.size(), 8u);
  EXPECT_EQ(back.values, a.values);
}

TEST(EmctTest, TruncatedFileNamesByteCounts) {
  const auto dir = testing::temp_dir("emct_trunc");
  EmctArray a;
  a.dtype = DType::f64;
  a.shape = {3};
  a.values = {1, 2, 3};
  write_emct(dir / "x.emct", a);
  std::string bytes = slurp(dir / "x.emct");
  write(dir / "x.emct", bytes.substr(0, bytes.size() - 5));
  try {
    read_emct(dir / "x.emct");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected 35 bytes"), std::string::npos) << msg;
    EXPECT_NE(msg.find("got 30"), std::string::npos) << msg;
  }
}

TEST(EmctTest, RejectsCorruptHeadersAndDtypes) {
  const auto dir = testing::temp_dir("emct_bad");
  write(dir / "magic.emct", std::string("EMCX\x01\x02\x01\x01\x00\x00\x00", 11));
  EXPECT_THROW(read_emct(dir / "magic.emct"), IoError);
  write(dir / "version.emct", std::string("EMCT\x02\x02\x01\x01\x00\x00\x00", 11));
  EXPECT_THROW(read_emct(dir / "version.emct"), IoError);
  write(dir / "dtype.emct", std::string("EMCT\x01\x09\x01\x01\x00\x00\x00", 11));
  EXPECT_THROW(read_emct(dir / "dtype.emct"), IoError);

  // Labels stored as floats are a dtype mismatch.
  Dataset ds = images(2, 1, 2, 2, 2, 23);
  save_tensor_files(ds, dir / "m.json");
  EmctArray labels;
  labels.dtype = DType::f64;
  labels.shape = {2};
  labels.values = {0, 1};
  write_emct(dir / "m.labels.emct", labels);
  EXPECT_THROW(load_tensor_file(dir / "m.json"), IoError);
}

// --- Synthetic clusters ---------------------------------------------------------------

TEST(SynthTest, SeededAndBalanced) {
  const Dataset a = synth_clusters(3, 5, 100, 2.0, 7), b = synth_clusters(3, 5, 100, 2.0, 7);
  EXPECT_EQ(a.inputs, b.inputs);
  EXPECT_EQ(a.labels, b.labels);
  std::vector<int> counts(3, 0);
  for (int y : a.labels) ++counts[y];
  for (int c : counts) EXPECT_NEAR(c, 100.0 / 3.0, 1.0);
  EXPECT_NE(synth_clusters(3, 5, 100, 2.0, 8).inputs, a.inputs);
}

TEST(SynthTest, ZeroSeparationCarriesNoLabelSignal) {
  const Dataset ds = synth_clusters(2, 4, 4000, 0.0, 9);
  // Class-conditional means agree to within sampling noise.
  for (std::size_t f = 0; f < 4; ++f) {
    double m[2] = {0, 0};
    int n[2] = {0, 0};
    for (std::size_t r = 0; r < ds.size(); ++r) {
      m[ds.labels[r]] += ds.inputs[r * 4 + f];
      ++n[ds.labels[r]];
    }
    EXPECT_NEAR(m[0] / n[0] - m[1] / n[1], 0.0, 5.0 * std::sqrt(2.0 / 2000.0));
  }
}

TEST(SynthTest, LargeSeparationIsLinearlySeparable) {
  const Dataset ds = synth_clusters(2, 10, 100, 100.0, 10);
  models::ModelSpec s;
  s.family = models::Family::linear;
  s.input_shape = {10};
  s.num_classes = 2;
  models::Model m(s);
  optim::OptimizerSpec opt;
  opt.kind = optim::OptimizerKind::gd;
  opt.lr = 0.01;
  opt.max_epochs = 100;
  optim::train(m, ds, opt, {});
  EXPECT_EQ(accuracy(m, m.params().values(), ds), 1.0);
}

// --- Interventions --------------------------------------------------------------------

TEST(TransformTest, RandomLabelsKeepInputs) {
  const Dataset ds = synth_clusters(4, 3, 2000, 1.0, 11);
  const Dataset out = apply({TransformKind::random_labels, 0, 0, 0, 5}, ds);
  EXPECT_EQ(out.inputs, ds.inputs);
  EXPECT_EQ(out.size(), ds.size());
  EXPECT_EQ(out.num_classes, 4u);
  EXPECT_NE(out.labels, ds.labels);
  std::vector<double> counts(4, 0.0);
  for (int y : out.labels) ++counts[y];
  const double sigma = std::sqrt(2000.0 * 0.25 * 0.75);
  for (double c : counts) EXPECT_LE(std::abs(c - 500.0), 5.0 * sigma);
  EXPECT_EQ(apply({TransformKind::random_labels, 0, 0, 0, 5}, ds).labels, out.labels);
}

TEST(TransformTest, GaussianInputsKeepLabels) {
  const Dataset ds = synth_clusters(3, 20, 1000, 5.0, 12);
  const Dataset out = apply({TransformKind::gaussian_inputs, 0, 0, 0, 3}, ds);
  EXPECT_EQ(out.labels, ds.labels);
  EXPECT_EQ(out.inputs.shape(), ds.inputs.shape());
  double mean = 0.0, var = 0.0;
  const double n = static_cast<double>(out.inputs.size());
  for (double v : out.inputs.vec()) mean += v;
  mean /= n;
  for (double v : out.inputs.vec()) var += (v - mean) * (v - mean);
  var /= n;
  EXPECT_LE(std::abs(mean), 4.0 / std::sqrt(n));
  EXPECT_GE(var, 0.9);
  EXPECT_LE(var, 1.1);
}

TEST(TransformTest, FixedPermutationIsSharedAcrossSamples) {
  Dataset ds = images(3, 1, 2, 3, 2, 13);
  // Sample 1 is sample 0 shifted by 10, so the permuted copies stay shifted.
  for (std::size_t p = 0; p < 6; ++p) ds.inputs[6 + p] = ds.inputs[p] + 10.0;
  const Dataset a = apply({TransformKind::fixed_permutation, 0, 0, 0, 4}, ds);
  const Dataset b = apply({TransformKind::fixed_permutation, 0, 0, 0, 4}, ds);
  EXPECT_EQ(a.inputs, b.inputs);
  for (std::size_t p = 0; p < 6; ++p) EXPECT_DOUBLE_EQ(a.inputs[6 + p], a.inputs[p] + 10.0);
  std::multiset<double> before(ds.inputs.vec().begin(), ds.inputs.vec().begin() + 6);
  std::multiset<double> after(a.inputs.vec().begin(), a.inputs.vec().begin() + 6);
  EXPECT_EQ(before, after);
  EXPECT_THROW(apply({TransformKind::fixed_permutation, 0, 0, 0, 4}, synth_clusters(2, 3, 4, 1, 1)),
               ShapeError);
}

TEST(TransformTest, MergeClassesIsAPartition) {
  Dataset ds;
  ds.inputs = Tensor({100, 1});
  for (int i = 0; i < 100; ++i) {
    ds.inputs[i] = i;
    ds.labels.push_back(i);
  }
  ds.num_classes = 100;
  const Dataset out = apply({TransformKind::merge_classes, 10, 0, 0, 6}, ds);
  EXPECT_EQ(out.num_classes, 10u);
  std::vector<int> group_size(10, 0);
  for (int y : out.labels) {
    ASSERT_GE(y, 0);
    ASSERT_LT(y, 10);
    ++group_size[y];
  }
  for (int s : group_size) EXPECT_EQ(s, 10);
  const Dataset bin = apply({TransformKind::binarize, 0, 0, 0, 6}, ds);
  EXPECT_EQ(bin.num_classes, 2u);
  EXPECT_THROW(apply({TransformKind::merge_classes, 101, 0, 0, 6}, ds), ConfigError);
}

TEST(TransformTest, ResizeRoundTripsConstantImages) {
  Dataset ds = images(2, 2, 5, 7, 2, 14);
  for (std::size_t nc = 0; nc < 4; ++nc)
    for (std::size_t p = 0; p < 35; ++p) ds.inputs[nc * 35 + p] = 0.25 * static_cast<double>(nc) - 1.3;
  const Dataset small = apply({TransformKind::resize, 0, 3, 2, 0}, ds);
  EXPECT_EQ(small.inputs.shape(), (Shape{2, 2, 3, 2}));
  const Dataset back = apply({TransformKind::resize, 0, 5, 7, 0}, small);
  EXPECT_EQ(back.inputs, ds.inputs);
  EXPECT_THROW(apply({TransformKind::resize, 0, 0, 2, 0}, ds), ConfigError);
  EXPECT_THROW(apply({TransformKind::resize, 0, 2, 2, 0}, synth_clusters(2, 3, 4, 1, 1)), ShapeError);
}

TEST(TransformTest, ResizeInterpolatesLinearly) {
  // A horizontal ramp 0..3 upsampled to 8 columns with half-pixel centres.
  Dataset ds;
  ds.inputs = Tensor({1, 1, 1, 4}, std::vector<double>{0, 1, 2, 3});
  ds.labels = {0};
  ds.num_classes = 2;
  const Dataset out = apply({TransformKind::resize, 0, 1, 8, 0}, ds);
  const std::vector<double> expected{0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3};
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out.inputs[i], expected[i], 1e-15);
}

TEST(TransformTest, StringNamesRoundTrip) {
  for (auto k : {TransformKind::none, TransformKind::random_labels, TransformKind::gaussian_inputs,
                 TransformKind::fixed_permutation, TransformKind::merge_classes,
                 TransformKind::binarize, TransformKind::resize})
    EXPECT_EQ(transform_kind_from_string(to_string(k)), k);
  EXPECT_THROW(transform_kind_from_string("mixup"), ConfigError);
}

// --- Subsampling ----------------------------------------------------------------------

TEST(SubsampleTest, FullDrawIsAPermutation) {
  const auto rows = sample_rows(50, {50, 3});
  std::set<std::size_t> s(rows.begin(), rows.end());
  EXPECT_EQ(s.size(), 50u);
  EXPECT_EQ(*s.rbegin(), 49u);
}

TEST(SubsampleTest, SingleRowComesFromTheDataset) {
  const Dataset ds = synth_clusters(2, 3, 10, 1.0, 15);
  const Dataset one = subsample(ds, {1, 4});
  ASSERT_EQ(one.size(), 1u);
  bool found = false;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    bool same = ds.labels[r] == one.labels[0];
    for (std::size_t f = 0; f < 3; ++f) same = same && ds.inputs[r * 3 + f] == one.inputs[f];
    found = found || same;
  }
  EXPECT_TRUE(found);
}

TEST(SubsampleTest, IndependentSeedsOverlapLikeHypergeometric) {
  const std::size_t N = 200;
  double total = 0.0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    const auto a = sample_rows(N, {N / 2, 2 * t}), b = sample_rows(N, {N / 2, 2 * t + 1});
    std::set<std::size_t> sa(a.begin(), a.end());
    std::size_t both = 0;
    for (std::size_t r : b) both += sa.count(r);
    total += static_cast<double>(both) / (N / 2);
  }
  EXPECT_NEAR(total / 20.0, 0.5, 0.15);
}

TEST(SubsampleTest, RejectsOversizedDraws) {
  EXPECT_THROW(sample_rows(5, {6, 0}), Error);
}

TEST(DatasetTest, ConflictingDuplicatesAreRejected) {
  Dataset ds;
  ds.inputs = Tensor({3, 2}, std::vector<double>{1, 2, 3, 4, 1, 2});
  ds.labels = {0, 1, 0};
  ds.num_classes = 2;
  EXPECT_NO_THROW(check_no_conflicting_duplicates(ds));
  ds.labels[2] = 1;
  EXPECT_THROW(check_no_conflicting_duplicates(ds), Error);
  ds.labels[1] = 2;
  EXPECT_THROW(ds.validate(), Error);
}

}  // namespace
}  // namespace emc::data

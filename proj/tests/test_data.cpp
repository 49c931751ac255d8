// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "fedpia/data.hpp"
#include "fedpia/errors.hpp"

namespace fedpia::data {
namespace {

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("fedpia_test_data_" + name);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

SyntheticSpec spec_of(std::uint64_t seed, std::size_t n, std::size_t c, TaskKind kind = TaskKind::kSingleLabel) {
  SyntheticSpec s;
  s.seed = seed;
  s.geometry_seed = seed;
  s.n_samples = n;
  s.dim = 8;
  s.num_classes = c;
  s.kind = kind;
  return s;
}

std::vector<double> class_shares(const Dataset& ds, std::size_t c) {
  std::vector<double> share(c, 0.0);
  for (int y : ds.labels.index) share[static_cast<std::size_t>(y)] += 1.0 / static_cast<double>(ds.size());
  return share;
}

TEST(Synthetic, Deterministic) {
  const SyntheticSpec s = spec_of(3, 200, 4);
  EXPECT_EQ(gen_synthetic(s), gen_synthetic(s));
  SyntheticSpec other = s;
  other.seed = 4;
  EXPECT_NE(gen_synthetic(s).features, gen_synthetic(other).features);
  const SyntheticSpec m = spec_of(3, 200, 4, TaskKind::kMultiLabel);
  EXPECT_EQ(gen_synthetic(m), gen_synthetic(m));
}

TEST(Synthetic, UniformClassPriors) {
  constexpr std::size_t kN = 20000, kC = 5;
  const Dataset ds = gen_synthetic(spec_of(5, kN, kC));
  const double p = 1.0 / kC;
  const double sigma = std::sqrt(p * (1 - p) / kN);
  for (double share : class_shares(ds, kC)) EXPECT_NEAR(share, p, 3 * sigma);
}

TEST(Synthetic, SeparableLimit) {
  SyntheticSpec s = spec_of(6, 400, 4);
  s.margin = 1e3;
  const Dataset ds = gen_synthetic(s);
  Matrix means(4, ds.dim());
  std::vector<double> counts(4, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto y = static_cast<std::size_t>(ds.labels.index[i]);
    counts[y] += 1.0;
    for (std::size_t j = 0; j < ds.dim(); ++j) means(y, j) += ds.features(i, j);
  }
  for (std::size_t c = 0; c < 4; ++c) {
    for (std::size_t j = 0; j < ds.dim(); ++j) means(c, j) /= counts[c];
  }
  const Matrix d = pairwise_euclidean(ds.features, means);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto row = d.row(i);
    const auto best = static_cast<int>(std::min_element(row.begin(), row.end()) - row.begin());
    correct += best == ds.labels.index[i];
  }
  EXPECT_EQ(correct, ds.size());
}

TEST(Synthetic, MultilabelShapes) {
  const Dataset ds = gen_synthetic(spec_of(7, 300, 4, TaskKind::kMultiLabel));
  EXPECT_EQ(ds.kind(), TaskKind::kMultiLabel);
  EXPECT_EQ(ds.labels.multi_hot.cols(), 4u);
  EXPECT_NO_THROW(ds.validate());
  const Dataset single = gen_synthetic(spec_of(7, 300, 4));
  EXPECT_EQ(single.features, ds.features);
  EXPECT_EQ(single.strata, ds.strata);
}

TEST(Partition, CoverAndDisjoint) {
  const Dataset ds = gen_synthetic(spec_of(8, 500, 4));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    PartitionSpec p;
    p.num_clients = 6;
    p.seed = seed;
    const auto parts = partition_indices(ds, p);
    ASSERT_EQ(parts.size(), 6u);
    std::vector<std::size_t> all;
    for (const auto& part : parts) {
      EXPECT_FALSE(part.empty());
      all.insert(all.end(), part.begin(), part.end());
    }
    std::sort(all.begin(), all.end());
    ASSERT_EQ(all.size(), ds.size());
    for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
    EXPECT_EQ(partition_indices(ds, p), parts);
  }
}

TEST(Partition, IidLimit) {
  const Dataset ds = gen_synthetic(spec_of(9, 20000, 4));
  PartitionSpec p;
  p.num_clients = 5;
  p.concentration = 1e6;
  const auto global = class_shares(ds, 4);
  for (const Dataset& client : dirichlet_partition(ds, p)) {
    const auto local = class_shares(client, 4);
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(local[c], global[c], 0.05);
  }
}

double mean_max_share(double concentration) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Dataset ds = gen_synthetic(spec_of(1000 + seed, 400, 2));
    PartitionSpec p;
    p.num_clients = 10;
    p.concentration = concentration;
    p.seed = seed;
    for (const Dataset& client : dirichlet_partition(ds, p)) {
      const auto share = class_shares(client, 2);
      total += std::max(share[0], share[1]);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

TEST(Partition, LowConcentrationSkews) {
  EXPECT_GT(mean_max_share(0.5), mean_max_share(1e6));
}

TEST(Partition, ClassMasksGiveDifferentLabelSets) {
  const Dataset ds = gen_synthetic(spec_of(10, 1200, 6));
  Rng rng(3);
  const std::vector<std::size_t> sizes = {2, 3, 4, 5, 6};
  PartitionSpec p;
  p.num_clients = 5;
  p.class_masks = random_class_masks(rng, 6, sizes);
  std::set<int> covered;
  for (const auto& m : p.class_masks) covered.insert(m.begin(), m.end());
  EXPECT_EQ(covered.size(), 6u);
  const auto clients = dirichlet_partition(ds, p);
  std::set<std::size_t> class_counts;
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(clients[k].num_classes, sizes[k]);
    EXPECT_NO_THROW(clients[k].validate());
    class_counts.insert(clients[k].num_classes);
  }
  EXPECT_EQ(class_counts.size(), 5u);
  // Samples land only on clients whose mask holds their class.
  const auto parts = partition_indices(ds, p);
  for (std::size_t k = 0; k < 5; ++k) {
    const std::set<int> mask(p.class_masks[k].begin(), p.class_masks[k].end());
    for (std::size_t i : parts[k]) EXPECT_TRUE(mask.count(ds.labels.index[i])) << "client " << k;
  }
}

TEST(Partition, MaskErrors) {
  Rng rng(4);
  const std::vector<std::size_t> too_big = {7};
  EXPECT_THROW(random_class_masks(rng, 6, too_big), ConfigError);
  const std::vector<std::size_t> uncovered = {1, 1};
  EXPECT_THROW(random_class_masks(rng, 6, uncovered), ConfigError);

  const Dataset ds = gen_synthetic(spec_of(11, 100, 3));
  PartitionSpec p;
  p.num_clients = 2;
  p.class_masks = {{0}, {1}};
  EXPECT_THROW(partition_indices(ds, p), DataError);
}

TEST(Partition, MoreClientsThanSamples) {
  const Dataset ds = gen_synthetic(spec_of(12, 4, 2));
  PartitionSpec p;
  p.num_clients = 5;
  EXPECT_THROW(partition_indices(ds, p), DataError);
  p.num_clients = 2;
  p.concentration = 0.0;
  EXPECT_THROW(partition_indices(ds, p), ConfigError);
}

TEST(Partition, FeatureShiftIsDeterministicAndChangesFeatures) {
  const Dataset ds = gen_synthetic(spec_of(13, 300, 3));
  PartitionSpec p;
  p.num_clients = 3;
  const auto plain = dirichlet_partition(ds, p);
  p.feature_shift = 1.0;
  const auto shifted = dirichlet_partition(ds, p);
  EXPECT_EQ(shifted, dirichlet_partition(ds, p));
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(shifted[k].labels, plain[k].labels);
    EXPECT_NE(shifted[k].features, plain[k].features);
  }
}

TEST(Split, SizesAndDisjointness) {
  const Dataset ds = gen_synthetic(spec_of(14, 50, 2));
  Rng rng(1);
  const auto [train, test] = train_test_split(ds, 0.2, rng);
  EXPECT_EQ(test.size(), 10u);
  EXPECT_EQ(train.size(), 40u);
  Rng r2(2);
  EXPECT_EQ(take_fraction(ds, 0.3, r2).size(), 15u);
  Rng r3(3);
  EXPECT_EQ(take_fraction(ds, 0.001, r3).size(), 1u);
  const Dataset two = gen_synthetic(spec_of(15, 2, 2));
  Rng r4(4);
  const auto [a, b] = train_test_split(two, 0.9, r4);
  EXPECT_EQ(a.size(), 1u);
  EXPECT_EQ(b.size(), 1u);
}

TEST(Tabular, RoundTrip) {
  for (TaskKind kind : {TaskKind::kSingleLabel, TaskKind::kMultiLabel}) {
    const Dataset ds = gen_synthetic(spec_of(16, 120, 3, kind));
    const fs::path path = temp_file("roundtrip.csv");
    save_tabular(path, ds);
    const Dataset back = load_tabular(path, default_schema(ds));
    EXPECT_LE(max_abs_diff(back.features, ds.features), 1e-12);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(back.num_classes, ds.num_classes);
    fs::remove(path);
  }
}

TEST(Tabular, BadRowNamesItsLine) {
  const fs::path path = temp_file("bad.csv");
  write_text(path, "a,b,label\n1,2,0\n3,4,1\n5,oops,1\n");
  TabularSchema schema;
  schema.label_columns = {"label"};
  try {
    load_tabular(path, schema);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos);
  }
  write_text(path, "a,b,label\n1,2,0\n3,4\n");
  try {
    load_tabular(path, schema);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  fs::remove(path);
}

TEST(Tabular, HeaderOnlyIsDataError) {
  const fs::path path = temp_file("empty.csv");
  write_text(path, "a,b,label\n");
  TabularSchema schema;
  schema.label_columns = {"label"};
  EXPECT_THROW(load_tabular(path, schema), DataError);
  fs::remove(path);
}

TEST(Tabular, LabelOutOfRange) {
  const fs::path path = temp_file("range.csv");
  write_text(path, "a,label\n1,0\n2,5\n");
  TabularSchema schema;
  schema.label_columns = {"label"};
  schema.num_classes = 3;
  try {
    load_tabular(path, schema);
    FAIL() << "expected a data error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  schema.num_classes = 0;
  EXPECT_EQ(load_tabular(path, schema).num_classes, 6u);
  fs::remove(path);
}

}  // namespace
}  // namespace fedpia::data

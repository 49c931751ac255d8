// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedpia/labels.hpp"
#include "fedpia/matrix.hpp"
#include "fedpia/rng.hpp"

namespace fedpia::data {

struct Dataset {
  Matrix features;  // N x d
  Labels labels;
  std::size_t num_classes = 0;
  // Stratum per sample for partitioning: the class index for single-label
  // data, the generating cluster (or first positive label) for multilabel.
  std::vector<int> strata;

  TaskKind kind() const { return labels.kind; }
  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }

  Dataset subset(std::span<const std::size_t> rows) const;
  // Throws DataError unless N >= 1, labels are in range and sizes agree.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

struct SyntheticSpec {
  std::uint64_t seed = 0;
  // Cluster means and label hyperplanes are drawn from this seed, so datasets
  // that share it describe the same feature geometry.
  std::uint64_t geometry_seed = 0;
  std::size_t n_samples = 1000;
  std::size_t dim = 16;
  std::size_t num_classes = 4;
  TaskKind kind = TaskKind::kSingleLabel;
  double margin = 3.0;  // distance scale between cluster means
};

// Gaussian class clusters with unit noise around means of norm `margin`.
// Single-label samples take their cluster as the label. Multilabel samples
// switch on every class whose hyperplane (normal along that class's mean)
// they cross, which always includes their own cluster in the separable limit
// and yields correlated label vectors.
Dataset gen_synthetic(const SyntheticSpec& spec);

struct PartitionSpec {
  std::size_t num_clients = 5;
  double concentration = 0.5;
  std::uint64_t seed = 0;
  // Optional: classes each client may hold. When present, labels are remapped
  // to positions in the mask so client k has C_k = mask size classes.
  std::vector<std::vector<int>> class_masks;
  // 0 disables. Otherwise each client's features are rotated by a random
  // orthogonal matrix near the identity and rescaled.
  double feature_shift = 0.0;
  std::size_t max_retries = 64;
};

// Per-client sample indices: a disjoint cover of [0, N) with no empty client.
std::vector<std::vector<std::size_t>> partition_indices(const Dataset& ds,
                                                        const PartitionSpec& spec);

// Client datasets built from partition_indices, with masks and feature shift
// applied.
std::vector<Dataset> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec);

// Random sorted class masks, sizes[k] classes for client k, that together
// cover every class. Throws ConfigError if the sizes cannot cover them.
std::vector<std::vector<int>> random_class_masks(Rng& rng, std::size_t num_classes,
                                                 std::span<const std::size_t> sizes);

// Deterministic split into (train, test) by a shuffled permutation.
std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction, Rng& rng);

// Keeps the first ceil(fraction * N) samples of a shuffled order (at least 1).
Dataset take_fraction(const Dataset& ds, double fraction, Rng& rng);

struct TabularSchema {
  std::vector<std::string> feature_columns;  // empty: every non-label column
  std::vector<std::string> label_columns;    // one for single-label, C for multi
  TaskKind kind = TaskKind::kSingleLabel;
  std::size_t num_classes = 0;               // single-label only; 0 infers max+1
};

// Comma-separated text, first line is the header.
Dataset load_tabular(const std::filesystem::path& path, const TabularSchema& schema);
// Writes columns f0..f{d-1} then `label` (single) or y0..y{C-1} (multi),
// with 17 significant digits so a reload reproduces every value.
void save_tabular(const std::filesystem::path& path, const Dataset& ds);
// Schema matching the layout written by save_tabular.
TabularSchema default_schema(const Dataset& ds);

}  // namespace fedpia::data

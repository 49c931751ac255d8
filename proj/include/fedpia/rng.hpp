// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "fedpia/matrix.hpp"

namespace fedpia {

// Counter-based generator: the n-th draw is a pure function of (key, n).
//
// split(label) derives an independent stream whose key depends only on the
// parent key and the label, never on how many values the parent has drawn.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  Rng split(std::string_view label) const;

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform integer on [0, n). n must be > 0.
  std::size_t uniform_index(std::size_t n);
  double normal();
  // Gamma(shape, 1), shape > 0 (Marsaglia-Tsang).
  double gamma(double shape);

  // Fisher-Yates shuffle of [0, n).
  std::vector<std::size_t> permutation(std::size_t n);

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// rows x cols matrix of N(0, stddev^2) draws. stddev == 0 yields zeros;
// negative stddev throws UsageError.
Matrix rng_normal(Rng& rng, std::size_t rows, std::size_t cols, double stddev);

// A draw from Dirichlet(concentration, ..., concentration) of dimension k.
Vector rng_dirichlet(Rng& rng, std::size_t k, double concentration);

}  // namespace fedpia

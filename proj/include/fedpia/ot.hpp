// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Discrete optimal transport between neuron measures.
//
// A layer's neurons form a discrete measure: a mass per neuron plus a support
// row per neuron (its incoming weights, or its activation statistics). Two
// such measures are coupled by a transport plan minimizing the total ground
// cost; for equal-size uniform measures the optimal plan is a scaled
// permutation, found here with a linear assignment solver.

#include <cstddef>
#include <optional>
#include <vector>

#include "fedpia/matrix.hpp"
#include "fedpia/model.hpp"

namespace fedpia::ot {

struct NeuronMeasure {
  Vector mass;     // on the probability simplex
  Matrix support;  // one row per neuron

  static NeuronMeasure uniform(Matrix support);
  // Throws DataError unless masses are >= 0, sum to 1 within 1e-12 and match
  // the support row count.
  void validate() const;
};

Vector uniform_mass(std::size_t n);

// Euclidean ground cost between the supports of two measures.
Matrix ground_cost(const NeuronMeasure& from, const NeuronMeasure& to);

struct TransportPlan {
  Matrix plan;          // n x m coupling
  Vector row_marginal;  // alpha
  Vector col_marginal;  // beta
  double cost = 0.0;    // sum_ij plan(i, j) * C(i, j)
};

double transport_cost(const Matrix& plan, const Matrix& cost);

// Optimal coupling. The equal-size uniform case is solved as a linear
// assignment problem (ties resolve toward the lowest column index); other
// marginals go through successive shortest augmenting paths on the
// transportation network. Throws NumericError on infeasible marginals or
// negative / non-finite costs.
TransportPlan solve_exact(const Matrix& cost, const Vector& alpha, const Vector& beta);

// Minimum-cost perfect matching on a square cost matrix: result[i] is the
// column assigned to row i.
std::vector<std::size_t> solve_assignment(const Matrix& cost);

struct SinkhornOptions {
  std::optional<double> epsilon;  // default 0.01 * mean(cost)
  int max_iters = 2000;
  double tol = 1e-9;              // L1 row-marginal violation
};

struct SinkhornResult {
  TransportPlan plan;
  bool converged = false;
  int iterations = 0;
  double epsilon = 0.0;
  double marginal_error = 0.0;  // violation before the final feasibility rounding
};

// Entropic OT in the log domain. The returned plan is projected onto the
// feasible set, so its marginals hold to rounding error even when the
// iteration stops early; `converged` reports whether tol was reached.
SinkhornResult solve_sinkhorn(const Matrix& cost, const Vector& alpha, const Vector& beta,
                              const SinkhornOptions& options = {});

// diag(1 / beta) * plan^T. For an equal-size uniform plan this is exactly the
// permutation matrix that maps the "from" neurons onto the "to" ordering.
Matrix plan_to_alignment(const TransportPlan& plan);

// plan * diag(1 / beta): the input-side correction for the next layer.
Matrix incoming_adjustment(const TransportPlan& plan);

enum class WeightSide { kDown, kUp };

// Support rows for the neurons written by one projection of an adapter layer.
// Each row holds the neuron's incoming weights after right-multiplying by
// `adjustment` (which realigns the layer's inputs), followed by its bias.
//   kDown: b rows, adjustment is h x h
//   kUp:   h rows, adjustment is b x b
Matrix weight_support(const AdapterLayer& layer, WeightSide side, const Matrix& adjustment);

enum class ActivationMode { kMean, kPerSample };

// Bottleneck neuron supports from recorded pre-nonlinearity activations.
//   kMean:      b x 1, mean activation over the probe batch
//   kPerSample: b x m, one coordinate per probe sample
Matrix activation_support(const ActivationCache& cache, std::size_t layer_index,
                          ActivationMode mode);

}  // namespace fedpia::ot

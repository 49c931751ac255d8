// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Permutation and integration of adapters.
//
// Server side: build a FedAvg anchor from the uploaded client stacks, align
// every client stack to the anchor with weight-based ground costs, then fuse
// the aligned stacks with exponential distance weights.
//
// Client side: align the received global stack to the client's own stack with
// activation-based (or weight-based) ground costs on a probe batch, then merge
// the two parameter-wise.
//
// Alignment only permutes bottleneck neurons. Adapters read from and write to
// the backbone's residual stream, whose coordinates are shared by every
// client, so the input side of w_down and the output side of w_up are never
// permuted.

#include <cstddef>
#include <span>
#include <vector>

#include "fedpia/matrix.hpp"
#include "fedpia/model.hpp"
#include "fedpia/ot.hpp"

namespace fedpia::pia {

enum class CostMode { kWeight, kActivation };

struct FusionConfig {
  double gamma = 1.0;  // fusion temperature
  CostMode client_cost_mode = CostMode::kActivation;
  ot::ActivationMode activation_mode = ot::ActivationMode::kMean;
  std::size_t m_probe = 16;
  double lambda_merge = 0.5;  // weight on the local stack in client merges
  bool normalize_weights = false;

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

// Parameter-wise average weighted by sizes[k] / sum(sizes).
AdapterStack fedavg(std::span<const AdapterStack> stacks, std::span<const std::size_t> sizes);

// Recorded activations of both stacks on the same probe batch.
struct ActivationProbe {
  const ActivationCache* movable = nullptr;
  const ActivationCache* anchor = nullptr;
};

struct AlignResult {
  AdapterStack aligned;
  std::vector<ot::TransportPlan> plans;  // one bottleneck plan per adapter layer
};

// Permutes the bottleneck neurons of `movable` layer by layer to match
// `anchor`. Activation mode requires `probe`; throws UsageError otherwise.
AlignResult align_stack(const AdapterStack& movable, const AdapterStack& anchor, CostMode mode,
                        ot::ActivationMode activation_mode = ot::ActivationMode::kMean,
                        const ActivationProbe* probe = nullptr);

// d_k = || flat(aligned[k]) - flat(anchor) ||_2 over every adapter parameter.
std::vector<double> anchor_distances(std::span<const AdapterStack> aligned,
                                     const AdapterStack& anchor);

// w_k = exp(-gamma * d_k); output = (1/K) sum_k w_k * aligned[k], or
// sum_k w_k * aligned[k] / sum_k w_k when `normalize` is set.
AdapterStack dynamic_integrate(std::span<const AdapterStack> aligned, const AdapterStack& anchor,
                               double gamma, bool normalize);

// FedAvg anchor, per-client weight-cost alignment, dynamic integration. With
// `align` off the client stacks are integrated as uploaded.
AdapterStack server_pia(std::span<const AdapterStack> client_stacks,
                        std::span<const std::size_t> sizes, const FusionConfig& config,
                        bool align = true);

// lambda * local + (1 - lambda) * other, parameter-wise. lambda == 1 and
// lambda == 0 return the respective input unchanged.
AdapterStack merge_stacks(const AdapterStack& local, const AdapterStack& other, double lambda);

// Aligns `global` to `local` (activation costs are measured on probe_batch
// through `backbone`) and merges with lambda_merge. With `align` off the
// global stack is merged as received. Throws DataError on an empty probe.
AdapterStack client_pia(const AdapterStack& global, const AdapterStack& local,
                        const Backbone& backbone, const Matrix& probe_batch,
                        const FusionConfig& config, bool align = true);

namespace testing {

// Deliberate defects for mutation checks of the oracle suite.
enum class AlignmentFault {
  kNone,
  kTransposedPlan,  // applies P instead of P^T when permuting rows
};

class ScopedAlignmentFault {
 public:
  explicit ScopedAlignmentFault(AlignmentFault fault);
  ~ScopedAlignmentFault();
  ScopedAlignmentFault(const ScopedAlignmentFault&) = delete;
  ScopedAlignmentFault& operator=(const ScopedAlignmentFault&) = delete;

 private:
  AlignmentFault previous_;
};

}  // namespace testing

}  // namespace fedpia::pia

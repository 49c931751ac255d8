// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedpia/pia.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "fedpia/errors.hpp"

namespace fedpia::pia {

namespace {

std::atomic<testing::AlignmentFault> g_fault{testing::AlignmentFault::kNone};

// Sum that does not depend on the order of its terms: sorting first makes a
// reduction over clients bit-identical under any client ordering.
double canonical_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

// out[p] = sum_k coeff[k] * stacks[k][p], reduced with canonical_sum.
AdapterStack weighted_combination(std::span<const AdapterStack> stacks,
                                  std::span<const double> coeff) {
  AdapterStack out = stacks.front();
  std::vector<std::vector<std::span<const double>>> views;
  views.reserve(stacks.size());
  for (const auto& s : stacks) views.push_back(parameter_views(s));
  auto dst = parameter_views(out);
  std::vector<double> terms(stacks.size());
  for (std::size_t t = 0; t < dst.size(); ++t) {
    for (std::size_t i = 0; i < dst[t].size(); ++i) {
      for (std::size_t k = 0; k < stacks.size(); ++k) terms[k] = coeff[k] * views[k][t][i];
      dst[t][i] = canonical_sum(terms);
    }
  }
  return out;
}

void require_consistent(std::span<const AdapterStack> stacks, const char* context) {
  if (stacks.empty()) throw UsageError(std::string(context) + ": no adapter stacks");
  for (const auto& s : stacks) require_same_shape(stacks.front(), s, context);
}

Matrix row_alignment(const ot::TransportPlan& plan) {
  Matrix a = ot::plan_to_alignment(plan);
  if (g_fault.load() == testing::AlignmentFault::kTransposedPlan) return a.transpose();
  return a;
}

Vector apply(const Matrix& m, const Vector& v) {
  const Matrix out = matmul(m, Matrix::column(v));
  return Vector(out.values().begin(), out.values().end());
}

}  // namespace

void FusionConfig::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be >= 0");
  if (m_probe < 1) throw ConfigError("m_probe must be >= 1");
  if (!(lambda_merge >= 0.0 && lambda_merge <= 1.0)) {
    throw ConfigError("lambda_merge must lie in [0, 1]");
  }
}

AdapterStack fedavg(std::span<const AdapterStack> stacks, std::span<const std::size_t> sizes) {
  require_consistent(stacks, "fedavg");
  if (sizes.size() != stacks.size()) throw ShapeError("fedavg: one size per stack required");
  double total = 0.0;
  for (std::size_t n : sizes) {
    if (n == 0) throw DataError("fedavg: client sizes must be >= 1");
    total += static_cast<double>(n);
  }
  std::vector<double> coeff(sizes.size());
  for (std::size_t k = 0; k < sizes.size(); ++k) coeff[k] = static_cast<double>(sizes[k]) / total;
  return weighted_combination(stacks, coeff);
}

AlignResult align_stack(const AdapterStack& movable, const AdapterStack& anchor, CostMode mode,
                        ot::ActivationMode activation_mode, const ActivationProbe* probe) {
  require_same_shape(movable, anchor, "align_stack");
  if (mode == CostMode::kActivation &&
      (probe == nullptr || probe->movable == nullptr || probe->anchor == nullptr)) {
    throw UsageError("align_stack: activation costs need probe caches for both stacks");
  }
  AlignResult result;
  result.aligned = movable;
  for (std::size_t l = 0; l < movable.layers.size(); ++l) {
    const AdapterLayer& src = movable.layers[l];
    const AdapterLayer& ref = anchor.layers[l];
    const std::size_t h = src.width();
    const std::size_t b = src.bottleneck();

    // The down-projection reads the unpermuted residual stream: its input
    // adjustment is the identity.
    Matrix from_support;
    Matrix to_support;
    if (mode == CostMode::kWeight) {
      const Matrix input_identity = Matrix::identity(h);
      from_support = ot::weight_support(src, ot::WeightSide::kDown, input_identity);
      to_support = ot::weight_support(ref, ot::WeightSide::kDown, input_identity);
    } else {
      from_support = ot::activation_support(*probe->movable, l, activation_mode);
      to_support = ot::activation_support(*probe->anchor, l, activation_mode);
    }
    const auto from = ot::NeuronMeasure::uniform(std::move(from_support));
    const auto to = ot::NeuronMeasure::uniform(std::move(to_support));
    ot::TransportPlan plan = ot::solve_exact(ot::ground_cost(from, to), from.mass, to.mass);

    // Neuron-row form: R = w_down^T (b x h). Aligned R = diag(1/beta) P^T R,
    // and the up-projection's incoming side (w_up^T, h x b) becomes
    // w_up^T P diag(1/beta); its output side stays on the residual stream.
    const Matrix align = row_alignment(plan);  // b x b
    AdapterLayer& dst = result.aligned.layers[l];
    dst.w_down = matmul(align, src.w_down.transpose()).transpose();
    dst.b_down = apply(align, src.b_down);
    dst.w_up = matmul(align, src.w_up);
    dst.b_up = src.b_up;
    if (dst.w_down.cols() != b) throw ShapeError("align_stack: alignment changed the bottleneck");
    result.plans.push_back(std::move(plan));
  }
  return result;
}

std::vector<double> anchor_distances(std::span<const AdapterStack> aligned,
                                     const AdapterStack& anchor) {
  const Vector ref = flatten(anchor);
  std::vector<double> d;
  d.reserve(aligned.size());
  for (const auto& s : aligned) {
    require_same_shape(s, anchor, "anchor_distances");
    const Vector flat = flatten(s);
    double acc = 0.0;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const double diff = flat[i] - ref[i];
      acc += diff * diff;
    }
    d.push_back(std::sqrt(acc));
  }
  return d;
}

AdapterStack dynamic_integrate(std::span<const AdapterStack> aligned, const AdapterStack& anchor,
                               double gamma, bool normalize) {
  require_consistent(aligned, "dynamic_integrate");
  require_same_shape(aligned.front(), anchor, "dynamic_integrate");
  const std::vector<double> d = anchor_distances(aligned, anchor);
  std::vector<double> w(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) w[k] = std::exp(-gamma * d[k]);

  double denom = static_cast<double>(aligned.size());
  if (normalize) {
    std::vector<double> terms = w;
    denom = canonical_sum(terms);
    if (!(denom > 0.0)) throw NumericError("dynamic_integrate: all fusion weights underflowed");
  }
  std::vector<double> coeff(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) coeff[k] = w[k] / denom;
  return weighted_combination(aligned, coeff);
}

AdapterStack server_pia(std::span<const AdapterStack> client_stacks,
                        std::span<const std::size_t> sizes, const FusionConfig& config,
                        bool align) {
  require_consistent(client_stacks, "server_pia");
  const AdapterStack anchor = fedavg(client_stacks, sizes);
  if (!align) return dynamic_integrate(client_stacks, anchor, config.gamma, config.normalize_weights);
  std::vector<AdapterStack> aligned;
  aligned.reserve(client_stacks.size());
  for (const auto& stack : client_stacks) {
    aligned.push_back(align_stack(stack, anchor, CostMode::kWeight).aligned);
  }
  return dynamic_integrate(aligned, anchor, config.gamma, config.normalize_weights);
}

AdapterStack merge_stacks(const AdapterStack& local, const AdapterStack& other, double lambda) {
  require_same_shape(local, other, "merge_stacks");
  if (lambda == 1.0) return local;
  if (lambda == 0.0) return other;
  AdapterStack out = local;
  auto dst = parameter_views(out);
  auto src = parameter_views(other);
  for (std::size_t t = 0; t < dst.size(); ++t) {
    for (std::size_t i = 0; i < dst[t].size(); ++i) {
      dst[t][i] = lambda * dst[t][i] + (1.0 - lambda) * src[t][i];
    }
  }
  return out;
}

AdapterStack client_pia(const AdapterStack& global, const AdapterStack& local,
                        const Backbone& backbone, const Matrix& probe_batch,
                        const FusionConfig& config, bool align) {
  if (probe_batch.rows() == 0) throw DataError("client_pia: empty probe batch");
  require_same_shape(global, local, "client_pia");
  if (!align) return merge_stacks(local, global, config.lambda_merge);
  AlignResult aligned;
  if (config.client_cost_mode == CostMode::kActivation) {
    const ActivationCache global_cache = forward_features(backbone, global, probe_batch);
    const ActivationCache local_cache = forward_features(backbone, local, probe_batch);
    const ActivationProbe probe{&global_cache, &local_cache};
    aligned = align_stack(global, local, CostMode::kActivation, config.activation_mode, &probe);
  } else {
    aligned = align_stack(global, local, CostMode::kWeight);
  }
  return merge_stacks(local, aligned.aligned, config.lambda_merge);
}

namespace testing {

ScopedAlignmentFault::ScopedAlignmentFault(AlignmentFault fault) : previous_(g_fault.exchange(fault)) {}

ScopedAlignmentFault::~ScopedAlignmentFault() { g_fault.store(previous_); }

}  // namespace testing

}  // namespace fedpia::pia

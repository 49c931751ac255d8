// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Frozen dense backbone with one residual bottleneck adapter after each
// backbone layer, followed by a per-client linear classifier head.
//
// Batches are row-major (samples x features). A dense layer with weight W
// (in x out) maps X to X * W + b. Adapter layer weights follow the same
// convention, so w_down is (h x b) and w_up is (b x h); neuron i of the
// bottleneck owns column i of w_down and row i of w_up.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "fedpia/labels.hpp"
#include "fedpia/matrix.hpp"
#include "fedpia/rng.hpp"

namespace fedpia {

enum class Activation { kIdentity, kTanh, kRelu };

struct DenseLayer {
  Matrix weight;  // in x out
  Vector bias;    // out
  Activation activation = Activation::kTanh;

  bool operator==(const DenseLayer&) const = default;
};

struct Backbone {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const;
  std::size_t width() const;
  bool operator==(const Backbone&) const = default;
};

struct AdapterLayer {
  Matrix w_down;  // h x b
  Vector b_down;  // b
  Matrix w_up;    // b x h
  Vector b_up;    // h
  Activation activation = Activation::kRelu;

  std::size_t width() const { return w_down.rows(); }
  std::size_t bottleneck() const { return w_down.cols(); }
  bool operator==(const AdapterLayer&) const = default;
};

struct AdapterStack {
  std::vector<AdapterLayer> layers;

  std::size_t parameter_count() const;
  bool operator==(const AdapterStack&) const = default;
};

struct ClassifierHead {
  Matrix w;  // h x C
  Vector b;  // C
  TaskKind kind = TaskKind::kSingleLabel;

  std::size_t num_classes() const { return w.cols(); }
  bool operator==(const ClassifierHead&) const = default;
};

// Flat views over every parameter tensor, in a fixed order
// (per adapter layer: w_down, b_down, w_up, b_up; head: w, b).
std::vector<std::span<double>> parameter_views(AdapterStack& stack);
std::vector<std::span<const double>> parameter_views(const AdapterStack& stack);
std::vector<std::span<double>> parameter_views(ClassifierHead& head);
std::vector<std::span<const double>> parameter_views(const ClassifierHead& head);
std::vector<std::span<double>> parameter_views(Backbone& backbone);
std::vector<std::span<const double>> parameter_views(const Backbone& backbone);

Vector flatten(const AdapterStack& stack);
void assign_flat(AdapterStack& stack, std::span<const double> flat);

bool same_shape(const AdapterStack& a, const AdapterStack& b);
// Throws ShapeError naming `context` when shapes differ.
void require_same_shape(const AdapterStack& a, const AdapterStack& b, const char* context);

struct ModelDims {
  std::size_t input_dim = 16;
  std::size_t width = 16;       // h
  std::size_t bottleneck = 8;   // b
  std::size_t depth = 2;
  std::size_t num_classes = 2;  // C_k
};

struct InitOptions {
  double adapter_std = 0.01;
  Activation backbone_activation = Activation::kTanh;
  TaskKind head_kind = TaskKind::kSingleLabel;
};

// Backbone weights ~ N(0, 1/in_dim), biases ~ N(0, 0.01).
Backbone init_backbone(Rng& rng, std::size_t input_dim, std::size_t width, std::size_t depth,
                       Activation activation = Activation::kTanh);
// All adapter parameters ~ N(0, std^2); std == 0 gives the identity adapter.
AdapterStack init_adapters(Rng& rng, std::size_t width, std::size_t bottleneck,
                           std::size_t depth, double stddev);
ClassifierHead init_head(Rng& rng, std::size_t width, std::size_t num_classes, TaskKind kind);

struct Model {
  Backbone backbone;
  AdapterStack adapters;
  ClassifierHead head;
};

// Draws each part from its own labeled substream of `rng`, so two callers
// sharing a seed get bit-identical backbones regardless of dims elsewhere.
Model init_model(const Rng& rng, const ModelDims& dims, const InitOptions& options = {});

struct LayerCache {
  Matrix backbone_in;      // input to the backbone layer
  Matrix backbone_out;     // after the backbone nonlinearity = adapter input
  Matrix bottleneck_pre;   // adapter input * w_down + b_down
  Matrix bottleneck_act;   // nonlinearity(bottleneck_pre)
  Matrix output;           // adapter output, fed to the next layer
};

struct ActivationCache {
  std::vector<LayerCache> layers;

  const Matrix& features() const;  // final adapter output, fed to the head
};

struct ForwardResult {
  Matrix logits;
  ActivationCache cache;
};

// Backbone and adapters only; used for activation probes.
ActivationCache forward_features(const Backbone& backbone, const AdapterStack& adapters,
                                 const Matrix& batch);
ForwardResult forward(const Backbone& backbone, const AdapterStack& adapters,
                      const ClassifierHead& head, const Matrix& batch);

struct Gradients {
  AdapterStack adapters;
  ClassifierHead head;
  std::optional<Backbone> backbone;  // only when requested
};

struct LossResult {
  double loss = 0.0;
  Gradients grads;
};

// Mean softmax cross-entropy (single-label) or mean per-element sigmoid
// binary cross-entropy (multilabel).
double compute_loss(const Matrix& logits, const Labels& labels);

LossResult loss_and_backward(const Matrix& logits, const Labels& labels,
                             const ActivationCache& cache, const Backbone& backbone,
                             const AdapterStack& adapters, const ClassifierHead& head,
                             bool backbone_grads = false);

struct OptimizerState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  std::int64_t step = 0;
  std::vector<Vector> m;
  std::vector<Vector> v;
};

// Decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
// Moment buffers are created on the first call and must keep their shapes.
void adamw_step(OptimizerState& state, std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads, double lr);

// Linear warmup from 0 to base_lr over warmup_frac * total_steps, then linear
// decay to 0 at total_steps.
double lr_at(std::int64_t global_step, std::int64_t total_steps, double base_lr,
             double warmup_frac);

}  // namespace fedpia

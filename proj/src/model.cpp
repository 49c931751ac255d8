// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedpia/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedpia/errors.hpp"
#include "fedpia/kernels.hpp"

namespace fedpia {

namespace {

void apply_activation(Activation act, Matrix& m) {
  switch (act) {
    case Activation::kIdentity:
      return;
    case Activation::kTanh:
      for (double& v : m.values()) v = std::tanh(v);
      return;
    case Activation::kRelu:
      for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
      return;
  }
}

// grad <- grad * act'(.), using the pre-activation and/or output as needed.
void backprop_activation(Activation act, const Matrix& pre, const Matrix& out, Matrix& grad) {
  auto g = grad.values();
  switch (act) {
    case Activation::kIdentity:
      return;
    case Activation::kTanh: {
      auto y = out.values();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
      return;
    }
    case Activation::kRelu: {
      auto x = pre.values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(x[i] > 0.0)) g[i] = 0.0;
      }
      return;
    }
  }
}

Matrix affine(const Matrix& x, const Matrix& w, const Vector& b) {
  Matrix out = matmul(x, w);
  add_row_vector(out, b);
  return out;
}

void add_into(Matrix& dst, const Matrix& src) {
  kernels::active().axpy(1.0, src.values().data(), dst.values().data(), dst.size());
}

template <typename Span, typename Stack>
std::vector<Span> stack_views(Stack& stack) {
  std::vector<Span> views;
  views.reserve(stack.layers.size() * 4);
  for (auto& layer : stack.layers) {
    views.emplace_back(layer.w_down.values());
    views.emplace_back(layer.b_down);
    views.emplace_back(layer.w_up.values());
    views.emplace_back(layer.b_up);
  }
  return views;
}

template <typename Span, typename Net>
std::vector<Span> backbone_views(Net& backbone) {
  std::vector<Span> views;
  for (auto& layer : backbone.layers) {
    views.emplace_back(layer.weight.values());
    views.emplace_back(layer.bias);
  }
  return views;
}

Vector normal_vector(Rng& rng, std::size_t n, double stddev) {
  const Matrix m = rng_normal(rng, 1, n, stddev);
  return Vector(m.values().begin(), m.values().end());
}

double log1p_exp(double x) {
  // log(1 + e^x) without overflow.
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Returns dLoss/dlogits and stores the loss in *loss.
Matrix loss_gradient(const Matrix& logits, const Labels& labels, double* loss) {
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  if (n == 0) throw DataError("loss on an empty batch");
  if (labels.size() != n) {
    throw ShapeError("labels carry " + std::to_string(labels.size()) + " rows, logits " +
                     std::to_string(n));
  }
  labels.validate(c);
  Matrix grad(n, c);
  double total = 0.0;
  if (labels.kind == TaskKind::kSingleLabel) {
    for (std::size_t i = 0; i < n; ++i) {
      auto z = logits.row(i);
      const double zmax = *std::max_element(z.begin(), z.end());
      double denom = 0.0;
      for (double v : z) denom += std::exp(v - zmax);
      const double log_denom = std::log(denom);
      const auto y = static_cast<std::size_t>(labels.index[i]);
      total += -(z[y] - zmax - log_denom);
      auto g = grad.row(i);
      for (std::size_t j = 0; j < c; ++j) {
        const double p = std::exp(z[j] - zmax - log_denom);
        g[j] = (p - (j == y ? 1.0 : 0.0)) / static_cast<double>(n);
      }
    }
    *loss = total / static_cast<double>(n);
  } else {
    const double count = static_cast<double>(n * c);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double z = logits(i, j);
        const double y = labels.multi_hot(i, j);
        total += log1p_exp(z) - z * y;
        grad(i, j) = (sigmoid(z) - y) / count;
      }
    }
    *loss = total / count;
  }
  return grad;
}

}  // namespace

std::size_t Backbone::input_dim() const {
  return layers.empty() ? 0 : layers.front().weight.rows();
}

std::size_t Backbone::width() const { return layers.empty() ? 0 : layers.back().weight.cols(); }

std::size_t AdapterStack::parameter_count() const {
  std::size_t count = 0;
  for (const auto& l : layers) {
    count += l.w_down.size() + l.b_down.size() + l.w_up.size() + l.b_up.size();
  }
  return count;
}

std::vector<std::span<double>> parameter_views(AdapterStack& stack) {
  return stack_views<std::span<double>>(stack);
}

std::vector<std::span<const double>> parameter_views(const AdapterStack& stack) {
  return stack_views<std::span<const double>>(stack);
}

std::vector<std::span<double>> parameter_views(ClassifierHead& head) {
  return {head.w.values(), std::span<double>(head.b)};
}

std::vector<std::span<const double>> parameter_views(const ClassifierHead& head) {
  return {head.w.values(), std::span<const double>(head.b)};
}

std::vector<std::span<double>> parameter_views(Backbone& backbone) {
  return backbone_views<std::span<double>>(backbone);
}

std::vector<std::span<const double>> parameter_views(const Backbone& backbone) {
  return backbone_views<std::span<const double>>(backbone);
}

Vector flatten(const AdapterStack& stack) {
  Vector flat;
  flat.reserve(stack.parameter_count());
  for (auto view : parameter_views(stack)) flat.insert(flat.end(), view.begin(), view.end());
  return flat;
}

void assign_flat(AdapterStack& stack, std::span<const double> flat) {
  if (flat.size() != stack.parameter_count()) throw ShapeError("assign_flat: length mismatch");
  require_finite(flat, "assign_flat");
  std::size_t offset = 0;
  for (auto view : parameter_views(stack)) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), view.size(), view.begin());
    offset += view.size();
  }
}

bool same_shape(const AdapterStack& a, const AdapterStack& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (x.w_down.rows() != y.w_down.rows() || x.w_down.cols() != y.w_down.cols() ||
        x.w_up.rows() != y.w_up.rows() || x.w_up.cols() != y.w_up.cols() ||
        x.b_down.size() != y.b_down.size() || x.b_up.size() != y.b_up.size() ||
        x.activation != y.activation) {
      return false;
    }
  }
  return true;
}

void require_same_shape(const AdapterStack& a, const AdapterStack& b, const char* context) {
  if (!same_shape(a, b)) throw ShapeError(std::string(context) + ": adapter stacks differ in shape");
}

Backbone init_backbone(Rng& rng, std::size_t input_dim, std::size_t width, std::size_t depth,
                       Activation activation) {
  if (input_dim == 0 || width == 0 || depth == 0) {
    throw ShapeError("backbone dimensions must be positive");
  }
  Backbone net;
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < depth; ++l) {
    DenseLayer layer;
    layer.weight = rng_normal(rng, in, width, 1.0 / std::sqrt(static_cast<double>(in)));
    layer.bias = normal_vector(rng, width, 0.1);
    layer.activation = activation;
    net.layers.push_back(std::move(layer));
    in = width;
  }
  return net;
}

AdapterStack init_adapters(Rng& rng, std::size_t width, std::size_t bottleneck,
                           std::size_t depth, double stddev) {
  if (bottleneck == 0 || bottleneck > width || depth == 0) {
    throw ShapeError("adapter dims need 1 <= bottleneck <= width and depth >= 1");
  }
  AdapterStack stack;
  for (std::size_t l = 0; l < depth; ++l) {
    AdapterLayer layer;
    layer.w_down = rng_normal(rng, width, bottleneck, stddev);
    layer.b_down = normal_vector(rng, bottleneck, stddev);
    layer.w_up = rng_normal(rng, bottleneck, width, stddev);
    layer.b_up = normal_vector(rng, width, stddev);
    stack.layers.push_back(std::move(layer));
  }
  return stack;
}

ClassifierHead init_head(Rng& rng, std::size_t width, std::size_t num_classes, TaskKind kind) {
  if (width == 0 || num_classes == 0) throw ShapeError("head dimensions must be positive");
  ClassifierHead head;
  head.w = rng_normal(rng, width, num_classes, 1.0 / std::sqrt(static_cast<double>(width)));
  head.b = Vector(num_classes, 0.0);
  head.kind = kind;
  return head;
}

Model init_model(const Rng& rng, const ModelDims& dims, const InitOptions& options) {
  Rng backbone_rng = rng.split("backbone");
  Rng adapter_rng = rng.split("adapters");
  Rng head_rng = rng.split("head");
  Model model;
  model.backbone = init_backbone(backbone_rng, dims.input_dim, dims.width, dims.depth,
                                 options.backbone_activation);
  model.adapters =
      init_adapters(adapter_rng, dims.width, dims.bottleneck, dims.depth, options.adapter_std);
  model.head = init_head(head_rng, dims.width, dims.num_classes, options.head_kind);
  return model;
}

const Matrix& ActivationCache::features() const {
  if (layers.empty()) throw UsageError("activation cache is empty");
  return layers.back().output;
}

ActivationCache forward_features(const Backbone& backbone, const AdapterStack& adapters,
                                 const Matrix& batch) {
  if (backbone.layers.size() != adapters.layers.size()) {
    throw ShapeError("backbone has " + std::to_string(backbone.layers.size()) +
                     " layers but adapter stack has " + std::to_string(adapters.layers.size()));
  }
  if (batch.cols() != backbone.input_dim()) {
    throw ShapeError("batch has " + std::to_string(batch.cols()) + " features, backbone expects " +
                     std::to_string(backbone.input_dim()));
  }
  ActivationCache cache;
  cache.layers.reserve(backbone.layers.size());
  const Matrix* x = &batch;
  for (std::size_t l = 0; l < backbone.layers.size(); ++l) {
    const DenseLayer& dense = backbone.layers[l];
    const AdapterLayer& adapter = adapters.layers[l];
    if (adapter.width() != dense.weight.cols()) {
      throw ShapeError("adapter width does not match backbone width at layer " +
                       std::to_string(l));
    }
    LayerCache lc;
    lc.backbone_in = *x;
    lc.backbone_out = affine(*x, dense.weight, dense.bias);
    apply_activation(dense.activation, lc.backbone_out);
    lc.bottleneck_pre = affine(lc.backbone_out, adapter.w_down, adapter.b_down);
    lc.bottleneck_act = lc.bottleneck_pre;
    apply_activation(adapter.activation, lc.bottleneck_act);
    lc.output = affine(lc.bottleneck_act, adapter.w_up, adapter.b_up);
    add_into(lc.output, lc.backbone_out);
    cache.layers.push_back(std::move(lc));
    x = &cache.layers.back().output;
  }
  return cache;
}

ForwardResult forward(const Backbone& backbone, const AdapterStack& adapters,
                      const ClassifierHead& head, const Matrix& batch) {
  ForwardResult result;
  result.cache = forward_features(backbone, adapters, batch);
  const Matrix& features = result.cache.features();
  if (head.w.rows() != features.cols()) throw ShapeError("head input width mismatch");
  result.logits = affine(features, head.w, head.b);
  return result;
}

double compute_loss(const Matrix& logits, const Labels& labels) {
  double loss = 0.0;
  loss_gradient(logits, labels, &loss);
  return loss;
}

LossResult loss_and_backward(const Matrix& logits, const Labels& labels,
                             const ActivationCache& cache, const Backbone& backbone,
                             const AdapterStack& adapters, const ClassifierHead& head,
                             bool backbone_grads) {
  LossResult result;
  Matrix d_logits = loss_gradient(logits, labels, &result.loss);

  const Matrix& features = cache.features();
  result.grads.head.kind = head.kind;
  result.grads.head.w = matmul_tn(features, d_logits);
  result.grads.head.b = d_logits.column_sums();

  Matrix d_x = matmul_nt(d_logits, head.w);

  const std::size_t depth = adapters.layers.size();
  result.grads.adapters.layers.resize(depth);
  if (backbone_grads) result.grads.backbone.emplace().layers.resize(depth);

  for (std::size_t step = 0; step < depth; ++step) {
    const std::size_t l = depth - 1 - step;
    const LayerCache& lc = cache.layers[l];
    const AdapterLayer& adapter = adapters.layers[l];
    AdapterLayer& g = result.grads.adapters.layers[l];
    g.activation = adapter.activation;

    // output = z + act(z * w_down + b_down) * w_up + b_up
    g.b_up = d_x.column_sums();
    g.w_up = matmul_tn(lc.bottleneck_act, d_x);
    Matrix d_pre = matmul_nt(d_x, adapter.w_up);
    backprop_activation(adapter.activation, lc.bottleneck_pre, lc.bottleneck_act, d_pre);
    g.w_down = matmul_tn(lc.backbone_out, d_pre);
    g.b_down = d_pre.column_sums();

    Matrix d_z = matmul_nt(d_pre, adapter.w_down);
    add_into(d_z, d_x);

    // z = act(x * W + b)
    const DenseLayer& dense = backbone.layers[l];
    backprop_activation(dense.activation, lc.backbone_out, lc.backbone_out, d_z);
    if (backbone_grads) {
      DenseLayer& gb = result.grads.backbone->layers[l];
      gb.activation = dense.activation;
      gb.weight = matmul_tn(lc.backbone_in, d_z);
      gb.bias = d_z.column_sums();
    }
    if (l > 0) d_x = matmul_nt(d_z, dense.weight);
  }
  return result;
}

void adamw_step(OptimizerState& state, std::span<const std::span<double>> params,
                std::span<const std::span<const double>> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("adamw: parameter/gradient count mismatch");
  if (lr < 0.0) throw UsageError("adamw: negative learning rate");
  if (state.m.empty()) {
    for (auto p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adamw: optimizer state shape changed");

  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto p = params[t];
    auto g = grads[t];
    auto& m = state.m[t];
    auto& v = state.v[t];
    if (p.size() != g.size() || p.size() != m.size()) {
      throw ShapeError("adamw: tensor " + std::to_string(t) + " changed shape");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= lr * (m_hat / (std::sqrt(v_hat) + state.eps) + state.weight_decay * p[i]);
    }
  }
}

double lr_at(std::int64_t global_step, std::int64_t total_steps, double base_lr,
             double warmup_frac) {
  if (total_steps <= 0) return 0.0;
  const double step = static_cast<double>(std::clamp<std::int64_t>(global_step, 0, total_steps));
  const double total = static_cast<double>(total_steps);
  const double warmup = warmup_frac * total;
  if (warmup > 0.0 && step < warmup) return base_lr * step / warmup;
  if (total <= warmup) return base_lr;
  return base_lr * (total - step) / (total - warmup);
}

}  // namespace fedpia

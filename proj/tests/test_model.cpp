// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fedpia/checkpoint.hpp"
#include "fedpia/errors.hpp"
#include "fedpia/model.hpp"

namespace fedpia {
namespace {

// Scalar-loop forward pass, written independently of the Matrix kernels.
Matrix loop_forward(const Model& m, const Matrix& x) {
  std::vector<std::vector<double>> z(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) z[i].assign(x.row(i).begin(), x.row(i).end());
  for (std::size_t l = 0; l < m.backbone.layers.size(); ++l) {
    const DenseLayer& d = m.backbone.layers[l];
    const AdapterLayer& a = m.adapters.layers[l];
    for (auto& row : z) {
      std::vector<double> h(d.weight.cols());
      for (std::size_t j = 0; j < h.size(); ++j) {
        double s = d.bias[j];
        for (std::size_t p = 0; p < row.size(); ++p) s += row[p] * d.weight(p, j);
        h[j] = std::tanh(s);
      }
      std::vector<double> r(a.bottleneck());
      for (std::size_t j = 0; j < r.size(); ++j) {
        double s = a.b_down[j];
        for (std::size_t p = 0; p < h.size(); ++p) s += h[p] * a.w_down(p, j);
        r[j] = std::max(0.0, s);
      }
      std::vector<double> out(h.size());
      for (std::size_t j = 0; j < out.size(); ++j) {
        double s = a.b_up[j];
        for (std::size_t p = 0; p < r.size(); ++p) s += r[p] * a.w_up(p, j);
        out[j] = h[j] + s;
      }
      row = out;
    }
  }
  Matrix logits(x.rows(), m.head.num_classes());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      double s = m.head.b[c];
      for (std::size_t p = 0; p < z[i].size(); ++p) s += z[i][p] * m.head.w(p, c);
      logits(i, c) = s;
    }
  }
  return logits;
}

Labels random_labels(Rng& rng, TaskKind kind, std::size_t n, std::size_t c) {
  if (kind == TaskKind::kSingleLabel) {
    std::vector<int> idx;
    for (std::size_t i = 0; i < n; ++i) idx.push_back(static_cast<int>(rng.uniform_index(c)));
    return Labels::single(idx);
  }
  Matrix hot(n, c);
  for (double& v : hot.values()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  return Labels::multi(hot);
}

TEST(Model, InitShapes) {
  Model m = init_model(Rng(1), {8, 8, 2, 2, 3});
  ASSERT_EQ(m.adapters.layers.size(), 2u);
  for (const auto& l : m.adapters.layers) {
    EXPECT_EQ(l.w_down.rows(), 8u);
    EXPECT_EQ(l.w_down.cols(), 2u);
    EXPECT_EQ(l.w_up.rows(), 2u);
    EXPECT_EQ(l.w_up.cols(), 8u);
  }
  EXPECT_EQ(m.head.num_classes(), 3u);
  EXPECT_EQ(m.adapters.parameter_count(), 2u * (16 + 2 + 16 + 8));
  Rng r(0);
  EXPECT_THROW(init_adapters(r, 4, 5, 1, 0.1), ShapeError);
  EXPECT_THROW(init_backbone(r, 0, 4, 1), ShapeError);
  EXPECT_THROW(init_head(r, 4, 0, TaskKind::kSingleLabel), ShapeError);
}

TEST(Model, SharedBackboneSeedIsBitwiseIdentical) {
  Rng b1(5), b2(5);
  EXPECT_EQ(init_backbone(b1, 6, 6, 2), init_backbone(b2, 6, 6, 2));
  EXPECT_EQ(init_model(Rng(77), {6, 6, 3, 2, 2}).backbone, init_model(Rng(77), {6, 6, 3, 2, 2}).backbone);
}

TEST(Model, ZeroAdaptersAreResidualIdentity) {
  InitOptions opts;
  opts.adapter_std = 0.0;
  const Model m = init_model(Rng(2), {5, 5, 3, 2, 2}, opts);
  Rng rng(3);
  const Matrix x = rng_normal(rng, 4, 5, 1.0);
  const ActivationCache cache = forward_features(m.backbone, m.adapters, x);
  for (const auto& layer : cache.layers) EXPECT_EQ(layer.output, layer.backbone_out);
}

TEST(Model, IdentityBackbonePassThrough) {
  Backbone bb;
  bb.layers.push_back({Matrix::identity(3), Vector(3, 0.0), Activation::kIdentity});
  Rng rng(4);
  const AdapterStack zero = init_adapters(rng, 3, 2, 1, 0.0);
  const ClassifierHead head = init_head(rng, 3, 2, TaskKind::kSingleLabel);
  const Matrix x = rng_normal(rng, 5, 3, 1.0);
  const Matrix logits = forward(bb, zero, head, x).logits;
  Matrix want = matmul(x, head.w);
  add_row_vector(want, head.b);
  EXPECT_LE(max_abs_diff(logits, want), 1e-15);
}

TEST(Model, IdenticalRowsGiveIdenticalLogits) {
  InitOptions opts;
  opts.adapter_std = 0.3;
  const Model m = init_model(Rng(5), {4, 6, 3, 2, 3}, opts);
  Matrix x(6, 4);
  for (std::size_t i = 0; i < 6; ++i) {
    for (std::size_t j = 0; j < 4; ++j) x(i, j) = 0.1 * static_cast<double>(j) - 0.2;
  }
  const Matrix logits = forward(m.backbone, m.adapters, m.head, x).logits;
  for (std::size_t i = 1; i < 6; ++i) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(logits(i, c), logits(0, c));
  }
}

TEST(Model, ForwardMatchesScalarLoopOracle) {
  for (int t = 0; t < 10; ++t) {
    InitOptions opts;
    opts.adapter_std = 0.4;
    const Model m = init_model(Rng(100 + t), {5, 7, 3, 2, 4}, opts);
    Rng rng(200 + t);
    const Matrix x = rng_normal(rng, 6, 5, 1.0);
    EXPECT_LE(max_abs_diff(forward(m.backbone, m.adapters, m.head, x).logits, loop_forward(m, x)), 1e-10);
  }
}

TEST(Model, ForwardShapeErrors) {
  const Model m = init_model(Rng(6), {4, 4, 2, 1, 2});
  EXPECT_THROW(forward(m.backbone, m.adapters, m.head, Matrix(2, 5)), ShapeError);
  Rng rng(1);
  const AdapterStack wrong = init_adapters(rng, 4, 2, 2, 0.1);
  EXPECT_THROW(forward(m.backbone, wrong, m.head, Matrix(2, 4)), ShapeError);
}

TEST(Loss, KnownValues) {
  EXPECT_NEAR(compute_loss(Matrix(3, 4), Labels::single({0, 3, 2})), std::log(4.0), 1e-15);
  EXPECT_NEAR(compute_loss(Matrix(2, 5), Labels::multi(Matrix(2, 5))), std::log(2.0), 1e-15);
  EXPECT_THROW(compute_loss(Matrix(2, 2), Labels::single({0, 2})), DataError);
  EXPECT_THROW(compute_loss(Matrix(0, 2), Labels::single({})), DataError);
}

TEST(Loss, LargeLogitsStayFinite) {
  const Matrix logits = Matrix::from_rows({{800.0, -800.0}});
  EXPECT_TRUE(std::isfinite(compute_loss(logits, Labels::single({1}))));
  EXPECT_TRUE(std::isfinite(compute_loss(logits, Labels::multi(Matrix::from_rows({{0.0, 1.0}})))));
}

// Central finite differences against the analytic gradient of every adapter,
// head and (optionally) backbone parameter.
double worst_relative_error(Model& m, const Matrix& x, const Labels& y, bool backbone) {
  const ForwardResult fwd = forward(m.backbone, m.adapters, m.head, x);
  const LossResult lr =
      loss_and_backward(fwd.logits, y, fwd.cache, m.backbone, m.adapters, m.head, backbone);
  std::vector<std::span<double>> params = parameter_views(m.adapters);
  std::vector<std::span<const double>> grads = parameter_views(lr.grads.adapters);
  auto hp = parameter_views(m.head);
  auto hg = parameter_views(lr.grads.head);
  params.insert(params.end(), hp.begin(), hp.end());
  grads.insert(grads.end(), hg.begin(), hg.end());
  if (backbone) {
    auto bp = parameter_views(m.backbone);
    auto bg = parameter_views(*lr.grads.backbone);
    params.insert(params.end(), bp.begin(), bp.end());
    grads.insert(grads.end(), bg.begin(), bg.end());
  }
  auto loss = [&] { return compute_loss(forward(m.backbone, m.adapters, m.head, x).logits, y); };
  constexpr double kEps = 1e-5;
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      const double keep = params[p][i];
      params[p][i] = keep + kEps;
      const double up = loss();
      params[p][i] = keep - kEps;
      const double down = loss();
      params[p][i] = keep;
      const double numeric = (up - down) / (2 * kEps);
      const double rel =
          std::abs(numeric - grads[p][i]) / std::max(1e-7, std::abs(numeric) + std::abs(grads[p][i]));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

TEST(Gradients, MatchFiniteDifferences) {
  for (int t = 0; t < 12; ++t) {
    const TaskKind kind = t % 2 ? TaskKind::kMultiLabel : TaskKind::kSingleLabel;
    InitOptions opts;
    opts.adapter_std = 0.5;
    opts.head_kind = kind;
    Model m = init_model(Rng(300 + t), {3, 3, 2, 1, 3}, opts);
    Rng rng(400 + t);
    const Matrix x = rng_normal(rng, 5, 3, 1.0);
    const Labels y = random_labels(rng, kind, 5, 3);
    EXPECT_LT(worst_relative_error(m, x, y, false), 1e-3) << "case " << t;
  }
}

TEST(Gradients, BackboneGradientsForFullFinetune) {
  InitOptions opts;
  opts.adapter_std = 0.5;
  Model m = init_model(Rng(9), {3, 4, 2, 2, 2}, opts);
  Rng rng(10);
  const Matrix x = rng_normal(rng, 4, 3, 1.0);
  EXPECT_LT(worst_relative_error(m, x, random_labels(rng, TaskKind::kSingleLabel, 4, 2), true), 1e-3);
}

TEST(Optimizer, ZeroLearningRateLeavesParameters) {
  Vector p = {1.0, -2.0, 3.0};
  const Vector g = {0.5, 0.5, -0.5};
  OptimizerState st;
  std::vector<std::span<double>> params = {p};
  std::vector<std::span<const double>> grads = {g};
  for (int i = 0; i < 5; ++i) adamw_step(st, params, grads, 0.0);
  EXPECT_EQ(p, (Vector{1.0, -2.0, 3.0}));
}

TEST(Optimizer, FirstStepIsSignStep) {
  Vector p = {1.0, -2.0};
  const Vector g = {0.3, -7.0};
  OptimizerState st;
  st.weight_decay = 0.0;
  std::vector<std::span<double>> params = {p};
  std::vector<std::span<const double>> grads = {g};
  adamw_step(st, params, grads, 0.01);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(p[0], 1.0 - 0.01 * 0.3 / (0.3 + 1e-8), 1e-15);
  EXPECT_NEAR(p[1], -2.0 + 0.01 * 7.0 / (7.0 + 1e-8), 1e-15);
}

TEST(Optimizer, PureDecay) {
  Vector p = {2.0};
  const Vector g = {0.0};
  OptimizerState st;
  std::vector<std::span<double>> params = {p};
  std::vector<std::span<const double>> grads = {g};
  adamw_step(st, params, grads, 0.1);
  EXPECT_NEAR(p[0], 2.0 * (1.0 - 0.1 * 0.01), 1e-15);
  adamw_step(st, params, grads, 0.1);
  EXPECT_NEAR(p[0], 2.0 * (1.0 - 0.001) * (1.0 - 0.001), 1e-15);
}

TEST(Schedule, WarmupThenLinearDecay) {
  EXPECT_EQ(lr_at(0, 1000, 1e-4, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(50, 1000, 1e-4, 0.1), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(100, 1000, 1e-4, 0.1), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(550, 1000, 1e-4, 0.1), 5e-5);
  EXPECT_EQ(lr_at(1000, 1000, 1e-4, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(0, 10, 1e-3, 0.0), 1e-3);
}

TEST(Model, FlattenRoundTrip) {
  Rng rng(11);
  AdapterStack s = init_adapters(rng, 5, 3, 2, 1.0);
  const Vector flat = flatten(s);
  EXPECT_EQ(flat.size(), s.parameter_count());
  AdapterStack t = init_adapters(rng, 5, 3, 2, 0.0);
  assign_flat(t, flat);
  EXPECT_EQ(s, t);
  EXPECT_THROW(assign_flat(t, Vector(3, 0.0)), ShapeError);
}

TEST(Checkpoint, RoundTripIsExact) {
  Rng rng(12);
  Checkpoint c;
  c.seed = 99;
  c.step = 1234;
  c.adapters = init_adapters(rng, 6, 2, 3, 0.7);
  c.head = init_head(rng, 6, 4, TaskKind::kMultiLabel);
  EXPECT_EQ(decode_checkpoint(encode_checkpoint(c)), c);
  const auto path = std::filesystem::temp_directory_path() / "fedpia_ckpt_test.bin";
  write_checkpoint(path, c);
  EXPECT_EQ(read_checkpoint(path), c);
  std::filesystem::remove(path);

  Checkpoint only_adapters;
  only_adapters.adapters = c.adapters;
  EXPECT_EQ(decode_checkpoint(encode_checkpoint(only_adapters)), only_adapters);
}

TEST(Checkpoint, RejectsMalformedBytes) {
  Rng rng(13);
  Checkpoint c;
  c.adapters = init_adapters(rng, 3, 2, 1, 0.1);
  const std::string bytes = encode_checkpoint(c);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), ParseError);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), ParseError);
  EXPECT_THROW(decode_checkpoint(""), ParseError);
}

}  // namespace
}  // namespace fedpia

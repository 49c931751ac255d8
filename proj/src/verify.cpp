// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

// Self-verification oracles. Every case is generated from fixed seeds so the
// report is identical from run to run.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <ostream>

#include "fedpia/cli.hpp"
#include "fedpia/errors.hpp"
#include "fedpia/ot.hpp"
#include "fedpia/pia.hpp"

namespace fedpia::cli {

using nlohmann::json;

namespace {

struct Outcome {
  bool passed = true;
  std::size_t cases = 0;
  std::string detail;  // summary of the worst case
  json failing_input;  // dumped when the oracle fails
};

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

json stack_json(const AdapterStack& s) {
  json layers = json::array();
  for (const auto& l : s.layers) {
    layers.push_back({{"w_down", matrix_json(l.w_down)},
                      {"b_down", l.b_down},
                      {"w_up", matrix_json(l.w_up)},
                      {"b_up", l.b_up}});
  }
  return layers;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Matrix uniform_cost(Rng& rng, std::size_t n) {
  Matrix c(n, n);
  for (double& v : c.values()) v = rng.uniform();
  return c;
}

double brute_force_assignment(const Matrix& cost) {
  const std::size_t n = cost.rows();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost(i, perm[i]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

Outcome ot_bruteforce() {
  Outcome o;
  Rng rng = Rng(11).split("verify/ot");
  double worst = 0.0;
  for (std::size_t n = 2; n <= 6; ++n) {
    for (int t = 0; t < 40; ++t) {
      const Matrix cost = uniform_cost(rng, n);
      const Vector mass = ot::uniform_mass(n);
      const double got = ot::solve_exact(cost, mass, mass).cost;
      const double want = brute_force_assignment(cost);
      const double err = std::abs(got - want);
      ++o.cases;
      if (err > worst) worst = err;
      if (err > 1e-9 && o.passed) {
        o.passed = false;
        o.failing_input = {{"cost", matrix_json(cost)}, {"solver", got}, {"brute_force", want}};
      }
    }
  }
  o.detail = "max |cost - brute force| = " + fmt("%.3g", worst);
  return o;
}

AdapterStack permute_bottlenecks(const AdapterStack& s, Rng& rng) {
  AdapterStack out = s;
  for (auto& l : out.layers) {
    const std::size_t b = l.bottleneck();
    const auto perm = rng.permutation(b);
    const AdapterLayer src = l;
    for (std::size_t j = 0; j < b; ++j) {
      for (std::size_t i = 0; i < l.width(); ++i) l.w_down(i, j) = src.w_down(i, perm[j]);
      l.b_down[j] = src.b_down[perm[j]];
      for (std::size_t i = 0; i < l.width(); ++i) l.w_up(j, i) = src.w_up(perm[j], i);
    }
  }
  return out;
}

Outcome planted_permutation() {
  Outcome o;
  Rng rng = Rng(12).split("verify/planted");
  double worst_w = 0.0;
  double worst_f = 0.0;
  for (int t = 0; t < 50; ++t) {
    const Backbone bb = init_backbone(rng, 16, 16, 2);
    const AdapterStack original = init_adapters(rng, 16, 8, 2, 0.5);
    const AdapterStack shuffled = permute_bottlenecks(original, rng);
    const Matrix probe = rng_normal(rng, 32, 16, 1.0);
    const AdapterStack aligned =
        pia::align_stack(shuffled, original, pia::CostMode::kWeight).aligned;
    const double dw = max_abs_diff(flatten(aligned), flatten(original));
    const double df = max_abs_diff(forward_features(bb, aligned, probe).features(),
                                   forward_features(bb, shuffled, probe).features());
    worst_w = std::max(worst_w, dw);
    worst_f = std::max(worst_f, df);
    ++o.cases;
    if ((dw > 1e-9 || df > 1e-6) && o.passed) {
      o.passed = false;
      o.failing_input = {{"original", stack_json(original)},
                         {"shuffled", stack_json(shuffled)},
                         {"weight_error", dw},
                         {"output_error", df}};
    }
  }
  o.detail = "max weight error " + fmt("%.3g", worst_w) + ", max output error " + fmt("%.3g", worst_f);
  return o;
}

double model_loss(const Model& m, const Matrix& x, const Labels& y) {
  return compute_loss(forward(m.backbone, m.adapters, m.head, x).logits, y);
}

Outcome gradient_check() {
  Outcome o;
  Rng rng = Rng(13).split("verify/grad");
  constexpr double kEps = 1e-5;
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const TaskKind kind = t % 2 == 0 ? TaskKind::kSingleLabel : TaskKind::kMultiLabel;
    ModelDims dims{3, 3, 2, 1, 3};
    InitOptions opts;
    opts.adapter_std = 0.5;
    opts.head_kind = kind;
    Model m = init_model(rng.split("model/" + std::to_string(t)), dims, opts);
    const Matrix x = rng_normal(rng, 4, 3, 1.0);
    Labels y;
    if (kind == TaskKind::kSingleLabel) {
      std::vector<int> idx;
      for (int i = 0; i < 4; ++i) idx.push_back(static_cast<int>(rng.uniform_index(3)));
      y = Labels::single(idx);
    } else {
      Matrix hot(4, 3);
      for (double& v : hot.values()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      y = Labels::multi(hot);
    }
    const ForwardResult fwd = forward(m.backbone, m.adapters, m.head, x);
    LossResult lr = loss_and_backward(fwd.logits, y, fwd.cache, m.backbone, m.adapters, m.head);

    std::vector<std::span<double>> params = parameter_views(m.adapters);
    auto hp = parameter_views(m.head);
    params.insert(params.end(), hp.begin(), hp.end());
    std::vector<std::span<const double>> grads =
        parameter_views(static_cast<const AdapterStack&>(lr.grads.adapters));
    auto hg = parameter_views(static_cast<const ClassifierHead&>(lr.grads.head));
    grads.insert(grads.end(), hg.begin(), hg.end());

    double case_worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (std::size_t i = 0; i < params[p].size(); ++i) {
        const double keep = params[p][i];
        params[p][i] = keep + kEps;
        const double up = model_loss(m, x, y);
        params[p][i] = keep - kEps;
        const double down = model_loss(m, x, y);
        params[p][i] = keep;
        const double numeric = (up - down) / (2.0 * kEps);
        const double analytic = grads[p][i];
        const double rel = std::abs(numeric - analytic) /
                           std::max(1e-7, std::abs(numeric) + std::abs(analytic));
        case_worst = std::max(case_worst, rel);
      }
    }
    ++o.cases;
    worst = std::max(worst, case_worst);
    if (case_worst >= 1e-3 && o.passed) {
      o.passed = false;
      o.failing_input = {{"case", t},
                         {"kind", task_kind_name(kind)},
                         {"adapters", stack_json(m.adapters)},
                         {"inputs", matrix_json(x)},
                         {"relative_error", case_worst}};
    }
  }
  o.detail = "max relative error " + fmt("%.3g", worst);
  return o;
}

Outcome fusion_identities() {
  Outcome o;
  Rng rng = Rng(14).split("verify/fusion");
  const pia::FusionConfig cfg;
  std::vector<AdapterStack> stacks;
  for (int k = 0; k < 4; ++k) stacks.push_back(init_adapters(rng, 8, 4, 2, 0.3));
  const std::vector<std::size_t> sizes = {1, 1, 1, 1};
  const AdapterStack anchor = pia::fedavg(stacks, sizes);

  const AdapterStack fused = pia::dynamic_integrate(stacks, anchor, 0.0, false);
  Vector mean(flatten(stacks[0]).size(), 0.0);
  for (const auto& s : stacks) {
    const Vector f = flatten(s);
    for (std::size_t i = 0; i < f.size(); ++i) mean[i] += f[i] / 4.0;
  }
  const double e_mean = max_abs_diff(flatten(fused), mean);
  ++o.cases;

  const std::vector<AdapterStack> same(3, stacks[0]);
  const std::vector<std::size_t> same_sizes = {5, 7, 9};
  const double e_fixed = max_abs_diff(flatten(pia::server_pia(same, same_sizes, cfg)), flatten(stacks[0]));
  ++o.cases;

  const std::vector<AdapterStack> one = {stacks[1]};
  const std::vector<std::size_t> one_size = {3};
  const double e_single = max_abs_diff(flatten(pia::server_pia(one, one_size, cfg)), flatten(stacks[1]));
  ++o.cases;

  o.passed = e_mean <= 1e-12 && e_fixed <= 1e-12 && e_single <= 1e-12;
  o.detail = "gamma=0 vs mean " + fmt("%.3g", e_mean) + ", fixed point " + fmt("%.3g", e_fixed) +
             ", single client " + fmt("%.3g", e_single);
  if (!o.passed) {
    o.failing_input = {{"stacks", json::array()}};
    for (const auto& s : stacks) o.failing_input["stacks"].push_back(stack_json(s));
  }
  return o;
}

fedsim::ExperimentConfig tiny_config() {
  fedsim::ExperimentConfig c;
  c.num_clients = 3;
  c.rounds = 3;
  c.local_steps = 8;
  c.base_lr = 1e-2;
  c.width = 8;
  c.bottleneck = 4;
  c.data.n_samples = 240;
  c.data.dim = 8;
  c.data.num_classes = 3;
  c.data.class_mask_sizes = {2, 3, 2};
  c.local_init = fedsim::LocalInit::kIndependent;
  c.adapter_std = 0.1;
  return c;
}

Outcome ablation_equivalence() {
  Outcome o;
  for (std::uint64_t seed : {0ULL, 1ULL}) {
    fedsim::ExperimentConfig ablated = tiny_config();
    ablated.method = fedsim::Method::kFedPia;
    ablated.server_pia_on = false;
    ablated.client_pia_on = false;
    ablated.fusion.lambda_merge = 0.0;
    fedsim::ExperimentConfig plain = tiny_config();
    plain.method = fedsim::Method::kFedAvgAdapters;
    const auto a = fedsim::run_experiment(ablated, seed);
    const auto b = fedsim::run_experiment(plain, seed);
    ++o.cases;
    bool same = a.rounds.size() == b.rounds.size() && a.final_global == b.final_global;
    for (std::size_t r = 0; same && r < a.rounds.size(); ++r) {
      const auto ra = round_record(fedsim::Method::kFedAvgAdapters, seed, a.rounds[r]);
      const auto rb = round_record(fedsim::Method::kFedAvgAdapters, seed, b.rounds[r]);
      same = ra.dump() == rb.dump();
    }
    if (!same && o.passed) {
      o.passed = false;
      o.failing_input = {{"config", config_to_json(plain)}, {"seed", seed}};
    }
  }
  o.detail = "fedpia without PIA and lambda_merge=0 vs fedavg_adapters, bitwise";
  return o;
}

Outcome sinkhorn_vs_exact() {
  Outcome o;
  Rng rng = Rng(15).split("verify/sinkhorn");
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Matrix cost = uniform_cost(rng, 6);
    const Vector mass = ot::uniform_mass(6);
    double mean = 0.0;
    for (double v : cost.values()) mean += v / 36.0;
    ot::SinkhornOptions opts;
    opts.epsilon = 0.005 * mean;
    opts.max_iters = 20000;
    const auto s = ot::solve_sinkhorn(cost, mass, mass, opts);
    const double exact = ot::solve_exact(cost, mass, mass).cost;
    const double gap = (s.plan.cost - exact) / exact;
    worst = std::max(worst, gap);
    ++o.cases;
    if (gap > 0.02 && o.passed) {
      o.passed = false;
      o.failing_input = {{"cost", matrix_json(cost)}, {"sinkhorn", s.plan.cost}, {"exact", exact}};
    }
  }
  o.detail = "max relative cost gap " + fmt("%.3g", worst);
  return o;
}

}  // namespace

int cmd_verify(const VerifyOptions& options, std::ostream& out, std::ostream& err) {
  std::optional<pia::testing::ScopedAlignmentFault> fault;
  if (options.inject_transposed_plan) fault.emplace(pia::testing::AlignmentFault::kTransposedPlan);

  const std::pair<const char*, std::function<Outcome()>> oracles[] = {
      {"ot_exact_vs_bruteforce", ot_bruteforce},
      {"planted_permutation", planted_permutation},
      {"gradient_check", gradient_check},
      {"fusion_identities", fusion_identities},
      {"ablation_equivalence", ablation_equivalence},
      {"sinkhorn_vs_exact", sinkhorn_vs_exact},
  };
  std::size_t passed = 0;
  for (const auto& [name, run] : oracles) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o.passed = false;
      o.detail = std::string("threw: ") + e.what();
    }
    out << (o.passed ? "PASS " : "FAIL ") << name << " (" << o.cases << " cases): " << o.detail << "\n";
    if (o.passed) {
      ++passed;
    } else if (!o.failing_input.is_null()) {
      err << "failing input for " << name << ":\n" << o.failing_input.dump() << "\n";
    }
  }
  out << passed << "/" << std::size(oracles) << " oracles passed\n";
  return passed == std::size(oracles) ? 0 : 1;
}

}  // namespace fedpia::cli

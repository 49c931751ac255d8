// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedpia/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fedpia/errors.hpp"

namespace fedpia::ot {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Remaining supply/demand/flow below this is treated as exhausted.
constexpr double kMassEps = 1e-14;

double sum(const Vector& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

void check_problem(const Matrix& cost, const Vector& alpha, const Vector& beta) {
  if (cost.rows() != alpha.size() || cost.cols() != beta.size()) {
    throw ShapeError("transport problem: cost is " + std::to_string(cost.rows()) + "x" +
                     std::to_string(cost.cols()) + " but marginals have sizes " +
                     std::to_string(alpha.size()) + " and " + std::to_string(beta.size()));
  }
  if (alpha.empty() || beta.empty()) throw DataError("transport problem with an empty measure");
  for (double c : cost.values()) {
    if (!std::isfinite(c) || c < 0.0) throw NumericError("ground cost must be finite and >= 0");
  }
  for (const Vector* v : {&alpha, &beta}) {
    for (double x : *v) {
      if (!std::isfinite(x) || x < 0.0) throw NumericError("marginal entries must be >= 0");
    }
  }
  if (std::abs(sum(alpha) - sum(beta)) > 1e-9) {
    throw NumericError("infeasible marginals: masses sum to " + std::to_string(sum(alpha)) +
                       " and " + std::to_string(sum(beta)));
  }
}

bool is_uniform(const Vector& v, std::size_t n) {
  const double u = 1.0 / static_cast<double>(n);
  return std::all_of(v.begin(), v.end(), [u](double x) { return std::abs(x - u) <= 1e-15; });
}

// Transportation problem by successive shortest paths. Reverse arcs carry
// negative costs, so shortest paths use Bellman-Ford.
Matrix transport_ssp(const Matrix& cost, const Vector& alpha, const Vector& beta) {
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();
  const std::size_t nodes = n + m;
  Matrix flow(n, m);
  Vector supply = alpha;
  Vector demand = beta;

  std::vector<double> dist(nodes);
  std::vector<std::size_t> parent(nodes);
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  const std::size_t max_augmentations = 16 * nodes * nodes + 64;

  for (std::size_t iter = 0;; ++iter) {
    if (iter > max_augmentations) throw NumericError("transport solver failed to terminate");
    bool any_supply = false;
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(parent.begin(), parent.end(), kNone);
    for (std::size_t i = 0; i < n; ++i) {
      if (supply[i] > kMassEps) {
        dist[i] = 0.0;
        any_supply = true;
      }
    }
    if (!any_supply) break;

    for (std::size_t pass = 0; pass < nodes; ++pass) {
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const std::size_t col = n + j;
          if (dist[i] < kInf && dist[i] + cost(i, j) < dist[col] - 1e-12) {
            dist[col] = dist[i] + cost(i, j);
            parent[col] = i;
            changed = true;
          }
          if (flow(i, j) > kMassEps && dist[col] < kInf &&
              dist[col] - cost(i, j) < dist[i] - 1e-12) {
            dist[i] = dist[col] - cost(i, j);
            parent[i] = col;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }

    std::size_t target = kNone;
    for (std::size_t j = 0; j < m; ++j) {
      if (demand[j] > kMassEps && dist[n + j] < kInf &&
          (target == kNone || dist[n + j] < dist[target])) {
        target = n + j;
      }
    }
    if (target == kNone) throw NumericError("transport solver: unmet demand is unreachable");

    double delta = demand[target - n];
    std::size_t v = target;
    std::size_t source = kNone;
    while (true) {
      const std::size_t u = parent[v];  // v is a column: u is a row
      if (v >= n) {
        const std::size_t row = u;
        if (parent[row] == kNone) {
          source = row;
          break;
        }
        v = row;
      } else {
        // v is a row reached through a reverse arc from column u.
        delta = std::min(delta, flow(v, u - n));
        v = u;
      }
    }
    delta = std::min(delta, supply[source]);

    v = target;
    while (true) {
      const std::size_t u = parent[v];
      if (v >= n) {
        flow(u, v - n) += delta;
        if (parent[u] == kNone) break;
        v = u;
      } else {
        flow(v, u - n) -= delta;
        v = u;
      }
    }
    supply[source] -= delta;
    demand[target - n] -= delta;
  }
  for (double& f : flow.values()) f = std::max(f, 0.0);
  return flow;
}

// Returns log(sum_k exp(x_k)); -inf for an empty or all -inf input.
double log_sum_exp(const std::vector<double>& x) {
  double hi = -kInf;
  for (double v : x) hi = std::max(hi, v);
  if (hi == -kInf) return -kInf;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

}  // namespace

Vector uniform_mass(std::size_t n) {
  if (n == 0) throw DataError("uniform mass over zero neurons");
  return Vector(n, 1.0 / static_cast<double>(n));
}

NeuronMeasure NeuronMeasure::uniform(Matrix support) {
  NeuronMeasure m{uniform_mass(support.rows()), std::move(support)};
  return m;
}

void NeuronMeasure::validate() const {
  if (mass.size() != support.rows()) throw DataError("measure: mass/support size mismatch");
  for (double x : mass) {
    if (!(x >= 0.0)) throw DataError("measure: negative mass");
  }
  if (std::abs(sum(mass) - 1.0) > 1e-12) throw DataError("measure: masses do not sum to 1");
}

Matrix ground_cost(const NeuronMeasure& from, const NeuronMeasure& to) {
  return pairwise_euclidean(from.support, to.support);
}

double transport_cost(const Matrix& plan, const Matrix& cost) {
  if (plan.rows() != cost.rows() || plan.cols() != cost.cols()) {
    throw ShapeError("transport_cost: plan and cost shapes differ");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < plan.size(); ++k) total += plan.values()[k] * cost.values()[k];
  return total;
}

std::vector<std::size_t> solve_assignment(const Matrix& cost) {
  const std::size_t n = cost.rows();
  if (cost.cols() != n) throw ShapeError("assignment needs a square cost matrix");
  // Shortest augmenting path with dual potentials (1-based, column 0 is a
  // virtual start). Strict comparisons keep the lowest column on ties.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = match[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
  return row_to_col;
}

TransportPlan solve_exact(const Matrix& cost, const Vector& alpha, const Vector& beta) {
  check_problem(cost, alpha, beta);
  TransportPlan result;
  result.row_marginal = alpha;
  result.col_marginal = beta;
  const std::size_t n = cost.rows();
  if (n == cost.cols() && is_uniform(alpha, n) && is_uniform(beta, n)) {
    const auto assignment = solve_assignment(cost);
    result.plan = Matrix(n, n);
    const double mass = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) result.plan(i, assignment[i]) = mass;
  } else {
    result.plan = transport_ssp(cost, alpha, beta);
  }
  result.cost = transport_cost(result.plan, cost);
  return result;
}

SinkhornResult solve_sinkhorn(const Matrix& cost, const Vector& alpha, const Vector& beta,
                              const SinkhornOptions& options) {
  check_problem(cost, alpha, beta);
  const std::size_t n = cost.rows();
  const std::size_t m = cost.cols();

  SinkhornResult out;
  double eps = 0.0;
  if (options.epsilon) {
    eps = *options.epsilon;
  } else {
    const double mean = sum(Vector(cost.values().begin(), cost.values().end())) /
                        static_cast<double>(cost.size());
    eps = 0.01 * mean;
  }
  if (!(eps > 0.0)) {
    // A zero-mean cost means every coupling is optimal; any eps works.
    if (!options.epsilon && eps == 0.0) {
      eps = 1.0;
    } else {
      throw UsageError("sinkhorn: epsilon must be positive");
    }
  }
  out.epsilon = eps;

  std::vector<double> log_a(n), log_b(m);
  for (std::size_t i = 0; i < n; ++i) log_a[i] = alpha[i] > 0.0 ? std::log(alpha[i]) : -kInf;
  for (std::size_t j = 0; j < m; ++j) log_b[j] = beta[j] > 0.0 ? std::log(beta[j]) : -kInf;

  // Dual potentials f, g: plan(i, j) = exp((f_i + g_j - C_ij) / eps).
  std::vector<double> f(n, 0.0), g(m, 0.0), scratch(std::max(n, m));
  auto row_violation = [&]() {
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < m; ++j) row += std::exp((f[i] + g[j] - cost(i, j)) / eps);
      err += std::abs(row - alpha[i]);
    }
    return err;
  };

  int it = 0;
  double err = kInf;
  for (; it < options.max_iters; ++it) {
    scratch.resize(m);
    for (std::size_t i = 0; i < n; ++i) {
      if (log_a[i] == -kInf) {
        f[i] = -kInf;
        continue;
      }
      for (std::size_t j = 0; j < m; ++j) scratch[j] = (g[j] - cost(i, j)) / eps;
      f[i] = eps * (log_a[i] - log_sum_exp(scratch));
    }
    scratch.resize(n);
    for (std::size_t j = 0; j < m; ++j) {
      if (log_b[j] == -kInf) {
        g[j] = -kInf;
        continue;
      }
      for (std::size_t i = 0; i < n; ++i) scratch[i] = (f[i] - cost(i, j)) / eps;
      g[j] = eps * (log_b[j] - log_sum_exp(scratch));
    }
    err = row_violation();
    if (err < options.tol) {
      ++it;
      out.converged = true;
      break;
    }
  }
  out.iterations = it;
  out.marginal_error = err;

  Matrix plan(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double e = (f[i] + g[j] - cost(i, j)) / eps;
      plan(i, j) = e == -kInf ? 0.0 : std::exp(e);
    }
  }

  // Feasibility rounding: shrink overfull rows and columns, then spread the
  // remaining row and column deficits as a rank-one correction.
  Vector rows = plan.row_sums();
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i] > alpha[i]) {
      const double s = alpha[i] / rows[i];
      for (std::size_t j = 0; j < m; ++j) plan(i, j) *= s;
    }
  }
  Vector cols = plan.column_sums();
  for (std::size_t j = 0; j < m; ++j) {
    if (cols[j] > beta[j]) {
      const double s = beta[j] / cols[j];
      for (std::size_t i = 0; i < n; ++i) plan(i, j) *= s;
    }
  }
  rows = plan.row_sums();
  cols = plan.column_sums();
  Vector err_r(n), err_c(m);
  double err_norm = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    err_r[i] = std::max(alpha[i] - rows[i], 0.0);
    err_norm += err_r[i];
  }
  for (std::size_t j = 0; j < m; ++j) err_c[j] = std::max(beta[j] - cols[j], 0.0);
  if (err_norm > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) plan(i, j) += err_r[i] * err_c[j] / err_norm;
    }
  }

  out.plan.plan = std::move(plan);
  out.plan.row_marginal = alpha;
  out.plan.col_marginal = beta;
  out.plan.cost = transport_cost(out.plan.plan, cost);
  return out;
}

Matrix plan_to_alignment(const TransportPlan& plan) {
  const Matrix& p = plan.plan;
  if (plan.col_marginal.size() != p.cols()) throw ShapeError("plan_to_alignment: bad marginal");
  Matrix out(p.cols(), p.rows());
  for (std::size_t j = 0; j < p.cols(); ++j) {
    const double beta = plan.col_marginal[j];
    if (!(beta > 0.0)) throw NumericError("plan_to_alignment: zero column marginal");
    for (std::size_t i = 0; i < p.rows(); ++i) out(j, i) = p(i, j) / beta;
  }
  return out;
}

Matrix incoming_adjustment(const TransportPlan& plan) { return plan_to_alignment(plan).transpose(); }

Matrix weight_support(const AdapterLayer& layer, WeightSide side, const Matrix& adjustment) {
  // Neuron rows: transpose of the (in x out) weight.
  const Matrix& w = side == WeightSide::kDown ? layer.w_down : layer.w_up;
  const Vector& bias = side == WeightSide::kDown ? layer.b_down : layer.b_up;
  if (adjustment.rows() != w.rows() || adjustment.cols() != w.rows()) {
    throw ShapeError("weight_support: adjustment must be " + std::to_string(w.rows()) + "x" +
                     std::to_string(w.rows()));
  }
  const Matrix rows = matmul_tn(w, adjustment);  // w^T * adjustment
  Matrix support(rows.rows(), rows.cols() + 1);
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    auto src = rows.row(i);
    std::copy(src.begin(), src.end(), support.row(i).begin());
    support(i, rows.cols()) = bias[i];
  }
  return support;
}

Matrix activation_support(const ActivationCache& cache, std::size_t layer_index,
                          ActivationMode mode) {
  if (layer_index >= cache.layers.size()) throw ShapeError("activation_support: no such layer");
  const Matrix& acts = cache.layers[layer_index].bottleneck_pre;  // samples x neurons
  if (acts.rows() == 0) throw DataError("activation_support: empty probe batch");
  if (mode == ActivationMode::kPerSample) return acts.transpose();
  Vector mean = acts.column_sums();
  for (double& x : mean) x /= static_cast<double>(acts.rows());
  return Matrix::column(mean);
}

}  // namespace fedpia::ot

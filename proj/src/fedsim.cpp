// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedpia/fedsim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "fedpia/errors.hpp"

namespace fedpia::fedsim {

namespace {

constexpr std::string_view kMethodNames[] = {"fedpia", "fedavg_adapters", "local_only",
                                             "full_finetune", "classifier_only"};

std::string client_label(std::string_view what, std::size_t k) {
  return "client/" + std::to_string(k) + "/" + std::string(what);
}

TrainScope scope_for(Method m) {
  switch (m) {
    case Method::kFullFinetune:
      return {true, true, true};
    case Method::kClassifierOnly:
      return {false, true, false};
    default:
      return {true, true, false};
  }
}

double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

Matrix probe_batch(const ClientState& client, std::uint64_t seed, std::size_t round,
                   std::size_t m_probe) {
  Rng rng = Rng(seed).split(client_label("probe/" + std::to_string(round), client.id));
  auto order = rng.permutation(client.train.size());
  order.resize(std::min(m_probe, order.size()));
  std::sort(order.begin(), order.end());
  return client.train.features.gather_rows(order);
}

std::vector<std::size_t> next_batch(ClientState& client, std::size_t batch_size) {
  const std::size_t n = client.train.size();
  std::vector<std::size_t> rows;
  rows.reserve(std::min(batch_size, n));
  while (rows.size() < std::min(batch_size, n)) {
    if (client.cursor >= client.order.size()) {
      client.order = client.rng.permutation(n);
      client.cursor = 0;
    }
    rows.push_back(client.order[client.cursor++]);
  }
  return rows;
}

}  // namespace

std::string_view method_name(Method m) { return kMethodNames[static_cast<int>(m)]; }

Method parse_method(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kMethodNames); ++i) {
    if (kMethodNames[i] == name) return static_cast<Method>(i);
  }
  throw ConfigError("unknown method '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
  if (num_clients < 1) throw ConfigError("num_clients must be >= 1");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (local_steps < 1) throw ConfigError("local_steps must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ConfigError("lr must be >= 0");
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) throw ConfigError("warmup_frac must lie in [0, 1]");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (width < 1 || bottleneck < 1 || depth < 1) throw ConfigError("model sizes must be >= 1");
  if (!(adapter_std >= 0.0)) throw ConfigError("adapter_std must be >= 0");
  fusion.validate();
  if (data.source != "synthetic" && data.source != "tabular") {
    throw ConfigError("data source must be 'synthetic' or 'tabular', got '" + data.source + "'");
  }
  if (!(data.concentration > 0.0)) throw ConfigError("concentration must be > 0");
  if (!(data.dataset_fraction > 0.0 && data.dataset_fraction <= 1.0)) {
    throw ConfigError("dataset_fraction must lie in (0, 1]");
  }
  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in (0, 1)");
  }
  if (!(data.feature_shift >= 0.0)) throw ConfigError("feature_shift must be >= 0");
  if (!data.client_kinds.empty() && data.client_kinds.size() != num_clients) {
    throw ConfigError("client_kinds needs one entry per client");
  }
  if (!data.class_mask_sizes.empty() && data.class_mask_sizes.size() != num_clients) {
    throw ConfigError("class_mask_sizes needs one entry per client");
  }
  if (data.source == "tabular") {
    if (data.tabular_path.empty()) throw ConfigError("tabular source needs a path");
    if (!data.client_kinds.empty()) throw ConfigError("client_kinds applies to synthetic data only");
  }
}

std::vector<std::string_view> benchmark_names() { return {"hetero_label", "hetero_task"}; }

ExperimentConfig benchmark_config(std::string_view name) {
  ExperimentConfig c;
  c.num_clients = 5;
  c.rounds = 30;
  c.local_steps = 50;
  c.base_lr = 3e-3;
  c.adapter_std = 0.1;
  c.local_init = LocalInit::kIndependent;
  c.fusion.activation_mode = ot::ActivationMode::kPerSample;
  c.fusion.m_probe = 64;
  c.fusion.normalize_weights = true;
  c.seeds = {0, 1, 2, 3, 4};
  c.data.n_samples = 600;
  c.data.num_classes = 6;
  c.data.concentration = 0.5;
  if (name == "hetero_label") {
    c.data.class_mask_sizes = {2, 3, 4, 5, 6};
    c.data.feature_shift = 1.0;
    return c;
  }
  if (name == "hetero_task") {
    using enum TaskKind;
    c.data.client_kinds = {kSingleLabel, kSingleLabel, kSingleLabel, kMultiLabel, kMultiLabel};
    return c;
  }
  throw ConfigError("unknown benchmark '" + std::string(name) + "'");
}

EvalResult evaluate_predictions(const Matrix& logits, const Labels& labels) {
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  if (n == 0) throw DataError("evaluate: empty split");
  if (labels.size() != n) throw ShapeError("evaluate: label/logit row mismatch");
  std::vector<std::size_t> tp(c, 0), fp(c, 0), fn(c, 0);
  std::size_t correct = 0;
  std::size_t total = 0;
  if (labels.kind == TaskKind::kSingleLabel) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = logits.row(i);
      const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      const auto truth = static_cast<std::size_t>(labels.index[i]);
      if (pred == truth) {
        ++correct;
        ++tp[truth];
      } else {
        ++fp[pred];
        ++fn[truth];
      }
    }
    total = n;
  } else {
    if (labels.multi_hot.cols() != c) throw ShapeError("evaluate: label/logit column mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const bool pred = logits(i, j) > 0.0;  // sigmoid > 0.5
        const bool truth = labels.multi_hot(i, j) != 0.0;
        if (pred == truth) ++correct;
        if (pred && truth) ++tp[j];
        if (pred && !truth) ++fp[j];
        if (!pred && truth) ++fn[j];
      }
    }
    total = n * c;
  }
  double f1_sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t j = 0; j < c; ++j) {
    const std::size_t denom = 2 * tp[j] + fp[j] + fn[j];
    if (denom == 0) continue;
    f1_sum += 2.0 * static_cast<double>(tp[j]) / static_cast<double>(denom);
    ++counted;
  }
  EvalResult r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  r.macro_f1 = counted == 0 ? 1.0 : f1_sum / static_cast<double>(counted);
  return r;
}

EvalResult evaluate(const ClientState& client, const data::Dataset& split) {
  if (split.size() == 0) throw DataError("evaluate: empty split");
  const ForwardResult fwd = forward(client.backbone, client.adapters, client.head, split.features);
  return evaluate_predictions(fwd.logits, split.labels);
}

double training_loss(const ClientState& client) {
  if (client.train.size() == 0) throw DataError("training_loss: empty partition");
  const ForwardResult fwd =
      forward(client.backbone, client.adapters, client.head, client.train.features);
  return compute_loss(fwd.logits, client.train.labels);
}

std::vector<double> local_train(ClientState& client, std::size_t steps, std::size_t batch_size,
                                const LrSchedule& schedule, const TrainScope& scope) {
  if (steps < 1) throw UsageError("local_train: steps must be >= 1");
  if (client.train.size() == 0) throw DataError("local_train: empty partition");
  if (batch_size < 1) throw UsageError("local_train: batch_size must be >= 1");
  std::vector<double> losses;
  losses.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const auto rows = next_batch(client, batch_size);
    const Matrix batch = client.train.features.gather_rows(rows);
    const Labels targets = client.train.labels.subset(rows);
    const ForwardResult fwd = forward(client.backbone, client.adapters, client.head, batch);
    LossResult lr = loss_and_backward(fwd.logits, targets, fwd.cache, client.backbone,
                                      client.adapters, client.head, scope.backbone);
    losses.push_back(lr.loss);

    std::vector<std::span<double>> params;
    std::vector<std::span<const double>> grads;
    auto add = [&](auto&& p, auto&& g) {
      params.insert(params.end(), p.begin(), p.end());
      grads.insert(grads.end(), g.begin(), g.end());
    };
    if (scope.adapters) {
      add(parameter_views(client.adapters),
          parameter_views(static_cast<const AdapterStack&>(lr.grads.adapters)));
    }
    if (scope.head) {
      add(parameter_views(client.head),
          parameter_views(static_cast<const ClassifierHead&>(lr.grads.head)));
    }
    if (scope.backbone) {
      add(parameter_views(client.backbone),
          parameter_views(static_cast<const Backbone&>(*lr.grads.backbone)));
    }
    const double rate =
        lr_at(client.steps_done, schedule.total_steps, schedule.base_lr, schedule.warmup_frac);
    adamw_step(client.optimizer, params, grads, rate);
    ++client.steps_done;
  }
  return losses;
}

double spike_score(std::span<const RoundMetrics> rounds) {
  if (rounds.size() < 2) throw UsageError("spike_score: need at least 2 rounds");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 1; r < rounds.size(); ++r) {
    const auto& prev = rounds[r - 1].clients;
    const auto& cur = rounds[r].clients;
    if (prev.size() != cur.size()) throw ShapeError("spike_score: client count changed");
    for (std::size_t k = 0; k < cur.size(); ++k) {
      acc += cur[k].loss_start - prev[k].loss_end;
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

Federation setup_federation(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  const DataConfig& dc = config.data;
  const Rng root(seed);
  const std::size_t k_clients = config.num_clients;

  std::vector<TaskKind> kinds = dc.client_kinds;
  std::vector<data::Dataset> pool;  // one full dataset per task kind in use
  std::vector<TaskKind> pool_kinds;
  if (dc.source == "tabular") {
    pool.push_back(data::load_tabular(dc.tabular_path, dc.schema));
    pool_kinds.push_back(pool.back().kind());
  } else {
    if (kinds.empty()) kinds.assign(k_clients, dc.kind);
    for (TaskKind kind : {TaskKind::kSingleLabel, TaskKind::kMultiLabel}) {
      if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) continue;
      data::SyntheticSpec spec;
      spec.seed = seed;
      spec.geometry_seed = dc.geometry_seed.value_or(seed);
      spec.n_samples = dc.n_samples;
      spec.dim = dc.dim;
      spec.num_classes = dc.num_classes;
      spec.kind = kind;
      spec.margin = dc.margin;
      pool.push_back(data::gen_synthetic(spec));
      pool_kinds.push_back(kind);
    }
  }
  if (kinds.empty()) kinds.assign(k_clients, pool_kinds.front());

  data::PartitionSpec part;
  part.num_clients = k_clients;
  part.concentration = dc.concentration;
  part.seed = seed;
  part.feature_shift = dc.feature_shift;
  if (!dc.class_mask_sizes.empty()) {
    Rng mask_rng = root.split("class-masks");
    part.class_masks = data::random_class_masks(mask_rng, pool.front().num_classes, dc.class_mask_sizes);
  }
  // Datasets generated from the same seed share features and strata, so
  // their partitions coincide and each client can take its own task kind.
  std::vector<std::vector<data::Dataset>> partitions;
  for (const auto& ds : pool) partitions.push_back(data::dirichlet_partition(ds, part));

  Federation fed;
  fed.config = config;
  fed.seed = seed;
  Rng backbone_rng = root.split("backbone");
  fed.backbone = init_backbone(backbone_rng, pool.front().dim(), config.width, config.depth);
  Rng global_rng = root.split("global-adapters");
  fed.global = init_adapters(global_rng, config.width, config.bottleneck, config.depth,
                             config.adapter_std);

  for (std::size_t k = 0; k < k_clients; ++k) {
    const auto which = static_cast<std::size_t>(
        std::find(pool_kinds.begin(), pool_kinds.end(), kinds[k]) - pool_kinds.begin());
    const data::Dataset& full = partitions.at(which)[k];
    Rng split_rng = root.split(client_label("split", k));
    auto [train, test] = data::train_test_split(full, dc.test_fraction, split_rng);
    Rng fraction_rng = root.split(client_label("fraction", k));
    train = data::take_fraction(train, dc.dataset_fraction, fraction_rng);

    ClientState c;
    c.id = k;
    c.train = std::move(train);
    c.test = std::move(test);
    c.backbone = fed.backbone;
    if (config.local_init == LocalInit::kShared || config.method == Method::kClassifierOnly) {
      c.adapters = fed.global;
    } else {
      Rng init_rng = root.split(client_label("adapters", k));
      c.adapters = init_adapters(init_rng, config.width, config.bottleneck, config.depth,
                                 config.adapter_std);
    }
    Rng head_rng = root.split(client_label("head", k));
    c.head = init_head(head_rng, config.width, c.train.num_classes, c.train.kind());
    c.optimizer.weight_decay = config.weight_decay;
    c.rng = root.split(client_label("train", k));
    fed.clients.push_back(std::move(c));
  }
  return fed;
}

AdapterStack aggregate(std::span<const Upload> uploads, const ExperimentConfig& config) {
  if (uploads.empty()) throw UsageError("aggregate: no uploads");
  std::vector<AdapterStack> stacks;
  std::vector<std::size_t> sizes;
  for (const auto& u : uploads) {
    stacks.push_back(u.adapters);
    sizes.push_back(u.num_samples);
  }
  if (config.method == Method::kFedPia && config.server_pia_on) {
    return pia::server_pia(stacks, sizes, config.fusion);
  }
  return pia::fedavg(stacks, sizes);
}

Backbone aggregate_backbones(std::span<const Upload> uploads) {
  if (uploads.empty() || !uploads.front().backbone) throw UsageError("aggregate: no backbones");
  double total = 0.0;
  for (const auto& u : uploads) {
    if (!u.backbone) throw UsageError("aggregate: missing backbone upload");
    total += static_cast<double>(u.num_samples);
  }
  Backbone out = *uploads.front().backbone;
  auto dst = parameter_views(out);
  std::vector<std::vector<std::span<const double>>> src;
  for (const auto& u : uploads) src.push_back(parameter_views(*u.backbone));
  std::vector<double> terms(uploads.size());
  for (std::size_t t = 0; t < dst.size(); ++t) {
    for (std::size_t i = 0; i < dst[t].size(); ++i) {
      for (std::size_t k = 0; k < uploads.size(); ++k) {
        terms[k] = static_cast<double>(uploads[k].num_samples) / total * src[k][t][i];
      }
      std::sort(terms.begin(), terms.end());
      double acc = 0.0;
      for (double x : terms) acc += x;
      dst[t][i] = acc;
    }
  }
  return out;
}

RoundMetrics run_round(Federation& fed, std::size_t round) {
  const ExperimentConfig& cfg = fed.config;
  const auto start = std::chrono::steady_clock::now();
  const TrainScope scope = scope_for(cfg.method);
  const LrSchedule schedule{static_cast<std::int64_t>(cfg.rounds * cfg.local_steps), cfg.base_lr,
                            cfg.warmup_frac};
  const bool exchanges = cfg.method == Method::kFedPia || cfg.method == Method::kFedAvgAdapters ||
                         cfg.method == Method::kFullFinetune;

  RoundMetrics metrics;
  metrics.round = round;
  std::vector<Upload> uploads;
  for (ClientState& client : fed.clients) {
    switch (cfg.method) {
      case Method::kFedPia:
        if (cfg.client_pia_on) {
          const Matrix probe = probe_batch(client, fed.seed, round, cfg.fusion.m_probe);
          client.adapters =
              pia::client_pia(fed.global, client.adapters, client.backbone, probe, cfg.fusion);
        } else {
          client.adapters = pia::merge_stacks(client.adapters, fed.global, cfg.fusion.lambda_merge);
        }
        break;
      case Method::kFedAvgAdapters:
        client.adapters = fed.global;
        break;
      case Method::kFullFinetune:
        client.adapters = fed.global;
        client.backbone = fed.backbone;
        break;
      case Method::kLocalOnly:
      case Method::kClassifierOnly:
        break;
    }

    ClientRoundMetrics cm;
    cm.client = client.id;
    cm.loss_start = training_loss(client);
    local_train(client, cfg.local_steps, cfg.batch_size, schedule, scope);
    cm.loss_end = training_loss(client);
    const EvalResult eval = evaluate(client, client.test);
    cm.accuracy = eval.accuracy;
    cm.macro_f1 = eval.macro_f1;
    if (!std::isfinite(cm.loss_start) || !std::isfinite(cm.loss_end)) {
      throw NumericError("client " + std::to_string(client.id) + " loss diverged in round " +
                         std::to_string(round));
    }
    metrics.clients.push_back(cm);

    if (exchanges) {
      Upload u;
      u.adapters = client.adapters;
      u.num_samples = client.train.size();
      if (cfg.method == Method::kFullFinetune) u.backbone = client.backbone;
      uploads.push_back(std::move(u));
    }
  }

  if (exchanges) {
    fed.global = aggregate(uploads, cfg);
    if (cfg.method == Method::kFullFinetune) fed.backbone = aggregate_backbones(uploads);
  }

  std::vector<double> ls, le, acc, f1;
  for (const auto& c : metrics.clients) {
    ls.push_back(c.loss_start);
    le.push_back(c.loss_end);
    acc.push_back(c.accuracy);
    f1.push_back(c.macro_f1);
  }
  metrics.mean_loss_start = mean_of(ls);
  metrics.mean_loss_end = mean_of(le);
  metrics.mean_accuracy = mean_of(acc);
  metrics.mean_macro_f1 = mean_of(f1);
  metrics.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return metrics;
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                                const RoundCallback& on_round) {
  Federation fed = setup_federation(config, seed);
  ExperimentResult result;
  result.method = config.method;
  result.seed = seed;
  for (std::size_t r = 1; r <= config.rounds; ++r) {
    result.rounds.push_back(run_round(fed, r));
    if (on_round) on_round(result.rounds.back());
  }
  result.final_global = fed.global;
  result.final_accuracy = result.rounds.back().mean_accuracy;
  result.final_macro_f1 = result.rounds.back().mean_macro_f1;
  result.spike = result.rounds.size() >= 2 ? spike_score(result.rounds) : 0.0;
  return result;
}

}  // namespace fedpia::fedsim

// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Federated simulation: clients with private heads and data, a server that
// only ever sees uploaded adapter stacks, and the round loop tying them
// together for each method.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedpia/data.hpp"
#include "fedpia/model.hpp"
#include "fedpia/pia.hpp"

namespace fedpia::fedsim {

enum class Method {
  kFedPia,
  kFedAvgAdapters,
  kLocalOnly,
  kFullFinetune,    // backbone and adapters trained and averaged
  kClassifierOnly,  // heads only; adapters stay at their initialization
};

std::string_view method_name(Method m);
// Throws ConfigError on an unknown name.
Method parse_method(std::string_view name);

enum class LocalInit {
  kShared,       // every client starts from the global initialization
  kIndependent,  // every client draws its own adapter initialization
};

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "tabular"
  std::size_t n_samples = 1000;
  std::size_t dim = 16;
  std::size_t num_classes = 4;
  TaskKind kind = TaskKind::kSingleLabel;
  double margin = 3.0;
  // Seed for cluster geometry; unset follows the experiment seed.
  std::optional<std::uint64_t> geometry_seed;
  // Per-client task kind for synthetic data; empty means `kind` everywhere.
  std::vector<TaskKind> client_kinds;
  double concentration = 0.5;
  // Per-client class mask sizes; empty disables masks.
  std::vector<std::size_t> class_mask_sizes;
  double feature_shift = 0.0;
  double test_fraction = 0.2;
  double dataset_fraction = 1.0;  // fraction of each client's training split kept
  // Tabular source.
  std::filesystem::path tabular_path;
  data::TabularSchema schema;
};

struct ExperimentConfig {
  Method method = Method::kFedPia;
  std::vector<Method> baselines;  // extra methods run alongside `method`
  std::size_t num_clients = 5;
  std::size_t rounds = 30;
  std::size_t local_steps = 100;
  std::size_t batch_size = 16;
  double base_lr = 1e-4;
  double warmup_frac = 0.1;
  double weight_decay = 0.01;
  pia::FusionConfig fusion;
  bool server_pia_on = true;
  bool client_pia_on = true;
  std::vector<std::uint64_t> seeds = {0};
  // Model.
  std::size_t width = 16;
  std::size_t bottleneck = 8;
  std::size_t depth = 2;
  double adapter_std = 0.01;
  LocalInit local_init = LocalInit::kShared;
  DataConfig data;

  // Throws ConfigError on inconsistent or out-of-range settings.
  void validate() const;
};

struct ClientState {
  std::size_t id = 0;
  data::Dataset train;
  data::Dataset test;
  Backbone backbone;  // frozen copy unless the method fine-tunes it
  AdapterStack adapters;
  ClassifierHead head;
  OptimizerState optimizer;
  Rng rng{0};
  // Minibatch order: a fresh permutation of the training rows per epoch.
  std::vector<std::size_t> order;
  std::size_t cursor = 0;
  std::int64_t steps_done = 0;

  std::size_t num_classes() const { return head.num_classes(); }
};

// The only thing a client sends to the server.
struct Upload {
  AdapterStack adapters;
  std::size_t num_samples = 0;
  // Only for full fine-tuning, where the backbone is part of the shared model.
  std::optional<Backbone> backbone;
};

struct ClientRoundMetrics {
  std::size_t client = 0;
  double loss_start = 0.0;  // training loss after receiving the global stack
  double loss_end = 0.0;    // training loss after local training
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

struct RoundMetrics {
  std::size_t round = 0;  // 1-based
  std::vector<ClientRoundMetrics> clients;
  double mean_loss_start = 0.0;
  double mean_loss_end = 0.0;
  double mean_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
  double wall_seconds = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

// Single-label: argmax accuracy and macro-F1 over classes. Multilabel:
// per-label accuracy at threshold 0.5 and macro-F1 over classes. Classes with
// no true or predicted positives are left out of the macro average. Throws
// DataError on an empty split.
EvalResult evaluate_predictions(const Matrix& logits, const Labels& labels);
EvalResult evaluate(const ClientState& client, const data::Dataset& split);

// Mean training-split loss for the client's current parameters.
double training_loss(const ClientState& client);

struct LrSchedule {
  std::int64_t total_steps = 1;
  double base_lr = 1e-4;
  double warmup_frac = 0.1;
};

struct TrainScope {
  bool adapters = true;
  bool head = true;
  bool backbone = false;
};

// AdamW over `steps` minibatches. Returns the loss of every step.
std::vector<double> local_train(ClientState& client, std::size_t steps, std::size_t batch_size,
                                const LrSchedule& schedule, const TrainScope& scope = {});

// Mean over rounds >= 2 and clients of loss_start minus the previous round's
// loss_end. Throws UsageError with fewer than 2 rounds.
double spike_score(std::span<const RoundMetrics> rounds);

struct Federation {
  ExperimentConfig config;
  std::uint64_t seed = 0;
  Backbone backbone;  // the shared frozen backbone
  AdapterStack global;
  std::vector<ClientState> clients;
};

// Built-in benchmarks, K = 5 clients with Dirichlet(0.5) partitions.
//   hetero_label: single-label, class masks of sizes 2..6 over 6 classes and
//                 per-client feature shift.
//   hetero_task:  three single-label and two multilabel clients.
// Throws ConfigError on an unknown name.
ExperimentConfig benchmark_config(std::string_view name);
std::vector<std::string_view> benchmark_names();

// Builds client datasets, the backbone, the global stack and client state.
Federation setup_federation(const ExperimentConfig& config, std::uint64_t seed);

// Server step on the uploaded stacks alone: server PIA for fedpia (FedAvg
// when server_pia_on is off), FedAvg for every other method.
AdapterStack aggregate(std::span<const Upload> uploads, const ExperimentConfig& config);
// Size-weighted average of uploaded backbones (full fine-tuning).
Backbone aggregate_backbones(std::span<const Upload> uploads);

// One communication round (1-based index) for config.method.
RoundMetrics run_round(Federation& fed, std::size_t round);

struct ExperimentResult {
  Method method = Method::kFedPia;
  std::uint64_t seed = 0;
  std::vector<RoundMetrics> rounds;
  AdapterStack final_global;
  double final_accuracy = 0.0;
  double final_macro_f1 = 0.0;
  double spike = 0.0;  // 0 with a single round
};

// Called after every round, e.g. to stream metrics.
using RoundCallback = std::function<void(const RoundMetrics&)>;

ExperimentResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                                const RoundCallback& on_round = {});

}  // namespace fedpia::fedsim

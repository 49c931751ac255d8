// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedpia/fedsim.hpp"

namespace fedpia::cli {

inline constexpr const char* kCodeVersion = "fedpia 0.1.0";

// Experiment configs are flat JSON objects. Every key is optional; missing
// keys keep their defaults (lr 1e-4, batch 16, 30 rounds, warmup 0.1, weight
// decay 0.01, concentration 0.5). "benchmark" selects a built-in preset that
// the remaining keys then override. Unknown keys and wrong value types throw
// ConfigError naming the key. Relative paths resolve against `base_dir`.
fedsim::ExperimentConfig config_from_json(const nlohmann::json& j,
                                          const std::filesystem::path& base_dir = {});
// Throws ConfigError if the file is missing or not valid JSON.
fedsim::ExperimentConfig parse_config(const std::filesystem::path& path);
nlohmann::json load_json(const std::filesystem::path& path);

// Fully resolved config, every field spelled out.
nlohmann::json config_to_json(const fedsim::ExperimentConfig& config);
// FNV-1a of the resolved config's canonical (key-sorted) serialization, as 16
// hex digits. Key order and omitted defaults do not change it.
std::string config_hash(const fedsim::ExperimentConfig& config);

// Metrics records, one JSON object per line of metrics.jsonl.
nlohmann::ordered_json round_record(fedsim::Method method, std::uint64_t seed,
                                    const fedsim::RoundMetrics& m);
nlohmann::ordered_json summary_record(const fedsim::ExperimentResult& r);

struct RunSummary {
  fedsim::Method method;
  std::uint64_t seed;
  double final_accuracy;
  double final_macro_f1;
  double spike_score;
};

// Runs every method and seed of `config` into out_dir: metrics.jsonl,
// checkpoints/ and, last, manifest.json. Throws on any failure; the manifest
// is only written once everything else succeeded.
std::vector<RunSummary> run_to_dir(const fedsim::ExperimentConfig& config,
                                   const std::filesystem::path& out_dir);

// Command entry points. Return the process exit status: 0 on success, 1 on a
// runtime failure, 2 on a usage or config error. Diagnostics go to `err`.
int cmd_run(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
            std::optional<std::uint64_t> seed, std::ostream& out, std::ostream& err);
int cmd_sweep(const std::filesystem::path& config_path, const std::string& param,
              const std::string& values, const std::filesystem::path& out_dir, std::ostream& out,
              std::ostream& err);
int cmd_gen_data(const std::filesystem::path& spec_path, const std::filesystem::path& out_file,
                 std::ostream& out, std::ostream& err);

struct VerifyOptions {
  bool inject_transposed_plan = false;
};
int cmd_verify(const VerifyOptions& options, std::ostream& out, std::ostream& err);

// Parameters accepted by sweep.
const std::vector<std::string>& sweep_params();

}  // namespace fedpia::cli

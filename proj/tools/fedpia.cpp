// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedpia/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated adapter permutation and integration lab"};
  app.require_subcommand(1);

  std::string config, out, param, values, spec;
  std::optional<std::uint64_t> seed;
  bool fault = false;

  auto* run = app.add_subcommand("run", "Run every method and seed in a config");
  run->add_option("--config", config, "Experiment config (JSON)")->required();
  run->add_option("--out", out, "Output directory")->required();
  run->add_option("--seed", seed, "Override the config's seed list with one seed");

  auto* verify = app.add_subcommand("verify", "Run the self-verification oracles");
  // Mutation check for the oracle suite; deliberately undocumented.
  verify->add_flag("--inject-transposed-plan", fault)->group("");

  auto* sweep = app.add_subcommand("sweep", "Run one experiment per parameter value");
  sweep->add_option("--config", config, "Base experiment config (JSON)")->required();
  sweep->add_option("--param", param, "Parameter to vary")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--out", out, "Output directory")->required();

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset as CSV");
  gen->add_option("--spec", spec, "Dataset spec (JSON)")->required();
  gen->add_option("--out", out, "Output CSV file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  using namespace fedpia::cli;
  if (*run) return cmd_run(config, out, seed, std::cout, std::cerr);
  if (*verify) return cmd_verify(VerifyOptions{fault}, std::cout, std::cerr);
  if (*sweep) return cmd_sweep(config, param, values, out, std::cout, std::cerr);
  if (*gen) return cmd_gen_data(spec, out, std::cout, std::cerr);
  return 2;
}

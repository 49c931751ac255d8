// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <ostream>
#include <sstream>

#include "fedpia/checkpoint.hpp"
#include "fedpia/cli.hpp"
#include "fedpia/errors.hpp"

namespace fedpia::cli {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Line-oriented append-only writer. Every line is flushed as written and the
// file is fsync'd on close.
class JsonlWriter {
 public:
  explicit JsonlWriter(const fs::path& path) : path_(path), f_(std::fopen(path.c_str(), "w")) {
    if (f_ == nullptr) throw Error("cannot open " + path.string() + " for writing");
  }
  ~JsonlWriter() {
    if (f_ != nullptr) std::fclose(f_);
  }
  JsonlWriter(const JsonlWriter&) = delete;
  JsonlWriter& operator=(const JsonlWriter&) = delete;

  void write(const nlohmann::ordered_json& record) {
    const std::string line = record.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), f_) != line.size() || std::fflush(f_) != 0) {
      throw Error("failed writing " + path_.string());
    }
  }

  void close() {
    const bool synced = ::fsync(::fileno(f_)) == 0;
    const bool closed = std::fclose(f_) == 0;
    f_ = nullptr;
    if (!synced || !closed) throw Error("failed closing " + path_.string());
  }

 private:
  fs::path path_;
  std::FILE* f_;
};

void write_file_atomically(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  std::FILE* f = std::fopen(tmp.c_str(), "w");
  if (f == nullptr) throw Error("cannot open " + tmp.string() + " for writing");
  const bool ok = std::fwrite(content.data(), 1, content.size(), f) == content.size() &&
                  std::fflush(f) == 0 && ::fsync(::fileno(f)) == 0;
  if (std::fclose(f) != 0 || !ok) {
    fs::remove(tmp);
    throw Error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

bool method_exchanges(fedsim::Method m) {
  return m == fedsim::Method::kFedPia || m == fedsim::Method::kFedAvgAdapters ||
         m == fedsim::Method::kFullFinetune;
}

std::vector<fedsim::Method> methods_of(const fedsim::ExperimentConfig& config) {
  std::vector<fedsim::Method> out{config.method};
  for (auto m : config.baselines) {
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  return out;
}

std::vector<std::string> split_values(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b == std::string::npos) throw ConfigError("empty value in --values list");
    out.push_back(item.substr(b, e - b + 1));
  }
  if (out.empty()) throw ConfigError("--values needs at least one value");
  return out;
}

json sweep_value(const std::string& param, const std::string& text) {
  if (param == "server_pia_on" || param == "client_pia_on") {
    if (text == "true") return true;
    if (text == "false") return false;
    throw ConfigError("sweep value for " + param + " must be true or false, got '" + text + "'");
  }
  if (param == "client_cost_mode") return text;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size()) throw ConfigError("sweep value for " + param + " is not a number: '" + text + "'");
  return v;
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    err << "parse error (line " << e.line() << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

const std::vector<std::string>& sweep_params() {
  static const std::vector<std::string> params = {
      "gamma", "lambda_merge", "concentration", "client_cost_mode",
      "server_pia_on", "client_pia_on", "dataset_fraction"};
  return params;
}

nlohmann::ordered_json round_record(fedsim::Method method, std::uint64_t seed,
                                    const fedsim::RoundMetrics& m) {
  nlohmann::ordered_json clients = nlohmann::ordered_json::array();
  for (const auto& c : m.clients) {
    clients.push_back({{"client", c.client},
                       {"loss_start", c.loss_start},
                       {"loss_end", c.loss_end},
                       {"accuracy", c.accuracy},
                       {"macro_f1", c.macro_f1}});
  }
  return {{"record", "round"},
          {"method", fedsim::method_name(method)},
          {"seed", seed},
          {"round", m.round},
          {"mean_loss_start", m.mean_loss_start},
          {"mean_loss_end", m.mean_loss_end},
          {"mean_accuracy", m.mean_accuracy},
          {"mean_macro_f1", m.mean_macro_f1},
          {"clients", clients}};
}

nlohmann::ordered_json summary_record(const fedsim::ExperimentResult& r) {
  return {{"record", "summary"},
          {"method", fedsim::method_name(r.method)},
          {"seed", r.seed},
          {"rounds", r.rounds.size()},
          {"final_accuracy", r.final_accuracy},
          {"final_macro_f1", r.final_macro_f1},
          {"spike_score", r.spike}};
}

std::vector<RunSummary> run_to_dir(const fedsim::ExperimentConfig& config, const fs::path& out_dir) {
  config.validate();
  const std::string started = utc_now();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create output directory " + out_dir.string() + ": " + ec.message());

  const fs::path metrics_path = out_dir / "metrics.jsonl";
  JsonlWriter metrics(metrics_path);
  json artifacts = {{"metrics", metrics_path.filename().string()}, {"checkpoints", json::array()}};
  json timing = json::array();
  std::vector<RunSummary> summaries;

  for (fedsim::Method method : methods_of(config)) {
    fedsim::ExperimentConfig run_cfg = config;
    run_cfg.method = method;
    for (std::uint64_t seed : config.seeds) {
      const auto t0 = std::chrono::steady_clock::now();
      const fedsim::ExperimentResult result = fedsim::run_experiment(
          run_cfg, seed,
          [&](const fedsim::RoundMetrics& m) { metrics.write(round_record(method, seed, m)); });
      metrics.write(summary_record(result));
      summaries.push_back({method, seed, result.final_accuracy, result.final_macro_f1, result.spike});
      timing.push_back({{"method", fedsim::method_name(method)},
                        {"seed", seed},
                        {"wall_seconds",
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()}});

      if (method_exchanges(method)) {
        const fs::path dir = out_dir / "checkpoints";
        fs::create_directories(dir);
        const std::string name =
            std::string(fedsim::method_name(method)) + "-seed" + std::to_string(seed) + ".ckpt";
        Checkpoint ckpt;
        ckpt.seed = seed;
        ckpt.step = config.rounds;
        ckpt.adapters = result.final_global;
        write_checkpoint(dir / name, ckpt);
        artifacts["checkpoints"].push_back("checkpoints/" + name);
      }
    }
  }
  metrics.close();

  json manifest = {{"config_hash", config_hash(config)},
                   {"config", config_to_json(config)},
                   {"seeds", config.seeds},
                   {"started_at", started},
                   {"finished_at", utc_now()},
                   {"artifacts", artifacts},
                   {"timing", timing},
                   {"code_version", kCodeVersion}};
  write_file_atomically(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return summaries;
}

int cmd_run(const fs::path& config_path, const fs::path& out_dir, std::optional<std::uint64_t> seed,
            std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    fedsim::ExperimentConfig config = parse_config(config_path);
    if (seed) config.seeds = {*seed};
    const auto summaries = run_to_dir(config, out_dir);
    for (const auto& s : summaries) {
      char line[160];
      std::snprintf(line, sizeof line, "%-16s seed %-4llu accuracy %.4f  macro_f1 %.4f  spike %.4f\n",
                    std::string(fedsim::method_name(s.method)).c_str(),
                    static_cast<unsigned long long>(s.seed), s.final_accuracy, s.final_macro_f1,
                    s.spike_score);
      out << line;
    }
    out << "wrote " << (out_dir / "manifest.json").string() << "\n";
    return 0;
  });
}

int cmd_sweep(const fs::path& config_path, const std::string& param, const std::string& values,
              const fs::path& out_dir, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto& allowed = sweep_params();
    if (std::find(allowed.begin(), allowed.end(), param) == allowed.end()) {
      throw ConfigError("unknown sweep parameter '" + param + "'");
    }
    const json base = load_json(config_path);
    const auto texts = split_values(values);
    std::vector<std::pair<std::string, fedsim::ExperimentConfig>> runs;
    for (const auto& text : texts) {
      json j = base;
      j[param] = sweep_value(param, text);
      fedsim::ExperimentConfig cfg = config_from_json(j, config_path.parent_path());
      cfg.baselines.clear();
      runs.emplace_back(text, std::move(cfg));
    }

    fs::create_directories(out_dir);
    std::string table = "param\tvalue\tmethod\tseeds\tfinal_accuracy\tfinal_macro_f1\tspike_score\n";
    for (const auto& [text, cfg] : runs) {
      const auto summaries = run_to_dir(cfg, out_dir / (param + "=" + text));
      double acc = 0.0, f1 = 0.0, spike = 0.0;
      for (const auto& s : summaries) {
        acc += s.final_accuracy;
        f1 += s.final_macro_f1;
        spike += s.spike_score;
      }
      const double n = static_cast<double>(summaries.size());
      char row[256];
      std::snprintf(row, sizeof row, "%s\t%s\t%s\t%zu\t%.6f\t%.6f\t%.6f\n", param.c_str(), text.c_str(),
                    std::string(fedsim::method_name(cfg.method)).c_str(), summaries.size(), acc / n,
                    f1 / n, spike / n);
      table += row;
    }
    write_file_atomically(out_dir / "sweep.tsv", table);
    out << table;
    return 0;
  });
}

int cmd_gen_data(const fs::path& spec_path, const fs::path& out_file, std::ostream& out,
                 std::ostream& err) {
  return guarded(err, [&] {
    const json j = load_json(spec_path);
    if (!j.is_object()) throw ConfigError("data spec must be a JSON object");
    data::SyntheticSpec spec;
    bool geometry_given = false;
    for (const auto& [key, v] : j.items()) {
      auto count = [&] {
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
          throw ConfigError("data spec key '" + key + "': expected a non-negative integer");
        }
        return v.get<std::uint64_t>();
      };
      if (key == "seed") {
        spec.seed = count();
      } else if (key == "geometry_seed") {
        spec.geometry_seed = count();
        geometry_given = true;
      } else if (key == "n_samples") {
        spec.n_samples = count();
      } else if (key == "dim") {
        spec.dim = count();
      } else if (key == "num_classes") {
        spec.num_classes = count();
      } else if (key == "margin") {
        if (!v.is_number()) throw ConfigError("data spec key 'margin': expected a number");
        spec.margin = v.get<double>();
      } else if (key == "kind") {
        if (!v.is_string()) throw ConfigError("data spec key 'kind': expected a string");
        const auto s = v.get<std::string>();
        if (s != "single" && s != "multi") throw ConfigError("data spec key 'kind': expected single or multi");
        spec.kind = parse_task_kind(s);
      } else {
        throw ConfigError("unknown data spec key '" + key + "'");
      }
    }
    if (!geometry_given) spec.geometry_seed = spec.seed;
    const data::Dataset ds = data::gen_synthetic(spec);
    data::save_tabular(out_file, ds);
    out << "wrote " << ds.size() << " samples to " << out_file.string() << "\n";
    return 0;
  });
}

}  // namespace fedpia::cli

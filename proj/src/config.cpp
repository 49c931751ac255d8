// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>

#include "fedpia/cli.hpp"
#include "fedpia/errors.hpp"

namespace fedpia::cli {

using nlohmann::json;
using fedsim::ExperimentConfig;

namespace {

std::string type_error(const std::string& key, const char* expected, const json& v) {
  return "config key '" + key + "': expected " + expected + ", got " + std::string(v.type_name());
}

std::size_t as_count(const std::string& key, const json& v) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError(type_error(key, "a non-negative integer", v));
  }
  return v.get<std::size_t>();
}

std::uint64_t as_seed(const std::string& key, const json& v) {
  return as_count(key, v);
}

double as_real(const std::string& key, const json& v) {
  if (!v.is_number()) throw ConfigError(type_error(key, "a number", v));
  return v.get<double>();
}

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) throw ConfigError(type_error(key, "true or false", v));
  return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) throw ConfigError(type_error(key, "a string", v));
  return v.get<std::string>();
}

const json& as_array(const std::string& key, const json& v) {
  if (!v.is_array()) throw ConfigError(type_error(key, "an array", v));
  return v;
}

TaskKind as_kind(const std::string& key, const json& v) {
  const std::string s = as_string(key, v);
  if (s == "single") return TaskKind::kSingleLabel;
  if (s == "multi") return TaskKind::kMultiLabel;
  throw ConfigError("config key '" + key + "': expected \"single\" or \"multi\", got \"" + s + "\"");
}

pia::CostMode as_cost_mode(const std::string& key, const json& v) {
  const std::string s = as_string(key, v);
  if (s == "weight") return pia::CostMode::kWeight;
  if (s == "activation") return pia::CostMode::kActivation;
  throw ConfigError("config key '" + key + "': expected \"weight\" or \"activation\", got \"" + s + "\"");
}

const char* cost_mode_name(pia::CostMode m) {
  return m == pia::CostMode::kWeight ? "weight" : "activation";
}

std::string kind_name(TaskKind k) { return k == TaskKind::kSingleLabel ? "single" : "multi"; }

using Setter = std::function<void(ExperimentConfig&, const std::string&, const json&,
                                  const std::filesystem::path&)>;

const std::map<std::string, Setter>& setters() {
  using P = const std::filesystem::path&;
  static const std::map<std::string, Setter> table = {
      {"method", [](ExperimentConfig& c, const std::string& k, const json& v, P) {
         c.method = fedsim::parse_method(as_string(k, v));
       }},
      {"baselines", [](ExperimentConfig& c, const std::string& k, const json& v, P) {
         c.baselines.clear();
         for (const auto& e : as_array(k, v)) c.baselines.push_back(fedsim::parse_method(as_string(k, e)));
       }},
      {"num_clients", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.num_clients = as_count(k, v); }},
      {"rounds", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.rounds = as_count(k, v); }},
      {"local_steps", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.local_steps = as_count(k, v); }},
      {"batch_size", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.batch_size = as_count(k, v); }},
      {"lr", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.base_lr = as_real(k, v); }},
      {"warmup_frac", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.warmup_frac = as_real(k, v); }},
      {"weight_decay", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.weight_decay = as_real(k, v); }},
      {"gamma", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.fusion.gamma = as_real(k, v); }},
      {"client_cost_mode", [](ExperimentConfig& c, const std::string& k, const json& v, P) {
         c.fusion.client_cost_mode = as_cost_mode(k, v);
       }},
      {"activation_mode", [](ExperimentConfig& c, const std::string& k, const json& v, P) {
         const std::string s = as_string(k, v);
         if (s == "mean") {
           c.fusion.activation_mode = ot::ActivationMode::kMean;
         } else if (s == "per_sample") {
           c.fusion.activation_mode = ot::ActivationMode::kPerSample;
         } else {
           throw ConfigError("config key '" + k + "': expected \"mean\" or \"per_sample\", got \"" + s + "\"");
         }
       }},
      {"m_probe", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.fusion.m_probe = as_count(k, v); }},
      {"lambda_merge", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.fusion.lambda_merge = as_real(k, v); }},
      {"normalize_weights", [](ExperimentConfig& c, const std::string& k, const json& v, P) {
         c.fusion.normalize_weights = as_bool(k, v);
       }},
      {"server_pia_on", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.server_pia_on = as_bool(k, v); }},
      {"client_pia_on", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.client_pia_on = as_bool(k, v); }},
      {"seeds", [](ExperimentConfig& c, const std::string& k, const json& v, P) {
         c.seeds.clear();
         for (const auto& e : as_array(k, v)) c.seeds.push_back(as_seed(k, e));
       }},
      {"width", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.width = as_count(k, v); }},
      {"bottleneck", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.bottleneck = as_count(k, v); }},
      {"depth", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.depth = as_count(k, v); }},
      {"adapter_std", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.adapter_std = as_real(k, v); }},
      {"local_init", [](ExperimentConfig& c, const std::string& k, const json& v, P) {
         const std::string s = as_string(k, v);
         if (s == "shared") {
           c.local_init = fedsim::LocalInit::kShared;
         } else if (s == "independent") {
           c.local_init = fedsim::LocalInit::kIndependent;
         } else {
           throw ConfigError("config key '" + k + "': expected \"shared\" or \"independent\", got \"" + s + "\"");
         }
       }},
      {"data_source", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.data.source = as_string(k, v); }},
      {"n_samples", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.data.n_samples = as_count(k, v); }},
      {"dim", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.data.dim = as_count(k, v); }},
      {"num_classes", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.data.num_classes = as_count(k, v); }},
      {"task_kind", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.data.kind = as_kind(k, v); }},
      {"margin", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.data.margin = as_real(k, v); }},
      {"geometry_seed", [](ExperimentConfig& c, const std::string& k, const json& v, P) {
         if (v.is_null()) {
           c.data.geometry_seed.reset();
         } else {
           c.data.geometry_seed = as_seed(k, v);
         }
       }},
      {"client_kinds", [](ExperimentConfig& c, const std::string& k, const json& v, P) {
         c.data.client_kinds.clear();
         for (const auto& e : as_array(k, v)) c.data.client_kinds.push_back(as_kind(k, e));
       }},
      {"concentration", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.data.concentration = as_real(k, v); }},
      {"class_mask_sizes", [](ExperimentConfig& c, const std::string& k, const json& v, P) {
         c.data.class_mask_sizes.clear();
         for (const auto& e : as_array(k, v)) c.data.class_mask_sizes.push_back(as_count(k, e));
       }},
      {"feature_shift", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.data.feature_shift = as_real(k, v); }},
      {"test_fraction", [](ExperimentConfig& c, const std::string& k, const json& v, P) { c.data.test_fraction = as_real(k, v); }},
      {"dataset_fraction", [](ExperimentConfig& c, const std::string& k, const json& v, P) {
         c.data.dataset_fraction = as_real(k, v);
       }},
      {"tabular_path", [](ExperimentConfig& c, const std::string& k, const json& v, P base) {
         std::filesystem::path p = as_string(k, v);
         c.data.tabular_path = p.is_relative() && !base.empty() ? base / p : p;
       }},
      {"schema", [](ExperimentConfig& c, const std::string& k, const json& v, P) {
         if (!v.is_object()) throw ConfigError(type_error(k, "an object", v));
         data::TabularSchema s;
         for (const auto& [sub, val] : v.items()) {
           const std::string key = k + "." + sub;
           if (sub == "feature_columns" || sub == "label_columns") {
             auto& dst = sub == "feature_columns" ? s.feature_columns : s.label_columns;
             for (const auto& e : as_array(key, val)) dst.push_back(as_string(key, e));
           } else if (sub == "kind") {
             s.kind = as_kind(key, val);
           } else if (sub == "num_classes") {
             s.num_classes = as_count(key, val);
           } else {
             throw ConfigError("unknown config key '" + key + "'");
           }
         }
         c.data.schema = std::move(s);
       }},
  };
  return table;
}

}  // namespace

nlohmann::json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

ExperimentConfig config_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  if (auto it = j.find("benchmark"); it != j.end()) {
    c = fedsim::benchmark_config(as_string("benchmark", *it));
  }
  const auto& table = setters();
  for (const auto& [key, value] : j.items()) {
    if (key == "benchmark") continue;
    auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(c, key, value, base_dir);
  }
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  return config_from_json(load_json(path), path.parent_path());
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  json j;
  j["method"] = fedsim::method_name(c.method);
  j["baselines"] = json::array();
  for (auto m : c.baselines) j["baselines"].push_back(fedsim::method_name(m));
  j["num_clients"] = c.num_clients;
  j["rounds"] = c.rounds;
  j["local_steps"] = c.local_steps;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.base_lr;
  j["warmup_frac"] = c.warmup_frac;
  j["weight_decay"] = c.weight_decay;
  j["gamma"] = c.fusion.gamma;
  j["client_cost_mode"] = cost_mode_name(c.fusion.client_cost_mode);
  j["activation_mode"] = c.fusion.activation_mode == ot::ActivationMode::kMean ? "mean" : "per_sample";
  j["m_probe"] = c.fusion.m_probe;
  j["lambda_merge"] = c.fusion.lambda_merge;
  j["normalize_weights"] = c.fusion.normalize_weights;
  j["server_pia_on"] = c.server_pia_on;
  j["client_pia_on"] = c.client_pia_on;
  j["seeds"] = c.seeds;
  j["width"] = c.width;
  j["bottleneck"] = c.bottleneck;
  j["depth"] = c.depth;
  j["adapter_std"] = c.adapter_std;
  j["local_init"] = c.local_init == fedsim::LocalInit::kShared ? "shared" : "independent";
  j["data_source"] = c.data.source;
  j["n_samples"] = c.data.n_samples;
  j["dim"] = c.data.dim;
  j["num_classes"] = c.data.num_classes;
  j["task_kind"] = kind_name(c.data.kind);
  j["margin"] = c.data.margin;
  j["geometry_seed"] = c.data.geometry_seed ? json(*c.data.geometry_seed) : json(nullptr);
  j["client_kinds"] = json::array();
  for (auto k : c.data.client_kinds) j["client_kinds"].push_back(kind_name(k));
  j["concentration"] = c.data.concentration;
  j["class_mask_sizes"] = c.data.class_mask_sizes;
  j["feature_shift"] = c.data.feature_shift;
  j["test_fraction"] = c.data.test_fraction;
  j["dataset_fraction"] = c.data.dataset_fraction;
  if (c.data.source == "tabular") {
    j["tabular_path"] = c.data.tabular_path.generic_string();
    j["schema"] = {{"feature_columns", c.data.schema.feature_columns},
                   {"label_columns", c.data.schema.label_columns},
                   {"kind", kind_name(c.data.schema.kind)},
                   {"num_classes", c.data.schema.num_classes}};
  }
  return j;
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = config_to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fedpia::cli

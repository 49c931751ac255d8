// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedpia/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>

#include "fedpia/errors.hpp"

namespace fedpia::data {

namespace {

std::vector<int> strata_from_labels(const Labels& labels, std::size_t num_classes) {
  std::vector<int> strata(labels.size());
  if (labels.kind == TaskKind::kSingleLabel) return labels.index;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int first = static_cast<int>(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (labels.multi_hot(i, c) != 0.0) {
        first = static_cast<int>(c);
        break;
      }
    }
    strata[i] = first;
  }
  return strata;
}

Vector unit_direction(Rng& rng, std::size_t dim) {
  Vector v(dim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

// Orthonormalizes the columns of m in place (modified Gram-Schmidt).
void orthonormalize_columns(Matrix& m) {
  const std::size_t n = m.cols();
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < m.rows(); ++i) dot += m(i, j) * m(i, k);
      for (std::size_t i = 0; i < m.rows(); ++i) m(i, j) -= dot * m(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) norm += m(i, j) * m(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("feature rotation is degenerate");
    for (std::size_t i = 0; i < m.rows(); ++i) m(i, j) /= norm;
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  for (auto& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

double parse_number(const std::string& field, std::size_t line, const std::string& column) {
  double value = 0.0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (field.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ParseError("column '" + column + "': cannot parse '" + field + "' as a number", line);
  }
  return value;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.features = features.gather_rows(rows);
  out.labels = labels.subset(rows);
  out.num_classes = num_classes;
  out.strata.reserve(rows.size());
  for (std::size_t r : rows) out.strata.push_back(strata.at(r));
  return out;
}

void Dataset::validate() const {
  if (features.rows() == 0) throw DataError("dataset is empty");
  if (labels.size() != features.rows()) throw DataError("dataset: label/feature row mismatch");
  if (strata.size() != features.rows()) throw DataError("dataset: strata/feature row mismatch");
  if (num_classes < 1) throw DataError("dataset: num_classes must be >= 1");
  labels.validate(num_classes);
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw DataError("gen_synthetic: need at least 2 classes");
  if (spec.dim == 0 || spec.n_samples == 0) throw DataError("gen_synthetic: empty shape");
  Rng geometry = Rng(spec.geometry_seed).split("geometry");
  std::vector<Vector> directions;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    directions.push_back(unit_direction(geometry, spec.dim));
  }

  Rng samples = Rng(spec.seed).split("samples");
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.features = Matrix(spec.n_samples, spec.dim);
  ds.strata.resize(spec.n_samples);
  std::vector<int> labels(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    const std::size_t c = samples.uniform_index(spec.num_classes);
    for (std::size_t j = 0; j < spec.dim; ++j) {
      ds.features(i, j) = spec.margin * directions[c][j] + samples.normal();
    }
    labels[i] = static_cast<int>(c);
    ds.strata[i] = static_cast<int>(c);
  }

  if (spec.kind == TaskKind::kSingleLabel) {
    ds.labels = Labels::single(std::move(labels));
    return ds;
  }
  Matrix hot(spec.n_samples, spec.num_classes);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    auto x = ds.features.row(i);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
      double proj = 0.0;
      for (std::size_t j = 0; j < spec.dim; ++j) proj += x[j] * directions[c][j];
      hot(i, c) = proj > 0.5 * spec.margin ? 1.0 : 0.0;
    }
  }
  ds.labels = Labels::multi(std::move(hot));
  return ds;
}

std::vector<std::vector<int>> random_class_masks(Rng& rng, std::size_t num_classes,
                                                 std::span<const std::size_t> sizes) {
  std::size_t total = 0;
  for (std::size_t size : sizes) {
    if (size == 0 || size > num_classes) {
      throw ConfigError("class mask sizes must lie in [1, num_classes]");
    }
    total += size;
  }
  if (sizes.empty() || total < num_classes) {
    throw ConfigError("class masks with " + std::to_string(total) + " slots cannot cover " +
                      std::to_string(num_classes) + " classes");
  }
  // Deal the classes out first so every class has a holder, then fill each
  // mask up to its size with random extra classes.
  std::vector<std::set<int>> masks(sizes.size());
  const auto order = rng.permutation(num_classes);
  std::size_t client = 0;
  for (std::size_t i = 0; i < num_classes; ++i) {
    while (masks[client].size() >= sizes[client]) client = (client + 1) % sizes.size();
    masks[client].insert(static_cast<int>(order[i]));
    client = (client + 1) % sizes.size();
  }
  for (std::size_t k = 0; k < masks.size(); ++k) {
    while (masks[k].size() < sizes[k]) masks[k].insert(static_cast<int>(rng.uniform_index(num_classes)));
  }
  std::vector<std::vector<int>> out;
  for (const auto& m : masks) out.emplace_back(m.begin(), m.end());
  return out;
}

std::vector<std::vector<std::size_t>> partition_indices(const Dataset& ds,
                                                        const PartitionSpec& spec) {
  ds.validate();
  const std::size_t k_clients = spec.num_clients;
  if (k_clients == 0) throw DataError("partition: need at least one client");
  if (k_clients > ds.size()) {
    throw DataError("partition: " + std::to_string(k_clients) + " clients but only " +
                    std::to_string(ds.size()) + " samples");
  }
  if (!(spec.concentration > 0.0)) throw ConfigError("partition: concentration must be > 0");
  const bool masked = !spec.class_masks.empty();
  if (masked && spec.class_masks.size() != k_clients) {
    throw DataError("partition: need one class mask per client");
  }

  std::map<int, std::vector<std::size_t>> by_stratum;
  for (std::size_t i = 0; i < ds.size(); ++i) by_stratum[ds.strata[i]].push_back(i);

  // Clients eligible for each stratum.
  std::map<int, std::vector<std::size_t>> eligible;
  for (const auto& [stratum, members] : by_stratum) {
    auto& who = eligible[stratum];
    for (std::size_t k = 0; k < k_clients; ++k) {
      const bool has = !masked || stratum >= static_cast<int>(ds.num_classes) ||
                       std::find(spec.class_masks[k].begin(), spec.class_masks[k].end(),
                                 stratum) != spec.class_masks[k].end();
      if (has) who.push_back(k);
    }
    if (who.empty()) {
      throw DataError("partition: class " + std::to_string(stratum) + " is in no client's mask");
    }
  }

  const Rng root = Rng(spec.seed).split("partition");
  for (std::size_t attempt = 0; attempt <= spec.max_retries; ++attempt) {
    Rng rng = root.split("attempt/" + std::to_string(attempt));
    std::vector<std::vector<std::size_t>> parts(k_clients);
    for (const auto& [stratum, members] : by_stratum) {
      const auto& who = eligible[stratum];
      const Vector share = rng_dirichlet(rng, who.size(), spec.concentration);
      const auto order = rng.permutation(members.size());
      const double n = static_cast<double>(members.size());
      std::size_t begin = 0;
      double cumulative = 0.0;
      for (std::size_t w = 0; w < who.size(); ++w) {
        cumulative += share[w];
        const std::size_t end = w + 1 == who.size()
                                    ? members.size()
                                    : std::min(members.size(),
                                               static_cast<std::size_t>(std::llround(cumulative * n)));
        for (std::size_t p = begin; p < end; ++p) parts[who[w]].push_back(members[order[p]]);
        begin = std::max(begin, end);
      }
    }
    const bool all_nonempty =
        std::none_of(parts.begin(), parts.end(), [](const auto& p) { return p.empty(); });
    if (all_nonempty) {
      for (auto& p : parts) std::sort(p.begin(), p.end());
      return parts;
    }
  }
  throw DataError("partition: could not avoid empty clients after " +
                  std::to_string(spec.max_retries) + " redraws");
}

std::vector<Dataset> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec) {
  const auto parts = partition_indices(ds, spec);
  std::vector<Dataset> clients;
  clients.reserve(parts.size());
  const Rng shift_root = Rng(spec.seed).split("feature-shift");
  for (std::size_t k = 0; k < parts.size(); ++k) {
    Dataset client = ds.subset(parts[k]);
    if (!spec.class_masks.empty()) {
      const auto& mask = spec.class_masks[k];
      std::map<int, int> position;
      for (std::size_t p = 0; p < mask.size(); ++p) position[mask[p]] = static_cast<int>(p);
      const int none = static_cast<int>(mask.size());
      if (client.kind() == TaskKind::kSingleLabel) {
        for (auto& y : client.labels.index) y = position.at(y);
        client.strata = client.labels.index;
      } else {
        Matrix hot(client.size(), mask.size());
        for (std::size_t i = 0; i < client.size(); ++i) {
          for (std::size_t p = 0; p < mask.size(); ++p) {
            hot(i, p) = client.labels.multi_hot(i, static_cast<std::size_t>(mask[p]));
          }
          auto it = position.find(client.strata[i]);
          client.strata[i] = it == position.end() ? none : it->second;
        }
        client.labels = Labels::multi(std::move(hot));
      }
      client.num_classes = mask.size();
    }
    if (spec.feature_shift > 0.0) {
      Rng rng = shift_root.split("client/" + std::to_string(k));
      const std::size_t d = client.dim();
      Matrix rotation = Matrix::identity(d);
      for (double& v : rotation.values()) v += spec.feature_shift * rng.normal() / std::sqrt(d);
      orthonormalize_columns(rotation);
      const double scale = std::exp(0.5 * spec.feature_shift * rng.normal());
      client.features = matmul(client.features, rotation);
      for (double& v : client.features.values()) v *= scale;
    }
    client.validate();
    clients.push_back(std::move(client));
  }
  return clients;
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction, Rng& rng) {
  if (ds.size() < 2) throw DataError("train_test_split: need at least 2 samples");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("test_fraction must lie in (0, 1)");
  }
  auto order = rng.permutation(ds.size());
  std::size_t n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(ds.size())));
  n_test = std::clamp<std::size_t>(n_test, 1, ds.size() - 1);
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {ds.subset(train), ds.subset(test)};
}

Dataset take_fraction(const Dataset& ds, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("dataset_fraction must lie in (0, 1]");
  if (fraction == 1.0) return ds;
  auto order = rng.permutation(ds.size());
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ds.size()))));
  std::vector<std::size_t> rows(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(rows.begin(), rows.end());
  return ds.subset(rows);
}

TabularSchema default_schema(const Dataset& ds) {
  TabularSchema schema;
  schema.kind = ds.kind();
  for (std::size_t j = 0; j < ds.dim(); ++j) schema.feature_columns.push_back("f" + std::to_string(j));
  if (ds.kind() == TaskKind::kSingleLabel) {
    schema.label_columns = {"label"};
    schema.num_classes = ds.num_classes;
  } else {
    for (std::size_t c = 0; c < ds.num_classes; ++c) schema.label_columns.push_back("y" + std::to_string(c));
    schema.num_classes = ds.num_classes;
  }
  return schema;
}

void save_tabular(const std::filesystem::path& path, const Dataset& ds) {
  ds.validate();
  const TabularSchema schema = default_schema(ds);
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (f == nullptr) throw Error("cannot open " + path.string() + " for writing");
  std::string header;
  for (const auto& c : schema.feature_columns) header += c + ",";
  for (std::size_t c = 0; c < schema.label_columns.size(); ++c) {
    header += schema.label_columns[c];
    header += c + 1 == schema.label_columns.size() ? "\n" : ",";
  }
  std::fputs(header.c_str(), f);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features.row(i)) std::fprintf(f, "%.17g,", v);
    if (ds.kind() == TaskKind::kSingleLabel) {
      std::fprintf(f, "%d\n", ds.labels.index[i]);
    } else {
      for (std::size_t c = 0; c < ds.num_classes; ++c) {
        std::fprintf(f, "%d%c", static_cast<int>(ds.labels.multi_hot(i, c)),
                     c + 1 == ds.num_classes ? '\n' : ',');
      }
    }
  }
  const bool failed = std::ferror(f) != 0;
  if (std::fclose(f) != 0 || failed) throw Error("failed writing " + path.string());
}

Dataset load_tabular(const std::filesystem::path& path, const TabularSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  if (schema.label_columns.empty()) throw ConfigError("tabular schema declares no label column");
  if (schema.kind == TaskKind::kSingleLabel && schema.label_columns.size() != 1) {
    throw ConfigError("single-label schema needs exactly one label column");
  }

  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = split_csv(line);
    break;
  }
  if (header.empty()) throw DataError(path.string() + ": no header line");

  auto column_index = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError("header has no column '" + name + "'", line_no);
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> label_idx;
  for (const auto& name : schema.label_columns) label_idx.push_back(column_index(name));
  std::vector<std::size_t> feature_idx;
  if (schema.feature_columns.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (std::find(label_idx.begin(), label_idx.end(), c) == label_idx.end()) feature_idx.push_back(c);
    }
  } else {
    for (const auto& name : schema.feature_columns) feature_idx.push_back(column_index(name));
  }
  if (feature_idx.empty()) throw ConfigError("tabular schema selects no feature columns");

  std::vector<double> features;
  std::vector<int> single;
  std::vector<double> hot;
  std::vector<std::size_t> row_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(fields.size()),
                       line_no);
    }
    for (std::size_t c : feature_idx) features.push_back(parse_number(fields[c], line_no, header[c]));
    for (std::size_t c : label_idx) {
      const double v = parse_number(fields[c], line_no, header[c]);
      if (v != std::floor(v)) throw ParseError("label '" + fields[c] + "' is not an integer", line_no);
      if (schema.kind == TaskKind::kSingleLabel) {
        if (v < 0.0 || (schema.num_classes > 0 && v >= static_cast<double>(schema.num_classes))) {
          throw DataError("line " + std::to_string(line_no) + ": label " + fields[c] +
                          " out of range");
        }
        single.push_back(static_cast<int>(v));
      } else {
        if (v != 0.0 && v != 1.0) {
          throw DataError("line " + std::to_string(line_no) + ": multilabel target '" + fields[c] +
                          "' must be 0 or 1");
        }
        hot.push_back(v);
      }
    }
    row_lines.push_back(line_no);
  }
  const std::size_t n = row_lines.size();
  if (n == 0) throw DataError(path.string() + ": no data rows");

  Dataset ds;
  ds.features = Matrix(n, feature_idx.size(), std::move(features));
  if (schema.kind == TaskKind::kSingleLabel) {
    ds.num_classes = schema.num_classes > 0
                         ? schema.num_classes
                         : static_cast<std::size_t>(*std::max_element(single.begin(), single.end())) + 1;
    ds.labels = Labels::single(std::move(single));
  } else {
    ds.num_classes = label_idx.size();
    ds.labels = Labels::multi(Matrix(n, label_idx.size(), std::move(hot)));
  }
  ds.strata = strata_from_labels(ds.labels, ds.num_classes);
  ds.validate();
  return ds;
}

}  // namespace fedpia::data

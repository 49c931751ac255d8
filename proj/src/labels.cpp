// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedpia/labels.hpp"

#include <string>

#include "fedpia/errors.hpp"

namespace fedpia {

std::string_view task_kind_name(TaskKind kind) {
  return kind == TaskKind::kSingleLabel ? "single" : "multi";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "single") return TaskKind::kSingleLabel;
  if (name == "multi") return TaskKind::kMultiLabel;
  throw ConfigError("unknown task kind '" + std::string(name) + "' (expected single|multi)");
}

Labels Labels::single(std::vector<int> index) {
  Labels l;
  l.kind = TaskKind::kSingleLabel;
  l.index = std::move(index);
  return l;
}

Labels Labels::multi(Matrix multi_hot) {
  Labels l;
  l.kind = TaskKind::kMultiLabel;
  l.multi_hot = std::move(multi_hot);
  return l;
}

std::size_t Labels::size() const {
  return kind == TaskKind::kSingleLabel ? index.size() : multi_hot.rows();
}

Labels Labels::subset(std::span<const std::size_t> rows) const {
  if (kind == TaskKind::kMultiLabel) return multi(multi_hot.gather_rows(rows));
  std::vector<int> picked;
  picked.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= index.size()) throw ShapeError("labels subset: row out of range");
    picked.push_back(index[r]);
  }
  return single(std::move(picked));
}

void Labels::validate(std::size_t num_classes) const {
  if (kind == TaskKind::kSingleLabel) {
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= num_classes) {
        throw DataError("label " + std::to_string(index[i]) + " at row " + std::to_string(i) +
                        " is outside [0, " + std::to_string(num_classes) + ")");
      }
    }
    return;
  }
  if (multi_hot.cols() != num_classes) {
    throw DataError("multilabel targets have " + std::to_string(multi_hot.cols()) +
                    " columns, expected " + std::to_string(num_classes));
  }
  for (double v : multi_hot.values()) {
    if (v != 0.0 && v != 1.0) throw DataError("multilabel targets must be 0 or 1");
  }
}

}  // namespace fedpia

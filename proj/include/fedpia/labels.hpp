// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "fedpia/matrix.hpp"

namespace fedpia {

enum class TaskKind { kSingleLabel, kMultiLabel };

std::string_view task_kind_name(TaskKind kind);
// Accepts "single" / "multi". Throws ConfigError otherwise.
TaskKind parse_task_kind(std::string_view name);

// Targets for a batch: class indices for single-label tasks, a multi-hot
// (samples x classes) matrix for multilabel tasks.
struct Labels {
  TaskKind kind = TaskKind::kSingleLabel;
  std::vector<int> index;
  Matrix multi_hot;

  static Labels single(std::vector<int> index);
  static Labels multi(Matrix multi_hot);

  std::size_t size() const;
  Labels subset(std::span<const std::size_t> rows) const;

  // Throws DataError if any target is out of range for num_classes.
  void validate(std::size_t num_classes) const;

  bool operator==(const Labels& other) const = default;
};

}  // namespace fedpia

// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Flat binary checkpoints for adapter stacks and classifier heads.
//
// Layout (all integers little-endian):
//   magic   "FPIACKPT"                    8 bytes
//   version u32 (= 1)
//   kind    u32 (1 = adapters, 2 = head, 3 = adapters + head)
//   seed    u64
//   step    u64
//   layers  u32  number of adapter layers (0 for a head-only file)
//   task    u32  head task kind (0 single, 1 multi; 0 when no head)
//   count   u32  number of tensors
//   count x (rows u64, cols u64)          shape manifest
//   payload: every tensor, row-major IEEE-754 binary64
//
// Adapter tensors come first (per layer: w_down, b_down, w_up, b_up, biases
// stored as 1 x n), then the head (w, b). Encoding is a pure function of the
// contents, so decode-then-encode reproduces the input bytes exactly.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "fedpia/model.hpp"

namespace fedpia {

struct Checkpoint {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::optional<AdapterStack> adapters;
  std::optional<ClassifierHead> head;

  bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
// Throws ParseError (line 0) on truncated or malformed input.
Checkpoint decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace fedpia

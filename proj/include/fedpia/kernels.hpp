// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Contiguous double-precision inner loops used by the dense linear algebra.
//
// Each kernel has a scalar reference implementation and, where the target
// supports it, an AVX2+FMA (x86-64) or NEON (aarch64) variant. The variant is
// picked once at first use from the CPU's reported features; tests can pin a
// specific table to check the variants against the scalar reference.
//
// Variants differ from the scalar reference by reassociation and fused
// multiply-add rounding; results agree to a few ulps, not bitwise. Within a
// process the selection is fixed.

#include <cstddef>
#include <string_view>

namespace fedpia::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // sum_i (a[i] - b[i])^2
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
};

const KernelTable& scalar_table();

// nullptr when the variant is not compiled in or the CPU lacks the feature.
const KernelTable* avx2_table();
const KernelTable* neon_table();

// Best table for the running CPU.
Isa detect_isa();

// Table used by Matrix and friends. Defaults to detect_isa().
const KernelTable& active();

// Overrides the active table. Throws UsageError if `isa` is unavailable.
void set_active_isa(Isa isa);

}  // namespace fedpia::kernels

// Copyright 2026 The FedPIA Lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>

#include "fedpia/errors.hpp"
#include "fedpia/kernels.hpp"
#include "kernels_internal.hpp"

namespace fedpia::kernels {

namespace {

constexpr KernelTable kScalar{Isa::kScalar, detail::dot_scalar, detail::axpy_scalar,
                              detail::squared_distance_scalar};

#if defined(FEDPIA_HAVE_AVX2)
constexpr KernelTable kAvx2{Isa::kAvx2, detail::dot_avx2, detail::axpy_avx2,
                            detail::squared_distance_avx2};
#endif

#if defined(FEDPIA_HAVE_NEON)
constexpr KernelTable kNeon{Isa::kNeon, detail::dot_neon, detail::axpy_neon,
                            detail::squared_distance_neon};
#endif

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return &kScalar;
    case Isa::kAvx2:
      return avx2_table();
    case Isa::kNeon:
      return neon_table();
  }
  return nullptr;
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{table_for(detect_isa())};
  return slot;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
    case Isa::kNeon:
      return "neon";
  }
  return "unknown";
}

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if defined(FEDPIA_HAVE_AVX2)
  static const bool supported =
      __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_table() {
#if defined(FEDPIA_HAVE_NEON)
  // Advanced SIMD is mandatory on aarch64.
  return &kNeon;
#else
  return nullptr;
#endif
}

Isa detect_isa() {
  if (avx2_table() != nullptr) return Isa::kAvx2;
  if (neon_table() != nullptr) return Isa::kNeon;
  return Isa::kScalar;
}

const KernelTable& active() { return *active_slot().load(std::memory_order_acquire); }

void set_active_isa(Isa isa) {
  const KernelTable* table = table_for(isa);
  if (table == nullptr) {
    throw UsageError("kernel variant '" + std::string(isa_name(isa)) +
                     "' is not available on this machine");
  }
  active_slot().store(table, std::memory_order_release);
}

}  // namespace fedpia::kernels

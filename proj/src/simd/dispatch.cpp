#include <atomic>
#include <cstdlib>
#include <string>

#include "uvq/error.hpp"
#include "uvq/simd/kernels.hpp"

namespace uvq::simd {
namespace {

constexpr int kUnset = -1;
std::atomic<int> g_active{kUnset};

Isa from_env_or_detect() {
  if (const char* env = std::getenv("UVQ_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::Scalar;
    if (v == "avx2" && isa_supported(Isa::Avx2)) return Isa::Avx2;
    if (v == "neon" && isa_supported(Isa::Neon)) return Isa::Neon;
  }
  return detected_isa();
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "unknown";
}

bool isa_supported(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar: return true;
    case Isa::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Isa detected_isa() noexcept {
  if (isa_supported(Isa::Avx2)) return Isa::Avx2;
  if (isa_supported(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

Isa active_isa() noexcept {
  int v = g_active.load(std::memory_order_relaxed);
  if (v == kUnset) {
    v = static_cast<int>(from_env_or_detect());
    g_active.store(v, std::memory_order_relaxed);
  }
  return static_cast<Isa>(v);
}

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw PreconditionError("SIMD variant '" + std::string(isa_name(isa)) +
                            "' is not supported on this CPU");
  }
  g_active.store(static_cast<int>(isa), std::memory_order_relaxed);
}

Nearest nearest_codevector(std::span<const double> block, const CodebookView& book, double clamp) {
  switch (active_isa()) {
    case Isa::Avx2: return avx2::nearest_codevector(block, book, clamp);
    case Isa::Neon: return neon::nearest_codevector(block, book, clamp);
    case Isa::Scalar: break;
  }
  return scalar::nearest_codevector(block, book, clamp);
}

std::size_t count_greater(std::span<const double> a, std::span<const double> b) {
  switch (active_isa()) {
    case Isa::Avx2: return avx2::count_greater(a, b);
    case Isa::Neon: return neon::count_greater(a, b);
    case Isa::Scalar: break;
  }
  return scalar::count_greater(a, b);
}

double max_abs_difference(std::span<const double> a, std::span<const double> b) {
  switch (active_isa()) {
    case Isa::Avx2: return avx2::max_abs_difference(a, b);
    case Isa::Neon: return neon::max_abs_difference(a, b);
    case Isa::Scalar: break;
  }
  return scalar::max_abs_difference(a, b);
}

}  // namespace uvq::simd

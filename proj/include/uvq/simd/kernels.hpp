#pragma once

// Data-parallel inner loops. Every entry point has a scalar reference and
// vector variants (AVX2 on x86-64, NEON on AArch64) selected at runtime.
// Variants perform the same floating-point operations in the same order, so
// their results are bit-identical to the scalar reference; tests hold them to
// that.

#include <cstddef>
#include <span>
#include <string_view>

namespace uvq::simd {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa) noexcept;
bool isa_supported(Isa isa) noexcept;

/// Best ISA this CPU supports.
Isa detected_isa() noexcept;

/// ISA used by the dispatching entry points. Defaults to detected_isa(),
/// overridable with UVQ_SIMD=scalar|avx2|neon or set_active_isa().
Isa active_isa() noexcept;

/// Throws PreconditionError if `isa` is not supported here.
void set_active_isa(Isa isa);

/// Codevectors stored position-major ("structure of arrays"): the value of
/// codevector j at block position p is `data[p * stride + j]`, with
/// stride >= count and a multiple of kLaneStride.
struct CodebookView {
  const double* data = nullptr;
  std::size_t count = 0;
  std::size_t stride = 0;
  std::size_t letters = 0;  // n
  std::size_t dim = 0;      // d
};

inline constexpr std::size_t kLaneStride = 8;

struct Nearest {
  std::size_t index = 0;
  double distortion = 0.0;  // sum over letters of min(||x_i - c_i||^2, clamp)
};

/// Minimum clamped-squared-error codevector; ties go to the lowest index.
Nearest nearest_codevector(std::span<const double> block, const CodebookView& book, double clamp);

/// Number of i with a[i] > b[i].
std::size_t count_greater(std::span<const double> a, std::span<const double> b);

/// max_i |a[i] - b[i]| (0 for empty input).
double max_abs_difference(std::span<const double> a, std::span<const double> b);

/// Per-ISA entry points, exposed for equivalence testing.
namespace scalar {
Nearest nearest_codevector(std::span<const double> block, const CodebookView& book, double clamp);
std::size_t count_greater(std::span<const double> a, std::span<const double> b);
double max_abs_difference(std::span<const double> a, std::span<const double> b);
}  // namespace scalar

namespace avx2 {
Nearest nearest_codevector(std::span<const double> block, const CodebookView& book, double clamp);
std::size_t count_greater(std::span<const double> a, std::span<const double> b);
double max_abs_difference(std::span<const double> a, std::span<const double> b);
}  // namespace avx2

namespace neon {
Nearest nearest_codevector(std::span<const double> block, const CodebookView& book, double clamp);
std::size_t count_greater(std::span<const double> a, std::span<const double> b);
double max_abs_difference(std::span<const double> a, std::span<const double> b);
}  // namespace neon

}  // namespace uvq::simd

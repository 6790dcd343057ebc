// AArch64 Advanced SIMD variants. vmulq/vaddq are issued separately (no
// vfmaq) so rounding matches the scalar reference.

#include <algorithm>
#include <cmath>
#include <limits>

#include "uvq/simd/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

namespace uvq::simd::neon {

Nearest nearest_codevector(std::span<const double> block, const CodebookView& book, double clamp) {
  const float64x2_t k = vdupq_n_f64(clamp);
  Nearest best{0, std::numeric_limits<double>::infinity()};
  double lanes[4];

  for (std::size_t j0 = 0; j0 < book.count; j0 += 4) {
    float64x2_t acc_lo = vdupq_n_f64(0.0);
    float64x2_t acc_hi = vdupq_n_f64(0.0);
    for (std::size_t i = 0; i < book.letters; ++i) {
      float64x2_t q_lo = vdupq_n_f64(0.0);
      float64x2_t q_hi = vdupq_n_f64(0.0);
      for (std::size_t c = 0; c < book.dim; ++c) {
        const std::size_t p = i * book.dim + c;
        const float64x2_t x = vdupq_n_f64(block[p]);
        const double* row = book.data + p * book.stride + j0;
        const float64x2_t d_lo = vsubq_f64(x, vld1q_f64(row));
        const float64x2_t d_hi = vsubq_f64(x, vld1q_f64(row + 2));
        q_lo = vaddq_f64(q_lo, vmulq_f64(d_lo, d_lo));
        q_hi = vaddq_f64(q_hi, vmulq_f64(d_hi, d_hi));
      }
      acc_lo = vaddq_f64(acc_lo, vminq_f64(q_lo, k));
      acc_hi = vaddq_f64(acc_hi, vminq_f64(q_hi, k));
    }
    vst1q_f64(lanes, acc_lo);
    vst1q_f64(lanes + 2, acc_hi);
    const std::size_t live = std::min<std::size_t>(4, book.count - j0);
    for (std::size_t l = 0; l < live; ++l) {
      if (lanes[l] < best.distortion) best = {j0 + l, lanes[l]};
    }
  }
  return best;
}

std::size_t count_greater(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  std::size_t i = 0;
  std::size_t total = 0;
  for (; i + 2 <= n; i += 2) {
    const uint64x2_t gt = vcgtq_f64(vld1q_f64(a.data() + i), vld1q_f64(b.data() + i));
    total += (vgetq_lane_u64(gt, 0) & 1u) + (vgetq_lane_u64(gt, 1) & 1u);
  }
  for (; i < n; ++i) total += a[i] > b[i] ? 1 : 0;
  return total;
}

double max_abs_difference(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  float64x2_t m = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    m = vmaxq_f64(m, vabdq_f64(vld1q_f64(a.data() + i), vld1q_f64(b.data() + i)));
  }
  double out = std::max(vgetq_lane_f64(m, 0), vgetq_lane_f64(m, 1));
  for (; i < n; ++i) out = std::max(out, std::fabs(a[i] - b[i]));
  return out;
}

}  // namespace uvq::simd::neon

#else

#include "uvq/error.hpp"

namespace uvq::simd::neon {

Nearest nearest_codevector(std::span<const double>, const CodebookView&, double) {
  throw PreconditionError("NEON kernels are not available on this architecture");
}
std::size_t count_greater(std::span<const double>, std::span<const double>) {
  throw PreconditionError("NEON kernels are not available on this architecture");
}
double max_abs_difference(std::span<const double>, std::span<const double>) {
  throw PreconditionError("NEON kernels are not available on this architecture");
}

}  // namespace uvq::simd::neon

#endif

// Compiled with -mavx2 (no -mfma): multiplies and adds stay unfused so the
// lanes round exactly like the scalar reference.

#include <algorithm>
#include <cmath>
#include <limits>

#include "uvq/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace uvq::simd::avx2 {

Nearest nearest_codevector(std::span<const double> block, const CodebookView& book, double clamp) {
  const __m256d k = _mm256_set1_pd(clamp);
  Nearest best{0, std::numeric_limits<double>::infinity()};
  alignas(32) double lanes[8];

  for (std::size_t j0 = 0; j0 < book.count; j0 += 8) {
    __m256d acc_lo = _mm256_setzero_pd();
    __m256d acc_hi = _mm256_setzero_pd();
    for (std::size_t i = 0; i < book.letters; ++i) {
      __m256d q_lo = _mm256_setzero_pd();
      __m256d q_hi = _mm256_setzero_pd();
      for (std::size_t c = 0; c < book.dim; ++c) {
        const std::size_t p = i * book.dim + c;
        const __m256d x = _mm256_set1_pd(block[p]);
        const double* row = book.data + p * book.stride + j0;
        const __m256d d_lo = _mm256_sub_pd(x, _mm256_loadu_pd(row));
        const __m256d d_hi = _mm256_sub_pd(x, _mm256_loadu_pd(row + 4));
        q_lo = _mm256_add_pd(q_lo, _mm256_mul_pd(d_lo, d_lo));
        q_hi = _mm256_add_pd(q_hi, _mm256_mul_pd(d_hi, d_hi));
      }
      acc_lo = _mm256_add_pd(acc_lo, _mm256_min_pd(q_lo, k));
      acc_hi = _mm256_add_pd(acc_hi, _mm256_min_pd(q_hi, k));
    }
    _mm256_store_pd(lanes, acc_lo);
    _mm256_store_pd(lanes + 4, acc_hi);
    const std::size_t live = std::min<std::size_t>(8, book.count - j0);
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
  for (; i + 4 <= n; i += 4) {
    const __m256d gt = _mm256_cmp_pd(_mm256_loadu_pd(a.data() + i), _mm256_loadu_pd(b.data() + i),
                                     _CMP_GT_OQ);
    total += static_cast<std::size_t>(__builtin_popcount(_mm256_movemask_pd(gt)));
  }
  for (; i < n; ++i) total += a[i] > b[i] ? 1 : 0;
  return total;
}

double max_abs_difference(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  const __m256d sign = _mm256_set1_pd(-0.0);
  __m256d m = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a.data() + i), _mm256_loadu_pd(b.data() + i));
    m = _mm256_max_pd(m, _mm256_andnot_pd(sign, d));
  }
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, m);
  double out = std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
  for (; i < n; ++i) out = std::max(out, std::fabs(a[i] - b[i]));
  return out;
}

}  // namespace uvq::simd::avx2

#else

#include "uvq/error.hpp"

namespace uvq::simd::avx2 {

Nearest nearest_codevector(std::span<const double>, const CodebookView&, double) {
  throw PreconditionError("AVX2 kernels are not available on this architecture");
}
std::size_t count_greater(std::span<const double>, std::span<const double>) {
  throw PreconditionError("AVX2 kernels are not available on this architecture");
}
double max_abs_difference(std::span<const double>, std::span<const double>) {
  throw PreconditionError("AVX2 kernels are not available on this architecture");
}

}  // namespace uvq::simd::avx2

#endif

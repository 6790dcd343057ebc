#include <algorithm>
#include <cmath>
#include <limits>

#include "uvq/simd/kernels.hpp"

namespace uvq::simd::scalar {

Nearest nearest_codevector(std::span<const double> block, const CodebookView& book, double clamp) {
  Nearest best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t j = 0; j < book.count; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < book.letters; ++i) {
      double q = 0.0;
      for (std::size_t c = 0; c < book.dim; ++c) {
        const std::size_t p = i * book.dim + c;
        const double diff = block[p] - book.data[p * book.stride + j];
        q = q + diff * diff;
      }
      acc = acc + (q < clamp ? q : clamp);
    }
    if (acc < best.distortion) best = {j, acc};
  }
  return best;
}

std::size_t count_greater(std::span<const double> a, std::span<const double> b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] > b[i] ? 1 : 0;
  return n;
}

double max_abs_difference(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace uvq::simd::scalar

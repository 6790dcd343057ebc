#include <doctest.h>

#include <bit>
#include <cmath>
#include <vector>

#include "uvq/rng.hpp"
#include "uvq/simd/kernels.hpp"

namespace simd = uvq::simd;

namespace {

struct Book {
  std::vector<double> data;
  simd::CodebookView view;
};

Book random_book(uvq::RandomStream& rng, std::size_t count, std::size_t n, std::size_t d) {
  Book b;
  const std::size_t stride = (count + simd::kLaneStride - 1) / simd::kLaneStride * simd::kLaneStride;
  b.data.assign(stride * n * d, 0.0);
  for (std::size_t p = 0; p < n * d; ++p) {
    for (std::size_t j = 0; j < count; ++j) b.data[p * stride + j] = rng.uniform();
  }
  b.view = {b.data.data(), count, stride, n, d};
  return b;
}

// Direct loop over codevectors with full-precision comparison, lowest index on ties.
simd::Nearest oracle_nearest(const std::vector<double>& x, const simd::CodebookView& v, double clamp) {
  simd::Nearest best{0, 0.0};
  for (std::size_t j = 0; j < v.count; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < v.letters; ++i) {
      double q = 0.0;
      for (std::size_t a = 0; a < v.dim; ++a) {
        const double diff = x[i * v.dim + a] - v.data[(i * v.dim + a) * v.stride + j];
        q += diff * diff;
      }
      total += q < clamp ? q : clamp;
    }
    if (j == 0 || total < best.distortion) best = {j, total};
  }
  return best;
}

std::vector<simd::Isa> available() {
  std::vector<simd::Isa> out{simd::Isa::Scalar};
  for (auto isa : {simd::Isa::Avx2, simd::Isa::Neon}) {
    if (simd::isa_supported(isa)) out.push_back(isa);
  }
  return out;
}

}  // namespace

TEST_CASE("nearest codevector: every ISA is bit-identical to the scalar reference") {
  uvq::RandomStream rng({42, 1, 0, 0});
  for (std::size_t count : {1u, 2u, 3u, 7u, 8u, 9u, 16u, 33u, 256u}) {
    for (std::size_t n : {1u, 2u, 5u}) {
      for (std::size_t d : {1u, 2u}) {
        const Book b = random_book(rng, count, n, d);
        for (int trial = 0; trial < 20; ++trial) {
          std::vector<double> x(n * d);
          for (double& v : x) v = 1.4 * rng.uniform() - 0.2;
          const double clamp = trial % 2 ? 0.05 : 4.0;
          const simd::Nearest ref = simd::scalar::nearest_codevector(x, b.view, clamp);
          const simd::Nearest oracle = oracle_nearest(x, b.view, clamp);
          CHECK(ref.index == oracle.index);
          CHECK(std::bit_cast<std::uint64_t>(ref.distortion) ==
                std::bit_cast<std::uint64_t>(oracle.distortion));
          for (auto isa : available()) {
            simd::set_active_isa(isa);
            const simd::Nearest got = simd::nearest_codevector(x, b.view, clamp);
            CHECK(got.index == ref.index);
            CHECK(std::bit_cast<std::uint64_t>(got.distortion) ==
                  std::bit_cast<std::uint64_t>(ref.distortion));
          }
        }
      }
    }
  }
  simd::set_active_isa(simd::detected_isa());
}

TEST_CASE("nearest codevector: ties resolve to the lowest index") {
  std::vector<double> data(8, 0.0);
  data[0] = 0.5;
  data[1] = 0.1;
  data[2] = 0.9;
  data[3] = 0.1;
  data[4] = 0.1;
  const simd::CodebookView v{data.data(), 5, 8, 1, 1};
  const std::vector<double> x{0.1};
  for (auto isa : available()) {
    simd::set_active_isa(isa);
    CHECK(simd::nearest_codevector(x, v, 10.0).index == 1);
  }
  // Clamping makes every codevector equally bad.
  const std::vector<double> far{50.0};
  for (auto isa : available()) {
    simd::set_active_isa(isa);
    const auto r = simd::nearest_codevector(far, v, 1.0);
    CHECK(r.index == 0);
    CHECK(r.distortion == 1.0);
  }
  simd::set_active_isa(simd::detected_isa());
}

TEST_CASE("count_greater and max_abs_difference agree across ISAs") {
  uvq::RandomStream rng({5, 6, 7, 8});
  for (std::size_t len : {0u, 1u, 3u, 4u, 5u, 15u, 16u, 17u, 1000u}) {
    std::vector<double> a(len), b(len);
    std::size_t expected = 0;
    double worst = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      a[i] = rng.uniform() - 0.5;
      b[i] = i % 7 == 0 ? a[i] : rng.uniform() - 0.5;
      if (a[i] > b[i]) ++expected;
      worst = std::max(worst, std::fabs(a[i] - b[i]));
    }
    for (auto isa : available()) {
      simd::set_active_isa(isa);
      CHECK(simd::count_greater(a, b) == expected);
      CHECK(simd::max_abs_difference(a, b) == worst);
    }
  }
  simd::set_active_isa(simd::detected_isa());
}

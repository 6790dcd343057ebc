#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "families.hpp"
#include "uvq/block_quantizer.hpp"
#include "uvq/byte_io.hpp"
#include "uvq/error.hpp"
#include "uvq/parallel.hpp"

using namespace uvq;
using uvq::testing::gaussian_pair;
using uvq::testing::planar_mixture;
using uvq::testing::uniform_halves;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("uvq-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

DistortionSpec clamp_at(double k) {
  DistortionSpec s;
  s.bound = k;
  return s;
}

const ParameterVector kUniform{0.5, 0.5};  // uniform_halves at equal weights is Uniform[0, 1]

}  // namespace

TEST_CASE("rate parsing and bit accounting") {
  CHECK(Rate::parse("1") == Rate{1, 1});
  CHECK(Rate::parse("1/2") == Rate{1, 2});
  CHECK(Rate::parse("2/4") == Rate{1, 2});
  CHECK(Rate::parse("0.25") == Rate{1, 4});
  CHECK(Rate::parse("1.5") == Rate{3, 2});
  CHECK_THROWS_AS(Rate::parse("x"), PreconditionError);
  CHECK_THROWS_AS(Rate::parse("1/0"), PreconditionError);
  CHECK(Rate{1, 2}.bits(4) == 2);
  CHECK_THROWS_AS(Rate::of(1, 2).bits(3), PreconditionError);
  CHECK(DistortionSpec::for_support(Box{{0.0, 0.0}, {1.0, 2.0}}).bound == doctest::Approx(5.0));
}

TEST_CASE("clamped squared error") {
  const DistortionSpec s = clamp_at(0.5);
  const std::vector<double> x{0.1, 0.2}, y{0.1, 0.2}, far{3.0, 3.0};
  CHECK(s.letter(x, y) == 0.0);
  CHECK(s.letter(x, far) == 0.5);
  CHECK(s.letter(std::vector<double>{0.0}, std::vector<double>{0.5}) == doctest::Approx(0.25));
  CHECK(s.block(x, far, 1) == 1.0);
}

TEST_CASE("known two-level quantizer for the uniform density") {
  const auto fam = uniform_halves();
  const DistortionSpec spec = clamp_at(10.0);
  const Codebook book = design_codebook(*fam, kUniform, 1, Rate{1, 1}, spec, 7);
  REQUIRE(book.size() == 2);
  std::vector<double> c{book.codevector(0)[0], book.codevector(1)[0]};
  std::sort(c.begin(), c.end());
  CHECK(std::fabs(c[0] - 0.25) <= 0.02);
  CHECK(std::fabs(c[1] - 0.75) <= 0.02);
  const DistortionEstimate est = estimate_distortion(*fam, kUniform, book, spec, 20000, StreamKey{7, 1, 0, 0});
  CHECK(est.samples == 20000);
  CHECK(std::fabs(est.mean - 1.0 / 48.0) <= 0.15 / 48.0);
  CHECK(est.std_error > 0.0);
}

TEST_CASE("one codevector is the training mean") {
  const auto fam = planar_mixture();
  const ParameterVector theta{0.3, 0.7};
  DesignSettings settings;
  settings.training_blocks = 3000;
  const Codebook book = design_codebook(*fam, theta, 3, Rate{0, 1}, clamp_at(100.0), 11, settings);
  REQUIRE(book.size() == 1);
  REQUIRE(book.provenance());
  const SampleBlock train = sample_block(*fam, theta, 3000 * 3, book.provenance()->training_stream());
  const std::size_t dim = 6;
  for (std::size_t p = 0; p < dim; ++p) {
    double sum = 0.0;
    for (std::size_t b = 0; b < 3000; ++b) sum += train.values[b * dim + p];
    CHECK(std::fabs(book.codevector(0)[p] - sum / 3000.0) <= 1e-12);
  }
}

TEST_CASE("Lloyd training distortion never increases") {
  struct Case {
    std::shared_ptr<const SourceFamily> fam;
    ParameterVector theta;
    std::size_t n;
    Rate rate;
    double k;
  };
  const std::vector<Case> cases{
      {gaussian_pair(), {0.4, 0.6}, 2, Rate{1, 1}, 1.0},
      {gaussian_pair(), {0.9, 0.1}, 4, Rate{1, 1}, 1.0},
      {planar_mixture(), {0.5, 0.5}, 2, Rate{3, 2}, 2.0},
      {gaussian_pair(), {0.5, 0.5}, 2, Rate{2, 1}, 0.01},  // clamp active
      {uniform_halves(), {1.0, 0.0}, 3, Rate{1, 1}, 0.02},
  };
  for (const auto& c : cases) {
    const Codebook book = design_codebook(*c.fam, c.theta, c.n, c.rate, clamp_at(c.k), 3);
    const auto& h = book.history();
    REQUIRE(h.size() >= 2);
    CHECK(book.iterations() <= 200);
    for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i] <= h[i - 1] + 1e-12);
    CHECK(h.back() >= 0.0);
    CHECK(h.back() <= c.k);
  }
}

TEST_CASE("nearest-neighbour encoding") {
  const Codebook toy(2, 1, Rate{1, 2}, {0.0, 0.0, 1.0, 1.0});
  const DistortionSpec spec = clamp_at(10.0);
  const std::vector<double> x{0.1, 0.2};
  CHECK(nn_encode(toy, x, spec) == 0);
  CHECK(nn_encode(toy, std::vector<double>{1.0, 1.0}, spec) == 1);
  CHECK(nn_search(toy, std::vector<double>{1.0, 1.0}, spec).distortion == 0.0);
  CHECK_THROWS_AS(nn_encode(toy, std::vector<double>{0.0}, spec), ShapeError);
  const std::vector<double> mid{0.5, 0.5};
  CHECK(nn_encode(toy, mid, spec) == 0);  // tie goes to the lowest index

  RandomStream rng(StreamKey{5, 2, 0, 0});
  for (const double k : {10.0, 0.05}) {
    const DistortionSpec s = clamp_at(k);
    std::vector<double> rows(8 * 3);
    for (double& v : rows) v = rng.uniform();
    const Codebook book(3, 1, Rate{1, 1}, rows);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> z(3);
      for (double& v : z) v = rng.uniform() * 1.2 - 0.1;
      const std::size_t idx = nn_encode(book, z, s);
      const double chosen = s.block(z, book.codevector(idx), 1);
      for (std::size_t j = 0; j < book.size(); ++j) {
        const double other = s.block(z, book.codevector(j), 1);
        CHECK(chosen <= other + 1e-15);
        if (j < idx) CHECK(other > chosen - 1e-15);
      }
    }
  }
}

TEST_CASE("decode round trip and range") {
  const auto fam = gaussian_pair();
  const DistortionSpec spec = clamp_at(1.0);
  const Codebook book = design_codebook(*fam, ParameterVector{0.5, 0.5}, 4, Rate{1, 1}, spec, 9);
  REQUIRE(book.size() == 16);
  CHECK(std::log2(static_cast<double>(book.size())) / 4.0 == book.rate().value());
  for (std::size_t i = 0; i < book.size(); ++i) {
    const auto v = decode(book, i);
    CHECK(v.size() == 4);
    CHECK(nn_encode(book, v, spec) == i);
  }
  CHECK_THROWS_AS(decode(book, 16), IndexError);
}

TEST_CASE("design is reproducible and thread-count independent") {
  const auto fam = planar_mixture();
  const ParameterVector theta{0.2, 0.8};
  set_worker_count(1);
  const Codebook a = design_codebook(*fam, theta, 2, Rate{2, 1}, clamp_at(2.0), 21);
  set_worker_count(4);
  const Codebook b = design_codebook(*fam, theta, 2, Rate{2, 1}, clamp_at(2.0), 21);
  set_worker_count(0);
  CHECK(a.serialize() == b.serialize());
  const Codebook c = design_codebook(*fam, theta, 2, Rate{2, 1}, clamp_at(2.0), 22);
  CHECK(a.vectors() != c.vectors());
}

TEST_CASE("codebook cap and block length") {
  const auto fam = gaussian_pair();
  DesignSettings small;
  small.cap = 8;
  CHECK_THROWS_AS(design_codebook(*fam, ParameterVector{0.5, 0.5}, 4, Rate{1, 1}, clamp_at(1.0), 1, small),
                  SizeError);
  CHECK_THROWS_AS(design_codebook(*fam, ParameterVector{0.5, 0.5}, 3, Rate{1, 2}, clamp_at(1.0), 1),
                  PreconditionError);
  CHECK_THROWS_AS(design_codebook(*fam, ParameterVector{0.5, 0.6}, 2, Rate{1, 1}, clamp_at(1.0), 1),
                  ParameterError);
}

TEST_CASE("distortion estimate limits") {
  const auto fam = uniform_halves();
  std::vector<double> grid(64);
  for (std::size_t i = 0; i < 64; ++i) grid[i] = (static_cast<double>(i) + 0.5) / 64.0;
  const Codebook dense(1, 1, Rate{6, 1}, grid);
  const DistortionEstimate fine = estimate_distortion(*fam, kUniform, dense, clamp_at(1.0), 2000, StreamKey{1});
  CHECK(fine.mean <= std::pow(1.0 / 128.0, 2));

  const Codebook far(1, 1, Rate{1, 1}, {50.0, 60.0});
  const DistortionEstimate sat = estimate_distortion(*fam, kUniform, far, clamp_at(0.3), 500, StreamKey{2});
  CHECK(sat.mean == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(sat.std_error <= 1e-15);
}

TEST_CASE("matched codebooks beat mismatched ones") {
  const auto fam = gaussian_pair();
  const DistortionSpec spec = clamp_at(1.0);
  const ParameterVector theta{0.8, 0.2}, eta{0.2, 0.8};
  const Codebook own = design_codebook(*fam, theta, 2, Rate{1, 1}, spec, 4);
  const Codebook other = design_codebook(*fam, eta, 2, Rate{1, 1}, spec, 4);
  const auto a = estimate_distortion(*fam, theta, own, spec, 4000, StreamKey{4, 9});
  const auto b = estimate_distortion(*fam, theta, other, spec, 4000, StreamKey{4, 9});
  CHECK(b.mean >= a.mean - 3.0 * a.std_error);
}

TEST_CASE("mismatch gap against the variational bound") {
  const DistortionSpec spec = clamp_at(1.0);
  const auto fam = gaussian_pair();
  const auto same = mismatch_gap(*fam, ParameterVector{0.3, 0.7}, ParameterVector{0.3, 0.7}, 2, Rate{1, 1}, spec,
                                 1, DesignSettings{}, 200, StreamKey{3});
  CHECK(same.gap == 0.0);
  CHECK(same.bound == 0.0);

  const auto halves = uniform_halves();
  const auto disjoint = mismatch_gap(*halves, ParameterVector{1.0, 0.0}, ParameterVector{0.0, 1.0}, 2,
                                     Rate{1, 1}, spec, 1, DesignSettings{}, 500, StreamKey{3});
  CHECK(disjoint.bound == doctest::Approx(4.0));
  CHECK(disjoint.gap <= disjoint.bound);
  CHECK(disjoint.gap > 0.1);

  CodebookCache cache;
  RandomStream rng(StreamKey{8, 8});
  for (int i = 0; i < 5; ++i) {
    const double a = rng.uniform(), b = rng.uniform();
    const auto g = mismatch_gap(*fam, ParameterVector{a, 1.0 - a}, ParameterVector{b, 1.0 - b}, 4, Rate{1, 1},
                                spec, 2, DesignSettings{}, 1000, StreamKey{9, 0, 0, static_cast<std::uint64_t>(i)},
                                &cache);
    CHECK(g.gap <= g.bound + 3.0 * g.std_error);
  }
}

TEST_CASE("codebook files and the provenance cache") {
  const auto fam = gaussian_pair();
  const DistortionSpec spec = clamp_at(1.0);
  const ParameterVector theta{0.6, 0.4};
  const Codebook book = design_codebook(*fam, theta, 2, Rate{1, 1}, spec, 5);
  const auto bytes = book.serialize();
  const Codebook back = Codebook::deserialize(bytes);
  CHECK(back.vectors() == book.vectors());
  CHECK(back.history() == book.history());
  REQUIRE(back.provenance());
  CHECK(back.provenance()->key() == book.provenance()->key());
  CHECK_THROWS_AS(Codebook::deserialize(std::span(bytes).first(bytes.size() - 9)), FramingError);
  auto flipped = bytes;
  flipped[40] ^= 1;
  CHECK_THROWS_AS(Codebook::deserialize(flipped), FramingError);

  const auto dir = scratch_dir("codebooks");
  {
    CodebookCache cache(dir);
    const auto a = cache.get(*fam, theta, 2, Rate{1, 1}, spec, 5, DesignSettings{});
    const auto b = cache.get(*fam, theta, 2, Rate{1, 1}, spec, 5, DesignSettings{});
    CHECK(a.get() == b.get());
    CHECK(a->vectors() == book.vectors());
    CHECK(cache.designed() == 1);
  }
  {
    CodebookCache cache(dir);
    const auto a = cache.get(*fam, theta, 2, Rate{1, 1}, spec, 5, DesignSettings{});
    CHECK(cache.loaded() == 1);
    CHECK(a->vectors() == book.vectors());
  }
  const auto file = CodebookCache::file_for(dir, book.provenance()->key());
  REQUIRE(std::filesystem::exists(file));
  auto raw = read_file(file);
  raw[raw.size() / 2] ^= 0xFF;
  write_file_atomic(file, raw);
  {
    CodebookCache cache(dir);
    const auto a = cache.get(*fam, theta, 2, Rate{1, 1}, spec, 5, DesignSettings{});
    CHECK(cache.designed() == 1);
    CHECK(a->vectors() == book.vectors());
  }
  std::filesystem::remove_all(dir);
}

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "families.hpp"
#include "uvq/density_metrics.hpp"
#include "uvq/error.hpp"
#include "uvq/two_stage_codec.hpp"

using namespace uvq;
using uvq::testing::gaussian_pair;
using uvq::testing::uniform_halves;

namespace {

DistortionSpec clamp_at(double k) {
  DistortionSpec s;
  s.bound = k;
  return s;
}

CodecSetup mixture_setup(std::size_t n, std::uint64_t seed, std::size_t divisions = 20) {
  CodecSetup s;
  s.family = gaussian_pair();
  s.net = std::make_shared<const ParameterNet>(ParameterNet::simplex_lattice(2, divisions));
  s.table = YatracosTable::build(*s.family, *s.net);
  s.n = n;
  s.rate = Rate{1, 1};
  s.spec = clamp_at(1.0);
  s.master_seed = seed;
  s.design.training_blocks = 2048;
  return s;
}

std::vector<double> source_letters(const SourceFamily& fam, const ParameterVector& theta, std::size_t count,
                                   std::uint64_t seed) {
  return sample_block(fam, theta, count, StreamKey{seed, purpose_tag("codec-test")}).values;
}

}  // namespace

TEST_CASE("grid examples on the unit interval") {
  const ThetaSpace unit = ThetaSpace::box(Box{{0.0}, {1.0}});
  const auto net = ParameterNet::box_lattice(Box{{0.0}, {1.0}}, 8);
  const auto g4 = ParameterGrid::build(unit, 1, 4, net);
  CHECK(g4.cell_count() == 2);
  CHECK(g4.header_bits() == 1);
  CHECK(g4.cell_side() == 0.5);
  CHECK(g4.cell_of(std::vector<double>{0.7}) == 1u);
  CHECK(g4.cell_of(std::vector<double>{0.5}) == 1u);
  CHECK(g4.cell_of(std::vector<double>{0.4999}) == 0u);
  CHECK(g4.cell_of(std::vector<double>{1.0}) == 1u);  // top face closed
  CHECK_FALSE(g4.cell_of(std::vector<double>{1.01}));
  const auto g16 = ParameterGrid::build(unit, 1, 16, net);
  CHECK(g16.cell_count() == 4);
  CHECK(g16.header_bits() == 2);
  CHECK(g16.representative(1)[0] == 0.25);  // lowest-index net point in [1/4, 1/2)
  CHECK(g16.representative_on_net(1));

  CHECK(grid_header_bits(2, 1, 4) == 2);
  CHECK(grid_header_bits(3, 1, 4) == 3);
  CHECK(grid_header_bits(1, 1, 1) == 0);
  CHECK(grid_header_bits(2, 3, 10) == 8);  // 12^2 = 144 cells
  CHECK_THROWS_AS(ParameterGrid::build(ThetaSpace::box(Box{{-2.0}, {2.0}}), 3, 4,
                                       ParameterNet::box_lattice(Box{{-2.0}, {2.0}}, 4)),
                  ConfigError);
}

TEST_CASE("grid invariants") {
  struct Case {
    ThetaSpace space;
    ParameterNet net;
    std::size_t j;
  };
  std::vector<Case> cases;
  cases.push_back({ThetaSpace::simplex(2), ParameterNet::simplex_lattice(2, 30), 1});
  cases.push_back({ThetaSpace::simplex(3), ParameterNet::simplex_lattice(3, 12), 1});
  cases.push_back({ThetaSpace::simplex(3), ParameterNet::simplex_lattice(3, 3), 2});
  cases.push_back({ThetaSpace::box(Box{{-1.0, -1.0}, {1.0, 1.0}}),
                   ParameterNet::box_lattice(Box{{-1.0, -1.0}, {1.0, 1.0}}, 6), 2});
  for (const auto& c : cases) {
    for (const std::size_t n : {1u, 2u, 4u, 9u, 10u, 64u, 100u}) {
      const auto g = ParameterGrid::build(c.space, c.j, n, c.net);
      const double k = static_cast<double>(c.space.dim());
      const double cells = std::ceil(std::sqrt(static_cast<double>(n)));
      CHECK(g.cell_side() == 1.0 / cells);
      CHECK(static_cast<double>(g.cell_count()) <= std::pow(static_cast<double>(c.j) * cells, k));
      CHECK(g.header_bits() <= std::ceil(k * (std::log2(cells) + std::log2(static_cast<double>(c.j)))) + k);
      CHECK(g.cell_count() <= (std::size_t{1} << g.header_bits()));
      for (std::size_t i = 0; i < g.cell_count(); ++i) {
        const auto& rep = g.representative(i);
        CHECK(c.space.contains(rep.coords()));
        CHECK(g.cell_of(rep.coords()) == i);
      }
      for (std::size_t i = 0; i < c.net.size(); ++i) CHECK(g.cell_of(c.net[i].coords()).has_value());
      CHECK(g.initial_cell() < g.cell_count());
    }
  }
}

TEST_CASE("first stage picks the cell of the estimate") {
  const auto fam = uniform_halves();
  const auto net = ParameterNet::explicit_points(ThetaSpace::simplex(2), {{1.0, 0.0}, {0.0, 1.0}});
  const auto table = YatracosTable::build(*fam, net);
  const auto grid = ParameterGrid::build(ThetaSpace::simplex(2), 1, 4, net);
  const auto z = sample_block(*fam, ParameterVector{1.0, 0.0}, 4, StreamKey{1});
  const FirstStage fs = first_stage_encode(*fam, net, *table, grid, z);
  CHECK(fs.net_index == 0);
  CHECK(fs.estimate == ParameterVector{1.0, 0.0});
  CHECK(grid.representative(fs.cell) == ParameterVector{1.0, 0.0});
  CHECK_THROWS_AS(first_stage_encode(*fam, net, *table, grid, sample_block(*fam, {1.0, 0.0}, 3, StreamKey{1})),
                  PreconditionError);

  const auto fine = std::make_shared<ParameterNet>(ParameterNet::simplex_lattice(2, 24));
  const auto gfam = gaussian_pair();
  const auto gtable = YatracosTable::build(*gfam, *fine);
  for (const std::size_t n : {4u, 16u, 50u}) {
    const auto g = ParameterGrid::build(ThetaSpace::simplex(2), 1, n, *fine);
    const double limit = std::sqrt(2.0) / std::ceil(std::sqrt(static_cast<double>(n)));
    for (std::uint64_t t = 0; t < 40; ++t) {
      const auto zb = sample_block(*gfam, {0.35, 0.65}, n, StreamKey{2, 0, n, t});
      const auto f = first_stage_encode(*gfam, *fine, *gtable, g, zb);
      CHECK(distance(f.estimate, g.representative(f.cell)) <= limit);
    }
  }
}

TEST_CASE("bit writer and reader") {
  BitWriter w;
  w.put(0b101, 3);
  w.put(0, 0);
  w.put(0xABCD, 16);
  w.put(1, 1);
  CHECK(w.bit_count() == 20);
  CHECK(w.bytes().size() == 3);
  CHECK(w.bytes()[0] == 0b10110101);
  BitReader r(w.bytes());
  CHECK(r.get(3) == 0b101);
  CHECK(r.get(16) == 0xABCD);
  CHECK(r.get(1) == 1);
  CHECK(r.get(4) == 0);
  CHECK_THROWS_AS(r.get(1), FramingError);
}

TEST_CASE("stream length and rate accounting") {
  const CodecSetup setup = mixture_setup(4, 3);
  const TwoStageCodec codec(setup);
  CHECK(codec.grid().header_bits() == 2);
  for (const std::size_t blocks : {1u, 2u, 7u}) {
    const auto letters = source_letters(*setup.family, {0.5, 0.5}, 4 * blocks, blocks);
    const EncodeResult r = codec.encode(letters);
    CHECK(r.payload_bits == blocks * (2 + 4));
    CHECK(r.stream.size() == kStreamHeaderBytes + (r.payload_bits + 7) / 8 + 4);
    CHECK(r.bits_per_letter(4) == 1.0 + 2.0 / 4.0);
    CHECK(r.trace.blocks[0].cell == codec.grid().initial_cell());
    CHECK_FALSE(r.trace.blocks[0].estimate.has_value());
    const StreamHeader h = read_stream_header(r.stream);
    CHECK(h.blocks == blocks);
    CHECK(h.n == 4);
    CHECK(h.k == 2);
  }

  // Three components and n = 4: k log2(ceil(sqrt n)) = 3 header bits, 1.75 bits per letter.
  CodecSetup three;
  three.family = SourceFamily::mixture(Box{{0.0}, {1.0}}, {ProductDensity{{AxisDensity::uniform(0.0, 0.4)}},
                                                           ProductDensity{{AxisDensity::uniform(0.3, 0.7)}},
                                                           ProductDensity{{AxisDensity::uniform(0.6, 1.0)}}});
  three.net = std::make_shared<const ParameterNet>(ParameterNet::simplex_lattice(3, 4));
  three.table = YatracosTable::build(*three.family, *three.net);
  three.n = 4;
  three.spec = clamp_at(1.0);
  three.design.training_blocks = 1024;
  const TwoStageCodec c3(three);
  CHECK(c3.grid().header_bits() == 3);
  const EncodeResult r3 = c3.encode(source_letters(*three.family, {0.2, 0.3, 0.5}, 4, 1));
  CHECK(r3.payload_bits == 7);
  CHECK(r3.bits_per_letter(4) == 1.75);
}

TEST_CASE("encode and decode agree on fuzzed streams") {
  const auto cache = std::make_shared<CodebookCache>();
  const CodecSetup setup = mixture_setup(2, 17);
  const TwoStageCodec enc(setup, cache);
  CodecSetup dsetup = setup;
  dsetup.table = nullptr;
  const TwoStageCodec dec(dsetup, std::make_shared<CodebookCache>());
  RandomStream rng(StreamKey{99});
  for (int i = 0; i < 100; ++i) {
    const double w = rng.uniform();
    const std::size_t blocks = 1 + rng.below(12);
    const auto letters = source_letters(*setup.family, {w, 1.0 - w}, 2 * blocks, 1000 + i);
    const EncodeResult e = enc.encode(letters);
    const DecodeResult d = dec.decode(e.stream);
    REQUIRE(d.reproduction == e.reproduction);
    REQUIRE(d.trace.blocks.size() == e.trace.blocks.size());
    for (std::size_t t = 0; t < blocks; ++t) {
      CHECK(d.trace.blocks[t].cell == e.trace.blocks[t].cell);
      CHECK(d.trace.blocks[t].quantized == e.trace.blocks[t].quantized);
      CHECK(e.trace.blocks[t].quantized == enc.grid().representative(e.trace.blocks[t].cell));
    }
  }
}

TEST_CASE("a flipped payload bit changes at most one block") {
  const CodecSetup setup = mixture_setup(2, 5);
  const TwoStageCodec codec(setup);
  const std::size_t blocks = 10;
  const auto letters = source_letters(*setup.family, {0.3, 0.7}, 2 * blocks, 77);
  const EncodeResult e = codec.encode(letters);
  const std::size_t per = codec.bits_per_block();
  const std::size_t dim = 2;
  std::size_t decoded = 0;
  for (std::uint64_t bit = 0; bit < e.payload_bits; ++bit) {
    auto s = e.stream;
    s[kStreamHeaderBytes + bit / 8] ^= static_cast<std::uint8_t>(0x80u >> (bit % 8));
    CHECK_THROWS_AS(codec.decode(s), FramingError);
    DecodeResult d;
    try {
      d = codec.decode(s, false);
    } catch (const FramingError&) {
      continue;  // header bit pushed the cell index out of range
    }
    ++decoded;
    std::size_t changed = 0;
    for (std::size_t t = 0; t < blocks; ++t) {
      const bool differs = !std::equal(d.reproduction.begin() + t * dim, d.reproduction.begin() + (t + 1) * dim,
                                       e.reproduction.begin() + t * dim);
      if (differs) {
        ++changed;
        CHECK(t == bit / per);
      }
    }
    CHECK(changed <= 1);
    if (bit % per >= codec.grid().header_bits()) CHECK(changed == 1);
  }
  CHECK(decoded >= blocks * codec.body_bits());
}

TEST_CASE("stream framing and compatibility errors") {
  const CodecSetup setup = mixture_setup(4, 8);
  const TwoStageCodec codec(setup);
  const auto letters = source_letters(*setup.family, {0.6, 0.4}, 4 * 5, 3);
  const EncodeResult e = codec.encode(letters);

  const auto cut = std::span(e.stream).first(e.stream.size() - 5);
  try {
    codec.decode(cut);
    FAIL("truncated stream decoded");
  } catch (const FramingError& err) {
    CHECK(std::string(err.what()).find("block 5") != std::string::npos);
  }
  CHECK_THROWS_AS(codec.decode(std::span(e.stream).first(20)), FramingError);
  auto extra = e.stream;
  extra.push_back(0);
  CHECK_THROWS_AS(codec.decode(extra), FramingError);

  auto version = e.stream;
  version[8] = 7;
  CHECK_THROWS_AS(codec.decode(version), CompatibilityError);
  auto magic = e.stream;
  magic[0] = 'X';
  CHECK_THROWS_AS(codec.decode(magic), FramingError);

  const TwoStageCodec other_seed(mixture_setup(4, 9));
  CHECK_THROWS_AS(other_seed.decode(e.stream), CompatibilityError);
  const TwoStageCodec other_net(mixture_setup(4, 8, 10));
  CHECK_THROWS_AS(other_net.decode(e.stream), CompatibilityError);
}

TEST_CASE("stream distortion matches the per-cell distortion law") {
  const CodecSetup setup = mixture_setup(2, 31);
  const auto cache = std::make_shared<CodebookCache>();
  const TwoStageCodec codec(setup, cache);
  const ParameterVector theta{0.25, 0.75};
  const std::size_t blocks = 3000;
  const auto letters = source_letters(*setup.family, theta, 2 * blocks, 5);
  const EncodeResult e = codec.encode(letters);

  std::vector<double> per(blocks);
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t t = 0; t < blocks; ++t) {
    per[t] = setup.spec.block(std::span(letters).subspan(2 * t, 2), std::span(e.reproduction).subspan(2 * t, 2), 1) / 2.0;
    ++counts[e.trace.blocks[t].cell];
  }
  double mean = 0.0;
  for (double v : per) mean += v;
  mean /= blocks;
  double var = 0.0;
  for (double v : per) var += (v - mean) * (v - mean);
  const double se = std::sqrt(var / (blocks - 1) / blocks);

  double expected = 0.0, expected_var = 0.0;
  for (const auto& [cell, count] : counts) {
    const auto est = estimate_distortion(*setup.family, theta, *codec.codebook(cell), setup.spec, 20000,
                                         StreamKey{6, 0, cell});
    const double w = static_cast<double>(count) / blocks;
    expected += w * est.mean;
    expected_var += w * w * est.std_error * est.std_error;
  }
  CHECK(std::fabs(mean - expected) <= 3.0 * std::sqrt(se * se + expected_var));
}

TEST_CASE("identification inequality chain") {
  const auto fam = gaussian_pair();
  const auto net = ParameterNet::simplex_lattice(2, 40);
  const auto table = YatracosTable::build(*fam, net);
  const std::size_t n = 64;
  const auto grid = ParameterGrid::build(ThetaSpace::simplex(2), 1, n, net);
  std::vector<std::pair<ParameterVector, ParameterVector>> pairs;
  for (std::size_t i = 0; i < net.size(); ++i) {
    pairs.emplace_back(net[i], grid.representative(*grid.cell_of(net[i].coords())));
  }
  const double beta = lipschitz_ratio_max(*fam, pairs);
  CHECK(beta <= mixture_lipschitz_bound({1.0, 0.0}, {0.0, 1.0}) / std::sqrt(2.0) + 1e-8);
  const double quant = beta * std::sqrt(2.0) / std::ceil(std::sqrt(static_cast<double>(n)));
  for (const std::size_t ti : {8u, 20u, 33u}) {
    const ParameterVector& theta = net[ti];
    for (std::uint64_t t = 0; t < 60; ++t) {
      const auto z = sample_block(*fam, theta, n, StreamKey{12, 0, ti, t});
      const FirstStage fs = first_stage_encode(*fam, net, *table, grid, z);
      const double delta = deviation(*fam, net, *table, z, ti);
      const double dv = variational_distance(*fam, theta, grid.representative(fs.cell)).value;
      CHECK(dv <= 2.0 * delta + 3.0 / (2.0 * n) + quant + 1e-8);
    }
  }
}

// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "uvq/block_quantizer.hpp"
#include "uvq/byte_io.hpp"
#include "uvq/density_metrics.hpp"
#include "uvq/experiment.hpp"
#include "uvq/parallel.hpp"
#include "uvq/two_stage_codec.hpp"
#include "uvq/yatracos.hpp"

using namespace uvq;

namespace {

const std::filesystem::path kRoot = UVQ_SOURCE_DIR;
std::filesystem::path g_cache;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::shared_ptr<const SourceFamily> family(const std::string& name) {
  return SourceFamily::load(kRoot / "configs" / "families" / (name + ".family"));
}

ExperimentConfig experiment(const std::string& name) {
  ExperimentConfig c = ExperimentConfig::load(kRoot / "configs" / "experiments" / (name + ".exp"));
  c.cache_dir = g_cache;
  return c;
}

const ExperimentRecord* record(const ExperimentResult& r, std::size_t n, const std::string& metric) {
  for (const auto& rec : r.records) {
    if (rec.n == n && rec.metric == metric) return &rec;
  }
  return nullptr;
}

DistortionSpec clamp_at(double k) {
  DistortionSpec s;
  s.bound = k;
  return s;
}

// 1. Scheffe identity.
Outcome scheffe_identity() {
  double worst = 0.0;
  std::size_t pairs = 0;
  const std::vector<std::pair<std::string, std::size_t>> plan{
      {"gaussian_pair", 100}, {"planar_mixture", 100}, {"exponential_linear", 50}, {"exponential_quadratic", 50}};
  for (const auto& [name, count] : plan) {
    const auto fam = family(name);
    const auto ps = random_parameter_pairs(*fam, count, StreamKey{1, purpose_tag("acceptance-scheffe")});
    std::vector<double> gap(ps.size());
    parallel_for(ps.size(), [&](std::size_t i) {
      gap[i] = std::fabs(scheffe_distance(*fam, ps[i].a, ps[i].b).value -
                         variational_distance(*fam, ps[i].a, ps[i].b).value);
    });
    for (double g : gap) worst = std::max(worst, g);
    pairs += ps.size();
  }
  return {worst <= 1e-6, std::to_string(pairs) + " pairs, max |scheffe - d_V| = " + fmt("%.3g", worst)};
}

// 2. Minimum-distance inequality; 6. mismatch bound. Both come from the
// shipped mixture audit.
ExperimentResult& mixture_audit() {
  static ExperimentResult r = [] {
    const ExperimentContext ctx(experiment("audit_mixture"));
    return run_bounds_audit(ctx);
  }();
  return r;
}

Outcome min_distance() {
  const ExperimentResult& r = mixture_audit();
  std::size_t count = 0, bad = 0;
  double min_slack = 1e300;
  for (const auto& ch : r.checks) {
    if (ch.check != "mindist") continue;
    ++count;
    bad += ch.violated ? 1 : 0;
    min_slack = std::min(min_slack, ch.slack());
  }
  return {count >= 1000 && bad == 0, std::to_string(count) + " trials at n = 256, " + std::to_string(bad) +
                                          " violations, min slack " + fmt("%.3g", min_slack)};
}

Outcome mismatch_bound() {
  const ExperimentResult& r = mixture_audit();
  std::size_t count = 0, bad = 0;
  for (const auto& ch : r.checks) {
    if (ch.check != "mismatch") continue;
    ++count;
    bad += ch.violated ? 1 : 0;
  }
  const auto* rec = record(r, 4, "violations_mismatch");
  return {count == 20 && bad == 0 && rec && rec->value == 0.0,
          std::to_string(count) + " pairs at n = 4, " + std::to_string(bad) + " violations"};
}

// 3. Identification scaling.
Outcome identification_scaling() {
  const ExperimentContext ctx(experiment("identification"));
  const ExperimentResult r = run_identification(ctx);
  const auto* m64 = record(r, 64, "dv_mean");
  const auto* m1024 = record(r, 1024, "dv_mean");
  const auto* q64 = record(r, 64, "dv_q99");
  const auto* q1024 = record(r, 1024, "dv_q99");
  if (!m64 || !m1024 || !q64 || !q1024) return {false, "missing records"};
  const double ratio = m64->value / m1024->value;
  const bool trials = m64->trials >= 500 && m1024->trials >= 500;
  return {trials && ratio >= 2.0 && q1024->value <= q64->value,
          "mean ratio " + fmt("%.3f", ratio) + ", q99 " + fmt("%.4f", q64->value) + " -> " + fmt("%.4f", q1024->value) +
              ", slope " + fmt("%.3f", r.fits.front().slope)};
}

// 4. Redundancy trend; 5 uses the same run for its bit-exact flags.
ExperimentResult& redundancy_run() {
  static ExperimentResult r = [] {
    const ExperimentContext ctx(experiment("redundancy"));
    return run_redundancy(ctx);
  }();
  return r;
}

Outcome redundancy_trend() {
  const ExperimentResult& r = redundancy_run();
  std::string detail;
  bool ok = true;
  for (const std::size_t n : {2, 4, 8}) {
    const auto* g = record(r, n, "redundancy");
    if (!g) return {false, "missing n = " + std::to_string(n)};
    ok = ok && g->value >= -3.0 * g->std_error;
    detail += "n=" + std::to_string(n) + ": " + fmt("%.5f", g->value) + " +- " + fmt("%.5f", g->std_error) + "  ";
  }
  const auto* g2 = record(r, 2, "redundancy");
  const auto* g8 = record(r, 8, "redundancy");
  const double combined = std::hypot(g2->std_error, g8->std_error);
  ok = ok && g8->value <= g2->value + 3.0 * combined;
  return {ok, detail};
}

// 5. Rate accounting.
Outcome rate_accounting() {
  struct Case {
    std::string fam;
    std::size_t j;
    std::size_t divisions;
    std::vector<std::size_t> ns;
    Rate rate;
  };
  const std::vector<Case> cases{{"gaussian_pair", 1, 32, {1, 2, 4, 8}, Rate::of(1, 1)},
                                {"exponential_linear", 4, 64, {4, 8, 16}, Rate::of(1, 4)},
                                {"planar_mixture", 1, 32, {2, 3}, Rate::of(1, 1)}};
  std::size_t streams = 0;
  bool ok = true;
  std::string bad;
  for (const auto& c : cases) {
    CodecSetup s;
    s.family = family(c.fam);
    s.net = std::make_shared<const ParameterNet>(s.family->theta_space().kind() == ThetaSpace::Kind::Simplex
                                                     ? ParameterNet::simplex_lattice(s.family->param_dim(), c.divisions)
                                                     : ParameterNet::box_lattice(s.family->theta_space().bounds(),
                                                                                 c.divisions));
    s.table = YatracosTable::build(*s.family, *s.net);
    s.cube_side = c.j;
    s.rate = c.rate;
    s.spec = DistortionSpec::for_support(s.family->support());
    s.master_seed = 5;
    s.design.training_blocks = 1024;
    const auto cache = std::make_shared<CodebookCache>(g_cache);
    const std::size_t k = s.family->param_dim();
    for (const std::size_t n : c.ns) {
      s.n = n;
      const TwoStageCodec codec(s, cache);
      const unsigned hb = codec.grid().header_bits();
      std::size_t cu = 1;
      while (cu * cu < n) ++cu;
      const double cap = std::ceil(static_cast<double>(k) * (std::log2(static_cast<double>(cu)) +
                                                             std::log2(static_cast<double>(c.j)))) +
                         static_cast<double>(k);
      ok = ok && hb <= cap;
      for (const std::size_t blocks : {1, 7, 40}) {
        const auto theta = (*s.net)[(blocks * 7) % s.net->size()];
        const auto letters = sample_block(*s.family, theta, blocks * n, StreamKey{9, purpose_tag("acceptance-rate"), n, blocks}).values;
        const EncodeResult e = codec.encode(letters);
        const std::uint64_t body = c.rate.bits(n);
        const bool exact_bits = e.payload_bits == blocks * (hb + body);
        // R + header_bits / n as an exact rational: (n R + hb) / n.
        const double expected = (static_cast<double>(body) + hb) / static_cast<double>(n);
        const bool exact_rate = e.bits_per_letter(n) == expected;
        const bool size = e.stream.size() == kStreamHeaderBytes + (e.payload_bits + 7) / 8 + 4;
        if (!(exact_bits && exact_rate && size)) {
          ok = false;
          bad = c.fam + " n=" + std::to_string(n);
        }
        ++streams;
      }
    }
  }
  for (const auto& rec : redundancy_run().records) {
    if (rec.metric == "rate_overhead") {
      ok = ok && rec.flags == "bit-exact";
      ++streams;
    }
  }
  return {ok, std::to_string(streams) + " stream checks" + (bad.empty() ? "" : ", mismatch at " + bad)};
}

// 7. Exponential-family chain on a 10 x 10 grid.
Outcome exponential_chain() {
  const auto fam = family("exponential_linear");
  const double a_k = sup_norm_ratio(*fam).value;
  std::vector<ParameterVector> grid;
  for (int i = 0; i < 10; ++i) grid.push_back(ParameterVector{-2.0 + 4.0 * i / 9.0});
  const double l = log_ratio_sup(*fam, grid);
  std::vector<int> bad(100, 0);
  parallel_for(100, [&](std::size_t q) {
    const auto& th = grid[q / 10];
    const auto& et = grid[q % 10];
    const PinskerCheck p = pinsker_check(*fam, th, et);
    const DistanceReport kl = relative_entropy(*fam, th, et);
    const DistanceReport dv = variational_distance(*fam, th, et);
    int v = p.holds ? 0 : 1;
    if (kl.value > divergence_growth_bound(th, et, a_k, l) + kl.error_estimate + 1e-12) v += 1;
    if (dv.value > variational_growth_bound(th, et, a_k, l) + dv.error_estimate + 1e-12) v += 1;
    bad[q] = v;
  });
  const int violations = std::accumulate(bad.begin(), bad.end(), 0);
  const bool ak = std::fabs(a_k - 2.0) <= 1e-9;
  return {violations == 0 && ak, "A_k = " + fmt("%.12f", a_k) + ", L = " + fmt("%.4f", l) + ", " +
                                     std::to_string(violations) + " violations over 300 checks"};
}

// 8. Mixture Lipschitz constant.
Outcome mixture_lipschitz() {
  const auto fam = SourceFamily::mixture(Box{{0.0}, {1.0}},
                                         {ProductDensity{{AxisDensity::truncated_gaussian(0.2, 0.1, 0.0, 1.0)}},
                                          ProductDensity{{AxisDensity::truncated_gaussian(0.5, 0.1, 0.0, 1.0)}},
                                          ProductDensity{{AxisDensity::truncated_gaussian(0.8, 0.1, 0.0, 1.0)}}});
  const ParameterNet lattice = ParameterNet::simplex_lattice(3, 6);
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < lattice.size(); ++i) {
    for (std::size_t j = i + 1; j < lattice.size(); ++j) all.emplace_back(i, j);
  }
  std::vector<std::pair<std::size_t, std::size_t>> pick;
  for (std::size_t q = 0; q < 200; ++q) pick.push_back(all[q * all.size() / 200]);
  std::vector<double> excess(pick.size());
  parallel_for(pick.size(), [&](std::size_t q) {
    const auto& a = lattice[pick[q].first];
    const auto& b = lattice[pick[q].second];
    excess[q] = variational_distance(*fam, a, b).value - mixture_lipschitz_bound(a, b);
  });
  std::size_t bad = 0;
  for (double e : excess) bad += e > 1e-8 ? 1 : 0;

  const auto halves = family("uniform_halves");
  const ParameterVector p{1.0, 0.0}, q{0.0, 1.0};
  const double eq = std::fabs(variational_distance(*halves, p, q).value - mixture_lipschitz_bound(p, q));
  return {bad == 0 && eq <= 1e-8, std::to_string(pick.size()) + " grid pairs, " + std::to_string(bad) +
                                      " violations, max excess " +
                                      fmt("%.3g", *std::max_element(excess.begin(), excess.end())) +
                                      ", disjoint pair gap " + fmt("%.3g", eq)};
}

// 9. VC probe: no 3 points shattered by Yatracos sets of k = 2 mixtures.
Outcome vc_probe() {
  std::size_t shattered = 0, configs = 0;
  for (const std::string name : {"gaussian_pair", "uniform_halves"}) {
    const auto fam = family(name);
    const auto sets = random_parameter_pairs(*fam, 10000, StreamKey{3, purpose_tag("acceptance-vc-sets")});
    const std::size_t draws = 10000;
    std::vector<std::uint8_t> hit(draws, 0);
    parallel_for(draws, [&](std::size_t t) {
      RandomStream rng(StreamKey{3, purpose_tag("acceptance-vc-points"), 0, t});
      std::vector<double> pts(3);
      for (double& x : pts) x = rng.uniform();
      hit[t] = shatter_count(*fam, sets, pts) == 8 ? 1 : 0;
    });
    for (auto h : hit) shattered += h;
    configs += draws;
  }
  return {shattered == 0, std::to_string(configs) + " configurations x 10000 sets, " + std::to_string(shattered) +
                              " shattered"};
}

// 10. Codec integrity.
Outcome codec_integrity() {
  CodecSetup s;
  s.family = family("gaussian_pair");
  s.net = std::make_shared<const ParameterNet>(ParameterNet::simplex_lattice(2, 20));
  s.table = YatracosTable::build(*s.family, *s.net);
  s.rate = Rate::of(1, 1);
  s.spec = clamp_at(1.0);
  s.master_seed = 17;
  s.design.training_blocks = 2048;
  const auto enc_cache = std::make_shared<CodebookCache>(g_cache);
  const auto dec_cache = std::make_shared<CodebookCache>();
  RandomStream rng(StreamKey{99, purpose_tag("acceptance-fuzz")});
  std::size_t identical = 0;
  for (int i = 0; i < 100; ++i) {
    s.n = 1 + rng.below(4);
    const TwoStageCodec enc(s, enc_cache);
    CodecSetup ds = s;
    ds.table = nullptr;
    const TwoStageCodec dec(ds, dec_cache);
    const double w = rng.uniform();
    const std::size_t blocks = 1 + rng.below(16);
    const auto letters =
        sample_block(*s.family, {w, 1.0 - w}, s.n * blocks, StreamKey{99, purpose_tag("acceptance-fuzz"), 1, static_cast<std::uint64_t>(i)}).values;
    const EncodeResult e = enc.encode(letters);
    const DecodeResult d = dec.decode(e.stream);
    bool same = d.reproduction == e.reproduction && d.trace.blocks.size() == e.trace.blocks.size();
    for (std::size_t t = 0; same && t < blocks; ++t) {
      same = d.trace.blocks[t].cell == e.trace.blocks[t].cell && d.trace.blocks[t].quantized == e.trace.blocks[t].quantized;
    }
    identical += same ? 1 : 0;
  }

  // Every design logged to the cache directory during this run.
  std::size_t logged = 0, nonmonotone = 0;
  for (const auto& f : std::filesystem::directory_iterator(g_cache)) {
    if (f.path().filename().string().rfind("cb-", 0) != 0) continue;
    const Codebook book = Codebook::deserialize(read_file(f.path()));
    const auto& h = book.history();
    ++logged;
    for (std::size_t i = 1; i < h.size(); ++i) {
      if (h[i] > h[i - 1] + 1e-12) {
        ++nonmonotone;
        break;
      }
    }
  }

  const auto planar = family("planar_mixture");
  DesignSettings settings;
  settings.training_blocks = 3000;
  const Codebook one = design_codebook(*planar, {0.3, 0.7}, 3, Rate::of(0, 1), clamp_at(100.0), 11, settings);
  const SampleBlock train = sample_block(*planar, {0.3, 0.7}, 3000 * 3, one.provenance()->training_stream());
  double worst = 0.0;
  for (std::size_t p = 0; p < 6; ++p) {
    double sum = 0.0;
    for (std::size_t b = 0; b < 3000; ++b) sum += train.values[b * 6 + p];
    worst = std::max(worst, std::fabs(one.codevector(0)[p] - sum / 3000.0));
  }
  return {identical == 100 && logged > 0 && nonmonotone == 0 && worst <= 1e-12,
          std::to_string(identical) + "/100 round trips identical, " + std::to_string(logged) + " designs logged, " +
              std::to_string(nonmonotone) + " non-monotone, 1-center error " + fmt("%.3g", worst)};
}

// 11. Known quantizer on Uniform[0, 1].
Outcome known_quantizer() {
  const auto fam = family("uniform_halves");
  const ParameterVector u{0.5, 0.5};
  const DistortionSpec spec = clamp_at(10.0);
  const Codebook book = design_codebook(*fam, u, 1, Rate::of(1, 1), spec, 2024);
  std::vector<double> c{book.codevector(0)[0], book.codevector(1)[0]};
  std::sort(c.begin(), c.end());
  const DistortionEstimate est = estimate_distortion(*fam, u, book, spec, 20000, StreamKey{7, purpose_tag("acceptance-known")});
  const bool ok = std::fabs(c[0] - 0.25) <= 0.02 && std::fabs(c[1] - 0.75) <= 0.02 &&
                  std::fabs(est.mean - 1.0 / 48.0) <= 0.15 / 48.0;
  return {ok, "codebook {" + fmt("%.4f", c[0]) + ", " + fmt("%.4f", c[1]) + "}, D = " + fmt("%.6f", est.mean) +
                  " vs 1/48 = " + fmt("%.6f", 1.0 / 48.0)};
}

}  // namespace

int main() {
  g_cache = std::filesystem::temp_directory_path() / "uvq-acceptance-cache";
  std::filesystem::remove_all(g_cache);
  std::filesystem::create_directories(g_cache);

  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "Scheffe identity", 60, scheffe_identity},
      {2, "minimum-distance inequality", 300, min_distance},
      {3, "identification scaling", 600, identification_scaling},
      {4, "redundancy trend", 1200, redundancy_trend},
      {5, "rate accounting", 60, rate_accounting},
      {6, "mismatch bound", 600, mismatch_bound},
      {7, "exponential-family chain", 120, exponential_chain},
      {8, "mixture Lipschitz", 60, mixture_lipschitz},
      {9, "VC probe", 120, vc_probe},
      {10, "codec integrity", 600, codec_integrity},
      {11, "known quantizer", 60, known_quantizer},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = o.pass && s <= c.budget_s;
    failed += pass ? 0 : 1;
    std::printf("%s %2d %s: %s [%.2fs, budget %.0fs]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), s,
                c.budget_s);
    std::fflush(stdout);
  }
  std::filesystem::remove_all(g_cache);
  return failed == 0 ? 0 : 1;
}

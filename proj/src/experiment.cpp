#include "uvq/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "uvq/byte_io.hpp"
#include "uvq/density_metrics.hpp"
#include "uvq/error.hpp"
#include "uvq/parallel.hpp"

namespace uvq {
namespace {

constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

const std::vector<std::string> kKeys{
    "format", "family", "seed", "grid.J", "net.divisions", "net.points", "rate", "distortion.K",
    "training.blocks", "lloyd.max_iterations", "lloyd.tolerance", "codebook.cap", "estimator.slack",
    "test.theta", "codec.n", "identification.schedule", "identification.trials", "redundancy.schedule",
    "redundancy.blocks", "audit.trials", "audit.n", "audit.pairs", "audit.mismatch_pairs", "audit.mismatch_n",
    "audit.mismatch_trials", "output.dir", "cache.dir"};

std::size_t positive(const KvDocument& doc, const std::string& key, std::size_t fallback,
                     long long max = std::numeric_limits<int>::max()) {
  const KvEntry* e = doc.find(key);
  if (!e) return fallback;
  const long long v = parse_integer(*e, e->value);
  if (v < 1 || v > max) {
    throw ConfigError(key, e->line, "must be an integer in 1.." + std::to_string(max));
  }
  return static_cast<std::size_t>(v);
}

std::vector<std::size_t> schedule(const KvDocument& doc, const std::string& key, std::vector<std::size_t> fallback) {
  const KvEntry* e = doc.find(key);
  if (!e) return fallback;
  std::vector<std::size_t> out;
  for (const auto& tok : split_ws(e->value)) {
    const long long v = parse_integer(*e, tok);
    if (v < 1 || v > (1 << 20)) throw ConfigError(key, e->line, "block lengths must be in 1..1048576");
    if (!out.empty() && static_cast<std::size_t>(v) <= out.back()) {
      throw ConfigError(key, e->line, "schedule must be strictly increasing");
    }
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ConfigError(key, e->line, "schedule is empty");
  return out;
}

std::vector<ParameterVector> parse_points(const KvEntry& e, std::size_t k) {
  std::vector<ParameterVector> out;
  for (const auto& part : split_on(e.value, ';')) {
    std::vector<double> c;
    for (const auto& tok : split_ws(part)) c.push_back(parse_number(e, tok));
    if (c.size() != k) {
      throw ConfigError(e.key, e.line, "each point needs " + std::to_string(k) + " coordinates");
    }
    out.emplace_back(std::move(c));
  }
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& value) {
  const std::filesystem::path p(value);
  return p.is_absolute() ? p : base / p;
}

std::size_t ceil_sqrt(std::size_t n) {
  std::size_t r = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (r * r < n) ++r;
  while (r > 0 && (r - 1) * (r - 1) >= n) --r;
  return r;
}

std::string number(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_cell(const std::string& s) {
  if (s.empty()) return kUndefined;
  return std::stod(s);
}

struct Stats {
  double mean = 0.0;
  double std_error = kUndefined;
};

Stats stats(std::span<const double> v) {
  Stats s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std_error = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return s;
}

ExperimentRecord record(const std::string& exp, std::size_t n, const std::string& metric, double value,
                        double se, std::size_t trials, double wall, std::string flags = {}) {
  if (std::isnan(se) && flags.empty()) flags = "stderr-undefined";
  return ExperimentRecord{exp, n, metric, value, se, trials, std::move(flags), wall};
}

double identification_regressor(std::size_t n) {
  const double x = static_cast<double>(n);
  return std::sqrt(std::log(x) / x);
}

SlopeFit loglog_fit(const std::string& exp, const std::string& metric, std::span<const ExperimentRecord> recs) {
  std::vector<double> x, y;
  std::size_t dropped = 0;
  for (const auto& r : recs) {
    if (r.metric != metric) continue;
    if (r.n < 2 || !(r.value > 0.0)) {
      ++dropped;
      continue;
    }
    x.push_back(std::log(identification_regressor(r.n)));
    y.push_back(std::log(r.value));
  }
  SlopeFit f;
  const bool spread = x.size() >= 2 && *std::max_element(x.begin(), x.end()) > *std::min_element(x.begin(), x.end());
  if (spread) {
    f = fit_line(x, y);
  } else {
    f.slope = kUndefined;
    f.intercept = kUndefined;
    f.points = x.size();
    f.note = x.size() < 2 ? "fewer than two positive points" : "regressor takes a single value";
  }
  f.experiment = exp;
  f.metric = metric;
  f.regressor = "sqrt(log(n)/n)";
  if (dropped != 0 && f.note.empty()) f.note = std::to_string(dropped) + " nonpositive points omitted";
  return f;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

// -------------------------------------------------------------------- config

ExperimentConfig ExperimentConfig::parse(const KvDocument& doc, const std::filesystem::path& base_dir) {
  doc.reject_unknown(kKeys);
  if (const KvEntry* f = doc.find("format"); f && f->value != "uvq-experiment/1") {
    throw ConfigError("format", f->line, "unsupported format '" + f->value + "' (expected uvq-experiment/1)");
  }
  ExperimentConfig c;
  c.source = doc.source();
  {
    Hasher h;
    for (const auto& e : doc.entries()) h.text(e.key).text("=").text(e.value).text("\n");
    c.config_hash = h.finish();
  }

  const KvEntry& fam = doc.require("family");
  c.family_path = resolve(base_dir, fam.value);
  try {
    c.family = SourceFamily::load(c.family_path);
  } catch (const IoError& e) {
    throw ConfigError("family", fam.line, e.what());
  }
  const SourceFamily& family = *c.family;
  const ThetaSpace& space = family.theta_space();
  const std::size_t k = family.param_dim();

  if (const KvEntry* e = doc.find("seed")) {
    const long long s = parse_integer(*e, e->value);
    if (s < 0) throw ConfigError("seed", e->line, "seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(s);
  }
  c.cube_side = positive(doc, "grid.J", 1, 1 << 16);
  for (std::size_t a = 0; a < k; ++a) {
    if (space.bounds().hi[a] - space.bounds().lo[a] > static_cast<double>(c.cube_side)) {
      const KvEntry* e = doc.find("grid.J");
      throw ConfigError("grid.J", e ? e->line : 0,
                        "parameter space does not fit in a cube of side " + std::to_string(c.cube_side));
    }
  }

  const KvEntry* div = doc.find("net.divisions");
  const KvEntry* pts = doc.find("net.points");
  if (div && pts) throw ConfigError("net.points", pts->line, "give net.divisions or net.points, not both");
  if (pts) {
    auto points = parse_points(*pts, k);
    try {
      c.net = std::make_shared<const ParameterNet>(ParameterNet::explicit_points(space, std::move(points)));
      c.net->check_against(family);
    } catch (const PreconditionError& e) {
      throw ConfigError("net.points", pts->line, e.what());
    }
  } else {
    const std::size_t d = positive(doc, "net.divisions", 32, 4096);
    c.net = std::make_shared<const ParameterNet>(space.kind() == ThetaSpace::Kind::Simplex
                                                     ? ParameterNet::simplex_lattice(k, d)
                                                     : ParameterNet::box_lattice(space.bounds(), d));
    if (c.net->size() > 20000) {
      throw ConfigError("net.divisions", div ? div->line : 0,
                        "net has " + std::to_string(c.net->size()) + " points (limit 20000)");
    }
  }

  if (const KvEntry* e = doc.find("rate")) {
    try {
      c.rate = Rate::parse(e->value);
    } catch (const PreconditionError& err) {
      throw ConfigError("rate", e->line, err.what());
    }
    if (c.rate.num == 0) throw ConfigError("rate", e->line, "rate must be positive");
  }
  c.spec = DistortionSpec::for_support(family.support());
  if (const KvEntry* e = doc.find("distortion.K")) {
    c.spec.bound = parse_number(*e, e->value);
    if (!(c.spec.bound > 0.0) || !std::isfinite(c.spec.bound)) {
      throw ConfigError("distortion.K", e->line, "K must be positive and finite");
    }
  }
  if (const KvEntry* e = doc.find("training.blocks")) {
    c.design.training_blocks = positive(doc, "training.blocks", 0, 1 << 24);
    (void)e;
  }
  c.design.max_iterations = positive(doc, "lloyd.max_iterations", 200, 100000);
  if (const KvEntry* e = doc.find("lloyd.tolerance")) {
    c.design.tolerance = parse_number(*e, e->value);
    if (!(c.design.tolerance >= 0.0)) throw ConfigError("lloyd.tolerance", e->line, "tolerance must be >= 0");
  }
  c.design.cap = positive(doc, "codebook.cap", 4096, 1 << 16);
  if (const KvEntry* e = doc.find("estimator.slack")) {
    c.slack = parse_number(*e, e->value);
    if (!(c.slack >= 0.0)) throw ConfigError("estimator.slack", e->line, "slack must be >= 0");
  }

  if (const KvEntry* e = doc.find("test.theta")) {
    for (auto& t : parse_points(*e, k)) {
      try {
        family.validate(t);
      } catch (const ParameterError& err) {
        throw ConfigError("test.theta", e->line, err.what());
      }
      const auto idx = c.net->index_of(t);
      if (!idx) throw ConfigError("test.theta", e->line, "test parameters must be net points");
      c.test_thetas.push_back((*c.net)[*idx]);
      c.test_indices.push_back(*idx);
    }
  } else {
    const ParameterVector centre = space.centroid();
    std::size_t best = 0;
    for (std::size_t i = 1; i < c.net->size(); ++i) {
      if (distance((*c.net)[i], centre) < distance((*c.net)[best], centre)) best = i;
    }
    c.test_thetas.push_back((*c.net)[best]);
    c.test_indices.push_back(best);
  }

  c.codec_n = positive(doc, "codec.n", 4, 1 << 20);
  c.identification_schedule = schedule(doc, "identification.schedule", c.identification_schedule);
  c.identification_trials = positive(doc, "identification.trials", c.identification_trials, 1 << 24);
  c.redundancy_schedule = schedule(doc, "redundancy.schedule", c.redundancy_schedule);
  c.redundancy_blocks = positive(doc, "redundancy.blocks", c.redundancy_blocks, 1 << 24);
  c.audit_trials = positive(doc, "audit.trials", c.audit_trials, 1 << 24);
  c.audit_n = positive(doc, "audit.n", c.audit_n, 1 << 20);
  c.audit_pairs = positive(doc, "audit.pairs", c.audit_pairs, 1 << 24);
  c.mismatch_pairs = positive(doc, "audit.mismatch_pairs", c.mismatch_pairs, 1 << 16);
  c.mismatch_n = positive(doc, "audit.mismatch_n", c.mismatch_n, 1 << 20);
  c.mismatch_trials = positive(doc, "audit.mismatch_trials", c.mismatch_trials, 1 << 24);

  // Block lengths that are actually coded need an integral, capped codebook.
  auto check_coded = [&](const std::string& key, std::size_t n) {
    const KvEntry* e = doc.find(key);
    const int line = e ? e->line : 0;
    if (!c.rate.integral_bits(n)) {
      throw ConfigError(key, line, "n*R is not an integer for n = " + std::to_string(n) + ", R = " + c.rate.text());
    }
    const std::uint64_t bits = c.rate.bits(n);
    if (bits >= 63 || (std::uint64_t{1} << bits) > c.design.cap) {
      throw ConfigError(key, line,
                        "2^(nR) = 2^" + std::to_string(bits) + " codevectors exceed codebook.cap = " +
                            std::to_string(c.design.cap) + " at n = " + std::to_string(n));
    }
  };
  for (std::size_t n : c.redundancy_schedule) check_coded("redundancy.schedule", n);
  check_coded("codec.n", c.codec_n);
  check_coded("audit.mismatch_n", c.mismatch_n);

  std::size_t n_max = std::max({c.codec_n, c.audit_n, c.identification_schedule.back(), c.redundancy_schedule.back(),
                                c.mismatch_n});
  const double mesh_limit = 1.0 / (2.0 * static_cast<double>(ceil_sqrt(n_max)));
  if (c.net->mesh() > mesh_limit * (1.0 + 1e-12)) {
    const KvEntry* e = pts ? pts : div;
    throw ConfigError(pts ? "net.points" : "net.divisions", e ? e->line : 0,
                      "net mesh " + number(c.net->mesh()) + " exceeds 1/(2 ceil(sqrt(" + std::to_string(n_max) +
                          "))) = " + number(mesh_limit));
  }

  if (const KvEntry* e = doc.find("output.dir")) c.output_dir = resolve(base_dir, e->value);
  if (const KvEntry* e = doc.find("cache.dir")) c.cache_dir = resolve(base_dir, e->value);
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  const KvDocument doc = KvDocument::load(path);
  ExperimentConfig c = parse(doc, path.parent_path());
  const auto bytes = read_file(path);
  Hasher h;
  h.bytes(bytes);
  c.config_hash = h.finish();
  return c;
}

CodecSetup ExperimentConfig::codec_setup(std::size_t n) const {
  CodecSetup s;
  s.family = family;
  s.net = net;
  s.n = n;
  s.cube_side = cube_side;
  s.rate = rate;
  s.spec = spec;
  s.master_seed = seed;
  s.design = design;
  s.slack = slack;
  return s;
}

std::string config_schema_help() {
  return R"(Experiment document (format = uvq-experiment/1), one `key = value` per line:
  family                   path to a .family document (relative to the config file)   [required]
  seed                     master seed (non-negative integer)                         [1]
  grid.J                   side of the cube containing Theta                          [1]
  net.divisions            lattice divisions per axis of the parameter net            [32]
  net.points               explicit net points "a b; c d" (instead of net.divisions)
  rate                     bits per letter R, e.g. 1, 1/2, 0.5                        [1]
  distortion.K             per-letter distortion cap K                  [squared support diameter]
  training.blocks          Lloyd training blocks (0 = max(4096, 64 * 2^{nR}))        [0]
  lloyd.max_iterations     Lloyd iteration cap                                        [200]
  lloyd.tolerance          relative improvement stopping threshold                   [1e-6]
  codebook.cap             largest codebook size                                      [4096]
  estimator.slack          minimum-distance estimator slack                           [0]
  test.theta               true parameters "a b; c d" (must be net points)   [net point nearest centroid]
  codec.n                  block length for encode / decode / identify                [4]
  identification.schedule  block lengths                                              [64 256 1024]
  identification.trials    blocks per n and test parameter                            [500]
  redundancy.schedule      block lengths                                              [2 4 6 8]
  redundancy.blocks        stream blocks per n and test parameter                     [2000]
  audit.trials             estimator checks                                           [1000]
  audit.n                  block length of the estimator checks                       [256]
  audit.pairs              random parameter pairs for metric checks                   [200]
  audit.mismatch_pairs     random pairs for the mismatch bound                        [20]
  audit.mismatch_n         block length of the mismatch check                         [4]
  audit.mismatch_trials    Monte Carlo blocks per mismatch pair                       [2000]
  output.dir               output directory (relative to the config file)             [uvq-out]
  cache.dir                table and codebook cache directory                         [none]
Constraints: n*R integer and 2^{nR} <= codebook.cap for every coded n; net mesh <= 1/(2 ceil(sqrt(n_max))).
)";
}

// ------------------------------------------------------------------- context

ExperimentContext::ExperimentContext(ExperimentConfig config) : config_(std::move(config)) {
  if (config_.cache_dir) std::filesystem::create_directories(*config_.cache_dir);
  table_ = YatracosTable::build(*config_.family, *config_.net, config_.cache_dir);
  cache_ = std::make_shared<CodebookCache>(config_.cache_dir);
}

// ------------------------------------------------------------------ analysis

SlopeFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw PreconditionError("fit_line needs two or more points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw PreconditionError("fit_line needs distinct x values");
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.points = x.size();
  return f;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw PreconditionError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

// ------------------------------------------------------------ identification

ExperimentResult run_identification(const ExperimentContext& ctx) {
  const ExperimentConfig& c = ctx.config();
  const SourceFamily& family = *c.family;
  const ParameterNet& net = *c.net;
  const std::size_t thetas = c.test_thetas.size();
  const std::size_t trials = c.identification_trials;
  ExperimentResult out;
  out.experiment = "identification";
  for (const std::size_t n : c.identification_schedule) {
    const auto t0 = Clock::now();
    const ParameterGrid grid = ParameterGrid::build(family.theta_space(), c.cube_side, n, net);
    const std::size_t total = thetas * trials;
    std::vector<std::size_t> cell(total);
    std::vector<double> delta(total);
    parallel_for(total, [&](std::size_t i) {
      const std::size_t ti = i / trials;
      const SampleBlock z = sample_block(family, c.test_thetas[ti], n,
                                         StreamKey{c.seed, purpose_tag("identification"), n, i});
      const DeviationResult dev = deviations(family, net, ctx.table(), z, c.slack);
      const auto ci = grid.cell_of(net[dev.argmin].coords());
      if (!ci) throw InternalError("estimate lies in no indexed cell");
      cell[i] = *ci;
      delta[i] = dev.deltas[c.test_indices[ti]];
    });

    std::vector<std::pair<std::size_t, std::size_t>> keys;
    for (std::size_t i = 0; i < total; ++i) keys.emplace_back(i / trials, cell[i]);
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    std::vector<double> key_dv(keys.size());
    parallel_for(keys.size(), [&](std::size_t q) {
      key_dv[q] = variational_distance(family, c.test_thetas[keys[q].first], grid.representative(keys[q].second)).value;
    });
    std::vector<double> dv(total);
    for (std::size_t i = 0; i < total; ++i) {
      const auto it = std::lower_bound(keys.begin(), keys.end(), std::make_pair(i / trials, cell[i]));
      dv[i] = key_dv[static_cast<std::size_t>(it - keys.begin())];
    }

    const double wall = seconds_since(t0);
    const Stats sdv = stats(dv);
    const Stats sdelta = stats(delta);
    out.records.push_back(record("identification", n, "dv_mean", sdv.mean, sdv.std_error, total, wall));
    out.records.push_back(record("identification", n, "dv_q99", quantile(dv, 0.99), kUndefined, total, wall));
    out.records.push_back(record("identification", n, "delta_mean", sdelta.mean, sdelta.std_error, total, wall));
  }
  out.fits.push_back(loglog_fit("identification", "dv_mean", out.records));
  out.fits.push_back(loglog_fit("identification", "delta_mean", out.records));
  return out;
}

// ---------------------------------------------------------------- redundancy

ExperimentResult run_redundancy(const ExperimentContext& ctx) {
  const ExperimentConfig& c = ctx.config();
  const SourceFamily& family = *c.family;
  const std::size_t d = family.data_dim();
  ExperimentResult out;
  out.experiment = "redundancy";
  for (const std::size_t n : c.redundancy_schedule) {
    const auto t0 = Clock::now();
    CodecSetup setup = c.codec_setup(n);
    setup.table = ctx.table_ptr();
    const TwoStageCodec codec(setup, ctx.codebooks());
    const std::size_t dim = n * d;
    std::vector<double> diff, two_stage, matched;
    bool bit_exact = true;
    for (std::size_t ti = 0; ti < c.test_thetas.size(); ++ti) {
      const ParameterVector& theta = c.test_thetas[ti];
      const SampleBlock source = sample_block(family, theta, c.redundancy_blocks * n,
                                              StreamKey{c.seed, purpose_tag("redundancy"), n, ti});
      const EncodeResult enc = codec.encode(source.values);
      const std::uint64_t expected = c.redundancy_blocks * codec.bits_per_block();
      bit_exact = bit_exact && enc.payload_bits == expected;
      const auto own = ctx.codebooks()->get(family, theta, n, c.rate, c.spec, c.seed, c.design);
      const std::size_t base = diff.size();
      diff.resize(base + c.redundancy_blocks);
      two_stage.resize(base + c.redundancy_blocks);
      matched.resize(base + c.redundancy_blocks);
      parallel_for(c.redundancy_blocks, [&](std::size_t t) {
        const auto x = std::span(source.values).subspan(t * dim, dim);
        const double a = c.spec.block(x, std::span(enc.reproduction).subspan(t * dim, dim), d) / static_cast<double>(n);
        const double b = nn_search(*own, x, c.spec).distortion / static_cast<double>(n);
        two_stage[base + t] = a;
        matched[base + t] = b;
        diff[base + t] = a - b;
      });
    }
    const double wall = seconds_since(t0);
    const std::size_t total = diff.size();
    const Stats sd = stats(diff), s2 = stats(two_stage), sm = stats(matched);
    out.records.push_back(record("redundancy", n, "redundancy", sd.mean, sd.std_error, total, wall));
    out.records.push_back(record("redundancy", n, "distortion_two_stage", s2.mean, s2.std_error, total, wall));
    out.records.push_back(record("redundancy", n, "distortion_matched", sm.mean, sm.std_error, total, wall));
    const double overhead = static_cast<double>(codec.grid().header_bits()) / static_cast<double>(n);
    out.records.push_back(record("redundancy", n, "rate_overhead", overhead, 0.0, total, wall,
                                 bit_exact ? "bit-exact" : "accounting-mismatch"));
  }
  out.fits.push_back(loglog_fit("redundancy", "redundancy", out.records));
  return out;
}

// --------------------------------------------------------------------- audit

ExperimentResult run_bounds_audit(const ExperimentContext& ctx) {
  const ExperimentConfig& c = ctx.config();
  const SourceFamily& family = *c.family;
  const ParameterNet& net = *c.net;
  const bool mixture = family.kind() == SourceFamily::Kind::Mixture;
  const std::size_t k = family.param_dim();
  const std::size_t n = c.audit_n;
  ExperimentResult out;
  out.experiment = "audit";
  auto t0 = Clock::now();

  const ParameterGrid grid = ParameterGrid::build(family.theta_space(), c.cube_side, n, net);
  std::vector<std::pair<ParameterVector, ParameterVector>> rep_pairs;
  for (std::size_t i = 0; i < net.size(); ++i) rep_pairs.emplace_back(net[i], grid.representative(*grid.cell_of(net[i].coords())));
  const double beta = lipschitz_ratio_max(family, rep_pairs);
  const double quant = beta * std::sqrt(static_cast<double>(k)) / static_cast<double>(grid.cells_per_unit());

  // Estimator checks.
  const std::size_t trials = c.audit_trials;
  std::vector<std::size_t> est(trials);
  std::vector<std::size_t> cells(trials);
  std::vector<double> delta(trials);
  parallel_for(trials, [&](std::size_t t) {
    const std::size_t ti = t % c.test_thetas.size();
    const SampleBlock z = sample_block(family, c.test_thetas[ti], n, StreamKey{c.seed, purpose_tag("audit"), n, t});
    const DeviationResult dev = deviations(family, net, ctx.table(), z, c.slack);
    est[t] = dev.argmin;
    cells[t] = *grid.cell_of(net[dev.argmin].coords());
    delta[t] = dev.deltas[c.test_indices[ti]];
  });
  std::map<std::pair<std::size_t, std::size_t>, double> dv_est, dv_rep;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t ti = t % c.test_thetas.size();
    dv_est.emplace(std::make_pair(ti, est[t]), 0.0);
    dv_rep.emplace(std::make_pair(ti, cells[t]), 0.0);
  }
  {
    std::vector<std::map<std::pair<std::size_t, std::size_t>, double>::iterator> jobs;
    for (auto it = dv_est.begin(); it != dv_est.end(); ++it) jobs.push_back(it);
    parallel_for(jobs.size(), [&](std::size_t q) {
      const auto& [ti, j] = jobs[q]->first;
      jobs[q]->second = variational_distance(family, c.test_thetas[ti], net[j]).value;
    });
    jobs.clear();
    for (auto it = dv_rep.begin(); it != dv_rep.end(); ++it) jobs.push_back(it);
    parallel_for(jobs.size(), [&](std::size_t q) {
      const auto& [ti, cell] = jobs[q]->first;
      jobs[q]->second = variational_distance(family, c.test_thetas[ti], grid.representative(cell)).value;
    });
  }
  const double est_tol = 1e-6;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t ti = t % c.test_thetas.size();
    const double rhs = 2.0 * delta[t] + 3.0 / (2.0 * static_cast<double>(n));
    const double a = dv_est.at({ti, est[t]});
    out.checks.push_back({"mindist", t, a, rhs, est_tol, a > rhs + est_tol});
    const double b = dv_rep.at({ti, cells[t]});
    out.checks.push_back({"identification_chain", t, b, rhs + quant, est_tol, b > rhs + quant + est_tol});
  }

  // Mismatch bound on designed codebooks.
  const auto mpairs = random_parameter_pairs(family, c.mismatch_pairs, StreamKey{c.seed, purpose_tag("audit-mismatch")});
  std::vector<MismatchGap> gaps(mpairs.size());
  for (std::size_t i = 0; i < mpairs.size(); ++i) {
    gaps[i] = mismatch_gap(family, mpairs[i].a, mpairs[i].b, c.mismatch_n, c.rate, c.spec, c.seed, c.design,
                           c.mismatch_trials, StreamKey{c.seed, purpose_tag("audit-mismatch-mc"), c.mismatch_n, i},
                           ctx.codebooks().get());
  }
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    const double tol = 3.0 * gaps[i].std_error;
    out.checks.push_back({"mismatch", i, gaps[i].gap, gaps[i].bound, tol, gaps[i].gap > gaps[i].bound + tol});
  }

  // Metric inequalities on random pairs; every 50th pair is degenerate.
  auto pairs = random_parameter_pairs(family, c.audit_pairs, StreamKey{c.seed, purpose_tag("audit-pairs")});
  for (std::size_t i = 49; i < pairs.size(); i += 50) pairs[i].b = pairs[i].a;
  double l_max = 0.0, a_k = 0.0;
  if (mixture) {
    std::vector<double> dv(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) { dv[i] = variational_distance(family, pairs[i].a, pairs[i].b).value; });
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const double rhs = mixture_lipschitz_bound(pairs[i].a, pairs[i].b);
      out.checks.push_back({"lipschitz", i, dv[i], rhs, 1e-8, dv[i] > rhs + 1e-8});
    }
  } else {
    a_k = sup_norm_ratio(family).value;
    l_max = log_ratio_sup(family, net.points());
    std::vector<PinskerCheck> pin(pairs.size());
    std::vector<DistanceReport> kl(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
      pin[i] = pinsker_check(family, pairs[i].a, pairs[i].b);
      kl[i] = relative_entropy(family, pairs[i].a, pairs[i].b);
    });
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& p = pin[i];
      out.checks.push_back({"pinsker", i, p.variational, std::sqrt(0.5 * p.divergence), p.tolerance, !p.holds});
      const double db = divergence_growth_bound(pairs[i].a, pairs[i].b, a_k, l_max);
      const double dtol = kl[i].error_estimate + 1e-12;
      out.checks.push_back({"divergence_growth", i, kl[i].value, db, dtol, kl[i].value > db + dtol});
      const double vb = variational_growth_bound(pairs[i].a, pairs[i].b, a_k, l_max);
      const double vtol = p.tolerance - std::sqrt(0.5 * kl[i].error_estimate) + 1e-12;
      out.checks.push_back({"variational_growth", i, p.variational, vb, vtol, p.variational > vb + vtol});
    }
  }

  const double wall = seconds_since(t0);
  const std::vector<std::string> names{"mindist", "identification_chain", "mismatch", "lipschitz", "pinsker",
                                       "divergence_growth", "variational_growth"};
  for (const auto& name : names) {
    std::size_t count = 0, bad = 0;
    for (const auto& ch : out.checks) {
      if (ch.check != name) continue;
      ++count;
      bad += ch.violated ? 1 : 0;
    }
    const std::size_t nn = name == "mismatch" ? c.mismatch_n : n;
    out.records.push_back(record("audit", nn, "violations_" + name, static_cast<double>(bad), 0.0, count, wall,
                                 count == 0 ? "not-applicable" : ""));
  }
  out.records.push_back(record("audit", n, "beta_prime", beta, 0.0, rep_pairs.size(), wall, "measured"));
  out.records.push_back(record("audit", n, "log_ratio_sup", l_max, 0.0, mixture ? 0 : net.size(), wall,
                               mixture ? "not-applicable" : "measured"));
  out.records.push_back(record("audit", n, "sup_norm_ratio", a_k, 0.0, mixture ? 0 : 1, wall,
                               mixture ? "not-applicable" : "measured"));
  return out;
}

const std::vector<std::string>& experiment_ids() {
  static const std::vector<std::string> ids{"identification", "redundancy", "audit"};
  return ids;
}

ExperimentResult run_experiment(const ExperimentContext& ctx, const std::string& id) {
  if (id == "identification") return run_identification(ctx);
  if (id == "redundancy") return run_redundancy(ctx);
  if (id == "audit" || id == "bounds") return run_bounds_audit(ctx);
  throw PreconditionError("unknown experiment '" + id + "' (identification | redundancy | audit)");
}

// ------------------------------------------------------------------- outputs

std::string format_records(std::span<const ExperimentRecord> records) {
  std::string s = std::string(kRecordsHeader) + "\n";
  for (const auto& r : records) {
    s += r.experiment + "," + std::to_string(r.n) + "," + r.metric + "," + number(r.value) + "," +
         number(r.std_error) + "," + std::to_string(r.trials) + "," + r.flags + "," + number(r.wall_time_s) + "\n";
  }
  return s;
}

std::vector<ExperimentRecord> parse_records(std::string_view csv) {
  std::vector<ExperimentRecord> out;
  std::istringstream in{std::string(csv)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kRecordsHeader) throw ConfigError("records.csv", 1, "unexpected header '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_on(line, ',');
    if (f.size() != 8) throw ConfigError("records.csv", lineno, "expected 8 columns");
    try {
      out.push_back({f[0], static_cast<std::size_t>(std::stoull(f[1])), f[2], parse_cell(f[3]), parse_cell(f[4]),
                     static_cast<std::size_t>(std::stoull(f[5])), f[6], parse_cell(f[7])});
    } catch (const std::logic_error&) {
      throw ConfigError("records.csv", lineno, "malformed number");
    }
  }
  return out;
}

std::string format_fits(std::span<const SlopeFit> fits) {
  std::string s = std::string(kFitsHeader) + "\n";
  for (const auto& f : fits) {
    s += f.experiment + "," + f.metric + "," + f.regressor + "," + number(f.slope) + "," + number(f.intercept) + "," +
         std::to_string(f.points) + "," + f.note + "\n";
  }
  return s;
}

std::vector<SlopeFit> parse_fits(std::string_view csv) {
  std::vector<SlopeFit> out;
  std::istringstream in{std::string(csv)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 || line.empty()) continue;
    const auto f = split_on(line, ',');
    if (f.size() != 7) throw ConfigError("fits.csv", lineno, "expected 7 columns");
    try {
      out.push_back({f[0], f[1], f[2], parse_cell(f[3]), parse_cell(f[4]), static_cast<std::size_t>(std::stoull(f[5])), f[6]});
    } catch (const std::logic_error&) {
      throw ConfigError("fits.csv", lineno, "malformed number");
    }
  }
  return out;
}

std::string format_audit(std::span<const AuditCheck> checks) {
  std::string s = std::string(kAuditHeader) + "\n";
  for (const auto& ch : checks) {
    s += ch.check + "," + std::to_string(ch.trial) + "," + number(ch.lhs) + "," + number(ch.rhs) + "," +
         number(ch.tolerance) + "," + number(ch.slack()) + "," + (ch.violated ? "1" : "0") + "\n";
  }
  return s;
}

void write_outputs(const ExperimentConfig& config, const ExperimentResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "records.csv", format_records(result.records));
  write_text(dir / "fits.csv", format_fits(result.fits));
  if (!result.checks.empty()) write_text(dir / "audit.csv", format_audit(result.checks));
  std::string m;
  m += "format = uvq-manifest/1\n";
  m += "experiment = " + result.experiment + "\n";
  m += "config = " + config.source.string() + "\n";
  m += "config_sha256 = " + to_hex(config.config_hash) + "\n";
  m += "family = " + config.family_path.string() + "\n";
  m += "family_sha256 = " + to_hex(config.family->content_hash()) + "\n";
  m += "net_sha256 = " + to_hex(config.net->content_hash()) + "\n";
  m += "seed = " + std::to_string(config.seed) + "\n";
  m += "records = " + std::to_string(result.records.size()) + "\n";
  m += "columns = " + std::string(kRecordsHeader) + "\n";
  write_text(dir / "manifest.txt", m);
  render_plots(result.records, result.fits, dir / "plots");
}

// --------------------------------------------------------------------- plots

std::string render_svg(const std::string& title, std::span<const double> n, std::span<const double> values,
                       const std::optional<SlopeFit>& fit) {
  constexpr double W = 640, H = 420, L = 70, R = 20, T = 40, B = 50;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (n[i] > 0 && values[i] > 0) {
      lx.push_back(std::log10(n[i]));
      ly.push_back(std::log10(values[i]));
    }
  }
  double x0 = 0, x1 = 1, y0 = -1, y1 = 0;
  if (!lx.empty()) {
    x0 = std::floor(*std::min_element(lx.begin(), lx.end()));
    x1 = std::ceil(*std::max_element(lx.begin(), lx.end()));
    y0 = std::floor(*std::min_element(ly.begin(), ly.end()));
    y1 = std::ceil(*std::max_element(ly.begin(), ly.end()));
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
  }
  auto px = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - T - B); };
  char buf[256];
  std::string s;
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n",
                W, H, W, H);
  s += buf;
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::string heading = title;
  if (fit && std::isfinite(fit->slope)) {
    std::snprintf(buf, sizeof buf, " (slope %.3f vs %s)", fit->slope, fit->regressor.c_str());
    heading += buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">", L);
  s += buf + xml_escape(heading) + "</text>\n";
  std::snprintf(buf, sizeof buf,
                "<path d=\"M%.1f %.1f H%.1f M%.1f %.1f V%.1f\" stroke=\"black\" fill=\"none\"/>\n", L, H - B, W - R, L,
                H - B, T);
  s += buf;
  for (double e = x0; e <= x1 + 1e-9; e += 1) {
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"middle\">1e%.0f</text>\n",
                  px(e), H - B + 18, e);
    s += buf;
  }
  for (double e = y0; e <= y1 + 1e-9; e += 1) {
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"end\">1e%.0f</text>\n",
                  L - 6, py(e) + 4, e);
    s += buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">n</text>\n",
                (L + W - R) / 2, H - 12);
  s += buf;
  if (!lx.empty()) {
    s += "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < lx.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", px(lx[i]), py(ly[i]));
      s += buf;
    }
    s += "\"/>\n";
    for (std::size_t i = 0; i < lx.size(); ++i) {
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"3.5\" fill=\"#1f77b4\"/>\n", px(lx[i]),
                    py(ly[i]));
      s += buf;
    }
  }
  if (fit && std::isfinite(fit->slope) && fit->regressor == "sqrt(log(n)/n)" && lx.size() >= 2) {
    s += "<polyline fill=\"none\" stroke=\"#d62728\" stroke-dasharray=\"6 4\" points=\"";
    const int steps = 32;
    for (int i = 0; i <= steps; ++i) {
      const double e = lx.front() + (lx.back() - lx.front()) * i / steps;
      const double nn = std::pow(10.0, e);
      const double y = (fit->intercept + fit->slope * std::log(std::sqrt(std::log(nn) / nn))) / std::log(10.0);
      std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", px(e), py(std::clamp(y, y0, y1)));
      s += buf;
    }
    s += "\"/>\n";
  }
  s += "</svg>\n";
  return s;
}

std::vector<std::filesystem::path> render_plots(std::span<const ExperimentRecord> records,
                                                std::span<const SlopeFit> fits, const std::filesystem::path& dir) {
  std::map<std::pair<std::string, std::string>, std::vector<const ExperimentRecord*>> series;
  for (const auto& r : records) series[{r.experiment, r.metric}].push_back(&r);
  std::vector<std::filesystem::path> written;
  for (const auto& [key, rows] : series) {
    std::vector<double> n, v;
    bool positive_value = false;
    for (const auto* r : rows) {
      n.push_back(static_cast<double>(r->n));
      v.push_back(r->value);
      positive_value = positive_value || r->value > 0.0;
    }
    if (!positive_value || rows.size() < 2) continue;
    std::optional<SlopeFit> fit;
    for (const auto& f : fits) {
      if (f.experiment == key.first && f.metric == key.second) fit = f;
    }
    std::filesystem::create_directories(dir);
    const auto file = dir / (key.first + "_" + key.second + ".svg");
    write_text(file, render_svg(key.first + ": " + key.second, n, v, fit));
    written.push_back(file);
  }
  return written;
}

}  // namespace uvq

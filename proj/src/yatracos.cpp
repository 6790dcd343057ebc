#include "uvq/yatracos.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "uvq/byte_io.hpp"
#include "uvq/error.hpp"
#include "uvq/parallel.hpp"
#include "uvq/simd/kernels.hpp"

namespace uvq {
namespace {

constexpr std::string_view kTableMagic{"UVQYTAB\0", 8};
constexpr std::uint16_t kTableVersion = 1;

void compositions(std::size_t k, std::size_t m, std::vector<std::size_t>& cur,
                  std::vector<ParameterVector>& out) {
  if (cur.size() + 1 == k) {
    std::size_t used = 0;
    for (std::size_t c : cur) used += c;
    std::vector<double> theta;
    theta.reserve(k);
    for (std::size_t c : cur) theta.push_back(static_cast<double>(c) / static_cast<double>(m));
    theta.push_back(static_cast<double>(m - used) / static_cast<double>(m));
    out.emplace_back(std::move(theta));
    return;
  }
  std::size_t used = 0;
  for (std::size_t c : cur) used += c;
  for (std::size_t c = 0; c + used <= m; ++c) {
    cur.push_back(c);
    compositions(k, m, cur, out);
    cur.pop_back();
  }
}

double simplex_covering_radius(std::size_t k, std::size_t m) {
  const double a = static_cast<double>(k / 2);
  const double kk = static_cast<double>(k);
  return std::sqrt(a * (kk - a) / kk) / static_cast<double>(m);
}

Digest net_digest(const std::vector<ParameterVector>& points) {
  Hasher h;
  h.text("uvq-net/1");
  h.u64(points.size());
  for (const auto& p : points) {
    h.u64(p.size());
    h.f64s(p.coords());
  }
  return h.finish();
}

// Integrals of each fn over {s > 0}. In 1-D the region is located once.
std::vector<QuadratureResult> region_integrals(const SourceFamily& family, const PointFn& s,
                                               std::span<const PointFn> fns) {
  std::vector<QuadratureResult> out(fns.size());
  const Box& box = family.support();
  const QuadratureOptions& opts = family.quadrature();
  if (family.data_dim() == 1) {
    const ScalarFn s1 = [&](double x) { return s(std::span<const double>(&x, 1)); };
    const auto pieces = region_pieces_1d(s1, box.lo[0], box.hi[0], family.breakpoints()[0], opts.root_scan);
    QuadratureOptions inner = opts;
    const double width = box.hi[0] - box.lo[0];
    for (std::size_t i = 0; i < fns.size(); ++i) {
      const ScalarFn f1 = [&](double x) { return fns[i](std::span<const double>(&x, 1)); };
      for (const auto& [a, b] : pieces) {
        inner.target_error = opts.target_error * (b - a) / width;
        const QuadratureResult r = integrate_1d(f1, a, b, family.breakpoints()[0], inner);
        out[i].value += r.value;
        out[i].error_estimate += r.error_estimate;
        out[i].nodes += r.nodes;
      }
    }
    return out;
  }
  for (std::size_t i = 0; i < fns.size(); ++i) {
    out[i] = integrate_region(fns[i], s, box, family.breakpoints(), opts);
  }
  return out;
}

}  // namespace

// ------------------------------------------------------------------ ParameterNet

ParameterNet::ParameterNet(std::vector<ParameterVector> points, double mesh)
    : points_(std::move(points)), mesh_(mesh), hash_(net_digest(points_)) {
  if (points_.empty()) throw PreconditionError("parameter net must be non-empty");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (points_[i] == points_[j]) {
        throw PreconditionError("parameter net has duplicate points (indices " + std::to_string(j) + " and " +
                                std::to_string(i) + ")");
      }
    }
  }
}

ParameterNet ParameterNet::simplex_lattice(std::size_t k, std::size_t divisions) {
  if (k == 0) throw PreconditionError("simplex lattice needs k >= 1");
  if (divisions == 0) throw PreconditionError("simplex lattice needs at least one division");
  std::vector<ParameterVector> pts;
  std::vector<std::size_t> cur;
  compositions(k, divisions, cur, pts);
  return ParameterNet(std::move(pts), simplex_covering_radius(k, divisions));
}

ParameterNet ParameterNet::box_lattice(const Box& box, std::size_t divisions) {
  if (divisions == 0) throw PreconditionError("box lattice needs at least one division");
  const std::size_t k = box.dim();
  std::vector<ParameterVector> pts;
  std::vector<std::size_t> idx(k, 0);
  for (;;) {
    std::vector<double> theta(k);
    for (std::size_t a = 0; a < k; ++a) {
      theta[a] = idx[a] == divisions ? box.hi[a]
                                     : box.lo[a] + (box.hi[a] - box.lo[a]) * static_cast<double>(idx[a]) /
                                                       static_cast<double>(divisions);
    }
    pts.emplace_back(std::move(theta));
    bool done = true;
    for (std::size_t a = k; a-- > 0;) {
      if (++idx[a] <= divisions) {
        done = false;
        break;
      }
      idx[a] = 0;
    }
    if (done) break;
  }
  double mesh_sq = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    const double step = (box.hi[a] - box.lo[a]) / static_cast<double>(divisions);
    mesh_sq += 0.25 * step * step;
  }
  return ParameterNet(std::move(pts), std::sqrt(mesh_sq));
}

ParameterNet ParameterNet::explicit_points(const ThetaSpace& space, std::vector<ParameterVector> points) {
  for (const auto& p : points) {
    if (p.size() != space.dim() || !space.contains(p.coords())) {
      throw PreconditionError("net point lies outside the parameter space");
    }
  }
  // Mesh: farthest point of a fine lattice from the net, plus that lattice's own covering radius.
  const std::size_t k = space.dim();
  ParameterNet fine = [&] {
    auto lattice_size = [k](std::size_t div) {
      double c = 1.0;  // C(div + k - 1, k - 1)
      for (std::size_t i = 1; i < k; ++i) c = c * static_cast<double>(div + i) / static_cast<double>(i);
      return c;
    };
    std::size_t div = 1;
    if (space.kind() == ThetaSpace::Kind::Simplex) {
      while (div < 4096 && lattice_size(div + 1) <= 20000.0) ++div;
      return simplex_lattice(k, div);
    }
    while (div < 4096 && std::pow(static_cast<double>(div + 2), static_cast<double>(k)) <= 20000.0) ++div;
    return box_lattice(space.bounds(), div);
  }();
  double worst = 0.0;
  for (const auto& q : fine.points()) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : points) best = std::min(best, distance(p, q));
    worst = std::max(worst, best);
  }
  return ParameterNet(std::move(points), worst + fine.mesh());
}

std::optional<std::size_t> ParameterNet::index_of(const ParameterVector& theta) const {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto& p = points_[i];
    if (p.size() != theta.size()) continue;
    bool same = true;
    for (std::size_t a = 0; a < p.size() && same; ++a) same = std::fabs(p[a] - theta[a]) <= 1e-12;
    if (same) return i;
  }
  return std::nullopt;
}

void ParameterNet::check_against(const SourceFamily& family) const {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    try {
      family.validate(points_[i]);
    } catch (const ParameterError& e) {
      throw PreconditionError("net point " + std::to_string(i) + " is not a valid parameter: " + e.what());
    }
  }
}

// ----------------------------------------------------------------- YatracosTable

std::size_t YatracosTable::pair_index(std::size_t a, std::size_t b) const {
  if (a >= m_ || b >= m_ || a == b) throw IndexError("invalid net pair (" + std::to_string(a) + ", " + std::to_string(b) + ")");
  return a * (m_ - 1) + (b < a ? b : b - 1);
}

std::pair<std::size_t, std::size_t> YatracosTable::pair_at(std::size_t index) const {
  if (index >= pair_count()) throw IndexError("pair index out of range");
  const std::size_t a = index / (m_ - 1);
  const std::size_t r = index % (m_ - 1);
  return {a, r < a ? r : r + 1};
}

std::span<const double> YatracosTable::row(std::size_t j) const {
  if (j >= m_) throw IndexError("net index out of range");
  const std::size_t p = pair_count();
  return {values_.data() + j * p, p};
}

double YatracosTable::probability(std::size_t j, std::size_t a, std::size_t b) const {
  return row(j)[pair_index(a, b)];
}

std::filesystem::path YatracosTable::cache_file(const std::filesystem::path& dir, const Digest& family_hash,
                                                const Digest& net_hash) {
  return dir / ("ytab-" + to_hex(family_hash).substr(0, 16) + "-" + to_hex(net_hash).substr(0, 16) + ".bin");
}

std::vector<std::uint8_t> YatracosTable::serialize() const {
  ByteWriter w;
  w.tag(kTableMagic);
  w.u16(kTableVersion);
  w.bytes(family_hash_);
  w.bytes(net_hash_);
  w.f64(target_error_);
  w.u32(static_cast<std::uint32_t>(m_));
  w.f64(max_error_);
  w.f64s(values_);
  w.u32(crc32(w.data()));
  return w.take();
}

YatracosTable YatracosTable::deserialize(std::span<const std::uint8_t> bytes, const Digest& family_hash,
                                         const Digest& net_hash, double target_error) {
  if (bytes.size() < 4) throw FramingError("table file too short");
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader trailer(bytes.last(4));
  if (trailer.u32() != crc32(body)) throw FramingError("table file CRC mismatch");
  ByteReader r(body);
  if (!r.tag(kTableMagic)) throw FramingError("not a Yatracos table file");
  const std::uint16_t version = r.u16();
  if (version != kTableVersion) {
    throw CompatibilityError("table file version " + std::to_string(version) + " is not supported");
  }
  YatracosTable t;
  const auto fh = r.bytes(32);
  const auto nh = r.bytes(32);
  std::copy(fh.begin(), fh.end(), t.family_hash_.begin());
  std::copy(nh.begin(), nh.end(), t.net_hash_.begin());
  if (t.family_hash_ != family_hash) throw CompatibilityError("table was built for a different family");
  if (t.net_hash_ != net_hash) throw CompatibilityError("table was built for a different net");
  t.target_error_ = r.f64();
  if (t.target_error_ != target_error) throw CompatibilityError("table was built with a different quadrature target");
  t.m_ = r.u32();
  t.max_error_ = r.f64();
  t.values_ = r.f64s(t.m_ * t.pair_count());
  if (r.remaining() != 0) throw FramingError("trailing bytes in table file");
  t.from_cache_ = true;
  return t;
}

std::shared_ptr<const YatracosTable> YatracosTable::build(const SourceFamily& family, const ParameterNet& net,
                                                          const std::optional<std::filesystem::path>& cache_dir) {
  net.check_against(family);
  const double target = family.quadrature().target_error;
  if (cache_dir) {
    const auto file = cache_file(*cache_dir, family.content_hash(), net.content_hash());
    if (std::filesystem::exists(file)) {
      try {
        return std::make_shared<const YatracosTable>(
            deserialize(read_file(file), family.content_hash(), net.content_hash(), target));
      } catch (const FramingError&) {
      } catch (const CompatibilityError&) {
      }
    }
  }

  auto t = std::make_shared<YatracosTable>();
  t->m_ = net.size();
  t->family_hash_ = family.content_hash();
  t->net_hash_ = net.content_hash();
  t->target_error_ = target;
  const std::size_t m = t->m_;
  const std::size_t pairs = t->pair_count();
  t->values_.assign(m * pairs, 0.0);
  std::vector<double> errors(pairs, 0.0);

  std::vector<BoundDensity> dens;
  dens.reserve(m);
  for (const auto& p : net.points()) dens.push_back(family.bind(p));

  const bool mixture = family.kind() == SourceFamily::Kind::Mixture;
  std::vector<PointFn> fns;
  if (mixture) {
    const Box& support = family.support();
    for (const auto& c : family.components()) {
      fns.emplace_back([&c, &support](std::span<const double> x) { return support.contains(x) ? c.pdf(x) : 0.0; });
    }
  } else {
    for (const auto& d : dens) fns.emplace_back([&d](std::span<const double> x) { return d(x); });
  }

  parallel_for(pairs, [&](std::size_t idx) {
    const auto [a, b] = t->pair_at(idx);
    const BoundDensity& pa = dens[a];
    const BoundDensity& pb = dens[b];
    const PointFn s = [&](std::span<const double> x) { return pa(x) - pb(x); };
    const auto ints = region_integrals(family, s, fns);
    double err = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      double v = 0.0;
      if (mixture) {
        for (std::size_t c = 0; c < ints.size(); ++c) v += net[j][c] * ints[c].value;
      } else {
        v = ints[j].value;
      }
      t->values_[j * pairs + idx] = std::clamp(v, 0.0, 1.0);
    }
    for (const auto& r : ints) err = std::max(err, r.error_estimate);
    errors[idx] = err;
  });
  for (double e : errors) t->max_error_ = std::max(t->max_error_, e);

  if (cache_dir) {
    write_file_atomic(cache_file(*cache_dir, t->family_hash_, t->net_hash_), t->serialize());
  }
  return t;
}

// --------------------------------------------------------------------- estimator

double empirical_measure(const SourceFamily& family, const SampleBlock& z, const ParameterVector& a,
                         const ParameterVector& b) {
  if (z.n == 0) throw PreconditionError("empirical measure needs a non-empty block");
  const BoundDensity pa = family.bind(a);
  const BoundDensity pb = family.bind(b);
  std::size_t count = 0;
  for (std::size_t i = 0; i < z.n; ++i) {
    if (pa(z.letter(i)) > pb(z.letter(i))) ++count;
  }
  return static_cast<double>(count) / static_cast<double>(z.n);
}

std::vector<double> empirical_pair_measures(const SourceFamily& family, const ParameterNet& net,
                                            const YatracosTable& table, const SampleBlock& z) {
  if (z.n == 0) throw PreconditionError("empirical measure needs a non-empty block");
  if (table.net_size() != net.size() || table.net_hash() != net.content_hash()) {
    throw InternalError("Yatracos table does not match the parameter net");
  }
  const std::vector<double> dens = family.density_table(net.points(), z);
  const std::size_t n = z.n;
  const std::size_t m = net.size();
  std::vector<double> out(table.pair_count());
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t a = 0; a < m; ++a) {
    const std::span<const double> ra(dens.data() + a * n, n);
    for (std::size_t b = 0; b < m; ++b) {
      if (a == b) continue;
      const std::span<const double> rb(dens.data() + b * n, n);
      out[table.pair_index(a, b)] = static_cast<double>(simd::count_greater(ra, rb)) * inv;
    }
  }
  return out;
}

DeviationResult deviations(const SourceFamily& family, const ParameterNet& net, const YatracosTable& table,
                           const SampleBlock& z, double slack) {
  if (!(slack >= 0.0)) throw PreconditionError("estimator slack must be non-negative");
  const std::vector<double> emp = empirical_pair_measures(family, net, table, z);
  DeviationResult out;
  out.slack = slack;
  out.deltas.resize(net.size());
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < net.size(); ++j) {
    out.deltas[j] = simd::max_abs_difference(table.row(j), emp);
    best = std::min(best, out.deltas[j]);
  }
  for (std::size_t j = 0; j < net.size(); ++j) {
    if (slack == 0.0 ? out.deltas[j] <= best : out.deltas[j] < best + slack) {
      out.argmin = j;
      break;
    }
  }
  return out;
}

double deviation(const SourceFamily& family, const ParameterNet& net, const YatracosTable& table,
                 const SampleBlock& z, std::size_t theta_index) {
  if (theta_index >= net.size()) throw IndexError("net index out of range");
  const std::vector<double> emp = empirical_pair_measures(family, net, table, z);
  return simd::max_abs_difference(table.row(theta_index), emp);
}

ParameterVector min_distance_estimate(const SourceFamily& family, const ParameterNet& net,
                                      const YatracosTable& table, const SampleBlock& z, double slack) {
  return net[deviations(family, net, table, z, slack).argmin];
}

// -------------------------------------------------------------------- VC tools

double vc_tail_bound(std::uint64_t n, unsigned v, double eps) {
  if (n < 1) throw DomainError("vc_tail_bound needs n >= 1");
  if (v < 2) throw DomainError("vc_tail_bound needs V >= 2");
  if (!(eps > 0.0)) throw DomainError("vc_tail_bound needs eps > 0");
  const double nn = static_cast<double>(n);
  return std::exp(std::log(8.0) + v * std::log(nn) - nn * eps * eps / 32.0);
}

double vc_identification_bound(std::uint64_t n, unsigned v, double eps, double gamma) {
  if (n < 1) throw DomainError("vc_identification_bound needs n >= 1");
  if (v < 2) throw DomainError("vc_identification_bound needs V >= 2");
  if (!(eps > 0.0)) throw DomainError("vc_identification_bound needs eps > 0");
  if (!(gamma >= 0.0)) throw DomainError("vc_identification_bound needs gamma >= 0");
  const double nn = static_cast<double>(n);
  const double excess = std::max(0.0, eps - gamma / std::sqrt(nn));
  return std::exp(std::log(8.0) + v * std::log(nn) - nn * excess * excess / 128.0);
}

std::vector<ParameterPair> random_parameter_pairs(const SourceFamily& family, std::size_t count,
                                                  const StreamKey& stream) {
  RandomStream rng(stream);
  const ThetaSpace& space = family.theta_space();
  const std::size_t k = space.dim();
  auto draw = [&] {
    std::vector<double> t(k);
    if (space.kind() == ThetaSpace::Kind::Simplex) {
      double sum = 0.0;
      for (double& v : t) {
        v = -std::log(rng.uniform_open());
        sum += v;
      }
      for (double& v : t) v /= sum;
      return space.project(t);
    }
    for (std::size_t a = 0; a < k; ++a) {
      t[a] = space.bounds().lo[a] + (space.bounds().hi[a] - space.bounds().lo[a]) * rng.uniform();
    }
    return ParameterVector(std::move(t));
  };
  std::vector<ParameterPair> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ParameterVector a = draw();
    ParameterVector b = draw();
    out.push_back({std::move(a), std::move(b)});
  }
  return out;
}

std::size_t shatter_count(const SourceFamily& family, std::span<const ParameterPair> sets,
                          std::span<const double> points) {
  const std::size_t d = family.data_dim();
  if (points.size() % d != 0) throw ShapeError("point list length is not a multiple of d");
  const std::size_t count = points.size() / d;
  if (count > 64) throw PreconditionError("shatter probes support at most 64 points");
  SampleBlock block;
  block.n = count;
  block.d = d;
  block.values.assign(points.begin(), points.end());
  for (std::size_t i = 0; i < count; ++i) {
    if (!family.support().contains(block.letter(i))) {
      throw PreconditionError("shatter probe point " + std::to_string(i) + " lies outside the support");
    }
  }
  std::unordered_set<std::uint64_t> patterns;
  if (count == 0) return sets.empty() ? 0 : 1;
  constexpr std::size_t kChunk = 1024;
  const std::uint64_t all = count == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << count) - 1;
  for (std::size_t start = 0; start < sets.size(); start += kChunk) {
    const std::size_t end = std::min(sets.size(), start + kChunk);
    std::vector<ParameterVector> thetas;
    thetas.reserve(2 * (end - start));
    for (std::size_t s = start; s < end; ++s) {
      thetas.push_back(sets[s].a);
      thetas.push_back(sets[s].b);
    }
    const std::vector<double> dens = family.density_table(thetas, block);
    for (std::size_t s = 0; s < end - start; ++s) {
      const double* pa = dens.data() + (2 * s) * count;
      const double* pb = dens.data() + (2 * s + 1) * count;
      std::uint64_t bits = 0;
      for (std::size_t i = 0; i < count; ++i) {
        if (pa[i] > pb[i]) bits |= std::uint64_t{1} << i;
      }
      patterns.insert(bits);
    }
    if (count < 64 && patterns.size() == all + 1) break;
  }
  return patterns.size();
}

std::size_t shatter_probe(const SourceFamily& family, const ParameterNet& net, std::span<const double> points,
                          std::size_t trials, const StreamKey& stream) {
  std::vector<ParameterPair> sets;
  for (std::size_t a = 0; a < net.size(); ++a) {
    for (std::size_t b = 0; b < net.size(); ++b) {
      if (a != b) sets.push_back({net[a], net[b]});
    }
  }
  auto extra = random_parameter_pairs(family, trials, stream);
  sets.insert(sets.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
  return shatter_count(family, sets, points);
}

}  // namespace uvq

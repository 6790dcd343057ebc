#include "uvq/source_models.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>

#include "uvq/error.hpp"

namespace uvq {
namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

const boost::math::normal& standard_normal() {
  static const boost::math::normal n(0.0, 1.0);
  return n;
}

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

double distance(const ParameterVector& a, const ParameterVector& b) {
  if (a.size() != b.size()) throw ParameterError("parameter vectors differ in dimension");
  return euclidean_distance(a.coords(), b.coords());
}

// ---------------------------------------------------------------- AxisDensity

AxisDensity AxisDensity::uniform(double lo, double hi) {
  if (!(hi > lo)) throw PreconditionError("uniform density needs lo < hi");
  AxisDensity a;
  a.kind_ = Kind::Uniform;
  a.lo_ = lo;
  a.hi_ = hi;
  return a;
}

AxisDensity AxisDensity::triangular(double lo, double mode, double hi) {
  if (!(hi > lo) || mode < lo || mode > hi) {
    throw PreconditionError("triangular density needs lo <= mode <= hi and lo < hi");
  }
  AxisDensity a;
  a.kind_ = Kind::Triangular;
  a.lo_ = lo;
  a.hi_ = hi;
  a.mode_ = mode;
  return a;
}

AxisDensity AxisDensity::truncated_gaussian(double mean, double sigma, double lo, double hi) {
  if (!(hi > lo) || !(sigma > 0.0)) {
    throw PreconditionError("truncated Gaussian needs sigma > 0 and lo < hi");
  }
  AxisDensity a;
  a.kind_ = Kind::TruncatedGaussian;
  a.lo_ = lo;
  a.hi_ = hi;
  a.mean_ = mean;
  a.sigma_ = sigma;
  a.cdf_lo_ = boost::math::cdf(standard_normal(), (lo - mean) / sigma);
  a.mass_ = boost::math::cdf(standard_normal(), (hi - mean) / sigma) - a.cdf_lo_;
  if (!(a.mass_ > 1e-12)) throw PreconditionError("truncated Gaussian has negligible mass on its interval");
  return a;
}

double AxisDensity::pdf(double x) const noexcept {
  if (x < lo_ || x > hi_) return 0.0;
  switch (kind_) {
    case Kind::Uniform:
      return 1.0 / (hi_ - lo_);
    case Kind::Triangular: {
      const double w = hi_ - lo_;
      if (x < mode_) return 2.0 * (x - lo_) / (w * (mode_ - lo_));
      if (x > mode_) return 2.0 * (hi_ - x) / (w * (hi_ - mode_));
      return 2.0 / w;
    }
    case Kind::TruncatedGaussian: {
      const double z = (x - mean_) / sigma_;
      return kInvSqrt2Pi * std::exp(-0.5 * z * z) / (sigma_ * mass_);
    }
  }
  return 0.0;
}

double AxisDensity::cdf(double x) const noexcept {
  if (x <= lo_) return 0.0;
  if (x >= hi_) return 1.0;
  switch (kind_) {
    case Kind::Uniform:
      return (x - lo_) / (hi_ - lo_);
    case Kind::Triangular: {
      const double w = hi_ - lo_;
      if (x <= mode_) return (x - lo_) * (x - lo_) / (w * (mode_ - lo_));
      return 1.0 - (hi_ - x) * (hi_ - x) / (w * (hi_ - mode_));
    }
    case Kind::TruncatedGaussian:
      return (boost::math::cdf(standard_normal(), (x - mean_) / sigma_) - cdf_lo_) / mass_;
  }
  return 0.0;
}

double AxisDensity::quantile(double u) const {
  u = std::clamp(u, 0.0, 1.0);
  switch (kind_) {
    case Kind::Uniform:
      return lo_ + u * (hi_ - lo_);
    case Kind::Triangular: {
      const double w = hi_ - lo_;
      const double split = (mode_ - lo_) / w;
      if (u < split) return lo_ + std::sqrt(u * w * (mode_ - lo_));
      return hi_ - std::sqrt((1.0 - u) * w * (hi_ - mode_));
    }
    case Kind::TruncatedGaussian: {
      const double p = std::clamp(cdf_lo_ + u * mass_, 1e-300, 1.0 - 1e-16);
      const double x = mean_ + sigma_ * boost::math::quantile(standard_normal(), p);
      return std::clamp(x, lo_, hi_);
    }
  }
  return lo_;
}

std::vector<double> AxisDensity::breakpoints() const {
  if (kind_ == Kind::Triangular) return {lo_, mode_, hi_};
  return {lo_, hi_};
}

std::string AxisDensity::describe() const {
  switch (kind_) {
    case Kind::Uniform:
      return "uniform " + fmt_double(lo_) + " " + fmt_double(hi_);
    case Kind::Triangular:
      return "triangular " + fmt_double(lo_) + " " + fmt_double(mode_) + " " + fmt_double(hi_);
    case Kind::TruncatedGaussian:
      return "truncated_gaussian " + fmt_double(mean_) + " " + fmt_double(sigma_) + " " +
             fmt_double(lo_) + " " + fmt_double(hi_);
  }
  return {};
}

// ------------------------------------------------------------- ProductDensity

double ProductDensity::pdf(std::span<const double> x) const noexcept {
  double p = 1.0;
  for (std::size_t a = 0; a < axes.size(); ++a) {
    p *= axes[a].pdf(x[a]);
    if (p == 0.0) return 0.0;
  }
  return p;
}

void ProductDensity::sample(RandomStream& rng, std::span<double> out) const {
  for (std::size_t a = 0; a < axes.size(); ++a) out[a] = axes[a].quantile(rng.uniform_open());
}

Box ProductDensity::support() const {
  Box b;
  for (const auto& a : axes) {
    b.lo.push_back(a.lo());
    b.hi.push_back(a.hi());
  }
  return b;
}

std::string ProductDensity::describe() const {
  std::string s;
  for (std::size_t a = 0; a < axes.size(); ++a) {
    if (a > 0) s += " ; ";
    s += axes[a].describe();
  }
  return s;
}

double Monomial::operator()(std::span<const double> x) const noexcept {
  double v = 1.0;
  for (std::size_t a = 0; a < exponents.size(); ++a) {
    for (int e = 0; e < exponents[a]; ++e) v *= x[a];
  }
  return v;
}

std::string Monomial::describe() const {
  std::string s = "monomial";
  for (int e : exponents) s += " " + std::to_string(e);
  return s;
}

// ----------------------------------------------------------------- ThetaSpace

ThetaSpace ThetaSpace::simplex(std::size_t k) {
  if (k == 0) throw PreconditionError("simplex needs k >= 1");
  ThetaSpace t;
  t.kind_ = Kind::Simplex;
  t.dim_ = k;
  t.bounds_.lo.assign(k, 0.0);
  t.bounds_.hi.assign(k, 1.0);
  return t;
}

ThetaSpace ThetaSpace::box(Box b) {
  if (b.dim() == 0) throw PreconditionError("parameter box needs k >= 1");
  for (std::size_t i = 0; i < b.dim(); ++i) {
    if (!(b.hi[i] >= b.lo[i])) throw PreconditionError("parameter box has lo > hi");
  }
  ThetaSpace t;
  t.kind_ = Kind::Box;
  t.dim_ = b.dim();
  t.bounds_ = std::move(b);
  return t;
}

bool ThetaSpace::contains(std::span<const double> theta, double tol) const noexcept {
  if (theta.size() != dim_) return false;
  if (kind_ == Kind::Box) return bounds_.contains(theta, tol);
  double sum = 0.0;
  for (double v : theta) {
    if (!(v >= -tol)) return false;
    sum += v;
  }
  return std::fabs(sum - 1.0) <= std::max(tol, 1e-12);
}

ParameterVector ThetaSpace::project(std::span<const double> theta) const {
  std::vector<double> v(theta.begin(), theta.end());
  if (kind_ == Kind::Box) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp(v[i], bounds_.lo[i], bounds_.hi[i]);
    return ParameterVector(std::move(v));
  }
  // Sort-based Euclidean projection onto the probability simplex.
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double t = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) tau = t;
  }
  for (double& x : v) x = std::max(x - tau, 0.0);
  return ParameterVector(std::move(v));
}

ParameterVector ThetaSpace::centroid() const {
  std::vector<double> c(dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    c[i] = kind_ == Kind::Simplex ? 1.0 / static_cast<double>(dim_)
                                  : 0.5 * (bounds_.lo[i] + bounds_.hi[i]);
  }
  return ParameterVector(std::move(c));
}

// ---------------------------------------------------------------- BoundDensity

BoundDensity::BoundDensity(const SourceFamily& family, ParameterVector theta)
    : family_(&family), theta_(std::move(theta)) {
  family.validate(theta_);
  if (family.kind() == SourceFamily::Kind::Exponential) g_ = family.log_partition(theta_);
}

double BoundDensity::operator()(std::span<const double> x) const {
  const SourceFamily& f = *family_;
  if (!f.support_.contains(x)) return 0.0;
  if (f.kind_ == SourceFamily::Kind::Mixture) {
    double p = 0.0;
    for (std::size_t i = 0; i < f.components_.size(); ++i) {
      if (theta_[i] != 0.0) p += theta_[i] * f.components_[i].pdf(x);
    }
    return p;
  }
  const double base = f.carrier_.pdf(x);
  if (base == 0.0) return 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < f.statistics_.size(); ++i) dot += theta_[i] * f.statistics_[i](x);
  return base * std::exp(dot - g_);
}

// ---------------------------------------------------------------- SourceFamily

std::shared_ptr<const SourceFamily> SourceFamily::mixture(Box support,
                                                          std::vector<ProductDensity> components) {
  if (components.empty()) throw PreconditionError("mixture needs at least one component");
  std::shared_ptr<SourceFamily> f(new SourceFamily);
  f->kind_ = Kind::Mixture;
  f->support_ = std::move(support);
  f->theta_ = ThetaSpace::simplex(components.size());
  f->components_ = std::move(components);
  f->finish();
  return f;
}

std::shared_ptr<const SourceFamily> SourceFamily::exponential(Box support, ProductDensity carrier,
                                                              std::vector<Monomial> statistics,
                                                              Box theta_box) {
  if (statistics.empty()) throw PreconditionError("exponential family needs k >= 1 statistics");
  if (theta_box.dim() != statistics.size()) {
    throw PreconditionError("parameter box dimension must equal the number of statistics");
  }
  std::shared_ptr<SourceFamily> f(new SourceFamily);
  f->kind_ = Kind::Exponential;
  f->support_ = std::move(support);
  f->carrier_ = std::move(carrier);
  f->statistics_ = std::move(statistics);
  f->theta_ = ThetaSpace::box(std::move(theta_box));
  f->finish();
  return f;
}

void SourceFamily::finish() {
  const std::size_t d = support_.dim();
  if (d == 0 || d > 2) throw PreconditionError("data dimension must be 1 or 2");
  for (std::size_t a = 0; a < d; ++a) {
    if (!(support_.hi[a] > support_.lo[a])) throw PreconditionError("support box has empty axis");
  }
  auto check_product = [&](const ProductDensity& p, const char* what) {
    if (p.axes.size() != d) {
      throw PreconditionError(std::string(what) + " has " + std::to_string(p.axes.size()) +
                              " axes, expected " + std::to_string(d));
    }
    for (std::size_t a = 0; a < d; ++a) {
      if (p.axes[a].lo() < support_.lo[a] || p.axes[a].hi() > support_.hi[a]) {
        throw PreconditionError(std::string(what) + " extends outside the support box");
      }
    }
  };

  breaks_.assign(d, {});
  auto add_breaks = [&](const ProductDensity& p) {
    for (std::size_t a = 0; a < d; ++a) {
      for (double b : p.axes[a].breakpoints()) breaks_[a].push_back(b);
    }
  };
  if (kind_ == Kind::Mixture) {
    for (const auto& c : components_) {
      check_product(c, "mixture component");
      add_breaks(c);
    }
  } else {
    check_product(carrier_, "carrier density");
    add_breaks(carrier_);
    for (const auto& s : statistics_) {
      if (s.exponents.size() != d) throw PreconditionError("statistic exponent count must equal d");
      for (int e : s.exponents) {
        if (e < 0) throw PreconditionError("statistic exponents must be non-negative");
      }
    }
  }
  for (auto& axis : breaks_) {
    std::sort(axis.begin(), axis.end());
    axis.erase(std::unique(axis.begin(), axis.end()), axis.end());
  }

  if (kind_ == Kind::Exponential) {
    // {1, h_1, ..., h_k} must be linearly independent under the carrier.
    const std::size_t k = statistics_.size();
    const QuadratureGrid grid = composite_grid(support_, breaks_, 8, 10);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k + 1),
                                                 static_cast<Eigen::Index>(k + 1));
    std::vector<double> phi(k + 1);
    for (std::size_t q = 0; q < grid.size(); ++q) {
      const auto x = grid.node(q);
      const double w = grid.weights[q] * carrier_.pdf(x);
      if (w == 0.0) continue;
      phi[0] = 1.0;
      for (std::size_t i = 0; i < k; ++i) phi[i + 1] = statistics_[i](x);
      for (std::size_t i = 0; i <= k; ++i) {
        for (std::size_t j = 0; j <= k; ++j) gram(i, j) += w * phi[i] * phi[j];
      }
    }
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 1e-13 * hi)) {
      throw LinearDependenceError("statistics {1, h_1, ..., h_k} are linearly dependent under the carrier");
    }
  }

  Hasher h;
  h.text(canonical_text());
  hash_ = h.finish();
}

std::string SourceFamily::canonical_text() const {
  std::ostringstream out;
  out << "uvq-family/1\n";
  out << "family_kind=" << (kind_ == Kind::Mixture ? "mixture" : "exponential") << "\n";
  out << "support=";
  for (std::size_t a = 0; a < support_.dim(); ++a) {
    if (a > 0) out << " ; ";
    out << fmt_double(support_.lo[a]) << " " << fmt_double(support_.hi[a]);
  }
  out << "\n";
  if (kind_ == Kind::Mixture) {
    out << "theta=simplex " << theta_.dim() << "\n";
    for (const auto& c : components_) out << "component=" << c.describe() << "\n";
  } else {
    out << "theta_box=";
    for (std::size_t a = 0; a < theta_.dim(); ++a) {
      if (a > 0) out << " ; ";
      out << fmt_double(theta_.bounds().lo[a]) << " " << fmt_double(theta_.bounds().hi[a]);
    }
    out << "\ncarrier=" << carrier_.describe() << "\n";
    for (const auto& s : statistics_) out << "statistic=" << s.describe() << "\n";
  }
  return out.str();
}

void SourceFamily::validate(const ParameterVector& theta) const {
  if (theta.size() != param_dim()) {
    throw ParameterError("parameter has dimension " + std::to_string(theta.size()) +
                         ", family expects " + std::to_string(param_dim()));
  }
  for (double v : theta.coords()) {
    if (!std::isfinite(v)) throw ParameterError("parameter has a non-finite coordinate");
  }
  if (!theta_.contains(theta.coords())) {
    throw ParameterError(kind_ == Kind::Mixture
                             ? "mixture weights must be non-negative and sum to 1"
                             : "parameter lies outside the declared box");
  }
}

double SourceFamily::log_partition(const ParameterVector& theta) const {
  if (kind_ != Kind::Exponential) {
    throw UnsupportedFamilyError("log-partition is defined for exponential families only");
  }
  validate(theta);
  {
    std::shared_lock lock(cache_mutex_);
    if (const auto it = partition_cache_.find(theta.vector()); it != partition_cache_.end()) {
      return it->second;
    }
  }
  const std::size_t k = statistics_.size();
  const PointFn integrand = [&](std::span<const double> x) {
    const double base = carrier_.pdf(x);
    if (base == 0.0) return 0.0;
    double dot = 0.0;
    for (std::size_t i = 0; i < k; ++i) dot += theta[i] * statistics_[i](x);
    return base * std::exp(dot);
  };
  const QuadratureResult r = integrate(integrand, support_, breaks_, quad_);
  if (!(r.value > 0.0) || !std::isfinite(r.value)) {
    throw NumericalError("partition integral is not positive and finite", r.error_estimate);
  }
  const double g = std::log(r.value);
  std::unique_lock lock(cache_mutex_);
  return partition_cache_.try_emplace(theta.vector(), g).first->second;
}

double SourceFamily::density(const ParameterVector& theta, std::span<const double> x) const {
  if (x.size() != data_dim()) throw DomainError("point has the wrong dimension");
  if (!support_.contains(x)) throw DomainError("point lies outside the support");
  return bind(theta)(x);
}

void SourceFamily::statistic_values(std::span<const double> x, std::span<double> out) const {
  for (std::size_t i = 0; i < statistics_.size(); ++i) out[i] = statistics_[i](x);
}

std::vector<double> SourceFamily::density_table(std::span<const ParameterVector> thetas,
                                                const SampleBlock& block) const {
  const std::size_t n = block.n;
  std::vector<double> out(thetas.size() * n, 0.0);
  if (kind_ == Kind::Mixture) {
    const std::size_t k = components_.size();
    std::vector<double> comp(k * n);
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto x = block.letter(i);
        comp[c * n + i] = support_.contains(x) ? components_[c].pdf(x) : 0.0;
      }
    }
    for (std::size_t t = 0; t < thetas.size(); ++t) {
      validate(thetas[t]);
      double* row = out.data() + t * n;
      for (std::size_t c = 0; c < k; ++c) {
        const double w = thetas[t][c];
        if (w == 0.0) continue;
        const double* src = comp.data() + c * n;
        for (std::size_t i = 0; i < n; ++i) row[i] += w * src[i];
      }
    }
    return out;
  }
  const std::size_t k = statistics_.size();
  std::vector<double> stats(n * k);
  std::vector<double> base(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = block.letter(i);
    base[i] = support_.contains(x) ? carrier_.pdf(x) : 0.0;
    for (std::size_t j = 0; j < k; ++j) stats[i * k + j] = statistics_[j](x);
  }
  for (std::size_t t = 0; t < thetas.size(); ++t) {
    const double g = log_partition(thetas[t]);
    double* row = out.data() + t * n;
    for (std::size_t i = 0; i < n; ++i) {
      if (base[i] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += thetas[t][j] * stats[i * k + j];
      row[i] = base[i] * std::exp(dot - g);
    }
  }
  return out;
}

// ------------------------------------------------------------------- sampling

double rejection_envelope(const SourceFamily& family, const ParameterVector& theta) {
  if (family.kind() != SourceFamily::Kind::Exponential) {
    throw UnsupportedFamilyError("rejection envelope is defined for exponential families only");
  }
  const double g = family.log_partition(theta);
  const Box& sup = family.carrier().support();
  const std::size_t d = sup.dim();
  const std::size_t k = family.param_dim();
  auto exponent = [&](std::span<const double> x) {
    double dot = 0.0;
    for (std::size_t i = 0; i < k; ++i) dot += theta[i] * family.statistics()[i](x);
    return dot;
  };

  // Coarse search over a probe lattice, then coordinate-wise golden section.
  const std::size_t panels = d == 1 ? 256 : 24;
  const std::vector<double> pts = probe_points(sup, family.breakpoints(), panels, 4);
  const std::size_t count = pts.size() / d;
  std::vector<double> best(pts.begin(), pts.begin() + static_cast<long>(d));
  double best_val = exponent(best);
  for (std::size_t q = 1; q < count; ++q) {
    const std::span<const double> x(pts.data() + q * d, d);
    const double v = exponent(x);
    if (v > best_val) {
      best_val = v;
      best.assign(x.begin(), x.end());
    }
  }
  std::vector<double> x = best;
  for (int pass = 0; pass < 3; ++pass) {
    for (std::size_t a = 0; a < d; ++a) {
      const double step = (sup.hi[a] - sup.lo[a]) / static_cast<double>(panels);
      double lo = std::max(sup.lo[a], x[a] - step);
      double hi = std::min(sup.hi[a], x[a] + step);
      const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
      for (int it = 0; it < 80; ++it) {
        const double m1 = hi - phi * (hi - lo);
        const double m2 = lo + phi * (hi - lo);
        x[a] = m1;
        const double v1 = exponent(x);
        x[a] = m2;
        const double v2 = exponent(x);
        (v1 > v2 ? hi : lo) = v1 > v2 ? m2 : m1;
      }
      x[a] = 0.5 * (lo + hi);
      const double v = exponent(x);
      if (v > best_val) {
        best_val = v;
        best = x;
      } else {
        x = best;
      }
    }
  }
  return std::exp(best_val - g) * (1.0 + 1e-9);
}

SampleBlock sample_block(const SourceFamily& family, const ParameterVector& theta, std::size_t n,
                         const StreamKey& stream) {
  if (n == 0) throw PreconditionError("sample_block needs n >= 1");
  family.validate(theta);
  const std::size_t d = family.data_dim();
  SampleBlock block;
  block.n = n;
  block.d = d;
  block.stream = stream;
  block.values.resize(n * d);
  RandomStream rng(stream);

  if (family.kind() == SourceFamily::Kind::Mixture) {
    const auto& comps = family.components();
    std::size_t last_active = 0;
    for (std::size_t c = 0; c < comps.size(); ++c) {
      if (theta[c] > 0.0) last_active = c;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double u = rng.uniform();
      std::size_t c = 0;
      double cumulative = 0.0;
      for (; c < last_active; ++c) {
        cumulative += theta[c];
        if (u < cumulative) break;
      }
      comps[c].sample(rng, std::span<double>(block.values.data() + i * d, d));
    }
    return block;
  }

  const double envelope = rejection_envelope(family, theta);
  if (1.0 / envelope < 1e-4) {
    throw EfficiencyError("rejection acceptance rate 1/M = " + std::to_string(1.0 / envelope) +
                          " is below 1e-4 (envelope constant M = " + std::to_string(envelope) + ")");
  }
  const double g = family.log_partition(theta);
  const std::size_t k = family.param_dim();
  for (std::size_t i = 0; i < n; ++i) {
    std::span<double> x(block.values.data() + i * d, d);
    for (;;) {
      family.carrier().sample(rng, x);
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += theta[j] * family.statistics()[j](x);
      if (rng.uniform() * envelope < std::exp(dot - g)) break;
    }
  }
  return block;
}

double mixture_lipschitz_bound(const ParameterVector& theta, const ParameterVector& eta) {
  if (theta.size() != eta.size()) throw ParameterError("parameter vectors differ in dimension");
  return 0.5 * std::sqrt(static_cast<double>(theta.size())) * distance(theta, eta);
}

// -------------------------------------------------------------------- parsing

namespace {

AxisDensity parse_axis_density(const KvEntry& e, const std::string& text) {
  const auto tok = split_ws(text);
  if (tok.empty()) throw ConfigError(e.key, e.line, "empty density description");
  auto arg = [&](std::size_t i) { return parse_number(e, tok.at(i)); };
  auto need = [&](std::size_t count) {
    if (tok.size() != count + 1) {
      throw ConfigError(e.key, e.line,
                        "'" + tok[0] + "' takes " + std::to_string(count) + " numbers");
    }
  };
  try {
    if (tok[0] == "uniform") {
      need(2);
      return AxisDensity::uniform(arg(1), arg(2));
    }
    if (tok[0] == "triangular") {
      need(3);
      return AxisDensity::triangular(arg(1), arg(2), arg(3));
    }
    if (tok[0] == "truncated_gaussian") {
      need(4);
      return AxisDensity::truncated_gaussian(arg(1), arg(2), arg(3), arg(4));
    }
  } catch (const PreconditionError& err) {
    throw ConfigError(e.key, e.line, err.what());
  }
  throw ConfigError(e.key, e.line,
                    "unknown density '" + tok[0] + "' (uniform | triangular | truncated_gaussian)");
}

ProductDensity parse_product(const KvEntry& e, std::size_t d) {
  ProductDensity p;
  for (const auto& part : split_on(e.value, ';')) p.axes.push_back(parse_axis_density(e, part));
  if (p.axes.size() != d) {
    throw ConfigError(e.key, e.line,
                      "expected " + std::to_string(d) + " ';'-separated axis densities");
  }
  return p;
}

Box parse_box(const KvEntry& e, std::size_t dims) {
  Box b;
  for (const auto& part : split_on(e.value, ';')) {
    const auto tok = split_ws(part);
    if (tok.size() != 2) throw ConfigError(e.key, e.line, "each axis needs 'lo hi'");
    b.lo.push_back(parse_number(e, tok[0]));
    b.hi.push_back(parse_number(e, tok[1]));
    if (!(b.hi.back() >= b.lo.back())) throw ConfigError(e.key, e.line, "axis has lo > hi");
  }
  if (b.dim() != dims) {
    throw ConfigError(e.key, e.line, "expected " + std::to_string(dims) + " ';'-separated axes");
  }
  return b;
}

}  // namespace

std::shared_ptr<const SourceFamily> SourceFamily::from_document(const KvDocument& doc) {
  doc.reject_unknown({"format", "name", "family_kind", "d", "k", "support", "theta", "theta_box",
                      "carrier"},
                     {"component.", "statistic."});
  if (const KvEntry* f = doc.find("format"); f && f->value != "uvq-family/1") {
    throw ConfigError("format", f->line, "unsupported format '" + f->value + "' (expected uvq-family/1)");
  }
  const KvEntry& kind_entry = doc.require("family_kind");
  const long long d_ll = doc.integer("d");
  const long long k_ll = doc.integer("k");
  if (d_ll < 1 || d_ll > 2) throw ConfigError("d", doc.require("d").line, "d must be 1 or 2");
  if (k_ll < 1) throw ConfigError("k", doc.require("k").line, "k must be >= 1");
  const auto d = static_cast<std::size_t>(d_ll);
  const auto k = static_cast<std::size_t>(k_ll);
  const Box support = parse_box(doc.require("support"), d);
  for (std::size_t a = 0; a < d; ++a) {
    if (!(support.hi[a] > support.lo[a])) {
      throw ConfigError("support", doc.require("support").line, "support axes must have lo < hi");
    }
  }

  auto indexed = [&](const std::string& prefix) {
    std::vector<const KvEntry*> out(k, nullptr);
    for (const KvEntry* e : doc.with_prefix(prefix)) {
      const long long idx = parse_integer(*e, std::string_view(e->key).substr(prefix.size()));
      if (idx < 1 || idx > k_ll) {
        throw ConfigError(e->key, e->line, "index must be in 1.." + std::to_string(k));
      }
      out[static_cast<std::size_t>(idx - 1)] = e;
    }
    for (std::size_t i = 0; i < k; ++i) {
      if (!out[i]) throw ConfigError(prefix + std::to_string(i + 1), 0, "required field is missing");
    }
    return out;
  };

  auto wrap = [&](const KvEntry& anchor, auto&& build) {
    try {
      return build();
    } catch (const PreconditionError& err) {
      throw ConfigError(anchor.key, anchor.line, err.what());
    } catch (const LinearDependenceError& err) {
      throw ConfigError(anchor.key, anchor.line, err.what());
    }
  };

  if (kind_entry.value == "mixture") {
    if (const KvEntry* t = doc.find("theta"); t && t->value != "simplex") {
      throw ConfigError("theta", t->line, "mixture families use theta = simplex");
    }
    if (const KvEntry* t = doc.find("theta_box")) {
      throw ConfigError("theta_box", t->line, "mixture families use the simplex, not a box");
    }
    std::vector<ProductDensity> comps;
    for (const KvEntry* e : indexed("component.")) comps.push_back(parse_product(*e, d));
    return wrap(kind_entry, [&] { return mixture(support, std::move(comps)); });
  }
  if (kind_entry.value == "exponential") {
    if (const KvEntry* t = doc.find("theta"); t && t->value != "box") {
      throw ConfigError("theta", t->line, "exponential families use theta = box");
    }
    const Box theta_box = parse_box(doc.require("theta_box"), k);
    ProductDensity carrier = parse_product(doc.require("carrier"), d);
    std::vector<Monomial> stats;
    for (const KvEntry* e : indexed("statistic.")) {
      const auto tok = split_ws(e->value);
      if (tok.size() != d + 1 || tok[0] != "monomial") {
        throw ConfigError(e->key, e->line,
                          "expected 'monomial' followed by " + std::to_string(d) + " exponents");
      }
      Monomial m;
      for (std::size_t a = 0; a < d; ++a) {
        const long long ex = parse_integer(*e, tok[a + 1]);
        if (ex < 0 || ex > 16) throw ConfigError(e->key, e->line, "exponent must be in 0..16");
        m.exponents.push_back(static_cast<int>(ex));
      }
      stats.push_back(std::move(m));
    }
    return wrap(kind_entry, [&] { return exponential(support, std::move(carrier), std::move(stats), theta_box); });
  }
  throw ConfigError("family_kind", kind_entry.line,
                    "unknown family kind '" + kind_entry.value + "' (mixture | exponential)");
}

std::shared_ptr<const SourceFamily> SourceFamily::load(const std::filesystem::path& path) {
  return from_document(KvDocument::load(path));
}

}  // namespace uvq

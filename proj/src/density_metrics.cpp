#include "uvq/density_metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "uvq/error.hpp"
#include "uvq/parallel.hpp"

namespace uvq {
namespace {

void require_exponential(const SourceFamily& family, const char* what) {
  if (family.kind() != SourceFamily::Kind::Exponential) {
    throw UnsupportedFamilyError(std::string(what) + " is defined for exponential families only");
  }
}

void require_same_dim(const ParameterVector& a, const ParameterVector& b) {
  if (a.size() != b.size()) throw ParameterError("parameter vectors differ in dimension");
}

double max_panel_width(const Box& box, const AxisBreaks& breaks, std::size_t panels) {
  double width = 0.0;
  for (std::size_t a = 0; a < box.dim(); ++a) {
    std::vector<double> edges{box.lo[a]};
    if (a < breaks.size()) {
      for (double b : breaks[a]) {
        if (b > box.lo[a] && b < box.hi[a]) edges.push_back(b);
      }
    }
    edges.push_back(box.hi[a]);
    std::sort(edges.begin(), edges.end());
    for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
      width = std::max(width, (edges[i + 1] - edges[i]) / static_cast<double>(panels));
    }
  }
  return width;
}

}  // namespace

const char* method_name(DistanceReport::Method m) noexcept {
  switch (m) {
    case DistanceReport::Method::L1Integral: return "l1-integral";
    case DistanceReport::Method::ScheffeSet: return "scheffe-set";
    case DistanceReport::Method::DivergenceIntegral: return "divergence-integral";
    case DistanceReport::Method::PartitionIdentity: return "partition-identity";
  }
  return "unknown";
}

DistanceReport variational_distance(const SourceFamily& family, const ParameterVector& theta,
                                    const ParameterVector& eta) {
  require_same_dim(theta, eta);
  const BoundDensity p = family.bind(theta);
  const BoundDensity q = family.bind(eta);
  DistanceReport out;
  out.method = DistanceReport::Method::L1Integral;
  if (theta == eta) return out;
  const PointFn f = [&](std::span<const double> x) { return p(x) - q(x); };
  const QuadratureResult r = integrate_abs(f, family.support(), family.breakpoints(), family.quadrature());
  out.value = std::clamp(0.5 * r.value, 0.0, 1.0);
  out.error_estimate = 0.5 * r.error_estimate;
  return out;
}

DistanceReport scheffe_distance(const SourceFamily& family, const ParameterVector& theta,
                                const ParameterVector& eta) {
  require_same_dim(theta, eta);
  if (theta == eta) throw PreconditionError("scheffe_distance needs theta != eta");
  const BoundDensity p = family.bind(theta);
  const BoundDensity q = family.bind(eta);
  const PointFn diff = [&](std::span<const double> x) { return p(x) - q(x); };
  const QuadratureResult r =
      integrate_region(diff, diff, family.support(), family.breakpoints(), family.quadrature());
  DistanceReport out;
  out.method = DistanceReport::Method::ScheffeSet;
  out.value = std::clamp(r.value, 0.0, 1.0);
  out.error_estimate = r.error_estimate;
  return out;
}

DistanceReport relative_entropy(const SourceFamily& family, const ParameterVector& theta,
                                const ParameterVector& eta) {
  require_exponential(family, "relative entropy");
  require_same_dim(theta, eta);
  const BoundDensity p = family.bind(theta);
  const BoundDensity q = family.bind(eta);
  DistanceReport out;
  out.method = DistanceReport::Method::DivergenceIntegral;
  if (theta == eta) return out;
  const PointFn f = [&](std::span<const double> x) {
    const double a = p(x);
    if (a == 0.0) return 0.0;
    return a * std::log(a / q(x));
  };
  const QuadratureResult r = integrate(f, family.support(), family.breakpoints(), family.quadrature());
  out.value = std::max(0.0, r.value);
  out.error_estimate = r.error_estimate;
  return out;
}

std::pair<std::vector<double>, double> mean_statistic(const SourceFamily& family,
                                                      const ParameterVector& theta) {
  require_exponential(family, "mean statistic");
  const BoundDensity p = family.bind(theta);
  const std::size_t k = family.param_dim();
  std::vector<double> mean(k);
  double err = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const Monomial& h = family.statistics()[i];
    const PointFn f = [&](std::span<const double> x) { return h(x) * p(x); };
    const QuadratureResult r = integrate(f, family.support(), family.breakpoints(), family.quadrature());
    mean[i] = r.value;
    err += r.error_estimate;
  }
  return {mean, err};
}

DistanceReport relative_entropy_partition(const SourceFamily& family, const ParameterVector& theta,
                                          const ParameterVector& eta) {
  require_exponential(family, "relative entropy");
  require_same_dim(theta, eta);
  family.validate(eta);
  DistanceReport out;
  out.method = DistanceReport::Method::PartitionIdentity;
  if (theta == eta) return out;
  const auto [mean, mean_err] = mean_statistic(family, theta);
  const double g_theta = family.log_partition(theta);
  const double g_eta = family.log_partition(eta);
  double dot = 0.0;
  double step = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    dot += (eta[i] - theta[i]) * mean[i];
    step = std::max(step, std::fabs(eta[i] - theta[i]));
  }
  out.value = std::max(0.0, g_eta - g_theta - dot);
  // Partition integrals carry the absolute target error; relative in g.
  const double target = family.quadrature().target_error;
  out.error_estimate = step * mean_err + target * (std::exp(-g_theta) + std::exp(-g_eta));
  return out;
}

PinskerCheck pinsker_check(const SourceFamily& family, const ParameterVector& theta,
                           const ParameterVector& eta) {
  require_exponential(family, "Pinsker check");
  const DistanceReport dv = variational_distance(family, theta, eta);
  const DistanceReport kl = relative_entropy(family, theta, eta);
  PinskerCheck out;
  out.variational = dv.value;
  out.divergence = kl.value;
  out.tolerance = dv.error_estimate + std::sqrt(0.5 * kl.error_estimate);
  const double rhs = std::sqrt(0.5 * kl.value);
  out.slack = rhs - dv.value;
  out.holds = dv.value <= rhs + out.tolerance;
  return out;
}

double divergence_growth_bound(const ParameterVector& theta, const ParameterVector& eta,
                               double a_k, double log_ratio_sup) {
  const double r = distance(theta, eta);
  return 0.5 * std::exp(log_ratio_sup + 2.0 * a_k * r) * r * r;
}

double variational_growth_bound(const ParameterVector& theta, const ParameterVector& eta,
                                double a_k, double log_ratio_sup) {
  const double r = distance(theta, eta);
  return 0.5 * std::exp(0.5 * log_ratio_sup + a_k * r) * r;
}

std::vector<double> support_probe_points(const SourceFamily& family, std::size_t panels) {
  if (family.data_dim() == 2) panels = std::max<std::size_t>(1, panels / 4);
  return probe_points(family.support(), family.breakpoints(), panels, 10);
}

double log_ratio_sup(const SourceFamily& family, const ParameterVector& theta) {
  require_exponential(family, "log-ratio sup");
  const double g = family.log_partition(theta);
  const std::size_t d = family.data_dim();
  const std::size_t k = family.param_dim();
  const std::vector<double> pts = support_probe_points(family);
  double best = 0.0;
  for (std::size_t q = 0; q * d < pts.size(); ++q) {
    const std::span<const double> x(pts.data() + q * d, d);
    if (!family.carrier().support().contains(x)) continue;
    double dot = 0.0;
    for (std::size_t i = 0; i < k; ++i) dot += theta[i] * family.statistics()[i](x);
    best = std::max(best, std::fabs(g - dot));
  }
  return best;
}

double log_ratio_sup(const SourceFamily& family, std::span<const ParameterVector> thetas) {
  double best = 0.0;
  for (const auto& t : thetas) best = std::max(best, log_ratio_sup(family, t));
  return best;
}

SupNormRatio sup_norm_ratio(const ProductDensity& measure, const Box& box, const AxisBreaks& breaks,
                            std::span<const PointFn> basis, std::size_t panels) {
  const std::size_t m = basis.size();
  if (m == 0) throw PreconditionError("sup_norm_ratio needs a non-empty basis");
  const auto dim = static_cast<Eigen::Index>(m);
  Eigen::MatrixXd gram(dim, dim);
  QuadratureOptions opts;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i; j < m; ++j) {
      const PointFn f = [&](std::span<const double> x) {
        return measure.pdf(x) * basis[i](x) * basis[j](x);
      };
      const double v = integrate(f, box, breaks, opts).value;
      gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      gram(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = v;
    }
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 1e-13 * hi)) throw LinearDependenceError("Gram matrix of the basis is singular");
  const Eigen::MatrixXd inverse = eig.eigenvectors() *
                                  eig.eigenvalues().cwiseInverse().asDiagonal() *
                                  eig.eigenvectors().transpose();

  const Box support = measure.support();
  const std::size_t d = box.dim();
  const std::vector<double> pts = probe_points(box, breaks, panels, 10);
  SupNormRatio out;
  out.resolution = max_panel_width(box, breaks, panels);
  Eigen::VectorXd phi(dim);
  double best = 0.0;
  for (std::size_t q = 0; q * d < pts.size(); ++q) {
    const std::span<const double> x(pts.data() + q * d, d);
    if (!support.contains(x)) continue;
    for (std::size_t i = 0; i < m; ++i) phi(static_cast<Eigen::Index>(i)) = basis[i](x);
    best = std::max(best, phi.dot(inverse * phi));
    ++out.nodes;
  }
  out.value = std::sqrt(best);
  return out;
}

SupNormRatio sup_norm_ratio(const SourceFamily& family, std::size_t panels) {
  require_exponential(family, "sup-norm ratio");
  std::vector<PointFn> basis;
  basis.emplace_back([](std::span<const double>) { return 1.0; });
  for (const auto& h : family.statistics()) {
    basis.emplace_back([h](std::span<const double> x) { return h(x); });
  }
  if (family.data_dim() == 2) panels = std::max<std::size_t>(1, panels / 4);
  return sup_norm_ratio(family.carrier(), family.support(), family.breakpoints(), basis, panels);
}

double lipschitz_ratio_max(const SourceFamily& family,
                           std::span<const std::pair<ParameterVector, ParameterVector>> pairs) {
  std::vector<double> ratios(pairs.size(), 0.0);
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto& [a, b] = pairs[i];
    const double r = distance(a, b);
    if (r == 0.0) return;
    ratios[i] = variational_distance(family, a, b).value / r;
  });
  double best = 0.0;
  for (double r : ratios) best = std::max(best, r);
  return best;
}

}  // namespace uvq

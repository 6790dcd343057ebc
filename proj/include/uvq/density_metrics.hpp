#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "uvq/source_models.hpp"

namespace uvq {

struct DistanceReport {
  enum class Method { L1Integral, ScheffeSet, DivergenceIntegral, PartitionIdentity };

  double value = 0.0;
  double error_estimate = 0.0;
  Method method = Method::L1Integral;
};

const char* method_name(DistanceReport::Method m) noexcept;

/// d_V = (1/2) * integral |p_theta - p_eta|.
DistanceReport variational_distance(const SourceFamily& family, const ParameterVector& theta,
                                    const ParameterVector& eta);

/// P_theta(A) - P_eta(A) over A = {p_theta > p_eta}. Requires theta != eta.
DistanceReport scheffe_distance(const SourceFamily& family, const ParameterVector& theta,
                                const ParameterVector& eta);

/// D(P_theta || P_eta) as integral p_theta ln(p_theta / p_eta). Exponential only.
DistanceReport relative_entropy(const SourceFamily& family, const ParameterVector& theta,
                                const ParameterVector& eta);

/// D(P_theta || P_eta) as g(eta) - g(theta) - (eta - theta) . E_theta[h].
DistanceReport relative_entropy_partition(const SourceFamily& family, const ParameterVector& theta,
                                          const ParameterVector& eta);

/// E_theta[h] by quadrature, with the summed error estimate.
std::pair<std::vector<double>, double> mean_statistic(const SourceFamily& family,
                                                      const ParameterVector& theta);

struct PinskerCheck {
  bool holds = true;
  double slack = 0.0;  // sqrt(D/2) - d_V
  double variational = 0.0;
  double divergence = 0.0;
  double tolerance = 0.0;
};

/// d_V <= sqrt(D/2) up to the combined quadrature tolerance.
PinskerCheck pinsker_check(const SourceFamily& family, const ParameterVector& theta,
                           const ParameterVector& eta);

/// (1/2) e^L e^{2 A_k |theta - eta|} |theta - eta|^2.
double divergence_growth_bound(const ParameterVector& theta, const ParameterVector& eta,
                               double a_k, double log_ratio_sup);

/// beta_0 e^{A_k |theta - eta|} |theta - eta| with beta_0 = e^{L/2} / 2.
double variational_growth_bound(const ParameterVector& theta, const ParameterVector& eta,
                                double a_k, double log_ratio_sup);

/// Probe-point set used for every sup-norm evaluation over the support.
std::vector<double> support_probe_points(const SourceFamily& family, std::size_t panels = 64);

/// L_theta = max |ln(p(x) / p_theta(x))| over the probe points where p > 0.
/// Depends on the probe resolution. Exponential only.
double log_ratio_sup(const SourceFamily& family, const ParameterVector& theta);

/// max of log_ratio_sup over the given parameters.
double log_ratio_sup(const SourceFamily& family, std::span<const ParameterVector> thetas);

struct SupNormRatio {
  double value = 0.0;
  std::size_t nodes = 0;
  double resolution = 0.0;  // largest panel width of the probe grid
};

/// max over probe nodes of sqrt(phi^T G^{-1} phi) for the basis `basis` with
/// Gram matrix G under `measure` on `box`. Throws LinearDependenceError if G
/// is singular.
SupNormRatio sup_norm_ratio(const ProductDensity& measure, const Box& box, const AxisBreaks& breaks,
                            std::span<const PointFn> basis, std::size_t panels = 64);

/// A_k for the basis {1, h_1, ..., h_k} under the carrier.
SupNormRatio sup_norm_ratio(const SourceFamily& family, std::size_t panels = 64);

/// max over the pairs of d_V(P_a, P_b) / |a - b| (pairs with a == b skipped).
double lipschitz_ratio_max(const SourceFamily& family,
                           std::span<const std::pair<ParameterVector, ParameterVector>> pairs);

}  // namespace uvq

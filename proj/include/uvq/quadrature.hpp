#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "uvq/box.hpp"

namespace uvq {

struct QuadratureOptions {
  double target_error = 1e-10;                   // absolute, per integral
  std::size_t node_cap = std::size_t{1} << 20;   // per axis
  std::size_t panels_per_piece = 4;              // initial panels between breakpoints
  std::size_t root_scan = 256;                   // sign samples per piece for region integrals
};

struct QuadratureResult {
  double value = 0.0;
  double error_estimate = 0.0;
  std::size_t nodes = 0;
};

/// Per-axis interior breakpoints where the integrand may be non-smooth.
using AxisBreaks = std::vector<std::vector<double>>;

using ScalarFn = std::function<double(double)>;
using PointFn = std::function<double(std::span<const double>)>;

/// Gauss-Legendre rule on [-1, 1] (nodes ascending).
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};
const GaussRule& gauss_legendre(std::size_t order);

/// Globally adaptive Gauss-Legendre on [lo, hi]: the panel with the largest
/// local error (10-point rule vs. its two halves) is bisected until the summed
/// error estimate meets the target. Throws NumericalError when the node cap is
/// reached first.
QuadratureResult integrate_1d(const ScalarFn& f, double lo, double hi,
                              std::span<const double> breaks, const QuadratureOptions& opts = {});

/// Integral of f over {x : s(x) > 0} within [lo, hi]. Sign changes of s are
/// bracketed on a scan grid and bisected to full precision, then used as
/// breakpoints so each integrated piece is smooth.
QuadratureResult integrate_1d_region(const ScalarFn& f, const ScalarFn& s, double lo, double hi,
                                     std::span<const double> breaks,
                                     const QuadratureOptions& opts = {});

/// Maximal sub-intervals of [lo, hi] on which s > 0, located as in
/// integrate_1d_region. `evaluations` (optional) receives the number of calls to s.
std::vector<std::pair<double, double>> region_pieces_1d(const ScalarFn& s, double lo, double hi,
                                                        std::span<const double> breaks,
                                                        std::size_t scan,
                                                        std::size_t* evaluations = nullptr);

/// Iterated integral over a box (the last axis innermost).
QuadratureResult integrate(const PointFn& f, const Box& box, const AxisBreaks& breaks,
                           const QuadratureOptions& opts = {});

/// Iterated integral of |f|, with the sign changes of f along the innermost
/// axis used as breakpoints.
QuadratureResult integrate_abs(const PointFn& f, const Box& box, const AxisBreaks& breaks,
                               const QuadratureOptions& opts = {});

/// Iterated integral of f over {x : s(x) > 0}; the region is resolved along
/// the innermost axis.
QuadratureResult integrate_region(const PointFn& f, const PointFn& s, const Box& box,
                                  const AxisBreaks& breaks, const QuadratureOptions& opts = {});

/// Fixed composite tensor-product rule.
struct QuadratureGrid {
  std::size_t dim = 0;
  std::vector<double> nodes;    // row-major, dim per node
  std::vector<double> weights;  // positive
  double target_error = 0.0;

  std::size_t size() const noexcept { return weights.size(); }
  std::span<const double> node(std::size_t i) const { return {nodes.data() + i * dim, dim}; }
};

/// Composite `order`-point Gauss-Legendre with `panels_per_piece` equal panels
/// between consecutive breakpoints on every axis. Throws NumericalError when
/// the node count would exceed `node_cap`.
QuadratureGrid composite_grid(const Box& box, const AxisBreaks& breaks,
                              std::size_t panels_per_piece, std::size_t order = 10,
                              std::size_t node_cap = std::size_t{1} << 20);

/// Nodes of composite_grid plus every panel endpoint (tensor product), the
/// point set used for sup-norm evaluations. Row-major, dim per point.
std::vector<double> probe_points(const Box& box, const AxisBreaks& breaks,
                                 std::size_t panels_per_piece, std::size_t order = 10);

}  // namespace uvq

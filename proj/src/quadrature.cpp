#include "uvq/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <string>

#include "uvq/error.hpp"

namespace uvq {
namespace {

constexpr std::size_t kOrder = 10;

GaussRule compute_rule(std::size_t order) {
  GaussRule rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  const std::size_t half = (order + 1) / 2;
  for (std::size_t i = 0; i < half; ++i) {
    // Newton iteration on P_order from the Chebyshev-like initial guess.
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) /
                        (static_cast<double>(order) + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (std::size_t k = 2; k <= order; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / static_cast<double>(k);
        p0 = p1;
        p1 = p2;
      }
      dp = static_cast<double>(order) * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::fabs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    rule.nodes[i] = -x;
    rule.nodes[order - 1 - i] = x;
    rule.weights[i] = w;
    rule.weights[order - 1 - i] = w;
  }
  if (order % 2 == 1) rule.nodes[order / 2] = 0.0;
  return rule;
}

double apply_rule(const GaussRule& rule, const ScalarFn& f, double a, double b) {
  const double mid = 0.5 * (a + b);
  const double half = 0.5 * (b - a);
  double sum = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i) sum += rule.weights[i] * f(mid + half * rule.nodes[i]);
  return sum * half;
}

std::vector<double> piece_edges(double lo, double hi, std::span<const double> breaks) {
  std::vector<double> edges{lo};
  std::vector<double> inner;
  for (double b : breaks) {
    if (b > lo && b < hi) inner.push_back(b);
  }
  std::sort(inner.begin(), inner.end());
  for (double b : inner) {
    if (b > edges.back()) edges.push_back(b);
  }
  if (hi > edges.back()) edges.push_back(hi);
  return edges;
}

struct Segment {
  double a, b;
  double left, right;  // half-panel integrals
  double err;
  bool frozen;
};

}  // namespace

const GaussRule& gauss_legendre(std::size_t order) {
  static std::mutex mutex;
  static std::map<std::size_t, GaussRule> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(order);
  if (it == cache.end()) it = cache.emplace(order, compute_rule(order)).first;
  return it->second;
}

QuadratureResult integrate_1d(const ScalarFn& f, double lo, double hi,
                              std::span<const double> breaks, const QuadratureOptions& opts) {
  QuadratureResult out;
  if (!(hi > lo)) return out;
  const GaussRule& rule = gauss_legendre(kOrder);
  const std::size_t panel_cost = 2 * kOrder;

  std::vector<Segment> heap;
  std::vector<Segment> frozen;
  auto cmp = [](const Segment& x, const Segment& y) { return x.err < y.err; };

  auto make = [&](double a, double b, double coarse) {
    const double m = 0.5 * (a + b);
    Segment s{a, b, apply_rule(rule, f, a, m), apply_rule(rule, f, m, b), 0.0, false};
    s.err = std::fabs(coarse - (s.left + s.right));
    out.nodes += panel_cost;
    const double scale = std::max({1.0, std::fabs(a), std::fabs(b)});
    s.frozen = (b - a) <= 64.0 * std::numeric_limits<double>::epsilon() * scale;
    return s;
  };

  const std::vector<double> edges = piece_edges(lo, hi, breaks);
  const std::size_t panels = std::max<std::size_t>(1, opts.panels_per_piece);
  for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
    const double w = (edges[e + 1] - edges[e]) / static_cast<double>(panels);
    for (std::size_t p = 0; p < panels; ++p) {
      const double a = edges[e] + w * static_cast<double>(p);
      const double b = p + 1 == panels ? edges[e + 1] : a + w;
      const double coarse = apply_rule(rule, f, a, b);
      out.nodes += kOrder;
      Segment s = make(a, b, coarse);
      (s.frozen ? frozen : heap).push_back(s);
    }
  }
  std::make_heap(heap.begin(), heap.end(), cmp);

  auto totals = [&](double& err, double& mag) {
    err = 0.0;
    mag = 0.0;
    for (const auto& s : heap) {
      err += s.err;
      mag += std::fabs(s.left) + std::fabs(s.right);
    }
    for (const auto& s : frozen) mag += std::fabs(s.left) + std::fabs(s.right);
  };

  double live_err = 0.0;
  double magnitude = 0.0;
  totals(live_err, magnitude);
  std::size_t since_refresh = 0;
  for (;;) {
    const double floor = 1e-15 * magnitude;
    if (live_err <= std::max(opts.target_error, floor) || heap.empty()) break;
    if (out.nodes + 2 * panel_cost > opts.node_cap) {
      double frozen_err = 0.0;
      for (const auto& s : frozen) frozen_err += s.err;
      throw NumericalError("adaptive quadrature reached the node cap of " +
                               std::to_string(opts.node_cap) + " before the target error",
                           live_err + frozen_err);
    }
    std::pop_heap(heap.begin(), heap.end(), cmp);
    const Segment worst = heap.back();
    heap.pop_back();
    const double m = 0.5 * (worst.a + worst.b);
    const Segment kids[2] = {make(worst.a, m, worst.left), make(m, worst.b, worst.right)};
    live_err -= worst.err;
    for (const Segment& k : kids) {
      if (k.frozen) {
        frozen.push_back(k);
      } else {
        heap.push_back(k);
        std::push_heap(heap.begin(), heap.end(), cmp);
        live_err += k.err;
      }
    }
    if (++since_refresh == 64) {
      totals(live_err, magnitude);
      since_refresh = 0;
    }
  }

  double frozen_err = 0.0;
  for (const auto& s : frozen) frozen_err += s.err;
  if (live_err + frozen_err > std::max(opts.target_error, 1e-15 * magnitude) &&
      frozen_err > std::max(opts.target_error, 1e-15 * magnitude) / 2.0) {
    throw NumericalError("adaptive quadrature cannot resolve a discontinuity below the target error",
                         live_err + frozen_err);
  }
  heap.insert(heap.end(), frozen.begin(), frozen.end());
  std::sort(heap.begin(), heap.end(), [](const Segment& x, const Segment& y) { return x.a < y.a; });
  for (const auto& s : heap) {
    out.value += s.left + s.right;
    out.error_estimate += s.err;
  }
  return out;
}

std::vector<std::pair<double, double>> region_pieces_1d(const ScalarFn& s, double lo, double hi,
                                                        std::span<const double> breaks,
                                                        std::size_t scan,
                                                        std::size_t* evaluations) {
  std::vector<std::pair<double, double>> pieces;
  std::size_t evals = 0;
  if (hi > lo) {
    const std::vector<double> edges = piece_edges(lo, hi, breaks);
    scan = std::max<std::size_t>(2, scan);
    std::vector<double> xs(scan + 2);
    std::vector<char> pos(scan + 2);
    for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
      const double a = edges[e];
      const double b = edges[e + 1];
      // Midpoint samples plus both edges, so regions shrinking onto an edge are bracketed.
      const double h = (b - a) / static_cast<double>(scan);
      xs.front() = a;
      xs.back() = b;
      for (std::size_t i = 1; i + 1 < xs.size(); ++i) xs[i] = a + (static_cast<double>(i) - 0.5) * h;
      for (std::size_t i = 0; i < xs.size(); ++i) pos[i] = s(xs[i]) > 0.0;
      evals += xs.size();

      double start = a;
      for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
        if (pos[i] == pos[i + 1]) continue;
        double l = xs[i];
        double r = xs[i + 1];
        for (int it = 0; it < 200; ++it) {
          const double m = 0.5 * (l + r);
          if (m <= l || m >= r) break;
          ((s(m) > 0.0) == static_cast<bool>(pos[i]) ? l : r) = m;
          ++evals;
        }
        const double root = 0.5 * (l + r);
        if (pos[i]) pieces.emplace_back(start, root);
        start = root;
      }
      if (pos[xs.size() - 1]) pieces.emplace_back(start, b);
    }
  }
  // Merge pieces that touch across a breakpoint.
  std::vector<std::pair<double, double>> merged;
  for (const auto& p : pieces) {
    if (p.second <= p.first) continue;
    if (!merged.empty() && merged.back().second == p.first) {
      merged.back().second = p.second;
    } else {
      merged.push_back(p);
    }
  }
  if (evaluations) *evaluations = evals;
  return merged;
}

QuadratureResult integrate_1d_region(const ScalarFn& f, const ScalarFn& s, double lo, double hi,
                                     std::span<const double> breaks,
                                     const QuadratureOptions& opts) {
  QuadratureResult out;
  if (!(hi > lo)) return out;
  std::size_t evals = 0;
  const auto pieces = region_pieces_1d(s, lo, hi, breaks, opts.root_scan, &evals);
  out.nodes += evals;
  QuadratureOptions inner = opts;
  for (const auto& [a, b] : pieces) {
    inner.target_error = opts.target_error * (b - a) / (hi - lo);
    // Original breakpoints still mark kinks of f inside merged pieces.
    const QuadratureResult r = integrate_1d(f, a, b, breaks, inner);
    out.value += r.value;
    out.error_estimate += r.error_estimate;
    out.nodes += r.nodes;
  }
  return out;
}

namespace {

// s == nullptr with absolute == true integrates |f| split at the sign changes of f.
QuadratureResult integrate_axis(const PointFn& f, const PointFn* s, bool absolute, const Box& box,
                                const AxisBreaks& breaks, const QuadratureOptions& opts,
                                std::size_t axis, std::vector<double>& point) {
  const std::size_t d = box.dim();
  const std::span<const double> axis_breaks =
      axis < breaks.size() ? std::span<const double>(breaks[axis]) : std::span<const double>();
  if (axis + 1 == d) {
    const ScalarFn g = [&](double x) {
      point[axis] = x;
      return f(point);
    };
    if (absolute) {
      std::size_t evals = 0;
      const auto pieces = region_pieces_1d(g, box.lo[axis], box.hi[axis], axis_breaks, opts.root_scan, &evals);
      std::vector<double> cuts(axis_breaks.begin(), axis_breaks.end());
      for (const auto& [a, b] : pieces) {
        cuts.push_back(a);
        cuts.push_back(b);
      }
      const ScalarFn ag = [&](double x) { return std::fabs(g(x)); };
      QuadratureResult r = integrate_1d(ag, box.lo[axis], box.hi[axis], cuts, opts);
      r.nodes += evals;
      return r;
    }
    if (s == nullptr) return integrate_1d(g, box.lo[axis], box.hi[axis], axis_breaks, opts);
    const ScalarFn sg = [&](double x) {
      point[axis] = x;
      return (*s)(point);
    };
    return integrate_1d_region(g, sg, box.lo[axis], box.hi[axis], axis_breaks, opts);
  }

  const double width = box.hi[axis] - box.lo[axis];
  QuadratureOptions inner = opts;
  inner.target_error = opts.target_error / (2.0 * std::max(width, 1e-300));
  double worst_inner = 0.0;
  std::size_t inner_nodes = 0;
  const ScalarFn outer = [&](double x) {
    point[axis] = x;
    const QuadratureResult r = integrate_axis(f, s, absolute, box, breaks, inner, axis + 1, point);
    worst_inner = std::max(worst_inner, r.error_estimate);
    inner_nodes += r.nodes;
    return r.value;
  };
  QuadratureOptions outer_opts = opts;
  outer_opts.target_error = opts.target_error / 2.0;
  QuadratureResult r = integrate_1d(outer, box.lo[axis], box.hi[axis], axis_breaks, outer_opts);
  r.error_estimate += width * worst_inner;
  r.nodes += inner_nodes;
  return r;
}

}  // namespace

QuadratureResult integrate(const PointFn& f, const Box& box, const AxisBreaks& breaks,
                           const QuadratureOptions& opts) {
  if (box.dim() == 0) throw PreconditionError("integration box has no axes");
  std::vector<double> point(box.dim());
  return integrate_axis(f, nullptr, false, box, breaks, opts, 0, point);
}

QuadratureResult integrate_abs(const PointFn& f, const Box& box, const AxisBreaks& breaks,
                               const QuadratureOptions& opts) {
  if (box.dim() == 0) throw PreconditionError("integration box has no axes");
  std::vector<double> point(box.dim());
  return integrate_axis(f, nullptr, true, box, breaks, opts, 0, point);
}

QuadratureResult integrate_region(const PointFn& f, const PointFn& s, const Box& box,
                                  const AxisBreaks& breaks, const QuadratureOptions& opts) {
  if (box.dim() == 0) throw PreconditionError("integration box has no axes");
  std::vector<double> point(box.dim());
  return integrate_axis(f, &s, false, box, breaks, opts, 0, point);
}

namespace {

struct AxisRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> panel_edges;
};

AxisRule axis_rule(double lo, double hi, std::span<const double> breaks, std::size_t panels,
                   std::size_t order) {
  const GaussRule& rule = gauss_legendre(order);
  AxisRule out;
  const std::vector<double> edges = piece_edges(lo, hi, breaks);
  panels = std::max<std::size_t>(1, panels);
  out.panel_edges.push_back(lo);
  for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
    const double w = (edges[e + 1] - edges[e]) / static_cast<double>(panels);
    for (std::size_t p = 0; p < panels; ++p) {
      const double a = edges[e] + w * static_cast<double>(p);
      const double b = p + 1 == panels ? edges[e + 1] : a + w;
      const double mid = 0.5 * (a + b);
      const double half = 0.5 * (b - a);
      for (std::size_t i = 0; i < order; ++i) {
        out.nodes.push_back(mid + half * rule.nodes[i]);
        out.weights.push_back(half * rule.weights[i]);
      }
      out.panel_edges.push_back(b);
    }
  }
  return out;
}

void tensor(const std::vector<std::vector<double>>& axes, std::vector<double>& points,
            std::vector<double>* weights, const std::vector<std::vector<double>>* axis_weights) {
  const std::size_t d = axes.size();
  std::vector<std::size_t> idx(d, 0);
  for (;;) {
    double w = 1.0;
    for (std::size_t a = 0; a < d; ++a) {
      points.push_back(axes[a][idx[a]]);
      if (axis_weights) w *= (*axis_weights)[a][idx[a]];
    }
    if (weights) weights->push_back(w);
    std::size_t a = d;
    while (a > 0) {
      --a;
      if (++idx[a] < axes[a].size()) break;
      idx[a] = 0;
      if (a == 0) return;
    }
    if (d == 0) return;
  }
}

}  // namespace

QuadratureGrid composite_grid(const Box& box, const AxisBreaks& breaks,
                              std::size_t panels_per_piece, std::size_t order,
                              std::size_t node_cap) {
  QuadratureGrid grid;
  grid.dim = box.dim();
  std::vector<std::vector<double>> nodes, weights;
  std::size_t total = 1;
  for (std::size_t a = 0; a < box.dim(); ++a) {
    const std::span<const double> br =
        a < breaks.size() ? std::span<const double>(breaks[a]) : std::span<const double>();
    AxisRule r = axis_rule(box.lo[a], box.hi[a], br, panels_per_piece, order);
    total *= r.nodes.size();
    nodes.push_back(std::move(r.nodes));
    weights.push_back(std::move(r.weights));
  }
  if (total > node_cap) {
    throw NumericalError("composite grid needs " + std::to_string(total) +
                             " nodes, above the cap of " + std::to_string(node_cap),
                         std::numeric_limits<double>::infinity());
  }
  grid.nodes.reserve(total * grid.dim);
  grid.weights.reserve(total);
  tensor(nodes, grid.nodes, &grid.weights, &weights);
  return grid;
}

std::vector<double> probe_points(const Box& box, const AxisBreaks& breaks,
                                 std::size_t panels_per_piece, std::size_t order) {
  std::vector<std::vector<double>> axes;
  for (std::size_t a = 0; a < box.dim(); ++a) {
    const std::span<const double> br =
        a < breaks.size() ? std::span<const double>(breaks[a]) : std::span<const double>();
    AxisRule r = axis_rule(box.lo[a], box.hi[a], br, panels_per_piece, order);
    std::vector<double> pts = r.nodes;
    pts.insert(pts.end(), r.panel_edges.begin(), r.panel_edges.end());
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    axes.push_back(std::move(pts));
  }
  std::vector<double> points;
  tensor(axes, points, nullptr, nullptr);
  return points;
}

}  // namespace uvq

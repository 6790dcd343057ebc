#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace uvq {

/// Closed axis-aligned box [lo_0, hi_0] x ... x [lo_{d-1}, hi_{d-1}].
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  std::size_t dim() const noexcept { return lo.size(); }

  bool contains(std::span<const double> x, double slack = 0.0) const noexcept {
    if (x.size() != lo.size()) return false;
    for (std::size_t i = 0; i < lo.size(); ++i) {
      if (!(x[i] >= lo[i] - slack && x[i] <= hi[i] + slack)) return false;
    }
    return true;
  }

  double volume() const noexcept {
    double v = 1.0;
    for (std::size_t i = 0; i < lo.size(); ++i) v *= hi[i] - lo[i];
    return v;
  }

  /// Squared Euclidean diameter.
  double diameter_sq() const noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < lo.size(); ++i) s += (hi[i] - lo[i]) * (hi[i] - lo[i]);
    return s;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace uvq

#include <doctest.h>

#include <cmath>
#include <vector>

#include "families.hpp"
#include "uvq/density_metrics.hpp"
#include "uvq/error.hpp"
#include "uvq/rng.hpp"

using namespace uvq;
using uvq::testing::exponential_linear;
using uvq::testing::exponential_quadratic;
using uvq::testing::gaussian_pair;
using uvq::testing::planar_mixture;
using uvq::testing::uniform_halves;

namespace {

// Midpoint-rule d_V on [0, 1]; independent of the adaptive integrator.
double riemann_dv(const SourceFamily& f, const ParameterVector& a, const ParameterVector& b, int steps) {
  const auto p = f.bind(a);
  const auto q = f.bind(b);
  double s = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double x = (i + 0.5) / steps;
    const std::span<const double> pt(&x, 1);
    s += std::fabs(p(pt) - q(pt));
  }
  return 0.5 * s / steps;
}

std::vector<ParameterVector> simplex_grid(int m) {
  std::vector<ParameterVector> out;
  for (int i = 0; i <= m; ++i) out.push_back({double(i) / m, double(m - i) / m});
  return out;
}

}  // namespace

TEST_CASE("variational distance examples") {
  const auto mix = uniform_halves();
  CHECK(variational_distance(*mix, {0.5, 0.5}, {0.5, 0.5}).value == 0.0);
  CHECK(variational_distance(*mix, {1.0, 0.0}, {0.0, 1.0}).value == doctest::Approx(1.0).epsilon(1e-12));
  const auto r = variational_distance(*mix, {0.75, 0.25}, {0.25, 0.75});
  CHECK(r.value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.error_estimate >= 0.0);
  CHECK(r.method == DistanceReport::Method::L1Integral);
}

TEST_CASE("scheffe distance examples") {
  const auto mix = uniform_halves();
  const auto r = scheffe_distance(*mix, {0.75, 0.25}, {0.25, 0.75});
  CHECK(r.value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.method == DistanceReport::Method::ScheffeSet);
  CHECK_THROWS_AS(scheffe_distance(*mix, {0.3, 0.7}, {0.3, 0.7}), PreconditionError);
}

TEST_CASE("scheffe identity and Riemann oracle on random pairs") {
  RandomStream rng({17, purpose_tag("pairs"), 0, 0});
  const auto gp = gaussian_pair();
  const auto ex = exponential_linear();
  for (int t = 0; t < 20; ++t) {
    const double a = rng.uniform(), b = rng.uniform();
    const ParameterVector th{a, 1.0 - a}, et{b, 1.0 - b};
    const auto l1 = variational_distance(*gp, th, et);
    const auto sc = scheffe_distance(*gp, th, et);
    CHECK(std::fabs(l1.value - sc.value) <= 1e-6);
    CHECK(std::fabs(l1.value - riemann_dv(*gp, th, et, 200000)) < 1e-7);

    const ParameterVector u{4.0 * rng.uniform() - 2.0}, v{4.0 * rng.uniform() - 2.0};
    const auto el1 = variational_distance(*ex, u, v);
    const auto esc = scheffe_distance(*ex, u, v);
    CHECK(std::fabs(el1.value - esc.value) <= 1e-6);
    CHECK(std::fabs(el1.value - riemann_dv(*ex, u, v, 200000)) < 1e-7);
  }
  const auto pm = planar_mixture();
  const auto l1 = variational_distance(*pm, {0.2, 0.8}, {0.7, 0.3});
  const auto sc = scheffe_distance(*pm, {0.2, 0.8}, {0.7, 0.3});
  CHECK(std::fabs(l1.value - sc.value) <= 1e-6);
}

TEST_CASE("d_V is a bounded symmetric metric on a parameter grid") {
  const auto gp = gaussian_pair();
  const auto grid = simplex_grid(6);
  const std::size_t m = grid.size();
  std::vector<double> dv(m * m), err(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const auto r = variational_distance(*gp, grid[i], grid[j]);
      dv[i * m + j] = r.value;
      err[i * m + j] = r.error_estimate;
      CHECK(r.value >= 0.0);
      CHECK(r.value <= 1.0);
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      CHECK(std::fabs(dv[i * m + j] - dv[j * m + i]) <= err[i * m + j] + err[j * m + i] + 1e-12);
      for (std::size_t l = 0; l < m; ++l) {
        const double tol = 3.0 * (err[i * m + j] + err[i * m + l] + err[l * m + j]) + 1e-12;
        CHECK(dv[i * m + j] <= dv[i * m + l] + dv[l * m + j] + tol);
      }
    }
  }
}

TEST_CASE("mixture Lipschitz property on a simplex grid") {
  for (const auto& fam : {uniform_halves(), gaussian_pair()}) {
    const auto grid = simplex_grid(10);
    for (const auto& a : grid) {
      for (const auto& b : grid) {
        CHECK(variational_distance(*fam, a, b).value <= mixture_lipschitz_bound(a, b) + 1e-8);
      }
    }
  }
  // Disjoint components attain the bound.
  const auto mix = uniform_halves();
  CHECK(variational_distance(*mix, {0.75, 0.25}, {0.25, 0.75}).value ==
        doctest::Approx(mixture_lipschitz_bound({0.75, 0.25}, {0.25, 0.75})).epsilon(1e-12));
}

TEST_CASE("relative entropy examples and cross-check") {
  const auto ex = exponential_linear();
  CHECK(relative_entropy(*ex, {0.4}, {0.4}).value == 0.0);
  const double e = std::exp(1.0);
  const double exact = 1.0 / (e - 1.0) - std::log(e - 1.0);
  const auto direct = relative_entropy(*ex, {1.0}, {0.0});
  const auto ident = relative_entropy_partition(*ex, {1.0}, {0.0});
  CHECK(direct.value == doctest::Approx(exact).epsilon(1e-10));
  CHECK(std::fabs(direct.value - ident.value) < 1e-7);
  CHECK(direct.value == doctest::Approx(0.040652).epsilon(1e-5));

  RandomStream rng({23, purpose_tag("kl"), 0, 0});
  const auto q = exponential_quadratic();
  for (int t = 0; t < 10; ++t) {
    const ParameterVector a{2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0};
    const ParameterVector b{2.0 * rng.uniform() - 1.0, 2.0 * rng.uniform() - 1.0};
    const auto d1 = relative_entropy(*q, a, b);
    const auto d2 = relative_entropy_partition(*q, a, b);
    CHECK(std::fabs(d1.value - d2.value) < 1e-7);
    CHECK(d1.value > 0.0);
  }
  CHECK_THROWS_AS(relative_entropy(*uniform_halves(), {1.0, 0.0}, {0.0, 1.0}), UnsupportedFamilyError);
}

TEST_CASE("Pinsker holds on random pairs") {
  const auto ex = exponential_linear();
  const auto same = pinsker_check(*ex, {0.3}, {0.3});
  CHECK(same.holds);
  CHECK(same.slack == 0.0);

  const auto one = pinsker_check(*ex, {1.0}, {0.0});
  CHECK(one.holds);
  CHECK(std::sqrt(one.divergence / 2.0) == doctest::Approx(0.14257).epsilon(1e-4));
  CHECK(one.divergence >= 2.0 * one.variational * one.variational);

  RandomStream rng({29, purpose_tag("pinsker"), 0, 0});
  int violations = 0;
  for (int t = 0; t < 100; ++t) {
    const ParameterVector a{4.0 * rng.uniform() - 2.0}, b{4.0 * rng.uniform() - 2.0};
    if (!pinsker_check(*ex, a, b).holds) ++violations;
  }
  CHECK(violations == 0);
}

TEST_CASE("growth bounds dominate divergence and d_V") {
  const auto ex = exponential_linear();
  const double a_k = sup_norm_ratio(*ex).value;
  CHECK(divergence_growth_bound({0.5}, {0.5}, a_k, 1.0) == 0.0);
  const double l1 = log_ratio_sup(*ex, ParameterVector{1.0});
  const double bound = divergence_growth_bound({1.0}, {0.0}, a_k, l1);
  CHECK(bound >= relative_entropy(*ex, {1.0}, {0.0}).value);

  std::vector<ParameterVector> grid;
  for (int i = 0; i <= 8; ++i) grid.push_back({-2.0 + 0.5 * i});
  const double l_all = log_ratio_sup(*ex, grid);
  for (const auto& a : grid) {
    const double la = log_ratio_sup(*ex, a);
    for (const auto& b : grid) {
      CHECK(relative_entropy(*ex, a, b).value <= divergence_growth_bound(a, b, a_k, la) + 1e-9);
      CHECK(variational_distance(*ex, a, b).value <= variational_growth_bound(a, b, a_k, l_all) + 1e-9);
    }
  }
}

TEST_CASE("sup-norm ratio examples") {
  const ProductDensity uniform{{AxisDensity::uniform(0.0, 1.0)}};
  const Box box{{0.0}, {1.0}};
  const PointFn one = [](std::span<const double>) { return 1.0; };
  const PointFn lin = [](std::span<const double> x) { return x[0]; };
  const PointFn quad = [](std::span<const double> x) { return x[0] * x[0]; };

  const std::vector<PointFn> b0{one};
  CHECK(sup_norm_ratio(uniform, box, {{}}, b0).value == doctest::Approx(1.0).epsilon(1e-12));
  const std::vector<PointFn> b1{one, lin};
  CHECK(sup_norm_ratio(uniform, box, {{}}, b1).value == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(sup_norm_ratio(*exponential_linear()).value == doctest::Approx(2.0).epsilon(1e-10));

  // Random search over unit coefficient vectors of {1, x, x^2}.
  const std::vector<PointFn> b2{one, lin, quad};
  const auto r = sup_norm_ratio(uniform, box, {{}}, b2);
  RandomStream rng({31, purpose_tag("supnorm"), 0, 0});
  // L2 norm of c0 + c1 x + c2 x^2 under U[0,1] via the Hilbert matrix.
  const double hilbert[3][3] = {{1.0, 0.5, 1.0 / 3}, {0.5, 1.0 / 3, 0.25}, {1.0 / 3, 0.25, 0.2}};
  double best = 0.0;
  for (int t = 0; t < 1000000; ++t) {
    double c[3];
    double norm = 0.0;
    for (double& v : c) {
      v = 2.0 * rng.uniform() - 1.0;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : c) v /= norm;
    double l2 = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) l2 += c[i] * c[j] * hilbert[i][j];
    // A quadratic attains its sup on [0,1] at an endpoint or its vertex.
    double sup = std::max(std::fabs(c[0]), std::fabs(c[0] + c[1] + c[2]));
    if (c[2] != 0.0) {
      const double v = -c[1] / (2.0 * c[2]);
      if (v > 0.0 && v < 1.0) sup = std::max(sup, std::fabs(c[0] + c[1] * v + c[2] * v * v));
    }
    best = std::max(best, sup / std::sqrt(l2));
  }
  CHECK(std::fabs(r.value - best) <= 0.01 * r.value);
  CHECK(r.value >= best * (1.0 - 1e-9));

  const std::vector<PointFn> dependent{one, lin, lin};
  CHECK_THROWS_AS(sup_norm_ratio(uniform, box, {{}}, dependent), LinearDependenceError);
}

TEST_CASE("measured Lipschitz ratio stays below the mixture constant") {
  const auto gp = gaussian_pair();
  std::vector<std::pair<ParameterVector, ParameterVector>> pairs;
  const auto grid = simplex_grid(20);
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) pairs.emplace_back(grid[i], grid[i + 1]);
  pairs.emplace_back(grid[3], grid[3]);
  const double beta = lipschitz_ratio_max(*gp, pairs);
  CHECK(beta > 0.0);
  CHECK(beta <= std::sqrt(2.0) / 2.0 + 1e-9);
}

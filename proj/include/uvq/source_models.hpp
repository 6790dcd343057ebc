#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "uvq/box.hpp"
#include "uvq/hash.hpp"
#include "uvq/kv_document.hpp"
#include "uvq/quadrature.hpp"
#include "uvq/rng.hpp"

namespace uvq {

/// A point in the parameter space of a family (mixture weights or natural
/// parameters).
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(std::vector<double> coords) : coords_(std::move(coords)) {}
  ParameterVector(std::initializer_list<double> coords) : coords_(coords) {}

  std::size_t size() const noexcept { return coords_.size(); }
  double operator[](std::size_t i) const { return coords_[i]; }
  std::span<const double> coords() const noexcept { return coords_; }
  const std::vector<double>& vector() const noexcept { return coords_; }

  friend bool operator==(const ParameterVector&, const ParameterVector&) = default;

 private:
  std::vector<double> coords_;
};

double distance(const ParameterVector& a, const ParameterVector& b);

/// One-dimensional density with closed-form CDF and quantile.
class AxisDensity {
 public:
  enum class Kind { Uniform, Triangular, TruncatedGaussian };

  static AxisDensity uniform(double lo, double hi);
  static AxisDensity triangular(double lo, double mode, double hi);
  static AxisDensity truncated_gaussian(double mean, double sigma, double lo, double hi);

  Kind kind() const noexcept { return kind_; }
  double lo() const noexcept { return lo_; }
  double hi() const noexcept { return hi_; }
  double pdf(double x) const noexcept;
  double cdf(double x) const noexcept;
  double quantile(double u) const;
  std::vector<double> breakpoints() const;
  std::string describe() const;  // canonical text, round-trips through the parser

 private:
  Kind kind_ = Kind::Uniform;
  double lo_ = 0.0, hi_ = 1.0;
  double mode_ = 0.0;                 // triangular
  double mean_ = 0.0, sigma_ = 1.0;   // truncated Gaussian
  double cdf_lo_ = 0.0, mass_ = 1.0;  // truncated Gaussian normalisation
};

/// Product of per-axis densities on R^d.
struct ProductDensity {
  std::vector<AxisDensity> axes;

  double pdf(std::span<const double> x) const noexcept;
  void sample(RandomStream& rng, std::span<double> out) const;
  Box support() const;
  std::string describe() const;
};

/// Monomial statistic h(x) = prod_j x_j^{e_j}.
struct Monomial {
  std::vector<int> exponents;

  double operator()(std::span<const double> x) const noexcept;
  std::string describe() const;
};

/// Parameter space: the probability simplex in R^k or a box.
class ThetaSpace {
 public:
  enum class Kind { Simplex, Box };

  static ThetaSpace simplex(std::size_t k);
  static ThetaSpace box(Box b);

  Kind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return dim_; }
  const Box& bounds() const noexcept { return bounds_; }  // [0,1]^k for the simplex

  bool contains(std::span<const double> theta, double tol = 1e-12) const noexcept;
  /// Euclidean projection onto the space.
  ParameterVector project(std::span<const double> theta) const;
  ParameterVector centroid() const;

 private:
  Kind kind_ = Kind::Simplex;
  std::size_t dim_ = 0;
  Box bounds_;
};

/// n draws from a family, one row per letter.
struct SampleBlock {
  std::vector<double> values;  // row-major, n x d
  std::size_t n = 0;
  std::size_t d = 0;
  StreamKey stream{};

  std::span<const double> letter(std::size_t i) const { return {values.data() + i * d, d}; }
};

class SourceFamily;

/// Density p_theta with the log-partition resolved once; cheap to copy.
class BoundDensity {
 public:
  BoundDensity(const SourceFamily& family, ParameterVector theta);

  /// p_theta(x); 0 outside the support.
  double operator()(std::span<const double> x) const;
  const ParameterVector& theta() const noexcept { return theta_; }
  double log_partition() const noexcept { return g_; }

 private:
  const SourceFamily* family_;
  ParameterVector theta_;
  double g_ = 0.0;
};

/// A parametric i.i.d. source family {P_theta}: a finite mixture of product
/// densities over the simplex, or an exponential family
/// p_theta(x) = p(x) exp(theta . h(x) - g(theta)) over a compact box.
/// Immutable apart from the log-partition memo table, which is safe for
/// concurrent readers and writers.
class SourceFamily {
 public:
  enum class Kind { Mixture, Exponential };

  static std::shared_ptr<const SourceFamily> mixture(Box support,
                                                     std::vector<ProductDensity> components);
  static std::shared_ptr<const SourceFamily> exponential(Box support, ProductDensity carrier,
                                                         std::vector<Monomial> statistics,
                                                         Box theta_box);

  /// Parses the family document format (see docs/formats.md).
  static std::shared_ptr<const SourceFamily> from_document(const KvDocument& doc);
  static std::shared_ptr<const SourceFamily> load(const std::filesystem::path& path);

  Kind kind() const noexcept { return kind_; }
  std::size_t data_dim() const noexcept { return support_.dim(); }
  std::size_t param_dim() const noexcept { return theta_.dim(); }
  const Box& support() const noexcept { return support_; }
  const ThetaSpace& theta_space() const noexcept { return theta_; }
  const std::vector<ProductDensity>& components() const noexcept { return components_; }
  const ProductDensity& carrier() const noexcept { return carrier_; }
  const std::vector<Monomial>& statistics() const noexcept { return statistics_; }

  /// Throws ParameterError unless theta is a valid parameter of this family.
  void validate(const ParameterVector& theta) const;

  /// g(theta) by adaptive quadrature, memoised per theta. Exponential only.
  double log_partition(const ParameterVector& theta) const;

  /// p_theta(x). Throws DomainError outside the support.
  double density(const ParameterVector& theta, std::span<const double> x) const;

  BoundDensity bind(const ParameterVector& theta) const { return BoundDensity(*this, theta); }

  /// Densities of every theta at every letter: result[t * n + i].
  std::vector<double> density_table(std::span<const ParameterVector> thetas,
                                    const SampleBlock& block) const;

  /// Statistic vector h(x) (exponential families).
  void statistic_values(std::span<const double> x, std::span<double> out) const;

  /// Per-axis breakpoints of all component/carrier densities.
  const AxisBreaks& breakpoints() const noexcept { return breaks_; }

  std::string canonical_text() const;
  const Digest& content_hash() const noexcept { return hash_; }

  const QuadratureOptions& quadrature() const noexcept { return quad_; }

 private:
  SourceFamily() = default;
  void finish();

  Kind kind_ = Kind::Mixture;
  Box support_;
  ThetaSpace theta_;
  std::vector<ProductDensity> components_;
  ProductDensity carrier_;
  std::vector<Monomial> statistics_;
  AxisBreaks breaks_;
  Digest hash_{};
  QuadratureOptions quad_{};

  mutable std::shared_mutex cache_mutex_;
  mutable std::map<std::vector<double>, double> partition_cache_;

  friend class BoundDensity;
};

/// n i.i.d. draws from P_theta. Mixtures draw a component index then invert
/// per-axis CDFs; exponential families use rejection against the carrier.
/// Identical (family, theta, n, stream) always yields identical output.
SampleBlock sample_block(const SourceFamily& family, const ParameterVector& theta, std::size_t n,
                         const StreamKey& stream);

/// sup_x exp(theta . h(x) - g(theta)) over the support: the rejection envelope.
double rejection_envelope(const SourceFamily& family, const ParameterVector& theta);

/// (sqrt(k)/2) * ||theta - eta||, the Lipschitz bound on d_V for mixtures.
double mixture_lipschitz_bound(const ParameterVector& theta, const ParameterVector& eta);

}  // namespace uvq

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "uvq/hash.hpp"
#include "uvq/rng.hpp"
#include "uvq/source_models.hpp"

namespace uvq {

/// Finite set of candidate parameters searched by the minimum-distance
/// estimator. `mesh` bounds the distance from any point of the parameter
/// space to the net.
class ParameterNet {
 public:
  /// Compositions (i_1, ..., i_k) / m of m in lexicographic order. The mesh is
  /// the covering radius of the scaled A_{k-1} lattice.
  static ParameterNet simplex_lattice(std::size_t k, std::size_t divisions);

  /// Tensor lattice with `divisions` intervals per axis (first axis slowest).
  static ParameterNet box_lattice(const Box& box, std::size_t divisions);

  /// Explicit points; the mesh is measured against a fine lattice of the space.
  static ParameterNet explicit_points(const ThetaSpace& space, std::vector<ParameterVector> points);

  std::size_t size() const noexcept { return points_.size(); }
  const ParameterVector& operator[](std::size_t i) const { return points_[i]; }
  const std::vector<ParameterVector>& points() const noexcept { return points_; }
  double mesh() const noexcept { return mesh_; }
  const Digest& content_hash() const noexcept { return hash_; }

  /// Index of a point exactly equal to theta (within 1e-12 per coordinate).
  std::optional<std::size_t> index_of(const ParameterVector& theta) const;

  /// Throws PreconditionError unless every point lies in the family's space.
  void check_against(const SourceFamily& family) const;

 private:
  ParameterNet(std::vector<ParameterVector> points, double mesh);

  std::vector<ParameterVector> points_;
  double mesh_ = 0.0;
  Digest hash_{};
};

/// P_{theta_j}(A_{ab}) for every net point j and every ordered pair a != b,
/// where A_{ab} = {x : p_a(x) > p_b(x)}.
class YatracosTable {
 public:
  /// Computes the table, reading and writing `cache_dir` when given.
  static std::shared_ptr<const YatracosTable> build(const SourceFamily& family, const ParameterNet& net,
                                                    const std::optional<std::filesystem::path>& cache_dir = {});

  std::size_t net_size() const noexcept { return m_; }
  std::size_t pair_count() const noexcept { return m_ < 2 ? 0 : m_ * (m_ - 1); }

  std::size_t pair_index(std::size_t a, std::size_t b) const;
  std::pair<std::size_t, std::size_t> pair_at(std::size_t index) const;

  /// Probabilities of every pair set under net point j, in pair order.
  std::span<const double> row(std::size_t j) const;
  double probability(std::size_t j, std::size_t a, std::size_t b) const;

  double max_error_estimate() const noexcept { return max_error_; }
  const Digest& family_hash() const noexcept { return family_hash_; }
  const Digest& net_hash() const noexcept { return net_hash_; }
  bool loaded_from_cache() const noexcept { return from_cache_; }

  std::vector<std::uint8_t> serialize() const;
  /// Throws FramingError on malformed input and CompatibilityError when the
  /// hashes or quadrature target differ from the expected ones.
  static YatracosTable deserialize(std::span<const std::uint8_t> bytes, const Digest& family_hash,
                                   const Digest& net_hash, double target_error);

  static std::filesystem::path cache_file(const std::filesystem::path& dir, const Digest& family_hash,
                                          const Digest& net_hash);

 private:
  std::size_t m_ = 0;
  std::vector<double> values_;  // [j * pair_count + pair]
  double max_error_ = 0.0;
  double target_error_ = 0.0;
  Digest family_hash_{};
  Digest net_hash_{};
  bool from_cache_ = false;
};

/// Fraction of letters with p_a(z_i) > p_b(z_i).
double empirical_measure(const SourceFamily& family, const SampleBlock& z, const ParameterVector& a,
                         const ParameterVector& b);

/// Empirical measure of every pair set of the table, in pair order.
std::vector<double> empirical_pair_measures(const SourceFamily& family, const ParameterNet& net,
                                            const YatracosTable& table, const SampleBlock& z);

struct DeviationResult {
  std::vector<double> deltas;  // Delta_theta(z) per net point
  std::size_t argmin = 0;
  double slack = 0.0;
};

/// Delta_theta(z) for every net point and the estimate: the lowest index j with
/// Delta_j <= min Delta (slack 0), or Delta_j < min Delta + slack (slack > 0).
DeviationResult deviations(const SourceFamily& family, const ParameterNet& net, const YatracosTable& table,
                           const SampleBlock& z, double slack = 0.0);

/// Delta for one net point.
double deviation(const SourceFamily& family, const ParameterNet& net, const YatracosTable& table,
                 const SampleBlock& z, std::size_t theta_index);

/// The minimum-distance estimate theta~ (ties to the lowest net index).
ParameterVector min_distance_estimate(const SourceFamily& family, const ParameterNet& net,
                                      const YatracosTable& table, const SampleBlock& z, double slack = 0.0);

/// 8 n^V exp(-n eps^2 / 32). DomainError unless n >= 1, V >= 2, eps > 0.
double vc_tail_bound(std::uint64_t n, unsigned v, double eps);

/// 8 n^V exp(-n (eps - gamma / sqrt(n))^2 / 128). The exponent is taken as 0
/// when eps <= gamma / sqrt(n), where the bound is vacuous.
double vc_identification_bound(std::uint64_t n, unsigned v, double eps, double gamma);

struct ParameterPair {
  ParameterVector a;
  ParameterVector b;
};

/// `count` independent pairs drawn uniformly from the parameter space.
std::vector<ParameterPair> random_parameter_pairs(const SourceFamily& family, std::size_t count,
                                                  const StreamKey& stream);

/// Distinct label patterns (1{x_i in A_ab})_i realised on `points` by the sets
/// of the given pairs. At most 64 points.
std::size_t shatter_count(const SourceFamily& family, std::span<const ParameterPair> sets,
                          std::span<const double> points);

/// shatter_count over all ordered net pairs plus `trials` random pairs.
std::size_t shatter_probe(const SourceFamily& family, const ParameterNet& net, std::span<const double> points,
                          std::size_t trials, const StreamKey& stream);

}  // namespace uvq

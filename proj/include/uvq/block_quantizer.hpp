#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uvq/hash.hpp"
#include "uvq/rng.hpp"
#include "uvq/simd/kernels.hpp"
#include "uvq/source_models.hpp"

namespace uvq {

/// Per-letter distortion rho(x, y) = min(||x - y||^2, K).
struct DistortionSpec {
  enum class Kind : std::uint8_t { ClampedSquaredError = 0 };

  Kind kind = Kind::ClampedSquaredError;
  double bound = 1.0;  // K

  /// K = squared diameter of the support box.
  static DistortionSpec for_support(const Box& support);

  /// Throws PreconditionError unless K is positive and finite.
  void validate() const;

  double letter(std::span<const double> x, std::span<const double> y) const;
  /// Sum of letter distortions over a block of letters of dimension d.
  double block(std::span<const double> x, std::span<const double> y, std::size_t d) const;

  friend bool operator==(const DistortionSpec&, const DistortionSpec&) = default;
};

/// Rate in bits per letter as a reduced fraction.
struct Rate {
  std::uint32_t num = 1;
  std::uint32_t den = 1;

  static Rate of(std::uint32_t num, std::uint32_t den = 1);
  /// Parses "3", "1/2" or "0.5" (decimals with at most 6 places).
  static Rate parse(const std::string& text);

  double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
  bool integral_bits(std::size_t n) const noexcept;
  /// n * R; PreconditionError unless it is an integer.
  std::uint64_t bits(std::size_t n) const;
  std::string text() const;

  friend bool operator==(const Rate&, const Rate&) = default;
};

struct DesignSettings {
  std::size_t training_blocks = 0;  // 0 selects max(4096, 64 * codevectors)
  std::size_t max_iterations = 200;
  double tolerance = 1e-6;  // stop when the relative improvement falls below this
  std::size_t cap = 4096;   // largest codevector count

  std::size_t training_size(std::size_t codevectors) const noexcept;
};

/// Everything that determines a designed codebook.
struct CodebookProvenance {
  Digest family_hash{};
  ParameterVector theta;
  std::size_t n = 0;
  Rate rate;
  DistortionSpec spec;
  std::uint64_t master_seed = 0;
  std::size_t training_blocks = 0;
  std::size_t max_iterations = 0;
  double tolerance = 0.0;

  Digest key() const;
  /// Stream the training letters are drawn from; keyed by the hash of theta.
  StreamKey training_stream() const;
};

/// 2^{nR} codevectors in R^{n d}, stored both row-major and position-major
/// (the layout the nearest-neighbour kernels read).
class Codebook {
 public:
  Codebook(std::size_t n, std::size_t d, Rate rate, std::vector<double> vectors);

  std::size_t block_len() const noexcept { return n_; }
  std::size_t letter_dim() const noexcept { return d_; }
  std::size_t block_dim() const noexcept { return n_ * d_; }
  std::size_t size() const noexcept { return count_; }
  Rate rate() const noexcept { return rate_; }

  std::span<const double> codevector(std::size_t i) const;
  const std::vector<double>& vectors() const noexcept { return rows_; }
  simd::CodebookView view() const noexcept;

  const std::optional<CodebookProvenance>& provenance() const noexcept { return provenance_; }
  /// Training distortion per letter: the initial assignment, then one entry per iteration.
  const std::vector<double>& history() const noexcept { return history_; }
  std::size_t iterations() const noexcept { return history_.empty() ? 0 : history_.size() - 1; }
  bool degenerate() const noexcept { return degenerate_; }

  std::vector<std::uint8_t> serialize() const;
  /// FramingError on malformed bytes, CompatibilityError on version mismatch.
  static Codebook deserialize(std::span<const std::uint8_t> bytes);

 private:
  friend Codebook design_codebook(const SourceFamily&, const ParameterVector&, std::size_t, Rate,
                                  const DistortionSpec&, std::uint64_t, const DesignSettings&);

  std::size_t n_ = 0;
  std::size_t d_ = 0;
  std::size_t count_ = 0;
  Rate rate_;
  std::vector<double> rows_;  // [i * n d + p]
  std::vector<double> soa_;   // [p * stride + i]
  std::size_t stride_ = 0;
  std::optional<CodebookProvenance> provenance_;
  std::vector<double> history_;
  bool degenerate_ = false;
};

/// Generalized Lloyd design on training blocks drawn from P_theta. n R may be
/// 0 (a single codevector). SizeError when 2^{nR} exceeds the cap.
Codebook design_codebook(const SourceFamily& family, const ParameterVector& theta, std::size_t n, Rate rate,
                         const DistortionSpec& spec, std::uint64_t master_seed,
                         const DesignSettings& settings = {});

/// Index of the minimum-distortion codevector; ties go to the lowest index.
std::size_t nn_encode(const Codebook& code, std::span<const double> block, const DistortionSpec& spec);

/// Index and block distortion (summed over letters) of the nearest codevector.
simd::Nearest nn_search(const Codebook& code, std::span<const double> block, const DistortionSpec& spec);

std::span<const double> decode(const Codebook& code, std::size_t index);

struct DistortionEstimate {
  double mean = 0.0;  // per letter
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// Mean per-letter distortion over `trials` fresh blocks from P_theta.
DistortionEstimate estimate_distortion(const SourceFamily& family, const ParameterVector& theta,
                                       const Codebook& code, const DistortionSpec& spec, std::size_t trials,
                                       const StreamKey& stream);

/// Key of trial t derived from a caller's stream.
StreamKey trial_stream(const StreamKey& stream, std::size_t t);

struct MismatchGap {
  double gap = 0.0;  // D_theta(C_eta) - D_theta(C_theta), on shared test blocks
  double std_error = 0.0;
  double matched = 0.0;
  double mismatched = 0.0;
  double bound = 0.0;  // 4 K d_V(P_theta, P_eta)
  std::size_t trials = 0;
};

MismatchGap mismatch_gap(const SourceFamily& family, const ParameterVector& theta, const Codebook& matched,
                         const Codebook& mismatched, const ParameterVector& eta, const DistortionSpec& spec,
                         std::size_t trials, const StreamKey& stream);

class CodebookCache;

MismatchGap mismatch_gap(const SourceFamily& family, const ParameterVector& theta, const ParameterVector& eta,
                         std::size_t n, Rate rate, const DistortionSpec& spec, std::uint64_t master_seed,
                         const DesignSettings& settings, std::size_t trials, const StreamKey& stream,
                         CodebookCache* cache = nullptr);

/// Designed codebooks keyed by provenance, shared across threads and
/// optionally persisted as cb-<key>.bin files. Each key is designed once.
class CodebookCache {
 public:
  explicit CodebookCache(std::optional<std::filesystem::path> dir = {}) : dir_(std::move(dir)) {}

  std::shared_ptr<const Codebook> get(const SourceFamily& family, const ParameterVector& theta, std::size_t n,
                                      Rate rate, const DistortionSpec& spec, std::uint64_t master_seed,
                                      const DesignSettings& settings);

  std::size_t designed() const;
  std::size_t loaded() const;

  static std::filesystem::path file_for(const std::filesystem::path& dir, const Digest& key);

 private:
  struct Slot {
    std::once_flag once;
    std::shared_ptr<const Codebook> book;
  };

  std::optional<std::filesystem::path> dir_;
  mutable std::mutex mutex_;
  std::map<Digest, std::shared_ptr<Slot>> slots_;
  std::size_t designed_ = 0;
  std::size_t loaded_ = 0;
};

}  // namespace uvq

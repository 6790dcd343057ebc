#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "uvq/block_quantizer.hpp"
#include "uvq/hash.hpp"
#include "uvq/kv_document.hpp"
#include "uvq/source_models.hpp"
#include "uvq/two_stage_codec.hpp"
#include "uvq/yatracos.hpp"

namespace uvq {

/// Parsed and validated experiment document (format uvq-experiment/1; keys
/// are listed in docs/formats.md).
struct ExperimentConfig {
  std::filesystem::path source;
  Digest config_hash{};  // SHA-256 of the document bytes

  std::filesystem::path family_path;
  std::shared_ptr<const SourceFamily> family;
  std::shared_ptr<const ParameterNet> net;
  std::size_t cube_side = 1;
  Rate rate{1, 1};
  DistortionSpec spec;
  std::uint64_t seed = 1;
  DesignSettings design;
  double slack = 0.0;
  std::vector<ParameterVector> test_thetas;
  std::vector<std::size_t> test_indices;  // net index of each test theta

  std::size_t codec_n = 4;
  std::vector<std::size_t> identification_schedule{64, 256, 1024};
  std::size_t identification_trials = 500;
  std::vector<std::size_t> redundancy_schedule{2, 4, 6, 8};
  std::size_t redundancy_blocks = 2000;
  std::size_t audit_trials = 1000;
  std::size_t audit_n = 256;
  std::size_t audit_pairs = 200;
  std::size_t mismatch_pairs = 20;
  std::size_t mismatch_n = 4;
  std::size_t mismatch_trials = 2000;

  std::filesystem::path output_dir = "uvq-out";
  std::optional<std::filesystem::path> cache_dir;

  /// Relative paths resolve against `base_dir`. ConfigError carries the key
  /// and line of the offending field.
  static ExperimentConfig parse(const KvDocument& doc, const std::filesystem::path& base_dir);
  static ExperimentConfig load(const std::filesystem::path& path);

  CodecSetup codec_setup(std::size_t n) const;
};

/// Human-readable summary of the experiment document keys.
std::string config_schema_help();

struct ExperimentRecord {
  std::string experiment;
  std::size_t n = 0;
  std::string metric;
  double value = 0.0;
  double std_error = 0.0;  // NaN when undefined
  std::size_t trials = 0;
  std::string flags;
  double wall_time_s = 0.0;
};

struct SlopeFit {
  std::string experiment;
  std::string metric;
  std::string regressor;  // "sqrt(log(n)/n)" or "n"
  double slope = 0.0;
  double intercept = 0.0;
  std::size_t points = 0;
  std::string note;
};

/// One per-trial inequality check of the bounds audit.
struct AuditCheck {
  std::string check;
  std::size_t trial = 0;
  double lhs = 0.0;
  double rhs = 0.0;
  double tolerance = 0.0;
  bool violated = false;

  double slack() const noexcept { return rhs - lhs; }
};

struct ExperimentResult {
  std::string experiment;
  std::vector<ExperimentRecord> records;
  std::vector<SlopeFit> fits;
  std::vector<AuditCheck> checks;
};

/// Shared per-config state: the Yatracos table and the codebook cache.
class ExperimentContext {
 public:
  explicit ExperimentContext(ExperimentConfig config);

  const ExperimentConfig& config() const noexcept { return config_; }
  const YatracosTable& table() const { return *table_; }
  std::shared_ptr<const YatracosTable> table_ptr() const { return table_; }
  const std::shared_ptr<CodebookCache>& codebooks() const noexcept { return cache_; }

 private:
  ExperimentConfig config_;
  std::shared_ptr<const YatracosTable> table_;
  std::shared_ptr<CodebookCache> cache_;
};

/// d_V(P_theta, P_theta^) mean and q99 and mean Delta_theta(Z) per n, pooled
/// over the test parameters; slope fit of log mean d_V on log sqrt(log n/n).
ExperimentResult run_identification(const ExperimentContext& ctx);

/// Paired E[D_theta(C_theta^)] - D_theta(C_theta) through the full two-stage
/// pipeline, the matched and two-stage distortions, and header_bits / n.
ExperimentResult run_redundancy(const ExperimentContext& ctx);

/// Per-trial checks of the estimator, mismatch, Pinsker, growth and
/// Lipschitz inequalities plus the measured constants.
ExperimentResult run_bounds_audit(const ExperimentContext& ctx);

/// Dispatches "identification", "redundancy" or "audit".
ExperimentResult run_experiment(const ExperimentContext& ctx, const std::string& id);

const std::vector<std::string>& experiment_ids();

/// Least-squares line through (x, y).
SlopeFit fit_line(std::span<const double> x, std::span<const double> y);

/// Sample quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

// ------------------------------------------------------------------ outputs

inline constexpr const char* kRecordsHeader = "experiment,n,metric,value,stderr,trials,flags,wall_time_s";
inline constexpr const char* kFitsHeader = "experiment,metric,regressor,slope,intercept,points,note";
inline constexpr const char* kAuditHeader = "check,trial,lhs,rhs,tolerance,slack,violated";

std::string format_records(std::span<const ExperimentRecord> records);
std::vector<ExperimentRecord> parse_records(std::string_view csv);
std::string format_fits(std::span<const SlopeFit> fits);
std::vector<SlopeFit> parse_fits(std::string_view csv);
std::string format_audit(std::span<const AuditCheck> checks);

/// Writes records.csv, fits.csv, audit.csv (audit only), manifest.txt and
/// plots/*.svg under the config's output directory.
void write_outputs(const ExperimentConfig& config, const ExperimentResult& result,
                   const std::filesystem::path& dir);

/// Log-log line plots, one file per (experiment, metric) with at least one
/// positive value; returns the files written.
std::vector<std::filesystem::path> render_plots(std::span<const ExperimentRecord> records,
                                                std::span<const SlopeFit> fits,
                                                const std::filesystem::path& dir);

/// SVG document for one metric series.
std::string render_svg(const std::string& title, std::span<const double> n, std::span<const double> values,
                       const std::optional<SlopeFit>& fit);

}  // namespace uvq

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "uvq/block_quantizer.hpp"
#include "uvq/hash.hpp"
#include "uvq/source_models.hpp"
#include "uvq/yatracos.hpp"

namespace uvq {

/// Partition of the cube [lo, lo + J]^k (lo = lower corner of Theta's bounds)
/// into cells of side 1/ceil(sqrt n). Cells are half-open with the top face
/// of the cube closed. Only cells meeting Theta get an index, in
/// lexicographic order (last axis fastest).
class ParameterGrid {
 public:
  /// ConfigError (path "grid.J") when Theta does not fit in the cube.
  static ParameterGrid build(const ThetaSpace& space, std::size_t j, std::size_t n, const ParameterNet& net);

  std::size_t dim() const noexcept { return k_; }
  std::size_t cube_side() const noexcept { return j_; }
  std::size_t block_len() const noexcept { return n_; }
  std::size_t cells_per_unit() const noexcept { return c_; }  // ceil(sqrt n)
  std::size_t cells_per_axis() const noexcept { return j_ * c_; }
  double cell_side() const noexcept { return 1.0 / static_cast<double>(c_); }
  /// ceil(k log2(J ceil(sqrt n))), the fixed width of a cell index.
  unsigned header_bits() const noexcept { return header_bits_; }

  std::size_t cell_count() const noexcept { return reps_.size(); }
  const ParameterVector& representative(std::size_t cell) const;
  /// Per-axis integer coordinates of an indexed cell.
  std::span<const std::uint32_t> cell_coords(std::size_t cell) const;
  Box cell_box(std::size_t cell) const;
  /// Whether the representative is a net point (false: projected cell centre).
  bool representative_on_net(std::size_t cell) const;

  /// Index of the cell containing theta, if that cell is indexed.
  std::optional<std::size_t> cell_of(std::span<const double> theta) const;

  /// The cell containing the centroid of Theta (or, if that cell is not
  /// indexed, the cell whose representative is nearest to the centroid).
  std::size_t initial_cell() const noexcept { return initial_; }

 private:
  std::optional<std::uint64_t> linear_of(std::span<const double> theta) const;

  std::size_t k_ = 0, j_ = 0, n_ = 0, c_ = 0;
  unsigned header_bits_ = 0;
  std::vector<double> origin_;
  std::vector<std::uint64_t> linear_;  // sorted lexicographic cell numbers of the indexed cells
  std::vector<std::uint32_t> coords_;  // [cell * k + axis]
  std::vector<ParameterVector> reps_;
  std::vector<std::uint8_t> on_net_;
  std::size_t initial_ = 0;
};

/// smallest b with 2^b >= (J c)^k.
unsigned grid_header_bits(std::size_t k, std::size_t j, std::size_t n);

struct FirstStage {
  ParameterVector estimate;  // theta~
  std::size_t net_index = 0;
  std::size_t cell = 0;
};

/// theta~ = min-distance estimate from z, then the cell containing it.
FirstStage first_stage_encode(const SourceFamily& family, const ParameterNet& net, const YatracosTable& table,
                              const ParameterGrid& grid, const SampleBlock& z, double slack = 0.0);

/// Everything both sides of the codec must agree on.
struct CodecSetup {
  std::shared_ptr<const SourceFamily> family;
  std::shared_ptr<const ParameterNet> net;
  std::shared_ptr<const YatracosTable> table;  // needed by the encoder only
  std::size_t n = 0;
  std::size_t cube_side = 1;  // J
  Rate rate;
  DistortionSpec spec;
  std::uint64_t master_seed = 0;
  DesignSettings design;
  double slack = 0.0;  // estimator slack (encoder only)

  /// Hash written to the stream header: the family's content hash combined
  /// with the net and the codebook design settings.
  Digest stream_hash() const;
};

struct TraceEntry {
  std::optional<ParameterVector> estimate;  // theta~ (absent for the first block and on the decoder side)
  ParameterVector quantized;                // theta^ = representative of `cell`
  std::size_t cell = 0;
  std::optional<double> variational;  // d_V(P_theta, P_theta^) when the true theta is known
};

struct IdentificationTrace {
  std::vector<TraceEntry> blocks;
};

/// Fills `variational` with d_V(P_theta, P_theta^) for every block.
void annotate_truth(IdentificationTrace& trace, const SourceFamily& family, const ParameterVector& theta);

struct StreamHeader {
  std::uint16_t version = 1;
  Digest hash{};
  std::uint32_t n = 0, k = 0, j = 0;
  Rate rate;
  std::uint64_t master_seed = 0;
  DistortionSpec spec;
  std::uint64_t blocks = 0;
};

/// Size of the fixed stream header in bytes.
inline constexpr std::size_t kStreamHeaderBytes = 8 + 2 + 32 + 12 + 8 + 8 + 1 + 8 + 8;

/// Reads the header only; FramingError on a short or foreign stream,
/// CompatibilityError on an unknown version.
StreamHeader read_stream_header(std::span<const std::uint8_t> stream);

struct EncodeResult {
  std::vector<std::uint8_t> stream;
  std::vector<double> reproduction;  // T n d values
  IdentificationTrace trace;
  std::uint64_t payload_bits = 0;

  double bits_per_letter(std::size_t n) const;
};

struct DecodeResult {
  StreamHeader header;
  std::vector<double> reproduction;
  IdentificationTrace trace;
};

/// The (n, n) two-stage code. Codebooks are designed on demand per cell
/// through a shared cache, identically on both sides.
class TwoStageCodec {
 public:
  explicit TwoStageCodec(CodecSetup setup, std::shared_ptr<CodebookCache> cache = nullptr);

  const CodecSetup& setup() const noexcept { return setup_; }
  const ParameterGrid& grid() const noexcept { return grid_; }
  std::uint64_t body_bits() const noexcept { return body_bits_; }
  std::uint64_t bits_per_block() const noexcept { return grid_.header_bits() + body_bits_; }

  std::shared_ptr<const Codebook> codebook(std::size_t cell) const;

  /// `letters` holds T blocks of n letters, row-major.
  EncodeResult encode(std::span<const double> letters) const;

  /// FramingError on truncation (naming the first incomplete block), bad CRC
  /// or out-of-range cell indices; CompatibilityError when the header does
  /// not match this codec.
  DecodeResult decode(std::span<const std::uint8_t> stream, bool verify_crc = true) const;

 private:
  CodecSetup setup_;
  ParameterGrid grid_;
  std::shared_ptr<CodebookCache> cache_;
  std::uint64_t body_bits_ = 0;
  Digest hash_{};
};

/// MSB-first bit packing.
class BitWriter {
 public:
  void put(std::uint64_t value, unsigned bits);
  std::uint64_t bit_count() const noexcept { return bits_; }
  /// Bytes written so far; the last byte is zero-padded.
  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::uint64_t bits_ = 0;
};

class BitReader {
 public:
  explicit BitReader(std::span<const std::uint8_t> data) : data_(data) {}
  /// FramingError past the end.
  std::uint64_t get(unsigned bits);
  std::uint64_t position() const noexcept { return pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::uint64_t pos_ = 0;
};

}  // namespace uvq

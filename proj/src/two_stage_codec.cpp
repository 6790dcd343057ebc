#include "uvq/two_stage_codec.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "uvq/byte_io.hpp"
#include "uvq/density_metrics.hpp"
#include "uvq/error.hpp"
#include "uvq/parallel.hpp"

namespace uvq {
namespace {

constexpr std::string_view kStreamMagic{"UVQ2STG\0", 8};
constexpr std::uint16_t kStreamVersion = 1;

std::size_t ceil_sqrt(std::size_t n) {
  std::size_t r = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (r * r < n) ++r;
  while (r > 0 && (r - 1) * (r - 1) >= n) --r;
  return r;
}

std::uint64_t total_cells(std::size_t k, std::size_t per_axis) {
  std::uint64_t total = 1;
  for (std::size_t a = 0; a < k; ++a) {
    if (total > (std::uint64_t{1} << 40) / per_axis) {
      throw ConfigError("grid.J", 0, "parameter grid has more than 2^40 cells");
    }
    total *= per_axis;
  }
  return total;
}

}  // namespace

// ---------------------------------------------------------------------- grid

unsigned grid_header_bits(std::size_t k, std::size_t j, std::size_t n) {
  const std::uint64_t total = total_cells(k, j * ceil_sqrt(n));
  unsigned b = 0;
  while ((std::uint64_t{1} << b) < total) ++b;
  return b;
}

ParameterGrid ParameterGrid::build(const ThetaSpace& space, std::size_t j, std::size_t n, const ParameterNet& net) {
  if (n == 0) throw PreconditionError("block length must be at least 1");
  if (j == 0) throw ConfigError("grid.J", 0, "cube side J must be a positive integer");
  if (net.size() == 0) throw PreconditionError("parameter net is empty");
  ParameterGrid g;
  g.k_ = space.dim();
  g.j_ = j;
  g.n_ = n;
  g.c_ = ceil_sqrt(n);
  g.origin_ = space.bounds().lo;
  for (std::size_t a = 0; a < g.k_; ++a) {
    const double width = space.bounds().hi[a] - space.bounds().lo[a];
    if (width > static_cast<double>(j)) {
      throw ConfigError("grid.J", 0,
                        "parameter space has width " + std::to_string(width) + " on axis " + std::to_string(a) +
                            ", more than the cube side J = " + std::to_string(j));
    }
  }
  const std::size_t per_axis = g.cells_per_axis();
  const std::uint64_t total = total_cells(g.k_, per_axis);
  g.header_bits_ = grid_header_bits(g.k_, j, n);

  std::map<std::uint64_t, std::size_t> first_point;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto l = g.linear_of(net[i].coords());
    if (!l) throw PreconditionError("net point " + std::to_string(i) + " lies outside the parameter cube");
    first_point.emplace(*l, i);
  }

  std::vector<std::uint32_t> idx(g.k_);
  std::vector<double> centre(g.k_);
  const double side = g.cell_side();
  for (std::uint64_t l = 0; l < total; ++l) {
    std::uint64_t rest = l;
    for (std::size_t a = g.k_; a-- > 0;) {
      idx[a] = static_cast<std::uint32_t>(rest % per_axis);
      rest /= per_axis;
    }
    std::optional<ParameterVector> rep;
    bool on_net = false;
    if (const auto it = first_point.find(l); it != first_point.end()) {
      rep = net[it->second];
      on_net = true;
    } else {
      for (std::size_t a = 0; a < g.k_; ++a) centre[a] = g.origin_[a] + (idx[a] + 0.5) * side;
      ParameterVector p = space.project(centre);
      if (g.linear_of(p.coords()) == l && space.contains(p.coords())) rep = std::move(p);
    }
    if (!rep) continue;
    g.linear_.push_back(l);
    g.coords_.insert(g.coords_.end(), idx.begin(), idx.end());
    g.reps_.push_back(std::move(*rep));
    g.on_net_.push_back(on_net ? 1 : 0);
  }

  const ParameterVector centroid = space.centroid();
  if (const auto c = g.cell_of(centroid.coords())) {
    g.initial_ = *c;
  } else {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < g.reps_.size(); ++i) {
      const double dist = distance(g.reps_[i], centroid);
      if (dist < best) {
        best = dist;
        g.initial_ = i;
      }
    }
  }
  return g;
}

std::optional<std::uint64_t> ParameterGrid::linear_of(std::span<const double> theta) const {
  if (theta.size() != k_) return std::nullopt;
  const std::size_t per_axis = cells_per_axis();
  std::uint64_t l = 0;
  for (std::size_t a = 0; a < k_; ++a) {
    const double t = theta[a] - origin_[a];
    if (!(t >= 0.0) || t > static_cast<double>(j_)) return std::nullopt;
    std::size_t i = static_cast<std::size_t>(std::floor(t * static_cast<double>(c_)));
    if (i >= per_axis) i = per_axis - 1;
    l = l * per_axis + i;
  }
  return l;
}

std::optional<std::size_t> ParameterGrid::cell_of(std::span<const double> theta) const {
  const auto l = linear_of(theta);
  if (!l) return std::nullopt;
  const auto it = std::lower_bound(linear_.begin(), linear_.end(), *l);
  if (it == linear_.end() || *it != *l) return std::nullopt;
  return static_cast<std::size_t>(it - linear_.begin());
}

const ParameterVector& ParameterGrid::representative(std::size_t cell) const {
  if (cell >= reps_.size()) {
    throw IndexError("cell index " + std::to_string(cell) + " out of range [0, " + std::to_string(reps_.size()) + ")");
  }
  return reps_[cell];
}

std::span<const std::uint32_t> ParameterGrid::cell_coords(std::size_t cell) const {
  representative(cell);
  return {coords_.data() + cell * k_, k_};
}

Box ParameterGrid::cell_box(std::size_t cell) const {
  const auto c = cell_coords(cell);
  Box b;
  for (std::size_t a = 0; a < k_; ++a) {
    b.lo.push_back(origin_[a] + c[a] * cell_side());
    b.hi.push_back(origin_[a] + (c[a] + 1) * cell_side());
  }
  return b;
}

bool ParameterGrid::representative_on_net(std::size_t cell) const {
  representative(cell);
  return on_net_[cell] != 0;
}

// --------------------------------------------------------------- first stage

FirstStage first_stage_encode(const SourceFamily& family, const ParameterNet& net, const YatracosTable& table,
                              const ParameterGrid& grid, const SampleBlock& z, double slack) {
  if (z.n != grid.block_len()) {
    throw PreconditionError("block has " + std::to_string(z.n) + " letters, grid expects " +
                            std::to_string(grid.block_len()));
  }
  const DeviationResult dev = deviations(family, net, table, z, slack);
  FirstStage out;
  out.net_index = dev.argmin;
  out.estimate = net[dev.argmin];
  const auto cell = grid.cell_of(out.estimate.coords());
  if (!cell) throw InternalError("estimate lies in no indexed cell");
  out.cell = *cell;
  return out;
}

// ------------------------------------------------------------------ bit I/O

void BitWriter::put(std::uint64_t value, unsigned bits) {
  for (unsigned i = bits; i-- > 0;) {
    if (bits_ % 8 == 0) buf_.push_back(0);
    if ((value >> i) & 1u) buf_.back() |= static_cast<std::uint8_t>(0x80u >> (bits_ % 8));
    ++bits_;
  }
}

std::uint64_t BitReader::get(unsigned bits) {
  if (bits > 64 || pos_ + bits > data_.size() * 8) {
    throw FramingError("bit read past end of payload at bit " + std::to_string(pos_));
  }
  std::uint64_t v = 0;
  for (unsigned i = 0; i < bits; ++i, ++pos_) {
    v = (v << 1) | ((data_[pos_ / 8] >> (7 - pos_ % 8)) & 1u);
  }
  return v;
}

// ------------------------------------------------------------------- stream

Digest CodecSetup::stream_hash() const {
  Hasher h;
  h.text("uvq-stream/1");
  h.bytes(family->content_hash());
  h.bytes(net->content_hash());
  h.u64(design.training_blocks);
  h.u64(design.max_iterations);
  h.f64(design.tolerance);
  h.u64(design.cap);
  return h.finish();
}

void annotate_truth(IdentificationTrace& trace, const SourceFamily& family, const ParameterVector& theta) {
  std::map<std::size_t, double> memo;
  for (auto& e : trace.blocks) {
    auto it = memo.find(e.cell);
    if (it == memo.end()) it = memo.emplace(e.cell, variational_distance(family, theta, e.quantized).value).first;
    e.variational = it->second;
  }
}

StreamHeader read_stream_header(std::span<const std::uint8_t> stream) {
  if (stream.size() < kStreamHeaderBytes) {
    throw FramingError("stream of " + std::to_string(stream.size()) + " bytes is shorter than its header");
  }
  ByteReader r(stream);
  if (!r.tag(kStreamMagic)) throw FramingError("not a two-stage stream (bad magic)");
  StreamHeader h;
  h.version = r.u16();
  if (h.version != kStreamVersion) {
    throw CompatibilityError("stream version " + std::to_string(h.version) + " is not supported");
  }
  const auto hash = r.bytes(32);
  std::copy(hash.begin(), hash.end(), h.hash.begin());
  h.n = r.u32();
  h.k = r.u32();
  h.j = r.u32();
  h.rate.num = r.u32();
  h.rate.den = r.u32();
  h.master_seed = r.u64();
  const std::uint8_t kind = r.u8();
  if (kind != 0) throw CompatibilityError("unknown distortion kind " + std::to_string(kind));
  h.spec.bound = r.f64();
  h.blocks = r.u64();
  return h;
}

double EncodeResult::bits_per_letter(std::size_t n) const {
  return static_cast<double>(payload_bits) / static_cast<double>(trace.blocks.size() * n);
}

TwoStageCodec::TwoStageCodec(CodecSetup setup, std::shared_ptr<CodebookCache> cache)
    : setup_(std::move(setup)), cache_(std::move(cache)) {
  if (!setup_.family || !setup_.net) throw PreconditionError("codec needs a family and a net");
  if (setup_.n == 0) throw PreconditionError("block length must be at least 1");
  setup_.spec.validate();
  body_bits_ = setup_.rate.bits(setup_.n);
  if (body_bits_ == 0) throw PreconditionError("n * R must be at least 1 for a stream");
  setup_.net->check_against(*setup_.family);
  grid_ = ParameterGrid::build(setup_.family->theta_space(), setup_.cube_side, setup_.n, *setup_.net);
  if (!cache_) cache_ = std::make_shared<CodebookCache>();
  hash_ = setup_.stream_hash();
}

std::shared_ptr<const Codebook> TwoStageCodec::codebook(std::size_t cell) const {
  return cache_->get(*setup_.family, grid_.representative(cell), setup_.n, setup_.rate, setup_.spec,
                     setup_.master_seed, setup_.design);
}

EncodeResult TwoStageCodec::encode(std::span<const double> letters) const {
  if (!setup_.table) throw PreconditionError("encoder needs a Yatracos table");
  const SourceFamily& family = *setup_.family;
  const std::size_t d = family.data_dim();
  const std::size_t dim = setup_.n * d;
  if (letters.empty() || letters.size() % dim != 0) {
    throw PreconditionError("input of " + std::to_string(letters.size()) + " values is not a whole number of " +
                            std::to_string(setup_.n) + "-letter blocks");
  }
  const std::size_t blocks = letters.size() / dim;

  EncodeResult out;
  out.trace.blocks.resize(blocks);
  out.trace.blocks[0].cell = grid_.initial_cell();
  parallel_for(blocks - 1, [&](std::size_t t) {
    SampleBlock z;
    z.n = setup_.n;
    z.d = d;
    z.values.assign(letters.begin() + static_cast<std::ptrdiff_t>(t * dim),
                    letters.begin() + static_cast<std::ptrdiff_t>((t + 1) * dim));
    const FirstStage fs = first_stage_encode(family, *setup_.net, *setup_.table, grid_, z, setup_.slack);
    out.trace.blocks[t + 1].estimate = fs.estimate;
    out.trace.blocks[t + 1].cell = fs.cell;
  });

  std::map<std::size_t, std::shared_ptr<const Codebook>> books;
  for (auto& e : out.trace.blocks) {
    e.quantized = grid_.representative(e.cell);
    if (!books.count(e.cell)) books.emplace(e.cell, codebook(e.cell));
  }

  std::vector<std::size_t> index(blocks);
  out.reproduction.resize(letters.size());
  parallel_for(blocks, [&](std::size_t t) {
    const Codebook& book = *books.at(out.trace.blocks[t].cell);
    index[t] = nn_encode(book, letters.subspan(t * dim, dim), setup_.spec);
    const auto v = book.codevector(index[t]);
    std::copy(v.begin(), v.end(), out.reproduction.begin() + static_cast<std::ptrdiff_t>(t * dim));
  });

  BitWriter bits;
  for (std::size_t t = 0; t < blocks; ++t) {
    bits.put(out.trace.blocks[t].cell, grid_.header_bits());
    bits.put(index[t], static_cast<unsigned>(body_bits_));
  }
  out.payload_bits = bits.bit_count();

  ByteWriter w;
  w.tag(kStreamMagic);
  w.u16(kStreamVersion);
  w.bytes(hash_);
  w.u32(static_cast<std::uint32_t>(setup_.n));
  w.u32(static_cast<std::uint32_t>(grid_.dim()));
  w.u32(static_cast<std::uint32_t>(setup_.cube_side));
  w.u32(setup_.rate.num);
  w.u32(setup_.rate.den);
  w.u64(setup_.master_seed);
  w.u8(static_cast<std::uint8_t>(setup_.spec.kind));
  w.f64(setup_.spec.bound);
  w.u64(blocks);
  w.bytes(bits.bytes());
  w.u32(crc32(w.data()));
  out.stream = w.take();
  return out;
}

DecodeResult TwoStageCodec::decode(std::span<const std::uint8_t> stream, bool verify_crc) const {
  DecodeResult out;
  out.header = read_stream_header(stream);
  const StreamHeader& h = out.header;
  if (h.hash != hash_) {
    throw CompatibilityError("stream was written for a different family, net or codebook design");
  }
  if (h.n != setup_.n || h.k != grid_.dim() || h.j != setup_.cube_side || !(h.rate == setup_.rate) ||
      h.master_seed != setup_.master_seed || !(h.spec == setup_.spec)) {
    throw CompatibilityError("stream parameters (n, k, J, R, seed, distortion) differ from this codec");
  }

  const std::uint64_t per_block = bits_per_block();
  if (h.blocks == 0) throw FramingError("stream declares no blocks");
  const std::uint64_t present = stream.size() - kStreamHeaderBytes;
  const std::uint64_t complete = present * 8 / per_block;
  if (complete < h.blocks) {
    throw FramingError("truncated stream: block " + std::to_string(complete + 1) + " of " +
                       std::to_string(h.blocks) + " is incomplete");
  }
  const std::uint64_t payload_bytes = (h.blocks * per_block + 7) / 8;
  if (present < payload_bytes + 4) throw FramingError("truncated stream: CRC trailer is incomplete");
  if (present > payload_bytes + 4) throw FramingError("stream has trailing bytes after the payload");
  if (verify_crc) {
    ByteReader trailer(stream.last(4));
    if (trailer.u32() != crc32(stream.first(stream.size() - 4))) throw FramingError("stream CRC mismatch");
  }

  BitReader bits(stream.subspan(kStreamHeaderBytes, payload_bytes));
  const std::size_t blocks = static_cast<std::size_t>(h.blocks);
  const std::size_t dim = setup_.n * setup_.family->data_dim();
  std::vector<std::size_t> index(blocks);
  out.trace.blocks.resize(blocks);
  for (std::size_t t = 0; t < blocks; ++t) {
    const std::uint64_t cell = bits.get(grid_.header_bits());
    if (cell >= grid_.cell_count()) {
      throw FramingError("cell index " + std::to_string(cell) + " out of range at block " + std::to_string(t + 1));
    }
    out.trace.blocks[t].cell = static_cast<std::size_t>(cell);
    out.trace.blocks[t].quantized = grid_.representative(cell);
    index[t] = static_cast<std::size_t>(bits.get(static_cast<unsigned>(body_bits_)));
  }

  std::map<std::size_t, std::shared_ptr<const Codebook>> books;
  for (const auto& e : out.trace.blocks) {
    if (!books.count(e.cell)) books.emplace(e.cell, codebook(e.cell));
  }
  out.reproduction.resize(blocks * dim);
  for (std::size_t t = 0; t < blocks; ++t) {
    const auto v = books.at(out.trace.blocks[t].cell)->codevector(index[t]);
    std::copy(v.begin(), v.end(), out.reproduction.begin() + static_cast<std::ptrdiff_t>(t * dim));
  }
  return out;
}

}  // namespace uvq

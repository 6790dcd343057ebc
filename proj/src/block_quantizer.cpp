#include "uvq/block_quantizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>

#include "uvq/byte_io.hpp"
#include "uvq/density_metrics.hpp"
#include "uvq/error.hpp"
#include "uvq/parallel.hpp"

namespace uvq {
namespace {

constexpr std::string_view kCodebookMagic{"UVQCODE\0", 8};
constexpr std::uint16_t kCodebookVersion = 1;
constexpr std::size_t kAssignChunk = 256;

std::size_t padded_stride(std::size_t count) {
  return (count + simd::kLaneStride - 1) / simd::kLaneStride * simd::kLaneStride;
}

CodebookProvenance make_provenance(const SourceFamily& family, const ParameterVector& theta, std::size_t n,
                                   Rate rate, const DistortionSpec& spec, std::uint64_t master_seed,
                                   const DesignSettings& settings, std::size_t count) {
  CodebookProvenance p;
  p.family_hash = family.content_hash();
  p.theta = theta;
  p.n = n;
  p.rate = rate;
  p.spec = spec;
  p.master_seed = master_seed;
  p.training_blocks = settings.training_size(count);
  p.max_iterations = settings.max_iterations;
  p.tolerance = settings.tolerance;
  return p;
}

std::size_t codevector_count(std::size_t n, Rate rate, std::size_t cap) {
  const std::uint64_t bits = rate.bits(n);
  if (bits >= 63 || (std::uint64_t{1} << bits) > cap) {
    throw SizeError("2^" + std::to_string(bits) + " codevectors exceed the codebook cap of " +
                    std::to_string(cap));
  }
  return std::size_t{1} << bits;
}

struct Summary {
  double mean = 0.0;
  double std_error = 0.0;
};

Summary summarize(std::span<const double> v) {
  Summary s;
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - s.mean) * (x - s.mean);
    s.std_error = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------- distortion

DistortionSpec DistortionSpec::for_support(const Box& support) {
  double d2 = 0.0;
  for (std::size_t a = 0; a < support.dim(); ++a) {
    const double w = support.hi[a] - support.lo[a];
    d2 += w * w;
  }
  DistortionSpec s;
  s.bound = d2;
  return s;
}

void DistortionSpec::validate() const {
  if (kind != Kind::ClampedSquaredError) throw PreconditionError("unknown distortion kind");
  if (!(bound > 0.0) || !std::isfinite(bound)) throw PreconditionError("distortion bound K must be positive");
}

double DistortionSpec::letter(std::span<const double> x, std::span<const double> y) const {
  if (x.size() != y.size()) throw ShapeError("letters differ in dimension");
  double q = 0.0;
  for (std::size_t c = 0; c < x.size(); ++c) {
    const double diff = x[c] - y[c];
    q = q + diff * diff;
  }
  return q < bound ? q : bound;
}

double DistortionSpec::block(std::span<const double> x, std::span<const double> y, std::size_t d) const {
  if (x.size() != y.size() || d == 0 || x.size() % d != 0) throw ShapeError("blocks differ in shape");
  double acc = 0.0;
  for (std::size_t p = 0; p < x.size(); p += d) acc = acc + letter(x.subspan(p, d), y.subspan(p, d));
  return acc;
}

// ---------------------------------------------------------------------- rate

Rate Rate::of(std::uint32_t num, std::uint32_t den) {
  if (den == 0) throw PreconditionError("rate denominator must be positive");
  const std::uint32_t g = std::gcd(num, den);
  if (g == 0) return Rate{0, 1};
  return Rate{num / g, den / g};
}

Rate Rate::parse(const std::string& text) {
  auto whole = [&](std::string_view s) {
    std::uint32_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size() || s.empty()) {
      throw PreconditionError("malformed rate '" + text + "'");
    }
    return v;
  };
  const std::string_view s(text);
  if (const auto slash = s.find('/'); slash != std::string_view::npos) {
    return of(whole(s.substr(0, slash)), whole(s.substr(slash + 1)));
  }
  if (const auto dot = s.find('.'); dot != std::string_view::npos) {
    const std::string_view frac = s.substr(dot + 1);
    if (frac.size() > 6) throw PreconditionError("rate '" + text + "' has more than 6 decimal places");
    std::uint32_t den = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
    const std::uint32_t ip = dot == 0 ? 0 : whole(s.substr(0, dot));
    const std::uint32_t fp = frac.empty() ? 0 : whole(frac);
    return of(ip * den + fp, den);
  }
  return of(whole(s), 1);
}

bool Rate::integral_bits(std::size_t n) const noexcept {
  return (static_cast<std::uint64_t>(n) * num) % den == 0;
}

std::uint64_t Rate::bits(std::size_t n) const {
  if (!integral_bits(n)) {
    throw PreconditionError("n * R = " + std::to_string(n) + " * " + text() + " is not an integer");
  }
  return static_cast<std::uint64_t>(n) * num / den;
}

std::string Rate::text() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

std::size_t DesignSettings::training_size(std::size_t codevectors) const noexcept {
  return training_blocks != 0 ? training_blocks : std::max<std::size_t>(4096, 64 * codevectors);
}

// ---------------------------------------------------------------- provenance

Digest CodebookProvenance::key() const {
  Hasher h;
  h.text("uvq-codebook/1");
  h.bytes(family_hash);
  h.u64(theta.size());
  h.f64s(theta.coords());
  h.u64(n);
  h.u64(rate.num);
  h.u64(rate.den);
  h.u64(static_cast<std::uint64_t>(spec.kind));
  h.f64(spec.bound);
  h.u64(master_seed);
  h.u64(training_blocks);
  h.u64(max_iterations);
  h.f64(tolerance);
  return h.finish();
}

StreamKey CodebookProvenance::training_stream() const {
  Hasher h;
  h.bytes(family_hash);
  h.u64(theta.size());
  h.f64s(theta.coords());
  return StreamKey{master_seed, purpose_tag("codebook-training"), digest_prefix(h.finish()), n};
}

// ------------------------------------------------------------------ codebook

Codebook::Codebook(std::size_t n, std::size_t d, Rate rate, std::vector<double> vectors)
    : n_(n), d_(d), rate_(rate), rows_(std::move(vectors)) {
  const std::size_t dim = n * d;
  if (dim == 0) throw ShapeError("codebook blocks must be non-empty");
  if (rows_.empty() || rows_.size() % dim != 0) throw ShapeError("codevector data is not a whole number of blocks");
  count_ = rows_.size() / dim;
  const std::uint64_t bits = rate.bits(n);
  if (bits >= 63 || count_ != (std::size_t{1} << bits)) {
    throw ShapeError("codebook has " + std::to_string(count_) + " codevectors, rate needs 2^" +
                     std::to_string(bits));
  }
  stride_ = padded_stride(count_);
  soa_.assign(dim * stride_, 0.0);
  for (std::size_t i = 0; i < count_; ++i) {
    for (std::size_t p = 0; p < dim; ++p) soa_[p * stride_ + i] = rows_[i * dim + p];
  }
}

std::span<const double> Codebook::codevector(std::size_t i) const {
  if (i >= count_) {
    throw IndexError("codevector index " + std::to_string(i) + " out of range [0, " + std::to_string(count_) + ")");
  }
  return {rows_.data() + i * block_dim(), block_dim()};
}

simd::CodebookView Codebook::view() const noexcept {
  return {soa_.data(), count_, stride_, n_, d_};
}

std::vector<std::uint8_t> Codebook::serialize() const {
  ByteWriter w;
  w.tag(kCodebookMagic);
  w.u16(kCodebookVersion);
  w.u32(static_cast<std::uint32_t>(n_));
  w.u32(static_cast<std::uint32_t>(d_));
  w.u32(rate_.num);
  w.u32(rate_.den);
  w.u8(degenerate_ ? 1 : 0);
  w.u8(provenance_ ? 1 : 0);
  if (provenance_) {
    const auto& p = *provenance_;
    w.bytes(p.family_hash);
    w.u32(static_cast<std::uint32_t>(p.theta.size()));
    w.f64s(p.theta.coords());
    w.u8(static_cast<std::uint8_t>(p.spec.kind));
    w.f64(p.spec.bound);
    w.u64(p.master_seed);
    w.u64(p.training_blocks);
    w.u64(p.max_iterations);
    w.f64(p.tolerance);
  }
  w.u32(static_cast<std::uint32_t>(history_.size()));
  w.f64s(history_);
  w.u64(count_);
  w.f64s(rows_);
  w.u32(crc32(w.data()));
  return w.take();
}

Codebook Codebook::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FramingError("codebook file too short");
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader trailer(bytes.last(4));
  if (trailer.u32() != crc32(body)) throw FramingError("codebook file CRC mismatch");
  ByteReader r(body);
  if (!r.tag(kCodebookMagic)) throw FramingError("not a codebook file");
  const std::uint16_t version = r.u16();
  if (version != kCodebookVersion) {
    throw CompatibilityError("codebook file version " + std::to_string(version) + " is not supported");
  }
  const std::size_t n = r.u32();
  const std::size_t d = r.u32();
  const std::uint32_t num = r.u32();
  const std::uint32_t den = r.u32();
  if (den == 0) throw FramingError("codebook rate has a zero denominator");
  const Rate rate{num, den};
  const bool degenerate = r.u8() != 0;
  std::optional<CodebookProvenance> prov;
  if (r.u8() != 0) {
    CodebookProvenance p;
    const auto fh = r.bytes(32);
    std::copy(fh.begin(), fh.end(), p.family_hash.begin());
    p.theta = ParameterVector(r.f64s(r.u32()));
    p.n = n;
    p.rate = rate;
    const std::uint8_t kind = r.u8();
    if (kind != 0) throw CompatibilityError("unknown distortion kind " + std::to_string(kind));
    p.spec.bound = r.f64();
    p.master_seed = r.u64();
    p.training_blocks = r.u64();
    p.max_iterations = r.u64();
    p.tolerance = r.f64();
    prov = std::move(p);
  }
  std::vector<double> history = r.f64s(r.u32());
  const std::uint64_t count = r.u64();
  const std::uint64_t dim = static_cast<std::uint64_t>(n) * d;
  if (dim == 0 || count > r.remaining() / 8 / dim) throw FramingError("codebook size field is inconsistent");
  std::vector<double> rows = r.f64s(count * dim);
  if (r.remaining() != 0) throw FramingError("trailing bytes in codebook file");
  Codebook book = [&] {
    try {
      return Codebook(n, d, rate, std::move(rows));
    } catch (const Error& e) {
      throw FramingError(std::string("codebook file: ") + e.what());
    }
  }();
  book.provenance_ = std::move(prov);
  book.history_ = std::move(history);
  book.degenerate_ = degenerate;
  return book;
}

// -------------------------------------------------------------------- design

Codebook design_codebook(const SourceFamily& family, const ParameterVector& theta, std::size_t n, Rate rate,
                         const DistortionSpec& spec, std::uint64_t master_seed, const DesignSettings& settings) {
  spec.validate();
  family.validate(theta);
  if (n == 0) throw PreconditionError("block length must be at least 1");
  if (settings.max_iterations == 0) throw PreconditionError("Lloyd needs at least one iteration");
  const std::size_t count = codevector_count(n, rate, settings.cap);
  const CodebookProvenance prov = make_provenance(family, theta, n, rate, spec, master_seed, settings, count);
  const std::size_t blocks = prov.training_blocks;
  if (blocks < count) {
    throw PreconditionError("training set of " + std::to_string(blocks) + " blocks is smaller than the codebook");
  }

  const std::size_t d = family.data_dim();
  const std::size_t dim = n * d;
  const SampleBlock train = sample_block(family, theta, blocks * n, prov.training_stream());
  const std::vector<double>& x = train.values;
  auto block_of = [&](std::size_t b) { return std::span<const double>(x.data() + b * dim, dim); };
  const double letters = static_cast<double>(blocks * n);

  bool identical = true;
  for (std::size_t i = dim; i < x.size() && identical; ++i) identical = x[i] == x[i % dim];
  if (identical) {
    std::vector<double> rows;
    rows.reserve(count * dim);
    for (std::size_t i = 0; i < count; ++i) rows.insert(rows.end(), x.begin(), x.begin() + static_cast<std::ptrdiff_t>(dim));
    Codebook book(n, d, rate, std::move(rows));
    book.provenance_ = prov;
    book.history_ = {0.0};
    book.degenerate_ = true;
    return book;
  }

  std::vector<double> rows(count * dim);
  for (std::size_t i = 0; i < count; ++i) {
    const auto src = block_of(i * blocks / count);
    std::copy(src.begin(), src.end(), rows.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }

  std::vector<std::size_t> assign(blocks);
  std::vector<double> dist(blocks);
  auto assign_all = [&](const Codebook& book) {
    const simd::CodebookView view = book.view();
    const std::size_t chunks = (blocks + kAssignChunk - 1) / kAssignChunk;
    parallel_for(chunks, [&](std::size_t c) {
      const std::size_t end = std::min(blocks, (c + 1) * kAssignChunk);
      for (std::size_t b = c * kAssignChunk; b < end; ++b) {
        const simd::Nearest nn = simd::nearest_codevector(block_of(b), view, spec.bound);
        assign[b] = nn.index;
        dist[b] = nn.distortion;
      }
    });
    double total = 0.0;
    for (double v : dist) total += v;
    return total;
  };

  std::vector<double> history;
  double current = assign_all(Codebook(n, d, rate, rows));
  history.push_back(current / letters);

  std::vector<double> sums(count * dim);
  std::vector<std::size_t> members(count);
  std::vector<double> cell_dist(count);
  std::vector<double> mean(dim);
  std::vector<std::uint8_t> moved(blocks);
  for (std::size_t it = 0; it < settings.max_iterations; ++it) {
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(members.begin(), members.end(), 0);
    std::fill(cell_dist.begin(), cell_dist.end(), 0.0);
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::size_t c = assign[b];
      const auto xb = block_of(b);
      for (std::size_t p = 0; p < dim; ++p) sums[c * dim + p] += xb[p];
      ++members[c];
      cell_dist[c] += dist[b];
    }

    // Centroid step, kept only where it does not raise the clamped distortion.
    std::vector<std::size_t> start(count + 1, 0);
    for (std::size_t b = 0; b < blocks; ++b) ++start[assign[b] + 1];
    for (std::size_t c = 0; c < count; ++c) start[c + 1] += start[c];
    std::vector<std::size_t> order(blocks);
    {
      std::vector<std::size_t> fill(start.begin(), start.end() - 1);
      for (std::size_t b = 0; b < blocks; ++b) order[fill[assign[b]]++] = b;
    }
    std::vector<double> trial(blocks);
    for (std::size_t c = 0; c < count; ++c) {
      if (members[c] == 0) continue;
      for (std::size_t p = 0; p < dim; ++p) mean[p] = sums[c * dim + p] / static_cast<double>(members[c]);
      double with_mean = 0.0;
      for (std::size_t q = start[c]; q < start[c + 1]; ++q) {
        const std::size_t b = order[q];
        trial[b] = spec.block(block_of(b), mean, d);
        with_mean += trial[b];
      }
      if (with_mean <= cell_dist[c]) {
        std::copy(mean.begin(), mean.end(), rows.begin() + static_cast<std::ptrdiff_t>(c * dim));
        cell_dist[c] = with_mean;
        for (std::size_t q = start[c]; q < start[c + 1]; ++q) dist[order[q]] = trial[order[q]];
      }
    }

    // Empty cells take the worst block of the worst cell.
    std::fill(moved.begin(), moved.end(), 0);
    for (std::size_t e = 0; e < count; ++e) {
      if (members[e] != 0) continue;
      std::size_t worst = 0;
      for (std::size_t c = 1; c < count; ++c) {
        if (cell_dist[c] > cell_dist[worst]) worst = c;
      }
      if (!(cell_dist[worst] > 0.0)) break;
      std::size_t pick = blocks;
      for (std::size_t q = start[worst]; q < start[worst + 1]; ++q) {
        const std::size_t b = order[q];
        if (moved[b]) continue;
        if (pick == blocks || dist[b] > dist[pick]) pick = b;
      }
      if (pick == blocks) break;
      const auto src = block_of(pick);
      std::copy(src.begin(), src.end(), rows.begin() + static_cast<std::ptrdiff_t>(e * dim));
      moved[pick] = 1;
      cell_dist[worst] -= dist[pick];
      members[e] = 1;
    }

    const double next = assign_all(Codebook(n, d, rate, rows));
    history.push_back(next / letters);
    const double gain = current - next;
    current = next;
    if (current == 0.0 || gain <= settings.tolerance * (current + gain)) break;
  }

  Codebook book(n, d, rate, std::move(rows));
  book.provenance_ = prov;
  book.history_ = std::move(history);
  return book;
}

// ----------------------------------------------------------- encode / decode

simd::Nearest nn_search(const Codebook& code, std::span<const double> block, const DistortionSpec& spec) {
  if (block.size() != code.block_dim()) {
    throw ShapeError("block has " + std::to_string(block.size()) + " values, codebook expects " +
                     std::to_string(code.block_dim()));
  }
  return simd::nearest_codevector(block, code.view(), spec.bound);
}

std::size_t nn_encode(const Codebook& code, std::span<const double> block, const DistortionSpec& spec) {
  return nn_search(code, block, spec).index;
}

std::span<const double> decode(const Codebook& code, std::size_t index) { return code.codevector(index); }

StreamKey trial_stream(const StreamKey& stream, std::size_t t) {
  return StreamKey{stream.master_seed, stream.purpose, splitmix64(stream.block ^ splitmix64(stream.trial)), t};
}

DistortionEstimate estimate_distortion(const SourceFamily& family, const ParameterVector& theta,
                                       const Codebook& code, const DistortionSpec& spec, std::size_t trials,
                                       const StreamKey& stream) {
  if (trials == 0) throw PreconditionError("estimate_distortion needs at least one trial");
  if (code.letter_dim() != family.data_dim()) throw ShapeError("codebook letter dimension differs from the family");
  std::vector<double> per(trials);
  const double n = static_cast<double>(code.block_len());
  parallel_for(trials, [&](std::size_t t) {
    const SampleBlock z = sample_block(family, theta, code.block_len(), trial_stream(stream, t));
    per[t] = nn_search(code, z.values, spec).distortion / n;
  });
  const Summary s = summarize(per);
  return {std::clamp(s.mean, 0.0, spec.bound), s.std_error, trials};
}

MismatchGap mismatch_gap(const SourceFamily& family, const ParameterVector& theta, const Codebook& matched,
                         const Codebook& mismatched, const ParameterVector& eta, const DistortionSpec& spec,
                         std::size_t trials, const StreamKey& stream) {
  if (trials == 0) throw PreconditionError("mismatch_gap needs at least one trial");
  if (matched.block_dim() != mismatched.block_dim()) throw ShapeError("codebooks differ in block shape");
  const double n = static_cast<double>(matched.block_len());
  std::vector<double> own(trials), other(trials), diff(trials);
  parallel_for(trials, [&](std::size_t t) {
    const SampleBlock z = sample_block(family, theta, matched.block_len(), trial_stream(stream, t));
    own[t] = nn_search(matched, z.values, spec).distortion / n;
    other[t] = nn_search(mismatched, z.values, spec).distortion / n;
    diff[t] = other[t] - own[t];
  });
  MismatchGap g;
  const Summary sd = summarize(diff);
  g.gap = sd.mean;
  g.std_error = sd.std_error;
  g.matched = summarize(own).mean;
  g.mismatched = summarize(other).mean;
  g.bound = 4.0 * spec.bound * variational_distance(family, theta, eta).value;
  g.trials = trials;
  return g;
}

MismatchGap mismatch_gap(const SourceFamily& family, const ParameterVector& theta, const ParameterVector& eta,
                         std::size_t n, Rate rate, const DistortionSpec& spec, std::uint64_t master_seed,
                         const DesignSettings& settings, std::size_t trials, const StreamKey& stream,
                         CodebookCache* cache) {
  family.validate(eta);
  if (cache) {
    const auto a = cache->get(family, theta, n, rate, spec, master_seed, settings);
    const auto b = cache->get(family, eta, n, rate, spec, master_seed, settings);
    return mismatch_gap(family, theta, *a, *b, eta, spec, trials, stream);
  }
  const Codebook a = design_codebook(family, theta, n, rate, spec, master_seed, settings);
  const Codebook b = design_codebook(family, eta, n, rate, spec, master_seed, settings);
  return mismatch_gap(family, theta, a, b, eta, spec, trials, stream);
}

// --------------------------------------------------------------------- cache

std::filesystem::path CodebookCache::file_for(const std::filesystem::path& dir, const Digest& key) {
  return dir / ("cb-" + to_hex(key).substr(0, 32) + ".bin");
}

std::shared_ptr<const Codebook> CodebookCache::get(const SourceFamily& family, const ParameterVector& theta,
                                                   std::size_t n, Rate rate, const DistortionSpec& spec,
                                                   std::uint64_t master_seed, const DesignSettings& settings) {
  const std::size_t count = codevector_count(n, rate, settings.cap);
  const CodebookProvenance prov = make_provenance(family, theta, n, rate, spec, master_seed, settings, count);
  const Digest key = prov.key();
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard lock(mutex_);
    auto& s = slots_[key];
    if (!s) s = std::make_shared<Slot>();
    slot = s;
  }
  std::call_once(slot->once, [&] {
    if (dir_) {
      const auto file = file_for(*dir_, key);
      if (std::filesystem::exists(file)) {
        try {
          auto book = std::make_shared<Codebook>(Codebook::deserialize(read_file(file)));
          if (book->provenance() && book->provenance()->key() == key) {
            slot->book = std::move(book);
            std::lock_guard lock(mutex_);
            ++loaded_;
            return;
          }
        } catch (const FramingError&) {
        } catch (const CompatibilityError&) {
        }
      }
    }
    auto book = std::make_shared<Codebook>(design_codebook(family, theta, n, rate, spec, master_seed, settings));
    if (dir_) {
      std::filesystem::create_directories(*dir_);
      write_file_atomic(file_for(*dir_, key), book->serialize());
    }
    slot->book = std::move(book);
    std::lock_guard lock(mutex_);
    ++designed_;
  });
  return slot->book;
}

std::size_t CodebookCache::designed() const {
  std::lock_guard lock(mutex_);
  return designed_;
}

std::size_t CodebookCache::loaded() const {
  std::lock_guard lock(mutex_);
  return loaded_;
}

}  // namespace uvq

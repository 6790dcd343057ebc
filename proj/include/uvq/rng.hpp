#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace uvq {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11). A draw is a
/// pure function of (key, counter), so streams never depend on schedule.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter generate(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// FNV-1a over a purpose name; used to build readable, stable purpose tags.
constexpr std::uint32_t purpose_tag(std::string_view name) noexcept {
  std::uint32_t h = 2166136261u;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 16777619u;
  }
  return h;
}

/// Identifies one independent random stream: (master seed, purpose, block, trial).
struct StreamKey {
  std::uint64_t master_seed = 0;
  std::uint32_t purpose = 0;
  std::uint64_t block = 0;
  std::uint64_t trial = 0;

  friend bool operator==(const StreamKey&, const StreamKey&) = default;
};

/// Sequential view over a Philox stream. Cheap to construct; copies replay.
class RandomStream {
 public:
  explicit RandomStream(const StreamKey& id) noexcept {
    const std::uint64_t a = splitmix64(id.master_seed ^ splitmix64(id.purpose));
    const std::uint64_t b = splitmix64(a ^ splitmix64(id.block + 0x632BE59BD9B4E019ull));
    const std::uint64_t key = splitmix64(b ^ splitmix64(id.trial + 0x8CB92BA72F3D8DD7ull));
    const std::uint64_t hi = splitmix64(key ^ 0xA0761D6478BD642Full);
    key_ = {static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
    ctr_hi_ = hi;
  }

  std::uint32_t next_u32() noexcept {
    if (used_ == 4) refill();
    return buffer_[used_++];
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t lo = next_u32();
    return (std::uint64_t{next_u32()} << 32) | lo;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1); safe for inverse-CDF transforms of unbounded tails.
  double uniform_open() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Uniform integer on [0, bound) by rejection (no modulo bias).
  std::uint64_t below(std::uint64_t bound) noexcept {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % bound;
  }

  std::uint64_t draws() const noexcept { return counter_ * 4 - (4 - used_); }

 private:
  void refill() noexcept {
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(counter_),
                                  static_cast<std::uint32_t>(counter_ >> 32),
                                  static_cast<std::uint32_t>(ctr_hi_),
                                  static_cast<std::uint32_t>(ctr_hi_ >> 32)};
    buffer_ = Philox4x32::generate(ctr, key_);
    ++counter_;
    used_ = 0;
  }

  Philox4x32::Key key_{};
  std::uint64_t ctr_hi_ = 0;
  std::uint64_t counter_ = 0;
  Philox4x32::Counter buffer_{};
  int used_ = 4;
};

}  // namespace uvq

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace uvq {

using Digest = std::array<std::uint8_t, 32>;

/// Incremental SHA-256 with helpers for the fixed-width values we hash.
/// Numbers are fed little-endian so digests are platform independent.
class Hasher {
 public:
  Hasher();
  ~Hasher();
  Hasher(const Hasher&) = delete;
  Hasher& operator=(const Hasher&) = delete;

  Hasher& bytes(std::span<const std::uint8_t> data);
  Hasher& text(std::string_view s);
  Hasher& u64(std::uint64_t v);
  Hasher& f64(double v);
  Hasher& f64s(std::span<const double> v);
  Digest finish();

 private:
  struct State;
  State* state_;
};

std::string to_hex(std::span<const std::uint8_t> digest);

/// First 8 bytes of a digest as an integer (for seeding and map keys).
std::uint64_t digest_prefix(const Digest& d);

std::uint32_t crc32(std::span<const std::uint8_t> data);

}  // namespace uvq

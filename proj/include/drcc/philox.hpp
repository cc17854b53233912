#pragma once

// Philox4x32-10 counter-based generator (Salmon et al. 2011). Every output
// block is a pure function of (counter, key), so streams can be split
// across threads without changing results.

#include <array>
#include <cstdint>

namespace drcc {

struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
  static constexpr int kRounds = 10;

  static Counter block(Counter c, Key k) {
    for (int r = 0; r < kRounds; ++r) {
      std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c[0];
      std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c[2];
      c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
      k[0] += kW0;
      k[1] += kW1;
    }
    return c;
  }

  static Key key_from_seed(std::uint64_t seed) {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  }

  /// Uniform on the open interval (0, 1) from the top 52 bits, centered in
  /// its cell so neither endpoint is reachable.
  static double to_unit(std::uint32_t hi, std::uint32_t lo) {
    std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 12;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-52;
  }
};

}  // namespace drcc

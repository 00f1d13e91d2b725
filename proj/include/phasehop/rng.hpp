#pragma once

// Philox4x32-10 counter-based generator, keyed by
// (run seed, stream index). Every trajectory owns one stream, so results do
// not depend on how trajectories are scheduled across workers.
//
// Stream layout: key = (seed_lo, seed_hi); counter = (block_lo, block_hi,
// stream_lo, stream_hi). Each block yields four 32-bit words.
// uniform() consumes two words (53-bit mantissa); normal() uses Box-Muller
// and consumes two uniforms, caching nothing.

#include <array>
#include <cmath>
#include <cstdint>

namespace phasehop {

class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Block generate(Block ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      ctr = single_round(ctr, key);
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static Block single_round(const Block& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream) {
    key_ = {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
    stream_lo_ = static_cast<std::uint32_t>(stream);
    stream_hi_ = static_cast<std::uint32_t>(stream >> 32);
  }

  std::uint32_t next_u32() {
    if (used_ == 4) refill();
    return buffer_[used_++];
  }

  // Uniform on [0, 1).
  double uniform() {
    const std::uint64_t hi = next_u32() >> 5;  // 27 bits
    const std::uint64_t lo = next_u32() >> 6;  // 26 bits
    return static_cast<double>((hi << 26) | lo) * 0x1.0p-53;
  }

  double normal() {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  [[nodiscard]] std::uint64_t blocks_used() const { return block_; }

 private:
  void refill() {
    const Philox4x32::Block ctr = {static_cast<std::uint32_t>(block_),
                                   static_cast<std::uint32_t>(block_ >> 32), stream_lo_,
                                   stream_hi_};
    buffer_ = Philox4x32::generate(ctr, key_);
    ++block_;
    used_ = 0;
  }

  Philox4x32::Key key_{0, 0};
  std::uint32_t stream_lo_ = 0;
  std::uint32_t stream_hi_ = 0;
  std::uint64_t block_ = 0;
  Philox4x32::Block buffer_{};
  int used_ = 4;
};

}  // namespace phasehop

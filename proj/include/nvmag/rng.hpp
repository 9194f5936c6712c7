#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace nvmag {

/// Philox4x32-10 counter-based generator (Salmon et al., Random123).
///
/// Output is a pure function of (key, counter), so the draw for sample k of
/// stream s never depends on how many other draws were made before it.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  explicit Philox4x32(std::uint64_t seed)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}
  explicit Philox4x32(Key key) : key_(key) {}

  static Counter bijection(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }

  Counter operator()(std::uint64_t index, std::uint32_t stream, std::uint32_t lane = 0) const {
    return bijection({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      stream, lane},
                     key_);
  }

  /// Two uniforms in the open interval (0, 1).
  std::array<double, 2> uniform2(std::uint64_t index, std::uint32_t stream) const {
    const auto r = (*this)(index, stream);
    const std::uint64_t a = (std::uint64_t{r[0]} << 32 | r[1]) >> 11;
    const std::uint64_t b = (std::uint64_t{r[2]} << 32 | r[3]) >> 11;
    constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
    return {(static_cast<double>(a) + 0.5) * kScale, (static_cast<double>(b) + 0.5) * kScale};
  }

  /// Standard normal draw (Box-Muller, cosine branch).
  double normal(std::uint64_t index, std::uint32_t stream) const {
    const auto [u1, u2] = uniform2(index, stream);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;

  Key key_;
};

}  // namespace nvmag

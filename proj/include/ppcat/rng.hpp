#ifndef PPCAT_RNG_HPP
#define PPCAT_RNG_HPP

// Counter-based random streams (Philox4x32-10) for reproducible parallel
// Monte Carlo.  A draw is a pure function of (seed, trajectory, step, block,
// salt), so any worker can regenerate any increment without shared state.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ppcat/common.hpp"

namespace ppcat {

namespace detail {

struct u32x4 {
    uint32_t v[4];
};

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
    uint64_t p = static_cast<uint64_t>(a) * b;
    hi = static_cast<uint32_t>(p >> 32);
    lo = static_cast<uint32_t>(p);
}

// Philox4x32-10 block cipher (Salmon et al., SC'11 reference constants).
inline u32x4 philox4x32(u32x4 ctr, uint32_t k0, uint32_t k1) {
    constexpr uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
    constexpr uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
        if (round > 0) {
            k0 += W0;
            k1 += W1;
        }
        uint32_t hi0, lo0, hi1, lo1;
        mulhilo(M0, ctr.v[0], hi0, lo0);
        mulhilo(M1, ctr.v[2], hi1, lo1);
        ctr = {hi1 ^ ctr.v[1] ^ k0, lo1, hi0 ^ ctr.v[3] ^ k1, lo0};
    }
    return ctr;
}

// Uniform on (0, 1]: never 0, so log() below is safe.
inline double u64_to_unit(uint64_t x) {
    return (static_cast<double>(x >> 11) + 1.0) * 0x1.0p-53;
}

}  // namespace detail

/// Domain separators so distinct uses of the same (seed, trajectory) never
/// collide in counter space.
enum class RngSalt : uint32_t {
    dynamics = 0,
    initial_state = 1,
    generic = 2,
};

/// One logical random stream: a fixed key plus a counter prefix.  Consecutive
/// blocks are indexed explicitly, so the stream is stateless and replayable.
class CounterStream {
public:
    CounterStream(uint64_t seed, uint64_t trajectory, uint64_t step,
                  RngSalt salt = RngSalt::dynamics)
        : k0_(static_cast<uint32_t>(seed)),
          k1_(static_cast<uint32_t>(seed >> 32)),
          traj_(static_cast<uint32_t>(trajectory)),
          step_(static_cast<uint32_t>(step)),
          salt_(static_cast<uint32_t>(salt) ^
                (static_cast<uint32_t>(trajectory >> 32) << 8) ^
                (static_cast<uint32_t>(step >> 32) << 16)) {}

    /// Raw 4x32-bit block for block index `block`.
    detail::u32x4 block(uint32_t block) const {
        return detail::philox4x32({traj_, step_, block, salt_}, k0_, k1_);
    }

    /// Two independent standard Gaussians via Box-Muller on one block.
    void gaussian_pair(uint32_t block_idx, double& g0, double& g1) const {
        detail::u32x4 b = block(block_idx);
        uint64_t u0 = (static_cast<uint64_t>(b.v[0]) << 32) | b.v[1];
        uint64_t u1 = (static_cast<uint64_t>(b.v[2]) << 32) | b.v[3];
        double r = std::sqrt(-2.0 * std::log(detail::u64_to_unit(u0)));
        double t = 2.0 * pi * detail::u64_to_unit(u1);
        g0 = r * std::cos(t);
        g1 = r * std::sin(t);
    }

    /// Uniform double in [0, 1) from one block.
    double uniform(uint32_t block_idx) const {
        detail::u32x4 b = block(block_idx);
        uint64_t u = (static_cast<uint64_t>(b.v[0]) << 32) | b.v[1];
        return static_cast<double>(u >> 11) * 0x1.0p-53;
    }

private:
    uint32_t k0_, k1_, traj_, step_, salt_;
};

/// i.i.d. N(0, dt) Wiener increments; `count` of them, starting at block 0.
inline void wiener_increments(const CounterStream& stream, double dt,
                              std::span<double> out) {
    require(dt > 0.0, "wiener_increments: dt must be positive");
    double scale = std::sqrt(dt);
    std::size_t n = out.size();
    for (std::size_t i = 0; i + 1 < n; i += 2) {
        double g0, g1;
        stream.gaussian_pair(static_cast<uint32_t>(i / 2), g0, g1);
        out[i] = scale * g0;
        out[i + 1] = scale * g1;
    }
    if (n % 2 == 1) {
        double g0, g1;
        stream.gaussian_pair(static_cast<uint32_t>(n / 2), g0, g1);
        out[n - 1] = scale * g0;
    }
}

inline std::vector<double> wiener_increments(const CounterStream& stream,
                                             double dt, std::size_t count) {
    std::vector<double> out(count);
    wiener_increments(stream, dt, std::span<double>(out));
    return out;
}

}  // namespace ppcat

#endif

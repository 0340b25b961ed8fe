#ifndef PPCAT_COMMON_HPP
#define PPCAT_COMMON_HPP

#include <atomic>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ppcat {

using cplx = std::complex<double>;

inline constexpr double pi = 3.14159265358979323846;
inline constexpr cplx iu{0.0, 1.0};

/// Thrown when a caller violates a documented precondition.
struct contract_error : std::logic_error {
    using std::logic_error::logic_error;
};

/// Thrown when a run configuration fails validation; message names the field.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised by the Fock oracle when the truncation monitor trips.
struct truncation_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw contract_error(msg);
}

/// Runs fn(i) for i in [0, n) on up to n_threads workers.  Each index is
/// executed exactly once; any partitioning of indices over threads must give
/// identical results, so fn may only write to per-index state.
inline void parallel_for(std::size_t n, unsigned n_threads,
                         const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    unsigned hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    if (n_threads == 0) n_threads = hw;
    if (n_threads > n) n_threads = static_cast<unsigned>(n);
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    std::atomic<std::size_t> next{0};
    for (unsigned t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                fn(i);
            }
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace ppcat

#endif

#ifndef PPCAT_MODEL_HPP
#define PPCAT_MODEL_HPP

// Physical model of the two-photon-driven, dissipatively coupled resonator
// ring: drift / diffusion / noise terms of the phase-space SDEs, the drift
// gauges, the single-mode stability diagnostic and initial-state samplers.

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "ppcat/common.hpp"
#include "ppcat/rng.hpp"

namespace ppcat {

enum class Boundary { periodic, open };

/// Model rates and drive.  The site-dependent drive phase theta = 2*phi is
/// derived on the fly, never stored.
struct ModelParams {
    std::size_t n_sites = 1;
    cplx epsilon{1.0, 0.0};
    double kappa1 = 0.0;
    double kappa2 = 0.0;
    double gamma = 0.0;
    double phi = 0.0;
    Boundary boundary = Boundary::periodic;

    void validate() const {
        require(n_sites >= 1, "ModelParams: n_sites must be >= 1");
        require(kappa1 >= 0.0, "ModelParams: kappa1 must be >= 0");
        require(kappa2 >= 0.0, "ModelParams: kappa2 must be >= 0");
        require(gamma >= 0.0, "ModelParams: gamma must be >= 0");
        require(n_sites > 1 || gamma == 0.0,
                "ModelParams: single-mode reduction requires gamma = 0");
    }

    /// Drive at site j (0-based storage; the phase uses the 1-based site
    /// index): eps_j = epsilon * exp(-i * 2*phi * (j+1)).
    cplx epsilon_site(std::size_t j) const {
        if (phi == 0.0) return epsilon;
        double theta = 2.0 * phi * static_cast<double>(j + 1);
        return epsilon * std::polar(1.0, -theta);
    }
};

/// A point of the doubled phase space: one (alpha, beta) pair per site.
struct PhasePoint {
    std::vector<cplx> alpha;
    std::vector<cplx> beta;

    std::size_t n_sites() const { return alpha.size(); }
};

enum class Decomposition { diag_sqrt, split_four_noise };
enum class Gauge { none, choice1, choice2 };

/// Which diffusion-matrix decomposition drives the noise, and which drift
/// gauge (if any) is applied against it.
struct SchemeSpec {
    Decomposition decomposition = Decomposition::diag_sqrt;
    Gauge gauge = Gauge::none;

    /// Real noises per site: 2 for the diagonal square root, 4 for the split
    /// decomposition.
    std::size_t noises_per_site() const {
        return decomposition == Decomposition::diag_sqrt ? 2 : 4;
    }

    void validate() const {
        require(gauge != Gauge::choice1 ||
                    decomposition == Decomposition::split_four_noise,
                "SchemeSpec: choice1 gauge is defined against the 2x4 noise "
                "matrix (split_four_noise)");
        require(gauge != Gauge::choice2 ||
                    decomposition == Decomposition::diag_sqrt,
                "SchemeSpec: choice2 gauge is defined against the diagonal "
                "noise matrix (diag_sqrt)");
    }
};

namespace detail {

inline void check_point(const ModelParams& p, const PhasePoint& x,
                        const char* who) {
    require(x.alpha.size() == p.n_sites && x.beta.size() == p.n_sites,
            std::string(who) + ": point dimensions do not match n_sites");
}

}  // namespace detail

/// Per-site drift (A_alpha, A_beta).  Neighbor terms wrap on a periodic ring;
/// on an open chain the edge sites lose the missing hop and carry gamma/2
/// instead of gamma on-site, matching the open-chain Lindblad jump list.
inline std::array<cplx, 2> site_drift(const ModelParams& p, const PhasePoint& x,
                                      std::size_t j) {
    const std::size_t n = p.n_sites;
    const cplx eps_j = p.epsilon_site(j);
    const cplx a = x.alpha[j];
    const cplx b = x.beta[j];

    cplx da = (-p.kappa2 * a * a - 2.0 * iu * eps_j) * b;
    cplx db = (-p.kappa2 * b * b + 2.0 * iu * std::conj(eps_j)) * a;

    if (p.gamma != 0.0 && n > 1) {
        const cplx hop = std::polar(0.5 * p.gamma, p.phi);  // (gamma/2) e^{i phi}
        const bool periodic = p.boundary == Boundary::periodic;
        double links = 0.0;
        if (periodic || j + 1 < n) {
            std::size_t up = (j + 1) % n;
            da += hop * x.alpha[up];
            db += std::conj(hop) * x.beta[up];
            links += 1.0;
        }
        if (periodic || j > 0) {
            std::size_t dn = (j + n - 1) % n;
            da += std::conj(hop) * x.alpha[dn];
            db += hop * x.beta[dn];
            links += 1.0;
        }
        double onsite = 0.5 * p.gamma * links;
        da -= onsite * a;
        db -= onsite * b;
    }
    da -= 0.5 * p.kappa1 * a;
    db -= 0.5 * p.kappa1 * b;
    return {da, db};
}

/// Full drift vector; layout [A_alpha(0), A_beta(0), A_alpha(1), ...].
inline std::vector<cplx> drift(const ModelParams& p, const PhasePoint& x) {
    detail::check_point(p, x, "drift");
    std::vector<cplx> out(2 * p.n_sites);
    for (std::size_t j = 0; j < p.n_sites; ++j) {
        auto [da, db] = site_drift(p, x, j);
        out[2 * j] = da;
        out[2 * j + 1] = db;
    }
    return out;
}

/// Per-site 2x2 diffusion block diag(-k2 a^2 - 2i eps_j, -k2 b^2 + 2i eps_j*).
inline std::array<cplx, 2> site_diffusion_diag(const ModelParams& p,
                                               const PhasePoint& x,
                                               std::size_t j) {
    const cplx eps_j = p.epsilon_site(j);
    return {-p.kappa2 * x.alpha[j] * x.alpha[j] - 2.0 * iu * eps_j,
            -p.kappa2 * x.beta[j] * x.beta[j] + 2.0 * iu * std::conj(eps_j)};
}

/// 2N x 2N block-diagonal diffusion matrix in the [a0, b0, a1, b1, ...] basis.
inline Eigen::MatrixXcd diffusion_matrix(const ModelParams& p,
                                         const PhasePoint& x) {
    detail::check_point(p, x, "diffusion_matrix");
    Eigen::MatrixXcd d = Eigen::MatrixXcd::Zero(2 * p.n_sites, 2 * p.n_sites);
    for (std::size_t j = 0; j < p.n_sites; ++j) {
        auto blk = site_diffusion_diag(p, x, j);
        d(2 * j, 2 * j) = blk[0];
        d(2 * j + 1, 2 * j + 1) = blk[1];
    }
    return d;
}

/// Per-site noise block, row-major; 2 columns for diag_sqrt, 4 for
/// split_four_noise.  Square roots are the principal complex branch.
struct NoiseBlock {
    std::array<cplx, 8> b{};  // b[row * cols + col]
    std::size_t cols = 2;

    cplx operator()(std::size_t row, std::size_t col) const {
        return b[row * cols + col];
    }
};

inline NoiseBlock site_noise(const SchemeSpec& s, const ModelParams& p,
                             const PhasePoint& x, std::size_t j) {
    const cplx eps_j = p.epsilon_site(j);
    NoiseBlock blk;
    if (s.decomposition == Decomposition::diag_sqrt) {
        auto d = site_diffusion_diag(p, x, j);
        blk.cols = 2;
        blk.b[0] = std::sqrt(d[0]);
        blk.b[3] = std::sqrt(d[1]);
    } else {
        const double sk2 = std::sqrt(p.kappa2);
        blk.cols = 4;
        blk.b[0] = std::sqrt(-2.0 * iu * eps_j);
        blk.b[2] = iu * x.alpha[j] * sk2;
        blk.b[5] = std::sqrt(2.0 * iu * std::conj(eps_j));
        blk.b[7] = iu * x.beta[j] * sk2;
    }
    return blk;
}

/// Full noise matrix B with D = B B^T; block-diagonal, one row pair and
/// `noises_per_site` columns per site.
inline Eigen::MatrixXcd noise_matrix(const SchemeSpec& s, const ModelParams& p,
                                     const PhasePoint& x) {
    detail::check_point(p, x, "noise_matrix");
    s.validate();
    const std::size_t m = s.noises_per_site();
    Eigen::MatrixXcd b = Eigen::MatrixXcd::Zero(2 * p.n_sites, m * p.n_sites);
    for (std::size_t j = 0; j < p.n_sites; ++j) {
        NoiseBlock blk = site_noise(s, p, x, j);
        for (std::size_t r = 0; r < 2; ++r)
            for (std::size_t c = 0; c < m; ++c)
                b(2 * j + r, m * j + c) = blk(r, c);
    }
    return b;
}

/// Per-site gauge functions against the scheme's noise decomposition; all
/// zeros for Gauge::none.  Out has `noises_per_site` valid entries.
inline std::array<cplx, 4> site_gauge(const SchemeSpec& s, const ModelParams& p,
                                      const PhasePoint& x, std::size_t j) {
    s.validate();
    std::array<cplx, 4> g{};
    const cplx a = x.alpha[j];
    const cplx b = x.beta[j];
    const cplx eps_j = p.epsilon_site(j);
    switch (s.gauge) {
        case Gauge::none:
            break;
        case Gauge::choice1: {
            const cplx ab = a * b;
            const cplx rest = iu * std::sqrt(p.kappa2) * (ab - std::abs(ab));
            g[0] = b * std::sqrt(-2.0 * iu * eps_j);
            g[1] = a * std::sqrt(2.0 * iu * std::conj(eps_j));
            g[2] = rest;
            g[3] = rest;
            break;
        }
        case Gauge::choice2: {
            const cplx sa = std::sqrt(-2.0 * iu * eps_j - p.kappa2 * a * a);
            const cplx sb =
                std::sqrt(2.0 * iu * std::conj(eps_j) - p.kappa2 * b * b);
            g[0] = b * sa + a * std::conj(sa);
            g[1] = a * sb + b * std::conj(sb);
            break;
        }
    }
    return g;
}

/// Full gauge vector, layout matching noise_matrix columns.
inline std::vector<cplx> gauge_vector(const SchemeSpec& s, const ModelParams& p,
                                      const PhasePoint& x) {
    detail::check_point(p, x, "gauge_vector");
    const std::size_t m = s.noises_per_site();
    std::vector<cplx> g(m * p.n_sites);
    for (std::size_t j = 0; j < p.n_sites; ++j) {
        auto gj = site_gauge(s, p, x, j);
        for (std::size_t c = 0; c < m; ++c) g[m * j + c] = gj[c];
    }
    return g;
}

/// Drift-only time derivative of I = |alpha|^2 + |beta|^2 for a single mode.
/// Positive values signal trajectories escaping toward infinity.
inline double stability_rate(const ModelParams& p, const PhasePoint& x) {
    require(p.n_sites == 1, "stability_rate: defined for single mode only");
    detail::check_point(p, x, "stability_rate");
    const cplx a = x.alpha[0];
    const cplx b = x.beta[0];
    const cplx ab = a * b;
    const double I = std::norm(a) + std::norm(b);
    // 8 Im(eps_1 b a*) reduces to -8 eps Im(a b*) for a real drive.
    return 8.0 * std::imag(p.epsilon_site(0) * b * std::conj(a)) -
           p.kappa1 * I - 2.0 * p.kappa2 * I * std::real(ab);
}

/// Vacuum: all amplitudes exactly zero.
inline PhasePoint sample_vacuum(std::size_t n_sites) {
    require(n_sites >= 1, "sample_vacuum: n_sites must be >= 1");
    PhasePoint x;
    x.alpha.assign(n_sites, cplx{0.0, 0.0});
    x.beta.assign(n_sites, cplx{0.0, 0.0});
    return x;
}

/// One single-mode cat-state sample and its trajectory weight.
struct CatSample {
    PhasePoint point;
    cplx weight{1.0, 0.0};
};

/// Draws (alpha, beta) from the four-atom cat distribution
///   d(+,+) + d(-,-) + sign * e^{-2|zeta|^2} [d(+,-) + d(-,+)],
/// atoms at (alpha, beta) = (+-zeta, +-zeta*).  Probabilities are the
/// magnitudes renormalized to one; for the odd cat the atom sign and the
/// signed-vs-absolute normalization land in the returned weight, which is
/// exactly 1 for the even cat.
inline CatSample sample_cat(cplx zeta, int sign, const CounterStream& stream,
                            uint32_t block = 0) {
    require(sign == 1 || sign == -1, "sample_cat: sign must be +1 or -1");
    const double w = std::exp(-2.0 * std::norm(zeta));
    require(sign == 1 || w < 1.0,
            "sample_cat: odd cat requires |zeta| > 0 (zero norm otherwise)");
    const double z_abs = 2.0 + 2.0 * w;
    const double z_signed = 2.0 + 2.0 * sign * w;

    const double u = stream.uniform(block) * z_abs;
    // Atom order: (+,+), (-,-), (+,-), (-,+).
    int atom = u < 1.0 ? 0 : (u < 2.0 ? 1 : (u < 2.0 + w ? 2 : 3));

    CatSample out;
    out.point.alpha.resize(1);
    out.point.beta.resize(1);
    const cplx zc = std::conj(zeta);
    switch (atom) {
        case 0: out.point.alpha[0] = zeta;  out.point.beta[0] = zc;  break;
        case 1: out.point.alpha[0] = -zeta; out.point.beta[0] = -zc; break;
        case 2: out.point.alpha[0] = zeta;  out.point.beta[0] = -zc; break;
        default: out.point.alpha[0] = -zeta; out.point.beta[0] = zc; break;
    }
    double atom_sign = (atom >= 2 && sign == -1) ? -1.0 : 1.0;
    out.weight = atom_sign * z_abs / z_signed;
    return out;
}

}  // namespace ppcat

#endif

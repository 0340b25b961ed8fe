#ifndef PPCAT_RECONSTRUCTION_HPP
#define PPCAT_RECONSTRUCTION_HPP

// Density-matrix reconstruction from trajectory samples via the kernel
// operator Lambda(alpha, beta), and Wigner functions by displaced-parity
// evaluation on the truncated Fock space.

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "ppcat/common.hpp"
#include "ppcat/estimators.hpp"
#include "ppcat/fock.hpp"
#include "ppcat/momentum.hpp"
#include "ppcat/sde.hpp"

namespace ppcat {

struct KernelFlags {
    bool clamped = false;          // magnitude capped at e^300
    double trace_deviation = 0.0;  // |Tr Lambda - 1| on the truncated space
    bool truncation_warning = false;
};

/// <m|Lambda|n> = e^{-alpha beta} alpha^m beta^n / sqrt(m! n!), factorials in
/// log space.  Far-out samples are clamped at e^300 (flagged) instead of
/// overflowing.
inline Eigen::MatrixXcd kernel_fock(cplx alpha, cplx beta, std::size_t cutoff,
                                    KernelFlags* flags = nullptr,
                                    double trace_warn_bound = 1e-6) {
    const auto d = static_cast<Eigen::Index>(cutoff + 1);
    Eigen::VectorXcd u(d), v(d);
    u(0) = 1.0;
    v(0) = 1.0;
    for (Eigen::Index m = 1; m < d; ++m) {
        const double rs = 1.0 / std::sqrt(static_cast<double>(m));
        u(m) = u(m - 1) * alpha * rs;
        v(m) = v(m - 1) * beta * rs;
    }
    cplx expo = -alpha * beta;
    // Worst-case exponent of any element decides between the rank-1 fast
    // path and the clamped element-wise path.
    double lu = 0.0, lv = 0.0;
    for (Eigen::Index m = 0; m < d; ++m) {
        lu = std::max(lu, std::log(std::max(std::abs(u(m)), 1e-300)));
        lv = std::max(lv, std::log(std::max(std::abs(v(m)), 1e-300)));
    }
    Eigen::MatrixXcd lam;
    if (expo.real() + lu + lv <= 300.0) {
        lam = std::exp(expo) * (u * v.transpose());
    } else {
        if (flags) flags->clamped = true;
        lam.resize(d, d);
        for (Eigen::Index m = 0; m < d; ++m)
            for (Eigen::Index n = 0; n < d; ++n) {
                cplx w = u(m) * v(n);
                double mag = std::abs(w);
                double ex = expo.real() + std::log(std::max(mag, 1e-300));
                if (ex > 300.0) {
                    // keep the phase, cap the magnitude
                    double scale = std::exp(300.0 - std::log(std::max(mag, 1e-300)));
                    lam(m, n) = w * scale * std::exp(cplx{0.0, expo.imag()});
                } else {
                    lam(m, n) = w * std::exp(expo);
                }
            }
    }
    if (flags) {
        flags->trace_deviation = std::abs(lam.trace() - cplx{1.0, 0.0});
        flags->truncation_warning = flags->trace_deviation > trace_warn_bound;
    }
    return lam;
}

/// Which single mode the kernel reconstruction targets.
struct ModeSelector {
    enum class Kind { site, momentum } kind = Kind::site;
    std::size_t index = 0;
};

struct ReconstructionResult {
    FockDensityMatrix rho;
    double trace_re = 0.0;
    double hermiticity_deviation = 0.0;
    std::size_t clamped_samples = 0;
    std::size_t truncation_warnings = 0;
    std::vector<Eigen::MatrixXcd> sub_means;  // per-subensemble averages
};

namespace detail {

struct KernelAccum {
    Eigen::MatrixXcd sum;
    std::size_t count = 0;
    std::size_t clamped = 0;
    std::size_t trunc = 0;
};

inline void kernel_accumulate(KernelAccum& acc, cplx alpha, cplx beta, cplx weight,
                              std::size_t cutoff) {
    KernelFlags fl;
    Eigen::MatrixXcd lam = kernel_fock(alpha, beta, cutoff, &fl);
    acc.sum += weight * lam;
    acc.count += 1;
    acc.clamped += fl.clamped ? 1 : 0;
    acc.trunc += fl.truncation_warning ? 1 : 0;
}

inline ReconstructionResult finalize_reconstruction(
    std::vector<KernelAccum>& cells, std::size_t cutoff) {
    ReconstructionResult out;
    out.rho.n_modes = 1;
    out.rho.cutoff = cutoff;
    const auto d = static_cast<Eigen::Index>(cutoff + 1);
    out.rho.rho = Eigen::MatrixXcd::Zero(d, d);
    std::size_t total = 0;
    for (auto& c : cells) {
        out.clamped_samples += c.clamped;
        out.truncation_warnings += c.trunc;
        total += c.count;
        if (c.count > 0)
            out.sub_means.push_back(c.sum / static_cast<double>(c.count));
        out.rho.rho += c.sum;
    }
    if (total > 0) out.rho.rho /= static_cast<double>(total);
    out.trace_re = out.rho.rho.trace().real();
    out.hermiticity_deviation = out.rho.hermiticity_deviation();
    return out;
}

}  // namespace detail

/// rho = <(Omega) Lambda(alpha_sel, beta_sel)> over an in-memory sample list;
/// the momentum selector Fourier-transforms each trajectory first.
inline ReconstructionResult reconstruct_density(
    std::span<const TrajectoryState> ensemble, const ModeSelector& sel,
    std::size_t cutoff, bool weighted = true, std::size_t subensembles = 1) {
    require(!ensemble.empty(), "reconstruct_density: empty ensemble");
    const std::size_t n_sites = ensemble.front().point.n_sites();
    require(sel.index < n_sites, "reconstruct_density: mode index out of range");
    std::optional<MomentumGrid> grid;
    if (sel.kind == ModeSelector::Kind::momentum) grid.emplace(n_sites);

    const auto d = static_cast<Eigen::Index>(cutoff + 1);
    std::vector<detail::KernelAccum> cells(subensembles);
    for (auto& c : cells) c.sum = Eigen::MatrixXcd::Zero(d, d);
    const std::size_t per = ensemble.size() / std::max<std::size_t>(subensembles, 1);
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        const auto& st = ensemble[i];
        if (st.diverged()) continue;
        cplx a, b;
        if (grid) {
            PhasePoint pk = to_momentum(st.point, *grid);
            a = pk.alpha[sel.index];
            b = pk.beta[sel.index];
        } else {
            a = st.point.alpha[sel.index];
            b = st.point.beta[sel.index];
        }
        std::size_t sub = per > 0 ? std::min(i / per, subensembles - 1) : 0;
        detail::kernel_accumulate(cells[sub], a, b, weighted ? st.weight : cplx{1.0, 0.0},
                                  cutoff);
    }
    return detail::finalize_reconstruction(cells, cutoff);
}

/// Engine observer that reconstructs one mode at selected record indices.
class KernelObserver : public EnsembleObserver {
public:
    KernelObserver(ModeSelector sel, std::size_t cutoff,
                   std::vector<std::size_t> record_indices)
        : sel_(sel), cutoff_(cutoff), wanted_(std::move(record_indices)) {}

    void begin_run(const RunConfig& cfg,
                   const std::vector<double>& record_times) override {
        s_ = cfg.n_subensembles;
        n_rec_ = record_times.size();
        if (sel_.kind == ModeSelector::Kind::momentum)
            grid_.emplace(cfg.params.n_sites, cfg.params.phi);
        const auto d = static_cast<Eigen::Index>(cutoff_ + 1);
        slot_of_.assign(n_rec_, SIZE_MAX);
        for (std::size_t w = 0; w < wanted_.size(); ++w) {
            require(wanted_[w] < n_rec_, "KernelObserver: record index out of range");
            slot_of_[wanted_[w]] = w;
        }
        cells_.assign(wanted_.size() * s_, detail::KernelAccum{});
        for (auto& c : cells_) c.sum = Eigen::MatrixXcd::Zero(d, d);
    }

    void accumulate(std::size_t rec, std::size_t sub,
                    const TrajectoryState& st) override {
        const std::size_t slot = slot_of_[rec];
        if (slot == SIZE_MAX) return;
        cplx a, b;
        if (grid_) {
            PhasePoint pk = to_momentum(st.point, *grid_);
            a = pk.alpha[sel_.index];
            b = pk.beta[sel_.index];
        } else {
            a = st.point.alpha[sel_.index];
            b = st.point.beta[sel_.index];
        }
        detail::kernel_accumulate(cells_[slot * s_ + sub], a, b, st.weight, cutoff_);
    }

    ReconstructionResult result(std::size_t slot) const {
        require(slot < wanted_.size(), "KernelObserver: bad slot");
        std::vector<detail::KernelAccum> cells(cells_.begin() + static_cast<std::ptrdiff_t>(slot * s_),
                                               cells_.begin() + static_cast<std::ptrdiff_t>((slot + 1) * s_));
        return detail::finalize_reconstruction(cells, cutoff_);
    }

private:
    ModeSelector sel_;
    std::size_t cutoff_;
    std::vector<std::size_t> wanted_;
    std::vector<std::size_t> slot_of_;
    std::optional<MomentumGrid> grid_;
    std::size_t s_ = 0, n_rec_ = 0;
    std::vector<detail::KernelAccum> cells_;
};

// --- Wigner function ---------------------------------------------------------

/// W on a uniform grid with alpha0 = x + i p and the convention
/// integral W d^2alpha = Tr rho, so W(0,0) = (2/pi) Tr[rho Pi].
struct WignerGrid {
    std::vector<double> x_axis, p_axis;
    Eigen::MatrixXd values;  // values(ix, ip)
    bool extent_warning = false;

    double at(std::size_t ix, std::size_t ip) const {
        return values(static_cast<Eigen::Index>(ix), static_cast<Eigen::Index>(ip));
    }
};

struct WignerSpec {
    double x_min = -4.0, x_max = 4.0;
    std::size_t nx = 81;
    double p_min = -4.0, p_max = 4.0;
    std::size_t np = 81;
};

namespace detail {

/// <m|D(alpha)|n> via associated Laguerre recurrences (Cahill-Glauber).
inline Eigen::MatrixXcd displacement_matrix(cplx alpha, std::size_t cutoff) {
    const auto d = static_cast<Eigen::Index>(cutoff + 1);
    const double x = std::norm(alpha);
    const double pref = std::exp(-0.5 * x);
    Eigen::MatrixXcd dm(d, d);
    for (Eigen::Index n = 0; n < d; ++n) {
        // column n: m >= n uses alpha^{m-n}, m < n uses (-conj(alpha))^{n-m}
        for (Eigen::Index m = n; m < d; ++m) {
            const auto diff = static_cast<std::size_t>(m - n);
            // sqrt(n!/m!) alpha^{m-n} L_n^{(m-n)}(x)
            double lag_km1 = 1.0;  // L_0
            double lag_k = 1.0 + static_cast<double>(diff) - x;  // L_1
            double lag = (n == 0) ? 1.0 : (n == 1 ? lag_k : 0.0);
            for (Eigen::Index k = 1; k < n; ++k) {
                double next = ((2.0 * static_cast<double>(k) + 1.0 +
                                static_cast<double>(diff) - x) *
                                   lag_k -
                               (static_cast<double>(k) + static_cast<double>(diff)) *
                                   lag_km1) /
                              (static_cast<double>(k) + 1.0);
                lag_km1 = lag_k;
                lag_k = next;
                lag = next;
            }
            cplx amp{pref * lag, 0.0};
            for (std::size_t t = 1; t <= diff; ++t)
                amp *= alpha / std::sqrt(static_cast<double>(n) + static_cast<double>(t));
            dm(m, n) = amp;
            if (m != n) {
                // <n|D|m> = (-conj(alpha))^{m-n} ... : fill the transpose slot
                cplx amp2{pref * lag, 0.0};
                for (std::size_t t = 1; t <= diff; ++t)
                    amp2 *= -std::conj(alpha) /
                            std::sqrt(static_cast<double>(n) + static_cast<double>(t));
                dm(n, m) = amp2;
            }
        }
    }
    return dm;
}

}  // namespace detail

/// Displaced-parity Wigner transform, exact on the truncated space.
inline WignerGrid wigner(const FockDensityMatrix& rho_in, const WignerSpec& spec) {
    require(rho_in.n_modes == 1, "wigner: single-mode density matrix required");
    FockDensityMatrix rho = rho_in;
    rho.hermitize();
    const std::size_t cutoff = rho.cutoff;
    const auto d = static_cast<Eigen::Index>(cutoff + 1);

    WignerGrid out;
    out.x_axis.resize(spec.nx);
    out.p_axis.resize(spec.np);
    for (std::size_t i = 0; i < spec.nx; ++i)
        out.x_axis[i] = spec.nx == 1 ? spec.x_min
                                     : spec.x_min + (spec.x_max - spec.x_min) *
                                           static_cast<double>(i) /
                                           static_cast<double>(spec.nx - 1);
    for (std::size_t i = 0; i < spec.np; ++i)
        out.p_axis[i] = spec.np == 1 ? spec.p_min
                                     : spec.p_min + (spec.p_max - spec.p_min) *
                                           static_cast<double>(i) /
                                           static_cast<double>(spec.np - 1);
    out.values.resize(static_cast<Eigen::Index>(spec.nx),
                      static_cast<Eigen::Index>(spec.np));

    double corner = 0.0;
    for (double xv : {spec.x_min, spec.x_max})
        for (double pv : {spec.p_min, spec.p_max})
            corner = std::max(corner, xv * xv + pv * pv);
    out.extent_warning =
        static_cast<double>(cutoff) < corner + 4.0 * std::sqrt(corner) + 2.0;

    Eigen::VectorXd par(d);
    for (Eigen::Index n = 0; n < d; ++n) par(n) = (n % 2 == 0) ? 1.0 : -1.0;

    for (std::size_t ix = 0; ix < spec.nx; ++ix) {
        for (std::size_t ip = 0; ip < spec.np; ++ip) {
            const cplx a0{out.x_axis[ix], out.p_axis[ip]};
            Eigen::MatrixXcd dm = detail::displacement_matrix(a0, cutoff);
            // (2/pi) sum_n (-1)^n <n| D^+ rho D |n>
            Eigen::MatrixXcd rd = rho.rho * dm;
            double w = 0.0;
            for (Eigen::Index n = 0; n < d; ++n)
                w += par(n) * dm.col(n).dot(rd.col(n)).real();
            out.values(static_cast<Eigen::Index>(ix), static_cast<Eigen::Index>(ip)) =
                (2.0 / pi) * w;
        }
    }
    return out;
}

}  // namespace ppcat

#endif

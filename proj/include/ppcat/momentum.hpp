#ifndef PPCAT_MOMENTUM_HPP
#define PPCAT_MOMENTUM_HPP

// Quasimomentum-space analysis: plane-wave transform of the trajectory
// variables, dark-mode occupations, antipropagating correlations and the
// Cauchy-Schwarz ratio.

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "ppcat/common.hpp"
#include "ppcat/estimators.hpp"
#include "ppcat/sde.hpp"

namespace ppcat {

/// The quasimomentum grid {2 pi m / N : m = 1..N}, re-centered onto
/// (-pi, pi], with the index of the dark mode k = phi and the (k, -k)
/// partner pairing.  Index i holds m = i + 1.
struct MomentumGrid {
    std::vector<double> k_values;
    std::size_t dark_index = 0;
    std::vector<std::size_t> partner;  // index of -k (self for k = 0, pi)

    explicit MomentumGrid(std::size_t n_sites, double phi = 0.0) {
        require(n_sites >= 1, "MomentumGrid: n_sites must be >= 1");
        const double step = 2.0 * pi / static_cast<double>(n_sites);
        k_values.resize(n_sites);
        partner.resize(n_sites);
        for (std::size_t i = 0; i < n_sites; ++i) {
            double k = step * static_cast<double>(i + 1);
            if (k > pi + 1e-12) k -= 2.0 * pi;
            k_values[i] = k;
        }
        for (std::size_t i = 0; i < n_sites; ++i) {
            std::size_t m = i + 1;  // -k has m' = N - m; m = N maps to itself
            partner[i] = (m == n_sites) ? i : (n_sites - m) - 1;
        }
        // Dark mode: grid point nearest phi (phi re-centered the same way).
        double phir = std::remainder(phi, 2.0 * pi);
        if (phir <= -pi) phir += 2.0 * pi;
        double best = 1e300;
        for (std::size_t i = 0; i < n_sites; ++i) {
            double d = std::abs(std::remainder(k_values[i] - phir, 2.0 * pi));
            if (d < best - 1e-12) {
                best = d;
                dark_index = i;
            }
        }
    }

    std::size_t n_modes() const { return k_values.size(); }
};

/// Plane-wave transform alpha_k = N^{-1/2} sum_j e^{i j k} alpha_j with the
/// conjugate phase on the beta side, so <beta_k alpha_k> estimates <b_k+ b_k>.
/// Site index j is 1-based in the phases, matching the drive convention.
inline PhasePoint to_momentum(const PhasePoint& x, const MomentumGrid& grid) {
    const std::size_t n = x.n_sites();
    require(grid.n_modes() == n, "to_momentum: grid size mismatch");
    PhasePoint out;
    out.alpha.assign(n, cplx{});
    out.beta.assign(n, cplx{});
    const double norm = 1.0 / std::sqrt(static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const double k = grid.k_values[i];
        cplx sa{0.0, 0.0}, sb{0.0, 0.0};
        for (std::size_t j = 0; j < n; ++j) {
            const cplx ph = std::polar(1.0, k * static_cast<double>(j + 1));
            sa += ph * x.alpha[j];
            sb += std::conj(ph) * x.beta[j];
        }
        out.alpha[i] = norm * sa;
        out.beta[i] = norm * sb;
    }
    return out;
}

/// Accumulates the momentum-space moments needed for n_k, the antipropagating
/// second-order correlations and the Cauchy-Schwarz ratio, per
/// (record, subensemble).  The transform is applied trajectory by trajectory.
class MomentumObserver : public EnsembleObserver {
public:
    struct Cell {
        std::vector<cplx> nk;    // sum w alpha_k beta_k
        std::vector<cplx> nk2;   // sum w (alpha_k beta_k)^2
        std::vector<cplx> anti;  // sum w (alpha_k beta_k)(alpha_-k beta_-k)
        std::size_t count = 0;
    };

    void begin_run(const RunConfig& cfg,
                   const std::vector<double>& record_times) override {
        grid_.emplace(cfg.params.n_sites, cfg.params.phi);
        n_rec_ = record_times.size();
        s_ = cfg.n_subensembles;
        const std::size_t n = cfg.params.n_sites;
        cells_.assign(n_rec_ * s_, Cell{});
        for (auto& c : cells_) {
            c.nk.assign(n, cplx{});
            c.nk2.assign(n, cplx{});
            c.anti.assign(n, cplx{});
        }
        // Transform phases cached once: ph[i * n + j] = e^{i k_i (j+1)} / sqrt(N).
        phases_.resize(n * n);
        const double norm = 1.0 / std::sqrt(static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                phases_[i * n + j] =
                    norm * std::polar(1.0, grid_->k_values[i] *
                                               static_cast<double>(j + 1));
    }

    void accumulate(std::size_t rec, std::size_t sub,
                    const TrajectoryState& st) override {
        Cell& c = cells_[rec * s_ + sub];
        const std::size_t n = grid_->n_modes();
        static thread_local std::vector<cplx> prod;
        prod.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            cplx sa{0.0, 0.0}, sb{0.0, 0.0};
            const cplx* ph = phases_.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                sa += ph[j] * st.point.alpha[j];
                sb += std::conj(ph[j]) * st.point.beta[j];
            }
            prod[i] = sa * sb;  // alpha_k beta_k
        }
        const cplx w = st.weight;
        for (std::size_t i = 0; i < n; ++i) {
            c.nk[i] += w * prod[i];
            c.nk2[i] += w * prod[i] * prod[i];
            c.anti[i] += w * prod[i] * prod[grid_->partner[i]];
        }
        c.count += 1;
    }

    const MomentumGrid& grid() const { return *grid_; }
    const Cell& cell(std::size_t rec, std::size_t sub) const {
        return cells_[rec * s_ + sub];
    }
    std::size_t n_records() const { return n_rec_; }
    std::size_t n_subensembles() const { return s_; }

private:
    std::optional<MomentumGrid> grid_;
    std::size_t n_rec_ = 0, s_ = 0;
    std::vector<Cell> cells_;
    std::vector<cplx> phases_;
};

/// Momentum observables at one record index.
struct MomentumSnapshot {
    std::vector<double> k_values;
    std::size_t dark_index = 0;
    std::vector<std::size_t> partner;

    std::vector<double> n_k, n_k_se;
    std::vector<double> ratio, ratio_se;      // n_k / n_phi
    std::vector<bool> ratio_low_snr;
    std::vector<double> g2t, g2t_se;          // normalized g~2(k,-k)
    std::vector<double> g2tt, g2tt_se;        // unnormalized
    std::vector<bool> g2t_low_snr;
    std::vector<double> rcs, rcs_se;          // Cauchy-Schwarz ratio
    std::vector<bool> rcs_low_snr;
};

/// n_k, n_k/n_phi, g~2(k,-k) (normalized and unnormalized) and R_CS(k,-k)
/// with subensemble errors.  The Cauchy-Schwarz moments are the normally
/// ordered phase-space averages; for the self-paired dark mode the same
/// formulas apply with k = -k.
inline MomentumSnapshot momentum_snapshot(const MomentumObserver& obs,
                                          std::size_t rec) {
    const MomentumGrid& grid = obs.grid();
    const std::size_t n = grid.n_modes();
    const std::size_t s = obs.n_subensembles();
    require(s >= 2, "momentum_snapshot: need s >= 2");

    MomentumSnapshot out;
    out.k_values = grid.k_values;
    out.dark_index = grid.dark_index;
    out.partner = grid.partner;
    auto sized = [&](auto& v) { v.resize(n); };
    sized(out.n_k); sized(out.n_k_se);
    sized(out.ratio); sized(out.ratio_se);
    sized(out.g2t); sized(out.g2t_se);
    sized(out.g2tt); sized(out.g2tt_se);
    sized(out.rcs); sized(out.rcs_se);
    out.ratio_low_snr.assign(n, false);
    out.g2t_low_snr.assign(n, false);
    out.rcs_low_snr.assign(n, false);

    std::vector<double> v(s), v2(s);
    auto stats = [&](std::vector<double>& vals) {
        return subensemble_stats(std::span<const double>(vals));
    };

    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ip = grid.partner[i];
        for (std::size_t q = 0; q < s; ++q) {
            const auto& c = obs.cell(rec, q);
            const double cnt = static_cast<double>(c.count);
            v[q] = cnt > 0.0 ? (c.nk[i] / cnt).real() : 0.0;
        }
        SubStats st = stats(v);
        out.n_k[i] = st.mean.real();
        out.n_k_se[i] = st.se;

        // Ratios against the dark mode, per subensemble.
        for (std::size_t q = 0; q < s; ++q) {
            const auto& c = obs.cell(rec, q);
            const double cnt = static_cast<double>(c.count);
            double nd = cnt > 0.0 ? (c.nk[grid.dark_index] / cnt).real() : 0.0;
            v[q] = nd != 0.0 ? (c.nk[i] / cnt).real() / nd : 0.0;
        }
        st = stats(v);
        out.ratio[i] = st.mean.real();
        out.ratio_se[i] = st.se;

        // Unnormalized and normalized antipropagating g2.
        for (std::size_t q = 0; q < s; ++q) {
            const auto& c = obs.cell(rec, q);
            const double cnt = static_cast<double>(c.count);
            double num = cnt > 0.0 ? (c.anti[i] / cnt).real() : 0.0;
            double nk = cnt > 0.0 ? (c.nk[i] / cnt).real() : 0.0;
            double nkp = cnt > 0.0 ? (c.nk[ip] / cnt).real() : 0.0;
            v[q] = num;
            v2[q] = (nk != 0.0 && nkp != 0.0) ? num / (nk * nkp) : 0.0;
        }
        st = stats(v);
        out.g2tt[i] = st.mean.real();
        out.g2tt_se[i] = st.se;
        st = stats(v2);
        out.g2t[i] = st.mean.real();
        out.g2t_se[i] = st.se;

        // Cauchy-Schwarz ratio |<n_k n_-k>| / sqrt(<:n_k^2:><:n_-k^2:>).
        bool rcs_def = true;
        for (std::size_t q = 0; q < s; ++q) {
            const auto& c = obs.cell(rec, q);
            const double cnt = static_cast<double>(c.count);
            if (cnt == 0.0) {
                rcs_def = false;
                break;
            }
            double num = std::abs(c.anti[i] / cnt);
            double d1 = (c.nk2[i] / cnt).real();
            double d2 = (c.nk2[ip] / cnt).real();
            if (d1 <= 0.0 || d2 <= 0.0) {
                rcs_def = false;
                break;
            }
            v[q] = num / std::sqrt(d1 * d2);
        }
        if (rcs_def) {
            st = stats(v);
            out.rcs[i] = st.mean.real();
            out.rcs_se[i] = st.se;
        } else {
            out.rcs[i] = 0.0;
            out.rcs_se[i] = 0.0;
            out.rcs_low_snr[i] = true;
        }
    }

    // SNR flags: dark-mode occupation at the noise floor makes the ratios
    // meaningless; second moments below 3 sigma of zero flag R_CS.
    double nd = out.n_k[grid.dark_index];
    double nd_se = out.n_k_se[grid.dark_index];
    for (std::size_t i = 0; i < n; ++i) {
        if (nd <= nd_se) out.ratio_low_snr[i] = true;
        const std::size_t ip = grid.partner[i];
        if (out.n_k[i] <= 3.0 * out.n_k_se[i] ||
            out.n_k[ip] <= 3.0 * out.n_k_se[ip])
            out.g2t_low_snr[i] = true;
        // Second-moment significance for the Cauchy-Schwarz denominator.
        std::vector<double> m2(obs.n_subensembles());
        for (std::size_t q = 0; q < obs.n_subensembles(); ++q) {
            const auto& c = obs.cell(rec, q);
            const double cnt = static_cast<double>(c.count);
            m2[q] = cnt > 0.0 ? (c.nk2[i] / cnt).real() : 0.0;
        }
        SubStats sm = subensemble_stats(std::span<const double>(m2));
        if (sm.mean.real() <= 3.0 * sm.se) out.rcs_low_snr[i] = true;
    }
    return out;
}

}  // namespace ppcat

#endif

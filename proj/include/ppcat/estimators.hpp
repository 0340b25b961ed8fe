#ifndef PPCAT_ESTIMATORS_HPP
#define PPCAT_ESTIMATORS_HPP

// Ensemble -> physical observables with subensemble statistical errors,
// weighted (gauge-P) estimators, spike detection and regime classification.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ppcat/common.hpp"
#include "ppcat/sde.hpp"

namespace ppcat {

/// Mean and standard error over subensemble means O_j:
/// sigma_SE = sqrt(var(O_j)/(s-1)) with var the population variance, i.e.
/// sqrt(sum |O_j - mean|^2 / (s (s-1))).  Welford accumulation keeps the
/// result exactly zero for identical inputs.
struct SubStats {
    cplx mean{0.0, 0.0};
    double se = 0.0;
};

inline SubStats subensemble_stats(std::span<const cplx> sub_means) {
    require(sub_means.size() >= 2, "subensemble_stats: need s >= 2");
    cplx m{0.0, 0.0};
    double m2 = 0.0;
    std::size_t n = 0;
    for (cplx x : sub_means) {
        ++n;
        cplx d = x - m;
        m += d / static_cast<double>(n);
        m2 += (d * std::conj(x - m)).real();
    }
    double s = static_cast<double>(n);
    return {m, std::sqrt(std::max(0.0, m2) / (s * (s - 1.0)))};
}

inline SubStats subensemble_stats(std::span<const double> sub_means) {
    static thread_local std::vector<cplx> tmp;
    tmp.assign(sub_means.begin(), sub_means.end());
    return subensemble_stats(std::span<const cplx>(tmp));
}

/// Partitions per-trajectory values into s contiguous index-order blocks and
/// returns the statistics of the block means.
inline SubStats subensemble_error(std::span<const cplx> values, std::size_t s) {
    require(s >= 2, "subensemble_error: need s >= 2");
    require(values.size() % s == 0 && !values.empty(),
            "subensemble_error: trajectory count must be divisible by s");
    const std::size_t per = values.size() / s;
    std::vector<cplx> means(s);
    for (std::size_t j = 0; j < s; ++j) {
        cplx acc{0.0, 0.0};
        for (std::size_t i = 0; i < per; ++i) acc += values[j * per + i];
        means[j] = acc / static_cast<double>(per);
    }
    return subensemble_stats(std::span<const cplx>(means));
}

/// Time series of one observable with subensemble errors and diagnostics.
struct ObservableSeries {
    std::string name;
    std::vector<double> times;
    std::vector<cplx> mean;
    std::vector<double> se;
    std::vector<bool> defined;      // false on 0/0 estimates (see g2)
    std::vector<bool> spike_flags;  // filled by spike_detect
    std::vector<double> divergence_fraction;
    int subensembles = 0;

    std::size_t size() const { return times.size(); }
    double real_at(std::size_t i) const { return mean[i].real(); }
};

/// Parity estimator exponent clamp: exp(-2 alpha beta) on far-out
/// trajectories would overflow to inf and poison subensemble means; the
/// clamp keeps the huge outliers finite (they still show up as spikes).
inline cplx clamped_exp(cplx z) {
    if (z.real() > 700.0) z.real(700.0);
    return std::exp(z);
}

/// Accumulates weighted phase-space moments per (record, subensemble):
/// per-site alpha*beta, alpha^2, alpha^2 beta^2, exp(-2 alpha beta), the
/// global parity kernel, the weight itself, and optionally the g1/g2 pair
/// matrices at the final record.
class MomentsObserver : public EnsembleObserver {
public:
    enum class Pairs { none, final_only, all };

    explicit MomentsObserver(Pairs pairs = Pairs::none) : pairs_(pairs) {}

    struct Cell {
        std::vector<cplx> ab, a2, a2b2, par;  // length N
        std::vector<cplx> g1, g2;             // length N*N when accumulated
        cplx gpar{0.0, 0.0};
        cplx wsum{0.0, 0.0};
        std::size_t count = 0;
    };

    void begin_run(const RunConfig& cfg,
                   const std::vector<double>& record_times) override {
        n_sites_ = cfg.params.n_sites;
        n_rec_ = record_times.size();
        s_ = cfg.n_subensembles;
        cells_.assign(n_rec_ * s_, Cell{});
        for (auto& c : cells_) {
            c.ab.assign(n_sites_, cplx{});
            c.a2.assign(n_sites_, cplx{});
            c.a2b2.assign(n_sites_, cplx{});
            c.par.assign(n_sites_, cplx{});
        }
        if (pairs_ != Pairs::none) {
            for (std::size_t r = 0; r < n_rec_; ++r) {
                if (pairs_ == Pairs::final_only && r + 1 != n_rec_) continue;
                for (std::size_t q = 0; q < s_; ++q) {
                    Cell& c = cells_[r * s_ + q];
                    c.g1.assign(n_sites_ * n_sites_, cplx{});
                    c.g2.assign(n_sites_ * n_sites_, cplx{});
                }
            }
        }
    }

    void accumulate(std::size_t rec, std::size_t sub,
                    const TrajectoryState& st) override {
        Cell& c = cells_[rec * s_ + sub];
        const cplx w = st.weight;
        cplx sum_ab{0.0, 0.0};
        for (std::size_t j = 0; j < n_sites_; ++j) {
            const cplx a = st.point.alpha[j];
            const cplx b = st.point.beta[j];
            const cplx ab = a * b;
            sum_ab += ab;
            c.ab[j] += w * ab;
            c.a2[j] += w * a * a;
            c.a2b2[j] += w * ab * ab;
            c.par[j] += w * clamped_exp(-2.0 * ab);
        }
        c.gpar += w * clamped_exp(-2.0 * sum_ab);
        c.wsum += w;
        c.count += 1;
        if (!c.g1.empty()) {
            for (std::size_t j = 0; j < n_sites_; ++j) {
                const cplx bj = st.point.beta[j];
                const cplx abj = st.point.alpha[j] * bj;
                for (std::size_t jp = 0; jp < n_sites_; ++jp) {
                    c.g1[j * n_sites_ + jp] += w * st.point.alpha[jp] * bj;
                    c.g2[j * n_sites_ + jp] += w * abj * st.point.alpha[jp] * st.point.beta[jp];
                }
            }
        }
    }

    const Cell& cell(std::size_t rec, std::size_t sub) const {
        return cells_[rec * s_ + sub];
    }
    std::size_t n_records() const { return n_rec_; }
    std::size_t n_subensembles() const { return s_; }
    std::size_t n_sites() const { return n_sites_; }

private:
    Pairs pairs_;
    std::size_t n_sites_ = 0, n_rec_ = 0, s_ = 0;
    std::vector<Cell> cells_;
};

namespace detail {

template <typename F>
ObservableSeries build_series(const std::string& name, const RunResult& run,
                              std::size_t s, F per_sub_value) {
    ObservableSeries out;
    out.name = name;
    out.subensembles = static_cast<int>(s);
    const std::size_t n_rec = run.records.size();
    out.times = run.record_times;
    out.mean.resize(n_rec);
    out.se.resize(n_rec);
    out.defined.assign(n_rec, true);
    out.spike_flags.assign(n_rec, false);
    out.divergence_fraction.resize(n_rec);
    std::vector<cplx> vals(s);
    for (std::size_t r = 0; r < n_rec; ++r) {
        bool def = true;
        for (std::size_t q = 0; q < s; ++q) {
            std::optional<cplx> v = per_sub_value(r, q);
            if (!v) {
                def = false;
                break;
            }
            vals[q] = *v;
        }
        out.divergence_fraction[r] = run.divergence_fraction(r);
        if (!def) {
            out.defined[r] = false;
            out.mean[r] = cplx{0.0, 0.0};
            out.se[r] = 0.0;
            continue;
        }
        SubStats st = subensemble_stats(std::span<const cplx>(vals));
        out.mean[r] = st.mean;
        out.se[r] = st.se;
    }
    return out;
}

}  // namespace detail

struct SingleModeResult {
    ObservableSeries n, zeta, g2, parity;
};

/// Eq.-(5)-style observables for one site with subensemble errors; the
/// weighted (gauge-P) and plain estimators share one code path because
/// ungauged runs carry weight 1 exactly.
inline SingleModeResult site_observables(const MomentsObserver& mom,
                                         const RunResult& run, std::size_t site,
                                         bool weighted = false) {
    require(site < mom.n_sites(), "site_observables: site out of range");
    require(mom.n_subensembles() >= 2, "site_observables: need s >= 2");
    (void)weighted;  // estimators carry the weight factor unconditionally
    const std::size_t s = mom.n_subensembles();

    SingleModeResult out;
    out.n = detail::build_series(
        "n", run, s, [&](std::size_t r, std::size_t q) -> std::optional<cplx> {
            const auto& c = mom.cell(r, q);
            if (c.count == 0) return std::nullopt;
            return cplx{(c.ab[site] / static_cast<double>(c.count)).real(), 0.0};
        });
    out.zeta = detail::build_series(
        "zeta", run, s, [&](std::size_t r, std::size_t q) -> std::optional<cplx> {
            const auto& c = mom.cell(r, q);
            if (c.count == 0) return std::nullopt;
            return std::sqrt(c.a2[site] / static_cast<double>(c.count));
        });
    out.g2 = detail::build_series(
        "g2", run, s, [&](std::size_t r, std::size_t q) -> std::optional<cplx> {
            const auto& c = mom.cell(r, q);
            if (c.count == 0) return std::nullopt;
            double nj = (c.ab[site] / static_cast<double>(c.count)).real();
            if (nj == 0.0) return std::nullopt;  // 0/0: reported undefined
            double num = (c.a2b2[site] / static_cast<double>(c.count)).real();
            return cplx{num / (nj * nj), 0.0};
        });
    out.parity = detail::build_series(
        "parity", run, s, [&](std::size_t r, std::size_t q) -> std::optional<cplx> {
            const auto& c = mom.cell(r, q);
            if (c.count == 0) return std::nullopt;
            return cplx{(c.par[site] / static_cast<double>(c.count)).real(), 0.0};
        });
    return out;
}

inline SingleModeResult single_mode_observables(const MomentsObserver& mom,
                                                const RunResult& run,
                                                bool weighted = false) {
    require(mom.n_sites() == 1, "single_mode_observables: single-mode ensemble");
    return site_observables(mom, run, 0, weighted);
}

/// exp(-2 sum_j alpha_j beta_j) over all sites, with errors.
inline ObservableSeries global_parity_series(const MomentsObserver& mom,
                                             const RunResult& run) {
    return detail::build_series(
        "parity_global", run, mom.n_subensembles(),
        [&](std::size_t r, std::size_t q) -> std::optional<cplx> {
            const auto& c = mom.cell(r, q);
            if (c.count == 0) return std::nullopt;
            return cplx{(c.gpar / static_cast<double>(c.count)).real(), 0.0};
        });
}

/// Mean trajectory weight <Omega>; equals 1 exactly for ungauged runs and
/// tracks Tr rho for gauged ones.
inline ObservableSeries weight_series(const MomentsObserver& mom,
                                      const RunResult& run) {
    return detail::build_series(
        "weight", run, mom.n_subensembles(),
        [&](std::size_t r, std::size_t q) -> std::optional<cplx> {
            const auto& c = mom.cell(r, q);
            if (c.count == 0) return std::nullopt;
            return c.wsum / static_cast<double>(c.count);
        });
}

/// One matrix-valued estimate (g1 or g2 between all site pairs).
struct PairMatrixResult {
    std::size_t n_sites = 0;
    std::vector<cplx> mean;  // row-major j * N + j'
    std::vector<double> se;
    std::vector<bool> defined;

    cplx at(std::size_t j, std::size_t jp) const { return mean[j * n_sites + jp]; }
    double se_at(std::size_t j, std::size_t jp) const { return se[j * n_sites + jp]; }
};

struct MultimodeCorrelations {
    PairMatrixResult g1, g2;
};

/// g1(j,j') = <a_j' b_j>/sqrt(n_j n_j'), g2(j,j') = <a_j a_j' b_j b_j'>/(n_j n_j')
/// at one record index where pair moments were accumulated.
inline MultimodeCorrelations multimode_correlations(const MomentsObserver& mom,
                                                    std::size_t rec) {
    const std::size_t n = mom.n_sites();
    const std::size_t s = mom.n_subensembles();
    require(n >= 2, "multimode_correlations: need N >= 2");
    require(!mom.cell(rec, 0).g1.empty(),
            "multimode_correlations: pair moments not accumulated at this record");

    MultimodeCorrelations out;
    for (auto* m : {&out.g1, &out.g2}) {
        m->n_sites = n;
        m->mean.assign(n * n, cplx{});
        m->se.assign(n * n, 0.0);
        m->defined.assign(n * n, true);
    }
    std::vector<cplx> v1(s), v2(s);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t jp = 0; jp < n; ++jp) {
            bool def = true;
            for (std::size_t q = 0; q < s; ++q) {
                const auto& c = mom.cell(rec, q);
                if (c.count == 0) {
                    def = false;
                    break;
                }
                const double cnt = static_cast<double>(c.count);
                double nj = (c.ab[j] / cnt).real();
                double njp = (c.ab[jp] / cnt).real();
                if (nj <= 0.0 || njp <= 0.0) {
                    def = false;
                    break;
                }
                v1[q] = (c.g1[j * n + jp] / cnt) / std::sqrt(nj * njp);
                v2[q] = (c.g2[j * n + jp] / cnt) / (nj * njp);
            }
            const std::size_t idx = j * n + jp;
            if (!def) {
                out.g1.defined[idx] = out.g2.defined[idx] = false;
                continue;
            }
            SubStats s1 = subensemble_stats(std::span<const cplx>(v1));
            SubStats s2 = subensemble_stats(std::span<const cplx>(v2));
            out.g1.mean[idx] = s1.mean;
            out.g1.se[idx] = s1.se;
            out.g2.mean[idx] = s2.mean;
            out.g2.se[idx] = s2.se;
        }
    }
    return out;
}

/// Rolling-median spike detector.  Flags points that jump away from the
/// trailing-window median by more than spike_factor * (window MAD + sigma),
/// and points whose standard error jumps by more than spike_factor between
/// adjacent times.
struct SpikeOptions {
    double spike_factor = 8.0;
    std::size_t window = 16;
};

inline std::vector<bool> spike_detect(std::span<const double> mean,
                                      std::span<const double> se,
                                      const SpikeOptions& opt = {}) {
    require(mean.size() == se.size(), "spike_detect: length mismatch");
    require(mean.size() >= 3, "spike_detect: need at least 3 samples");
    const std::size_t n = mean.size();
    std::vector<bool> flags(n, false);
    std::vector<double> win;
    win.reserve(opt.window);
    auto median_of = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        std::size_t m = v.size() / 2;
        return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    };
    for (std::size_t i = 2; i < n; ++i) {
        std::size_t lo = i > opt.window ? i - opt.window : 0;
        win.assign(mean.begin() + static_cast<std::ptrdiff_t>(lo),
                   mean.begin() + static_cast<std::ptrdiff_t>(i));
        double med = median_of(win);
        std::vector<double> dev(win.size());
        for (std::size_t k = 0; k < win.size(); ++k) dev[k] = std::abs(win[k] - med);
        double mad = median_of(dev);
        if (std::abs(mean[i] - med) > opt.spike_factor * (mad + se[i]))
            flags[i] = true;
        if (se[i - 1] > 0.0 && se[i] > opt.spike_factor * se[i - 1])
            flags[i] = true;
    }
    return flags;
}

inline void apply_spike_detect(ObservableSeries& series,
                               const SpikeOptions& opt = {}) {
    if (series.size() < 3) return;
    std::vector<double> m(series.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::abs(series.mean[i]);
    series.spike_flags = spike_detect(m, series.se, opt);
}

enum class RegimeLabel {
    unstable_orange,
    parity_decay_blue,
    stable_green,
    low_snr_yellowgreen,
};

inline const char* to_string(RegimeLabel label) {
    switch (label) {
        case RegimeLabel::unstable_orange: return "orange";
        case RegimeLabel::parity_decay_blue: return "blue";
        case RegimeLabel::stable_green: return "green";
        case RegimeLabel::low_snr_yellowgreen: return "yellowgreen";
    }
    return "?";
}

/// Exact reference curves on the simulation's record grid plus the
/// steady-state values used for the sweep comparison.
struct OracleReference {
    std::vector<double> times;
    std::vector<double> n, g2, parity;
    std::vector<cplx> zeta;
    double steady_n = 0.0, steady_g2 = 0.0, steady_parity = 0.0;
    cplx steady_zeta{0.0, 0.0};
};

struct RegimeOptions {
    double band_abs = 1e-2;   // agreement band is max(3 sigma, band_abs)
    double snr_min = 3.0;     // g2 / sigma_SE threshold (yellowgreen)
    double divergence_limit = 0.5;
    SpikeOptions spikes{};
};

struct RegimeDiagnostics {
    RegimeLabel label = RegimeLabel::stable_green;
    double max_divergence = 0.0;
    double g2_snr = 0.0;
    std::size_t steady_match_index = 0;  // == times.size() when never matched
    bool parity_matches = true;
    bool parity_spiked = false;
    bool nzg_match = true;  // n, zeta, g2 track the oracle transient
};

/// Implements the sweep classification: orange when the ensemble mostly
/// diverges before reaching the steady values, yellowgreen on low g2 SNR,
/// blue when everything but parity tracks the oracle, green otherwise.
inline RegimeDiagnostics classify_regime(const SingleModeResult& sim,
                                         const OracleReference& oracle,
                                         const RegimeOptions& opt = {}) {
    const std::size_t n_rec = sim.n.size();
    require(n_rec > 0 && oracle.times.size() == n_rec,
            "classify_regime: oracle series must share the record grid");

    auto band = [&](const ObservableSeries& s, std::size_t i) {
        return std::max(3.0 * s.se[i], opt.band_abs);
    };

    RegimeDiagnostics diag;
    // First time n, zeta, g2 all sit on the oracle steady values.
    diag.steady_match_index = n_rec;
    for (std::size_t i = 0; i < n_rec; ++i) {
        bool ok = std::abs(sim.n.real_at(i) - oracle.steady_n) <= band(sim.n, i) &&
                  std::abs(sim.zeta.mean[i] - oracle.steady_zeta) <=
                      band(sim.zeta, i);
        if (ok && sim.g2.defined[i])
            ok = std::abs(sim.g2.real_at(i) - oracle.steady_g2) <= band(sim.g2, i);
        if (ok) {
            diag.steady_match_index = i;
            break;
        }
    }
    const std::size_t cmp =
        diag.steady_match_index < n_rec ? diag.steady_match_index : n_rec - 1;
    for (std::size_t i = 0; i <= cmp; ++i)
        diag.max_divergence =
            std::max(diag.max_divergence, sim.n.divergence_fraction[i]);

    // Transient agreement per observable.
    bool ok_nzg = true, ok_par = true;
    for (std::size_t i = 0; i < n_rec; ++i) {
        if (std::abs(sim.n.real_at(i) - oracle.n[i]) > band(sim.n, i)) ok_nzg = false;
        if (std::abs(sim.zeta.mean[i] - oracle.zeta[i]) > band(sim.zeta, i))
            ok_nzg = false;
        if (sim.g2.defined[i] && oracle.n[i] > 1e-9 &&
            std::abs(sim.g2.real_at(i) - oracle.g2[i]) > band(sim.g2, i))
            ok_nzg = false;
        if (std::abs(sim.parity.real_at(i) - oracle.parity[i]) >
            band(sim.parity, i))
            ok_par = false;
    }
    diag.nzg_match = ok_nzg;
    diag.parity_matches = ok_par;

    std::vector<bool> pflags = sim.parity.spike_flags;
    if (pflags.empty() || pflags.size() != n_rec) {
        ObservableSeries p = sim.parity;
        apply_spike_detect(p, opt.spikes);
        pflags = p.spike_flags;
    }
    diag.parity_spiked =
        std::any_of(pflags.begin(), pflags.end(), [](bool b) { return b; });

    diag.g2_snr = 0.0;
    if (sim.g2.defined[cmp] && sim.g2.se[cmp] > 0.0)
        diag.g2_snr = std::abs(sim.g2.real_at(cmp)) / sim.g2.se[cmp];

    if (diag.max_divergence > opt.divergence_limit)
        diag.label = RegimeLabel::unstable_orange;
    else if (!sim.g2.defined[cmp] || diag.g2_snr < opt.snr_min)
        diag.label = RegimeLabel::low_snr_yellowgreen;
    else if (diag.parity_spiked || !diag.parity_matches)
        diag.label = RegimeLabel::parity_decay_blue;
    else
        diag.label = RegimeLabel::stable_green;
    return diag;
}

}  // namespace ppcat

#endif

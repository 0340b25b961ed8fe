#ifndef PPCAT_SDE_HPP
#define PPCAT_SDE_HPP

// Euler-Maruyama (Ito) integration of the trajectory SDEs for an ensemble,
// with drift gauges acting on the weight, freeze-and-flag divergence handling
// and a deterministic subensemble-parallel execution model: results are a
// pure function of (config, seed), independent of the worker count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "ppcat/common.hpp"
#include "ppcat/model.hpp"
#include "ppcat/rng.hpp"

namespace ppcat {

/// One trajectory: phase-space point, gauge weight, identity of its random
/// stream (seed lives in the config; the trajectory index keys the stream).
struct TrajectoryState {
    PhasePoint point;
    cplx weight{1.0, 0.0};
    uint64_t traj_index = 0;
    double diverged_at = -1.0;  // < 0 while alive

    bool diverged() const { return diverged_at >= 0.0; }
};

struct InitialState {
    enum class Kind { vacuum, cat };
    Kind kind = Kind::vacuum;
    cplx zeta{0.0, 0.0};
    int sign = 1;
};

struct RunConfig {
    ModelParams params;
    SchemeSpec scheme;
    double dt = 1e-3;
    double t_final = 1.0;
    std::size_t n_trajectories = 1000;
    std::size_t n_subensembles = 10;
    uint64_t seed = 1;
    std::vector<double> record_times;  // snapped to the step grid on use
    double divergence_threshold = 1e6;
    InitialState initial;
    unsigned threads = 0;  // 0 = hardware concurrency; affects speed only

    uint64_t n_steps() const {
        return static_cast<uint64_t>(std::llround(t_final / dt));
    }

    /// Record times snapped to integer multiples of dt, deduplicated, sorted.
    std::vector<uint64_t> record_steps() const {
        std::vector<uint64_t> steps;
        steps.reserve(record_times.size());
        const uint64_t last = n_steps();
        for (double t : record_times) {
            auto k = static_cast<uint64_t>(std::llround(t / dt));
            steps.push_back(std::min(k, last));
        }
        std::sort(steps.begin(), steps.end());
        steps.erase(std::unique(steps.begin(), steps.end()), steps.end());
        return steps;
    }

    void validate() const {
        params.validate();
        scheme.validate();
        if (dt <= 0.0) throw config_error("run.dt must be positive");
        if (t_final < 0.0) throw config_error("run.t_final must be >= 0");
        if (n_trajectories == 0) throw config_error("run.trajectories must be positive");
        if (n_subensembles == 0) throw config_error("run.subensembles must be positive");
        if (n_trajectories % n_subensembles != 0)
            throw config_error("run.trajectories must be divisible by run.subensembles");
        if (divergence_threshold <= 0.0)
            throw config_error("run.divergence_threshold must be positive");
        if (initial.kind == InitialState::Kind::cat && params.n_sites != 1)
            throw config_error("initial.state = cat requires a single-mode model");
        if (initial.kind == InitialState::Kind::cat && initial.sign != 1 &&
            initial.sign != -1)
            throw config_error("initial.sign must be +1 or -1");
        for (double t : record_times)
            if (t < 0.0 || t > t_final + 0.5 * dt)
                throw config_error("run.record_times must lie in [0, t_final]");
    }
};

inline std::vector<double> make_uniform_records(double t_final, std::size_t count) {
    std::vector<double> out;
    if (count == 0 || t_final <= 0.0) return {0.0};
    out.reserve(count + 1);
    for (std::size_t i = 0; i <= count; ++i)
        out.push_back(t_final * static_cast<double>(i) / static_cast<double>(count));
    return out;
}

/// Ito weight update Omega' = Omega (1 + sum_k g_k dW_k).
inline cplx evolve_weight(cplx omega, std::span<const cplx> gauge,
                          std::span<const double> dw) {
    require(gauge.size() == dw.size(),
            "evolve_weight: gauge and increment lengths differ");
    cplx s{0.0, 0.0};
    for (std::size_t k = 0; k < gauge.size(); ++k) s += gauge[k] * dw[k];
    return omega * (1.0 + s);
}

namespace detail {

inline bool component_bad(cplx z, double threshold) {
    double m = std::abs(z.real()) + std::abs(z.imag());
    return !std::isfinite(m) || m > threshold;
}

}  // namespace detail

/// One Euler-Maruyama update with caller-supplied Wiener increments
/// (layout: noises_per_site entries per site, site-major).  The weight uses
/// the same increments.  Marks the trajectory diverged at `t_new` instead of
/// aborting when a component leaves the finite budget; the pre-step point is
/// kept in that case.
inline void step_with_increments(TrajectoryState& st, const RunConfig& cfg,
                                 std::span<const double> dw, double t_new) {
    require(!st.diverged(), "step: trajectory already diverged");
    const ModelParams& p = cfg.params;
    const std::size_t n = p.n_sites;
    const std::size_t m = cfg.scheme.noises_per_site();
    require(dw.size() == m * n, "step: increment count mismatch");
    const bool gauged = cfg.scheme.gauge != Gauge::none;
    const double dt = cfg.dt;

    cplx gauge_dot{0.0, 0.0};
    bool bad = false;
    // Two-pass update: new components staged on the stack per site.
    std::array<cplx, 2> staged;
    static thread_local std::vector<cplx> staged_all;
    staged_all.resize(2 * n);

    for (std::size_t j = 0; j < n; ++j) {
        auto a_j = site_drift(p, st.point, j);
        NoiseBlock b = site_noise(cfg.scheme, p, st.point, j);
        const double* dwj = dw.data() + m * j;

        cplx na{0.0, 0.0}, nb{0.0, 0.0};
        for (std::size_t c = 0; c < m; ++c) {
            na += b(0, c) * dwj[c];
            nb += b(1, c) * dwj[c];
        }
        if (gauged) {
            auto g = site_gauge(cfg.scheme, p, st.point, j);
            for (std::size_t c = 0; c < m; ++c) {
                a_j[0] -= b(0, c) * g[c];
                a_j[1] -= b(1, c) * g[c];
                gauge_dot += g[c] * dwj[c];
            }
        }
        staged[0] = st.point.alpha[j] + a_j[0] * dt + na;
        staged[1] = st.point.beta[j] + a_j[1] * dt + nb;
        bad = bad || detail::component_bad(staged[0], cfg.divergence_threshold) ||
              detail::component_bad(staged[1], cfg.divergence_threshold);
        staged_all[2 * j] = staged[0];
        staged_all[2 * j + 1] = staged[1];
    }

    cplx new_weight = st.weight;
    if (gauged) {
        new_weight = st.weight * (1.0 + gauge_dot);
        bad = bad || !std::isfinite(new_weight.real()) ||
              !std::isfinite(new_weight.imag());
    }

    if (bad) {
        st.diverged_at = t_new;
        return;
    }
    for (std::size_t j = 0; j < n; ++j) {
        st.point.alpha[j] = staged_all[2 * j];
        st.point.beta[j] = staged_all[2 * j + 1];
    }
    st.weight = new_weight;
}

/// One update drawing fresh increments from the counter stream keyed by
/// (config.seed, trajectory index, step index).
inline void step(TrajectoryState& st, const RunConfig& cfg, uint64_t step_index) {
    const std::size_t count = cfg.scheme.noises_per_site() * cfg.params.n_sites;
    static thread_local std::vector<double> dw;
    dw.resize(count);
    CounterStream stream(cfg.seed, st.traj_index, step_index, RngSalt::dynamics);
    wiener_increments(stream, cfg.dt, std::span<double>(dw));
    step_with_increments(st, cfg, dw, static_cast<double>(step_index + 1) * cfg.dt);
}

/// Estimator hook.  `accumulate` is invoked once per alive trajectory per
/// record time, per subensemble in ascending trajectory order; writes must
/// stay inside the (record, subensemble) slot to keep runs deterministic.
struct EnsembleObserver {
    virtual ~EnsembleObserver() = default;
    virtual void begin_run(const RunConfig& cfg,
                           const std::vector<double>& record_times) = 0;
    virtual void accumulate(std::size_t record_idx, std::size_t sub_idx,
                            const TrajectoryState& state) = 0;
};

struct RunRecord {
    double time = 0.0;
    std::vector<std::size_t> alive_per_sub;
    std::size_t diverged_total = 0;
};

struct RunResult {
    std::vector<double> record_times;
    std::vector<RunRecord> records;
    bool diverged_run = false;  // every trajectory diverged before t_final
    std::size_t n_trajectories = 0;
    std::size_t n_subensembles = 0;

    double divergence_fraction(std::size_t record_idx) const {
        return static_cast<double>(records[record_idx].diverged_total) /
               static_cast<double>(n_trajectories);
    }
};

inline TrajectoryState make_initial_state(const RunConfig& cfg, uint64_t traj) {
    TrajectoryState st;
    st.traj_index = traj;
    if (cfg.initial.kind == InitialState::Kind::vacuum) {
        st.point = sample_vacuum(cfg.params.n_sites);
    } else {
        CounterStream stream(cfg.seed, traj, 0, RngSalt::initial_state);
        CatSample s = sample_cat(cfg.initial.zeta, cfg.initial.sign, stream);
        st.point = std::move(s.point);
        st.weight = s.weight;
    }
    return st;
}

/// Evolves the ensemble, handing every alive trajectory to each observer at
/// the record times.  Subensembles are independent work items processed
/// serially inside, so output is bit-identical for any worker count.
inline RunResult run_ensemble(const RunConfig& cfg,
                              std::span<EnsembleObserver* const> observers) {
    cfg.validate();
    const std::vector<uint64_t> rec_steps = cfg.record_steps();
    const std::size_t n_rec = rec_steps.size();
    const std::size_t s = cfg.n_subensembles;
    const std::size_t per_sub = cfg.n_trajectories / s;
    const uint64_t n_steps = cfg.n_steps();

    RunResult result;
    result.n_trajectories = cfg.n_trajectories;
    result.n_subensembles = s;
    result.record_times.reserve(n_rec);
    result.records.resize(n_rec);
    for (std::size_t r = 0; r < n_rec; ++r) {
        result.records[r].time = static_cast<double>(rec_steps[r]) * cfg.dt;
        result.records[r].alive_per_sub.assign(s, 0);
        result.record_times.push_back(result.records[r].time);
    }
    for (auto* o : observers) o->begin_run(cfg, result.record_times);

    parallel_for(s, cfg.threads, [&](std::size_t sub) {
        for (std::size_t r = 0; r < per_sub; ++r) {
            const uint64_t traj = static_cast<uint64_t>(sub * per_sub + r);
            TrajectoryState st = make_initial_state(cfg, traj);
            std::size_t rec_ptr = 0;
            uint64_t k = 0;
            while (true) {
                if (rec_ptr < n_rec && rec_steps[rec_ptr] == k) {
                    if (!st.diverged()) {
                        result.records[rec_ptr].alive_per_sub[sub] += 1;
                        for (auto* o : observers) o->accumulate(rec_ptr, sub, st);
                    }
                    ++rec_ptr;
                }
                if (k >= n_steps) break;
                if (st.diverged()) {
                    // Frozen: jump straight to the next record.
                    if (rec_ptr >= n_rec) break;
                    k = rec_steps[rec_ptr];
                    continue;
                }
                step(st, cfg, k);
                ++k;
            }
        }
    });

    // Divergence counts and early-termination bookkeeping.
    std::size_t first_dead = n_rec;
    for (std::size_t r = 0; r < n_rec; ++r) {
        std::size_t alive = 0;
        for (std::size_t q = 0; q < s; ++q) alive += result.records[r].alive_per_sub[q];
        result.records[r].diverged_total = cfg.n_trajectories - alive;
        if (alive == 0 && first_dead == n_rec) first_dead = r;
    }
    if (first_dead < n_rec) {
        result.diverged_run = true;
        result.records.resize(std::max<std::size_t>(first_dead, 1));
        result.record_times.resize(result.records.size());
    }
    return result;
}

inline RunResult run_ensemble(const RunConfig& cfg,
                              std::initializer_list<EnsembleObserver*> observers) {
    std::vector<EnsembleObserver*> v(observers);
    return run_ensemble(cfg, std::span<EnsembleObserver* const>(v));
}

}  // namespace ppcat

#endif

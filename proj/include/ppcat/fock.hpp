#ifndef PPCAT_FOCK_HPP
#define PPCAT_FOCK_HPP

// Exact truncated-Fock Lindblad integrator and steady-state solver for small
// site counts; ground truth for the acceptance tests and source of reference
// states (coherent, cat, mixtures).

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "ppcat/common.hpp"
#include "ppcat/model.hpp"

namespace ppcat {

using SpMat = Eigen::SparseMatrix<cplx>;

/// Truncated number-basis density operator; `rho` has one row/column per
/// basis state of the (cutoff+1)^n_modes product space.
struct FockDensityMatrix {
    std::size_t n_modes = 1;
    std::size_t cutoff = 0;
    Eigen::MatrixXcd rho;

    std::size_t dim_per_mode() const { return cutoff + 1; }
    std::size_t dim() const { return static_cast<std::size_t>(rho.rows()); }
    cplx trace() const { return rho.trace(); }
    double hermiticity_deviation() const {
        return (rho - rho.adjoint()).cwiseAbs().maxCoeff();
    }
    void hermitize() { rho = 0.5 * (rho + rho.adjoint()).eval(); }
};

namespace fockdetail {

inline SpMat annihilation(std::size_t cutoff) {
    const auto d = static_cast<Eigen::Index>(cutoff + 1);
    SpMat a(d, d);
    a.reserve(Eigen::VectorXi::Constant(d, 1));
    for (Eigen::Index n = 1; n < d; ++n)
        a.insert(n - 1, n) = std::sqrt(static_cast<double>(n));
    a.makeCompressed();
    return a;
}

inline SpMat identity(std::size_t dim) {
    SpMat id(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    id.setIdentity();
    return id;
}

/// Embeds a single-mode operator at site j of an n-mode product space.
inline SpMat embed(const SpMat& op, std::size_t j, std::size_t n_modes,
                   std::size_t dim_mode) {
    SpMat out = (j == 0) ? op : identity(dim_mode);
    for (std::size_t k = 1; k < n_modes; ++k) {
        const SpMat& next = (k == j) ? op : identity(dim_mode);
        out = Eigen::kroneckerProduct(out, next).eval();
    }
    return out;
}

inline cplx trace_product(const Eigen::MatrixXcd& rho, const SpMat& m) {
    // Tr(rho * m) = sum_{r,k} m(r,k) rho(k,r)
    cplx acc{0.0, 0.0};
    for (int k = 0; k < m.outerSize(); ++k)
        for (SpMat::InnerIterator it(m, k); it; ++it)
            acc += it.value() * rho(it.col(), it.row());
    return acc;
}

}  // namespace fockdetail

struct RhoObservables {
    std::vector<double> n;
    std::vector<cplx> zeta;
    std::vector<double> g2;  // 0 with defined=false when n vanishes
    std::vector<bool> g2_defined;
    std::vector<double> parity_local;
    double parity_global = 1.0;
    Eigen::MatrixXcd g1_matrix, g2_matrix;
};

struct SteadyStateResult {
    FockDensityMatrix rho;
    bool degenerate = false;
    double residual = 0.0;
};

struct EvolveOptions {
    enum class Integrator { auto_select, rk4, krylov };
    Integrator integrator = Integrator::auto_select;
    double dt_factor = 0.1;       // RK4 step rule ||L|| dt <= dt_factor
    double top_pop_tol = 1e-6;    // truncation monitor threshold
    double krylov_tol = 1e-11;    // local error per unit substep, relative
    int krylov_m = 25;
    std::size_t auto_krylov_dim = 600;
    unsigned threads = 0;
};

struct SnapshotInfo {
    double time = 0.0;
    double trace_re = 1.0;
    double top_pop = 0.0;
};

/// The Lindblad generator of the resonator ring on a truncated Fock space:
/// H = sum_j (eps_j a_j^+2 + eps_j^* a_j^2) with jumps a_j (kappa1),
/// a_j^2 (kappa2) and a_j - e^{i phi} a_{j+1} (gamma).
class LindbladSystem {
public:
    LindbladSystem(const ModelParams& params, std::size_t cutoff,
                   std::size_t dim_budget = 4096)
        : params_(params), cutoff_(cutoff) {
        params_.validate();
        const std::size_t n = params_.n_sites;
        const std::size_t dm = cutoff + 1;
        double dim_d = std::pow(static_cast<double>(dm), static_cast<double>(n));
        require(dim_d <= static_cast<double>(dim_budget),
                "LindbladSystem: Hilbert dimension exceeds the budget");
        dim_ = static_cast<std::size_t>(std::llround(dim_d));

        const SpMat a1 = fockdetail::annihilation(cutoff);
        a_.reserve(n);
        a2_.reserve(n);
        for (std::size_t j = 0; j < n; ++j) {
            a_.push_back(fockdetail::embed(a1, j, n, dm));
            a2_.push_back((a_[j] * a_[j]).pruned());
        }

        SpMat h(static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(dim_));
        for (std::size_t j = 0; j < n; ++j) {
            const cplx e = params_.epsilon_site(j);
            SpMat ad2 = SpMat(a2_[j].adjoint());
            h += (e * ad2 + std::conj(e) * a2_[j]).pruned();
        }
        hamiltonian_ = h;

        if (params_.kappa1 > 0.0)
            for (std::size_t j = 0; j < n; ++j) jumps_.push_back({a_[j], params_.kappa1});
        if (params_.kappa2 > 0.0)
            for (std::size_t j = 0; j < n; ++j) jumps_.push_back({a2_[j], params_.kappa2});
        if (params_.gamma > 0.0 && n > 1) {
            const cplx ph = std::polar(1.0, params_.phi);
            const std::size_t n_links =
                params_.boundary == Boundary::periodic ? n : n - 1;
            for (std::size_t j = 0; j < n_links; ++j) {
                SpMat o = (a_[j] - ph * a_[(j + 1) % n]).pruned();
                jumps_.push_back({o, params_.gamma});
            }
        }

        SpMat ksum(static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(dim_));
        for (const auto& [op, rate] : jumps_) {
            SpMat oo = SpMat(op.adjoint()) * op;
            ksum += (rate * oo).pruned();
        }
        heff_ = (hamiltonian_ - 0.5 * iu * ksum).pruned();
        heff_adj_ = SpMat(heff_.adjoint());
        for (auto& [op, rate] : jumps_) adj_.push_back(SpMat(op.adjoint()));

        // Per-mode projector diagonals onto the top Fock level.
        top_masks_.assign(n, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_)));
        for (std::size_t i = 0; i < dim_; ++i) {
            std::size_t rem = i;
            for (std::size_t j = n; j-- > 0;) {
                std::size_t digit = rem % dm;
                rem /= dm;
                if (digit == cutoff) top_masks_[j](static_cast<Eigen::Index>(i)) = 1.0;
            }
        }
    }

    const ModelParams& params() const { return params_; }
    std::size_t cutoff() const { return cutoff_; }
    std::size_t dim() const { return dim_; }
    std::size_t n_modes() const { return params_.n_sites; }
    const SpMat& annihilation_op(std::size_t j) const { return a_[j]; }
    const SpMat& hamiltonian() const { return hamiltonian_; }

    /// drho/dt in Lindblad form; trace-free by construction.
    Eigen::MatrixXcd apply(const Eigen::MatrixXcd& rho, unsigned threads = 0) const {
        Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(rho.rows(), rho.cols());
        spmm_acc(heff_, rho, out, -iu, threads);
        mmsp_acc(rho, heff_adj_, out, iu, threads);
        for (std::size_t m = 0; m < jumps_.size(); ++m) {
            const Eigen::MatrixXcd tmp = left_mult(jumps_[m].op, rho, threads);
            mmsp_acc(tmp, adj_[m], out, jumps_[m].rate, threads);
        }
        return out;
    }

    /// Crude spectral scale of the generator from a fixed-seed power
    /// iteration; used for the RK4 step rule.
    double norm_estimate() const {
        if (norm_cache_ > 0.0) return norm_cache_;
        const auto d = static_cast<Eigen::Index>(dim_);
        Eigen::MatrixXcd x(d, d);
        for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j)
                x(i, j) = cplx(static_cast<double>((i * 31 + j * 17) % 7) - 3.0,
                               static_cast<double>((i * 13 + j * 29) % 5) - 2.0);
        x /= x.norm();
        double est = 1.0;
        for (int it = 0; it < 20; ++it) {
            Eigen::MatrixXcd y = apply(x);
            est = y.norm();
            if (est == 0.0) break;
            x = y / est;
        }
        norm_cache_ = std::max(est, 1e-12);
        return norm_cache_;
    }

    double top_level_population(const Eigen::MatrixXcd& rho) const {
        double worst = 0.0;
        for (const auto& mask : top_masks_)
            worst = std::max(worst, (rho.diagonal().real().array() * mask.array()).sum());
        return worst;
    }

    /// Integrates rho0 and invokes on_snapshot at every t_grid point (the
    /// grid must be nondecreasing, starting at >= 0).  Raises
    /// truncation_error when the top-level population check fails.
    std::vector<SnapshotInfo> evolve_rho(
        const Eigen::MatrixXcd& rho0, const std::vector<double>& t_grid,
        const EvolveOptions& opts = {},
        const std::function<void(std::size_t, double, const Eigen::MatrixXcd&)>&
            on_snapshot = nullptr) const {
        require(rho0.rows() == static_cast<Eigen::Index>(dim_) &&
                    rho0.cols() == static_cast<Eigen::Index>(dim_),
                "evolve_rho: dimension mismatch");
        const bool use_krylov =
            opts.integrator == EvolveOptions::Integrator::krylov ||
            (opts.integrator == EvolveOptions::Integrator::auto_select &&
             dim_ > opts.auto_krylov_dim);

        std::vector<SnapshotInfo> info;
        info.reserve(t_grid.size());
        Eigen::MatrixXcd rho = rho0;
        double t = 0.0;
        for (std::size_t i = 0; i < t_grid.size(); ++i) {
            double target = t_grid[i];
            require(target >= t - 1e-12, "evolve_rho: t_grid must be nondecreasing");
            if (target > t) {
                if (use_krylov)
                    krylov_step(rho, target - t, opts);
                else
                    rk4_span(rho, target - t, opts);
                t = target;
            }
            SnapshotInfo s;
            s.time = target;
            s.trace_re = rho.trace().real();
            s.top_pop = top_level_population(rho);
            info.push_back(s);
            if (s.top_pop > opts.top_pop_tol)
                throw truncation_error(
                    "fock oracle: top Fock level population " +
                    std::to_string(s.top_pop) +
                    " exceeds tolerance; increase the cutoff");
            if (on_snapshot) on_snapshot(i, target, rho);
        }
        return info;
    }

    /// Steady state from the null space of the vectorized generator,
    /// cross-validated by the residual; a degenerate steady manifold falls
    /// back to the long-time evolution from vacuum (flagged).
    SteadyStateResult steady_state(const EvolveOptions& opts = {}) const {
        require(dim_ * dim_ <= (1u << 20),
                "steady_state: vectorized Liouvillian dimension too large");
        const SpMat lvec = vectorized_liouvillian();
        const double scale = norm_estimate();

        Eigen::VectorXcd v1 = inverse_iterate(lvec, scale, 1);
        Eigen::VectorXcd v2 = inverse_iterate(lvec, scale, 2);
        // Degenerate when the part of v2 orthogonal to v1 is itself null.
        Eigen::VectorXcd rem = v2 - v1 * v1.dot(v2);
        const bool degenerate =
            rem.norm() > 1e-6 &&
            (lvec * rem).norm() < 1e-6 * std::max(scale, 1.0) * rem.norm();

        SteadyStateResult out;
        out.degenerate = degenerate;
        out.rho.n_modes = n_modes();
        out.rho.cutoff = cutoff_;
        if (!degenerate) {
            Eigen::MatrixXcd r =
                Eigen::Map<const Eigen::MatrixXcd>(v1.data(),
                                                   static_cast<Eigen::Index>(dim_),
                                                   static_cast<Eigen::Index>(dim_));
            r = 0.5 * (r + r.adjoint()).eval();
            cplx tr = r.trace();
            require(std::abs(tr) > 1e-10 * r.norm(),
                    "steady_state: null vector has vanishing trace");
            out.rho.rho = r / tr;
        } else {
            // Initial-condition-selected member of the steady manifold.
            Eigen::MatrixXcd r = Eigen::MatrixXcd::Zero(
                static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(dim_));
            r(0, 0) = 1.0;
            EvolveOptions lo = opts;
            const double rate =
                std::max({std::abs(params_.epsilon), params_.kappa1,
                          params_.kappa2, params_.gamma, 1e-3});
            const double horizon = 10.0 / rate;
            for (int block = 0; block < 200; ++block) {
                LindbladSystem::evolve_span(*this, r, horizon, lo);
                if (apply(r).norm() < 1e-9) break;
            }
            out.rho.rho = r;
        }
        out.residual = apply(out.rho.rho).norm();
        require(out.residual < 1e-8,
                "steady_state: residual check ||L rho|| < 1e-8 failed");
        return out;
    }

    RhoObservables observables(const Eigen::MatrixXcd& rho) const {
        const std::size_t n = n_modes();
        RhoObservables out;
        out.n.resize(n);
        out.zeta.resize(n);
        out.g2.resize(n);
        out.g2_defined.resize(n);
        out.parity_local.resize(n);
        out.g1_matrix.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        out.g2_matrix.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        using fockdetail::trace_product;
        for (std::size_t j = 0; j < n; ++j) {
            out.n[j] = trace_product(rho, SpMat(SpMat(a_[j].adjoint()) * a_[j])).real();
            out.zeta[j] = std::sqrt(trace_product(rho, a2_[j]));
            double num =
                trace_product(rho, SpMat(SpMat(a2_[j].adjoint()) * a2_[j])).real();
            out.g2_defined[j] = out.n[j] > 1e-12;
            out.g2[j] = out.g2_defined[j] ? num / (out.n[j] * out.n[j]) : 0.0;
            out.parity_local[j] = parity_trace(rho, j).real();
        }
        out.parity_global = parity_trace(rho, std::nullopt).real();
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t jp = 0; jp < n; ++jp) {
                cplx c1 = trace_product(rho, SpMat(SpMat(a_[j].adjoint()) * a_[jp]));
                cplx c2 = trace_product(
                    rho, SpMat(SpMat(a_[j].adjoint()) * SpMat(a_[jp].adjoint()) *
                               a_[j] * a_[jp]));
                double denom = std::sqrt(out.n[j] * out.n[jp]);
                out.g1_matrix(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(jp)) =
                    denom > 1e-12 ? c1 / denom : cplx{0.0, 0.0};
                double d2 = out.n[j] * out.n[jp];
                out.g2_matrix(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(jp)) =
                    d2 > 1e-12 ? c2 / d2 : cplx{0.0, 0.0};
            }
        return out;
    }

    /// Parity of one mode (or the global parity when mode is nullopt).
    cplx parity_trace(const Eigen::MatrixXcd& rho,
                      std::optional<std::size_t> mode) const {
        const std::size_t n = n_modes();
        const std::size_t dm = cutoff_ + 1;
        cplx acc{0.0, 0.0};
        for (std::size_t i = 0; i < dim_; ++i) {
            std::size_t rem = i;
            int total = 0;
            for (std::size_t j = n; j-- > 0;) {
                auto digit = static_cast<int>(rem % dm);
                rem /= dm;
                if (!mode || *mode == j) total += digit;
            }
            acc += (total % 2 == 0 ? 1.0 : -1.0) * rho(static_cast<Eigen::Index>(i),
                                                       static_cast<Eigen::Index>(i));
        }
        return acc;
    }

    static void evolve_span(const LindbladSystem& sys, Eigen::MatrixXcd& rho,
                            double span, const EvolveOptions& opts) {
        if (sys.dim() > opts.auto_krylov_dim &&
            opts.integrator != EvolveOptions::Integrator::rk4)
            sys.krylov_step(rho, span, opts);
        else
            sys.rk4_span(rho, span, opts);
    }

private:
    struct Jump {
        SpMat op;
        double rate;
    };

    // Threading pays only for large matrices; small systems run serial to
    // avoid per-call thread spawn costs in the integrator inner loops.
    static bool worth_threading(Eigen::Index rows, Eigen::Index cols) {
        return rows * cols >= (Eigen::Index{1} << 18);
    }

    static void spmm_acc(const SpMat& a, const Eigen::MatrixXcd& x,
                         Eigen::MatrixXcd& out, cplx f, unsigned threads) {
        const Eigen::Index cols = x.cols();
        if (!worth_threading(x.rows(), cols)) {
            out.noalias() += f * (a * x);
            return;
        }
        const Eigen::Index nblk = std::min<Eigen::Index>(8, cols);
        parallel_for(static_cast<std::size_t>(nblk), threads, [&](std::size_t b) {
            Eigen::Index c0 = static_cast<Eigen::Index>(b) * cols / nblk;
            Eigen::Index c1 = static_cast<Eigen::Index>(b + 1) * cols / nblk;
            if (c1 > c0)
                out.middleCols(c0, c1 - c0).noalias() +=
                    f * (a * x.middleCols(c0, c1 - c0));
        });
    }

    static void mmsp_acc(const Eigen::MatrixXcd& x, const SpMat& b,
                         Eigen::MatrixXcd& out, cplx f, unsigned threads) {
        const Eigen::Index cols = b.cols();
        if (!worth_threading(x.rows(), cols)) {
            out.noalias() += f * (x * b);
            return;
        }
        const Eigen::Index nblk = std::min<Eigen::Index>(8, cols);
        parallel_for(static_cast<std::size_t>(nblk), threads, [&](std::size_t blk) {
            Eigen::Index c0 = static_cast<Eigen::Index>(blk) * cols / nblk;
            Eigen::Index c1 = static_cast<Eigen::Index>(blk + 1) * cols / nblk;
            if (c1 > c0) {
                SpMat bb = b.middleCols(c0, c1 - c0);
                out.middleCols(c0, c1 - c0).noalias() += f * (x * bb);
            }
        });
    }

    static Eigen::MatrixXcd left_mult(const SpMat& a, const Eigen::MatrixXcd& x,
                                      unsigned threads) {
        Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(x.rows(), x.cols());
        spmm_acc(a, x, out, cplx{1.0, 0.0}, threads);
        return out;
    }

    void rk4_span(Eigen::MatrixXcd& rho, double span, const EvolveOptions& opts) const {
        const double dt_max = opts.dt_factor / norm_estimate();
        const auto n_sub = static_cast<std::size_t>(std::ceil(span / dt_max));
        const double h = span / static_cast<double>(std::max<std::size_t>(n_sub, 1));
        for (std::size_t k = 0; k < n_sub; ++k) {
            Eigen::MatrixXcd k1 = apply(rho, opts.threads);
            Eigen::MatrixXcd k2 = apply(rho + 0.5 * h * k1, opts.threads);
            Eigen::MatrixXcd k3 = apply(rho + 0.5 * h * k2, opts.threads);
            Eigen::MatrixXcd k4 = apply(rho + h * k3, opts.threads);
            rho += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
    }

    /// Arnoldi expm-multiply on vec(rho) with adaptive substeps (the Expokit
    /// scheme: augmented Hessenberg exponential plus the two-term corrected
    /// local error estimate).
    void krylov_step(Eigen::MatrixXcd& rho, double span, const EvolveOptions& opts) const {
        const int m = std::max(4, opts.krylov_m);
        const auto vlen = static_cast<Eigen::Index>(dim_ * dim_);
        const double anorm = norm_estimate();
        double t_done = 0.0;
        double tau = std::min(span, static_cast<double>(m) / (4.0 * anorm));
        std::vector<Eigen::MatrixXcd> basis;
        basis.reserve(static_cast<std::size_t>(m) + 1);
        auto dot = [vlen](const Eigen::MatrixXcd& a, const Eigen::MatrixXcd& b) {
            return (Eigen::Map<const Eigen::VectorXcd>(a.data(), vlen).adjoint() *
                    Eigen::Map<const Eigen::VectorXcd>(b.data(), vlen))(0);
        };

        while (t_done < span * (1.0 - 1e-14)) {
            tau = std::min(tau, span - t_done);
            const double beta = rho.norm();
            if (beta == 0.0) return;

            basis.clear();
            basis.push_back(rho / beta);
            Eigen::MatrixXcd hmat = Eigen::MatrixXcd::Zero(m + 2, m + 2);
            int k = m;
            bool happy = false;
            double avnorm = 0.0;
            for (int j = 0; j < m; ++j) {
                Eigen::MatrixXcd w = apply(basis[static_cast<std::size_t>(j)], opts.threads);
                for (int pass = 0; pass < 2; ++pass) {
                    for (int i = 0; i <= j; ++i) {
                        const auto& vi = basis[static_cast<std::size_t>(i)];
                        cplx hij = dot(vi, w);
                        hmat(i, j) += hij;
                        w -= hij * vi;
                    }
                }
                double hn = w.norm();
                hmat(j + 1, j) = hn;
                if (hn < 1e-12 * beta) {
                    k = j + 1;
                    happy = true;
                    break;
                }
                basis.push_back(w / hn);
            }
            if (!happy) {
                hmat(m + 1, m) = 1.0;
                avnorm = apply(basis[static_cast<std::size_t>(m)], opts.threads).norm();
            }

            const int mx = happy ? k : m + 2;
            for (int attempt = 0; attempt < 60; ++attempt) {
                Eigen::MatrixXcd f = (tau * hmat.topLeftCorner(mx, mx)).exp();
                double err_loc = 0.0;
                if (!happy) {
                    double err1 = std::abs(f(m, 0)) * beta;
                    double err2 = std::abs(f(m + 1, 0)) * beta * avnorm;
                    if (err1 > 10.0 * err2)
                        err_loc = err2;
                    else if (err2 > err1)
                        err_loc = err1;
                    else
                        err_loc = err1 * err2 / std::max(err1 - err2, 1e-300);
                }
                if (happy || err_loc <= opts.krylov_tol * beta) {
                    Eigen::MatrixXcd next = Eigen::MatrixXcd::Zero(rho.rows(), rho.cols());
                    for (int i = 0; i < k; ++i)
                        next += (beta * f(i, 0)) * basis[static_cast<std::size_t>(i)];
                    rho = std::move(next);
                    t_done += tau;
                    if (!happy && err_loc < 0.1 * opts.krylov_tol * beta) tau *= 1.3;
                    break;
                }
                tau *= 0.5;
                require(attempt < 59, "krylov_step: local error control failed");
            }
        }
    }

    SpMat vectorized_liouvillian() const {
        const auto d2 = static_cast<Eigen::Index>(dim_ * dim_);
        SpMat id = fockdetail::identity(dim_);
        SpMat lvec(d2, d2);
        lvec += Eigen::kroneckerProduct(id, (-iu * heff_).eval()).eval();
        lvec += Eigen::kroneckerProduct(SpMat(heff_.conjugate()), (iu * id).eval()).eval();
        for (const auto& [op, rate] : jumps_) {
            SpMat oc = op.conjugate();
            lvec += (rate * Eigen::kroneckerProduct(oc, op)).eval();
        }
        return lvec;
    }

    Eigen::VectorXcd inverse_iterate(const SpMat& lvec, double scale,
                                     uint64_t variant) const {
        const auto d2 = lvec.rows();
        SpMat shifted = lvec;
        const double sigma = 1e-8 * std::max(scale, 1.0);
        for (Eigen::Index i = 0; i < d2; ++i) shifted.coeffRef(i, i) -= sigma;
        shifted.makeCompressed();
        Eigen::SparseLU<SpMat> lu;
        lu.compute(shifted);
        require(lu.info() == Eigen::Success,
                "steady_state: sparse factorization failed");
        Eigen::VectorXcd v(d2);
        for (Eigen::Index i = 0; i < d2; ++i) {
            auto x = static_cast<uint64_t>(i) * 2862933555777941757ull +
                     3037000493ull * variant;
            v(i) = cplx(static_cast<double>((x >> 33) & 0xffff) / 65535.0 - 0.5,
                        static_cast<double>((x >> 17) & 0xffff) / 65535.0 - 0.5);
        }
        v.normalize();
        for (int it = 0; it < 50; ++it) {
            Eigen::VectorXcd w = lu.solve(v);
            w.normalize();
            v = w;
            if ((lvec * v).norm() < 1e-10 * std::max(scale, 1.0)) break;
        }
        return v;
    }

    ModelParams params_;
    std::size_t cutoff_ = 0;
    std::size_t dim_ = 0;
    std::vector<SpMat> a_, a2_, adj_;
    std::vector<Jump> jumps_;
    SpMat hamiltonian_, heff_, heff_adj_;
    std::vector<Eigen::VectorXd> top_masks_;
    mutable double norm_cache_ = -1.0;
};

/// Free-function form of the generator action.
inline Eigen::MatrixXcd liouvillian_apply(const LindbladSystem& sys,
                                          const Eigen::MatrixXcd& rho,
                                          unsigned threads = 0) {
    return sys.apply(rho, threads);
}

/// Default per-mode cutoff ceil(x + 5 sqrt(x)) with x = |2 eps / kappa2|,
/// capped so the product dimension fits the budget.
inline std::size_t default_cutoff(const ModelParams& p, std::size_t dim_budget = 4096) {
    const std::size_t n = p.n_sites;
    std::size_t cap = 1;
    while (std::pow(static_cast<double>(cap + 2), static_cast<double>(n)) <=
           static_cast<double>(dim_budget))
        ++cap;
    if (p.kappa2 <= 0.0) return cap;
    const double x = std::abs(2.0 * p.epsilon / p.kappa2);
    const auto want = static_cast<std::size_t>(std::ceil(x + 5.0 * std::sqrt(x)));
    return std::min(cap, std::max<std::size_t>(want, 2));
}

// --- Reference states -------------------------------------------------------

inline Eigen::VectorXcd coherent_amplitudes(cplx zeta, std::size_t cutoff) {
    Eigen::VectorXcd c(static_cast<Eigen::Index>(cutoff + 1));
    c(0) = std::exp(-0.5 * std::norm(zeta));
    for (std::size_t n = 1; n <= cutoff; ++n)
        c(static_cast<Eigen::Index>(n)) =
            c(static_cast<Eigen::Index>(n - 1)) * zeta / std::sqrt(static_cast<double>(n));
    return c;
}

inline FockDensityMatrix vacuum_density(std::size_t n_modes, std::size_t cutoff) {
    FockDensityMatrix out;
    out.n_modes = n_modes;
    out.cutoff = cutoff;
    auto dim = static_cast<Eigen::Index>(
        std::llround(std::pow(static_cast<double>(cutoff + 1),
                              static_cast<double>(n_modes))));
    out.rho = Eigen::MatrixXcd::Zero(dim, dim);
    out.rho(0, 0) = 1.0;
    return out;
}

inline FockDensityMatrix coherent_state_density(cplx zeta, std::size_t cutoff) {
    FockDensityMatrix out;
    out.n_modes = 1;
    out.cutoff = cutoff;
    Eigen::VectorXcd c = coherent_amplitudes(zeta, cutoff);
    out.rho = c * c.adjoint();
    return out;
}

/// Normalized cat |zeta> + sign |-zeta> (truncation warning beyond 1e-8 tail).
inline FockDensityMatrix cat_state_density(cplx zeta, int sign, std::size_t cutoff,
                                           bool* truncation_warning = nullptr) {
    require(sign == 1 || sign == -1, "cat_state_density: sign must be +1/-1");
    Eigen::VectorXcd c = coherent_amplitudes(zeta, cutoff);
    Eigen::VectorXcd psi(c.size());
    for (Eigen::Index n = 0; n < c.size(); ++n)
        psi(n) = c(n) * (1.0 + (sign > 0 ? 1.0 : -1.0) * (n % 2 == 0 ? 1.0 : -1.0));
    // psi now holds c_n (1 +- (-1)^n); normalize numerically on the truncated
    // space and compare against the closed-form norm for the tail check.
    double nrm2 = psi.squaredNorm();
    require(nrm2 > 0.0, "cat_state_density: null state (odd cat at zeta = 0)");
    const double exact =
        2.0 * (1.0 + (sign > 0 ? 1.0 : -1.0) * std::exp(-2.0 * std::norm(zeta)));
    if (truncation_warning)
        *truncation_warning = std::abs(nrm2 - exact) > 1e-8 * std::max(exact, 1.0);
    psi /= std::sqrt(nrm2);
    FockDensityMatrix out;
    out.n_modes = 1;
    out.cutoff = cutoff;
    out.rho = psi * psi.adjoint();
    return out;
}

/// Equal classical mixture of |zeta> and |-zeta>.
inline FockDensityMatrix coherent_mixture_density(cplx zeta, std::size_t cutoff) {
    FockDensityMatrix out;
    out.n_modes = 1;
    out.cutoff = cutoff;
    Eigen::VectorXcd cp = coherent_amplitudes(zeta, cutoff);
    Eigen::VectorXcd cm = coherent_amplitudes(-zeta, cutoff);
    out.rho = 0.5 * (cp * cp.adjoint() + cm * cm.adjoint());
    return out;
}

/// Trace distance (1/2)||rho - sigma||_1 between Hermitized operators.
inline double trace_distance(const Eigen::MatrixXcd& rho, const Eigen::MatrixXcd& sigma) {
    Eigen::MatrixXcd d = rho - sigma;
    d = 0.5 * (d + d.adjoint()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(d, Eigen::EigenvaluesOnly);
    return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

}  // namespace ppcat

#endif

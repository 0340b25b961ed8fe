#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ppcat/estimators.hpp"
#include "ppcat/rng.hpp"

using namespace ppcat;

namespace {

RunConfig tiny_config(std::size_t n_sites, std::size_t s, double t_final = 0.0) {
    RunConfig cfg;
    cfg.params.n_sites = n_sites;
    if (n_sites > 1) cfg.params.gamma = 1.0;
    cfg.n_subensembles = s;
    cfg.n_trajectories = 100 * s;
    cfg.t_final = t_final;
    cfg.record_times = {t_final};
    return cfg;
}

RunResult fake_run(std::size_t s, std::size_t alive_per_sub, double time = 0.0) {
    RunResult rr;
    rr.n_trajectories = s * alive_per_sub;
    rr.n_subensembles = s;
    rr.record_times = {time};
    rr.records.resize(1);
    rr.records[0].time = time;
    rr.records[0].alive_per_sub.assign(s, alive_per_sub);
    rr.records[0].diverged_total = 0;
    return rr;
}

TrajectoryState state_of(cplx a, cplx b, cplx w = cplx{1.0, 0.0}) {
    TrajectoryState st;
    st.point.alpha = {a};
    st.point.beta = {b};
    st.weight = w;
    return st;
}

}  // namespace

TEST_CASE("subensemble error formula on simple inputs") {
    // All values identical: exactly zero standard error.
    std::vector<cplx> same(60, cplx{0.7, -0.1});
    SubStats st = subensemble_error(same, 6);
    CHECK(std::abs(st.mean - cplx{0.7, -0.1}) < 1e-15);
    CHECK(st.se == 0.0);  // exactly, not merely small

    // {0,1} in two halves: mean 1/2, sigma_SE exactly 1/2.
    std::vector<cplx> half(10, cplx{0.0, 0.0});
    half.resize(20, cplx{1.0, 0.0});
    st = subensemble_error(half, 2);
    CHECK(st.mean.real() == Catch::Approx(0.5));
    CHECK(st.se == Catch::Approx(0.5));

    CHECK_THROWS_AS(subensemble_error(half, 1), contract_error);
    CHECK_THROWS_AS(subensemble_error(half, 3), contract_error);
}

TEST_CASE("subensemble error matches iid Gaussian statistics") {
    const std::size_t n = 100'000;
    std::vector<cplx> vals(n);
    CounterStream s(31341, 0, 0);
    for (std::size_t i = 0; i + 1 < n; i += 2) {
        double g0, g1;
        s.gaussian_pair(static_cast<uint32_t>(i / 2), g0, g1);
        vals[i] = g0;
        vals[i + 1] = g1;
    }
    SubStats st = subensemble_error(vals, 20);
    double want = 1.0 / std::sqrt(static_cast<double>(n));
    CHECK(st.se > 0.7 * want);
    CHECK(st.se < 1.3 * want);
    CHECK(std::abs(st.mean.real()) < 4.0 * want);
}

TEST_CASE("vacuum ensemble observables") {
    RunConfig cfg = tiny_config(1, 4);
    MomentsObserver mom;
    mom.begin_run(cfg, {0.0});
    for (std::size_t q = 0; q < 4; ++q)
        for (int i = 0; i < 25; ++i) mom.accumulate(0, q, state_of(0.0, 0.0));
    RunResult rr = fake_run(4, 25);
    SingleModeResult r = single_mode_observables(mom, rr);
    CHECK(r.n.real_at(0) == 0.0);
    CHECK(r.n.se[0] == 0.0);
    CHECK(r.parity.real_at(0) == 1.0);
    CHECK(r.zeta.mean[0] == cplx{0.0, 0.0});
    CHECK(!r.g2.defined[0]);
}

TEST_CASE("deterministic coherent ensemble has exact statistics") {
    const double z = 0.8;
    RunConfig cfg = tiny_config(1, 5);
    MomentsObserver mom;
    mom.begin_run(cfg, {0.0});
    for (std::size_t q = 0; q < 5; ++q)
        for (int i = 0; i < 11; ++i) mom.accumulate(0, q, state_of(z, z));
    RunResult rr = fake_run(5, 11);
    SingleModeResult r = single_mode_observables(mom, rr);
    CHECK(r.n.real_at(0) == Catch::Approx(z * z).epsilon(1e-14));
    CHECK(r.n.se[0] == 0.0);
    CHECK(r.g2.defined[0]);
    CHECK(r.g2.real_at(0) == Catch::Approx(1.0).epsilon(1e-13));
    CHECK(r.g2.se[0] == 0.0);
    CHECK(r.parity.real_at(0) ==
          Catch::Approx(std::exp(-2.0 * z * z)).epsilon(1e-13));
    CHECK(r.zeta.mean[0].real() == Catch::Approx(z).epsilon(1e-13));
    CHECK(r.zeta.se[0] == 0.0);
}

TEST_CASE("parity of a real nonnegative ensemble stays in (0, 1]") {
    RunConfig cfg = tiny_config(1, 4);
    MomentsObserver mom;
    mom.begin_run(cfg, {0.0});
    std::mt19937 gen(7);
    std::uniform_real_distribution<> dis(0.0, 3.0);
    for (std::size_t q = 0; q < 4; ++q)
        for (int i = 0; i < 50; ++i) {
            double r = dis(gen);
            mom.accumulate(0, q, state_of(std::sqrt(r), std::sqrt(r)));
        }
    RunResult rr = fake_run(4, 50);
    SingleModeResult r = single_mode_observables(mom, rr);
    CHECK(r.parity.real_at(0) > 0.0);
    CHECK(r.parity.real_at(0) <= 1.0);
}

TEST_CASE("weighted estimators with unit weights match unweighted bit for bit") {
    RunConfig cfg = tiny_config(1, 4);
    MomentsObserver a, b;
    a.begin_run(cfg, {0.0});
    b.begin_run(cfg, {0.0});
    std::mt19937 gen(9);
    std::normal_distribution<> nd;
    for (std::size_t q = 0; q < 4; ++q)
        for (int i = 0; i < 40; ++i) {
            cplx al{nd(gen), nd(gen)}, be{nd(gen), nd(gen)};
            a.accumulate(0, q, state_of(al, be, cplx{1.0, 0.0}));
            b.accumulate(0, q, state_of(al, be, cplx{1.0, 0.0}));
        }
    RunResult rr = fake_run(4, 40);
    SingleModeResult ra = single_mode_observables(a, rr, true);
    SingleModeResult rb = single_mode_observables(b, rr, false);
    CHECK(ra.n.real_at(0) == rb.n.real_at(0));
    CHECK(ra.g2.real_at(0) == rb.g2.real_at(0));
    CHECK(ra.parity.real_at(0) == rb.parity.real_at(0));
    CHECK(ra.n.se[0] == rb.n.se[0]);
}

TEST_CASE("estimator means are permutation invariant within subensembles") {
    std::vector<cplx> vals(120);
    std::mt19937 gen(11);
    std::normal_distribution<> nd;
    for (auto& v : vals) v = cplx{nd(gen), nd(gen)};
    SubStats before = subensemble_error(vals, 4);
    std::vector<cplx> perm = vals;
    for (int blk = 0; blk < 4; ++blk)
        std::shuffle(perm.begin() + blk * 30, perm.begin() + (blk + 1) * 30, gen);
    SubStats after = subensemble_error(perm, 4);
    CHECK(std::abs(before.mean - after.mean) < 1e-13);
    CHECK(before.se == Catch::Approx(after.se).margin(1e-13));

    // Permuting across subensembles keeps the mean, generally not the error.
    std::vector<cplx> cross = vals;
    std::swap(cross[0], cross[119]);
    std::swap(cross[5], cross[65]);
    SubStats crossed = subensemble_error(cross, 4);
    CHECK(std::abs(before.mean - crossed.mean) < 1e-13);
}

TEST_CASE("g1 matrix is conjugate symmetric within errors") {
    RunConfig cfg = tiny_config(3, 8);
    MomentsObserver mom(MomentsObserver::Pairs::all);
    mom.begin_run(cfg, {0.0});
    std::mt19937 gen(13);
    std::normal_distribution<> nd;
    for (std::size_t q = 0; q < 8; ++q)
        for (int i = 0; i < 400; ++i) {
            cplx c{nd(gen), nd(gen)};  // common mode shared by the sites
            TrajectoryState st;
            st.point.alpha.resize(3);
            st.point.beta.resize(3);
            for (int j = 0; j < 3; ++j) {
                cplx l{nd(gen), nd(gen)};
                st.point.alpha[j] = c + 0.5 * l;
                st.point.beta[j] = std::conj(c + 0.5 * l);
            }
            mom.accumulate(0, q, st);
        }
    MultimodeCorrelations mc = multimode_correlations(mom, 0);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(std::abs(mc.g1.at(j, j) - cplx{1.0, 0.0}) < 1e-12);
        for (std::size_t jp = 0; jp < 3; ++jp) {
            double tol = 3.0 * (mc.g1.se_at(j, jp) + mc.g1.se_at(jp, j)) + 1e-12;
            CHECK(std::abs(mc.g1.at(j, jp) - std::conj(mc.g1.at(jp, j))) < tol);
        }
    }
}

TEST_CASE("spike detector stays quiet on smooth series and fires on spikes") {
    std::vector<double> mean(60, 1.0), se(60, 0.01);
    auto quiet = spike_detect(mean, se);
    CHECK(std::none_of(quiet.begin(), quiet.end(), [](bool b) { return b; }));

    for (std::size_t i = 0; i < mean.size(); ++i)
        mean[i] = std::tanh(0.1 * static_cast<double>(i));
    auto flags = spike_detect(mean, se);
    CHECK(std::none_of(flags.begin(), flags.end(), [](bool b) { return b; }));

    mean[30] = 5.0;  // lone excursion in the mean
    flags = spike_detect(mean, se);
    CHECK(flags[30]);

    std::fill(mean.begin(), mean.end(), 1.0);
    se[40] = 0.5;  // jump in the standard error alone
    flags = spike_detect(mean, se);
    CHECK(flags[40]);

    std::vector<double> tooshort(2, 0.0);
    CHECK_THROWS_AS(spike_detect(tooshort, tooshort), contract_error);
}

TEST_CASE("regime classifier reproduces the four labels on synthetic series") {
    const std::size_t n = 40;
    auto mkseries = [&](double value, double sigma) {
        ObservableSeries s;
        s.subensembles = 20;
        for (std::size_t i = 0; i < n; ++i) {
            s.times.push_back(0.1 * static_cast<double>(i));
            s.mean.push_back(value);
            s.se.push_back(sigma);
            s.defined.push_back(true);
            s.divergence_fraction.push_back(0.0);
        }
        s.spike_flags.assign(n, false);
        return s;
    };
    OracleReference oracle;
    for (std::size_t i = 0; i < n; ++i) {
        oracle.times.push_back(0.1 * static_cast<double>(i));
        oracle.n.push_back(1.0);
        oracle.g2.push_back(1.2);
        oracle.parity.push_back(0.8);
        oracle.zeta.push_back(cplx{1.0, 0.0});
    }
    oracle.steady_n = 1.0;
    oracle.steady_g2 = 1.2;
    oracle.steady_parity = 0.0;
    oracle.steady_zeta = cplx{1.0, 0.0};

    SingleModeResult green{mkseries(1.0, 0.003), mkseries(1.0, 0.003),
                           mkseries(1.2, 0.02), mkseries(0.8, 0.01)};
    CHECK(classify_regime(green, oracle).label == RegimeLabel::stable_green);

    SingleModeResult blue = green;
    for (std::size_t i = n / 2; i < n; ++i) blue.parity.mean[i] = 0.0;
    blue.parity.spike_flags[n / 2 + 1] = true;
    CHECK(classify_regime(blue, oracle).label == RegimeLabel::parity_decay_blue);

    SingleModeResult orange = green;
    for (std::size_t i = 0; i < n; ++i) {
        double f = i < 5 ? 0.0 : std::min(1.0, 0.2 * static_cast<double>(i - 4));
        orange.n.divergence_fraction[i] = f;
        orange.n.mean[i] = 0.0;  // never reaches the steady value
    }
    CHECK(classify_regime(orange, oracle).label == RegimeLabel::unstable_orange);

    SingleModeResult ygreen = green;
    for (std::size_t i = 0; i < n; ++i) ygreen.g2.se[i] = 2.0;
    CHECK(classify_regime(ygreen, oracle).label ==
          RegimeLabel::low_snr_yellowgreen);
}

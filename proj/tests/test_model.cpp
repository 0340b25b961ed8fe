#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <vector>

#include "ppcat/model.hpp"
#include "ppcat/rng.hpp"

using namespace ppcat;

namespace {

// Independent transcription of the published SDE drift, term by term with
// explicit 1-based indices and periodic wrapping; deliberately organized
// differently from the library implementation.
std::vector<cplx> drift_reference(const ModelParams& p, const PhasePoint& x) {
    const int n = static_cast<int>(p.n_sites);
    std::vector<cplx> out(2 * p.n_sites);
    for (int j = 1; j <= n; ++j) {
        const cplx eps_j = p.epsilon * std::exp(-iu * (2.0 * p.phi) * double(j));
        auto wrap = [&](int idx) { return ((idx - 1) % n + n) % n; };
        const cplx a = x.alpha[wrap(j)];
        const cplx b = x.beta[wrap(j)];
        const cplx a_up = x.alpha[wrap(j + 1)], a_dn = x.alpha[wrap(j - 1)];
        const cplx b_up = x.beta[wrap(j + 1)], b_dn = x.beta[wrap(j - 1)];
        cplx da = (-p.kappa2 * a * a - 2.0 * iu * eps_j) * b -
                  (p.gamma + p.kappa1 / 2.0) * a +
                  (p.gamma / 2.0) * std::exp(iu * p.phi) * a_up +
                  (p.gamma / 2.0) * std::exp(-iu * p.phi) * a_dn;
        cplx db = (-p.kappa2 * b * b + 2.0 * iu * std::conj(eps_j)) * a -
                  (p.gamma + p.kappa1 / 2.0) * b +
                  (p.gamma / 2.0) * std::exp(-iu * p.phi) * b_up +
                  (p.gamma / 2.0) * std::exp(iu * p.phi) * b_dn;
        out[2 * (j - 1)] = da;
        out[2 * (j - 1) + 1] = db;
    }
    return out;
}

PhasePoint random_point(std::size_t n, uint64_t salt, double scale = 2.0) {
    PhasePoint x;
    x.alpha.resize(n);
    x.beta.resize(n);
    CounterStream s(0x5eedull, salt, 0, RngSalt::generic);
    for (std::size_t j = 0; j < n; ++j) {
        double g0, g1, g2, g3;
        s.gaussian_pair(static_cast<uint32_t>(2 * j), g0, g1);
        s.gaussian_pair(static_cast<uint32_t>(2 * j + 1), g2, g3);
        x.alpha[j] = scale * cplx{g0, g1};
        x.beta[j] = scale * cplx{g2, g3};
    }
    return x;
}

}  // namespace

TEST_CASE("model parameter invariants are enforced") {
    ModelParams p;
    p.n_sites = 1;
    p.gamma = 0.5;
    CHECK_THROWS_AS(p.validate(), contract_error);
    p.gamma = 0.0;
    p.kappa1 = -1.0;
    CHECK_THROWS_AS(p.validate(), contract_error);
    p.kappa1 = 0.0;
    CHECK_NOTHROW(p.validate());

    SchemeSpec s;
    s.decomposition = Decomposition::diag_sqrt;
    s.gauge = Gauge::choice1;
    CHECK_THROWS_AS(s.validate(), contract_error);
    s.decomposition = Decomposition::split_four_noise;
    CHECK_NOTHROW(s.validate());
    s.gauge = Gauge::choice2;
    CHECK_THROWS_AS(s.validate(), contract_error);
}

TEST_CASE("drift vanishes exactly at the origin") {
    ModelParams p;
    p.n_sites = 3;
    p.epsilon = cplx{1.3, 0.4};
    p.kappa1 = 0.7;
    p.kappa2 = 0.9;
    p.gamma = 2.0;
    p.phi = 0.3;
    PhasePoint x = sample_vacuum(3);
    for (cplx v : drift(p, x)) {
        CHECK(v.real() == 0.0);
        CHECK(v.imag() == 0.0);
    }
}

TEST_CASE("single-mode drift at a unit beta point") {
    ModelParams p;
    p.n_sites = 1;
    p.epsilon = 1.0;
    PhasePoint x = sample_vacuum(1);
    x.beta[0] = 1.0;
    auto a = drift(p, x);
    CHECK(a[0] == cplx{0.0, -2.0});
    CHECK(a[1] == cplx{0.0, 0.0});
}

TEST_CASE("drift matches an independent transcription of the SDEs") {
    ModelParams p;
    p.n_sites = 3;
    p.epsilon = 0.1;  // gamma/eps = 10
    p.kappa1 = 0.05;
    p.kappa2 = 0.02;
    p.gamma = 1.0;
    p.phi = 0.0;
    for (uint64_t trial = 0; trial < 50; ++trial) {
        PhasePoint x = random_point(3, trial);
        auto got = drift(p, x);
        auto want = drift_reference(p, x);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(std::abs(got[i] - want[i]) < 1e-12);
    }
    // Nonzero phase exercises the site-dependent drive and hop phases.
    p.phi = 0.7;
    for (uint64_t trial = 0; trial < 50; ++trial) {
        PhasePoint x = random_point(3, 1000 + trial);
        auto got = drift(p, x);
        auto want = drift_reference(p, x);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(std::abs(got[i] - want[i]) < 1e-12);
    }
}

TEST_CASE("drift dimension mismatch is a contract violation") {
    ModelParams p;
    p.n_sites = 2;
    CHECK_THROWS_AS(drift(p, sample_vacuum(3)), contract_error);
}

TEST_CASE("diffusion blocks and examples") {
    ModelParams p;
    p.n_sites = 1;
    p.epsilon = 1.0;
    p.kappa2 = 1.0;
    PhasePoint x = sample_vacuum(1);
    auto d = diffusion_matrix(p, x);
    CHECK(std::abs(d(0, 0) - cplx{0.0, -2.0}) < 1e-15);
    CHECK(std::abs(d(1, 1) - cplx{0.0, 2.0}) < 1e-15);

    p.kappa2 = 0.0;
    p.epsilon = 0.0;
    PhasePoint y = random_point(1, 3);
    CHECK(diffusion_matrix(p, y).norm() == 0.0);
}

TEST_CASE("noise matrix principal-branch examples") {
    ModelParams p;
    p.n_sites = 1;
    p.epsilon = 1.0;
    p.kappa2 = 0.0;
    SchemeSpec diag{Decomposition::diag_sqrt, Gauge::none};
    auto b = noise_matrix(diag, p, sample_vacuum(1));
    CHECK(std::abs(b(0, 0) - cplx{1.0, -1.0}) < 1e-15);
    CHECK(std::abs(b(1, 1) - cplx{1.0, 1.0}) < 1e-15);

    p.kappa2 = 1.0;
    SchemeSpec split{Decomposition::split_four_noise, Gauge::none};
    auto b4 = noise_matrix(split, p, sample_vacuum(1));
    REQUIRE(b4.cols() == 4);
    CHECK(std::abs(b4(0, 0) - cplx{1.0, -1.0}) < 1e-15);
    CHECK(std::abs(b4(1, 1) - cplx{1.0, 1.0}) < 1e-15);
    CHECK(b4(0, 2) == cplx{0.0, 0.0});  // alpha = 0 kills the kappa2 column
    CHECK(b4(1, 3) == cplx{0.0, 0.0});
}

TEST_CASE("B B^T reproduces the diffusion matrix for both decompositions") {
    ModelParams p;
    p.n_sites = 2;
    p.epsilon = cplx{0.8, -0.3};
    p.kappa1 = 0.1;
    p.kappa2 = 0.7;
    p.gamma = 1.1;
    p.phi = 0.4;
    for (auto dec : {Decomposition::diag_sqrt, Decomposition::split_four_noise}) {
        SchemeSpec s{dec, Gauge::none};
        double worst = 0.0;
        for (uint64_t trial = 0; trial < 10'000; ++trial) {
            PhasePoint x = random_point(2, trial);
            Eigen::MatrixXcd b = noise_matrix(s, p, x);
            Eigen::MatrixXcd d = diffusion_matrix(p, x);
            worst = std::max(worst,
                             (b * b.transpose() - d).cwiseAbs().maxCoeff());
        }
        CHECK(worst < 1e-12);
    }
}

TEST_CASE("gauge vector vanishes at the origin and for gauge none") {
    ModelParams p;
    p.n_sites = 1;
    p.epsilon = 1.0;
    p.kappa2 = 1.0;
    SchemeSpec c1{Decomposition::split_four_noise, Gauge::choice1};
    SchemeSpec c2{Decomposition::diag_sqrt, Gauge::choice2};
    for (const auto& s : {c1, c2})
        for (cplx g : gauge_vector(s, p, sample_vacuum(1)))
            CHECK(g == cplx{0.0, 0.0});
    SchemeSpec none{Decomposition::diag_sqrt, Gauge::none};
    PhasePoint x = random_point(1, 5);
    for (cplx g : gauge_vector(none, p, x)) CHECK(g == cplx{0.0, 0.0});
}

TEST_CASE("gauged drift reproduces the closed forms") {
    // A - B g must equal the tabulated gauged drift; the beta rows carry the
    // conjugate drive wherever the beta row of B does.
    ModelParams p;
    p.n_sites = 1;
    p.kappa1 = 0.3;
    p.kappa2 = 0.8;
    SchemeSpec c1{Decomposition::split_four_noise, Gauge::choice1};
    SchemeSpec c2{Decomposition::diag_sqrt, Gauge::choice2};

    double worst1 = 0.0, worst2 = 0.0;
    for (uint64_t trial = 0; trial < 10'000; ++trial) {
        p.epsilon = (trial % 2 == 0) ? cplx{1.0, 0.0} : cplx{0.6, -1.1};
        PhasePoint x = random_point(1, trial);
        const cplx a = x.alpha[0], b = x.beta[0];
        const cplx eps = p.epsilon;

        Eigen::MatrixXcd bm1 = noise_matrix(c1, p, x);
        auto av = drift(p, x);
        auto g1 = gauge_vector(c1, p, x);
        Eigen::VectorXcd gv1(4);
        for (int k = 0; k < 4; ++k) gv1(k) = g1[static_cast<std::size_t>(k)];
        Eigen::VectorXcd gauged1 =
            Eigen::Map<Eigen::Vector2cd>(av.data()) - bm1 * gv1;
        cplx want_a1 = -0.5 * p.kappa1 * a - p.kappa2 * a * std::abs(a * b);
        cplx want_b1 = -0.5 * p.kappa1 * b - p.kappa2 * b * std::abs(a * b);
        worst1 = std::max({worst1, std::abs(gauged1(0) - want_a1),
                           std::abs(gauged1(1) - want_b1)});

        Eigen::MatrixXcd bm2 = noise_matrix(c2, p, x);
        auto g2 = gauge_vector(c2, p, x);
        Eigen::VectorXcd gv2(2);
        gv2 << g2[0], g2[1];
        Eigen::VectorXcd gauged2 =
            Eigen::Map<Eigen::Vector2cd>(av.data()) - bm2 * gv2;
        cplx want_a2 = -0.5 * p.kappa1 * a -
                       std::abs(2.0 * iu * eps + p.kappa2 * a * a) * a;
        cplx want_b2 = -0.5 * p.kappa1 * b -
                       std::abs(2.0 * iu * std::conj(eps) - p.kappa2 * b * b) * b;
        worst2 = std::max({worst2, std::abs(gauged2(0) - want_a2),
                           std::abs(gauged2(1) - want_b2)});
    }
    CHECK(worst1 < 1e-12);
    CHECK(worst2 < 1e-12);
}

TEST_CASE("choice-2 gauged drift is restoring") {
    ModelParams p;
    p.n_sites = 1;
    p.epsilon = 1.0;
    p.kappa1 = 0.2;
    p.kappa2 = 1.0;
    SchemeSpec c2{Decomposition::diag_sqrt, Gauge::choice2};
    for (uint64_t trial = 0; trial < 2000; ++trial) {
        PhasePoint x = random_point(1, trial, 3.0);
        auto av = drift(p, x);
        auto g = gauge_vector(c2, p, x);
        Eigen::MatrixXcd bm = noise_matrix(c2, p, x);
        cplx ga = av[0] - (bm(0, 0) * g[0] + bm(0, 1) * g[1]);
        CHECK(std::real(std::conj(x.alpha[0]) * ga) <= 1e-12);
    }
}

TEST_CASE("stability rate examples and finite-difference oracle") {
    ModelParams p;
    p.n_sites = 1;
    p.epsilon = 0.0;
    p.kappa1 = 1.0;
    PhasePoint x = sample_vacuum(1);
    CHECK(stability_rate(p, x) == 0.0);
    x.alpha[0] = 1.0;
    CHECK(stability_rate(p, x) == Catch::Approx(-1.0));

    ModelParams q;
    q.n_sites = 1;
    q.epsilon = 1.0;
    q.kappa1 = 0.37;
    q.kappa2 = 0.85;
    for (uint64_t trial = 0; trial < 200; ++trial) {
        PhasePoint y = random_point(1, trial);
        // Central difference of I along the drift flow.
        const double h = 1e-6;
        auto a = drift(q, y);
        auto shift = [&](double sgn) {
            PhasePoint z = y;
            z.alpha[0] += sgn * h * a[0];
            z.beta[0] += sgn * h * a[1];
            return std::norm(z.alpha[0]) + std::norm(z.beta[0]);
        };
        double fd = (shift(1.0) - shift(-1.0)) / (2.0 * h);
        CHECK(stability_rate(q, y) == Catch::Approx(fd).margin(1e-6).epsilon(1e-6));
    }

    ModelParams m;
    m.n_sites = 2;
    CHECK_THROWS_AS(stability_rate(m, sample_vacuum(2)), contract_error);
}

TEST_CASE("vacuum sampler is exactly zero") {
    PhasePoint x = sample_vacuum(3);
    REQUIRE(x.alpha.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(x.alpha[j] == cplx{0.0, 0.0});
        CHECK(x.beta[j] == cplx{0.0, 0.0});
    }
}

TEST_CASE("cat sampler atoms and moments") {
    CounterStream s0(11, 0, 0, RngSalt::initial_state);
    CatSample zero = sample_cat(cplx{0.0, 0.0}, 1, s0);
    CHECK(zero.point.alpha[0] == cplx{0.0, 0.0});
    CHECK(zero.point.beta[0] == cplx{0.0, 0.0});
    CHECK(zero.weight == cplx{1.0, 0.0});

    // Large |zeta|: cross atoms are suppressed; both diagonal atoms appear.
    const cplx big{4.0, 1.0};
    int plus = 0, minus = 0;
    for (uint64_t i = 0; i < 4000; ++i) {
        CounterStream s(12, i, 0, RngSalt::initial_state);
        CatSample c = sample_cat(big, 1, s);
        REQUIRE(c.weight == cplx{1.0, 0.0});
        if (std::abs(c.point.alpha[0] - big) < 1e-14) {
            ++plus;
            CHECK(std::abs(c.point.beta[0] - std::conj(big)) < 1e-14);
        } else {
            ++minus;
            CHECK(std::abs(c.point.alpha[0] + big) < 1e-14);
        }
    }
    CHECK(plus > 1800);
    CHECK(minus > 1800);

    // Even cat, zeta = 2: <alpha beta> -> |zeta|^2 tanh(|zeta|^2).
    const cplx zeta{2.0, 0.0};
    const std::size_t n = 400'000;
    cplx mean{0.0, 0.0};
    for (uint64_t i = 0; i < n; ++i) {
        CounterStream s(13, i, 0, RngSalt::initial_state);
        CatSample c = sample_cat(zeta, 1, s);
        mean += c.weight * c.point.alpha[0] * c.point.beta[0];
    }
    mean /= static_cast<double>(n);
    const double want = 4.0 * std::tanh(4.0);  // 3.9973...
    CHECK(mean.real() == Catch::Approx(want).margin(0.02));
    CHECK(std::abs(mean.imag()) < 0.02);

    // Odd cat via signed weights: <n> = |zeta|^2 coth(|zeta|^2).
    const cplx zs{1.2, 0.0};
    cplx modd{0.0, 0.0};
    for (uint64_t i = 0; i < n; ++i) {
        CounterStream s(14, i, 0, RngSalt::initial_state);
        CatSample c = sample_cat(zs, -1, s);
        modd += c.weight * c.point.alpha[0] * c.point.beta[0];
    }
    modd /= static_cast<double>(n);
    const double n2 = std::norm(zs);
    CHECK(modd.real() == Catch::Approx(n2 / std::tanh(n2)).margin(0.03));
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "smcgm/darcy.hpp"
#include "smcgm/potentials.hpp"

using namespace smcgm;

namespace {
constexpr double kPi = std::numbers::pi;

BasisPtr basis2d(int modes = 8) { return SpectralBasis::neumann(2, modes, 4 * modes); }

double center_value(const GridSolution& s) { return s.at(s.res / 2, s.res / 2); }

// L2 norm of (w - ref) over shared nodes, trapezoid-free: plain RMS over
// interior nodes of the coarse grid, sampling ref by bilinear interpolation.
double grid_error(const GridSolution& w, const GridSolution& ref) {
    double s = 0.0;
    int cnt = 0;
    for (int i = 1; i < w.res; ++i)
        for (int j = 1; j < w.res; ++j) {
            const double x = static_cast<double>(i) / w.res;
            const double y = static_cast<double>(j) / w.res;
            const double d = w.at(i, j) - observe_point(ref, x, y);
            s += d * d;
            ++cnt;
        }
    return std::sqrt(s / cnt);
}
} // namespace

TEST_CASE("Poisson limit against a Richardson-extrapolated reference") {
    auto u0 = CoeffField::zero(basis2d());
    const auto w64 = darcy_solve(u0, 64, 1.0);
    const auto w128 = darcy_solve(u0, 128, 1.0);
    const auto w256 = darcy_solve(u0, 256, 1.0);
    const double c64 = center_value(w64);
    const double c128 = center_value(w128);
    const double c256 = center_value(w256);
    const double ref = c256 + (c256 - c128) / 3.0; // second-order extrapolation
    CHECK_THAT(c64, Catch::Matchers::WithinAbs(ref, 2e-5));
    CHECK_THAT(ref, Catch::Matchers::WithinAbs(0.0737, 5e-5));

    SECTION("second-order grid convergence against the finest reference") {
        const double e32 = grid_error(darcy_solve(u0, 32, 1.0), w256);
        const double e64 = grid_error(w64, w256);
        const double ratio = e32 / e64;
        CHECK(ratio > 3.5);
        CHECK(ratio < 4.5);
    }
}

TEST_CASE("constant log-permeability rescales the Poisson solution") {
    auto b = basis2d();
    auto u0 = CoeffField::zero(b);
    auto uc = CoeffField::zero(b);
    uc.coeff[0] = 1.7; // constant mode: u = 1.7 everywhere
    const auto w0 = darcy_solve(u0, 32, 1.0);
    const auto wc = darcy_solve(uc, 32, 1.0);
    const double scale = std::exp(-1.7);
    for (std::size_t i = 0; i < w0.w.size(); ++i)
        CHECK_THAT(wc.w[i], Catch::Matchers::WithinAbs(scale * w0.w[i], 1e-9));
}

TEST_CASE("manufactured solution converges at second order") {
    // u = a sqrt(2) cos(pi x), w* = sin(pi x) sin(pi y)
    auto b = basis2d();
    auto u = CoeffField::zero(b);
    const double a = 0.4;
    u.coeff.at(2) = a; // mode (1,0) in graded order: (0,0),(0,1),(1,0)
    REQUIRE(b->mode_index(2) == std::array<int, 2>{1, 0});

    auto run = [&](int res) {
        const int np = res + 1;
        std::vector<double> nodes(np);
        for (int i = 0; i < np; ++i) nodes[i] = static_cast<double>(i) / res;
        auto u_nodes = b->synthesize_at(u.coeff, nodes, nodes);
        std::vector<double> f(u_nodes.size());
        for (int i = 0; i < np; ++i)
            for (int j = 0; j < np; ++j) {
                const double x = nodes[i], y = nodes[j];
                const double w = std::sin(kPi * x) * std::sin(kPi * y);
                const double wx = kPi * std::cos(kPi * x) * std::sin(kPi * y);
                const double ux = -a * std::numbers::sqrt2 * kPi * std::sin(kPi * x);
                const double eu = std::exp(u_nodes[static_cast<std::size_t>(i) * np + j]);
                f[static_cast<std::size_t>(i) * np + j] = eu * (2.0 * kPi * kPi * w - ux * wx);
            }
        const auto sol = darcy_solve_nodal(u_nodes, res, f);
        double err = 0.0;
        for (int i = 0; i <= res; ++i)
            for (int j = 0; j <= res; ++j) {
                const double d = sol.at(i, j) -
                                 std::sin(kPi * nodes[i]) * std::sin(kPi * nodes[j]);
                err += d * d;
            }
        return std::sqrt(err / (np * np));
    };
    const double e16 = run(16);
    const double e32 = run(32);
    const double e64 = run(64);
    CHECK(e64 < 2e-3);
    CHECK(e16 / e32 > 3.5);
    CHECK(e16 / e32 < 4.5);
    CHECK(e32 / e64 > 3.5);
    CHECK(e32 / e64 < 4.5);
}

TEST_CASE("discrete maximum principle", "[property]") {
    auto [b, spec] = make_prior_basis(2, 8, 1.0, 2, 32);
    RngStream rng(31);
    for (int rep = 0; rep < 5; ++rep) {
        auto u = sample_prior(spec, rng);
        const auto w = darcy_solve(u, 24, 1.0);
        for (double v : w.w) CHECK(v >= 0.0);
    }
}

TEST_CASE("solver failure is surfaced") {
    auto u0 = CoeffField::zero(basis2d());
    CHECK_THROWS_AS(darcy_solve(u0, 64, 1.0, 0), numerical_error);
}

TEST_CASE("bilinear observation") {
    GridSolution sol;
    sol.res = 4;
    sol.w.assign(25, 0.0);

    SECTION("node value is exact") {
        sol.w[2 * 5 + 3] = 7.5;
        CHECK(observe_point(sol, 0.5, 0.75) == 7.5);
    }
    SECTION("constant field reads back constant") {
        for (auto& v : sol.w) v = 3.25;
        CHECK_THAT(observe_point(sol, 0.37, 0.62), Catch::Matchers::WithinAbs(3.25, 1e-15));
    }
    SECTION("bilinear reproduces linear fields") {
        for (int i = 0; i <= 4; ++i)
            for (int j = 0; j <= 4; ++j)
                sol.w[static_cast<std::size_t>(i) * 5 + j] = i / 4.0 + j / 4.0;
        CHECK_THAT(observe_point(sol, 0.31, 0.87), Catch::Matchers::WithinAbs(0.31 + 0.87, 1e-14));
    }
    SECTION("outside the domain") {
        CHECK_THROWS_AS(observe_point(sol, -0.01, 0.5), config_error);
        CHECK_THROWS_AS(observe_point(sol, 0.5, 1.01), config_error);
    }
}

TEST_CASE("measurement grids match the stated coordinates") {
    const auto dense = measurement_grid("dense10x10");
    REQUIRE(dense.size() == 100);
    CHECK_THAT(dense.front()[0], Catch::Matchers::WithinAbs(0.01, 1e-15));
    CHECK_THAT(dense.front()[1], Catch::Matchers::WithinAbs(0.01, 1e-15));
    CHECK_THAT(dense.back()[0], Catch::Matchers::WithinAbs(0.99, 1e-15));
    CHECK_THAT(dense.back()[1], Catch::Matchers::WithinAbs(0.99, 1e-15));

    const auto sparse = measurement_grid("sparse-line20");
    REQUIRE(sparse.size() == 20);
    CHECK_THAT(sparse.front()[0], Catch::Matchers::WithinAbs(0.8, 1e-15));
    CHECK_THAT(sparse.front()[1], Catch::Matchers::WithinAbs(0.23, 1e-15));

    CHECK_THROWS_AS(measurement_grid("banana"), config_error);
}

TEST_CASE("potential values and the solve counter") {
    SECTION("exact fit gives zero, one-sigma misfit gives a half") {
        auto b = SpectralBasis::neumann(1, 6);
        auto u = CoeffField::zero(b);
        u.coeff = {0.5, -0.25, 0.125, 0.0, 0.0, 0.0};
        const double sigma = 0.37;
        LinearTestPotential exact(3, sigma, {0.5, -0.25, 0.125});
        CHECK(exact(u) == 0.0);
        LinearTestPotential off(3, sigma, {0.5 + sigma, -0.25, 0.125});
        CHECK_THAT(off(u), Catch::Matchers::WithinAbs(0.5, 1e-14));
    }

    SECTION("counter counts evaluations exactly") {
        auto b = SpectralBasis::neumann(1, 4);
        LinearTestPotential pot(1, 1.0, {0.0});
        auto u = CoeffField::zero(b);
        for (int i = 0; i < 17; ++i) (void)pot(u);
        CHECK(pot.solve_count() == 17);
        pot.reset_count();
        CHECK(pot.solve_count() == 0);
    }

    SECTION("darcy truth on its own noiseless data sits near the discretization floor") {
        auto [b, spec] = make_prior_basis(2, 8, 1.0, 2, 32);
        RngStream rng(11);
        auto truth = sample_prior(spec, rng);
        DarcyConfig cfg;
        cfg.inverse_res = 16;
        cfg.fine_res = 48;
        RngStream noise(1);
        auto obs = synthesize_data(truth, cfg, measurement_grid("dense10x10"), 0.0, noise);
        DarcyPotential pot(b, cfg, obs);
        const double phi = pot(truth);
        WARN("discretization-floor potential (16 vs 48 mesh): " << phi);
        CHECK(phi < 1.0); // coarse-vs-fine mismatch only; sigma = 1
        CHECK(pot.solve_count() == 1);
    }
}

TEST_CASE("multimodal potential") {
    auto b = SpectralBasis::neumann(1, 16);
    auto modals = four_modals(b);
    const double sigma = 0.25;

    SECTION("value at a modal matches the four-exponential oracle") {
        // |f1 - f2|^2 = 2, |f1 - f3|^2 = |f1 - f4|^2 = 1
        double delta = 0.0;
        for (int i = 1; i < 4; ++i) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < b->num_modes(); ++k) {
                const double d = modals[0].coeff[k] - modals[i].coeff[k];
                d2 += d * d;
            }
            delta += std::exp(-d2 / (2 * sigma * sigma));
        }
        const double expected = -std::log1p(delta);
        CHECK_THAT(multimodal_potential(modals[0], modals, sigma),
                   Catch::Matchers::WithinAbs(expected, 1e-13));
    }

    SECTION("symmetry between the first two modals") {
        const double n12 = l2_distance(modals[0], modals[1]);
        const double n13 = l2_distance(modals[0], modals[2]);
        const double n23 = l2_distance(modals[1], modals[2]);
        const double n14 = l2_distance(modals[0], modals[3]);
        const double n24 = l2_distance(modals[1], modals[3]);
        CHECK_THAT(n12, Catch::Matchers::WithinAbs(std::numbers::sqrt2, 1e-12));
        CHECK_THAT(n13, Catch::Matchers::WithinAbs(n23, 1e-12));
        CHECK_THAT(n14, Catch::Matchers::WithinAbs(n24, 1e-12));
        CHECK_THAT(multimodal_potential(modals[0], modals, sigma),
                   Catch::Matchers::WithinAbs(multimodal_potential(modals[1], modals, sigma), 1e-12));
    }

    SECTION("doubling sigma divides every exponent by four") {
        RngStream rng(8);
        std::vector<double> c(b->num_modes());
        for (auto& x : c) x = rng.normal();
        CoeffField u(b, c);
        // With well-separated exponents Phi ~ -max exponent, so compare the
        // dominant quadratic terms through the known closest modal.
        const double p1 = multimodal_potential(u, modals, sigma);
        const double p2 = multimodal_potential(u, modals, 2 * sigma);
        CHECK(p1 > 4 * p2 - 1.5); // log-sum corrections are O(1)
        CHECK(p1 < 4 * p2 + 1.5);
    }

    SECTION("log-sum-exp stays finite at extreme scales") {
        auto u = CoeffField::zero(b);
        u.coeff[0] = 1e3;
        const double v = multimodal_potential(u, modals, 1e-3);
        CHECK(std::isfinite(v));
        CHECK(v > 0.0);
    }
}

TEST_CASE("synthetic data generation") {
    auto [b, spec] = make_prior_basis(2, 6, 1.0, 2, 24);
    RngStream rng(5);
    auto truth = sample_prior(spec, rng);
    DarcyConfig cfg;
    cfg.inverse_res = 8;
    cfg.fine_res = 32;
    auto pts = measurement_grid("dense10x10");

    SECTION("zero noise keeps data exact") {
        RngStream r1(9);
        auto obs = synthesize_data(truth, cfg, pts, 0.0, r1);
        const auto sol = darcy_solve(truth, cfg.fine_res, cfg.source);
        const auto f = observe(sol, pts);
        for (std::size_t i = 0; i < f.size(); ++i) CHECK(obs.data[i] == f[i]);
    }

    SECTION("two percent noise sets sigma from the data maximum") {
        RngStream r1(9);
        auto obs = synthesize_data(truth, cfg, pts, 0.02, r1);
        const auto sol = darcy_solve(truth, cfg.fine_res, cfg.source);
        const auto f = observe(sol, pts);
        double fmax = 0.0;
        for (double v : f) fmax = std::max(fmax, std::abs(v));
        CHECK_THAT(obs.sigma, Catch::Matchers::WithinRel(0.02 * fmax, 1e-15));
    }

    SECTION("fixed seed reproduces the data bit for bit") {
        RngStream r1(9), r2(9);
        auto a = synthesize_data(truth, cfg, pts, 0.02, r1);
        auto bb = synthesize_data(truth, cfg, pts, 0.02, r2);
        CHECK(a.data == bb.data);
        CHECK(a.sigma == bb.sigma);
    }
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "smcgm/measures.hpp"
#include "smcgm/rng.hpp"
#include "smcgm/spectral.hpp"

using namespace smcgm;

namespace {
constexpr double kPi = std::numbers::pi;
}

TEST_CASE("prior eigenvalues match the closed form") {
    auto [b1, s1] = make_prior_basis(1, 8, 0.01, 2);
    CHECK(s1->eigenvalues[0] == 1.0); // rho_0 = 0
    const double lam1 = std::pow(1.0 + 0.01 * kPi * kPi, -2.0);
    CHECK_THAT(s1->eigenvalues[1], Catch::Matchers::WithinRel(lam1, 1e-14));

    auto [b2, s2] = make_prior_basis(2, 4, 1.0, 2);
    // graded ordering: (0,0), (0,1), (1,0), (1,1), ...
    CHECK(b2->mode_index(0) == std::array<int, 2>{0, 0});
    CHECK(b2->mode_index(1) == std::array<int, 2>{0, 1});
    CHECK(b2->mode_index(2) == std::array<int, 2>{1, 0});
    CHECK(b2->mode_index(3) == std::array<int, 2>{1, 1});
    const double lam11 = std::pow(1.0 + 2.0 * kPi * kPi, -2.0);
    CHECK_THAT(s2->eigenvalues[3], Catch::Matchers::WithinRel(lam11, 1e-14));

    for (std::size_t k = 1; k < b2->num_modes(); ++k) CHECK(b2->rho(k) >= b2->rho(k - 1));
}

TEST_CASE("prior basis rejects bad sizes") {
    CHECK_THROWS_AS(make_prior_basis(1, 0, 0.01, 2), config_error);
    CHECK_THROWS_AS(make_prior_basis(3, 4, 0.01, 2), config_error);
    CHECK_THROWS_AS(make_prior_basis(1, 4, -1.0, 2), config_error);
    CHECK_THROWS_AS(make_prior_basis(1, 4, 0.01, 0), config_error);
}

TEST_CASE("eigenfunctions are orthonormal on the midpoint grid") {
    auto check_gram = [](const BasisPtr& basis) {
        const std::size_t K = basis->num_modes();
        std::vector<std::vector<double>> cols(K);
        for (std::size_t k = 0; k < K; ++k) {
            std::vector<double> e(K, 0.0);
            e[k] = 1.0;
            cols[k] = basis->synthesize(e);
        }
        const double w = basis->quad_weight();
        double worst = 0.0;
        for (std::size_t a = 0; a < K; ++a)
            for (std::size_t b = a; b < K; ++b) {
                double dot = 0.0;
                for (std::size_t i = 0; i < cols[a].size(); ++i) dot += cols[a][i] * cols[b][i];
                dot *= w;
                worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
            }
        return worst;
    };
    CHECK(check_gram(SpectralBasis::neumann(1, 64)) < 1e-8);
    CHECK(check_gram(SpectralBasis::neumann(2, 8, 32)) < 1e-8);
}

TEST_CASE("synthesize and analyze are mutually inverse") {
    auto basis = SpectralBasis::neumann(1, 32);

    std::vector<double> zero(basis->num_modes(), 0.0);
    for (double v : basis->synthesize(zero)) CHECK(v == 0.0);

    std::vector<double> e1(basis->num_modes(), 0.0);
    e1[1] = 1.0;
    auto g = basis->synthesize(e1);
    for (int i = 0; i < basis->grid_per_axis(); ++i) {
        const double x = (i + 0.5) / basis->grid_per_axis();
        CHECK_THAT(g[i], Catch::Matchers::WithinAbs(std::sqrt(2.0) * std::cos(kPi * x), 1e-14));
    }

    RngStream rng(42);
    std::vector<double> c(basis->num_modes());
    for (auto& x : c) x = rng.normal();
    auto back = basis->analyze(basis->synthesize(c));
    for (std::size_t k = 0; k < c.size(); ++k)
        CHECK_THAT(back[k], Catch::Matchers::WithinAbs(c[k], 1e-10));

    CHECK_THROWS_AS(basis->analyze(std::vector<double>(7, 0.0)), config_error);
}

TEST_CASE("Parseval holds on band-limited fields", "[property]") {
    auto basis1 = SpectralBasis::neumann(1, 48);
    auto basis2 = SpectralBasis::neumann(2, 6, 24);
    RngStream rng(7);
    for (const auto& basis : {basis1, basis2}) {
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> c(basis->num_modes());
            for (auto& x : c) x = rng.normal();
            CoeffField u(basis, c);
            const double grid_norm = basis->grid_l2_norm(basis->synthesize(c));
            CHECK_THAT(grid_norm, Catch::Matchers::WithinAbs(u.l2_norm(), 1e-8));
        }
    }
}

TEST_CASE("2D round trip") {
    auto basis = SpectralBasis::neumann(2, 5, 20);
    RngStream rng(3);
    std::vector<double> c(basis->num_modes());
    for (auto& x : c) x = rng.normal();
    auto back = basis->analyze(basis->synthesize(c));
    for (std::size_t k = 0; k < c.size(); ++k)
        CHECK_THAT(back[k], Catch::Matchers::WithinAbs(c[k], 1e-10));
}

TEST_CASE("covariance spectrum validation") {
    auto basis = SpectralBasis::neumann(1, 4);
    CHECK_THROWS_AS(CovarianceSpectrum(basis, {1.0, 0.5, 0.0, 0.1}), config_error);
    CHECK_THROWS_AS(CovarianceSpectrum(basis, {1.0, 0.5}), config_error);
    CovarianceSpectrum ok(basis, {1.0, 0.5, 0.25, 0.125});
    CHECK_THAT(ok.trace(), Catch::Matchers::WithinRel(1.875, 1e-15));
}

TEST_CASE("prior sampling moments and whiteness") {
    auto [basis, spec] = make_prior_basis(1, 10, 0.01, 2);
    GaussianMeasureSpec prior(CoeffField::zero(basis), spec);
    const int n = 100000;
    const std::size_t K = basis->num_modes();
    RngStream rng(2024);
    std::vector<double> sum(K, 0.0), sumsq(K, 0.0);
    std::vector<std::vector<double>> cross(K, std::vector<double>(K, 0.0));
    std::vector<double> xi(K);
    for (int i = 0; i < n; ++i) {
        auto u = sample_gaussian(prior, rng);
        for (std::size_t k = 0; k < K; ++k) {
            xi[k] = u.coeff[k] / std::sqrt(spec->eigenvalues[k]);
            sum[k] += u.coeff[k];
            sumsq[k] += u.coeff[k] * u.coeff[k];
        }
        for (std::size_t a = 0; a < K; ++a)
            for (std::size_t b = a + 1; b < K; ++b) cross[a][b] += xi[a] * xi[b];
    }
    for (std::size_t k = 0; k < K; ++k) {
        const double lam = spec->eigenvalues[k];
        const double var = sumsq[k] / n - std::pow(sum[k] / n, 2);
        CHECK(std::abs(var - lam) < 0.05 * lam);
        CHECK(std::abs(sum[k] / n) < 4.0 * std::sqrt(lam / n));
        for (std::size_t b = k + 1; b < K; ++b) CHECK(std::abs(cross[k][b] / n) < 0.02);
    }
}

TEST_CASE("mixture sampling") {
    auto [basis, spec] = make_prior_basis(1, 6, 0.01, 2);

    SECTION("degenerate weight always picks the live component") {
        GaussianMixtureSpec::Component a{1.0, {5.0}, {1e-6}};
        GaussianMixtureSpec::Component b{0.0, {-5.0}, {1e-6}};
        GaussianMixtureSpec mix(spec, 1, {a, b});
        RngStream rng(1);
        for (int i = 0; i < 100; ++i) CHECK(sample_mixture(mix, rng).coeff[0] > 0.0);
    }

    SECTION("categorical frequencies follow the weights") {
        GaussianMixtureSpec::Component a{0.3, {8.0}, {1e-8}};
        GaussianMixtureSpec::Component b{0.7, {-8.0}, {1e-8}};
        GaussianMixtureSpec mix(spec, 1, {a, b});
        RngStream rng(99);
        int hits = 0;
        const int n = 100000;
        for (int i = 0; i < n; ++i)
            if (sample_mixture(mix, rng).coeff[0] > 0.0) ++hits;
        CHECK(std::abs(hits / double(n) - 0.3) < 0.01);
    }

    SECTION("single component reduces to the Gaussian sampler") {
        auto mix = GaussianMixtureSpec::prior_only(spec);
        RngStream rng(5);
        const int n = 20000;
        double var0 = 0.0;
        for (int i = 0; i < n; ++i) {
            auto u = sample_mixture(mix, rng);
            var0 += u.coeff[1] * u.coeff[1];
        }
        var0 /= n;
        CHECK(std::abs(var0 - spec->eigenvalues[1]) < 0.05 * spec->eigenvalues[1]);
    }

    SECTION("tail equality is structural") {
        GaussianMixtureSpec::Component a{1.0, {2.0, 3.0}, {0.5, 0.5}};
        GaussianMixtureSpec mix(spec, 2, {a});
        for (std::size_t k = 2; k < basis->num_modes(); ++k) {
            CHECK(mix.eigenvalue(0, k) == spec->eigenvalues[k]);
            CHECK(mix.mean(0, k) == 0.0);
        }
    }

    SECTION("weights must sum to one") {
        GaussianMixtureSpec::Component a{0.5, {0.0}, {1.0}};
        CHECK_THROWS_AS(GaussianMixtureSpec(spec, 1, {a}), config_error);
    }
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "smcgm/smc.hpp"

using namespace smcgm;

namespace {

class ZeroPotential final : public PotentialEvaluator {
  public:
    std::string_view tag() const override { return "zero"; }

  private:
    double eval(const CoeffField&) const override { return 0.0; }
};

std::vector<double> logw_from(std::initializer_list<double> w) {
    std::vector<double> lw;
    for (double x : w) lw.push_back(x > 0 ? std::log(x) : -std::numeric_limits<double>::infinity());
    return lw;
}

} // namespace

TEST_CASE("effective sample size formula") {
    CHECK_THAT(ess(logw_from({0.25, 0.25, 0.25, 0.25})), Catch::Matchers::WithinRel(4.0, 1e-12));
    CHECK_THAT(ess(logw_from({1.0, 0.0, 0.0})), Catch::Matchers::WithinRel(1.0, 1e-12));
    CHECK_THAT(ess(logw_from({0.5, 0.5, 0.0, 0.0})), Catch::Matchers::WithinRel(2.0, 1e-12));
}

TEST_CASE("temperature selection by bisection") {
    SECTION("flat potentials take the whole remaining budget") {
        std::vector<double> phis(8, 3.25);
        std::vector<double> lw(8, -std::log(8.0));
        CHECK(find_next_temperature(phis, lw, 0.37, 0.6) == 0.37);
    }

    SECTION("matches an independent scalar root for two particles") {
        // ESS(h) = (1 + e^{-hc})^2 / (1 + e^{-2hc}); root of ESS = 1.2
        const double c = 7.0;
        std::vector<double> phis{0.0, c};
        std::vector<double> lw(2, -std::log(2.0));
        const double h = find_next_temperature(phis, lw, 1.0, 0.6);
        auto ess_closed = [&](double hh) {
            const double e = std::exp(-hh * c);
            return (1 + e) * (1 + e) / (1 + e * e);
        };
        // independent bisection on the closed form
        double lo = 0.0, hi = 1.0;
        for (int i = 0; i < 80; ++i) {
            const double mid = 0.5 * (lo + hi);
            (ess_closed(mid) >= 1.2 ? lo : hi) = mid;
        }
        CHECK_THAT(h, Catch::Matchers::WithinAbs(lo, 2e-6));
        CHECK(ess_closed(h) >= 1.2 - 1e-5);
    }

    SECTION("tight threshold still returns a strictly positive step") {
        std::vector<double> phis{0.0, 5.0, 1.0, 9.0};
        std::vector<double> lw(4, -std::log(4.0));
        const double h = find_next_temperature(phis, lw, 1.0, 0.999);
        CHECK(h > 0.0);
        CHECK(h < 1e-2);
    }
}

TEST_CASE("reweighting arithmetic") {
    auto basis = SpectralBasis::neumann(1, 3);
    ParticleEnsemble ens;
    for (int i = 0; i < 2; ++i) ens.particles.push_back(CoeffField::zero(basis));
    ens.log_weights.assign(2, -std::log(2.0));
    ens.phi = {0.0, std::log(4.0)};
    ens.phi_valid = true;

    SECTION("h = 0 leaves weights alone") {
        reweight(ens, 0.0);
        CHECK_THAT(ens.log_weights[0], Catch::Matchers::WithinAbs(-std::log(2.0), 1e-14));
        CHECK_THAT(ens.log_weights[1], Catch::Matchers::WithinAbs(-std::log(2.0), 1e-14));
    }

    SECTION("half-tempered log-4 gap gives weights (2/3, 1/3)") {
        reweight(ens, 0.5);
        CHECK_THAT(std::exp(ens.log_weights[0]), Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));
        CHECK_THAT(std::exp(ens.log_weights[1]), Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
    }

    SECTION("equal potentials stay uniform and normalized") {
        ens.phi = {2.5, 2.5};
        reweight(ens, 0.8);
        double s = std::exp(ens.log_weights[0]) + std::exp(ens.log_weights[1]);
        CHECK_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-10));
        CHECK_THAT(ens.log_weights[0], Catch::Matchers::WithinAbs(ens.log_weights[1], 1e-14));
    }
}

TEST_CASE("systematic resampling") {
    auto basis = SpectralBasis::neumann(1, 2);
    auto make_ens = [&](std::vector<double> w) {
        ParticleEnsemble ens;
        for (std::size_t i = 0; i < w.size(); ++i) {
            auto f = CoeffField::zero(basis);
            f.coeff[0] = static_cast<double>(i);
            ens.particles.push_back(f);
        }
        for (double x : w)
            ens.log_weights.push_back(x > 0 ? std::log(x)
                                            : -std::numeric_limits<double>::infinity());
        ens.phi.assign(w.size(), 0.0);
        ens.phi_valid = true;
        return ens;
    };

    SECTION("uniform weights keep the particle set") {
        auto ens = make_ens({0.25, 0.25, 0.25, 0.25});
        RngStream rng(77);
        resample_systematic(ens, rng);
        std::multiset<double> ids;
        for (const auto& p : ens.particles) ids.insert(p.coeff[0]);
        CHECK(ids == std::multiset<double>{0.0, 1.0, 2.0, 3.0});
    }

    SECTION("a unit weight copies that particle everywhere") {
        auto ens = make_ens({0.0, 1.0, 0.0});
        RngStream rng(78);
        resample_systematic(ens, rng);
        for (const auto& p : ens.particles) CHECK(p.coeff[0] == 1.0);
        for (double lw : ens.log_weights)
            CHECK_THAT(lw, Catch::Matchers::WithinAbs(-std::log(3.0), 1e-14));
    }

    SECTION("copy counts are unbiased", "[property]") {
        const std::vector<double> w{0.42, 0.08, 0.3, 0.2};
        const int reps = 10000;
        std::vector<double> counts(4, 0.0);
        RngStream rng(79);
        for (int r = 0; r < reps; ++r) {
            auto ens = make_ens(w);
            resample_systematic(ens, rng);
            for (const auto& p : ens.particles) counts[static_cast<int>(p.coeff[0])] += 1.0;
        }
        for (int k = 0; k < 4; ++k) {
            const double want = 4.0 * w[k];
            const double got = counts[k] / reps;
            const double sigma = std::sqrt(4.0 * w[k] * (1 - w[k]) / reps);
            CHECK(std::abs(got - want) < 3.0 * sigma);
        }
    }
}

TEST_CASE("mutation bookkeeping") {
    auto [basis, spec] = make_prior_basis(1, 4, 0.01, 2);
    auto pot = std::make_shared<LinearTestPotential>(2, 0.5, std::vector<double>{0.4, -0.2});

    ParticleEnsemble ens;
    const std::size_t n = 64;
    for (std::size_t i = 0; i < n; ++i) {
        RngStream rng(5, {1, i});
        ens.particles.push_back(sample_prior(spec, rng));
    }
    ens.log_weights.assign(n, -std::log(double(n)));
    ens.h_cum = 0.5;
    ensure_potentials(ens, *pot, 2);
    pot->reset_count();

    SECTION("zero-length chains change nothing") {
        auto before = ens.particles[3].coeff;
        KernelConfig cfg{KernelKind::pcn, 0.4, spec, {}};
        auto stats = mutate(ens, cfg, 0, *pot, 9, 2);
        CHECK(stats.proposals == 0);
        CHECK(ens.particles[3].coeff == before);
        CHECK(pot->solve_count() == 0);
    }

    SECTION("MH sweeps evaluate exactly chain_len * N potentials") {
        KernelConfig cfg{KernelKind::pcn, 0.4, spec, {}};
        mutate(ens, cfg, 23, *pot, 9, 2);
        CHECK(pot->solve_count() == 23 * n);
    }

    SECTION("gm sweeps evaluate nothing during mutation") {
        GaussianMixtureSpec::Component c{1.0, {0.0, 0.0}, {0.5, 0.3}};
        KernelConfig cfg{KernelKind::gm, 1.0, spec, GaussianMixtureSpec(spec, 2, {c})};
        auto stats = mutate(ens, cfg, 200, *pot, 9, 2);
        CHECK(pot->solve_count() == 0);
        CHECK(stats.proposals == n);
        CHECK(stats.accepts == n);
        CHECK_FALSE(ens.phi_valid);
    }
}

TEST_CASE("smc on a flat potential finishes in one layer and keeps the prior") {
    auto [basis, spec] = make_prior_basis(1, 6, 0.01, 2);
    SmcConfig cfg;
    cfg.prior = spec;
    cfg.potential = std::make_shared<ZeroPotential>();
    cfg.strategy = KernelKind::pcn;
    cfg.n_particles = 10000;
    cfg.chain_len = 3;
    cfg.seed = 99;
    cfg.threads = 2;
    auto res = run_smc(cfg);
    CHECK(res.schedule.J() == 1);
    CHECK(res.schedule.layers.back().h_cum == 1.0);
    for (std::size_t k = 0; k < 3; ++k) {
        double m = 0.0, v = 0.0;
        for (const auto& p : res.ensemble.particles) m += p.coeff[k];
        m /= res.ensemble.size();
        for (const auto& p : res.ensemble.particles) v += std::pow(p.coeff[k] - m, 2);
        v /= res.ensemble.size();
        const double lam = spec->eigenvalues[k];
        CHECK(std::abs(m) < 4.0 * std::sqrt(lam / cfg.n_particles));
        CHECK(std::abs(v - lam) < 0.06 * lam);
    }
}

TEST_CASE("smc recovers a conjugate posterior and keeps exact eval counts") {
    auto [basis, spec] = make_prior_basis(1, 3, 0.01, 2);
    const double sigma = 0.5;
    const std::vector<double> data{0.6, -0.4, 0.8};
    auto pot = std::make_shared<LinearTestPotential>(3, sigma, data);

    SmcConfig cfg;
    cfg.prior = spec;
    cfg.potential = pot;
    cfg.strategy = KernelKind::pcn;
    cfg.n_particles = 4000;
    cfg.chain_len = 10;
    cfg.seed = 2717;
    cfg.threads = 2;
    auto res = run_smc(cfg);

    const auto J = res.schedule.J();
    CHECK(res.potential_evals == cfg.n_particles * (10 * J + 1));
    CHECK(res.schedule.layers.back().h_cum == 1.0);
    double cum = 0.0;
    for (const auto& l : res.schedule.layers) {
        CHECK(l.h > 0.0);
        cum += l.h;
        CHECK(l.ess >= 0.6 * cfg.n_particles - 1e-6 * cfg.n_particles);
    }
    CHECK_THAT(cum, Catch::Matchers::WithinAbs(1.0, 1e-9));

    for (int k = 0; k < 3; ++k) {
        const double lam = spec->eigenvalues[k];
        const double pv = 1.0 / (1.0 / lam + 1.0 / (sigma * sigma));
        const double pm = pv * data[k] / (sigma * sigma);
        double m = 0.0;
        for (const auto& p : res.ensemble.particles) m += p.coeff[k];
        m /= res.ensemble.size();
        // resampled ensembles carry duplicates; allow a generous factor
        const double se = std::sqrt(pv / cfg.n_particles);
        CHECK(std::abs(m - pm) < 6.0 * se);
    }
}

TEST_CASE("smc with the gm strategy evaluates N potentials per layer") {
    auto [basis, spec] = make_prior_basis(1, 4, 0.01, 2);
    auto pot = std::make_shared<LinearTestPotential>(2, 0.7, std::vector<double>{0.5, 0.1});
    SmcConfig cfg;
    cfg.prior = spec;
    cfg.potential = pot;
    cfg.strategy = KernelKind::gm;
    cfg.n_particles = 500;
    cfg.seed = 4;
    cfg.fit.components = 2;
    cfg.fit.k_fit = 4;
    auto res = run_smc(cfg);
    CHECK(res.potential_evals == cfg.n_particles * res.schedule.J());
    CHECK(res.schedule.layers.back().h_cum == 1.0);
}

TEST_CASE("smc is deterministic across thread counts") {
    auto [basis, spec] = make_prior_basis(1, 5, 0.01, 2);
    auto pot = std::make_shared<LinearTestPotential>(2, 0.4, std::vector<double>{0.3, -0.6});
    auto run = [&](unsigned threads, KernelKind kind) {
        SmcConfig cfg;
        cfg.prior = spec;
        cfg.potential = pot;
        cfg.strategy = kind;
        cfg.n_particles = 300;
        cfg.chain_len = 5;
        cfg.seed = 31;
        cfg.threads = threads;
        cfg.fit.components = 2;
        cfg.fit.k_fit = 3;
        return run_smc(cfg);
    };
    for (auto kind : {KernelKind::pcn, KernelKind::rw, KernelKind::pcn_gm, KernelKind::gm}) {
        auto a = run(1, kind);
        auto b = run(3, kind);
        REQUIRE(a.schedule.J() == b.schedule.J());
        for (std::size_t l = 0; l < a.schedule.J(); ++l) {
            CHECK(a.schedule.layers[l].h == b.schedule.layers[l].h);
            CHECK(a.schedule.layers[l].ess == b.schedule.layers[l].ess);
        }
        for (std::size_t i = 0; i < a.ensemble.size(); ++i)
            CHECK(a.ensemble.particles[i].coeff == b.ensemble.particles[i].coeff);
    }
}

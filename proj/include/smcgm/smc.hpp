#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "smcgm/errors.hpp"
#include "smcgm/kernels.hpp"
#include "smcgm/measures.hpp"
#include "smcgm/mixture_fit.hpp"
#include "smcgm/parallel.hpp"
#include "smcgm/potentials.hpp"
#include "smcgm/rng.hpp"
#include "smcgm/spectral.hpp"

namespace smcgm {

struct ParticleEnsemble {
    std::vector<CoeffField> particles;
    std::vector<double> log_weights; // normalized: logsumexp == 0
    std::vector<double> phi;         // cached full potentials
    bool phi_valid = false;
    double h_cum = 0.0;
    int layer = 0;

    std::size_t size() const { return particles.size(); }
};

struct LayerRecord {
    int layer = 0;
    double h = 0.0;
    double h_cum = 0.0;
    double ess = 0.0;
    double accept_rate = 0.0;
    double beta = 0.0;
    std::uint64_t solves_cum = 0;
    double wall_ms = 0.0;
};

// Doubles as the run log: one record per layer.
struct TemperSchedule {
    std::vector<LayerRecord> layers;

    std::size_t J() const { return layers.size(); }
    std::vector<double> cumulative() const {
        std::vector<double> h;
        h.reserve(layers.size());
        for (const auto& l : layers) h.push_back(l.h_cum);
        return h;
    }
};

// ESS = (sum w_i^2)^-1 for normalized weights, computed in log space.
inline double ess(std::span<const double> log_weights) {
    if (log_weights.empty()) throw config_error("ess: empty weights");
    double mx = -std::numeric_limits<double>::infinity();
    for (double lw : log_weights) mx = std::max(mx, lw);
    double s1 = 0.0, s2 = 0.0;
    for (double lw : log_weights) {
        const double e = std::exp(lw - mx);
        s1 += e;
        s2 += e * e;
    }
    return s1 * s1 / s2;
}

// Largest h <= remaining with ESS(current weights tempered by h) >=
// threshold * N, by bisection to 1e-6 absolute in h; returns the full
// remainder when even that keeps the ESS above threshold (final layer).
inline double find_next_temperature(std::span<const double> phis,
                                    std::span<const double> log_weights, double remaining,
                                    double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw config_error("find_next_temperature: threshold must be in (0,1)");
    const std::size_t n = phis.size();
    const double target = threshold * static_cast<double>(n);
    std::vector<double> lw(n);
    auto ess_at = [&](double h) {
        for (std::size_t i = 0; i < n; ++i) lw[i] = log_weights[i] - h * phis[i];
        return ess(lw);
    };
    if (ess_at(remaining) >= target) return remaining;
    double lo = 0.0, hi = remaining;
    for (int it = 0; it < 60 && hi - lo > 1e-6; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (ess_at(mid) >= target)
            lo = mid;
        else
            hi = mid;
    }
    if (!(lo > 0.0))
        throw numerical_error("find_next_temperature: no positive increment found "
                              "(non-finite potentials?)");
    return lo;
}

// log-weights += -h * Phi, then renormalize (serial summation order).
inline void reweight(ParticleEnsemble& ens, double h) {
    if (!ens.phi_valid) throw numerical_error("reweight: potentials not cached");
    for (std::size_t i = 0; i < ens.size(); ++i) ens.log_weights[i] -= h * ens.phi[i];
    double mx = -std::numeric_limits<double>::infinity();
    for (double lw : ens.log_weights) mx = std::max(mx, lw);
    double s = 0.0;
    for (double lw : ens.log_weights) s += std::exp(lw - mx);
    const double lse = mx + std::log(s);
    if (!std::isfinite(lse)) throw numerical_error("reweight: degenerate weights");
    for (double& lw : ens.log_weights) lw -= lse;
}

// Systematic resampling: one uniform offset, stratified positions.
// Uniform weights reproduce the particle set exactly; expected copy
// counts are N w^(n).
inline void resample_systematic(ParticleEnsemble& ens, RngStream& rng) {
    const std::size_t n = ens.size();
    const double u0 = rng.uniform01() / static_cast<double>(n);
    std::vector<CoeffField> out;
    std::vector<double> out_phi(n, 0.0);
    out.reserve(n);
    double cum = 0.0;
    std::size_t j = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double pos = u0 + static_cast<double>(i) / n;
        while (j < n - 1 && cum + std::exp(ens.log_weights[j]) < pos)
            cum += std::exp(ens.log_weights[j++]);
        out.push_back(ens.particles[j]);
        out_phi[i] = ens.phi_valid ? ens.phi[j] : 0.0;
    }
    ens.particles = std::move(out);
    ens.phi = std::move(out_phi);
    const double uniform = -std::log(static_cast<double>(n));
    for (double& lw : ens.log_weights) lw = uniform;
}

struct MutationStats {
    std::uint64_t proposals = 0;
    std::uint64_t accepts = 0;
    double rate() const { return proposals ? static_cast<double>(accepts) / proposals : 0.0; }
};

// One mutation sweep. MH strategies run chain_len Metropolis steps per
// particle against the tempered potential h_cum * Phi (exactly chain_len
// evaluations per particle); the gm strategy replaces every particle by
// one mixture draw and evaluates nothing, so its potentials are computed
// at the subsequent reweight. One RNG stream per (seed, layer, particle):
// results are independent of the thread count.
inline MutationStats mutate(ParticleEnsemble& ens, const KernelConfig& cfg, int chain_len,
                            const PotentialEvaluator& pot, std::uint64_t seed, unsigned threads) {
    cfg.validate();
    const std::size_t n = ens.size();
    MutationStats stats;
    if (cfg.kind == KernelKind::gm) {
        parallel_for(n, threads, [&](std::size_t i) {
            RngStream rng(seed, {2, static_cast<std::uint64_t>(ens.layer), i});
            ens.particles[i] = sample_mixture(*cfg.mixture, rng);
        });
        ens.phi_valid = false;
        stats.proposals = stats.accepts = n;
        return stats;
    }
    if (chain_len < 0) throw config_error("mutate: negative chain length");
    if (chain_len == 0) return stats;
    if (!ens.phi_valid) throw numerical_error("mutate: potentials not cached");
    std::vector<std::uint64_t> acc(n, 0);
    parallel_for(n, threads, [&](std::size_t i) {
        RngStream rng(seed, {2, static_cast<std::uint64_t>(ens.layer), i});
        ChainState st{std::move(ens.particles[i]), ens.phi[i], true};
        for (int s = 0; s < chain_len; ++s) mh_step(st, cfg, ens.h_cum, pot, rng);
        ens.particles[i] = std::move(st.u);
        ens.phi[i] = st.phi;
        acc[i] = st.accepts;
    });
    for (std::size_t i = 0; i < n; ++i) stats.accepts += acc[i];
    stats.proposals = static_cast<std::uint64_t>(chain_len) * n;
    return stats;
}

// Fill the potential cache where missing (counts one evaluation each).
inline void ensure_potentials(ParticleEnsemble& ens, const PotentialEvaluator& pot,
                              unsigned threads) {
    if (ens.phi_valid) return;
    ens.phi.assign(ens.size(), 0.0);
    parallel_for(ens.size(), threads, [&](std::size_t i) { ens.phi[i] = pot(ens.particles[i]); });
    ens.phi_valid = true;
}

struct SmcConfig {
    SpectrumPtr prior;
    PotentialPtr potential;
    KernelKind strategy = KernelKind::pcn;
    std::size_t n_particles = 1000;
    int chain_len = 200;
    double beta0 = 0.2;
    double ess_threshold = 0.6;
    std::uint64_t seed = 1;
    unsigned threads = 1;
    bool adapt = true;
    FitConfig fit; // gm / pcn-gm refit settings
    int max_layers = 10000;

    bool uses_mixture() const {
        return strategy == KernelKind::gm || strategy == KernelKind::pcn_gm;
    }

    void validate() const {
        if (!prior) throw config_error("SmcConfig: null prior");
        if (!potential) throw config_error("SmcConfig: null potential");
        if (n_particles < 2) throw config_error("SmcConfig: need at least 2 particles");
        if (!(beta0 > 0.0 && beta0 <= 1.0)) throw config_error("SmcConfig: beta0 in (0,1]");
        if (!(ess_threshold > 0.0 && ess_threshold < 1.0))
            throw config_error("SmcConfig: ess_threshold in (0,1)");
        if (chain_len < 0) throw config_error("SmcConfig: negative chain length");
        if (uses_mixture()) fit.validate(prior->eigenvalues.size());
    }
};

struct SmcResult {
    ParticleEnsemble ensemble;
    TemperSchedule schedule;
    std::uint64_t potential_evals = 0; // total over the run, including init
    double final_beta = 0.0;
};

// Tempered SMC driver: per layer mutate -> reweight -> resample, with the
// temperature increments chosen adaptively by ESS bisection and the final
// increment taken as the exact remainder. Layer 0 mutates against the
// prior (h_cum = 0). gm / pcn-gm refit the mixture from the current
// (uniform-weight) ensemble at the start of every layer's mutation.
inline SmcResult run_smc(const SmcConfig& cfg) {
    cfg.validate();
    const auto& pot = *cfg.potential;
    const std::uint64_t solves0 = pot.solve_count();
    const std::size_t n = cfg.n_particles;

    ParticleEnsemble ens;
    ens.particles.reserve(n);
    ens.log_weights.assign(n, -std::log(static_cast<double>(n)));
    ens.phi.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        RngStream rng(cfg.seed, {1, i});
        ens.particles.push_back(sample_prior(cfg.prior, rng));
    }

    // MH chains need cached potentials from the start; the gm sampler
    // computes its potentials at each reweight instead.
    if (cfg.strategy != KernelKind::gm) ensure_potentials(ens, pot, cfg.threads);

    KernelConfig kcfg;
    kcfg.kind = cfg.strategy;
    kcfg.beta = cfg.beta0;
    kcfg.prior = cfg.prior;

    TemperSchedule schedule;
    const auto t_start = std::chrono::steady_clock::now();
    while (ens.h_cum < 1.0) {
        if (ens.layer >= cfg.max_layers)
            throw numerical_error("run_smc: exceeded max layers at h_cum = " +
                                  std::to_string(ens.h_cum));
        try {
            if (cfg.uses_mixture()) {
                FitConfig fit = cfg.fit;
                fit.seed = stream_seed(cfg.seed, {4, static_cast<std::uint64_t>(ens.layer)});
                auto fitted = fit.bic_sweep ? fit_mixture_bic(ens.particles, cfg.prior, fit)
                                            : fit_mixture(ens.particles, cfg.prior, fit);
                kcfg.mixture = std::move(fitted.spec);
            }

            const auto stats = mutate(ens, kcfg, cfg.chain_len, pot, cfg.seed, cfg.threads);
            ensure_potentials(ens, pot, cfg.threads);

            const double remaining = 1.0 - ens.h_cum;
            const double h =
                find_next_temperature(ens.phi, ens.log_weights, remaining, cfg.ess_threshold);
            reweight(ens, h);
            const double layer_ess = ess(ens.log_weights);
            ens.h_cum = h == remaining ? 1.0 : ens.h_cum + h;

            RngStream rrng(cfg.seed, {3, static_cast<std::uint64_t>(ens.layer)});
            resample_systematic(ens, rrng);

            LayerRecord rec;
            rec.layer = ens.layer;
            rec.h = h;
            rec.h_cum = ens.h_cum;
            rec.ess = layer_ess;
            rec.accept_rate = stats.rate();
            rec.beta = kcfg.beta;
            rec.solves_cum = pot.solve_count() - solves0;
            rec.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t_start)
                              .count();
            schedule.layers.push_back(rec);

            if (cfg.adapt && cfg.strategy != KernelKind::gm)
                kcfg.beta = adapt_beta(kcfg.beta, stats.rate());
            ++ens.layer;
        } catch (const numerical_error& e) {
            throw numerical_error("layer " + std::to_string(ens.layer) + ": " + e.what());
        }
    }

    SmcResult out;
    out.ensemble = std::move(ens);
    out.schedule = std::move(schedule);
    out.potential_evals = pot.solve_count() - solves0;
    out.final_beta = kcfg.beta;
    return out;
}

} // namespace smcgm

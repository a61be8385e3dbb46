#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "smcgm/errors.hpp"
#include "smcgm/measures.hpp"
#include "smcgm/rng.hpp"
#include "smcgm/spectral.hpp"

namespace smcgm {

struct FitConfig {
    std::size_t components = 1; // M; ignored when bic_sweep is set
    std::size_t k_fit = 20;     // leading modes carrying fitted parameters
    std::size_t em_iter_cap = 200;
    double var_floor = 1e-4;    // per-mode floor var >= var_floor * lambda_k
    std::uint64_t seed = 0;
    std::size_t n_init = 8;     // seeded K-means++ restarts, best loglik wins
    bool bic_sweep = false;
    std::size_t m_max = 8;
    double loglik_rel_tol = 1e-8;

    void validate(std::size_t basis_modes) const {
        if (components < 1) throw config_error("FitConfig: need at least one component");
        if (k_fit > basis_modes) throw config_error("FitConfig: k_fit exceeds basis modes");
        if (!(var_floor > 0.0)) throw config_error("FitConfig: var_floor must be positive");
        if (n_init < 1) throw config_error("FitConfig: need at least one initialization");
    }
};

struct FitResult {
    GaussianMixtureSpec spec;
    std::vector<double> loglik_trace; // one entry per EM iteration
    std::size_t dropped_components = 0;
    double bic = 0.0;
};

namespace detail {

struct DiagMixture {
    std::size_t n_comp = 0;
    std::size_t dim = 0;
    std::vector<double> w;
    std::vector<double> mean; // n_comp x dim
    std::vector<double> var;  // n_comp x dim

    double log_comp_pdf(std::size_t j, const double* x) const {
        double s = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            const double v = var[j * dim + k];
            const double d = x[k] - mean[j * dim + k];
            s += d * d / v + std::log(2.0 * std::numbers::pi * v);
        }
        return -0.5 * s;
    }
};

// log responsibilities for one sample; returns the sample's log-density
inline double log_resp_row(const DiagMixture& mix, const double* x, double* out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < mix.n_comp; ++j) {
        out[j] = mix.w[j] > 0.0 ? std::log(mix.w[j]) + mix.log_comp_pdf(j, x)
                                : -std::numeric_limits<double>::infinity();
        mx = std::max(mx, out[j]);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < mix.n_comp; ++j) s += std::exp(out[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < mix.n_comp; ++j) out[j] -= lse;
    return lse;
}

// K-means++ seeding on the fitted coordinates.
inline std::vector<std::size_t> kmeanspp_centers(std::span<const double> X, std::size_t n,
                                                 std::size_t dim, std::size_t k, RngStream& rng) {
    std::vector<std::size_t> centers;
    centers.push_back(static_cast<std::size_t>(rng.uniform01() * n) % n);
    std::vector<double> d2(n, std::numeric_limits<double>::infinity());
    while (centers.size() < k) {
        const double* c = X.data() + centers.back() * dim;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t q = 0; q < dim; ++q) {
                const double d = X[i * dim + q] - c[q];
                s += d * d;
            }
            d2[i] = std::min(d2[i], s);
            total += d2[i];
        }
        if (total == 0.0) {
            centers.push_back(centers.back());
            continue;
        }
        double u = rng.uniform01() * total;
        std::size_t pick = n - 1;
        double cum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            cum += d2[i];
            if (u < cum) {
                pick = i;
                break;
            }
        }
        centers.push_back(pick);
    }
    return centers;
}

} // namespace detail

// Responsibility matrix (n x M, rows normalized) of the mixture's fitted
// coordinates; log-space throughout.
inline std::vector<double> em_responsibilities(std::span<const double> X, std::size_t n,
                                               const GaussianMixtureSpec& mix) {
    const std::size_t dim = mix.k_fit();
    const std::size_t M = mix.size();
    if (X.size() != n * dim) throw config_error("em_responsibilities: sample matrix shape");
    detail::DiagMixture dm;
    dm.n_comp = M;
    dm.dim = dim;
    dm.w.resize(M);
    dm.mean.resize(M * dim);
    dm.var.resize(M * dim);
    for (std::size_t j = 0; j < M; ++j) {
        dm.w[j] = mix.weights()[j];
        for (std::size_t k = 0; k < dim; ++k) {
            dm.mean[j * dim + k] = mix.mean(j, k);
            dm.var[j * dim + k] = mix.eigenvalue(j, k);
        }
    }
    std::vector<double> resp(n * M);
    std::vector<double> row(M);
    for (std::size_t i = 0; i < n; ++i) {
        detail::log_resp_row(dm, X.data() + i * dim, row.data());
        for (std::size_t j = 0; j < M; ++j) resp[i * M + j] = std::exp(row[j]);
    }
    return resp;
}

// Data log-likelihood over the fitted coordinates.
inline double mixture_loglik(std::span<const double> X, std::size_t n,
                             const GaussianMixtureSpec& mix) {
    const std::size_t dim = mix.k_fit();
    if (X.size() != n * dim) throw config_error("mixture_loglik: sample matrix shape");
    detail::DiagMixture dm;
    dm.n_comp = mix.size();
    dm.dim = dim;
    dm.w.resize(dm.n_comp);
    dm.mean.resize(dm.n_comp * dim);
    dm.var.resize(dm.n_comp * dim);
    for (std::size_t j = 0; j < dm.n_comp; ++j) {
        dm.w[j] = mix.weights()[j];
        for (std::size_t k = 0; k < dim; ++k) {
            dm.mean[j * dim + k] = mix.mean(j, k);
            dm.var[j * dim + k] = mix.eigenvalue(j, k);
        }
    }
    std::vector<double> row(dm.n_comp);
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) ll += detail::log_resp_row(dm, X.data() + i * dim, row.data());
    return ll;
}

namespace detail {

inline FitResult fit_mixture_once(std::span<const CoeffField> particles, const SpectrumPtr& prior,
                                  const FitConfig& cfg, std::uint64_t init_seed) {
    const std::size_t n = particles.size();
    const std::size_t dim = cfg.k_fit;
    std::size_t M = std::min(cfg.components, n);

    std::vector<double> X(n * dim);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < dim; ++k) X[i * dim + k] = particles[i].coeff[k];

    RngStream rng(init_seed);
    detail::DiagMixture dm;
    dm.n_comp = M;
    dm.dim = dim;
    dm.w.assign(M, 1.0 / M);
    dm.mean.assign(M * dim, 0.0);
    dm.var.assign(M * dim, 0.0);

    // K-means++ seeding; hard-assign once to set initial moments
    const auto centers = detail::kmeanspp_centers(X, n, dim, M, rng);
    for (std::size_t j = 0; j < M; ++j)
        for (std::size_t k = 0; k < dim; ++k) dm.mean[j * dim + k] = X[centers[j] * dim + k];
    {
        std::vector<std::size_t> assign(n, 0);
        std::vector<double> cnt(M, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < M; ++j) {
                double s = 0.0;
                for (std::size_t k = 0; k < dim; ++k) {
                    const double d = X[i * dim + k] - dm.mean[j * dim + k];
                    s += d * d;
                }
                if (s < best) {
                    best = s;
                    assign[i] = j;
                }
            }
            cnt[assign[i]] += 1.0;
        }
        std::vector<double> msum(M * dim, 0.0), vsum(M * dim, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < dim; ++k) msum[assign[i] * dim + k] += X[i * dim + k];
        for (std::size_t j = 0; j < M; ++j)
            if (cnt[j] > 0)
                for (std::size_t k = 0; k < dim; ++k) dm.mean[j * dim + k] = msum[j * dim + k] / cnt[j];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < dim; ++k) {
                const double d = X[i * dim + k] - dm.mean[assign[i] * dim + k];
                vsum[assign[i] * dim + k] += d * d;
            }
        for (std::size_t j = 0; j < M; ++j) {
            dm.w[j] = std::max(cnt[j], 1.0) / n;
            for (std::size_t k = 0; k < dim; ++k) {
                const double floor = cfg.var_floor * prior->eigenvalues[k];
                dm.var[j * dim + k] =
                    std::max(cnt[j] > 1 ? vsum[j * dim + k] / cnt[j] : 0.0, floor);
            }
        }
        double ws = 0.0;
        for (double w : dm.w) ws += w;
        for (double& w : dm.w) w /= ws;
    }

    FitResult result{GaussianMixtureSpec::prior_only(prior), {}, 0, 0.0};
    std::vector<double> resp(n * dm.n_comp);
    std::vector<double> row(dm.n_comp);
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (std::size_t iter = 0; iter < cfg.em_iter_cap; ++iter) {
        // E-step
        double ll = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            ll += detail::log_resp_row(dm, X.data() + i * dim, row.data());
            for (std::size_t j = 0; j < dm.n_comp; ++j)
                resp[i * dm.n_comp + j] = std::exp(row[j]);
        }
        result.loglik_trace.push_back(ll);

        // M-step, separable per mode
        bool dropped = false;
        std::vector<double> nk(dm.n_comp, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < dm.n_comp; ++j) nk[j] += resp[i * dm.n_comp + j];
        for (std::size_t j = 0; j < dm.n_comp; ++j) {
            if (nk[j] / n < 1.0 / (10.0 * n)) {
                // component collapse: remove and renormalize
                std::cerr << "[smcgm] warning: dropping collapsed mixture component " << j << "\n";
                dm.w.erase(dm.w.begin() + j);
                dm.mean.erase(dm.mean.begin() + j * dim, dm.mean.begin() + (j + 1) * dim);
                dm.var.erase(dm.var.begin() + j * dim, dm.var.begin() + (j + 1) * dim);
                --dm.n_comp;
                ++result.dropped_components;
                double ws = 0.0;
                for (double w : dm.w) ws += w;
                for (double& w : dm.w) w /= ws;
                dropped = true;
                break;
            }
        }
        if (dropped) {
            resp.resize(n * dm.n_comp);
            row.resize(dm.n_comp);
            prev_ll = -std::numeric_limits<double>::infinity();
            result.loglik_trace.clear();
            continue;
        }
        for (std::size_t j = 0; j < dm.n_comp; ++j) {
            dm.w[j] = nk[j] / n;
            for (std::size_t k = 0; k < dim; ++k) {
                double ms = 0.0;
                for (std::size_t i = 0; i < n; ++i) ms += resp[i * dm.n_comp + j] * X[i * dim + k];
                dm.mean[j * dim + k] = ms / nk[j];
            }
            for (std::size_t k = 0; k < dim; ++k) {
                double vs = 0.0;
                const double mjk = dm.mean[j * dim + k];
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = X[i * dim + k] - mjk;
                    vs += resp[i * dm.n_comp + j] * d * d;
                }
                const double floor = cfg.var_floor * prior->eigenvalues[k];
                dm.var[j * dim + k] = std::max(vs / nk[j], floor);
            }
        }
        if (std::abs(ll - prev_ll) <= cfg.loglik_rel_tol * (std::abs(ll) + 1.0)) break;
        prev_ll = ll;
    }

    std::vector<GaussianMixtureSpec::Component> comps(dm.n_comp);
    double ws = 0.0;
    for (double w : dm.w) ws += w;
    for (std::size_t j = 0; j < dm.n_comp; ++j) {
        comps[j].weight = dm.w[j] / ws;
        comps[j].mean_head.assign(dm.mean.begin() + j * dim, dm.mean.begin() + (j + 1) * dim);
        comps[j].var_head.assign(dm.var.begin() + j * dim, dm.var.begin() + (j + 1) * dim);
    }
    result.spec = GaussianMixtureSpec(prior, dim, std::move(comps));
    const double ll = result.loglik_trace.empty() ? 0.0 : result.loglik_trace.back();
    const double p = static_cast<double>(dm.n_comp - 1 + 2 * dm.n_comp * dim);
    result.bic = -2.0 * ll + p * std::log(static_cast<double>(n));
    return result;
}

} // namespace detail

// EM fit of an eigenbasis-diagonal Gaussian mixture to equally weighted
// particles. Fitted means/variances live on the leading k_fit modes, the
// tail is the prior exactly; per-mode variances are floored at
// var_floor * lambda_k; components whose weight collapses below 1/(10 n)
// are dropped. The shared-eigenfunction assumption makes the M-step
// separable per mode. K-means++ seeding is restarted n_init times and
// the best final log-likelihood wins; overlapping tempered components
// leave EM with real local optima otherwise.
inline FitResult fit_mixture(std::span<const CoeffField> particles, const SpectrumPtr& prior,
                             const FitConfig& cfg) {
    if (particles.empty()) throw config_error("fit_mixture: empty ensemble");
    cfg.validate(prior->eigenvalues.size());
    std::optional<FitResult> best;
    double best_ll = -std::numeric_limits<double>::infinity();
    for (std::size_t init = 0; init < cfg.n_init; ++init) {
        auto r = detail::fit_mixture_once(particles, prior, cfg, stream_seed(cfg.seed, {21, init}));
        const double ll = r.loglik_trace.empty() ? -std::numeric_limits<double>::infinity()
                                                 : r.loglik_trace.back();
        if (!best || ll > best_ll) {
            best_ll = ll;
            best = std::move(r);
        }
    }
    return std::move(*best);
}

// Optional model selection: smallest BIC over M = 1..m_max.
inline FitResult fit_mixture_bic(std::span<const CoeffField> particles, const SpectrumPtr& prior,
                                 FitConfig cfg) {
    FitResult best{GaussianMixtureSpec::prior_only(prior), {}, 0, 0.0};
    bool have = false;
    for (std::size_t m = 1; m <= cfg.m_max; ++m) {
        cfg.components = m;
        cfg.bic_sweep = false;
        auto r = fit_mixture(particles, prior, cfg);
        if (!have || r.bic < best.bic) {
            best = std::move(r);
            have = true;
        }
    }
    return best;
}

} // namespace smcgm

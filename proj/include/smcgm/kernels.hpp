#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "smcgm/errors.hpp"
#include "smcgm/measures.hpp"
#include "smcgm/potentials.hpp"
#include "smcgm/rng.hpp"
#include "smcgm/spectral.hpp"

namespace smcgm {

enum class KernelKind { rw, pcn, pcn_gm, gm };

inline const char* kernel_name(KernelKind k) {
    switch (k) {
        case KernelKind::rw: return "rw";
        case KernelKind::pcn: return "pcn";
        case KernelKind::pcn_gm: return "pcn-gm";
        case KernelKind::gm: return "gm";
    }
    return "?";
}

inline KernelKind parse_kernel(const std::string& s) {
    if (s == "rw") return KernelKind::rw;
    if (s == "pcn") return KernelKind::pcn;
    if (s == "pcn-gm") return KernelKind::pcn_gm;
    if (s == "gm") return KernelKind::gm;
    throw config_error("unknown strategy '" + s + "' (expected rw|pcn|pcn-gm|gm)");
}

// gamma is always recomputed from beta, so beta^2 + gamma^2 = 1 holds by
// construction; the proposal family is only well defined on that circle.
struct KernelConfig {
    KernelKind kind = KernelKind::pcn;
    double beta = 0.2;
    SpectrumPtr prior;
    std::optional<GaussianMixtureSpec> mixture;

    double gamma() const { return std::sqrt(std::max(0.0, 1.0 - beta * beta)); }

    void validate() const {
        if (!prior) throw config_error("KernelConfig: null prior");
        if (!(beta > 0.0 && beta <= 1.0)) throw config_error("KernelConfig: beta must be in (0,1]");
        if ((kind == KernelKind::pcn_gm || kind == KernelKind::gm) && !mixture)
            throw config_error("KernelConfig: strategy needs a mixture");
        if (mixture && mixture->prior() != prior)
            throw config_error("KernelConfig: mixture fitted against a different prior");
    }
};

// v = u + beta xi, xi ~ N(0, C)
inline CoeffField propose_rw(const CoeffField& u, double beta, const SpectrumPtr& prior,
                             RngStream& rng) {
    const auto& lam = prior->eigenvalues;
    std::vector<double> c(u.coeff.size());
    for (std::size_t k = 0; k < c.size(); ++k)
        c[k] = u.coeff[k] + beta * std::sqrt(lam[k]) * rng.normal();
    return CoeffField(u.basis, std::move(c));
}

// v = sqrt(1-beta^2) u + beta xi, xi ~ N(0, C); prior-reversible
inline CoeffField propose_pcn(const CoeffField& u, double beta, const SpectrumPtr& prior,
                              RngStream& rng) {
    const double g = std::sqrt(std::max(0.0, 1.0 - beta * beta));
    const auto& lam = prior->eigenvalues;
    std::vector<double> c(u.coeff.size());
    for (std::size_t k = 0; k < c.size(); ++k)
        c[k] = g * u.coeff[k] + beta * std::sqrt(lam[k]) * rng.normal();
    return CoeffField(u.basis, std::move(c));
}

// Mixture proposal sum_j w_j N(gamma u + (1-gamma) m_j, beta^2 C_j): one
// categorical draw selects the component, and that component supplies
// both the mean shift and the innovation covariance. This is the mixture
// whose product-space form appears in the acceptance ratio below; at
// beta = 1 it degenerates to the independence sampler sum_j w_j N(m_j, C_j),
// at M = 1 to pCN with a nonzero-mean reference.
inline CoeffField propose_pcn_gm(const CoeffField& u, const KernelConfig& cfg, RngStream& rng) {
    if (!cfg.mixture) throw config_error("propose_pcn_gm: missing mixture");
    const auto& mix = *cfg.mixture;
    const double g = cfg.gamma();
    const std::size_t j = rng.categorical(mix.weights());
    std::vector<double> c(u.coeff.size());
    for (std::size_t k = 0; k < c.size(); ++k)
        c[k] = g * u.coeff[k] + (1.0 - g) * mix.mean(j, k) +
               cfg.beta * std::sqrt(mix.eigenvalue(j, k)) * rng.normal();
    return CoeffField(u.basis, std::move(c));
}

inline double accept_pcn(double phi_u, double phi_v) {
    return std::min(1.0, std::exp(phi_u - phi_v));
}

// Eigenvalues of the per-mode product-space block
//   [[lam, g lam], [g lam, b^2 lam_j + g^2 lam]]
// via t± = A ± sqrt(A^2+1), A = b^2 (lam_j - lam) / (2 g lam), and
// eta± = (1 + g t±) lam. Computed through g*t to stay finite at beta = 1.
struct BlockEigen {
    double t_plus, t_minus;
    double eta_plus, eta_minus;
};

inline BlockEigen block_eigen(double lam, double lam_j, double beta) {
    if (!(lam > 0.0 && lam_j > 0.0)) throw config_error("block_eigen: eigenvalues must be positive");
    if (!(beta > 0.0 && beta <= 1.0)) throw config_error("block_eigen: beta must be in (0,1]");
    const double g = std::sqrt(std::max(0.0, 1.0 - beta * beta));
    const double gA = beta * beta * (lam_j - lam) / (2.0 * lam); // gamma * A
    const double h = std::hypot(gA, g);                          // gamma * sqrt(A^2+1)
    BlockEigen be;
    // s = gA + h rewritten as g^2/(h - gA) for negative gA to avoid
    // cancellation; the small eigenvalue comes from the determinant
    // identity eta+ eta- = beta^2 lam lam_j, and t+ t- = -1 gives t-.
    const double s = gA >= 0.0 ? gA + h : g * g / (h - gA);
    be.eta_plus = (1.0 + s) * lam;
    be.eta_minus = beta * beta * lam * lam_j / be.eta_plus;
    if (g > 0.0) {
        be.t_plus = s / g;
        be.t_minus = -1.0 / be.t_plus;
    } else {
        be.t_plus = gA >= 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
        be.t_minus = gA >= 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
    }
    return be;
}

namespace detail {

inline double log_sum_exp(std::span<const double> xs) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : xs) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - mx);
    return mx + std::log(s);
}

// Per-mode 2x2 quadratic form x^T B^{-1} x with
// B = [[b11, b12], [b12, b22]] and det = b11 b22 - b12^2 supplied by the
// caller (here always beta^2 lam lam_j).
inline double quad2(double b11, double b12, double b22, double det, double x0, double x1) {
    return (b22 * x0 * x0 - 2.0 * b12 * x0 * x1 + b11 * x1 * x1) / det;
}

} // namespace detail

// log of the mixture Radon-Nikodym ratio mu0(dv)Q(v,du) / mu0(du)Q(u,dv)
// for the pCN-GM proposal. Both product measures are M-component Gaussian
// mixtures that block-diagonalize per mode in the shared eigenbasis, so
// every pair (j1, j2) reduces to 2x2 quadratic forms over the fitted
// modes; beyond the fit truncation the components equal the prior and
// the per-mode terms cancel exactly.
inline double log_mixture_rn_ratio(const CoeffField& u, const CoeffField& v,
                                   const KernelConfig& cfg) {
    if (!cfg.mixture) throw config_error("log_mixture_rn_ratio: missing mixture");
    const auto& mix = *cfg.mixture;
    const std::size_t M = mix.size();
    const double b2 = cfg.beta * cfg.beta;
    const double g = cfg.gamma();
    const double g2 = g * g;
    const auto& lam = cfg.prior->eigenvalues;
    const std::size_t kc = mix.k_fit();

    // logratio[j1][j2] = log d mu_{j1} / d mu'_{j2} evaluated at [u, v]
    std::vector<double> logratio(M * M, 0.0);
    for (std::size_t k = 0; k < kc; ++k) {
        const double l = lam[k];
        const double gl = g * l;
        const double uk = u.coeff[k];
        const double vk = v.coeff[k];
        for (std::size_t j1 = 0; j1 < M; ++j1) {
            const double lj1 = mix.eigenvalue(j1, k);
            const double m1 = (1.0 - g) * mix.mean(j1, k);
            const double det1 = b2 * l * lj1;
            const double q1 = detail::quad2(l, gl, b2 * lj1 + g2 * l, det1, uk, vk - m1);
            for (std::size_t j2 = 0; j2 < M; ++j2) {
                const double lj2 = mix.eigenvalue(j2, k);
                const double m2 = (1.0 - g) * mix.mean(j2, k);
                const double det2 = b2 * l * lj2;
                const double q2 = detail::quad2(b2 * lj2 + g2 * l, gl, l, det2, uk - m2, vk);
                logratio[j1 * M + j2] += -0.5 * q1 + 0.5 * q2 - 0.5 * std::log(lj1 / lj2);
            }
        }
    }

    const auto w = mix.weights();
    std::vector<double> outer(M), inner(M);
    for (std::size_t j2 = 0; j2 < M; ++j2) {
        for (std::size_t j1 = 0; j1 < M; ++j1)
            inner[j1] = w[j1] > 0.0 ? std::log(w[j1]) + logratio[j1 * M + j2]
                                    : -std::numeric_limits<double>::infinity();
        outer[j2] = w[j2] > 0.0 ? std::log(w[j2]) - detail::log_sum_exp(inner)
                                : -std::numeric_limits<double>::infinity();
    }
    const double log_r = detail::log_sum_exp(outer);
    if (!std::isfinite(log_r))
        throw numerical_error("log_mixture_rn_ratio: non-finite ratio after stabilization");
    return log_r;
}

// Tempered potentials go in pre-multiplied (h * Phi).
inline double log_accept_pcn(double tphi_u, double tphi_v) {
    return std::min(0.0, tphi_u - tphi_v);
}

inline double log_accept_pcn_gm(const CoeffField& u, const CoeffField& v, double tphi_u,
                                double tphi_v, const KernelConfig& cfg) {
    return std::min(0.0, tphi_u - tphi_v + log_mixture_rn_ratio(u, v, cfg));
}

// Half squared Cameron-Martin norm sum c_k^2 / lambda_k.
inline double cameron_martin_half(const CoeffField& u, const SpectrumPtr& prior) {
    const auto& lam = prior->eigenvalues;
    double s = 0.0;
    for (std::size_t k = 0; k < u.coeff.size(); ++k) s += u.coeff[k] * u.coeff[k] / lam[k];
    return 0.5 * s;
}

// Random walk on the truncated space: the proposal is symmetric, so the
// ratio keeps the prior density term that pCN cancels. This term grows
// with the mode count, which is exactly why RW degrades under mesh
// refinement while pCN does not.
inline double log_accept_rw(const CoeffField& u, const CoeffField& v, double tphi_u,
                            double tphi_v, const SpectrumPtr& prior) {
    return std::min(0.0, tphi_u - tphi_v + cameron_martin_half(u, prior) -
                             cameron_martin_half(v, prior));
}

struct ChainState {
    CoeffField u;
    double phi = 0.0;     // full (untempered) potential of u
    bool has_phi = false;
    std::uint64_t proposals = 0;
    std::uint64_t accepts = 0;

    double accept_rate() const {
        return proposals == 0 ? 0.0 : static_cast<double>(accepts) / proposals;
    }
};

// One Metropolis-Hastings transition targeting the tempered measure
// mu_h ~ exp(-h Phi) mu_0. Exactly one potential evaluation per proposal
// for the MH kinds; the gm kind replaces the state by a mixture draw,
// accepts unconditionally and evaluates nothing.
inline void mh_step(ChainState& state, const KernelConfig& cfg, double h_cum,
                    const PotentialEvaluator& pot, RngStream& rng) {
    ++state.proposals;
    if (cfg.kind == KernelKind::gm) {
        state.u = sample_mixture(*cfg.mixture, rng);
        state.has_phi = false;
        ++state.accepts;
        return;
    }

    CoeffField v = cfg.kind == KernelKind::rw ? propose_rw(state.u, cfg.beta, cfg.prior, rng)
                 : cfg.kind == KernelKind::pcn ? propose_pcn(state.u, cfg.beta, cfg.prior, rng)
                                               : propose_pcn_gm(state.u, cfg, rng);
    const double phi_v = pot(v);

    double tdiff = 0.0;
    if (h_cum > 0.0) {
        if (!state.has_phi) throw numerical_error("mh_step: tempered step without cached potential");
        tdiff = h_cum * (state.phi - phi_v);
    }
    double log_a = tdiff;
    if (cfg.kind == KernelKind::rw)
        log_a += cameron_martin_half(state.u, cfg.prior) - cameron_martin_half(v, cfg.prior);
    else if (cfg.kind == KernelKind::pcn_gm)
        log_a += log_mixture_rn_ratio(state.u, v, cfg);
    log_a = std::min(0.0, log_a);

    if (std::log(rng.uniform01()) < log_a) {
        state.u = std::move(v);
        state.phi = phi_v;
        state.has_phi = true;
        ++state.accepts;
    }
}

// Step-size adaptation toward average acceptance rates near 0.2.
inline double adapt_beta(double beta, double observed_accept_rate) {
    if (observed_accept_rate > 0.3) return std::min(1.0, 2.0 * beta);
    if (observed_accept_rate < 0.15) return 0.5 * beta;
    return beta;
}

} // namespace smcgm

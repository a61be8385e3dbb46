#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "smcgm/errors.hpp"
#include "smcgm/rng.hpp"
#include "smcgm/spectral.hpp"

namespace smcgm {

struct GaussianMeasureSpec {
    CoeffField mean;
    SpectrumPtr spectrum;

    GaussianMeasureSpec(CoeffField m, SpectrumPtr s)
        : mean(std::move(m)), spectrum(std::move(s)) {
        if (!spectrum) throw config_error("GaussianMeasureSpec: null spectrum");
        if (mean.basis != spectrum->basis)
            throw config_error("GaussianMeasureSpec: mean and spectrum on different bases");
    }
};

// Gaussian mixture whose components share the prior's eigenfunctions.
// Only the leading k_fit modes carry fitted means/eigenvalues; beyond
// that every component equals the prior exactly (zero mean, lambda_k),
// which keeps each component equivalent to the prior and makes the
// per-mode ratios lambda_{j,k}/lambda_k - 1 square-summable with
// finitely many nonzero terms.
class GaussianMixtureSpec {
  public:
    struct Component {
        double weight;
        std::vector<double> mean_head; // size k_fit
        std::vector<double> var_head;  // size k_fit, all > 0
    };

    GaussianMixtureSpec(SpectrumPtr prior, std::size_t k_fit,
                        std::vector<Component> components)
        : prior_(std::move(prior)), k_fit_(k_fit), comps_(std::move(components)) {
        if (!prior_) throw config_error("GaussianMixtureSpec: null prior");
        if (k_fit_ > prior_->eigenvalues.size())
            throw config_error("GaussianMixtureSpec: k_fit exceeds basis modes");
        if (comps_.empty()) throw config_error("GaussianMixtureSpec: no components");
        double wsum = 0.0;
        double wmax = 0.0;
        for (const auto& c : comps_) {
            if (!(c.weight >= 0.0)) throw config_error("GaussianMixtureSpec: negative weight");
            wmax = std::max(wmax, c.weight);
            if (c.mean_head.size() != k_fit_ || c.var_head.size() != k_fit_)
                throw config_error("GaussianMixtureSpec: component head size mismatch");
            for (double v : c.var_head)
                if (!(v > 0.0)) throw config_error("GaussianMixtureSpec: eigenvalues must be positive");
            wsum += c.weight;
        }
        if (std::abs(wsum - 1.0) > 1e-12)
            throw config_error("GaussianMixtureSpec: weights must sum to 1");
        if (!(wmax > 0.0)) throw config_error("GaussianMixtureSpec: all weights zero");
        weights_.reserve(comps_.size());
        for (const auto& c : comps_) weights_.push_back(c.weight);
    }

    // Single-component mixture matching the prior itself.
    static GaussianMixtureSpec prior_only(SpectrumPtr prior) {
        Component c{1.0, {}, {}};
        return GaussianMixtureSpec(std::move(prior), 0, {std::move(c)});
    }

    std::size_t size() const { return comps_.size(); }
    std::size_t k_fit() const { return k_fit_; }
    const SpectrumPtr& prior() const { return prior_; }
    const BasisPtr& basis() const { return prior_->basis; }
    std::span<const double> weights() const { return weights_; }
    const Component& component(std::size_t j) const { return comps_[j]; }

    double mean(std::size_t j, std::size_t k) const {
        return k < k_fit_ ? comps_[j].mean_head[k] : 0.0;
    }
    double eigenvalue(std::size_t j, std::size_t k) const {
        return k < k_fit_ ? comps_[j].var_head[k] : prior_->eigenvalues[k];
    }

    // Weighted mean field sum_j w_j m_j (zero beyond k_fit).
    CoeffField mixture_mean() const {
        CoeffField m = CoeffField::zero(basis());
        for (std::size_t j = 0; j < comps_.size(); ++j)
            for (std::size_t k = 0; k < k_fit_; ++k)
                m.coeff[k] += comps_[j].weight * comps_[j].mean_head[k];
        return m;
    }

  private:
    SpectrumPtr prior_;
    std::size_t k_fit_;
    std::vector<Component> comps_;
    std::vector<double> weights_;
};

// c_k = mean_k + sqrt(lambda_k) xi_k, xi iid standard normal.
inline CoeffField sample_gaussian(const GaussianMeasureSpec& spec, RngStream& rng) {
    const auto& lam = spec.spectrum->eigenvalues;
    std::vector<double> c(lam.size());
    for (std::size_t k = 0; k < lam.size(); ++k)
        c[k] = spec.mean.coeff[k] + std::sqrt(lam[k]) * rng.normal();
    return CoeffField(spec.mean.basis, std::move(c));
}

inline CoeffField sample_prior(const SpectrumPtr& prior, RngStream& rng) {
    const auto& lam = prior->eigenvalues;
    std::vector<double> c(lam.size());
    for (std::size_t k = 0; k < lam.size(); ++k) c[k] = std::sqrt(lam[k]) * rng.normal();
    return CoeffField(prior->basis, std::move(c));
}

// Component index drawn categorically, then a Gaussian draw from it.
inline CoeffField sample_mixture(const GaussianMixtureSpec& mix, RngStream& rng) {
    const std::size_t j = rng.categorical(mix.weights());
    const std::size_t K = mix.basis()->num_modes();
    std::vector<double> c(K);
    for (std::size_t k = 0; k < K; ++k)
        c[k] = mix.mean(j, k) + std::sqrt(mix.eigenvalue(j, k)) * rng.normal();
    return CoeffField(mix.basis(), std::move(c));
}

// Zero-mean mixture innovation sum_j w_j N(0, C_j); the component index
// and the noise are drawn jointly.
inline CoeffField sample_mixture_noise(const GaussianMixtureSpec& mix, RngStream& rng) {
    const std::size_t j = rng.categorical(mix.weights());
    const std::size_t K = mix.basis()->num_modes();
    std::vector<double> c(K);
    for (std::size_t k = 0; k < K; ++k)
        c[k] = std::sqrt(mix.eigenvalue(j, k)) * rng.normal();
    return CoeffField(mix.basis(), std::move(c));
}

} // namespace smcgm

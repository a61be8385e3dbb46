#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "smcgm/darcy.hpp"
#include "smcgm/errors.hpp"
#include "smcgm/measures.hpp"
#include "smcgm/rng.hpp"
#include "smcgm/spectral.hpp"

namespace smcgm {

struct ObservationSetup {
    std::vector<std::array<double, 2>> points;
    double sigma = 0.0;
    std::vector<double> data;

    void validate() const {
        if (points.size() != data.size())
            throw config_error("ObservationSetup: point/data count mismatch");
        if (!(sigma > 0.0)) throw config_error("ObservationSetup: sigma must be positive");
        for (const auto& p : points)
            if (!(p[0] >= 0.0 && p[0] <= 1.0 && p[1] >= 0.0 && p[1] <= 1.0))
                throw config_error("ObservationSetup: point outside the domain");
    }
};

// Phi(u) with an instrumented evaluation counter: one increment per
// forward evaluation (for the Darcy map, one increment per PDE solve).
// Concurrent evaluation from many particles is supported; the counter
// is the only shared state.
class PotentialEvaluator {
  public:
    virtual ~PotentialEvaluator() = default;

    double operator()(const CoeffField& u) const {
        const double v = eval(u);
        count_.fetch_add(1, std::memory_order_relaxed);
        return v;
    }

    std::uint64_t solve_count() const { return count_.load(std::memory_order_relaxed); }
    void reset_count() { count_.store(0, std::memory_order_relaxed); }
    virtual std::string_view tag() const = 0;

  private:
    virtual double eval(const CoeffField& u) const = 0;
    mutable std::atomic<std::uint64_t> count_{0};
};

using PotentialPtr = std::shared_ptr<const PotentialEvaluator>;

// Phi(u) = -log sum_i exp(-|u - f_i|^2 / (2 sigma^2)), log-sum-exp
// stabilized; norms are exact in coefficient space (Parseval).
inline double multimodal_potential(const CoeffField& u, std::span<const CoeffField> modals,
                                   double sigma) {
    if (modals.empty()) throw config_error("multimodal_potential: no modals");
    const double inv = 1.0 / (2.0 * sigma * sigma);
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> ex(modals.size());
    for (std::size_t i = 0; i < modals.size(); ++i) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < u.coeff.size(); ++k) {
            const double d = u.coeff[k] - modals[i].coeff[k];
            d2 += d * d;
        }
        ex[i] = -d2 * inv;
        mx = std::max(mx, ex[i]);
    }
    double s = 0.0;
    for (double e : ex) s += std::exp(e - mx);
    return -(mx + std::log(s));
}

class MultimodalPotential final : public PotentialEvaluator {
  public:
    MultimodalPotential(std::vector<CoeffField> modals, double sigma)
        : modals_(std::move(modals)), sigma_(sigma) {
        if (!(sigma_ > 0.0)) throw config_error("MultimodalPotential: sigma must be positive");
    }
    std::string_view tag() const override { return "multimodal"; }
    std::span<const CoeffField> modals() const { return modals_; }
    double sigma() const { return sigma_; }

  private:
    double eval(const CoeffField& u) const override {
        return multimodal_potential(u, modals_, sigma_);
    }
    std::vector<CoeffField> modals_;
    double sigma_;
};

// The four modals of the 1D example: cos(pi x), -cos(pi x), cos(2 pi x),
// cos(3 pi x); each is a single cosine mode with coefficient 1/sqrt(2).
inline std::vector<CoeffField> four_modals(const BasisPtr& basis) {
    if (basis->domain_dim() != 1 || basis->num_modes() < 4)
        throw config_error("four_modals: need a 1D basis with at least 4 modes");
    const double c = 1.0 / std::numbers::sqrt2;
    std::vector<CoeffField> f;
    for (int i = 0; i < 4; ++i) f.push_back(CoeffField::zero(basis));
    f[0].coeff[1] = c;
    f[1].coeff[1] = -c;
    f[2].coeff[2] = c;
    f[3].coeff[3] = c;
    return f;
}

class DarcyPotential final : public PotentialEvaluator {
  public:
    DarcyPotential(BasisPtr basis, DarcyConfig cfg, ObservationSetup obs)
        : basis_(std::move(basis)), cfg_(cfg), obs_(std::move(obs)) {
        cfg_.validate();
        obs_.validate();
        if (basis_->domain_dim() != 2) throw config_error("DarcyPotential: 2D basis required");
        const int np = cfg_.inverse_res + 1;
        nodes_.resize(np);
        for (int i = 0; i < np; ++i) nodes_[i] = static_cast<double>(i) / cfg_.inverse_res;
    }

    std::string_view tag() const override { return "darcy"; }
    const ObservationSetup& observation() const { return obs_; }
    const DarcyConfig& config() const { return cfg_; }

    std::vector<double> forward(const CoeffField& u) const {
        auto u_nodes = basis_->synthesize_at(u.coeff, nodes_, nodes_);
        std::vector<double> f(u_nodes.size(), cfg_.source);
        const auto sol = darcy_solve_nodal(u_nodes, cfg_.inverse_res, f);
        return observe(sol, obs_.points);
    }

  private:
    double eval(const CoeffField& u) const override {
        const auto fu = forward(u);
        double s = 0.0;
        for (std::size_t i = 0; i < fu.size(); ++i) {
            const double r = fu[i] - obs_.data[i];
            s += r * r;
        }
        return 0.5 * s / (obs_.sigma * obs_.sigma);
    }

    BasisPtr basis_;
    DarcyConfig cfg_;
    ObservationSetup obs_;
    std::vector<double> nodes_;
};

// Identity observation of the leading modes; the conjugate-Gaussian
// reference problem.
class LinearTestPotential final : public PotentialEvaluator {
  public:
    LinearTestPotential(std::size_t observed_modes, double sigma, std::vector<double> data)
        : m_(observed_modes), sigma_(sigma), data_(std::move(data)) {
        if (data_.size() != m_) throw config_error("LinearTestPotential: data size mismatch");
        if (!(sigma_ > 0.0)) throw config_error("LinearTestPotential: sigma must be positive");
    }
    std::string_view tag() const override { return "linear-test"; }
    std::size_t observed_modes() const { return m_; }
    double sigma() const { return sigma_; }
    std::span<const double> data() const { return data_; }

  private:
    double eval(const CoeffField& u) const override {
        if (u.coeff.size() < m_) throw config_error("LinearTestPotential: too few modes");
        double s = 0.0;
        for (std::size_t k = 0; k < m_; ++k) {
            const double r = u.coeff[k] - data_[k];
            s += r * r;
        }
        return 0.5 * s / (sigma_ * sigma_);
    }
    std::size_t m_;
    double sigma_;
    std::vector<double> data_;
};

// Data synthesis on the fine mesh (inverse-crime avoidance): solves the
// PDE at fine_res, sets sigma = noise_pct * max_i |F(u*)_i| and adds iid
// N(0, sigma^2) noise. noise_pct = 0 keeps the data exact and reports
// unit sigma so the setup stays usable.
inline ObservationSetup synthesize_data(const CoeffField& truth, const DarcyConfig& cfg,
                                        std::vector<std::array<double, 2>> points,
                                        double noise_pct, RngStream& rng) {
    cfg.validate();
    if (!(noise_pct >= 0.0)) throw config_error("synthesize_data: negative noise_pct");
    const auto sol = darcy_solve(truth, cfg.fine_res, cfg.source);
    ObservationSetup obs;
    obs.points = std::move(points);
    obs.data = observe(sol, obs.points);
    double fmax = 0.0;
    for (double v : obs.data) fmax = std::max(fmax, std::abs(v));
    if (noise_pct > 0.0) {
        obs.sigma = noise_pct * fmax;
        for (double& d : obs.data) d += obs.sigma * rng.normal();
    } else {
        obs.sigma = 1.0;
    }
    obs.validate();
    return obs;
}

} // namespace smcgm

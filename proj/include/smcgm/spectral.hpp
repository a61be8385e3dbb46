#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <memory>
#include <numbers>
#include <span>
#include <tuple>
#include <vector>

#include "smcgm/errors.hpp"

namespace smcgm {

// Neumann Laplacian eigenbasis on [0,1] (and its tensor square on (0,1)^2):
//   phi_0 = 1,  phi_k(x) = sqrt(2) cos(k pi x),  rho_k = (k pi)^2.
// On the midpoint grid x_i = (i+1/2)/G the sampled modes k < G are exactly
// orthonormal under midpoint quadrature, which is what makes analyze the
// inverse of synthesize and keeps Parseval tight.
//
// 2D modes are ordered graded-lexicographic: by rho ascending, ties broken
// by (k1,k2); the ordering is deterministic so coefficient files compare
// across runs.
class SpectralBasis {
  public:
    static std::shared_ptr<const SpectralBasis> neumann(int domain_dim,
                                                        int modes_per_axis,
                                                        int grid_per_axis = 0) {
        return std::shared_ptr<const SpectralBasis>(
            new SpectralBasis(domain_dim, modes_per_axis, grid_per_axis));
    }

    int domain_dim() const { return dim_; }
    int modes_per_axis() const { return modes_per_axis_; }
    int grid_per_axis() const { return grid_; }
    std::size_t num_modes() const { return rho_.size(); }
    std::size_t grid_size() const {
        return dim_ == 1 ? static_cast<std::size_t>(grid_)
                         : static_cast<std::size_t>(grid_) * grid_;
    }

    double rho(std::size_t k) const { return rho_[k]; }
    const std::vector<double>& rho() const { return rho_; }
    std::array<int, 2> mode_index(std::size_t k) const { return modes_[k]; }

    double quad_weight() const {
        const double w = 1.0 / grid_;
        return dim_ == 1 ? w : w * w;
    }

    // Axis eigenfunction value phi_k(x).
    static double axis_eval(int k, double x) {
        if (k == 0) return 1.0;
        return std::numbers::sqrt2 * std::cos(k * std::numbers::pi * x);
    }

    // Field values on the basis' own midpoint grid (row-major in 2D).
    std::vector<double> synthesize(std::span<const double> coeff) const {
        check_len(coeff.size());
        return synthesize_at(coeff, grid_nodes_, grid_nodes_);
    }

    // Field values on an arbitrary tensor grid xs (x) ys; 1D ignores ys.
    std::vector<double> synthesize_at(std::span<const double> coeff,
                                      std::span<const double> xs,
                                      std::span<const double> ys = {}) const {
        check_len(coeff.size());
        const auto tx = axis_table(xs);
        if (dim_ == 1) {
            std::vector<double> out(xs.size(), 0.0);
            for (std::size_t k = 0; k < coeff.size(); ++k) {
                if (coeff[k] == 0.0) continue;
                const double* col = tx.data() + k * xs.size();
                for (std::size_t i = 0; i < xs.size(); ++i) out[i] += coeff[k] * col[i];
            }
            return out;
        }
        const auto ty = axis_table(ys);
        const int K = modes_per_axis_;
        // Contract over k2 first, then k1: cost K^2*Ny + K*Nx*Ny.
        std::vector<double> partial(static_cast<std::size_t>(K) * ys.size(), 0.0);
        for (std::size_t k = 0; k < coeff.size(); ++k) {
            if (coeff[k] == 0.0) continue;
            const auto [k1, k2] = modes_[k];
            const double* cy = ty.data() + static_cast<std::size_t>(k2) * ys.size();
            double* row = partial.data() + static_cast<std::size_t>(k1) * ys.size();
            for (std::size_t j = 0; j < ys.size(); ++j) row[j] += coeff[k] * cy[j];
        }
        std::vector<double> out(xs.size() * ys.size(), 0.0);
        for (int k1 = 0; k1 < K; ++k1) {
            const double* cx = tx.data() + static_cast<std::size_t>(k1) * xs.size();
            const double* row = partial.data() + static_cast<std::size_t>(k1) * ys.size();
            for (std::size_t i = 0; i < xs.size(); ++i) {
                double* orow = out.data() + i * ys.size();
                const double v = cx[i];
                if (v == 0.0) continue;
                for (std::size_t j = 0; j < ys.size(); ++j) orow[j] += v * row[j];
            }
        }
        return out;
    }

    double eval_point(std::span<const double> coeff, double x, double y = 0.0) const {
        check_len(coeff.size());
        double s = 0.0;
        for (std::size_t k = 0; k < coeff.size(); ++k) {
            const auto [k1, k2] = modes_[k];
            double v = axis_eval(k1, x);
            if (dim_ == 2) v *= axis_eval(k2, y);
            s += coeff[k] * v;
        }
        return s;
    }

    // Midpoint-quadrature projection onto the basis. Exact inverse of
    // synthesize for band-limited grids (modes < grid resolution).
    std::vector<double> analyze(std::span<const double> grid_values) const {
        if (grid_values.size() != grid_size())
            throw config_error("analyze: grid size mismatch");
        const double w = quad_weight();
        std::vector<double> coeff(num_modes(), 0.0);
        const auto tx = axis_table(grid_nodes_);
        if (dim_ == 1) {
            for (std::size_t k = 0; k < coeff.size(); ++k) {
                const double* col = tx.data() + k * grid_nodes_.size();
                double s = 0.0;
                for (std::size_t i = 0; i < grid_nodes_.size(); ++i)
                    s += grid_values[i] * col[i];
                coeff[k] = s * w;
            }
            return coeff;
        }
        const std::size_t G = grid_nodes_.size();
        const int K = modes_per_axis_;
        // partial[k2, i] = sum_j u(i,j) phi_{k2}(y_j)
        std::vector<double> partial(static_cast<std::size_t>(K) * G, 0.0);
        for (int k2 = 0; k2 < K; ++k2) {
            const double* cy = tx.data() + static_cast<std::size_t>(k2) * G;
            double* row = partial.data() + static_cast<std::size_t>(k2) * G;
            for (std::size_t i = 0; i < G; ++i) {
                const double* urow = grid_values.data() + i * G;
                double s = 0.0;
                for (std::size_t j = 0; j < G; ++j) s += urow[j] * cy[j];
                row[i] = s;
            }
        }
        for (std::size_t k = 0; k < coeff.size(); ++k) {
            const auto [k1, k2] = modes_[k];
            const double* cx = tx.data() + static_cast<std::size_t>(k1) * G;
            const double* row = partial.data() + static_cast<std::size_t>(k2) * G;
            double s = 0.0;
            for (std::size_t i = 0; i < G; ++i) s += cx[i] * row[i];
            coeff[k] = s * w;
        }
        return coeff;
    }

    // Quadrature L2 norm of grid values.
    double grid_l2_norm(std::span<const double> grid_values) const {
        double s = 0.0;
        for (double v : grid_values) s += v * v;
        return std::sqrt(s * quad_weight());
    }

    const std::vector<double>& grid_nodes() const { return grid_nodes_; }

  private:
    SpectralBasis(int domain_dim, int modes_per_axis, int grid_per_axis)
        : dim_(domain_dim), modes_per_axis_(modes_per_axis) {
        if (dim_ != 1 && dim_ != 2) throw config_error("SpectralBasis: domain_dim must be 1 or 2");
        if (modes_per_axis < 1) throw config_error("SpectralBasis: modes_per_axis must be >= 1");
        grid_ = grid_per_axis > 0 ? grid_per_axis : std::max(2 * modes_per_axis, 128);
        if (grid_ < modes_per_axis)
            throw config_error("SpectralBasis: grid resolution below mode count");
        const double pi2 = std::numbers::pi * std::numbers::pi;
        if (dim_ == 1) {
            rho_.resize(modes_per_axis);
            modes_.resize(modes_per_axis);
            for (int k = 0; k < modes_per_axis; ++k) {
                rho_[k] = pi2 * k * k;
                modes_[k] = {k, 0};
            }
        } else {
            modes_.reserve(static_cast<std::size_t>(modes_per_axis) * modes_per_axis);
            for (int k1 = 0; k1 < modes_per_axis; ++k1)
                for (int k2 = 0; k2 < modes_per_axis; ++k2) modes_.push_back({k1, k2});
            std::sort(modes_.begin(), modes_.end(), [](auto a, auto b) {
                const long ra = static_cast<long>(a[0]) * a[0] + static_cast<long>(a[1]) * a[1];
                const long rb = static_cast<long>(b[0]) * b[0] + static_cast<long>(b[1]) * b[1];
                return std::tie(ra, a[0], a[1]) < std::tie(rb, b[0], b[1]);
            });
            rho_.resize(modes_.size());
            for (std::size_t k = 0; k < modes_.size(); ++k)
                rho_[k] = pi2 * (static_cast<double>(modes_[k][0]) * modes_[k][0] +
                                 static_cast<double>(modes_[k][1]) * modes_[k][1]);
        }
        grid_nodes_.resize(grid_);
        for (int i = 0; i < grid_; ++i) grid_nodes_[i] = (i + 0.5) / grid_;
    }

    void check_len(std::size_t n) const {
        if (n != num_modes()) throw config_error("coefficient length does not match basis");
    }

    // table[k*len + i] = phi_k(x_i) for axis modes k = 0..modes_per_axis-1
    std::vector<double> axis_table(std::span<const double> xs) const {
        std::vector<double> t(static_cast<std::size_t>(modes_per_axis_) * xs.size());
        for (int k = 0; k < modes_per_axis_; ++k)
            for (std::size_t i = 0; i < xs.size(); ++i)
                t[static_cast<std::size_t>(k) * xs.size() + i] = axis_eval(k, xs[i]);
        return t;
    }

    int dim_;
    int modes_per_axis_;
    int grid_ = 0;
    std::vector<double> rho_;
    std::vector<std::array<int, 2>> modes_;
    std::vector<double> grid_nodes_;
};

using BasisPtr = std::shared_ptr<const SpectralBasis>;

struct CovarianceSpectrum {
    BasisPtr basis;
    std::vector<double> eigenvalues;

    CovarianceSpectrum(BasisPtr b, std::vector<double> lam)
        : basis(std::move(b)), eigenvalues(std::move(lam)) {
        if (!basis) throw config_error("CovarianceSpectrum: null basis");
        if (eigenvalues.size() != basis->num_modes())
            throw config_error("CovarianceSpectrum: eigenvalue count mismatch");
        for (double l : eigenvalues)
            if (!(l > 0.0)) throw config_error("CovarianceSpectrum: eigenvalues must be positive");
    }

    double tail_ratio() const { return eigenvalues.back() / eigenvalues.front(); }
    double trace() const {
        double s = 0.0;
        for (double l : eigenvalues) s += l;
        return s;
    }
};

struct CoeffField {
    BasisPtr basis;
    std::vector<double> coeff;

    CoeffField() = default;
    CoeffField(BasisPtr b, std::vector<double> c) : basis(std::move(b)), coeff(std::move(c)) {
        if (!basis) throw config_error("CoeffField: null basis");
        if (coeff.size() != basis->num_modes())
            throw config_error("CoeffField: coefficient length does not match basis");
    }

    static CoeffField zero(BasisPtr b) {
        std::vector<double> c(b->num_modes(), 0.0);
        return CoeffField(std::move(b), std::move(c));
    }

    double l2_norm() const {
        double s = 0.0;
        for (double c : coeff) s += c * c;
        return std::sqrt(s);
    }
};

inline double l2_distance(const CoeffField& a, const CoeffField& b) {
    if (a.basis != b.basis && a.coeff.size() != b.coeff.size())
        throw config_error("l2_distance: fields on different bases");
    double s = 0.0;
    for (std::size_t k = 0; k < a.coeff.size(); ++k) {
        const double d = a.coeff[k] - b.coeff[k];
        s += d * d;
    }
    return std::sqrt(s);
}

// Prior spectrum lambda_k = (1 + alpha rho_k)^(-power) over the Neumann
// cosine basis. Warns once when the truncated tail is still heavy.
inline std::pair<BasisPtr, std::shared_ptr<const CovarianceSpectrum>>
make_prior_basis(int domain_dim, int modes_per_axis, double alpha, int power,
                 int grid_per_axis = 0) {
    if (!(alpha > 0.0)) throw config_error("make_prior_basis: alpha must be positive");
    if (power < 1) throw config_error("make_prior_basis: power must be >= 1");
    auto basis = SpectralBasis::neumann(domain_dim, modes_per_axis, grid_per_axis);
    std::vector<double> lam(basis->num_modes());
    for (std::size_t k = 0; k < lam.size(); ++k)
        lam[k] = std::pow(1.0 + alpha * basis->rho(k), -power);
    auto spec = std::make_shared<const CovarianceSpectrum>(basis, std::move(lam));
    if (spec->tail_ratio() > 1e-6)
        std::cerr << "[smcgm] warning: spectrum tail lambda_K/lambda_1 = " << spec->tail_ratio()
                  << " > 1e-6; consider more modes\n";
    return {basis, spec};
}

using SpectrumPtr = std::shared_ptr<const CovarianceSpectrum>;

} // namespace smcgm

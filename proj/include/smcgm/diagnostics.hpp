#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "smcgm/errors.hpp"
#include "smcgm/mixture_fit.hpp"
#include "smcgm/rng.hpp"
#include "smcgm/spectral.hpp"

namespace smcgm {

struct MarginalDensity {
    std::size_t mode = 0;
    std::vector<double> grid;    // strictly increasing
    std::vector<double> density; // nonnegative, trapezoid integral 1

    double integral() const {
        double s = 0.0;
        for (std::size_t i = 1; i < grid.size(); ++i)
            s += 0.5 * (density[i] + density[i - 1]) * (grid[i] - grid[i - 1]);
        return s;
    }
};

inline double silverman_bandwidth(std::span<const double> samples) {
    const std::size_t n = samples.size();
    double m = 0.0;
    for (double x : samples) m += x;
    m /= n;
    double v = 0.0;
    for (double x : samples) v += (x - m) * (x - m);
    const double sd = std::sqrt(v / std::max<std::size_t>(n - 1, 1));
    double h = 1.06 * sd * std::pow(static_cast<double>(n), -0.2);
    if (!(h > 0.0)) h = 1e-9 * (1.0 + std::abs(m)); // degenerate sample set
    return h;
}

inline std::vector<double> kde_grid(std::span<const double> samples, std::size_t points = 256) {
    const double h = silverman_bandwidth(samples);
    double lo = *std::min_element(samples.begin(), samples.end());
    double hi = *std::max_element(samples.begin(), samples.end());
    lo -= 4.0 * h;
    hi += 4.0 * h;
    std::vector<double> g(points);
    for (std::size_t i = 0; i < points; ++i)
        g[i] = lo + (hi - lo) * static_cast<double>(i) / (points - 1);
    return g;
}

// Gaussian-kernel KDE with the Silverman bandwidth, renormalized so the
// trapezoid integral over the grid is exactly one.
inline MarginalDensity kde_marginal(std::span<const double> samples, std::vector<double> grid,
                                    std::size_t mode = 0) {
    if (samples.empty()) throw config_error("kde_marginal: no samples");
    if (grid.size() < 2) throw config_error("kde_marginal: need at least two grid points");
    const double h = silverman_bandwidth(samples);
    MarginalDensity out;
    out.mode = mode;
    out.grid = std::move(grid);
    out.density.assign(out.grid.size(), 0.0);
    const double norm = 1.0 / (samples.size() * h * std::sqrt(2.0 * std::numbers::pi));
    for (std::size_t i = 0; i < out.grid.size(); ++i) {
        double s = 0.0;
        for (double x : samples) {
            const double z = (out.grid[i] - x) / h;
            s += std::exp(-0.5 * z * z);
        }
        out.density[i] = s * norm;
    }
    const double integral = out.integral();
    if (!(integral > 0.0)) throw numerical_error("kde_marginal: zero mass on the grid");
    for (double& d : out.density) d /= integral;
    return out;
}

// 1/2 integral |p - q| by trapezoid quadrature on the union grid, with
// linear interpolation and zero extension outside each support.
inline double tv_distance(const MarginalDensity& p, const MarginalDensity& q) {
    std::vector<double> grid;
    grid.reserve(p.grid.size() + q.grid.size());
    grid.insert(grid.end(), p.grid.begin(), p.grid.end());
    grid.insert(grid.end(), q.grid.begin(), q.grid.end());
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

    auto interp = [](const MarginalDensity& d, double x) {
        if (x <= d.grid.front() || x >= d.grid.back()) {
            if (x == d.grid.front()) return d.density.front();
            if (x == d.grid.back()) return d.density.back();
            return 0.0;
        }
        const auto it = std::upper_bound(d.grid.begin(), d.grid.end(), x);
        const std::size_t i = static_cast<std::size_t>(it - d.grid.begin());
        const double t = (x - d.grid[i - 1]) / (d.grid[i] - d.grid[i - 1]);
        return (1 - t) * d.density[i - 1] + t * d.density[i];
    };

    double s = 0.0;
    double prev = std::abs(interp(p, grid[0]) - interp(q, grid[0]));
    for (std::size_t i = 1; i < grid.size(); ++i) {
        const double cur = std::abs(interp(p, grid[i]) - interp(q, grid[i]));
        s += 0.5 * (prev + cur) * (grid[i] - grid[i - 1]);
        prev = cur;
    }
    return 0.5 * s;
}

struct Cluster {
    CoeffField mean;
    std::size_t count = 0;
    double data_misfit = std::numeric_limits<double>::quiet_NaN();
};

struct ClusterReport {
    std::vector<Cluster> clusters;
    std::vector<std::size_t> assignment;
    std::vector<double> wcss_trace; // within-cluster sum of squares per Lloyd iteration

    std::size_t n_modal() const { return clusters.size(); }
};

namespace detail {

inline ClusterReport kmeans_once(std::span<const double> X, std::size_t n, std::size_t dim,
                                 std::size_t k, std::uint64_t seed, std::size_t max_iter) {
    RngStream rng(seed);
    const auto seeds = kmeanspp_centers(X, n, dim, k, rng);
    std::vector<double> centers(k * dim);
    for (std::size_t j = 0; j < k; ++j)
        for (std::size_t q = 0; q < dim; ++q) centers[j * dim + q] = X[seeds[j] * dim + q];

    ClusterReport rep;
    rep.assignment.assign(n, 0);
    std::vector<std::size_t> prev(n, n + 1);
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        double wcss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t j = 0; j < k; ++j) {
                double s = 0.0;
                for (std::size_t q = 0; q < dim; ++q) {
                    const double d = X[i * dim + q] - centers[j * dim + q];
                    s += d * d;
                }
                if (s < best) {
                    best = s;
                    arg = j;
                }
            }
            rep.assignment[i] = arg;
            wcss += best;
        }
        rep.wcss_trace.push_back(wcss);
        if (rep.assignment == prev) break;
        prev = rep.assignment;
        std::vector<double> sum(k * dim, 0.0);
        std::vector<std::size_t> cnt(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++cnt[rep.assignment[i]];
            for (std::size_t q = 0; q < dim; ++q)
                sum[rep.assignment[i] * dim + q] += X[i * dim + q];
        }
        for (std::size_t j = 0; j < k; ++j)
            if (cnt[j] > 0)
                for (std::size_t q = 0; q < dim; ++q) centers[j * dim + q] = sum[j * dim + q] / cnt[j];
    }
    return rep;
}

} // namespace detail

// Lloyd K-means on the leading k_fit coefficients, K-means++ seeding with
// n_init seeded restarts (best objective wins), deterministic given the
// seed; cluster means are full coefficient averages of their members.
inline ClusterReport kmeans_cluster(std::span<const CoeffField> particles, std::size_t k,
                                    std::size_t k_fit, std::uint64_t seed,
                                    std::size_t max_iter = 200, std::size_t n_init = 8) {
    const std::size_t n = particles.size();
    if (n == 0) throw config_error("kmeans_cluster: empty ensemble");
    if (k < 1 || k > n) throw config_error("kmeans_cluster: cluster count out of range");
    const std::size_t dim = std::min(k_fit, particles.front().coeff.size());

    std::vector<double> X(n * dim);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t q = 0; q < dim; ++q) X[i * dim + q] = particles[i].coeff[q];

    ClusterReport rep;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t init = 0; init < std::max<std::size_t>(n_init, 1); ++init) {
        auto r = detail::kmeans_once(X, n, dim, k, stream_seed(seed, {31, init}), max_iter);
        if (r.wcss_trace.back() < best) {
            best = r.wcss_trace.back();
            rep = std::move(r);
        }
    }

    const auto basis = particles.front().basis;
    std::vector<std::size_t> cnt(k, 0);
    std::vector<std::vector<double>> mean(k, std::vector<double>(basis->num_modes(), 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = rep.assignment[i];
        ++cnt[j];
        for (std::size_t q = 0; q < particles[i].coeff.size(); ++q)
            mean[j][q] += particles[i].coeff[q];
    }
    for (std::size_t j = 0; j < k; ++j) {
        if (cnt[j] == 0) continue; // empty clusters are dropped from the report
        for (double& x : mean[j]) x /= cnt[j];
        rep.clusters.push_back({CoeffField(basis, std::move(mean[j])), cnt[j],
                                std::numeric_limits<double>::quiet_NaN()});
    }
    return rep;
}

// |mean - truth|_L2 / |truth|_L2 (exact in coefficient space).
inline double relative_l2_error(const CoeffField& mean, const CoeffField& truth) {
    const double denom = truth.l2_norm();
    if (!(denom > 0.0)) throw config_error("relative_l2_error: zero truth norm");
    return l2_distance(mean, truth) / denom;
}

// Mean l2 misfit |F(u_i) - d| over the cluster means; also writes the
// per-cluster misfits into the report.
inline double avg_data_misfit(ClusterReport& report,
                              const std::function<std::vector<double>(const CoeffField&)>& forward,
                              std::span<const double> data) {
    if (report.clusters.empty()) throw config_error("avg_data_misfit: no clusters");
    double total = 0.0;
    for (auto& c : report.clusters) {
        const auto fu = forward(c.mean);
        if (fu.size() != data.size()) throw config_error("avg_data_misfit: data length mismatch");
        double s = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double r = fu[i] - data[i];
            s += r * r;
        }
        c.data_misfit = std::sqrt(s);
        total += c.data_misfit;
    }
    return total / report.clusters.size();
}

// Mean silhouette score of a clustering on the leading k_fit coefficients.
inline double silhouette_score(std::span<const CoeffField> particles,
                               std::span<const std::size_t> assignment, std::size_t k,
                               std::size_t k_fit) {
    const std::size_t n = particles.size();
    const std::size_t dim = std::min(k_fit, particles.front().coeff.size());
    std::vector<std::size_t> cnt(k, 0);
    for (auto a : assignment) ++cnt[a];
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t q = 0; q < dim; ++q) {
            const double d = particles[i].coeff[q] - particles[j].coeff[q];
            s += d * d;
        }
        return std::sqrt(s);
    };
    double total = 0.0;
    std::size_t counted = 0;
    std::vector<double> acc(k);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) acc[assignment[j]] += dist(i, j);
        const std::size_t own = assignment[i];
        if (cnt[own] <= 1) continue; // silhouette undefined for singletons
        const double a = acc[own] / (cnt[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j)
            if (j != own && cnt[j] > 0) b = std::min(b, acc[j] / cnt[j]);
        total += (b - a) / std::max(a, b);
        ++counted;
    }
    return counted ? total / counted : 0.0;
}

struct SilhouetteSweep {
    std::size_t best_k = 0;
    double best_score = -1.0;
    std::vector<std::pair<std::size_t, double>> scores;
    ClusterReport best_report;
};

// Silhouette-validated cluster count over k in [k_min, k_max].
inline SilhouetteSweep silhouette_sweep(std::span<const CoeffField> particles, std::size_t k_min,
                                        std::size_t k_max, std::size_t k_fit, std::uint64_t seed) {
    SilhouetteSweep out;
    for (std::size_t k = k_min; k <= std::min(k_max, particles.size()); ++k) {
        auto rep = kmeans_cluster(particles, k, k_fit, seed + k);
        const double s = silhouette_score(particles, rep.assignment, k, k_fit);
        out.scores.emplace_back(k, s);
        if (s > out.best_score) {
            out.best_score = s;
            out.best_k = k;
            out.best_report = std::move(rep);
        }
    }
    return out;
}

} // namespace smcgm

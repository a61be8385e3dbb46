#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "smcgm/errors.hpp"
#include "smcgm/spectral.hpp"

namespace smcgm {

struct DarcyConfig {
    int inverse_res = 32; // mesh used in the inverse stage
    int fine_res = 128;   // mesh used to generate data
    double source = 1.0;  // constant source term f

    void validate() const {
        if (inverse_res < 8 || fine_res < 8)
            throw config_error("DarcyConfig: resolutions must be >= 8");
        if (fine_res <= inverse_res)
            throw config_error("DarcyConfig: fine mesh must be strictly finer than inverse mesh");
    }
};

// Vertex-centered solution of -div(exp(u) grad w) = f on (0,1)^2 with
// w = 0 on the boundary. Nodes x_i = i/res, row-major (i*(res+1)+j).
struct GridSolution {
    int res = 0;
    std::vector<double> w;

    double at(int i, int j) const { return w[static_cast<std::size_t>(i) * (res + 1) + j]; }
};

namespace detail {

// 5-point operator with harmonic face averages of the nodal coefficient.
// Interior unknowns live in a padded (m+2)x(m+2) grid whose halo stays
// zero, so the stencil loops carry no edge branches. Only west/south
// couplings are stored (symmetric M-matrix; discrete maximum principle).
struct DarcySystem {
    int res = 0;
    int m = 0;      // interior nodes per axis = res - 1
    std::size_t P = 0; // padded row stride = m + 2
    std::vector<double> diag;
    std::vector<double> west;  // true off-diagonal: zero at i = 1 and on halo
    std::vector<double> south; // true off-diagonal: zero at j = 1 and on halo
    std::vector<double> rhs;

    std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i) * P + j; }
    std::size_t padded_size() const { return P * P; }

    void apply(std::span<const double> x, std::span<double> y) const {
        for (int i = 1; i <= m; ++i) {
            const std::size_t row = idx(i, 0);
            const double* xr = x.data() + row;
            const double* dg = diag.data() + row;
            const double* w0 = west.data() + row;
            const double* s0 = south.data() + row;
            const double* wE = west.data() + row + P;  // east coupling = west of row i+1
            const double* xW = x.data() + row - P;
            const double* xE = x.data() + row + P;
            double* yr = y.data() + row;
            for (int j = 1; j <= m; ++j)
                yr[j] = dg[j] * xr[j] - w0[j] * xW[j] - wE[j] * xE[j] -
                        s0[j] * xr[j - 1] - s0[j + 1] * xr[j + 1];
        }
    }
};

inline DarcySystem assemble(std::span<const double> exp_u_nodes, int res,
                            std::span<const double> source_nodes) {
    DarcySystem sys;
    sys.res = res;
    sys.m = res - 1;
    sys.P = static_cast<std::size_t>(sys.m) + 2;
    const int np = res + 1;
    sys.diag.assign(sys.padded_size(), 0.0);
    sys.west.assign(sys.padded_size(), 0.0);
    sys.south.assign(sys.padded_size(), 0.0);
    sys.rhs.assign(sys.padded_size(), 0.0);
    const double inv_h2 = static_cast<double>(res) * res;
    auto node = [&](int i, int j) { return exp_u_nodes[static_cast<std::size_t>(i) * np + j]; };
    auto face = [](double a, double b) { return 2.0 * a * b / (a + b); };
    for (int i = 1; i < res; ++i) {
        for (int j = 1; j < res; ++j) {
            const std::size_t p = sys.idx(i, j);
            const double aP = node(i, j);
            const double aW = face(aP, node(i - 1, j)) * inv_h2;
            const double aE = face(aP, node(i + 1, j)) * inv_h2;
            const double aS = face(aP, node(i, j - 1)) * inv_h2;
            const double aN = face(aP, node(i, j + 1)) * inv_h2;
            sys.diag[p] = aW + aE + aS + aN;
            if (i > 1) sys.west[p] = aW;
            if (j > 1) sys.south[p] = aS;
            sys.rhs[p] = source_nodes[static_cast<std::size_t>(i) * np + j];
        }
    }
    return sys;
}

// Incomplete Cholesky on the 5-point pattern; exists for M-matrices.
// theta > 0 subtracts the dropped-fill magnitudes from the pivot
// (modified-IC flavour, fewer CG iterations); on pivot loss the caller
// refactors with theta = 0, which cannot break down here. Factor
// entries share the padded layout, halo zeros make the sweeps
// branch-free.
struct IC0 {
    int m = 0;
    std::size_t P = 0;
    std::vector<double> d;  // diagonal of L
    std::vector<double> lw; // L entry toward the west neighbor
    std::vector<double> ls; // L entry toward the south neighbor

    bool factor(const DarcySystem& sys, double theta) {
        m = sys.m;
        P = sys.P;
        d.assign(sys.padded_size(), 1.0);
        lw.assign(sys.padded_size(), 0.0);
        ls.assign(sys.padded_size(), 0.0);
        for (int i = 1; i <= m; ++i) {
            for (int j = 1; j <= m; ++j) {
                const std::size_t p = sys.idx(i, j);
                double t = sys.diag[p];
                double fill = 0.0;
                if (sys.west[p] != 0.0) {
                    lw[p] = -sys.west[p] / d[p - P];
                    t -= lw[p] * lw[p];
                    fill += std::abs(lw[p]) * std::abs(ls[p - P + 1]);
                }
                if (sys.south[p] != 0.0) {
                    ls[p] = -sys.south[p] / d[p - 1];
                    t -= ls[p] * ls[p];
                    fill += std::abs(ls[p]) * std::abs(lw[p - 1]);
                }
                t -= theta * fill;
                if (!(t > 0.0)) return false;
                d[p] = std::sqrt(t);
            }
        }
        return true;
    }

    // z = (L L^T)^{-1} r
    void solve(std::span<const double> r, std::span<double> z, std::span<double> tmp) const {
        for (int i = 1; i <= m; ++i) {
            const std::size_t row = static_cast<std::size_t>(i) * P;
            const double* rr = r.data() + row;
            const double* lwr = lw.data() + row;
            const double* lsr = ls.data() + row;
            const double* dr = d.data() + row;
            const double* tW = tmp.data() + row - P;
            double* tr = tmp.data() + row;
            for (int j = 1; j <= m; ++j)
                tr[j] = (rr[j] - lwr[j] * tW[j] - lsr[j] * tr[j - 1]) / dr[j];
        }
        for (int i = m; i >= 1; --i) {
            const std::size_t row = static_cast<std::size_t>(i) * P;
            const double* lwE = lw.data() + row + P;
            const double* lsr = ls.data() + row;
            const double* dr = d.data() + row;
            const double* tr = tmp.data() + row;
            const double* zE = z.data() + row + P;
            double* zr = z.data() + row;
            for (int j = m; j >= 1; --j)
                zr[j] = (tr[j] - lwE[j] * zE[j] - lsr[j + 1] * zr[j + 1]) / dr[j];
        }
    }
};

} // namespace detail

// Preconditioned conjugate gradients, relative residual 1e-10, cap 20n.
// Returns the interior solution embedded in the full node grid.
inline GridSolution darcy_solve_nodal(std::span<const double> u_nodes, int res,
                                      std::span<const double> source_nodes,
                                      std::size_t max_iter_per_unknown = 20) {
    const int np = res + 1;
    if (u_nodes.size() != static_cast<std::size_t>(np) * np ||
        source_nodes.size() != u_nodes.size())
        throw config_error("darcy_solve: node array size mismatch");
    std::vector<double> a(u_nodes.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = std::exp(u_nodes[i]);

    const auto sys = detail::assemble(a, res, source_nodes);
    detail::IC0 prec;
    if (!prec.factor(sys, 0.95) && !prec.factor(sys, 0.0))
        throw numerical_error("darcy_solve: incomplete Cholesky pivot not positive");

    const std::size_t n = sys.padded_size();
    const std::size_t unknowns = static_cast<std::size_t>(sys.m) * sys.m;
    std::vector<double> x(n, 0.0), r(sys.rhs), z(n, 0.0), p(n, 0.0), q(n, 0.0), tmp(n, 0.0);
    double bnorm2 = 0.0;
    for (double v : r) bnorm2 += v * v;
    const double stop2 = 2.5e-21 * bnorm2; // in-loop margin under the 1e-10 contract

    GridSolution sol;
    sol.res = res;
    sol.w.assign(u_nodes.size(), 0.0);
    if (bnorm2 == 0.0) return sol;

    prec.solve(r, z, tmp);
    p = z;
    double rz = 0.0;
    for (std::size_t i = 0; i < n; ++i) rz += r[i] * z[i];
    const std::size_t cap = max_iter_per_unknown * unknowns;
    std::size_t it = 0;
    for (; it < cap; ++it) {
        sys.apply(p, q);
        double pq = 0.0;
        for (std::size_t i = 0; i < n; ++i) pq += p[i] * q[i];
        if (!(pq > 0.0)) throw numerical_error("darcy_solve: system not positive definite");
        const double alpha = rz / pq;
        double rnorm2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
            rnorm2 += r[i] * r[i];
        }
        if (rnorm2 <= stop2) break;
        prec.solve(r, z, tmp);
        double rz_new = 0.0;
        for (std::size_t i = 0; i < n; ++i) rz_new += r[i] * z[i];
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
    }

    // verify the true residual; the recurrence can drift
    sys.apply(x, q);
    double res2 = 0.0;
    for (int i = 1; i <= sys.m; ++i)
        for (int j = 1; j <= sys.m; ++j) {
            const std::size_t pp = sys.idx(i, j);
            const double ri = sys.rhs[pp] - q[pp];
            res2 += ri * ri;
        }
    if (!(res2 <= 1e-20 * bnorm2))
        throw numerical_error("darcy_solve: PCG stalled at relative residual " +
                              std::to_string(std::sqrt(res2 / bnorm2)) + " after " +
                              std::to_string(it) + " iterations (res " +
                              std::to_string(res) + ")");

    for (int i = 1; i < res; ++i)
        for (int j = 1; j < res; ++j)
            sol.w[static_cast<std::size_t>(i) * np + j] = x[sys.idx(i, j)];
    return sol;
}

inline GridSolution darcy_solve(const CoeffField& u, int res, double source,
                                std::size_t max_iter_per_unknown = 20) {
    if (u.basis->domain_dim() != 2) throw config_error("darcy_solve: 2D field required");
    const int np = res + 1;
    std::vector<double> nodes(np);
    for (int i = 0; i < np; ++i) nodes[i] = static_cast<double>(i) / res;
    std::vector<double> u_nodes = u.basis->synthesize_at(u.coeff, nodes, nodes);
    std::vector<double> f(u_nodes.size(), source);
    return darcy_solve_nodal(u_nodes, res, f, max_iter_per_unknown);
}

// Bilinear interpolation of the node grid at a point in [0,1]^2.
inline double observe_point(const GridSolution& sol, double x, double y) {
    if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0))
        throw config_error("observe: point outside the domain");
    const int res = sol.res;
    const double fx = x * res;
    const double fy = y * res;
    int i = std::min(static_cast<int>(fx), res - 1);
    int j = std::min(static_cast<int>(fy), res - 1);
    const double tx = fx - i;
    const double ty = fy - j;
    return (1 - tx) * (1 - ty) * sol.at(i, j) + tx * (1 - ty) * sol.at(i + 1, j) +
           (1 - tx) * ty * sol.at(i, j + 1) + tx * ty * sol.at(i + 1, j + 1);
}

inline std::vector<double> observe(const GridSolution& sol,
                                   std::span<const std::array<double, 2>> points) {
    std::vector<double> out(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        out[i] = observe_point(sol, points[i][0], points[i][1]);
    return out;
}

// The paper's two measurement layouts.
inline std::vector<std::array<double, 2>> measurement_grid(const std::string& kind) {
    std::vector<std::array<double, 2>> pts;
    if (kind == "dense10x10") {
        for (int i = 0; i < 10; ++i)
            for (int j = 0; j < 10; ++j)
                pts.push_back({(9.0 + 98.0 * i) / 900.0, (9.0 + 98.0 * j) / 900.0});
    } else if (kind == "sparse-line20") {
        for (int i = 1; i <= 20; ++i) pts.push_back({0.8, 0.2 + 0.03 * i});
    } else {
        throw config_error("measurement_grid: unknown kind '" + kind + "'");
    }
    return pts;
}

} // namespace smcgm

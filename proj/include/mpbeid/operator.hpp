#pragma once

// 2D fixed-pivot discretization of the breakage operator.  The state vector
// holds pivot counts N stacked v-major (index = i * nw + j), and the
// assembled matrix M gives dN/dt = M N:
//
//   death   M[(k,l),(k,l)] -= Gamma(v_k, w_l)
//   birth   fragments of parent (k,l) are distributed over lower pivots with
//           tensor-product weights that conserve {1, v, w, vw} per cell.
//
// Daughter content falling below the smallest pivot in either coordinate is
// either dropped (default) or assigned number-conserving to the nearest edge
// pivot.  Edge assignment makes the production of every parent exactly
// (nu - 1) * Gamma, which benchmark generation needs to track the analytic
// moment growth; the price is that bottom-edge parents re-enter partly at
// their own pivot (the corner parent entirely), so diagonals there can turn
// positive.  Off-diagonal nonnegativity alone guarantees nonnegative
// solutions; the strict diag <= 0 Metzler check applies to the drop policy.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mpbeid/common.hpp"
#include "mpbeid/grid.hpp"
#include "mpbeid/kernels.hpp"

namespace mpbeid::forward {

enum class SubGridPolicy { drop, assign_edge };

inline std::string to_string(SubGridPolicy p) {
    return p == SubGridPolicy::drop ? "drop" : "assign-edge";
}

inline SubGridPolicy subgrid_policy_from_string(const std::string& s) {
    if (s == "drop") return SubGridPolicy::drop;
    if (s == "assign-edge") return SubGridPolicy::assign_edge;
    fail("unknown sub-grid policy: " + s);
}

struct BuildOptions {
    SubGridPolicy policy = SubGridPolicy::drop;
    bool allow_interpolation = false;  // product-delta on incompatible grids
};

struct DiscreteBreakageOperator {
    Eigen::MatrixXd M;
    griddata::Grid2D grid;
    KernelSpec kernel;
    BuildOptions options;
    double min_offdiag = 0.0;  // Metzler diagnostics
    double max_diag = 0.0;

    std::size_t dim() const { return grid.cells(); }
    std::size_t index(std::size_t i, std::size_t j) const { return i * grid.nw() + j; }
};

namespace detail {

// Number allocated to each pivot 0..k when daughters of unit density cover
// [0, p_k]: the trapezoid weights of the subrange, with the sub-pivot strip
// [0, p_0] handled by policy.
inline std::vector<double> uniform_axis_alloc(const griddata::Grid1D& g,
                                              std::size_t k, SubGridPolicy policy) {
    std::vector<double> a(k + 1, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        double half = 0.5 * (g.pivots[i + 1] - g.pivots[i]);
        a[i] += half;
        a[i + 1] += half;
    }
    if (policy == SubGridPolicy::assign_edge) a[0] += g.pivots[0];
    return a;
}

// Integer shift m >= 0 with pivots[i - m] == theta * pivots[i]; -1 when the
// grid does not support the shift exactly.
inline int delta_shift(const griddata::Grid1D& g, double theta) {
    if (std::abs(theta - 1.0) <= 1e-12) return 0;
    double m_real = -std::log(theta) / g.log_step();
    int m = int(std::llround(m_real));
    if (m < 0) return -1;
    if (std::abs(m_real - double(m)) > 1e-6) return -1;
    for (std::size_t i = std::size_t(m); i < g.size(); ++i)
        if (std::abs(g.pivots[i] * theta - g.pivots[i - m]) > 1e-9 * g.pivots[i - m])
            return -1;
    return m;
}

// Moment-conserving point assignment along one axis: weights for a unit
// point packet at position a (below the top pivot).  Returns pairs of
// (pivot index, weight); empty when dropped sub-grid.
inline std::vector<std::pair<std::size_t, double>> point_axis_alloc(
    const griddata::Grid1D& g, double a, SubGridPolicy policy) {
    std::vector<std::pair<std::size_t, double>> out;
    if (a < g.pivots.front()) {
        if (policy == SubGridPolicy::assign_edge) out.push_back({0, 1.0});
        return out;
    }
    std::size_t hi = 1;
    while (hi < g.size() && g.pivots[hi] < a) ++hi;
    if (hi >= g.size()) {
        out.push_back({g.size() - 1, 1.0});
        return out;
    }
    std::size_t lo = hi - 1;
    double width = g.pivots[hi] - g.pivots[lo];
    double f = (a - g.pivots[lo]) / width;
    out.push_back({lo, 1.0 - f});
    out.push_back({hi, f});
    return out;
}

}  // namespace detail

inline DiscreteBreakageOperator build_operator(const griddata::Grid2D& grid,
                                               const KernelSpec& kernel,
                                               const BuildOptions& options = {}) {
    kernel.validate_shape();
    const std::size_t x = grid.nv(), y = grid.nw(), n = x * y;

    for (std::size_t k = 0; k < x; ++k)
        for (std::size_t l = 0; l < y; ++l) {
            double nu = kernel.nu(grid.v[k], grid.w[l]);
            if (!std::isfinite(nu) || nu <= 1.0)
                fail(strfmt("build_operator: fragment count nu=%.6g at parent "
                            "(%.6g, %.6g) must be finite and exceed 1",
                            nu, grid.v[k], grid.w[l]));
            double g = kernel.rate(grid.v[k], grid.w[l]);
            if (!std::isfinite(g) || g < 0.0)
                fail(strfmt("build_operator: breakage rate %.6g at parent "
                            "(%.6g, %.6g) must be finite and nonnegative",
                            g, grid.v[k], grid.w[l]));
        }

    DiscreteBreakageOperator op;
    op.grid = grid;
    op.kernel = kernel;
    op.options = options;
    op.M = Eigen::MatrixXd::Zero(n, n);
    auto idx = [y](std::size_t i, std::size_t j) { return i * y + j; };

    std::vector<std::vector<double>> av(x), aw(y);
    for (std::size_t k = 0; k < x; ++k)
        av[k] = detail::uniform_axis_alloc(grid.v, k, options.policy);
    for (std::size_t l = 0; l < y; ++l)
        aw[l] = detail::uniform_axis_alloc(grid.w, l, options.policy);

    int shift_v = -2, shift_w = -2;
    if (kernel.beta_kind == BetaKind::product_delta) {
        shift_v = detail::delta_shift(grid.v, kernel.theta_v);
        shift_w = detail::delta_shift(grid.w, kernel.theta_w);
        if ((shift_v < 0 || shift_w < 0) && !options.allow_interpolation)
            fail("build_operator: grid is not ratio-compatible with the "
                 "product-delta kernel; use a ratio-anchored mesh or enable "
                 "interpolation");
    }

    for (std::size_t k = 0; k < x; ++k) {
        for (std::size_t l = 0; l < y; ++l) {
            const std::size_t col = idx(k, l);
            const double vk = grid.v[k], wl = grid.w[l];
            const double g = kernel.rate(vk, wl);
            op.M(col, col) -= g;
            if (g == 0.0) continue;

            switch (kernel.beta_kind) {
                case BetaKind::continuous: {
                    double bval = kernel.beta_density(vk, wl);
                    for (std::size_t i = 0; i <= k; ++i) {
                        if (av[k][i] == 0.0) continue;
                        double row_factor = g * bval * av[k][i];
                        for (std::size_t j = 0; j <= l; ++j)
                            if (aw[l][j] != 0.0)
                                op.M(idx(i, j), col) += row_factor * aw[l][j];
                    }
                    break;
                }
                case BetaKind::single_delta_sum: {
                    for (std::size_t j = 0; j <= l; ++j)
                        if (aw[l][j] != 0.0)
                            op.M(idx(k, j), col) += g * aw[l][j] / wl;
                    for (std::size_t i = 0; i <= k; ++i)
                        if (av[k][i] != 0.0)
                            op.M(idx(i, l), col) += g * av[k][i] / vk;
                    break;
                }
                case BetaKind::product_delta: {
                    if (shift_v >= 0 && shift_w >= 0) {
                        long ti = long(k) - shift_v, tj = long(l) - shift_w;
                        bool sub = ti < 0 || tj < 0;
                        if (sub) {
                            if (options.policy == SubGridPolicy::drop) break;
                            ti = std::max(ti, 0l);
                            tj = std::max(tj, 0l);
                        }
                        op.M(idx(ti, tj), col) += g * kernel.delta_c;
                    } else {
                        auto pv = detail::point_axis_alloc(grid.v, kernel.theta_v * vk,
                                                           options.policy);
                        auto pw = detail::point_axis_alloc(grid.w, kernel.theta_w * wl,
                                                           options.policy);
                        for (const auto& [i, fi] : pv)
                            for (const auto& [j, fj] : pw)
                                op.M(idx(i, j), col) += g * kernel.delta_c * fi * fj;
                    }
                    break;
                }
            }
        }
    }

    double scale = op.M.cwiseAbs().maxCoeff();
    double tol = 1e-12 * std::max(scale, 1.0);
    op.min_offdiag = 0.0;
    op.max_diag = op.M.diagonal().maxCoeff();
    for (std::size_t c = 0; c < n; ++c)
        for (std::size_t r = 0; r < n; ++r)
            if (r != c) op.min_offdiag = std::min(op.min_offdiag, op.M(r, c));
    if (op.min_offdiag < -tol)
        fail(strfmt("build_operator: negative birth entry %.3e breaks the "
                    "Metzler structure", op.min_offdiag));
    if (options.policy == SubGridPolicy::drop && op.max_diag > tol)
        fail(strfmt("build_operator: positive diagonal entry %.3e breaks the "
                    "Metzler structure", op.max_diag));
    return op;
}

}  // namespace mpbeid::forward

#pragma once

// Geometric pivot grids for the internal-coordinate domain and the trapezoid
// quadrature attached to them.  Two constructions:
//   * geometric_by_count: `count` pivots spanning [lower, upper] with a
//     constant ratio; both endpoints are pivots.
//   * geometric_ratio_anchored: pivots descend from `upper` by a fixed
//     factor; the requested lower bound is an admissibility floor, not a
//     pivot, so the stored lower edge is the smallest pivot produced.

#include <cmath>
#include <string>
#include <vector>

#include "mpbeid/common.hpp"

namespace mpbeid::griddata {

enum class Spacing {
    geometric_by_count,
    geometric_ratio_anchored,
};

inline std::string to_string(Spacing s) {
    return s == Spacing::geometric_by_count ? "geometric-by-count"
                                            : "geometric-ratio-anchored";
}

inline Spacing spacing_from_string(const std::string& s) {
    if (s == "geometric-by-count") return Spacing::geometric_by_count;
    if (s == "geometric-ratio-anchored") return Spacing::geometric_ratio_anchored;
    fail("unknown grid spacing kind: " + s);
}

struct Grid1D {
    std::vector<double> pivots;
    Spacing kind = Spacing::geometric_by_count;
    double lower_edge = 0.0;   // smallest pivot
    double upper_edge = 0.0;   // largest pivot
    double ratio = 0.0;        // pivots[i+1] / pivots[i]

    std::size_t size() const { return pivots.size(); }
    double operator[](std::size_t i) const { return pivots[i]; }
    double log_step() const { return std::log(ratio); }
};

inline Grid1D make_grid(double lower, double upper, std::size_t count,
                        Spacing kind, double ratio = 0.0) {
    check(count >= 2, "make_grid: need at least 2 pivots");
    check(lower > 0.0, "make_grid: lower bound must be positive");
    check(upper > lower, "make_grid: upper bound must exceed lower bound");

    Grid1D g;
    g.kind = kind;
    g.pivots.resize(count);

    if (kind == Spacing::geometric_by_count) {
        double step = std::pow(upper / lower, 1.0 / double(count - 1));
        g.pivots.front() = lower;
        g.pivots.back() = upper;
        for (std::size_t i = 1; i + 1 < count; ++i)
            g.pivots[i] = lower * std::pow(step, double(i));
        g.ratio = step;
    } else {
        check(ratio > 1.0, "make_grid: ratio-anchored grids need ratio > 1");
        g.pivots.back() = upper;
        for (std::size_t i = count - 1; i-- > 0;)
            g.pivots[i] = g.pivots[i + 1] / ratio;
        if (g.pivots.front() < lower * (1.0 - 1e-12))
            fail(strfmt("make_grid: smallest pivot %.6g falls below the "
                        "admissible lower edge %.6g",
                        g.pivots.front(), lower));
        g.ratio = ratio;
    }

    g.lower_edge = g.pivots.front();
    g.upper_edge = g.pivots.back();
    for (std::size_t i = 0; i + 1 < count; ++i)
        if (!(g.pivots[i] > 0.0 && g.pivots[i] < g.pivots[i + 1]))
            fail("make_grid: pivots must be positive and strictly increasing");
    return g;
}

// Continues the geometric progression m pivots below the lower edge.  The
// extension is solver scaffolding (see case_series): the extra pivots may dip
// below a physical domain floor that `make_grid` would reject.
inline Grid1D extend_below(const Grid1D& g, std::size_t m) {
    check(g.ratio > 1.0, "extend_below: grid has no geometric step");
    Grid1D e = g;
    e.pivots.assign(g.size() + m, 0.0);
    for (std::size_t j = 0; j < m; ++j)
        e.pivots[j] = g.pivots.front() / std::pow(g.ratio, double(m - j));
    for (std::size_t i = 0; i < g.size(); ++i) e.pivots[m + i] = g.pivots[i];
    e.lower_edge = e.pivots.front();
    return e;
}

// Composite trapezoid weights over the pivot set; their sum telescopes to
// upper_edge - lower_edge exactly.
inline std::vector<double> trapezoid_weights(const Grid1D& g) {
    std::size_t n = g.size();
    std::vector<double> w(n, 0.0);
    w[0] = 0.5 * (g.pivots[1] - g.pivots[0]);
    for (std::size_t i = 1; i + 1 < n; ++i)
        w[i] = 0.5 * (g.pivots[i + 1] - g.pivots[i - 1]);
    w[n - 1] = 0.5 * (g.pivots[n - 1] - g.pivots[n - 2]);
    return w;
}

struct Grid2D {
    Grid1D v;
    Grid1D w;
    std::vector<double> quad_v;  // trapezoid weights per axis
    std::vector<double> quad_w;

    std::size_t nv() const { return v.size(); }
    std::size_t nw() const { return w.size(); }
    std::size_t cells() const { return nv() * nw(); }
};

inline Grid2D make_grid2d(Grid1D v_axis, Grid1D w_axis) {
    Grid2D g;
    g.v = std::move(v_axis);
    g.w = std::move(w_axis);
    g.quad_v = trapezoid_weights(g.v);
    g.quad_w = trapezoid_weights(g.w);
    return g;
}

inline std::uint64_t grid_hash(const Grid2D& g) {
    std::string s = to_string(g.v.kind) + "|" + to_string(g.w.kind);
    for (double p : g.v.pivots) s += "," + fmt_g17(p);
    s += ";";
    for (double p : g.w.pivots) s += "," + fmt_g17(p);
    return fnv1a64(s);
}

}  // namespace mpbeid::griddata

// Candidate-term library: the regression target (time derivative of the
// stacked density) and the matrix of candidate birth/death columns evaluated
// on a snapshot series.
//
// Row layout is pivot-major, time-minor: row (i, j, k) = (i*nw + j)*nt + k,
// so each pivot contributes a contiguous block holding its full time series.
// Birth columns integrate over parents from the query pivot to the top of
// the grid (trapezoid on the geometric pivots; breakage carries no mass
// above the largest initial size, so domain truncation is exact for the
// benchmark data).  Delta factors are collapsed symbolically before any
// quadrature; a delta on an integration boundary takes full weight.

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "mpbeid/common.hpp"
#include "mpbeid/dmd.hpp"
#include "mpbeid/grid.hpp"
#include "mpbeid/io.hpp"
#include "mpbeid/snapshot.hpp"

namespace mpbeid::library {

using griddata::Grid2D;
using griddata::SnapshotSeries;

enum class Side { birth, death };
enum class TermForm {
    death_monomial,
    continuous_birth,
    delta_v_birth,
    delta_w_birth,
    product_delta_birth,
};

namespace detail {

// "1", "v", "w^2", "vw", "1/(vw)", "v/w^2" in the given symbols
inline std::string monomial_name(const std::string& sv, const std::string& sw,
                                 int p, int q) {
    auto factor = [](const std::string& sym, int e) {
        if (e == 1) return sym;
        return sym + "^" + std::to_string(e);
    };
    std::string num, den;
    if (p > 0) num += factor(sv, p);
    if (q > 0) num += factor(sw, q);
    if (p < 0) den += factor(sv, -p);
    if (q < 0) den += factor(sw, -q);
    if (den.empty()) return num.empty() ? "1" : num;
    if ((p < 0) && (q < 0)) den = "(" + den + ")";
    return (num.empty() ? "1" : num) + "/" + den;
}

inline std::string ratio_name(const std::string& sym, double theta) {
    double inv = 1.0 / theta;
    if (std::abs(inv - std::round(inv)) < 1e-9) {
        long m = long(std::llround(inv));
        if (m == 1) return sym;
        return sym + "/" + std::to_string(m);
    }
    return strfmt("%g", theta) + sym;
}

}  // namespace detail

struct TermDescriptor {
    Side side = Side::death;
    TermForm form = TermForm::death_monomial;
    int p = 0, q = 0;                      // monomial (or delta prefactor) exponents
    double theta_v = 1.0, theta_w = 1.0;   // product-delta daughter fractions
    std::string name;

    static TermDescriptor death(int p, int q) {
        TermDescriptor t;
        t.side = Side::death;
        t.form = TermForm::death_monomial;
        t.p = p;
        t.q = q;
        t.name = "D(" + detail::monomial_name("v", "w", p, q) + ")";
        return t;
    }
    static TermDescriptor birth(int p, int q) {
        TermDescriptor t;
        t.side = Side::birth;
        t.form = TermForm::continuous_birth;
        t.p = p;
        t.q = q;
        t.name = "B(" + detail::monomial_name("v'", "w'", p, q) + ")";
        return t;
    }
    static TermDescriptor birth_delta_v(int p, int q) {
        TermDescriptor t;
        t.side = Side::birth;
        t.form = TermForm::delta_v_birth;
        t.p = p;
        t.q = q;
        std::string mono = detail::monomial_name("v'", "w'", p, q);
        t.name = "B(" + (mono == "1" ? "" : mono) + "delta(v-v'))";
        return t;
    }
    static TermDescriptor birth_delta_w(int p, int q) {
        TermDescriptor t;
        t.side = Side::birth;
        t.form = TermForm::delta_w_birth;
        t.p = p;
        t.q = q;
        std::string mono = detail::monomial_name("v'", "w'", p, q);
        t.name = "B(" + (mono == "1" ? "" : mono) + "delta(w-w'))";
        return t;
    }
    static TermDescriptor birth_product_delta(double tv, double tw) {
        check(tv > 0.0 && tv <= 1.0 && tw > 0.0 && tw <= 1.0,
              "TermDescriptor: product-delta fractions must lie in (0, 1]");
        TermDescriptor t;
        t.side = Side::birth;
        t.form = TermForm::product_delta_birth;
        t.theta_v = tv;
        t.theta_w = tw;
        t.name = "B(delta(v-" + detail::ratio_name("v'", tv) + ")delta(w-" +
                 detail::ratio_name("w'", tw) + "))";
        return t;
    }
};

struct EvalOptions {
    bool allow_interpolation = false;  // product-delta on incompatible grids
};

// ---------------------------------------------------------------------------
// Regression target
// ---------------------------------------------------------------------------

// second-order finite differences in time, stacked pivot-major time-minor
inline Eigen::VectorXd assemble_ndot(const SnapshotSeries& s) {
    s.validate();
    const std::size_t z = s.times.size();
    check(z >= 2, "assemble_ndot: need at least two snapshots");
    const double dt = s.dt();
    const std::size_t nv = s.grid.nv(), nw = s.grid.nw();

    Eigen::VectorXd out(long(nv * nw * z));
    for (std::size_t k = 0; k < z; ++k) {
        Eigen::MatrixXd d;
        if (z == 2) {
            d = (s.frames[1] - s.frames[0]) / dt;
        } else if (k == 0) {
            d = (-3.0 * s.frames[0] + 4.0 * s.frames[1] - s.frames[2]) / (2.0 * dt);
        } else if (k + 1 == z) {
            d = (3.0 * s.frames[z - 1] - 4.0 * s.frames[z - 2] + s.frames[z - 3]) /
                (2.0 * dt);
        } else {
            d = (s.frames[k + 1] - s.frames[k - 1]) / (2.0 * dt);
        }
        for (std::size_t i = 0; i < nv; ++i)
            for (std::size_t j = 0; j < nw; ++j)
                out(long((i * nw + j) * z + k)) = d(long(i), long(j));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Column evaluation
// ---------------------------------------------------------------------------

namespace detail {

// suffix trapezoid along the second index: out(i, y) = integral from x_y to
// the last pivot of g(i, .) against the pivot coordinates xs
inline Eigen::MatrixXd suffix_trapezoid_cols(const Eigen::MatrixXd& g,
                                             const std::vector<double>& xs) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(g.rows(), g.cols());
    for (long y = g.cols() - 2; y >= 0; --y)
        out.col(y) = out.col(y + 1) +
                     0.5 * (xs[std::size_t(y) + 1] - xs[std::size_t(y)]) *
                         (g.col(y) + g.col(y + 1));
    return out;
}

inline Eigen::VectorXd pivot_powers(const std::vector<double>& xs, int e) {
    Eigen::VectorXd out(long(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i)
        out(long(i)) = std::pow(xs[i], e);
    return out;
}

// exact-shift table for a product-delta parent lookup: index of the pivot
// matching x/theta, -1 when the parent leaves the domain
inline std::vector<long> delta_shift(const std::vector<double>& xs, double theta,
                                     bool* compatible) {
    std::vector<long> shift(xs.size(), -1);
    *compatible = true;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double parent = xs[i] / theta;
        if (parent > xs.back() * (1.0 + 1e-12)) continue;  // no parent: zero birth
        long match = -1;
        for (std::size_t j = i; j < xs.size(); ++j)
            if (std::abs(xs[j] - parent) <= 1e-9 * parent) {
                match = long(j);
                break;
            }
        if (match < 0) *compatible = false;
        shift[i] = match;
    }
    return shift;
}

// bilinear weights in log coordinate; xs ascending, target inside the domain
struct LogLerp {
    long lo = 0;
    double t = 0.0;
};

inline LogLerp log_lerp(const std::vector<double>& xs, double x) {
    LogLerp l;
    auto it = std::upper_bound(xs.begin(), xs.end(), x);
    long hi = std::clamp(long(it - xs.begin()), long(1), long(xs.size()) - 1);
    l.lo = hi - 1;
    l.t = (std::log(x) - std::log(xs[std::size_t(l.lo)])) /
          (std::log(xs[std::size_t(hi)]) - std::log(xs[std::size_t(l.lo)]));
    l.t = std::clamp(l.t, 0.0, 1.0);
    return l;
}

}  // namespace detail

inline Eigen::VectorXd evaluate_term(const TermDescriptor& t,
                                     const SnapshotSeries& s,
                                     const EvalOptions& opts = {}) {
    s.validate();
    const auto& vx = s.grid.v.pivots;
    const auto& wx = s.grid.w.pivots;
    const std::size_t nv = vx.size(), nw = wx.size(), z = s.times.size();
    Eigen::VectorXd col(long(nv * nw * z));

    auto store = [&](std::size_t k, const Eigen::MatrixXd& field) {
        for (std::size_t i = 0; i < nv; ++i)
            for (std::size_t j = 0; j < nw; ++j)
                col(long((i * nw + j) * z + k)) = field(long(i), long(j));
    };

    switch (t.form) {
        case TermForm::death_monomial: {
            Eigen::MatrixXd shape = detail::pivot_powers(vx, t.p) *
                                    detail::pivot_powers(wx, t.q).transpose();
            for (std::size_t k = 0; k < z; ++k)
                store(k, shape.cwiseProduct(s.frames[k]));
            break;
        }
        case TermForm::continuous_birth: {
            Eigen::MatrixXd shape = detail::pivot_powers(vx, t.p) *
                                    detail::pivot_powers(wx, t.q).transpose();
            for (std::size_t k = 0; k < z; ++k) {
                Eigen::MatrixXd g = shape.cwiseProduct(s.frames[k]);
                Eigen::MatrixXd h = detail::suffix_trapezoid_cols(g, wx);
                store(k, detail::suffix_trapezoid_cols(h.transpose(), vx).transpose());
            }
            break;
        }
        case TermForm::delta_v_birth: {
            // v'^p w'^q delta(v - v') collapses to v^p int_w w'^q n(v, .) dw'
            Eigen::VectorXd vp = detail::pivot_powers(vx, t.p);
            Eigen::VectorXd wq = detail::pivot_powers(wx, t.q);
            for (std::size_t k = 0; k < z; ++k) {
                Eigen::MatrixXd g = s.frames[k] * wq.asDiagonal();
                store(k, vp.asDiagonal() * detail::suffix_trapezoid_cols(g, wx));
            }
            break;
        }
        case TermForm::delta_w_birth: {
            Eigen::VectorXd vp = detail::pivot_powers(vx, t.p);
            Eigen::VectorXd wq = detail::pivot_powers(wx, t.q);
            for (std::size_t k = 0; k < z; ++k) {
                Eigen::MatrixXd g = vp.asDiagonal() * s.frames[k];
                store(k, detail::suffix_trapezoid_cols(g.transpose(), vx).transpose() *
                             wq.asDiagonal());
            }
            break;
        }
        case TermForm::product_delta_birth: {
            bool ok_v = false, ok_w = false;
            auto sv = detail::delta_shift(vx, t.theta_v, &ok_v);
            auto sw = detail::delta_shift(wx, t.theta_w, &ok_w);
            const double jac = 1.0 / (t.theta_v * t.theta_w);
            if (ok_v && ok_w) {
                for (std::size_t k = 0; k < z; ++k) {
                    Eigen::MatrixXd field = Eigen::MatrixXd::Zero(long(nv), long(nw));
                    for (std::size_t i = 0; i < nv; ++i)
                        for (std::size_t j = 0; j < nw; ++j)
                            if (sv[i] >= 0 && sw[j] >= 0)
                                field(long(i), long(j)) =
                                    jac * s.frames[k](sv[i], sw[j]);
                    store(k, field);
                }
            } else {
                check(opts.allow_interpolation,
                      "evaluate_term: grid incompatible with the product-delta "
                      "ratio; enable interpolation or use a matching mesh");
                for (std::size_t k = 0; k < z; ++k) {
                    Eigen::MatrixXd field = Eigen::MatrixXd::Zero(long(nv), long(nw));
                    for (std::size_t i = 0; i < nv; ++i) {
                        double pv = vx[i] / t.theta_v;
                        if (pv > vx.back() * (1.0 + 1e-12)) continue;
                        auto lv = detail::log_lerp(vx, pv);
                        for (std::size_t j = 0; j < nw; ++j) {
                            double pw = wx[j] / t.theta_w;
                            if (pw > wx.back() * (1.0 + 1e-12)) continue;
                            auto lw = detail::log_lerp(wx, pw);
                            const auto& n = s.frames[k];
                            double val =
                                (1 - lv.t) * ((1 - lw.t) * n(lv.lo, lw.lo) +
                                              lw.t * n(lv.lo, lw.lo + 1)) +
                                lv.t * ((1 - lw.t) * n(lv.lo + 1, lw.lo) +
                                        lw.t * n(lv.lo + 1, lw.lo + 1));
                            field(long(i), long(j)) = jac * val;
                        }
                    }
                    store(k, field);
                }
            }
            break;
        }
    }
    return col;
}

// ---------------------------------------------------------------------------
// Library assembly
// ---------------------------------------------------------------------------

struct CandidateLibrary {
    Eigen::MatrixXd theta;
    std::vector<TermDescriptor> descriptors;
    std::vector<int> birth_columns, death_columns;
    std::size_t nv = 0, nw = 0, nt = 0;

    long row_of(std::size_t i, std::size_t j, std::size_t k) const {
        return long((i * nw + j) * nt + k);
    }
    struct Triple {
        std::size_t i, j, k;
    };
    Triple triple_of(long row) const {
        std::size_t r = std::size_t(row);
        return {r / (nw * nt), (r / nt) % nw, r % nt};
    }
};

inline CandidateLibrary build_library(const SnapshotSeries& s,
                                      const std::vector<TermDescriptor>& terms,
                                      const EvalOptions& opts = {}) {
    check(!terms.empty(), "build_library: no candidate terms");
    std::set<std::string> names;
    for (const auto& t : terms)
        check(names.insert(t.name).second,
              "build_library: duplicate term name " + t.name);

    CandidateLibrary lib;
    lib.descriptors = terms;
    lib.nv = s.grid.nv();
    lib.nw = s.grid.nw();
    lib.nt = s.times.size();
    lib.theta.resize(long(lib.nv * lib.nw * lib.nt), long(terms.size()));
    for (std::size_t c = 0; c < terms.size(); ++c) {
        lib.theta.col(long(c)) = evaluate_term(terms[c], s, opts);
        check(lib.theta.col(long(c)).allFinite(),
              "build_library: non-finite column " + terms[c].name);
        (terms[c].side == Side::birth ? lib.birth_columns : lib.death_columns)
            .push_back(int(c));
    }
    return lib;
}

// ---------------------------------------------------------------------------
// Standard term sets
// ---------------------------------------------------------------------------

enum class LibraryMode { pre_dmd, continuous, semi_continuous, discontinuous };

inline std::string to_string(LibraryMode m) {
    switch (m) {
        case LibraryMode::pre_dmd: return "pre-dmd";
        case LibraryMode::continuous: return "continuous";
        case LibraryMode::semi_continuous: return "semi-continuous";
        default: return "discontinuous";
    }
}

inline std::vector<TermDescriptor> standard_library(
    LibraryMode mode, const std::vector<int>& exps = {-2, -1, 0, 1, 2},
    dmd::RateDependence rate = dmd::RateDependence::dependent) {
    check(!exps.empty(), "standard_library: empty exponent set");
    std::vector<TermDescriptor> terms;
    if (mode == LibraryMode::discontinuous) {
        terms.push_back(TermDescriptor::birth_product_delta(0.5, 0.5));
        terms.push_back(TermDescriptor::death(0, 0));
        return terms;
    }
    for (int p : exps)
        for (int q : exps) {
            if (mode == LibraryMode::semi_continuous) {
                terms.push_back(TermDescriptor::birth_delta_v(p, q));
            } else {
                terms.push_back(TermDescriptor::birth(p, q));
            }
        }
    if (mode == LibraryMode::semi_continuous)
        for (int p : exps)
            for (int q : exps) terms.push_back(TermDescriptor::birth_delta_w(p, q));
    // the advice-driven death restriction: a size-independent rate needs no
    // size-dependent death monomials (pre-advice libraries keep them all)
    if (mode != LibraryMode::pre_dmd && rate == dmd::RateDependence::independent) {
        terms.push_back(TermDescriptor::death(0, 0));
    } else {
        for (int p : exps)
            for (int q : exps) terms.push_back(TermDescriptor::death(p, q));
    }
    return terms;
}

inline std::vector<TermDescriptor> advice_library(
    const dmd::LibraryAdvice& advice,
    const std::vector<int>& exps = {-2, -1, 0, 1, 2}) {
    LibraryMode mode = LibraryMode::continuous;
    if (advice.continuity == dmd::ContinuityHint::semi_continuous_candidate)
        mode = LibraryMode::semi_continuous;
    if (advice.continuity == dmd::ContinuityHint::product_delta_candidate)
        mode = LibraryMode::discontinuous;
    return standard_library(mode, exps, advice.rate);
}

// Table of the benchmark generating models in library terms.
inline std::vector<std::pair<TermDescriptor, double>> true_model(int id) {
    using T = TermDescriptor;
    switch (id) {
        case 1: return {{T::birth(-1, -1), 4.0}, {T::death(0, 0), -1.0}};
        case 2: return {{T::birth(0, 0), 4.0}, {T::death(1, 1), -1.0}};
        case 3: return {{T::birth(-1, -1), 2.0}, {T::death(0, 0), -1.0}};
        case 4:
            return {{T::birth(-1, 0), 2.0},
                    {T::birth(0, -1), 2.0},
                    {T::death(1, 0), -1.0},
                    {T::death(0, 1), -1.0}};
        case 5:
            return {{T::birth_delta_v(1, 0), 1.0},
                    {T::birth_delta_w(0, 1), 1.0},
                    {T::death(1, 1), -1.0}};
        case 6:
            return {{T::birth_product_delta(0.5, 0.5), 1.0},
                    {T::death(0, 0), -0.25}};
        default: fail(strfmt("true_model: unknown case id %d (valid: 1..6)", id));
    }
}

// end-to-end discretization check: residual of the generating model's own
// coefficients against the assembled regression system
inline double consistency_residual(const SnapshotSeries& s,
                                   const std::vector<std::pair<TermDescriptor, double>>& model,
                                   const EvalOptions& opts = {}) {
    std::vector<TermDescriptor> terms;
    Eigen::VectorXd xi(long(model.size()));
    for (std::size_t c = 0; c < model.size(); ++c) {
        terms.push_back(model[c].first);
        xi(long(c)) = model[c].second;
    }
    auto lib = build_library(s, terms, opts);
    Eigen::VectorXd ndot = assemble_ndot(s);
    return (ndot - lib.theta * xi).norm() / ndot.norm();
}

// ---------------------------------------------------------------------------
// Manifest round-trip
// ---------------------------------------------------------------------------

inline nlohmann::json term_to_json(const TermDescriptor& t) {
    nlohmann::json j;
    j["side"] = t.side == Side::birth ? "birth" : "death";
    switch (t.form) {
        case TermForm::death_monomial: j["form"] = "monomial"; break;
        case TermForm::continuous_birth: j["form"] = "continuous"; break;
        case TermForm::delta_v_birth: j["form"] = "delta-v"; break;
        case TermForm::delta_w_birth: j["form"] = "delta-w"; break;
        case TermForm::product_delta_birth: j["form"] = "product-delta"; break;
    }
    j["p"] = t.p;
    j["q"] = t.q;
    if (t.form == TermForm::product_delta_birth) {
        j["theta_v"] = t.theta_v;
        j["theta_w"] = t.theta_w;
    }
    j["name"] = t.name;
    return j;
}

inline TermDescriptor term_from_json(const nlohmann::json& j) {
    std::string form = j.at("form").get<std::string>();
    int p = j.value("p", 0), q = j.value("q", 0);
    TermDescriptor t;
    if (form == "monomial") {
        t = TermDescriptor::death(p, q);
    } else if (form == "continuous") {
        t = TermDescriptor::birth(p, q);
    } else if (form == "delta-v") {
        t = TermDescriptor::birth_delta_v(p, q);
    } else if (form == "delta-w") {
        t = TermDescriptor::birth_delta_w(p, q);
    } else if (form == "product-delta") {
        t = TermDescriptor::birth_product_delta(j.at("theta_v").get<double>(),
                                                j.at("theta_w").get<double>());
    } else {
        fail("term manifest: unknown form " + form);
    }
    std::string side = j.at("side").get<std::string>();
    check(side == (t.side == Side::birth ? "birth" : "death"),
          "term manifest: side does not match form for " + t.name);
    if (j.contains("name")) t.name = j.at("name").get<std::string>();
    return t;
}

inline nlohmann::json terms_to_json(const std::vector<TermDescriptor>& terms) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& t : terms) arr.push_back(term_to_json(t));
    nlohmann::json j;
    j["terms"] = std::move(arr);
    return j;
}

inline std::vector<TermDescriptor> terms_from_json(const nlohmann::json& j) {
    std::vector<TermDescriptor> out;
    for (const auto& e : j.at("terms")) out.push_back(term_from_json(e));
    check(!out.empty(), "term manifest: no terms");
    return out;
}

inline void export_library(const CandidateLibrary& lib, const std::string& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j = terms_to_json(lib.descriptors);
    j["layout"] = {{"nv", lib.nv}, {"nw", lib.nw}, {"nt", lib.nt},
                   {"row_order", "pivot-major, time-minor"}};
    io::write_json_file(dir + "/terms.json", j);
    io::CsvWriter theta(dir + "/theta.csv");
    std::string head;
    for (const auto& t : lib.descriptors)
        head += (head.empty() ? "" : ",") + t.name;
    theta.comment(head);
    theta.matrix(lib.theta);
}

inline std::vector<TermDescriptor> load_terms(const std::string& path) {
    return terms_from_json(io::read_json_file(path));
}

}  // namespace mpbeid::library

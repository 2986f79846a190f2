#pragma once

// Constrained breakage-informed sequential thresholded least squares.
//
// The regression solves  min ||ndot - Theta xi||_2  subject to per-row sign
// constraints that keep every birth contribution positive and every death
// contribution negative at the collocation rows:
//
//   -Theta_B xi_B <= -eps        (birth side)
//    Theta_D xi_D <= -eps        (death side)
//
// The constrained solve is exact rather than penalised: least squares with
// inequalities (LSI) is reduced to least distance programming (LDP) through a
// QR factorisation of the data matrix, and LDP is solved with the
// Lawson-Hanson NNLS active-set method.  Results are deterministic and the
// KKT conditions are verified after every solve.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"
#include "library.hpp"

namespace mpbeid::regression {

// Thrown when the inequality set admits no solution (the dual NNLS residual
// vanishes).  The ensemble layer turns a throwing replicate into an all-zero
// member instead of aborting the bootstrap.
struct InfeasibilityError : std::runtime_error {
    explicit InfeasibilityError(const std::string& what) : std::runtime_error(what) {}
};

struct ConstraintOptions {
    double epsilon = 1e-4;
    double row_filter_threshold = 0.1;
    double subsample = 1.0;  // fraction of constraint-carrying rows that keep their constraints
    std::uint64_t seed = 0;
};

// Constraints are attached to data rows.  `data_rows` lists the collocation
// rows entering the fit; an empty list with no markers means "every row,
// unconstrained".  The options are kept so cb_stls can rebuild the set after
// thresholding removes columns.
struct ConstraintSet {
    std::vector<Eigen::Index> data_rows;
    std::vector<char> birth_row;  // aligned to data_rows, 1 = birth constraint imposed
    std::vector<char> death_row;
    std::vector<int> birth_cols;  // column partition of Theta
    std::vector<int> death_cols;
    ConstraintOptions options;

    bool empty() const {
        auto any = [](const std::vector<char>& v) {
            return std::any_of(v.begin(), v.end(), [](char c) { return c != 0; });
        };
        return !any(birth_row) && !any(death_row);
    }
    std::size_t constraint_count() const {
        std::size_t n = 0;
        for (char c : birth_row) n += (c != 0);
        for (char c : death_row) n += (c != 0);
        return n;
    }
};

inline ConstraintSet build_constraints(const Eigen::MatrixXd& theta,
                                       const std::vector<int>& birth_cols,
                                       const std::vector<int>& death_cols,
                                       const ConstraintOptions& opts = {}) {
    check(opts.epsilon > 0.0, "build_constraints: epsilon must be positive");
    check(opts.row_filter_threshold >= 0.0, "build_constraints: negative row filter threshold");
    check(opts.subsample > 0.0 && opts.subsample <= 1.0,
          "build_constraints: subsample fraction must lie in (0, 1]");
    check(theta.rows() > 0 && theta.cols() > 0, "build_constraints: empty library matrix");
    for (int c : birth_cols)
        check(c >= 0 && c < theta.cols(), "build_constraints: birth column out of range");
    for (int c : death_cols)
        check(c >= 0 && c < theta.cols(), "build_constraints: death column out of range");

    ConstraintSet cs;
    cs.birth_cols = birth_cols;
    cs.death_cols = death_cols;
    cs.options = opts;
    const double thr = opts.row_filter_threshold;
    for (Eigen::Index i = 0; i < theta.rows(); ++i) {
        double bsum = 0.0, dsum = 0.0;
        for (int c : birth_cols) bsum += std::abs(theta(i, c));
        for (int c : death_cols) dsum += std::abs(theta(i, c));
        if (bsum < thr && dsum < thr) continue;  // both sides quiet: drop the data row
        cs.data_rows.push_back(i);
        // one quiet side only loses its constraint; bsum > 0 keeps the
        // all-zero-row invariant when thr == 0
        cs.birth_row.push_back(bsum >= thr && bsum > 0.0 ? 1 : 0);
        cs.death_row.push_back(dsum >= thr && dsum > 0.0 ? 1 : 0);
    }
    if (cs.data_rows.empty()) fail("build_constraints: the row filter removed every data row");

    if (opts.subsample < 1.0) {
        std::vector<std::size_t> carriers;
        for (std::size_t k = 0; k < cs.data_rows.size(); ++k)
            if (cs.birth_row[k] || cs.death_row[k]) carriers.push_back(k);
        std::size_t keep = std::max<std::size_t>(
            1, std::size_t(std::llround(opts.subsample * double(carriers.size()))));
        if (keep < carriers.size()) {
            Rng rng(derive_stream(opts.seed, 0xCB57));
            for (std::size_t i = 0; i < keep; ++i) {
                std::size_t j = i + std::size_t(rng.uniform_index(carriers.size() - i));
                std::swap(carriers[i], carriers[j]);
            }
            std::vector<char> chosen(cs.data_rows.size(), 0);
            for (std::size_t i = 0; i < keep; ++i) chosen[carriers[i]] = 1;
            for (std::size_t k = 0; k < cs.data_rows.size(); ++k)
                if (!chosen[k]) cs.birth_row[k] = cs.death_row[k] = 0;
        }
    }
    return cs;
}

inline ConstraintSet build_constraints(const library::CandidateLibrary& lib,
                                       const ConstraintOptions& opts = {}) {
    return build_constraints(lib.theta, lib.birth_columns, lib.death_columns, opts);
}

struct StlsOptions {
    double step_tol = 1e-4;        // KKT residual allowance
    double constraint_tol = 1e-4;  // violation allowance on unit-normalised rows
    int max_iter = 1000;           // active-set pivots per constrained solve
    int max_sweeps = 100;          // thresholding sweeps in cb_stls
};

struct LsqReport {
    bool converged = true;
    bool feasible = true;
    int iterations = 0;
    double kkt_residual = 0.0;
    double max_violation = 0.0;
};

namespace detail {

// Lawson-Hanson non-negative least squares: min ||E u - f|| with u >= 0.
inline Eigen::VectorXd nnls(const Eigen::MatrixXd& E, const Eigen::VectorXd& f, int max_iter,
                            int& iterations, bool& converged) {
    const Eigen::Index m = E.cols();
    Eigen::VectorXd u = Eigen::VectorXd::Zero(m);
    std::vector<char> passive(m, 0);
    std::vector<Eigen::Index> pset;
    const double wtol = 10.0 * std::numeric_limits<double>::epsilon() *
                        E.cwiseAbs().colwise().sum().maxCoeff() *
                        double(std::max(E.rows(), E.cols()));
    converged = false;
    Eigen::VectorXd r = f;  // f - E u
    while (iterations < max_iter) {
        Eigen::VectorXd w = E.transpose() * r;
        Eigen::Index best = -1;
        double wbest = wtol;
        for (Eigen::Index j = 0; j < m; ++j)
            if (!passive[j] && w[j] > wbest) {
                wbest = w[j];
                best = j;
            }
        if (best < 0) {
            converged = true;
            break;
        }
        passive[best] = 1;
        pset.push_back(best);
        while (iterations < max_iter) {
            ++iterations;
            Eigen::MatrixXd Ep(E.rows(), Eigen::Index(pset.size()));
            for (std::size_t k = 0; k < pset.size(); ++k) Ep.col(Eigen::Index(k)) = E.col(pset[k]);
            Eigen::VectorXd z = Ep.colPivHouseholderQr().solve(f);
            double zmin = z.minCoeff();
            if (zmin > 0.0) {
                for (std::size_t k = 0; k < pset.size(); ++k) u[pset[k]] = z[Eigen::Index(k)];
                break;
            }
            // backtrack along u -> z until the first coefficient hits zero
            double alpha = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < pset.size(); ++k)
                if (z[Eigen::Index(k)] <= 0.0) {
                    double uk = u[pset[k]];
                    double denom = uk - z[Eigen::Index(k)];
                    alpha = std::min(alpha, denom > 0.0 ? uk / denom : 0.0);
                }
            for (std::size_t k = 0; k < pset.size(); ++k) {
                double nu = u[pset[k]] + alpha * (z[Eigen::Index(k)] - u[pset[k]]);
                u[pset[k]] = nu;
            }
            std::vector<Eigen::Index> kept;
            for (Eigen::Index j : pset) {
                if (u[j] > 1e-14 * (1.0 + std::abs(u[j]))) {
                    kept.push_back(j);
                } else {
                    u[j] = 0.0;
                    passive[j] = 0;
                }
            }
            pset.swap(kept);
            if (pset.empty()) break;
        }
        r = f - E * u;
    }
    return u;
}

// Least distance programming: min ||y|| subject to G y >= h.
inline Eigen::VectorXd ldp(const Eigen::MatrixXd& G, const Eigen::VectorXd& h, int max_iter,
                           int& iterations, bool& converged) {
    const Eigen::Index n = G.cols(), m = G.rows();
    Eigen::MatrixXd E(n + 1, m);
    E.topRows(n) = G.transpose();
    E.row(n) = h.transpose();
    Eigen::VectorXd f = Eigen::VectorXd::Zero(n + 1);
    f[n] = 1.0;
    Eigen::VectorXd u = nnls(E, f, max_iter, iterations, converged);
    Eigen::VectorXd r = E * u - f;
    if (r.norm() <= 1e-10 || std::abs(r[n]) <= 1e-12)
        throw InfeasibilityError("constrained_lsq: the inequality set is infeasible");
    return -r.head(n) / r[n];
}

inline Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& a, const std::vector<Eigen::Index>& rows) {
    Eigen::MatrixXd out(Eigen::Index(rows.size()), a.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(Eigen::Index(k)) = a.row(rows[k]);
    return out;
}

inline Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
    Eigen::VectorXd out(Eigen::Index(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) out[Eigen::Index(k)] = v[rows[k]];
    return out;
}

}  // namespace detail

// Minimises ||ndot - Theta xi||_2 subject to the inequality set within
// constraint_tol.  Infeasible constraints throw InfeasibilityError; an
// exhausted iteration budget returns the current iterate flagged
// non-converged in the report.  Rank-deficient libraries are handled by
// dropping dependent columns (their coefficients are returned as exact
// zeros).
inline Eigen::VectorXd constrained_lsq(const Eigen::MatrixXd& theta, const Eigen::VectorXd& ndot,
                                       const ConstraintSet& cs, const StlsOptions& opts = {},
                                       LsqReport* report = nullptr) {
    check(theta.cols() >= 1, "constrained_lsq: library matrix needs at least one column");
    check(theta.rows() == ndot.size(), "constrained_lsq: row mismatch between library and ndot");
    check(theta.allFinite() && ndot.allFinite(), "constrained_lsq: non-finite input");
    check(opts.max_iter >= 1, "constrained_lsq: max_iter must be at least 1");
    check(opts.step_tol > 0.0 && opts.constraint_tol > 0.0,
          "constrained_lsq: tolerances must be positive");
    check(cs.birth_row.size() == cs.data_rows.size() && cs.death_row.size() == cs.data_rows.size(),
          "constrained_lsq: constraint markers misaligned with data rows");
    for (Eigen::Index i : cs.data_rows)
        check(i >= 0 && i < theta.rows(), "constrained_lsq: data row out of range");
    for (int c : cs.birth_cols)
        check(c >= 0 && c < theta.cols(), "constrained_lsq: birth column out of range");
    for (int c : cs.death_cols)
        check(c >= 0 && c < theta.cols(), "constrained_lsq: death column out of range");

    LsqReport rep;
    const Eigen::MatrixXd A = cs.data_rows.empty() ? theta : detail::gather_rows(theta, cs.data_rows);
    const Eigen::VectorXd b = cs.data_rows.empty() ? ndot : detail::gather(ndot, cs.data_rows);
    const Eigen::Index ncols = theta.cols();

    // inequality rows G xi >= h, unit-normalised
    const Eigen::Index nc = Eigen::Index(cs.constraint_count());
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nc, ncols);
    Eigen::VectorXd h = Eigen::VectorXd::Constant(nc, cs.options.epsilon);
    Eigen::Index r = 0;
    for (std::size_t k = 0; k < cs.data_rows.size(); ++k) {
        if (cs.birth_row[k]) {
            for (int c : cs.birth_cols) G(r, c) = A(Eigen::Index(k), c);
            ++r;
        }
        if (cs.death_row[k]) {
            for (int c : cs.death_cols) G(r, c) = -A(Eigen::Index(k), c);
            ++r;
        }
    }
    for (Eigen::Index i = 0; i < nc; ++i) {
        double norm = G.row(i).norm();
        check(norm > 0.0, "constrained_lsq: retained constraint row is all-zero");
        G.row(i) /= norm;
        h[i] /= norm;
    }

    // rank-aware least squares: keep the pivoted independent columns
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> rankqr(A);
    const Eigen::Index rank = rankqr.rank();
    check(rank >= 1, "constrained_lsq: library matrix has rank zero");
    std::vector<Eigen::Index> kept(static_cast<std::size_t>(rank));
    {
        const auto& perm = rankqr.colsPermutation().indices();
        for (Eigen::Index k = 0; k < rank; ++k) kept[std::size_t(k)] = perm[k];
        std::sort(kept.begin(), kept.end());
    }

    Eigen::MatrixXd Ak(A.rows(), rank);
    for (Eigen::Index k = 0; k < rank; ++k) Ak.col(k) = A.col(kept[std::size_t(k)]);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(Ak);
    const Eigen::MatrixXd R =
        qr.matrixQR().topLeftCorner(rank, rank).triangularView<Eigen::Upper>();
    const Eigen::VectorXd qtb = (qr.householderQ().transpose() * b).head(rank);

    Eigen::MatrixXd Gk(nc, rank);
    for (Eigen::Index k = 0; k < rank; ++k) Gk.col(k) = G.col(kept[std::size_t(k)]);

    auto scatter = [&](const Eigen::VectorXd& xk) {
        Eigen::VectorXd xi = Eigen::VectorXd::Zero(ncols);
        for (Eigen::Index k = 0; k < rank; ++k) xi[kept[std::size_t(k)]] = xk[k];
        return xi;
    };
    auto violation = [&](const Eigen::VectorXd& xk) {
        if (nc == 0) return 0.0;
        return std::max(0.0, (h - Gk * xk).maxCoeff());
    };

    Eigen::VectorXd xk =
        R.triangularView<Eigen::Upper>().solve(qtb);  // unconstrained optimum
    // any positive violation routes through LDP; constraint_tol is only the
    // post-solve feasibility allowance
    if (nc > 0 && violation(xk) > 0.0) {
        // LSI -> LDP: substitute y = R xk - qtb
        Eigen::MatrixXd Gh =
            R.transpose().triangularView<Eigen::Lower>().solve(Gk.transpose()).transpose();
        Eigen::VectorXd hh = h - Gh * qtb;
        Eigen::VectorXd y = detail::ldp(Gh, hh, opts.max_iter, rep.iterations, rep.converged);
        xk = R.triangularView<Eigen::Upper>().solve(y + qtb);
    }
    rep.max_violation = violation(xk);
    rep.feasible = rep.max_violation <= opts.constraint_tol;

    // stationarity: grad = 2 Ak'(Ak xk - b) must be a nonnegative combination
    // of the active constraint gradients
    Eigen::VectorXd grad = 2.0 * (Ak.transpose() * (Ak * xk - b));
    std::vector<Eigen::Index> active;
    if (nc > 0) {
        Eigen::VectorXd slack = Gk * xk - h;
        for (Eigen::Index i = 0; i < nc; ++i)
            if (slack[i] <= opts.constraint_tol) active.push_back(i);
    }
    if (active.empty()) {
        rep.kkt_residual = grad.norm() / std::max(1.0, grad.norm());
    } else {
        Eigen::MatrixXd Gact(rank, Eigen::Index(active.size()));
        for (std::size_t k = 0; k < active.size(); ++k)
            Gact.col(Eigen::Index(k)) = Gk.row(active[k]).transpose();
        int dual_iters = 0;
        bool dual_ok = false;
        Eigen::VectorXd mu = detail::nnls(Gact, grad, opts.max_iter, dual_iters, dual_ok);
        rep.kkt_residual = (Gact * mu - grad).norm() / std::max(1.0, grad.norm());
    }
    rep.converged = rep.converged && rep.feasible && rep.kkt_residual <= opts.step_tol;
    if (nc == 0) rep.converged = rep.kkt_residual <= opts.step_tol;
    if (report) *report = rep;
    return scatter(xk);
}

// Largest absolute coefficient of the unconstrained dense fit, for choosing a
// lambda range.
inline double dense_fit_max_xi(const Eigen::MatrixXd& theta, const Eigen::VectorXd& ndot) {
    Eigen::VectorXd xi = constrained_lsq(theta, ndot, ConstraintSet{});
    return xi.cwiseAbs().maxCoeff();
}

inline std::vector<double> default_lambda_grid() {
    std::vector<double> g(10);
    for (int i = 0; i < 10; ++i) g[i] = 0.1 * double(i + 1);
    return g;
}

struct SparseSolution {
    Eigen::VectorXd xi;                // full library length, exact zeros off the support
    std::vector<int> support;          // ascending indices of surviving columns
    double lambda = 0.0;
    int sweeps = 0;                    // least-squares sweeps performed
    int iterations = 0;                // active-set pivots across all solves
    double residual_norm = 0.0;        // over the collocation rows of the final sweep
    double kkt_residual = 0.0;
    double max_violation = 0.0;
    bool converged = true;
    bool empty_support = false;
};

// cb-STLS: constrained least squares on the active columns, zero every
// coefficient with |xi_k| < lambda (ties survive), rebuild the constraints on
// the surviving columns, repeat until the support is stable.  A side whose
// columns are all eliminated loses its constraints.  With an empty
// ConstraintSet this reduces to plain STLS.
inline SparseSolution cb_stls(const Eigen::MatrixXd& theta, const Eigen::VectorXd& ndot,
                              double lambda, const ConstraintSet& cs, const StlsOptions& opts = {}) {
    check(lambda > 0.0, "cb_stls: lambda must be positive");
    check(theta.cols() >= 1, "cb_stls: library matrix needs at least one column");
    check(theta.rows() == ndot.size(), "cb_stls: row mismatch between library and ndot");
    check(opts.max_sweeps >= 1, "cb_stls: max_sweeps must be at least 1");

    SparseSolution sol;
    sol.lambda = lambda;
    sol.xi = Eigen::VectorXd::Zero(theta.cols());
    const bool constrained = !cs.empty();
    std::vector<char> is_birth(std::size_t(theta.cols()), 0), is_death(std::size_t(theta.cols()), 0);
    for (int c : cs.birth_cols) is_birth[std::size_t(c)] = 1;
    for (int c : cs.death_cols) is_death[std::size_t(c)] = 1;

    std::vector<int> active(std::size_t(theta.cols()));
    for (std::size_t k = 0; k < active.size(); ++k) active[k] = int(k);
    ConstraintSet current = cs;

    auto finish_residual = [&](const Eigen::VectorXd& xi_full) {
        Eigen::VectorXd res = ndot - theta * xi_full;
        if (current.data_rows.empty()) return res.norm();
        return detail::gather(res, current.data_rows).norm();
    };

    auto submatrix = [&] {
        Eigen::MatrixXd sub(theta.rows(), Eigen::Index(active.size()));
        for (std::size_t k = 0; k < active.size(); ++k)
            sub.col(Eigen::Index(k)) = theta.col(active[k]);
        return sub;
    };
    auto accept = [&](const Eigen::VectorXd& xik, bool converged) {
        for (std::size_t k = 0; k < active.size(); ++k)
            sol.xi[active[k]] = xik[Eigen::Index(k)];
        for (int c : active)
            if (sol.xi[c] != 0.0) sol.support.push_back(c);
        sol.converged = converged;
        sol.empty_support = sol.support.empty();
        sol.residual_norm = finish_residual(sol.xi);
        return sol;
    };

    while (sol.sweeps < opts.max_sweeps) {
        LsqReport rep;
        Eigen::VectorXd xik = constrained_lsq(submatrix(), ndot, current, opts, &rep);
        ++sol.sweeps;
        sol.iterations += rep.iterations;
        sol.kkt_residual = rep.kkt_residual;
        sol.max_violation = rep.max_violation;

        std::vector<int> survivors;
        for (std::size_t k = 0; k < active.size(); ++k)
            if (std::abs(xik[Eigen::Index(k)]) >= lambda) survivors.push_back(active[k]);

        if (survivors.size() == active.size()) return accept(xik, rep.converged);
        if (survivors.empty()) {
            sol.empty_support = true;
            sol.residual_norm = finish_residual(sol.xi);
            return sol;
        }

        active.swap(survivors);
        if (constrained) {
            std::vector<int> bsub, dsub;
            for (std::size_t k = 0; k < active.size(); ++k) {
                if (is_birth[std::size_t(active[k])]) bsub.push_back(int(k));
                if (is_death[std::size_t(active[k])]) dsub.push_back(int(k));
            }
            try {
                current = build_constraints(submatrix(), bsub, dsub, cs.options);
            } catch (const std::runtime_error&) {
                // the surviving columns clear the row filter nowhere: nothing
                // identifiable is left
                sol.empty_support = true;
                sol.converged = false;
                sol.residual_norm = finish_residual(sol.xi);
                return sol;
            }
        }
    }
    // sweep cap with the support still shrinking: fit the current survivors
    // once more and return that, flagged
    LsqReport rep;
    Eigen::VectorXd xik = constrained_lsq(submatrix(), ndot, current, opts, &rep);
    ++sol.sweeps;
    sol.iterations += rep.iterations;
    sol.kkt_residual = rep.kkt_residual;
    sol.max_violation = rep.max_violation;
    return accept(xik, false);
}

// Threshold-ordering report for a lambda sweep: for lambda1 < lambda2 the
// support at lambda2 should be contained in the support at lambda1 when both
// runs converged (constraint activation can break this; violations are
// reported, not hidden).
inline std::vector<std::string> threshold_ordering_log(std::vector<SparseSolution> sols) {
    std::sort(sols.begin(), sols.end(),
              [](const SparseSolution& a, const SparseSolution& b) { return a.lambda < b.lambda; });
    std::vector<std::string> log;
    for (std::size_t i = 0; i + 1 < sols.size(); ++i) {
        const auto& lo = sols[i];
        const auto& hi = sols[i + 1];
        if (!lo.converged || !hi.converged) continue;
        if (!std::includes(lo.support.begin(), lo.support.end(), hi.support.begin(),
                           hi.support.end()))
            log.push_back(strfmt("support at lambda=%g is not contained in support at lambda=%g",
                                 hi.lambda, lo.lambda));
    }
    return log;
}

}  // namespace mpbeid::regression

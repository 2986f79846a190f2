#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "mpbeid/library.hpp"
#include "mpbeid/regression.hpp"
#include "mpbeid/solver.hpp"
#include "support/series_cache.hpp"

using namespace mpbeid;
using namespace mpbeid::regression;
using Catch::Matchers::WithinAbs;

namespace {

// true coefficients scattered onto the library's column order
Eigen::VectorXd true_xi(const library::CandidateLibrary& lib, int id) {
    Eigen::VectorXd xi = Eigen::VectorXd::Zero(lib.theta.cols());
    for (const auto& [term, coeff] : library::true_model(id))
        for (std::size_t c = 0; c < lib.descriptors.size(); ++c)
            if (lib.descriptors[c].name == term.name) xi[Eigen::Index(c)] = coeff;
    return xi;
}

std::set<std::string> support_names(const library::CandidateLibrary& lib,
                                    const SparseSolution& sol) {
    std::set<std::string> names;
    for (int c : sol.support) names.insert(lib.descriptors[std::size_t(c)].name);
    return names;
}

std::set<std::string> true_names(int id) {
    std::set<std::string> names;
    for (const auto& [term, coeff] : library::true_model(id)) names.insert(term.name);
    return names;
}

library::CandidateLibrary case_library(int id) {
    using library::LibraryMode;
    LibraryMode mode = LibraryMode::continuous;
    if (id == 5) mode = LibraryMode::semi_continuous;
    if (id == 6) mode = LibraryMode::discontinuous;
    auto rate = (id == 1 || id == 3 || id == 6) ? dmd::RateDependence::independent
                                                : dmd::RateDependence::dependent;
    auto terms = library::standard_library(mode, {-2, -1, 0, 1, 2}, rate);
    return library::build_library(testsupport::shared_series(id), terms);
}

}  // namespace

TEST_CASE("constrained least squares projects onto the feasible box") {
    // minimize ||[1,0] - I xi|| subject to xi1 >= eps, xi2 <= -eps: the
    // unconstrained optimum lands on the box at [1, -eps]
    Eigen::MatrixXd theta = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd nd(2);
    nd << 1.0, 0.0;
    ConstraintSet cs;
    cs.data_rows = {0, 1};
    cs.birth_row = {1, 0};
    cs.death_row = {0, 1};
    cs.birth_cols = {0};
    cs.death_cols = {1};
    LsqReport rep;
    Eigen::VectorXd xi = constrained_lsq(theta, nd, cs, {}, &rep);
    REQUIRE_THAT(xi[0], WithinAbs(1.0, 1e-9));
    REQUIRE_THAT(xi[1], WithinAbs(-1e-4, 1e-9));
    REQUIRE(rep.converged);
    REQUIRE(rep.feasible);
    REQUIRE(rep.kkt_residual <= 1e-4);
    REQUIRE(rep.max_violation <= 1e-10);
}

TEST_CASE("a feasible unconstrained optimum is returned untouched") {
    Rng rng(7);
    Eigen::MatrixXd theta(12, 2);
    for (Eigen::Index i = 0; i < 12; ++i) {
        theta(i, 0) = 0.5 + rng.uniform();
        theta(i, 1) = 0.5 + rng.uniform();
    }
    Eigen::VectorXd xt(2);
    xt << 2.0, -3.0;
    Eigen::VectorXd nd = theta * xt;
    for (Eigen::Index i = 0; i < 12; ++i) nd[i] += 0.01 * rng.normal();
    ConstraintSet cs = build_constraints(theta, {0}, {1});
    LsqReport rep;
    Eigen::VectorXd xi = constrained_lsq(theta, nd, cs, {}, &rep);
    Eigen::VectorXd ols = theta.colPivHouseholderQr().solve(nd);
    REQUIRE((xi - ols).norm() <= 1e-12);
    REQUIRE(rep.iterations == 0);  // never entered the active-set solver
    REQUIRE(rep.converged);
}

TEST_CASE("dependent columns are dropped and zeroed, residual stays optimal") {
    Rng rng(11);
    Eigen::MatrixXd theta(20, 3);
    for (Eigen::Index i = 0; i < 20; ++i) {
        theta(i, 0) = rng.normal();
        theta(i, 1) = rng.normal();
        theta(i, 2) = 2.0 * theta(i, 0);
    }
    Eigen::VectorXd nd(20);
    for (Eigen::Index i = 0; i < 20; ++i) nd[i] = rng.normal();
    Eigen::VectorXd xi = constrained_lsq(theta, nd, ConstraintSet{});
    // column 2 carries twice the norm of its duplicate, so the pivot keeps it
    REQUIRE(xi[0] == 0.0);
    double res = (nd - theta * xi).norm();
    double res_svd =
        (nd - theta * theta.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(nd)).norm();
    REQUIRE_THAT(res, WithinAbs(res_svd, 1e-9));
}

TEST_CASE("incompatible sign constraints raise the infeasibility error") {
    // xi >= eps and xi <= -eps on the same column cannot both hold
    Eigen::MatrixXd theta = Eigen::MatrixXd::Ones(3, 1);
    Eigen::VectorXd nd = Eigen::VectorXd::Zero(3);
    ConstraintSet cs;
    cs.data_rows = {0};
    cs.birth_row = {1};
    cs.death_row = {1};
    cs.birth_cols = {0};
    cs.death_cols = {0};
    REQUIRE_THROWS_AS(constrained_lsq(theta, nd, cs), InfeasibilityError);
}

TEST_CASE("row filtering drops quiet sides and quiet rows") {
    Eigen::MatrixXd theta(2, 2);
    theta << 0.05, 5.0,   // birth quiet, death loud: row kept, birth constraint dropped
        0.04, 0.09;       // both quiet: row excluded entirely
    ConstraintSet cs = build_constraints(theta, {0}, {1});
    REQUIRE(cs.data_rows == std::vector<Eigen::Index>{0});
    REQUIRE(cs.birth_row == std::vector<char>{0});
    REQUIRE(cs.death_row == std::vector<char>{1});
    REQUIRE(cs.constraint_count() == 1);

    SECTION("all sums above threshold constrain every row") {
        Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(5, 2);
        ConstraintSet all = build_constraints(ones, {0}, {1});
        REQUIRE(all.data_rows.size() == 5);
        REQUIRE(all.constraint_count() == 10);
    }
    SECTION("an all-zero library is an error") {
        Eigen::MatrixXd z = Eigen::MatrixXd::Zero(3, 2);
        REQUIRE_THROWS_AS(build_constraints(z, {0}, {1}), std::runtime_error);
    }
    SECTION("a zero threshold still never retains an all-zero constraint row") {
        Eigen::MatrixXd m(1, 2);
        m << 0.0, 5.0;
        ConstraintOptions o;
        o.row_filter_threshold = 0.0;
        ConstraintSet cz = build_constraints(m, {0}, {1}, o);
        REQUIRE(cz.birth_row == std::vector<char>{0});
        REQUIRE(cz.death_row == std::vector<char>{1});
    }
    SECTION("parameter validation") {
        ConstraintOptions bad;
        bad.epsilon = 0.0;
        REQUIRE_THROWS_AS(build_constraints(theta, {0}, {1}, bad), std::invalid_argument);
        bad = {};
        bad.subsample = 0.0;
        REQUIRE_THROWS_AS(build_constraints(theta, {0}, {1}, bad), std::invalid_argument);
        bad.subsample = 1.2;
        REQUIRE_THROWS_AS(build_constraints(theta, {0}, {1}, bad), std::invalid_argument);
        REQUIRE_THROWS_AS(build_constraints(theta, {0}, {2}), std::invalid_argument);
    }
}

TEST_CASE("constraint subsampling is seeded and deterministic") {
    Eigen::MatrixXd theta(100, 2);
    for (Eigen::Index i = 0; i < 100; ++i) {
        theta(i, 0) = 1.0 + 0.001 * double(i);
        theta(i, 1) = 2.0 - 0.001 * double(i);
    }
    ConstraintOptions o;
    o.subsample = 0.25;
    o.seed = 3;
    ConstraintSet a = build_constraints(theta, {0}, {1}, o);
    ConstraintSet b = build_constraints(theta, {0}, {1}, o);
    REQUIRE(a.data_rows.size() == 100);  // sampling thins constraints, not data
    REQUIRE(a.constraint_count() == 50);  // 25 rows keep both sides
    REQUIRE(a.birth_row == b.birth_row);
    REQUIRE(a.death_row == b.death_row);
    o.seed = 4;
    ConstraintSet c = build_constraints(theta, {0}, {1}, o);
    REQUIRE(c.constraint_count() == 50);
    REQUIRE(a.birth_row != c.birth_row);
}

TEST_CASE("an empty constraint set reduces cb-STLS to plain STLS") {
    Rng rng(42);
    Eigen::MatrixXd theta(40, 6);
    for (Eigen::Index i = 0; i < 40; ++i)
        for (Eigen::Index j = 0; j < 6; ++j) theta(i, j) = rng.normal();
    Eigen::VectorXd xt(6);
    xt << 2.0, 0.0, -1.5, 0.0, 0.7, 0.0;
    Eigen::VectorXd nd = theta * xt;
    for (Eigen::Index i = 0; i < 40; ++i) nd[i] += 0.05 * rng.normal();

    auto sol = cb_stls(theta, nd, 0.4, ConstraintSet{});

    std::vector<int> act{0, 1, 2, 3, 4, 5};
    Eigen::VectorXd ref = Eigen::VectorXd::Zero(6);
    for (int s = 0; s < 20 && !act.empty(); ++s) {
        Eigen::MatrixXd sub(40, Eigen::Index(act.size()));
        for (std::size_t k = 0; k < act.size(); ++k) sub.col(Eigen::Index(k)) = theta.col(act[k]);
        Eigen::VectorXd z = sub.colPivHouseholderQr().solve(nd);
        std::vector<int> nxt;
        for (std::size_t k = 0; k < act.size(); ++k)
            if (std::abs(z[Eigen::Index(k)]) >= 0.4) nxt.push_back(act[k]);
        if (nxt.size() == act.size()) {
            for (std::size_t k = 0; k < act.size(); ++k) ref[act[k]] = z[Eigen::Index(k)];
            break;
        }
        act = nxt;
    }
    REQUIRE((sol.xi - ref).norm() <= 1e-12);
    REQUIRE(sol.support == std::vector<int>{0, 2, 4});
    REQUIRE(sol.converged);

    SECTION("a threshold above the dense fit returns the flagged all-zero solution") {
        double lam = dense_fit_max_xi(theta, nd) + 1.0;
        auto zero = cb_stls(theta, nd, lam, ConstraintSet{});
        REQUIRE(zero.empty_support);
        REQUIRE(zero.support.empty());
        REQUIRE(zero.xi.isZero(0.0));
        REQUIRE_THAT(zero.residual_norm, WithinAbs(nd.norm(), 1e-12));
    }
    SECTION("the dense-fit helper reports the largest OLS coefficient") {
        Eigen::VectorXd ols = theta.colPivHouseholderQr().solve(nd);
        REQUIRE_THAT(dense_fit_max_xi(theta, nd), WithinAbs(ols.cwiseAbs().maxCoeff(), 1e-12));
    }
}

TEST_CASE("a constructed consistent case-1 system is recovered exactly") {
    std::vector<library::TermDescriptor> terms{library::TermDescriptor::birth(-1, -1),
                                               library::TermDescriptor::death(0, 0)};
    auto lib = library::build_library(testsupport::shared_series(1), terms);
    Eigen::VectorXd xt(2);
    xt << 4.0, -1.0;
    Eigen::VectorXd nd = lib.theta * xt;
    ConstraintSet cs = build_constraints(lib);
    REQUIRE(cs.data_rows.size() == 12573);
    REQUIRE(cs.constraint_count() == 23087);
    LsqReport rep;
    Eigen::VectorXd xi = constrained_lsq(lib.theta, nd, cs, {}, &rep);
    REQUIRE_THAT(xi[0], WithinAbs(4.0, 1e-8));
    REQUIRE_THAT(xi[1], WithinAbs(-1.0, 1e-8));
    REQUIRE((nd - lib.theta * xi).norm() <= 1e-8);
    REQUIRE(rep.iterations == 0);  // the truth is strictly feasible on filtered rows
}

TEST_CASE("case 1 identification with the post-DMD library at lambda 0.5") {
    auto lib = case_library(1);
    REQUIRE(lib.theta.cols() == 26);
    Eigen::VectorXd nd = library::assemble_ndot(testsupport::shared_series(1));
    ConstraintSet cs = build_constraints(lib);
    auto sol = cb_stls(lib.theta, nd, 0.5, cs);

    REQUIRE(support_names(lib, sol) == true_names(1));
    REQUIRE(sol.converged);
    REQUIRE(sol.max_violation <= 1e-4);
    REQUIRE(sol.sweeps == 3);
    Eigen::VectorXd xt = true_xi(lib, 1);
    for (int c : sol.support) REQUIRE_THAT(sol.xi[c], WithinAbs(xt[c], 0.1));
    // frozen identification values on the canonical clean data
    REQUIRE_THAT(sol.xi.maxCoeff(), WithinAbs(3.919562, 1e-4));
    REQUIRE_THAT(sol.xi.minCoeff(), WithinAbs(-1.033091, 1e-4));
    // entries off the support are exact zeros
    std::set<int> on(sol.support.begin(), sol.support.end());
    for (Eigen::Index c = 0; c < sol.xi.size(); ++c)
        if (!on.count(int(c))) REQUIRE(sol.xi[c] == 0.0);
}

TEST_CASE("case 6 identification with the two-term library") {
    auto lib = case_library(6);
    REQUIRE(lib.theta.cols() == 2);
    Eigen::VectorXd nd = library::assemble_ndot(testsupport::shared_series(6));
    auto sol = cb_stls(lib.theta, nd, 0.1, build_constraints(lib));
    REQUIRE(support_names(lib, sol) == true_names(6));
    REQUIRE(sol.sweeps == 1);
    double b = sol.xi[lib.birth_columns[0]];
    double d = sol.xi[lib.death_columns[0]];
    REQUIRE_THAT(b, WithinAbs(1.0, 0.05));
    REQUIRE_THAT(d, WithinAbs(-0.25, 0.02));
    REQUIRE_THAT(b, WithinAbs(1.002710, 1e-4));
    REQUIRE_THAT(d, WithinAbs(-0.258241, 1e-4));
}

TEST_CASE("cases 2 through 5 recover their generating terms at lambda 0.5") {
    struct Row {
        int id;
        double ec_gate;
    };
    for (auto [id, gate] : {Row{2, 0.05}, Row{3, 0.05}, Row{4, 0.05}, Row{5, 0.10}}) {
        DYNAMIC_SECTION("case " << id) {
            auto lib = case_library(id);
            Eigen::VectorXd nd = library::assemble_ndot(testsupport::shared_series(id));
            auto sol = cb_stls(lib.theta, nd, 0.5, build_constraints(lib));
            REQUIRE(support_names(lib, sol) == true_names(id));
            REQUIRE(sol.converged);
            REQUIRE(sol.max_violation <= 1e-4);
            Eigen::VectorXd xt = true_xi(lib, id);
            double ec = (xt - sol.xi).norm() / xt.norm();
            REQUIRE(ec <= gate);
        }
    }
}

TEST_CASE("solutions satisfy every retained constraint") {
    // case 4 activates the inequality solver on clean data
    auto lib = case_library(4);
    Eigen::VectorXd nd = library::assemble_ndot(testsupport::shared_series(4));
    ConstraintSet cs = build_constraints(lib);
    LsqReport rep;
    Eigen::VectorXd xi = constrained_lsq(lib.theta, nd, cs, {}, &rep);
    REQUIRE(rep.converged);
    REQUIRE(rep.feasible);
    REQUIRE(rep.kkt_residual <= 1e-4);
    const double eps = cs.options.epsilon;
    for (std::size_t k = 0; k < cs.data_rows.size(); ++k) {
        Eigen::Index i = cs.data_rows[k];
        if (cs.birth_row[k]) {
            double sum = 0.0, norm2 = 0.0;
            for (int c : cs.birth_cols) {
                sum += lib.theta(i, c) * xi[c];
                norm2 += lib.theta(i, c) * lib.theta(i, c);
            }
            REQUIRE(sum >= eps - 1e-4 * std::sqrt(norm2));
        }
        if (cs.death_row[k]) {
            double sum = 0.0, norm2 = 0.0;
            for (int c : cs.death_cols) {
                sum += lib.theta(i, c) * xi[c];
                norm2 += lib.theta(i, c) * lib.theta(i, c);
            }
            REQUIRE(sum <= -eps + 1e-4 * std::sqrt(norm2));
        }
    }
}

TEST_CASE("lambda sweep on ten snapshots shows the selection plateau") {
    forward::CaseDataOptions o;
    o.snapshots = 10;
    const auto& series = testsupport::shared_series(1, o);
    auto terms = library::standard_library(library::LibraryMode::continuous, {-2, -1, 0, 1, 2},
                                           dmd::RateDependence::independent);
    auto lib = library::build_library(series, terms);
    Eigen::VectorXd nd = library::assemble_ndot(series);
    ConstraintSet cs = build_constraints(lib);
    REQUIRE_THAT(dense_fit_max_xi(lib.theta, nd), WithinAbs(6.6723, 1e-3));

    Eigen::VectorXd xt = true_xi(lib, 1);
    std::vector<SparseSolution> sols;
    for (double lam : default_lambda_grid()) sols.push_back(cb_stls(lib.theta, nd, lam, cs));
    REQUIRE(sols.size() == 10);
    REQUIRE(sols.front().support.size() == 12);  // under-thresholded dense tail
    for (std::size_t k = 1; k + 1 < sols.size(); ++k) {
        REQUIRE(sols[k].support.size() == 2);
        double ec = (xt - sols[k].xi).norm() / xt.norm();
        REQUIRE_THAT(ec, WithinAbs(0.0400, 1e-3));
    }
    REQUIRE(sols.back().support.size() == 1);  // lambda 1.0 amputates the death term
    REQUIRE(threshold_ordering_log(sols).empty());
}

TEST_CASE("threshold ordering violations are reported, not hidden") {
    SparseSolution lo, hi;
    lo.lambda = 0.1;
    lo.support = {1};
    hi.lambda = 0.2;
    hi.support = {0};
    auto log = threshold_ordering_log({lo, hi});
    REQUIRE(log.size() == 1);
    REQUIRE(log[0].find("0.2") != std::string::npos);
    hi.converged = false;  // non-converged runs are exempt
    REQUIRE(threshold_ordering_log({lo, hi}).empty());
    hi.converged = true;
    hi.support = {1};  // nested supports are clean
    REQUIRE(threshold_ordering_log({lo, hi}).empty());
}

TEST_CASE("the active set never grows across thresholding sweeps") {
    forward::CaseDataOptions o;
    o.snapshots = 10;
    const auto& series = testsupport::shared_series(1, o);
    auto terms = library::standard_library(library::LibraryMode::continuous, {-2, -1, 0, 1, 2},
                                           dmd::RateDependence::independent);
    auto lib = library::build_library(series, terms);
    Eigen::VectorXd nd = library::assemble_ndot(series);
    ConstraintSet cs = build_constraints(lib);

    std::vector<std::vector<int>> supports;
    for (int cap : {1, 2, 3}) {
        StlsOptions so;
        so.max_sweeps = cap;
        supports.push_back(cb_stls(lib.theta, nd, 0.2, cs, so).support);
    }
    for (std::size_t k = 0; k + 1 < supports.size(); ++k)
        REQUIRE(std::includes(supports[k].begin(), supports[k].end(), supports[k + 1].begin(),
                              supports[k + 1].end()));
}

TEST_CASE("regression input validation") {
    Eigen::MatrixXd theta = Eigen::MatrixXd::Ones(4, 2);
    Eigen::VectorXd nd = Eigen::VectorXd::Ones(4);
    REQUIRE_THROWS_AS(cb_stls(theta, nd, 0.0, ConstraintSet{}), std::invalid_argument);
    Eigen::VectorXd wrong = Eigen::VectorXd::Ones(3);
    REQUIRE_THROWS_AS(constrained_lsq(theta, wrong, ConstraintSet{}), std::invalid_argument);
    ConstraintSet bad;
    bad.data_rows = {0};
    bad.birth_row = {};  // misaligned markers
    bad.death_row = {1};
    REQUIRE_THROWS_AS(constrained_lsq(theta, nd, bad), std::invalid_argument);
}

#pragma once

// Structure-aware model scoring and selection, plus the recovery metrics
// used to evaluate identified models against a known truth.
//
// cost(xi) = w1 * ln ||ndot - Theta xi||^2  +  w2 * ||xi||_0
//            + w3 * [birth support empty or death support empty]

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"
#include "library.hpp"

namespace mpbeid::metrics {

struct CostWeights {
    double lambda1 = 1.0;
    double lambda2 = 10.0;
    double lambda3 = 1000.0;
};

struct ModelScore {
    double rss = 0.0;             // squared residual norm over the scored rows
    double fit_term = 0.0;        // lambda1 * ln(rss)
    double sparsity_term = 0.0;   // lambda2 * nnz
    double structure_term = 0.0;  // lambda3 when one-sided
    double total = 0.0;
    int nnz = 0;
    bool valid = false;  // both birth and death terms present
    // filled in by callers that know the ground truth
    std::optional<double> success_rate;
    std::optional<double> e_c;
};

// Scores a candidate model on the full dataset, or on a row subset when
// `rows` is nonempty (holdout scoring).  All-zero models have no defined
// cost and are rejected.
inline ModelScore model_cost(const Eigen::VectorXd& xi, const Eigen::MatrixXd& theta,
                             const Eigen::VectorXd& ndot, const std::vector<int>& birth_cols,
                             const std::vector<int>& death_cols, const CostWeights& w = {},
                             const std::vector<Eigen::Index>& rows = {}) {
    check(xi.size() == theta.cols(), "model_cost: xi length does not match library width");
    check(theta.rows() == ndot.size(), "model_cost: row mismatch between library and ndot");

    ModelScore s;
    for (Eigen::Index k = 0; k < xi.size(); ++k)
        if (xi[k] != 0.0) ++s.nnz;
    check(s.nnz > 0, "model_cost: all-zero model has no defined cost");

    if (rows.empty()) {
        s.rss = (theta * xi - ndot).squaredNorm();
    } else {
        double acc = 0.0;
        for (Eigen::Index r : rows) {
            check(r >= 0 && r < theta.rows(), "model_cost: row index out of range");
            double res = theta.row(r).dot(xi) - ndot[r];
            acc += res * res;
        }
        s.rss = acc;
    }

    int nnz_birth = 0, nnz_death = 0;
    for (int c : birth_cols)
        if (xi[c] != 0.0) ++nnz_birth;
    for (int c : death_cols)
        if (xi[c] != 0.0) ++nnz_death;
    s.valid = nnz_birth > 0 && nnz_death > 0;

    s.fit_term = w.lambda1 * std::log(std::max(s.rss, std::numeric_limits<double>::min()));
    s.sparsity_term = w.lambda2 * double(s.nnz);
    s.structure_term = s.valid ? 0.0 : w.lambda3;
    s.total = s.fit_term + s.sparsity_term + s.structure_term;
    return s;
}

inline ModelScore model_cost(const Eigen::VectorXd& xi, const library::CandidateLibrary& lib,
                             const Eigen::VectorXd& ndot, const CostWeights& w = {},
                             const std::vector<Eigen::Index>& rows = {}) {
    return model_cost(xi, lib.theta, ndot, lib.birth_columns, lib.death_columns, w, rows);
}

// E_c = ||xi_true - xi|| / ||xi_true||
inline double coefficient_error(const Eigen::VectorXd& xi_true, const Eigen::VectorXd& xi) {
    check(xi_true.size() == xi.size(), "coefficient_error: length mismatch");
    double denom = xi_true.norm();
    check(denom > 0.0, "coefficient_error: true coefficient vector is all zero");
    return (xi_true - xi).norm() / denom;
}

// Percent of library terms classified correctly (active vs inactive).
inline double success_rate(const std::vector<int>& true_support,
                           const std::vector<int>& found_support, int library_size) {
    check(library_size > 0, "success_rate: library size must be positive");
    std::vector<char> truth(std::size_t(library_size), 0), found(std::size_t(library_size), 0);
    for (int c : true_support) {
        check(c >= 0 && c < library_size, "success_rate: true support index out of range");
        truth[std::size_t(c)] = 1;
    }
    for (int c : found_support) {
        check(c >= 0 && c < library_size, "success_rate: found support index out of range");
        found[std::size_t(c)] = 1;
    }
    int correct = 0;
    for (int k = 0; k < library_size; ++k)
        if (truth[std::size_t(k)] == found[std::size_t(k)]) ++correct;
    return 100.0 * double(correct) / double(library_size);
}

struct NoModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ModelCandidate {
    double lambda = 0.0;
    Eigen::VectorXd xi;
};

struct Selection {
    std::size_t index = 0;  // position in the candidate pool
    double lambda = 0.0;
    Eigen::VectorXd xi;
    ModelScore score;
};

// Scores every non-degenerate candidate and returns the cost minimizer.
// Ties break toward fewer active terms, then toward smaller lambda.
inline Selection select_model(const std::vector<ModelCandidate>& pool,
                              const Eigen::MatrixXd& theta, const Eigen::VectorXd& ndot,
                              const std::vector<int>& birth_cols,
                              const std::vector<int>& death_cols, const CostWeights& w = {},
                              const std::vector<Eigen::Index>& rows = {}) {
    check(!pool.empty(), "select_model: empty candidate pool");
    bool have = false;
    Selection best;
    std::size_t skipped = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& cand = pool[i];
        check(cand.xi.size() == theta.cols(),
              "select_model: candidate xi length does not match library width");
        if (cand.xi.isZero(0.0)) {
            ++skipped;
            continue;
        }
        ModelScore s = model_cost(cand.xi, theta, ndot, birth_cols, death_cols, w, rows);
        bool better = !have || s.total < best.score.total ||
                      (s.total == best.score.total &&
                       (s.nnz < best.score.nnz ||
                        (s.nnz == best.score.nnz && cand.lambda < best.lambda)));
        if (better) {
            best.index = i;
            best.lambda = cand.lambda;
            best.xi = cand.xi;
            best.score = s;
            have = true;
        }
    }
    if (!have)
        throw NoModelError(strfmt(
            "select_model: every candidate in the pool of %zu is all-zero "
            "(%zu skipped); no model survives thresholding",
            pool.size(), skipped));
    return best;
}

inline Selection select_model(const std::vector<ModelCandidate>& pool,
                              const library::CandidateLibrary& lib, const Eigen::VectorXd& ndot,
                              const CostWeights& w = {},
                              const std::vector<Eigen::Index>& rows = {}) {
    return select_model(pool, lib.theta, ndot, lib.birth_columns, lib.death_columns, w, rows);
}

}  // namespace mpbeid::metrics

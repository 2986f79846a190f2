#pragma once

// Bootstrap ensembling of cb-STLS solutions.  Each replicate resamples the
// regression rows with replacement, rebuilds its constraint set on the
// resampled rows, and solves; the ensemble is aggregated by mean (bagging)
// or median (bragging) with inclusion-probability and coefficient-of-
// variation thresholding.
//
// Replicate RNG streams derive from (master_seed, replicate index), so the
// member list is identical for any worker count or execution order.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "common.hpp"
#include "library.hpp"
#include "regression.hpp"

namespace mpbeid::ensemble {

enum class AggregateMode { bagging, bragging };

inline std::string to_string(AggregateMode m) {
    return m == AggregateMode::bagging ? "bagging" : "bragging";
}
inline AggregateMode aggregate_mode_from_string(const std::string& s) {
    if (s == "bagging") return AggregateMode::bagging;
    if (s == "bragging") return AggregateMode::bragging;
    fail("unknown aggregate mode '" + s + "' (expected bagging or bragging)");
}

struct BootstrapOptions {
    int replicates = 100;
    std::uint64_t master_seed = 0;
    bool resample = true;  // false: identity bootstrap, every replicate sees the original rows
    regression::ConstraintOptions constraints;
    regression::StlsOptions solver;
    std::size_t max_threads = 0;  // 0 = hardware concurrency
};

inline std::vector<regression::SparseSolution> bootstrap_fit(
    const Eigen::MatrixXd& theta, const Eigen::VectorXd& ndot, double lambda,
    const std::vector<int>& birth_cols, const std::vector<int>& death_cols,
    const BootstrapOptions& opts = {}) {
    check(opts.replicates >= 1, "bootstrap_fit: need at least one replicate");
    check(theta.rows() == ndot.size(), "bootstrap_fit: row mismatch between library and ndot");
    const Eigen::Index n = theta.rows();

    std::vector<regression::SparseSolution> members(std::size_t(opts.replicates));
    parallel_for(
        std::size_t(opts.replicates),
        [&](std::size_t r) {
            const std::uint64_t stream = derive_stream(opts.master_seed, r);
            Eigen::MatrixXd th;
            Eigen::VectorXd nd;
            if (opts.resample) {
                Rng rng(derive_stream(stream, 0));
                th.resize(n, theta.cols());
                nd.resize(n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    auto pick = Eigen::Index(rng.uniform_index(std::uint64_t(n)));
                    th.row(i) = theta.row(pick);
                    nd[i] = ndot[pick];
                }
            } else {
                th = theta;
                nd = ndot;
            }
            regression::ConstraintOptions co = opts.constraints;
            if (opts.resample) co.seed = derive_stream(stream, 1);
            regression::SparseSolution sol;
            try {
                auto cs = regression::build_constraints(th, birth_cols, death_cols, co);
                sol = regression::cb_stls(th, nd, lambda, cs, opts.solver);
            } catch (const std::runtime_error&) {
                // an infeasible or unfittable resample becomes a flagged
                // all-zero member rather than failing the run
                sol.xi = Eigen::VectorXd::Zero(theta.cols());
                sol.lambda = lambda;
                sol.empty_support = true;
                sol.converged = false;
                sol.residual_norm = nd.norm();
            }
            members[r] = std::move(sol);
        },
        opts.max_threads);
    return members;
}

inline std::vector<regression::SparseSolution> bootstrap_fit(
    const library::CandidateLibrary& lib, const Eigen::VectorXd& ndot, double lambda,
    const BootstrapOptions& opts = {}) {
    return bootstrap_fit(lib.theta, ndot, lambda, lib.birth_columns, lib.death_columns, opts);
}

struct EnsembleResult {
    std::vector<regression::SparseSolution> members;
    Eigen::VectorXd inclusion_probability;      // fraction of members with the term active
    Eigen::VectorXd coefficient_of_variation;   // sample std / |mean| over nonzero members
    Eigen::VectorXd aggregate;                  // thresholded mean or median over all members
    AggregateMode mode = AggregateMode::bagging;
    int replicates = 0;
    std::uint64_t master_seed = 0;
    double ip_min = 0.65;
    double cov_max = 1.0;
};

// Aggregates the member pool.  The mean/median runs over ALL members (zeros
// included); the coefficient of variation is computed over the nonzero
// members only (0 when no member is nonzero), so inclusion probability and
// CoV capture distinct failure modes.  A term survives iff IP >= ip_min and
// CoV <= cov_max.
inline EnsembleResult aggregate(std::vector<regression::SparseSolution> members,
                                AggregateMode mode, double ip_min = 0.65, double cov_max = 1.0,
                                std::uint64_t master_seed = 0) {
    check(!members.empty(), "aggregate: empty member list");
    const Eigen::Index nterms = members.front().xi.size();
    for (const auto& m : members)
        check(m.xi.size() == nterms, "aggregate: members disagree on library size");
    check(ip_min >= 0.0 && ip_min <= 1.0, "aggregate: ip_min must lie in [0, 1]");
    check(cov_max >= 0.0, "aggregate: cov_max must be nonnegative");

    EnsembleResult out;
    out.mode = mode;
    out.replicates = int(members.size());
    out.master_seed = master_seed;
    out.ip_min = ip_min;
    out.cov_max = cov_max;
    out.inclusion_probability = Eigen::VectorXd::Zero(nterms);
    out.coefficient_of_variation = Eigen::VectorXd::Zero(nterms);
    out.aggregate = Eigen::VectorXd::Zero(nterms);

    const double m = double(members.size());
    std::vector<double> values(members.size());
    for (Eigen::Index k = 0; k < nterms; ++k) {
        std::size_t nonzero = 0;
        double sum = 0.0, nzsum = 0.0;
        for (std::size_t r = 0; r < members.size(); ++r) {
            double v = members[r].xi[k];
            values[r] = v;
            sum += v;
            if (v != 0.0) {
                ++nonzero;
                nzsum += v;
            }
        }
        double ip = double(nonzero) / m;
        out.inclusion_probability[k] = ip;

        double cov = 0.0;
        if (nonzero > 0) {
            double nzmean = nzsum / double(nonzero);
            double ss = 0.0;
            for (double v : values)
                if (v != 0.0) ss += (v - nzmean) * (v - nzmean);
            double sd = nonzero > 1 ? std::sqrt(ss / double(nonzero - 1)) : 0.0;
            cov = nzmean != 0.0 ? sd / std::abs(nzmean)
                                : (sd > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
        }
        out.coefficient_of_variation[k] = cov;

        if (ip < ip_min || cov > cov_max) continue;  // thresholded to zero
        if (mode == AggregateMode::bagging) {
            out.aggregate[k] = sum / m;
        } else {
            std::vector<double> sorted(values);
            std::sort(sorted.begin(), sorted.end());
            std::size_t mid = sorted.size() / 2;
            out.aggregate[k] = sorted.size() % 2 == 1
                                   ? sorted[mid]
                                   : 0.5 * (sorted[mid - 1] + sorted[mid]);
        }
    }
    out.members = std::move(members);
    return out;
}

}  // namespace mpbeid::ensemble

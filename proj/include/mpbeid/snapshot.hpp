#pragma once

// Transient number-density snapshots on a fixed 2D pivot grid, plus the
// elementary transformations applied before identification: seeded Gaussian
// corruption, index-uniform time subsampling, and mixed moments.

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "mpbeid/common.hpp"
#include "mpbeid/grid.hpp"

namespace mpbeid::griddata {

struct SeriesMeta {
    int case_id = 0;  // 0 = custom kernel
    std::uint64_t seed = 0;
    double noise_level = 0.0;
    std::string config_hash;  // hex fingerprint of the generating config
};

struct SnapshotSeries {
    Grid2D grid;
    std::vector<double> times;
    // frames[k](i, j) = n(v_i, w_j, t_k)
    std::vector<Eigen::MatrixXd> frames;
    SeriesMeta meta;

    std::size_t nv() const { return grid.nv(); }
    std::size_t nw() const { return grid.nw(); }
    std::size_t nt() const { return times.size(); }

    void validate() const {
        check(times.size() == frames.size(),
              "SnapshotSeries: times/frames length mismatch");
        check(!times.empty(), "SnapshotSeries: empty series");
        for (std::size_t k = 0; k + 1 < times.size(); ++k)
            check(times[k] < times[k + 1],
                  "SnapshotSeries: times must be strictly increasing");
        for (const auto& f : frames)
            check(f.rows() == (Eigen::Index)grid.nv() &&
                      f.cols() == (Eigen::Index)grid.nw(),
                  "SnapshotSeries: frame shape does not match grid");
    }

    bool uniform_dt(double rel_tol = 1e-9) const {
        if (times.size() < 2) return true;
        double dt0 = times[1] - times[0];
        for (std::size_t k = 1; k + 1 < times.size(); ++k)
            if (std::abs((times[k + 1] - times[k]) - dt0) > rel_tol * std::abs(dt0))
                return false;
        return true;
    }

    // the uniform step; errors on non-uniform spacing
    double dt() const {
        check(times.size() >= 2, "SnapshotSeries::dt: need at least two times");
        check(uniform_dt(), "SnapshotSeries::dt: time spacing is not uniform");
        return times[1] - times[0];
    }
};

// Population standard deviation over every cell of every frame.
inline double tensor_std(const SnapshotSeries& s) {
    double sum = 0.0, n = 0.0;
    for (const auto& f : s.frames) {
        sum += f.sum();
        n += double(f.size());
    }
    double mean = sum / n;
    double ss = 0.0;
    for (const auto& f : s.frames)
        ss += (f.array() - mean).square().sum();
    return std::sqrt(ss / n);
}

// Adds i.i.d. Gaussian noise with sigma = level * tensor_std(clean).
// Deterministic for a fixed seed; level 0 returns the input unchanged.
inline SnapshotSeries add_noise(const SnapshotSeries& clean, double level,
                                std::uint64_t seed) {
    check(level >= 0.0, "add_noise: level must be nonnegative");
    SnapshotSeries out = clean;
    out.meta.noise_level = level;
    out.meta.seed = seed;
    if (level == 0.0) return out;
    double sigma = level * tensor_std(clean);
    Rng rng(seed);
    for (auto& f : out.frames)
        for (Eigen::Index i = 0; i < f.rows(); ++i)
            for (Eigen::Index j = 0; j < f.cols(); ++j)
                f(i, j) += sigma * rng.normal();
    return out;
}

// Keeps k snapshots uniformly spaced by index, endpoints included.
inline SnapshotSeries subsample_time(const SnapshotSeries& s, std::size_t k) {
    std::size_t z = s.nt();
    check(k >= 2, "subsample_time: need at least 2 snapshots");
    check(k <= z, "subsample_time: cannot subsample beyond series length");
    SnapshotSeries out;
    out.grid = s.grid;
    out.meta = s.meta;
    out.times.reserve(k);
    out.frames.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t idx = (k == 1) ? 0
                                   : std::size_t(std::llround(
                                         double(i) * double(z - 1) / double(k - 1)));
        out.times.push_back(s.times[idx]);
        out.frames.push_back(s.frames[idx]);
    }
    return out;
}

// Mixed moment M_pq(t_k) = sum_ij v_i^p w_j^q n_ijk Wv_i Ww_j.
inline std::vector<double> moment(const SnapshotSeries& s, double p, double q) {
    std::size_t x = s.nv(), y = s.nw();
    std::vector<double> vp(x), wq(y);
    for (std::size_t i = 0; i < x; ++i)
        vp[i] = std::pow(s.grid.v[i], p) * s.grid.quad_v[i];
    for (std::size_t j = 0; j < y; ++j)
        wq[j] = std::pow(s.grid.w[j], q) * s.grid.quad_w[j];
    std::vector<double> out(s.nt(), 0.0);
    for (std::size_t k = 0; k < s.nt(); ++k) {
        double acc = 0.0;
        const auto& f = s.frames[k];
        for (std::size_t i = 0; i < x; ++i)
            for (std::size_t j = 0; j < y; ++j)
                acc += vp[i] * wq[j] * f(i, j);
        out[k] = acc;
    }
    return out;
}

}  // namespace mpbeid::griddata

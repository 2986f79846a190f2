// Exact dynamic mode decomposition of snapshot series plus the spectral
// diagnostics that drive library construction advice.
//
// The decomposition follows the standard exact-DMD recipe: thin SVD of the
// left snapshot block, rank-s projection, eigendecomposition of the small
// operator, modes lifted through the right block.  Diagnostics summarize the
// spectrum (radii, growth/decay, dispersion of the excited radii) and where
// each mode's energy lives on the grid (top-edge band, log-diagonal band).
// Classification thresholds are configuration values; reports always include
// the raw per-mode numbers so a human can overrule the advice.
#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mpbeid/common.hpp"
#include "mpbeid/grid.hpp"
#include "mpbeid/io.hpp"
#include "mpbeid/snapshot.hpp"

namespace mpbeid::dmd {

using griddata::Grid2D;
using griddata::SnapshotSeries;

struct DmdOptions {
    // requested rank; <= 0 selects the smallest rank reaching energy_target
    int rank = 10;
    double energy_target = 0.99;
    // fit amplitudes jointly to every snapshot (default) or to the first
    // frame only.  The first frame of a breakage cascade can carry a
    // vanishing share of the window energy (a monodisperse spike is ~1e-10
    // of a five-unit growth window), which makes a first-frame fit useless
    // for reconstruction; the joint fit is the standard optimized-amplitude
    // variant.
    bool joint_amplitudes = true;
};

struct DMDResult {
    Eigen::MatrixXcd modes;           // xy rows, one column per mode
    Eigen::VectorXcd discrete_eigs;   // step-map eigenvalues
    Eigen::VectorXcd continuous_eigs; // log(eig)/dt
    Eigen::VectorXcd amplitudes;      // least-squares fit to the first frame
    int rank = 0;
    double energy_fraction = 0.0;
    double dt = 0.0;
    double t0 = 0.0;
    int window = 0;  // snapshot count the decomposition covered
    bool rank_clipped = false;  // requested rank exceeded the numerical rank
};

inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd>
snapshot_matrices(const SnapshotSeries& series) {
    series.validate();
    const std::size_t z = series.times.size();
    check(z >= 2, "snapshot_matrices: need at least two snapshots");
    check(series.uniform_dt(),
          "snapshot_matrices: non-uniform time spacing; resample upstream");
    const std::size_t xy = series.grid.nv() * series.grid.nw();
    Eigen::MatrixXd X(xy, z - 1), Xp(xy, z - 1);
    // row-major flatten: entry (i, j) lands at i*nw + j, matching the
    // operator and library row conventions
    for (std::size_t k = 0; k + 1 < z; ++k) {
        X.col(k) = series.frames[k].transpose().reshaped();
        Xp.col(k) = series.frames[k + 1].transpose().reshaped();
    }
    return {std::move(X), std::move(Xp)};
}

inline DMDResult compute_dmd(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Xp,
                             double dt, double t0, DmdOptions opts = {}) {
    check(X.rows() == Xp.rows() && X.cols() == Xp.cols(),
          "compute_dmd: snapshot blocks must have identical shape");
    check(X.cols() >= 1, "compute_dmd: empty snapshot blocks");
    check(dt > 0.0, "compute_dmd: dt must be positive");

    Eigen::BDCSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd& sv = svd.singularValues();
    const double cutoff =
        sv.size() ? sv(0) * std::max(X.rows(), X.cols()) *
                        std::numeric_limits<double>::epsilon()
                  : 0.0;
    int numerical_rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) ++numerical_rank;
    check(numerical_rank >= 1, "compute_dmd: snapshot matrix is numerically zero");

    const double total_energy = sv.squaredNorm();
    int s;
    if (opts.rank > 0) {
        s = opts.rank;
    } else {
        double acc = 0.0;
        s = numerical_rank;
        for (int i = 0; i < numerical_rank; ++i) {
            acc += sv(i) * sv(i);
            if (acc >= opts.energy_target * total_energy) {
                s = i + 1;
                break;
            }
        }
    }
    DMDResult out;
    out.rank_clipped = s > numerical_rank;
    s = std::min(s, numerical_rank);

    Eigen::MatrixXd U = svd.matrixU().leftCols(s);
    Eigen::MatrixXd V = svd.matrixV().leftCols(s);
    Eigen::VectorXd sig = sv.head(s);
    Eigen::MatrixXd XpVS = Xp * V * sig.cwiseInverse().asDiagonal();
    Eigen::MatrixXd Atilde = U.transpose() * XpVS;

    Eigen::ComplexEigenSolver<Eigen::MatrixXd> eig(Atilde);
    check(eig.info() == Eigen::Success, "compute_dmd: eigensolver failed");

    out.discrete_eigs = eig.eigenvalues();
    out.modes = XpVS * eig.eigenvectors();
    out.continuous_eigs.resize(s);
    for (int j = 0; j < s; ++j)
        out.continuous_eigs(j) = std::log(out.discrete_eigs(j)) / dt;

    if (opts.joint_amplitudes) {
        // minimize sum_k |Phi diag(lambda^k) b - x_k|^2 via the Hermitian
        // normal equations G b = rhs with G = (Phi^H Phi) o (sum_k pw_k^* pw_k^T)
        const long z = X.cols() + 1;
        Eigen::MatrixXcd C = out.modes.adjoint() * out.modes;
        Eigen::MatrixXcd S = Eigen::MatrixXcd::Zero(s, s);
        Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(s);
        Eigen::VectorXcd pw = Eigen::VectorXcd::Ones(s);
        for (long k = 0; k < z; ++k) {
            Eigen::VectorXcd frame =
                (k < z - 1 ? X.col(k) : Xp.col(z - 2)).cast<std::complex<double>>();
            rhs += pw.conjugate().asDiagonal() * (out.modes.adjoint() * frame);
            S += pw.conjugate() * pw.transpose();
            pw = pw.cwiseProduct(out.discrete_eigs);
        }
        Eigen::MatrixXcd G = C.cwiseProduct(S);
        G.diagonal().array() += 1e-14 * G.diagonal().real().maxCoeff();
        out.amplitudes = G.ldlt().solve(rhs);
        check(out.amplitudes.allFinite(), "compute_dmd: amplitude fit failed");
    } else {
        out.amplitudes = out.modes.completeOrthogonalDecomposition().solve(
            X.col(0).cast<std::complex<double>>().eval());
    }
    out.rank = s;
    out.energy_fraction = sig.squaredNorm() / total_energy;
    out.dt = dt;
    out.t0 = t0;
    out.window = int(X.cols()) + 1;
    return out;
}

inline DMDResult compute_dmd(const SnapshotSeries& series, DmdOptions opts = {}) {
    auto [X, Xp] = snapshot_matrices(series);
    return compute_dmd(X, Xp, series.dt(), series.times.front(), opts);
}

// real part of the modal sum at time t; the imaginary residue must be
// negligible for real input data and is checked here
inline Eigen::VectorXd reconstruct(const DMDResult& r, double t) {
    Eigen::VectorXcd acc = Eigen::VectorXcd::Zero(r.modes.rows());
    double scale = 0.0;  // summand magnitude, the right yardstick when the
                         // modal sum cancels (early times of a growth window)
    for (int j = 0; j < r.rank; ++j) {
        std::complex<double> gain =
            std::exp(r.continuous_eigs(j) * (t - r.t0)) * r.amplitudes(j);
        acc += r.modes.col(j) * gain;
        scale = std::max(scale, std::abs(gain) * r.modes.col(j).cwiseAbs().maxCoeff());
    }
    if (scale > 0.0)
        check(acc.imag().cwiseAbs().maxCoeff() <= 1e-8 * scale,
              "reconstruct: non-negligible imaginary residue; input data was "
              "not real or modes were truncated inconsistently");
    return acc.real();
}

// Re[exp(Omega_j t)] traces, one row per mode.  Negative amplitudes pair
// with negative traces to make positive contributions, so traces are
// reported raw and unsigned by design.
inline Eigen::MatrixXd continuous_time_dynamics(const DMDResult& r,
                                                const std::vector<double>& t_grid) {
    Eigen::MatrixXd out(r.rank, t_grid.size());
    for (int j = 0; j < r.rank; ++j)
        for (std::size_t k = 0; k < t_grid.size(); ++k)
            out(j, k) = std::exp(r.continuous_eigs(j) * t_grid[k]).real();
    return out;
}

enum class RateDependence { independent, dependent };
enum class ContinuityHint { continuous, semi_continuous_candidate, product_delta_candidate };

inline std::string to_string(RateDependence r) {
    return r == RateDependence::independent ? "independent" : "dependent";
}
inline std::string to_string(ContinuityHint h) {
    switch (h) {
        case ContinuityHint::continuous: return "continuous";
        case ContinuityHint::semi_continuous_candidate: return "semi-continuous-candidate";
        default: return "product-delta-candidate";
    }
}

struct DiagnosticsOptions {
    double amp_floor = 1e-6;            // fraction of the largest mode weight
    double dispersion_threshold = 0.3;  // below: rate reads size-independent
    double band_factor = 4.5;           // log-diagonal halfwidth in units of half log-steps
    double dominance = 0.5;             // localization fraction that triggers a hint
    double data_floor = 1e-4;           // cell RMS below this fraction of the
                                        // peak cell is ignored by band metrics
};

struct ModeLocalization {
    double edge_energy_fraction = 0.0;          // raw mode energy on the top row/column
    double log_diagonal_energy_fraction = 0.0;  // data-whitened energy in the |ln v - ln w| band
};

struct SpectralDiagnostics {
    std::vector<int> retained;  // mode indices surviving the amplitude floor
    std::vector<double> radii;  // per retained mode
    std::vector<double> weights; // excited energy over the sampled window
    double radii_dispersion = 0.0;
    int growth_count = 0;
    int decay_count = 0;
    RateDependence size_dependence_flag = RateDependence::dependent;
    std::vector<ModeLocalization> mode_localization;  // per retained mode
    double edge_fraction = 0.0;      // max over retained modes
    double diagonal_fraction = 0.0;  // min over retained modes
    ContinuityHint continuity_hint = ContinuityHint::continuous;
    DiagnosticsOptions options;
};

namespace detail {

// Mode weight: how much of the sampled window the mode accounts for.
// |b| alone reflects only the first frame; growing modes dominate later
// frames, so the geometric sum of the radius over the window is folded in.
inline double mode_weight(const DMDResult& r, int j) {
    double radius = std::abs(r.discrete_eigs(j));
    double energy = 0.0, rp = 1.0;
    for (int k = 0; k < std::max(r.window, 2); ++k) {
        energy += rp * rp;
        rp *= radius;
        if (!std::isfinite(rp)) return std::numeric_limits<double>::infinity();
    }
    return std::abs(r.amplitudes(j)) * r.modes.col(j).norm() * std::sqrt(energy);
}

}  // namespace detail

inline SpectralDiagnostics spectral_diagnostics(const DMDResult& r, const Grid2D& grid,
                                                DiagnosticsOptions opts = {}) {
    check(opts.amp_floor >= 0.0 && opts.amp_floor < 1.0,
          "spectral_diagnostics: amp_floor must lie in [0, 1)");
    const std::size_t x = grid.nv(), y = grid.nw();
    check(long(x * y) == r.modes.rows(),
          "spectral_diagnostics: grid does not match the mode dimension");

    std::vector<double> weights(r.rank);
    double wmax = 0.0;
    for (int j = 0; j < r.rank; ++j) {
        weights[j] = detail::mode_weight(r, j);
        wmax = std::max(wmax, weights[j]);
    }
    check(wmax > 0.0, "spectral_diagnostics: all mode amplitudes vanish");

    SpectralDiagnostics d;
    d.options = opts;
    for (int j = 0; j < r.rank; ++j)
        if (weights[j] >= opts.amp_floor * wmax) d.retained.push_back(j);
    check(!d.retained.empty(), "spectral_diagnostics: amplitude floor removed every mode");

    // dispersion over the retained radii, each counted once: the amplitude
    // floor decides relevance, after which every surviving time scale is
    // evidence about rate structure.  Excitation-weighted dispersion lets a
    // single dominant growth mode mask a size-dependent spectrum.
    double mean = 0.0;
    for (int j : d.retained) {
        double radius = std::abs(r.discrete_eigs(j));
        d.radii.push_back(radius);
        d.weights.push_back(weights[j]);
        mean += radius;
        if (radius > 1.0) ++d.growth_count;
        else if (radius < 1.0) ++d.decay_count;
    }
    mean /= double(d.radii.size());
    double var = 0.0;
    for (double radius : d.radii) var += (radius - mean) * (radius - mean);
    var /= double(d.radii.size());
    d.radii_dispersion = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
    d.size_dependence_flag = d.radii_dispersion < opts.dispersion_threshold
                                 ? RateDependence::independent
                                 : RateDependence::dependent;

    // Band metrics only count cells the data actually visits.  The visited
    // set is the union of the reconstructed frame SHAPES (each frame
    // normalized before accumulating): breakage cascades grow by orders of
    // magnitude, and without the normalization the mask collapses onto the
    // late-time fines pileup, erasing the mid-size structure the hint needs.
    Eigen::VectorXd rms = Eigen::VectorXd::Zero(r.modes.rows());
    {
        Eigen::VectorXcd pw = Eigen::VectorXcd::Ones(r.rank);
        for (int k = 0; k < std::max(r.window, 2); ++k) {
            Eigen::VectorXd frame = (r.modes * pw.cwiseProduct(r.amplitudes)).real();
            double n2 = frame.squaredNorm();
            if (n2 > 0.0) rms += frame.cwiseAbs2() / n2;
            pw = pw.cwiseProduct(r.discrete_eigs);
        }
        rms = rms.cwiseSqrt();
    }
    const double mask_cut = opts.data_floor * rms.maxCoeff();

    // The two bands use different energies and different aggregation because
    // they detect different structure.  Edge concentration (daughters that
    // inherit one parent coordinate) rides on a few transient modes, so it
    // uses raw |phi|^2 and the MAX over retained modes.  Log-diagonal
    // confinement is a property of the whole spectrum: a kernel that only
    // couples cells of equal log-offset (v' -> v'/2 style) has a generator
    // that is block-diagonal along the band, so EVERY eigenvector stays in
    // it, while any continuous kernel spreads its dominant modes off band.
    // Hence the diagonal test whitens each cell by the local data RMS (the
    // fines pileup at the small-size corner sits on the band and would
    // otherwise dominate every cascade's late modes) and takes the MIN.
    const double half_step = 0.5 * std::min(grid.v.log_step(), grid.w.log_step());
    bool first = true;
    for (int j : d.retained) {
        ModeLocalization loc;
        double total_raw = 0.0, edge_raw = 0.0, total_whi = 0.0, diag_whi = 0.0;
        for (std::size_t i = 0; i < x; ++i)
            for (std::size_t jj = 0; jj < y; ++jj) {
                double cell_rms = rms(long(i * y + jj));
                if (cell_rms < mask_cut) continue;
                double raw = std::norm(r.modes(long(i * y + jj), j));
                double whi = raw / (cell_rms * cell_rms);
                total_raw += raw;
                total_whi += whi;
                if (i == x - 1 || jj == y - 1) edge_raw += raw;
                if (!(i == x - 1 && jj == y - 1) &&
                    std::abs(std::log(grid.v[i]) - std::log(grid.w[jj])) <=
                        opts.band_factor * half_step)
                    diag_whi += whi;
            }
        if (total_raw > 0.0) loc.edge_energy_fraction = edge_raw / total_raw;
        if (total_whi > 0.0) loc.log_diagonal_energy_fraction = diag_whi / total_whi;
        d.mode_localization.push_back(loc);
        d.edge_fraction = std::max(d.edge_fraction, loc.edge_energy_fraction);
        d.diagonal_fraction = first ? loc.log_diagonal_energy_fraction
                                    : std::min(d.diagonal_fraction,
                                               loc.log_diagonal_energy_fraction);
        first = false;
    }

    if (d.diagonal_fraction > opts.dominance)
        d.continuity_hint = ContinuityHint::product_delta_candidate;
    else if (d.edge_fraction > opts.dominance)
        d.continuity_hint = ContinuityHint::semi_continuous_candidate;
    else
        d.continuity_hint = ContinuityHint::continuous;
    return d;
}

struct LibraryAdvice {
    RateDependence rate = RateDependence::dependent;
    ContinuityHint continuity = ContinuityHint::continuous;
};

inline LibraryAdvice advise(const SpectralDiagnostics& d) {
    return {d.size_dependence_flag, d.continuity_hint};
}

inline nlohmann::json advice_to_json(const SpectralDiagnostics& d) {
    nlohmann::json j;
    j["rate"] = to_string(d.size_dependence_flag);
    j["continuity"] = to_string(d.continuity_hint);
    j["radii_dispersion"] = d.radii_dispersion;
    j["dispersion_threshold"] = d.options.dispersion_threshold;
    j["edge_fraction"] = d.edge_fraction;
    j["diagonal_fraction"] = d.diagonal_fraction;
    j["dominance_threshold"] = d.options.dominance;
    j["band_factor"] = d.options.band_factor;
    j["growth_count"] = d.growth_count;
    j["decay_count"] = d.decay_count;
    j["retained_modes"] = d.retained;
    return j;
}

inline LibraryAdvice advice_from_json(const nlohmann::json& j) {
    LibraryAdvice a;
    std::string rate = j.at("rate").get<std::string>();
    check(rate == "independent" || rate == "dependent",
          "advice: unknown rate classification '" + rate + "'");
    a.rate = rate == "independent" ? RateDependence::independent
                                   : RateDependence::dependent;
    std::string cont = j.at("continuity").get<std::string>();
    if (cont == "continuous") a.continuity = ContinuityHint::continuous;
    else if (cont == "semi-continuous-candidate")
        a.continuity = ContinuityHint::semi_continuous_candidate;
    else if (cont == "product-delta-candidate")
        a.continuity = ContinuityHint::product_delta_candidate;
    else fail("advice: unknown continuity hint '" + cont + "'");
    return a;
}

// writes mode_<j>.csv (real part, x rows by y columns), eigenvalues.csv,
// and dmd_advice.json into dir
inline void dmd_report(const DMDResult& r, const SpectralDiagnostics& d,
                       const Grid2D& grid, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::size_t x = grid.nv(), y = grid.nw();

    io::CsvWriter eig(dir + "/eigenvalues.csv");
    eig.header("mode,re_lambda,im_lambda,radius,re_omega,im_omega,"
               "amplitude,weight,retained");
    std::vector<bool> kept(r.rank, false);
    std::vector<double> weight(r.rank, 0.0);
    for (std::size_t k = 0; k < d.retained.size(); ++k) {
        kept[d.retained[k]] = true;
        weight[d.retained[k]] = d.weights[k];
    }
    for (int j = 0; j < r.rank; ++j)
        eig.row({double(j), r.discrete_eigs(j).real(), r.discrete_eigs(j).imag(),
                 std::abs(r.discrete_eigs(j)), r.continuous_eigs(j).real(),
                 r.continuous_eigs(j).imag(), std::abs(r.amplitudes(j)), weight[j],
                 kept[j] ? 1.0 : 0.0});

    for (int j = 0; j < r.rank; ++j) {
        io::CsvWriter mode(dir + strfmt("/mode_%d.csv", j));
        Eigen::MatrixXd field(x, y);
        for (std::size_t i = 0; i < x; ++i)
            for (std::size_t jj = 0; jj < y; ++jj)
                field(i, jj) = r.modes(long(i * y + jj), j).real();
        mode.matrix(field);
    }
    io::write_json_file(dir + "/dmd_advice.json", advice_to_json(d));
}

}  // namespace mpbeid::dmd

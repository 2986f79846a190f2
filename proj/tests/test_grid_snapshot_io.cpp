#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "mpbeid/grid.hpp"
#include "mpbeid/io.hpp"
#include "mpbeid/snapshot.hpp"

using namespace mpbeid;
using namespace mpbeid::griddata;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("mpbeid_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Grid2D benchmark_grid_25() {
    return make_grid2d(make_grid(0.1, 5.0, 25, Spacing::geometric_by_count),
                       make_grid(0.1, 5.0, 25, Spacing::geometric_by_count));
}

Grid2D benchmark_grid_ratio2() {
    return make_grid2d(
        make_grid(1e-4, 5.0, 15, Spacing::geometric_ratio_anchored, 2.0),
        make_grid(1e-4, 5.0, 15, Spacing::geometric_ratio_anchored, 2.0));
}

SnapshotSeries synthetic_series(std::size_t x, std::size_t y, std::size_t z) {
    SnapshotSeries s;
    s.grid = make_grid2d(make_grid(0.1, 5.0, x, Spacing::geometric_by_count),
                         make_grid(0.2, 4.0, y, Spacing::geometric_by_count));
    Rng rng(42);
    for (std::size_t k = 0; k < z; ++k) {
        s.times.push_back(0.5 * double(k));
        Eigen::MatrixXd f(x, y);
        for (std::size_t i = 0; i < x; ++i)
            for (std::size_t j = 0; j < y; ++j) f(i, j) = rng.uniform() + 0.1;
        s.frames.push_back(f);
    }
    s.meta.case_id = 2;
    s.meta.seed = 99;
    s.meta.noise_level = 0.01;
    s.meta.config_hash = "deadbeef01234567";
    return s;
}

}  // namespace

TEST_CASE("geometric-by-count grid spans the requested edges") {
    auto g = make_grid(0.1, 5.0, 25, Spacing::geometric_by_count);
    REQUIRE(g.size() == 25);
    REQUIRE(g.pivots.front() == 0.1);
    REQUIRE(g.pivots.back() == 5.0);
    REQUIRE(g.lower_edge == 0.1);
    REQUIRE(g.upper_edge == 5.0);
    // constant ratio across the mesh
    for (std::size_t i = 0; i + 1 < g.size(); ++i)
        REQUIRE(g.pivots[i + 1] / g.pivots[i] == Catch::Approx(g.ratio).epsilon(1e-12));
    REQUIRE(std::pow(g.ratio, 24) == Catch::Approx(50.0).epsilon(1e-10));
}

TEST_CASE("ratio-anchored grid descends from the upper edge") {
    auto g = make_grid(1e-4, 5.0, 15, Spacing::geometric_ratio_anchored, 2.0);
    REQUIRE(g.size() == 15);
    REQUIRE(g.pivots.back() == 5.0);
    // smallest pivot is 5 * 2^-14, an exact dyadic value
    REQUIRE(g.pivots.front() == Catch::Approx(5.0 / 16384.0).epsilon(1e-14));
    REQUIRE(g.pivots.front() >= 1e-4);
    REQUIRE(g.lower_edge == g.pivots.front());
    for (std::size_t i = 0; i + 1 < g.size(); ++i)
        REQUIRE(g.pivots[i + 1] / g.pivots[i] == Catch::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("grid constructor rejects bad requests") {
    REQUIRE_THROWS(make_grid(0.1, 5.0, 1, Spacing::geometric_by_count));
    REQUIRE_THROWS(make_grid(0.0, 5.0, 10, Spacing::geometric_by_count));
    REQUIRE_THROWS(make_grid(5.0, 0.1, 10, Spacing::geometric_by_count));
    // 25 halvings from 5 land far below the admissible lower edge 0.1
    REQUIRE_THROWS(make_grid(0.1, 5.0, 25, Spacing::geometric_ratio_anchored, 2.0));
    REQUIRE_THROWS(make_grid(1e-4, 5.0, 15, Spacing::geometric_ratio_anchored, 0.5));
}

TEST_CASE("trapezoid weights telescope to the covered span") {
    for (auto g : {make_grid(0.1, 5.0, 25, Spacing::geometric_by_count),
                   make_grid(1e-4, 5.0, 15, Spacing::geometric_ratio_anchored, 2.0)}) {
        auto w = trapezoid_weights(g);
        double sum = 0.0;
        for (double x : w) {
            REQUIRE(x > 0.0);
            sum += x;
        }
        double span = g.upper_edge - g.lower_edge;
        REQUIRE(sum == Catch::Approx(span).epsilon(1e-12));
    }
}

TEST_CASE("quadrature integrates separable fields exactly when linear per axis") {
    auto grid = benchmark_grid_25();
    SnapshotSeries s;
    s.grid = grid;
    s.times = {0.0};
    Eigen::MatrixXd f(grid.nv(), grid.nw());
    for (std::size_t i = 0; i < grid.nv(); ++i)
        for (std::size_t j = 0; j < grid.nw(); ++j)
            f(i, j) = grid.v[i] * grid.w[j];
    s.frames = {f};

    // n = v w is linear per axis, so the composite trapezoid rule is exact:
    // M00 = (int v dv)^2 = ((5^2 - 0.1^2)/2)^2 and M11 with n = 1/(vw) below.
    double exact_m1 = 0.5 * (25.0 - 0.01);
    REQUIRE(moment(s, 0, 0)[0] == Catch::Approx(exact_m1 * exact_m1).epsilon(1e-12));

    for (std::size_t i = 0; i < grid.nv(); ++i)
        for (std::size_t j = 0; j < grid.nw(); ++j)
            s.frames[0](i, j) = 1.0 / (grid.v[i] * grid.w[j]);
    double span = 4.9;
    REQUIRE(moment(s, 1, 1)[0] == Catch::Approx(span * span).epsilon(1e-12));
}

TEST_CASE("noise corruption is seeded and scaled to the tensor deviation") {
    auto s = synthetic_series(12, 10, 8);
    auto n1 = add_noise(s, 0.05, 1234);
    auto n2 = add_noise(s, 0.05, 1234);
    auto n3 = add_noise(s, 0.05, 4321);

    bool identical = true, differs = false;
    double ss = 0.0;
    std::size_t count = 0;
    for (std::size_t k = 0; k < s.nt(); ++k) {
        identical = identical && (n1.frames[k] - n2.frames[k]).cwiseAbs().maxCoeff() == 0.0;
        differs = differs || (n1.frames[k] - n3.frames[k]).cwiseAbs().maxCoeff() > 0.0;
        ss += (n1.frames[k] - s.frames[k]).array().square().sum();
        count += s.frames[k].size();
    }
    REQUIRE(identical);
    REQUIRE(differs);

    double sigma_target = 0.05 * tensor_std(s);
    double sigma_actual = std::sqrt(ss / double(count));
    REQUIRE(sigma_actual == Catch::Approx(sigma_target).margin(0.1 * sigma_target));

    auto clean = add_noise(s, 0.0, 77);
    for (std::size_t k = 0; k < s.nt(); ++k)
        REQUIRE((clean.frames[k] - s.frames[k]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("time subsampling keeps endpoints and uniform index spacing") {
    auto s = synthetic_series(4, 4, 25);

    auto t13 = subsample_time(s, 13);
    REQUIRE(t13.nt() == 13);
    for (std::size_t i = 0; i < 13; ++i)
        REQUIRE(t13.times[i] == s.times[2 * i]);

    auto t2 = subsample_time(s, 2);
    REQUIRE(t2.times.front() == s.times.front());
    REQUIRE(t2.times.back() == s.times.back());

    auto same = subsample_time(s, 25);
    REQUIRE(same.nt() == 25);
    for (std::size_t i = 0; i < 25; ++i) REQUIRE(same.times[i] == s.times[i]);

    REQUIRE_THROWS(subsample_time(s, 1));
    REQUIRE_THROWS(subsample_time(s, 26));
}

TEST_CASE("snapshot directory round-trip is lossless") {
    auto s = synthetic_series(6, 5, 4);
    auto dir = fresh_dir("roundtrip");
    io::write_snapshot_dir(s, dir.string());
    auto r = io::read_snapshot_dir(dir.string());

    REQUIRE(r.grid.nv() == s.grid.nv());
    REQUIRE(r.grid.nw() == s.grid.nw());
    for (std::size_t i = 0; i < s.grid.nv(); ++i)
        REQUIRE(r.grid.v[i] == s.grid.v[i]);
    for (std::size_t j = 0; j < s.grid.nw(); ++j)
        REQUIRE(r.grid.w[j] == s.grid.w[j]);
    REQUIRE(r.grid.v.kind == s.grid.v.kind);
    REQUIRE(r.grid.v.ratio == Catch::Approx(s.grid.v.ratio).epsilon(1e-15));
    REQUIRE(r.times == s.times);
    for (std::size_t k = 0; k < s.nt(); ++k)
        REQUIRE((r.frames[k] - s.frames[k]).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(r.meta.case_id == s.meta.case_id);
    REQUIRE(r.meta.seed == s.meta.seed);
    REQUIRE(r.meta.noise_level == s.meta.noise_level);
    REQUIRE(r.meta.config_hash == s.meta.config_hash);

    fs::remove_all(dir);
}

TEST_CASE("malformed CSV reports line and field") {
    auto dir = fresh_dir("badcsv");
    auto path = (dir / "bad.csv").string();
    {
        std::ofstream out(path);
        out << "# comment\n1,2,3\n4,oops,6\n";
    }
    try {
        io::read_csv(path);
        FAIL("expected a parse error");
    } catch (const std::exception& e) {
        std::string msg = e.what();
        REQUIRE(msg.find(":3") != std::string::npos);      // line number
        REQUIRE(msg.find("field 2") != std::string::npos);  // field number
        REQUIRE(msg.find("oops") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("grid hash discriminates grids and survives io") {
    auto a = benchmark_grid_25();
    auto b = benchmark_grid_ratio2();
    REQUIRE(grid_hash(a) != grid_hash(b));

    auto s = synthetic_series(6, 5, 3);
    auto dir = fresh_dir("gridhash");
    io::write_snapshot_dir(s, dir.string());
    auto r = io::read_snapshot_dir(dir.string());
    REQUIRE(grid_hash(r.grid) == grid_hash(s.grid));
    fs::remove_all(dir);
}

TEST_CASE("derived RNG streams are decorrelated and deterministic") {
    auto s1 = derive_stream(7, 0);
    auto s2 = derive_stream(7, 1);
    REQUIRE(s1 != s2);
    REQUIRE(derive_stream(7, 0) == s1);

    Rng r1(s1), r2(s1);
    for (int i = 0; i < 100; ++i) REQUIRE(r1.normal() == r2.normal());
}

#pragma once

// Plain-text artifact formats.  Every CSV may carry leading '#' comment
// lines (used for fingerprints); values are written with 17 significant
// digits so a write/read cycle is lossless at double precision.
//
// Snapshot directory layout:
//   grid_v.csv, grid_w.csv   one pivot per line
//   times.csv                one sample time per line
//   density_t<k>.csv         nv rows x nw columns, k matching times.csv
//   meta.json                grid construction, provenance, fingerprints
//   moments.csv              t, M00, M10, M01, M11

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpbeid/common.hpp"
#include "mpbeid/snapshot.hpp"

namespace mpbeid::io {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Low-level CSV
// ---------------------------------------------------------------------------

inline bool try_parse_field(const std::string& field, double& val) {
    const char* begin = field.c_str();
    char* end = nullptr;
    val = std::strtod(begin, &end);
    while (end && *end == ' ') ++end;
    return end != begin && (!end || *end == '\0');
}

inline double parse_field(const std::string& field, const std::string& path,
                          std::size_t line_no, std::size_t field_no) {
    double val;
    if (!try_parse_field(field, val))
        fail(strfmt("%s:%zu: field %zu is not a number: '%s'", path.c_str(),
                    line_no, field_no, field.c_str()));
    return val;
}

inline std::vector<std::vector<double>> read_csv(const std::string& path,
                                                 std::vector<std::string>* comments = nullptr) {
    std::ifstream in(path);
    if (!in) fail("cannot open " + path);
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    bool seen_data = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (comments) comments->push_back(line);
            continue;
        }
        std::vector<double> row;
        std::stringstream ss(line);
        std::string field;
        std::size_t field_no = 0;
        bool parsed = true;
        while (std::getline(ss, field, ',')) {
            ++field_no;
            double val;
            if (try_parse_field(field, val)) {
                row.push_back(val);
            } else if (!seen_data) {
                parsed = false;  // column-name header before any data
                break;
            } else {
                parse_field(field, path, line_no, field_no);
            }
        }
        if (!parsed) {
            if (comments) comments->push_back(line);
            continue;
        }
        seen_data = true;
        if (row.empty())
            fail(strfmt("%s:%zu: empty data row", path.c_str(), line_no));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<double> read_csv_column(const std::string& path) {
    auto rows = read_csv(path);
    std::vector<double> out;
    out.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != 1)
            fail(strfmt("%s: row %zu: expected a single column", path.c_str(), i + 1));
        out.push_back(rows[i][0]);
    }
    return out;
}

inline Eigen::MatrixXd read_csv_matrix(const std::string& path) {
    auto rows = read_csv(path);
    if (rows.empty()) fail(path + ": no data rows");
    std::size_t cols = rows[0].size();
    Eigen::MatrixXd m(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != cols)
            fail(strfmt("%s: row %zu has %zu fields, expected %zu", path.c_str(),
                        i + 1, rows[i].size(), cols));
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j];
    }
    return m;
}

class CsvWriter {
  public:
    explicit CsvWriter(const std::string& path) : path_(path), out_(path) {
        if (!out_) fail("cannot write " + path);
    }
    void comment(const std::string& text) { out_ << "# " << text << "\n"; }
    void header(const std::string& text) { out_ << text << "\n"; }
    void row(const std::vector<double>& values) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) out_ << ",";
            out_ << fmt_g17(values[i]);
        }
        out_ << "\n";
    }
    void matrix(const Eigen::MatrixXd& m) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                if (j) out_ << ",";
                out_ << fmt_g17(m(i, j));
            }
            out_ << "\n";
        }
    }
    ~CsvWriter() {
        out_.flush();
        if (!out_) std::fprintf(stderr, "warning: short write on %s\n", path_.c_str());
    }

  private:
    std::string path_;
    std::ofstream out_;
};

inline void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) fail("cannot write " + path);
    out << j.dump(2) << "\n";
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail(path + ": JSON parse error: " + e.what());
    }
    return j;
}

// ---------------------------------------------------------------------------
// Snapshot directories
// ---------------------------------------------------------------------------

inline json grid1d_meta(const griddata::Grid1D& g) {
    json j;
    j["kind"] = griddata::to_string(g.kind);
    j["count"] = g.size();
    j["ratio"] = g.ratio;
    j["lower_edge"] = g.lower_edge;
    j["upper_edge"] = g.upper_edge;
    return j;
}

inline void write_snapshot_dir(const griddata::SnapshotSeries& s,
                               const std::string& dir) {
    s.validate();
    fs::create_directories(dir);
    const std::string tag = "config_hash=" +
        (s.meta.config_hash.empty() ? std::string("none") : s.meta.config_hash);

    {
        CsvWriter wv(dir + "/grid_v.csv");
        wv.comment(tag);
        for (double p : s.grid.v.pivots) wv.row({p});
    }
    {
        CsvWriter ww(dir + "/grid_w.csv");
        ww.comment(tag);
        for (double p : s.grid.w.pivots) ww.row({p});
    }
    {
        CsvWriter wt(dir + "/times.csv");
        wt.comment(tag);
        for (double t : s.times) wt.row({t});
    }
    for (std::size_t k = 0; k < s.nt(); ++k) {
        CsvWriter wd(dir + strfmt("/density_t%zu.csv", k));
        wd.comment(tag);
        wd.matrix(s.frames[k]);
    }
    {
        auto m00 = griddata::moment(s, 0, 0);
        auto m10 = griddata::moment(s, 1, 0);
        auto m01 = griddata::moment(s, 0, 1);
        auto m11 = griddata::moment(s, 1, 1);
        CsvWriter wm(dir + "/moments.csv");
        wm.comment(tag);
        wm.header("t,M00,M10,M01,M11");
        for (std::size_t k = 0; k < s.nt(); ++k)
            wm.row({s.times[k], m00[k], m10[k], m01[k], m11[k]});
    }

    json meta;
    meta["format_version"] = 1;
    meta["case_id"] = s.meta.case_id;
    meta["seed"] = s.meta.seed;
    meta["noise_level"] = s.meta.noise_level;
    meta["config_hash"] = s.meta.config_hash;
    meta["grid"]["v"] = grid1d_meta(s.grid.v);
    meta["grid"]["w"] = grid1d_meta(s.grid.w);
    meta["grid"]["hash"] = hex64(griddata::grid_hash(s.grid));
    meta["timepoints"] = s.nt();
    write_json_file(dir + "/meta.json", meta);
}

inline griddata::Grid1D grid1d_from_parts(const std::vector<double>& pivots,
                                          const json& meta) {
    check(pivots.size() >= 2, "grid file: need at least 2 pivots");
    griddata::Grid1D g;
    g.pivots = pivots;
    g.kind = griddata::spacing_from_string(meta.at("kind").get<std::string>());
    g.ratio = meta.at("ratio").get<double>();
    g.lower_edge = pivots.front();
    g.upper_edge = pivots.back();
    for (std::size_t i = 0; i + 1 < pivots.size(); ++i)
        check(pivots[i] > 0 && pivots[i] < pivots[i + 1],
              "grid file: pivots must be positive and strictly increasing");
    return g;
}

inline griddata::SnapshotSeries read_snapshot_dir(const std::string& dir) {
    json meta = read_json_file(dir + "/meta.json");
    griddata::SnapshotSeries s;
    auto pv = read_csv_column(dir + "/grid_v.csv");
    auto pw = read_csv_column(dir + "/grid_w.csv");
    s.grid = griddata::make_grid2d(grid1d_from_parts(pv, meta["grid"]["v"]),
                                   grid1d_from_parts(pw, meta["grid"]["w"]));
    s.times = read_csv_column(dir + "/times.csv");
    std::size_t z = meta.at("timepoints").get<std::size_t>();
    if (z != s.times.size())
        fail(dir + ": meta.json timepoints disagree with times.csv");
    s.frames.reserve(z);
    for (std::size_t k = 0; k < z; ++k) {
        Eigen::MatrixXd f = read_csv_matrix(dir + strfmt("/density_t%zu.csv", k));
        if (f.rows() != (Eigen::Index)s.grid.nv() || f.cols() != (Eigen::Index)s.grid.nw())
            fail(strfmt("%s/density_t%zu.csv: shape %ldx%ld does not match grid %zux%zu",
                        dir.c_str(), k, (long)f.rows(), (long)f.cols(),
                        s.grid.nv(), s.grid.nw()));
        s.frames.push_back(std::move(f));
    }
    s.meta.case_id = meta.value("case_id", 0);
    s.meta.seed = meta.value("seed", std::uint64_t(0));
    s.meta.noise_level = meta.value("noise_level", 0.0);
    s.meta.config_hash = meta.value("config_hash", std::string());
    s.validate();
    return s;
}

}  // namespace mpbeid::io

#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "bands.hpp"
#include "design.hpp"
#include "error.hpp"
#include "select.hpp"
#include "simlab.hpp"
#include "truth.hpp"

namespace gacm {

using Json = nlohmann::ordered_json;

/// Shortest decimal that reads back to the same double.
inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& tok, bool& ok) {
    double v = 0.0;
    const char* b = tok.data();
    const char* e = tok.data() + tok.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    while (e > b && (e[-1] == ' ' || e[-1] == '\t' || e[-1] == '\r')) --e;
    if (b < e && *b == '+') ++b;
    const auto r = std::from_chars(b, e, v);
    ok = r.ec == std::errc() && r.ptr == e && b != e;
    if (ok && tok == "nan") ok = false;
    return v;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace detail

/// Reads `y,x1..xd,t1..tp`. Lines starting with '#' are skipped. Covariate
/// columns with values outside [0,1] are min-max rescaled when `rescale_x`.
inline Dataset read_dataset(std::istream& in, bool rescale_x = true) {
    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        header = detail::split_csv(line);
        break;
    }
    if (header.empty()) throw SchemaError("header", "missing header row");
    for (auto& h : header) h = detail::trim(h);
    if (header[0] != "y") throw SchemaError(header[0], "first column must be 'y', found '" + header[0] + "'");
    Index d = 0, p = 0;
    for (std::size_t c = 1; c < header.size(); ++c) {
        const std::string& h = header[c];
        if (p == 0 && h == "x" + std::to_string(d + 1)) {
            ++d;
        } else if (h == "t" + std::to_string(p + 1)) {
            ++p;
        } else {
            throw SchemaError(h, "unexpected column '" + h + "'; expected y, x1..xd, t1..tp");
        }
    }
    if (d < 1) throw SchemaError("x1", "no covariate columns x1..xd");

    std::vector<std::vector<double>> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto fields = detail::split_csv(line);
        if (fields.size() != header.size())
            throw SchemaError("row", "line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                                         " fields, header has " + std::to_string(header.size()));
        std::vector<double> v(fields.size());
        for (std::size_t c = 0; c < fields.size(); ++c) {
            bool ok = false;
            v[c] = parse_double(fields[c], ok);
            if (!ok || !std::isfinite(v[c]))
                throw SchemaError(header[c], "line " + std::to_string(lineno) + ": invalid value '" + fields[c] +
                                                 "' in column '" + header[c] + "'");
        }
        rows.push_back(std::move(v));
    }
    const auto n = static_cast<Index>(rows.size());
    Dataset ds;
    ds.y.resize(n);
    ds.X.resize(n, d);
    ds.T.resize(n, p);
    for (Index i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        ds.y[i] = r[0];
        for (Index k = 0; k < d; ++k) ds.X(i, k) = r[static_cast<std::size_t>(1 + k)];
        for (Index l = 0; l < p; ++l) ds.T(i, l) = r[static_cast<std::size_t>(1 + d + l)];
    }
    for (Index k = 0; k < d; ++k) ds.x_names.push_back(header[static_cast<std::size_t>(1 + k)]);
    for (Index l = 0; l < p; ++l) ds.t_names.push_back(header[static_cast<std::size_t>(1 + d + l)]);
    ds.rescale_params.assign(static_cast<std::size_t>(d), {});
    if (rescale_x && n > 0) {
        for (Index k = 0; k < d; ++k) {
            if (ds.X.col(k).minCoeff() >= 0.0 && ds.X.col(k).maxCoeff() <= 1.0) continue;
            auto [unit, params] = rescale(ds.X.col(k), {ds.x_names[static_cast<std::size_t>(k)]});
            ds.X.col(k) = unit.col(0);
            ds.rescale_params[static_cast<std::size_t>(k)] = params[0];
        }
    }
    ds.validate();
    return ds;
}

inline Dataset read_dataset(const std::string& path, bool rescale_x = true) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    return read_dataset(in, rescale_x);
}

/// `# {json}` provenance line.
inline void write_header(std::ostream& out, const Json& config) {
    out << "# " << config.dump() << "\n";
}

/// First `# {json}` line of a file, or null.
inline Json read_header(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line.rfind("# ", 0) != 0) return nullptr;
    return Json::parse(line.substr(2), nullptr, false);
}

inline void write_dataset(std::ostream& out, const Dataset& ds, const Json& config = nullptr) {
    if (!config.is_null()) write_header(out, config);
    out << "y";
    for (Index k = 0; k < ds.d(); ++k) out << ",x" << (k + 1);
    for (Index l = 0; l < ds.p(); ++l) out << ",t" << (l + 1);
    out << "\n";
    for (Index i = 0; i < ds.n(); ++i) {
        out << fmt_double(ds.y[i]);
        for (Index k = 0; k < ds.d(); ++k) out << ',' << fmt_double(ds.X(i, k));
        for (Index l = 0; l < ds.p(); ++l) out << ',' << fmt_double(ds.T(i, l));
        out << "\n";
    }
}

inline Json truth_to_json(const TruthSpec& t) {
    Json j;
    j["family"] = t.family.name();
    j["n"] = t.n;
    j["p"] = t.p;
    j["d"] = t.d;
    j["signal"] = Json::array();
    for (int l : t.signal) j["signal"].push_back("t" + std::to_string(l + 1));
    j["intercept"] = t.intercept;
    j["functions"] = Json::array();
    for (const auto& row : t.fns) {
        Json r = Json::array();
        for (const auto& f : row) r.push_back({{"kind", TruthFn::kind_name(f.kind)}, {"amplitude", f.amplitude}});
        j["functions"].push_back(r);
    }
    return j;
}

namespace detail {

inline const Json& need(const Json& j, const char* key) {
    if (!j.is_object() || !j.contains(key)) throw SchemaError(key, std::string("missing field '") + key + "'");
    return j.at(key);
}

inline int t_index(const std::string& name) {
    bool ok = name.size() > 1 && name[0] == 't';
    int v = 0;
    if (ok) {
        const auto r = std::from_chars(name.data() + 1, name.data() + name.size(), v);
        ok = r.ec == std::errc() && r.ptr == name.data() + name.size() && v >= 1;
    }
    if (!ok) throw SchemaError("signal", "bad column name '" + name + "'");
    return v - 1;
}

} // namespace detail

inline TruthSpec truth_from_json(const Json& j) {
    TruthSpec t;
    try {
        t.family = Family::from_name(detail::need(j, "family").get<std::string>());
        t.n = detail::need(j, "n").get<Index>();
        t.p = detail::need(j, "p").get<Index>();
        t.d = detail::need(j, "d").get<Index>();
        for (const auto& s : detail::need(j, "signal")) t.signal.push_back(detail::t_index(s.get<std::string>()));
        t.intercept = detail::need(j, "intercept").get<std::vector<double>>();
        for (const auto& row : detail::need(j, "functions")) {
            std::vector<TruthFn> r;
            for (const auto& f : row)
                r.push_back({TruthFn::kind_from_name(detail::need(f, "kind").get<std::string>()),
                             detail::need(f, "amplitude").get<double>()});
            t.fns.push_back(std::move(r));
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("truth", std::string("malformed truth file: ") + e.what());
    } catch (const ArgumentError& e) {
        throw SchemaError("family", e.what());
    }
    t.validate();
    return t;
}

namespace detail {

inline Json names_of(const std::vector<int>& cols, const Dataset& ds) {
    Json a = Json::array();
    for (int l : cols) a.push_back(ds.t_names.at(static_cast<std::size_t>(l)));
    return a;
}

inline Json path_json(const std::vector<PathPoint>& path, Index pick, const Dataset& ds) {
    Json a = Json::array();
    for (std::size_t i = 0; i < path.size(); ++i) {
        const auto& pt = path[i];
        a.push_back({{"lambda", pt.lambda},
                     {"ebic", pt.ebic},
                     {"loss", pt.loss},
                     {"size", pt.s},
                     {"selected", names_of(pt.selected, ds)},
                     {"chosen", static_cast<Index>(i) == pick},
                     {"converged", pt.report.converged}});
    }
    return a;
}

} // namespace detail

inline Json selection_to_json(const SelectionResult& res, const Dataset& ds, const Json& config) {
    Json j;
    j["config"] = config;
    j["selected"] = detail::names_of(res.selected, ds);
    j["empty"] = res.empty;
    j["num_interior"] = res.num_interior;
    j["order"] = res.order;
    j["stage1"] = {{"method", "group lasso"},
                   {"lambda_max", res.lambda_max1},
                   {"selected", detail::names_of(res.stage1().selected, ds)},
                   {"path", detail::path_json(res.stage1_path, res.stage1_pick, ds)}};
    if (res.has_stage2())
        j["stage2"] = {{"method", "adaptive group lasso"},
                       {"lambda_max", res.lambda_max2},
                       {"selected", detail::names_of(res.final_point().selected, ds)},
                       {"path", detail::path_json(res.stage2_path, res.stage2_pick, ds)}};
    else
        j["stage2"] = nullptr;
    j["notes"] = res.notes;
    return j;
}

/// Column indices of the selected set stored in a selection report.
inline std::vector<int> selected_from_json(const Json& j, const Dataset& ds) {
    std::vector<int> out;
    try {
        for (const auto& s : detail::need(j, "selected")) {
            const std::string name = s.get<std::string>();
            int idx = -1;
            for (std::size_t l = 0; l < ds.t_names.size(); ++l)
                if (ds.t_names[l] == name) idx = static_cast<int>(l);
            if (idx < 0) throw SchemaError(name, "selected column '" + name + "' not in the data");
            out.push_back(idx);
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("selected", std::string("malformed selection file: ") + e.what());
    }
    return out;
}

inline void write_band(std::ostream& out, const Band& b, const Json& config = nullptr) {
    if (!config.is_null()) write_header(out, config);
    out << "grid,center,sd,lower,upper\n";
    for (std::size_t g = 0; g < b.grid.size(); ++g) {
        const auto i = static_cast<Index>(g);
        out << fmt_double(b.grid[g]) << ',' << fmt_double(b.center[i]) << ',' << fmt_double(b.sd[i]) << ','
            << fmt_double(b.lower[i]) << ',' << fmt_double(b.upper[i]) << "\n";
    }
}

inline Json band_to_json(const Band& b) {
    Json j;
    j["threshold"] = b.threshold;
    j["grid"] = b.grid;
    j["center"] = std::vector<double>(b.center.data(), b.center.data() + b.center.size());
    j["sd"] = std::vector<double>(b.sd.data(), b.sd.data() + b.sd.size());
    j["lower"] = std::vector<double>(b.lower.data(), b.lower.data() + b.lower.size());
    j["upper"] = std::vector<double>(b.upper.data(), b.upper.data() + b.upper.size());
    return j;
}

// Benchmark tables and the per-replication log.

inline const char* kTable1Header = "method,reps,correct_pct,over_pct,incorrect_pct,tp,fp,mr";
inline const char* kTable2Header =
    "curve,reps,cov_unsmoothed,sd_median_unsmoothed,sd_mean_unsmoothed,cov_smoothed,sd_median_smoothed,"
    "sd_mean_smoothed";
inline const char* kRepsHeader =
    "rep,seed,ok,agl_selected,agl_tp,agl_fp,agl_mr,gl_selected,gl_tp,gl_fp,gl_mr,screen_selected,boot_dropped,error";
inline const char* kCurvesHeader =
    "rep,l,k,covered_unsmoothed,covered_smoothed,sd_median_unsmoothed,sd_mean_unsmoothed,sd_median_smoothed,"
    "sd_mean_smoothed";

inline std::string curve_name(int l, int k) {
    return "alpha_" + std::to_string(l + 1) + "_" + std::to_string(k + 1);
}

inline void write_table1(std::ostream& out, const std::vector<Table1Row>& rows, const Json& config = nullptr) {
    if (!config.is_null()) write_header(out, config);
    out << kTable1Header << "\n";
    for (const auto& r : rows)
        out << r.method << ',' << r.reps << ',' << fmt_double(r.correct) << ',' << fmt_double(r.over) << ','
            << fmt_double(r.incorrect) << ',' << fmt_double(r.tp) << ',' << fmt_double(r.fp) << ','
            << fmt_double(r.mr) << "\n";
}

inline void write_table2(std::ostream& out, const std::vector<Table2Row>& rows, const Json& config = nullptr) {
    if (!config.is_null()) write_header(out, config);
    out << kTable2Header << "\n";
    for (const auto& r : rows)
        out << curve_name(r.l, r.k) << ',' << r.reps << ',' << fmt_double(r.cov_unsmoothed) << ','
            << fmt_double(r.sd_median_unsmoothed) << ',' << fmt_double(r.sd_mean_unsmoothed) << ','
            << fmt_double(r.cov_smoothed) << ',' << fmt_double(r.sd_median_smoothed) << ','
            << fmt_double(r.sd_mean_smoothed) << "\n";
}

inline Json tables_to_json(const BenchResult& res) {
    Json j;
    j["completed"] = res.completed;
    j["table1"] = Json::array();
    for (const auto& r : res.table1)
        j["table1"].push_back({{"method", r.method},
                               {"reps", r.reps},
                               {"correct_pct", r.correct},
                               {"over_pct", r.over},
                               {"incorrect_pct", r.incorrect},
                               {"tp", r.tp},
                               {"fp", r.fp},
                               {"mr", r.mr}});
    j["table2"] = Json::array();
    for (const auto& r : res.table2)
        j["table2"].push_back({{"curve", curve_name(r.l, r.k)},
                               {"reps", r.reps},
                               {"cov_unsmoothed", r.cov_unsmoothed},
                               {"sd_median_unsmoothed", r.sd_median_unsmoothed},
                               {"sd_mean_unsmoothed", r.sd_mean_unsmoothed},
                               {"cov_smoothed", r.cov_smoothed},
                               {"sd_median_smoothed", r.sd_median_smoothed},
                               {"sd_mean_smoothed", r.sd_mean_smoothed}});
    return j;
}

namespace detail {

inline std::string join_ids(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i] + 1);
    return s;
}

inline std::vector<int> split_ids(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ';'))
        if (!tok.empty()) out.push_back(std::stoi(tok) - 1);
    return out;
}

inline std::string sanitize(std::string s) {
    for (auto& c : s)
        if (c == ',' || c == '\n' || c == '\r') c = ' ';
    return s;
}

} // namespace detail

/// Per-replication log. Rows of `reps.csv` carry the selection outcomes,
/// rows of `curves.csv` the band outcomes.
inline void write_rep_log(std::ostream& reps, std::ostream& curves, const BenchResult& res) {
    reps << kRepsHeader << "\n";
    curves << kCurvesHeader << "\n";
    for (const auto& r : res.reps) {
        reps << r.rep << ',' << r.seed << ',' << (r.ok ? 1 : 0) << ',' << detail::join_ids(r.agl_selected) << ','
             << r.agl.tp << ',' << r.agl.fp << ',' << fmt_double(r.agl.mr) << ',' << detail::join_ids(r.gl_selected)
             << ',' << r.gl.tp << ',' << r.gl.fp << ',' << fmt_double(r.gl.mr) << ','
             << (r.has_screen ? detail::join_ids(r.screen_selected) : std::string("NA")) << ',' << r.boot_dropped
             << ',' << detail::sanitize(r.error) << "\n";
        for (const auto& c : r.curves)
            curves << r.rep << ',' << c.l + 1 << ',' << c.k + 1 << ',' << (c.covered_unsmoothed ? 1 : 0) << ','
                   << (c.covered_smoothed ? 1 : 0) << ',' << fmt_double(c.sd_median_unsmoothed) << ','
                   << fmt_double(c.sd_mean_unsmoothed) << ',' << fmt_double(c.sd_median_smoothed) << ','
                   << fmt_double(c.sd_mean_smoothed) << "\n";
    }
}

/// Inverse of write_rep_log; metrics are rebuilt from the selected sets.
inline std::vector<RepRecord> read_rep_log(std::istream& reps, std::istream& curves, const TruthSpec& truth) {
    std::vector<RepRecord> out;
    std::string line;
    std::getline(reps, line);
    if (detail::trim(line) != kRepsHeader) throw SchemaError("reps", "unexpected replication log header");
    auto num = [](const std::string& s) {
        bool ok = false;
        const double v = parse_double(s, ok);
        return ok ? v : std::numeric_limits<double>::quiet_NaN();
    };
    while (std::getline(reps, line)) {
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 14) throw SchemaError("reps", "replication log row has " + std::to_string(f.size()) + " fields");
        RepRecord r;
        r.rep = std::stoi(f[0]);
        r.seed = std::stoull(f[1]);
        r.ok = f[2] == "1";
        r.agl_selected = detail::split_ids(f[3]);
        r.gl_selected = detail::split_ids(f[7]);
        auto fill = [&](SelectionMetrics& m, const std::vector<int>& sel, const std::string& mr) {
            const VectorXd zero = VectorXd::Zero(1);
            m = metrics(sel, truth, zero, zero);
            m.mr = num(mr);
        };
        fill(r.agl, r.agl_selected, f[6]);
        fill(r.gl, r.gl_selected, f[10]);
        if (f[11] != "NA") {
            r.has_screen = true;
            r.screen_selected = detail::split_ids(f[11]);
            fill(r.screen, r.screen_selected, "nan");
        }
        r.boot_dropped = std::stoi(f[12]);
        r.error = f[13];
        out.push_back(std::move(r));
    }
    std::getline(curves, line);
    if (detail::trim(line) != kCurvesHeader) throw SchemaError("curves", "unexpected curve log header");
    while (std::getline(curves, line)) {
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 9) throw SchemaError("curves", "curve log row has " + std::to_string(f.size()) + " fields");
        const int rep = std::stoi(f[0]);
        CurveRecord c;
        c.l = std::stoi(f[1]) - 1;
        c.k = std::stoi(f[2]) - 1;
        c.covered_unsmoothed = f[3] == "1";
        c.covered_smoothed = f[4] == "1";
        c.sd_median_unsmoothed = num(f[5]);
        c.sd_mean_unsmoothed = num(f[6]);
        c.sd_median_smoothed = num(f[7]);
        c.sd_mean_smoothed = num(f[8]);
        for (auto& r : out)
            if (r.rep == rep) r.curves.push_back(c);
    }
    return out;
}

} // namespace gacm

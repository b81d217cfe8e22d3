#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "design.hpp"
#include "error.hpp"
#include "family.hpp"
#include "parallel.hpp"
#include "solver.hpp"

namespace gacm {

/// Interior knot count for the selection stage, floor(c n^{1/(2q+1)}).
inline int knot_count_stage1(Index n, int q, double c = 2.0) {
    if (n < 2) throw ArgumentError("knot count needs n >= 2");
    if (q < 1) throw ArgumentError("spline order must be >= 1");
    const double v = c * std::pow(static_cast<double>(n), 1.0 / (2.0 * q + 1.0));
    // Exact powers such as 512^{1/9} = 2 can round just below the integer.
    return static_cast<int>(std::floor(v * (1.0 + 1e-12)));
}

/// Descending log-spaced grid from lambda_max to lambda_max * floor_ratio.
inline std::vector<double> lambda_grid(double lambda_max, int size, double floor_ratio) {
    if (!(lambda_max > 0.0)) throw ArgumentError("lambda_max must be positive");
    if (size < 1) throw ArgumentError("grid size must be >= 1");
    if (!(floor_ratio > 0.0 && floor_ratio <= 1.0)) throw ArgumentError("grid floor ratio must lie in (0,1]");
    std::vector<double> grid(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) {
        const double t = size == 1 ? 0.0 : static_cast<double>(i) / (size - 1);
        grid[static_cast<std::size_t>(i)] = lambda_max * std::pow(floor_ratio, t);
    }
    return grid;
}

inline double log_binomial(Index p, Index s) {
    if (s < 0 || s > p) throw ArgumentError("log_binomial needs 0 <= s <= p");
    return std::lgamma(static_cast<double>(p) + 1.0) - std::lgamma(static_cast<double>(s) + 1.0) -
           std::lgamma(static_cast<double>(p - s) + 1.0);
}

/// Model-size part of the EBIC: s (1 + d J) log n + 2 nu log C(p, s).
inline double ebic_penalty(Index s, double nu, Index n, Index p, Index d, Index J) {
    if (!(nu >= 0.0 && nu <= 1.0)) throw ArgumentError("nu must lie in [0,1]");
    return static_cast<double>(s) * (1.0 + static_cast<double>(d * J)) * std::log(static_cast<double>(n)) +
           2.0 * nu * log_binomial(p, s);
}

/// 2 * sum Q + s (1 + d J) log n + 2 nu log C(p, s).
inline double ebic(double loss_sum, Index s, double nu, Index n, Index p, Index d, Index J) {
    return 2.0 * loss_sum + ebic_penalty(s, nu, n, p, d, J);
}

/// Constants of the EBIC shared by every point on a path.
struct EbicSpec {
    double nu = 0.5;
    Index n = 0;
    Index p = 0;  // size of the model space (all candidate groups)
    Index d = 0;
    Index J = 0;  // N + q
};

struct PathPoint {
    double lambda = 0.0;
    GroupCoef fit;
    std::vector<int> selected;  // layout ids with positive norm
    double loss = 0.0;          // sum of Q at the fit
    double ebic = 0.0;
    Index s = 0;
    FitReport report;
};

struct PathOptions {
    bool warm_start = true;
    // Stop once the model-size penalty of a point alone exceeds the best EBIC
    // seen, or once the active columns outnumber the observations.
    bool early_stop = true;
    int threads = 1;  // used only without warm starts
    SolverOptions solver;
};

namespace detail {

inline PathPoint make_point(const MatrixXd& Z, const VectorXd& y, const Family& fam, double lambda,
                            GroupCoef fit, FitReport rep, const EbicSpec& es) {
    PathPoint pt;
    pt.lambda = lambda;
    pt.selected = fit.selected_ids();
    pt.s = static_cast<Index>(pt.selected.size());
    pt.loss = unpenalized_objective(Z, y, fam, fit.coef, fit.offset);
    pt.ebic = ebic(pt.loss, pt.s, es.nu, es.n, es.p, es.d, es.J);
    pt.fit = std::move(fit);
    pt.report = std::move(rep);
    return pt;
}

inline Index active_columns(const GroupCoef& c) {
    Index k = 0;
    for (Index g = 0; g < c.groups(); ++g)
        if (c.norm(g) > 0.0) k += c.layout.size(g);
    return k;
}

} // namespace detail

/// Penalized fits along a descending lambda grid with EBIC per point.
inline std::vector<PathPoint> group_lasso_path(const MatrixXd& Z, const GroupLayout& layout,
                                               const VectorXd& y, const Family& fam,
                                               const std::vector<double>& grid, const VectorXd& weights,
                                               const VectorXd& offset, const EbicSpec& es,
                                               const PathOptions& opts = {}) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0)) throw ArgumentError("lambda grid values must be positive");
        if (i > 0 && !(grid[i] < grid[i - 1])) throw ArgumentError("lambda grid must be strictly descending");
    }
    auto fit_at = [&](std::size_t i, const VectorXd* warm) {
        try {
            auto [coef, rep] = fit_group_penalized(Z, layout, y, fam, grid[i], weights, offset, opts.solver, warm);
            return detail::make_point(Z, y, fam, grid[i], std::move(coef), std::move(rep), es);
        } catch (const Error& e) {
            throw NumericalError("path fit at lambda=" + std::to_string(grid[i]) + ": " + e.what());
        }
    };

    std::vector<PathPoint> path;
    if (!opts.warm_start) {
        path.resize(grid.size());
        parallel_for(grid.size(), static_cast<unsigned>(std::max(opts.threads, 1)),
                     [&](std::size_t i) { path[i] = fit_at(i, nullptr); });
        return path;
    }
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const VectorXd* warm = path.empty() ? nullptr : &path.back().fit.coef;
        path.push_back(fit_at(i, warm));
        const PathPoint& pt = path.back();
        best = std::min(best, pt.ebic);
        if (opts.early_stop) {
            const double floor_part = ebic_penalty(pt.s, es.nu, es.n, es.p, es.d, es.J);
            if (floor_part > best || detail::active_columns(pt.fit) >= es.n) break;
        }
    }
    return path;
}

/// Index of the EBIC minimum; ties go to the larger lambda (earlier point).
inline Index ebic_argmin(const std::vector<PathPoint>& path) {
    if (path.empty()) throw ArgumentError("empty path");
    Index best = 0;
    for (std::size_t i = 1; i < path.size(); ++i)
        if (path[i].ebic < path[static_cast<std::size_t>(best)].ebic) best = static_cast<Index>(i);
    return best;
}

/// 1/||gamma_l|| for nonzero groups, infinity for zero groups.
inline VectorXd adaptive_weights(const GroupCoef& stage1) {
    VectorXd w(stage1.groups());
    for (Index g = 0; g < stage1.groups(); ++g) {
        const double nrm = stage1.norm(g);
        w[g] = nrm > 0.0 ? 1.0 / nrm : std::numeric_limits<double>::infinity();
    }
    return w;
}

struct SelectConfig {
    int q = 4;
    double c = 2.0;
    double nu = 0.5;
    int grid_size = 50;
    double grid_floor_ratio = 1e-3;
    bool warm_start = true;
    bool early_stop = true;
    int threads = 1;
    SolverOptions solver;
};

struct SelectionResult {
    int num_interior = 0;
    int order = 4;
    std::vector<CovariateTerm> terms;
    double lambda_max1 = 0.0;
    std::vector<PathPoint> stage1_path;
    Index stage1_pick = -1;
    VectorXd weights;
    double lambda_max2 = 0.0;
    std::vector<PathPoint> stage2_path;
    Index stage2_pick = -1;
    std::vector<int> selected;  // I-hat_1, columns of T
    bool empty = true;
    std::vector<std::string> notes;

    const PathPoint& stage1() const { return stage1_path.at(static_cast<std::size_t>(stage1_pick)); }
    const PathPoint& final_point() const { return stage2_path.at(static_cast<std::size_t>(stage2_pick)); }
    bool has_stage2() const { return stage2_pick >= 0; }
};

/// Group lasso path, EBIC pick, adaptive weights, adaptive group lasso path
/// over the finite-weight groups, EBIC pick.
inline SelectionResult select_model(const Dataset& ds, const Family& fam, const SelectConfig& cfg = {}) {
    if (ds.p() < 1) throw StructuralError("dataset has no interaction covariates");
    for (Index i = 0; i < ds.n(); ++i)
        if (!fam.valid_response(ds.y[i]))
            throw DomainError("response value " + std::to_string(ds.y[i]) + " invalid for family " + fam.name());

    SelectionResult res;
    res.order = cfg.q;
    res.num_interior = knot_count_stage1(ds.n(), cfg.q, cfg.c);
    res.terms = fit_terms(ds, res.num_interior, cfg.q);
    const GroupedDesign gd = build_design(ds, res.terms);
    const VectorXd offset = VectorXd::Zero(ds.n());

    EbicSpec es;
    es.nu = cfg.nu;
    es.n = ds.n();
    es.p = ds.p();
    es.d = ds.d();
    es.J = res.num_interior + cfg.q;
    PathOptions po;
    po.warm_start = cfg.warm_start;
    po.early_stop = cfg.early_stop;
    po.threads = cfg.threads;
    po.solver = cfg.solver;

    const VectorXd ones = VectorXd::Ones(gd.layout.groups());
    res.lambda_max1 = lambda_max(gd.Z, gd.layout, ds.y, fam, ones, offset);
    res.stage1_path = group_lasso_path(gd.Z, gd.layout, ds.y, fam,
                                       lambda_grid(res.lambda_max1, cfg.grid_size, cfg.grid_floor_ratio), ones,
                                       offset, es, po);
    res.stage1_pick = ebic_argmin(res.stage1_path);
    res.weights = adaptive_weights(res.stage1().fit);

    std::vector<Index> finite;
    for (Index g = 0; g < res.weights.size(); ++g)
        if (std::isfinite(res.weights[g])) finite.push_back(g);
    if (finite.empty()) {
        res.notes.push_back("group lasso selected nothing; all adaptive weights infinite");
        return res;
    }

    // Adaptive stage on the finite-weight groups only.
    std::vector<int> ids;
    VectorXd wsub(static_cast<Index>(finite.size()));
    for (std::size_t j = 0; j < finite.size(); ++j) {
        ids.push_back(gd.layout.id(finite[j]));
        wsub[static_cast<Index>(j)] = res.weights[finite[j]];
    }
    const GroupLayout sub_layout = GroupLayout::structured(ids, gd.layout.intercept, gd.layout.blocks);
    const MatrixXd Zsub = detail::take_columns(gd.Z, detail::group_columns(gd.layout, finite));
    res.lambda_max2 = lambda_max(Zsub, sub_layout, ds.y, fam, wsub, offset);
    auto sub_path = group_lasso_path(Zsub, sub_layout, ds.y, fam,
                                     lambda_grid(res.lambda_max2, cfg.grid_size, cfg.grid_floor_ratio), wsub,
                                     offset, es, po);

    // Embed the sub-path coefficients back into the full layout.
    for (auto& pt : sub_path) {
        VectorXd full = VectorXd::Zero(gd.layout.cols());
        for (std::size_t j = 0; j < finite.size(); ++j) {
            const Index g = finite[j];
            full.segment(gd.layout.begin(g), gd.layout.size(g)) = pt.fit.block(static_cast<Index>(j));
        }
        pt.fit = GroupCoef(std::move(full), gd.layout, offset);
    }
    res.stage2_path = std::move(sub_path);
    res.stage2_pick = ebic_argmin(res.stage2_path);
    res.selected = res.final_point().selected;
    res.empty = res.selected.empty();
    if (res.empty) res.notes.push_back("adaptive group lasso selected nothing");
    return res;
}

} // namespace gacm

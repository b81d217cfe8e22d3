#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "basis.hpp"
#include "error.hpp"

namespace gacm {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct RescaleParam {
    double min = 0.0;
    double max = 1.0;
    double to_unit(double v) const { return (v - min) / (max - min); }
    double from_unit(double u) const { return min + u * (max - min); }
};

/// Min-max rescaling of every column to [0,1]. Throws DegenerateCovariate on
/// a constant column.
inline std::pair<MatrixXd, std::vector<RescaleParam>> rescale(
    const MatrixXd& raw, const std::vector<std::string>& names = {}) {
    MatrixXd out(raw.rows(), raw.cols());
    std::vector<RescaleParam> params(static_cast<std::size_t>(raw.cols()));
    for (Index k = 0; k < raw.cols(); ++k) {
        const std::string name =
            k < static_cast<Index>(names.size()) ? names[k] : "x" + std::to_string(k + 1);
        if (raw.rows() == 0) throw DegenerateCovariate(name, "covariate '" + name + "' is empty");
        const double lo = raw.col(k).minCoeff();
        const double hi = raw.col(k).maxCoeff();
        if (!std::isfinite(lo) || !std::isfinite(hi))
            throw DegenerateCovariate(name, "covariate '" + name + "' has non-finite values");
        if (!(hi > lo)) throw DegenerateCovariate(name, "covariate '" + name + "' is constant");
        params[k] = {lo, hi};
        for (Index i = 0; i < raw.rows(); ++i) out(i, k) = params[k].to_unit(raw(i, k));
        // Pin the extremes exactly; the affine map can round to 1 - eps.
        for (Index i = 0; i < raw.rows(); ++i) {
            if (raw(i, k) == lo) out(i, k) = 0.0;
            if (raw(i, k) == hi) out(i, k) = 1.0;
        }
    }
    return {std::move(out), std::move(params)};
}

inline MatrixXd unscale(const MatrixXd& unit, const std::vector<RescaleParam>& params) {
    if (static_cast<std::size_t>(unit.cols()) != params.size())
        throw StructuralError("rescale parameter count does not match columns");
    MatrixXd out(unit.rows(), unit.cols());
    for (Index k = 0; k < unit.cols(); ++k)
        for (Index i = 0; i < unit.rows(); ++i) out(i, k) = params[k].from_unit(unit(i, k));
    return out;
}

/// Response, continuous covariates X (rescaled to [0,1]) and interaction
/// covariates T.
struct Dataset {
    VectorXd y;
    MatrixXd X;  // n x d, entries in [0,1]
    MatrixXd T;  // n x p
    std::vector<RescaleParam> rescale_params;
    std::vector<std::string> x_names;
    std::vector<std::string> t_names;
    std::vector<bool> x_linear;  // true: covariate enters linearly

    Index n() const { return y.size(); }
    Index d() const { return X.cols(); }
    Index p() const { return T.cols(); }

    bool is_linear(Index k) const {
        return k < static_cast<Index>(x_linear.size()) && x_linear[static_cast<std::size_t>(k)];
    }

    /// Fills default names/params and checks the invariants.
    void validate() {
        if (n() < 2) throw StructuralError("dataset needs at least 2 rows");
        if (X.rows() != n() || T.rows() != n()) throw StructuralError("dataset row counts differ");
        if (x_names.empty())
            for (Index k = 0; k < d(); ++k) x_names.push_back("x" + std::to_string(k + 1));
        if (t_names.empty())
            for (Index l = 0; l < p(); ++l) t_names.push_back("t" + std::to_string(l + 1));
        if (rescale_params.empty()) rescale_params.assign(static_cast<std::size_t>(d()), {});
        if (x_linear.empty()) x_linear.assign(static_cast<std::size_t>(d()), false);
        if (static_cast<Index>(x_names.size()) != d() || static_cast<Index>(t_names.size()) != p() ||
            static_cast<Index>(rescale_params.size()) != d() ||
            static_cast<Index>(x_linear.size()) != d())
            throw StructuralError("dataset metadata length mismatch");
        if (!y.allFinite()) throw StructuralError("response has non-finite values");
        if (!T.allFinite()) throw StructuralError("interaction covariates have non-finite values");
        for (Index k = 0; k < d(); ++k)
            for (Index i = 0; i < n(); ++i)
                if (!(X(i, k) >= 0.0 && X(i, k) <= 1.0))
                    throw DomainError("covariate '" + x_names[k] + "' has values outside [0,1]");
    }

    /// Rows picked by index (with repetition), keeping only the T columns in
    /// `t_columns` (all when empty).
    Dataset subset(const std::vector<Index>& rows, const std::vector<int>& t_columns = {}) const {
        Dataset out;
        const auto m = static_cast<Index>(rows.size());
        const bool all_t = t_columns.empty();
        const Index pc = all_t ? p() : static_cast<Index>(t_columns.size());
        out.y.resize(m);
        out.X.resize(m, d());
        out.T.resize(m, pc);
        for (Index i = 0; i < m; ++i) {
            const Index r = rows[static_cast<std::size_t>(i)];
            out.y[i] = y[r];
            out.X.row(i) = X.row(r);
            for (Index c = 0; c < pc; ++c) out.T(i, c) = T(r, all_t ? c : t_columns[c]);
        }
        out.rescale_params = rescale_params;
        out.x_names = x_names;
        out.x_linear = x_linear;
        if (all_t) {
            out.t_names = t_names;
        } else {
            for (int c : t_columns) out.t_names.push_back(t_names[static_cast<std::size_t>(c)]);
        }
        return out;
    }
};

/// Per-covariate term of the additive coefficient: centered splines, or a
/// single centered linear column for covariates flagged as linear.
struct CovariateTerm {
    std::optional<CenteredBasis> spline;
    double linear_mean = 0.0;

    Index size() const { return spline ? spline->size() : 1; }

    void eval(double x, Eigen::Ref<VectorXd> out) const {
        if (spline) {
            spline->eval(x, out);
        } else {
            if (!(x >= 0.0 && x <= 1.0)) throw DomainError("covariate value outside [0,1]");
            out[0] = x - linear_mean;
        }
    }
    VectorXd eval(double x) const {
        VectorXd out(size());
        eval(x, out);
        return out;
    }
};

/// Term for covariate k: knots at N interior quantiles plus empirical
/// centering, or a centered linear column when k is flagged linear.
inline CovariateTerm fit_term(const Dataset& ds, Index k, int num_interior, int order) {
    if (k < 0 || k >= ds.d()) throw StructuralError("covariate index out of range");
    CovariateTerm term;
    const std::string name = k < static_cast<Index>(ds.x_names.size()) ? ds.x_names[k] : "x" + std::to_string(k + 1);
    if (ds.is_linear(k)) {
        if (ds.X.col(k).minCoeff() == ds.X.col(k).maxCoeff())
            throw DegenerateCovariate(name, "covariate '" + name + "' is constant");
        term.linear_mean = ds.X.col(k).mean();
    } else {
        term.spline = fit_centering(make_knots(ds.X.col(k), num_interior, order, name), ds.X.col(k));
    }
    return term;
}

inline std::vector<CovariateTerm> fit_terms(const Dataset& ds, int num_interior, int order) {
    std::vector<CovariateTerm> terms;
    for (Index k = 0; k < ds.d(); ++k) terms.push_back(fit_term(ds, k, num_interior, order));
    return terms;
}

/// Column layout of grouped coefficients. Group g occupies columns
/// [start[g], start[g+1]); inside it an optional intercept column comes first,
/// followed by one block per covariate.
struct GroupLayout {
    std::vector<Index> start{0};
    bool intercept = false;
    std::vector<Index> blocks;  // per-covariate block sizes, shared by every group
    std::vector<int> ids;       // original group index of each group

    Index groups() const { return static_cast<Index>(start.size()) - 1; }
    Index begin(Index g) const { return start[static_cast<std::size_t>(g)]; }
    Index size(Index g) const {
        return start[static_cast<std::size_t>(g) + 1] - start[static_cast<std::size_t>(g)];
    }
    Index cols() const { return start.back(); }
    int id(Index g) const { return ids[static_cast<std::size_t>(g)]; }

    Index intercept_col(Index g) const {
        if (!intercept) throw StructuralError("layout has no intercept column");
        return begin(g);
    }
    /// First column of covariate k's block in group g.
    Index block_begin(Index g, Index k) const {
        Index off = begin(g) + (intercept ? 1 : 0);
        for (Index j = 0; j < k; ++j) off += blocks[static_cast<std::size_t>(j)];
        return off;
    }
    Index block_size(Index k) const { return blocks[static_cast<std::size_t>(k)]; }

    /// Position of original group id, or -1.
    Index find(int group_id) const {
        for (std::size_t g = 0; g < ids.size(); ++g)
            if (ids[g] == group_id) return static_cast<Index>(g);
        return -1;
    }

    static GroupLayout structured(const std::vector<int>& group_ids, bool with_intercept,
                                  std::vector<Index> block_sizes) {
        GroupLayout lay;
        lay.intercept = with_intercept;
        lay.blocks = std::move(block_sizes);
        lay.ids = group_ids;
        Index per = with_intercept ? 1 : 0;
        for (Index b : lay.blocks) per += b;
        for (std::size_t g = 0; g < group_ids.size(); ++g) lay.start.push_back(lay.start.back() + per);
        return lay;
    }

    /// p groups of `size` columns each, no sub-structure.
    static GroupLayout uniform(Index p, Index size) {
        std::vector<int> ids(static_cast<std::size_t>(p));
        for (Index g = 0; g < p; ++g) ids[static_cast<std::size_t>(g)] = static_cast<int>(g);
        return structured(ids, false, {size});
    }

    /// Arbitrary contiguous group sizes.
    static GroupLayout from_sizes(const std::vector<Index>& sizes) {
        GroupLayout lay;
        for (std::size_t g = 0; g < sizes.size(); ++g) {
            lay.start.push_back(lay.start.back() + sizes[g]);
            lay.ids.push_back(static_cast<int>(g));
        }
        return lay;
    }
};

/// Dense grouped design: column (g, intercept) is T_l, column (g, k, j) is
/// B_{j,k}(X_ik) T_il, where l = layout.id(g).
struct GroupedDesign {
    MatrixXd Z;
    GroupLayout layout;
    std::vector<CovariateTerm> terms;
};

namespace detail {

// n x sum(block sizes): per-row evaluation of every covariate term.
inline MatrixXd evaluate_terms(const Dataset& ds, const std::vector<CovariateTerm>& terms) {
    Index width = 0;
    for (const auto& t : terms) width += t.size();
    MatrixXd out(ds.n(), width);
    VectorXd buf;
    Index off = 0;
    for (std::size_t k = 0; k < terms.size(); ++k) {
        const Index sz = terms[k].size();
        buf.resize(sz);
        for (Index i = 0; i < ds.n(); ++i) {
            terms[k].eval(ds.X(i, static_cast<Index>(k)), buf);
            out.row(i).segment(off, sz) = buf.transpose();
        }
        off += sz;
    }
    return out;
}

} // namespace detail

/// Full selection-stage design over the groups in `groups` (all p when empty).
inline GroupedDesign build_design(const Dataset& ds, const std::vector<CovariateTerm>& terms,
                                  std::vector<int> groups = {}) {
    if (static_cast<Index>(terms.size()) != ds.d())
        throw StructuralError("number of covariate terms does not match d");
    if (groups.empty())
        for (Index l = 0; l < ds.p(); ++l) groups.push_back(static_cast<int>(l));
    for (int l : groups)
        if (l < 0 || l >= ds.p()) throw StructuralError("group index out of range");

    std::vector<Index> blocks;
    for (const auto& t : terms) blocks.push_back(t.size());
    GroupedDesign out;
    out.layout = GroupLayout::structured(groups, true, blocks);
    out.terms = terms;

    const MatrixXd basis = detail::evaluate_terms(ds, terms);
    out.Z.resize(ds.n(), out.layout.cols());
    for (Index g = 0; g < out.layout.groups(); ++g) {
        const auto tl = ds.T.col(out.layout.id(g));
        const Index c0 = out.layout.begin(g);
        out.Z.col(c0) = tl;
        out.Z.middleCols(c0 + 1, basis.cols()) = basis.array().colwise() * tl.array();
    }
    return out;
}

/// Second-step design for covariate k: one block B^S_k(X_ik) T_il per
/// selected group, no intercept column.
inline GroupedDesign build_step2_design(const Dataset& ds, const std::vector<int>& selected, Index k,
                                        const CovariateTerm& term) {
    if (selected.empty()) throw NothingSelected();
    if (k < 0 || k >= ds.d()) throw StructuralError("covariate index out of range");
    for (int l : selected)
        if (l < 0 || l >= ds.p()) throw StructuralError("group index out of range");

    GroupedDesign out;
    out.layout = GroupLayout::structured(selected, false, {term.size()});
    out.terms = {term};
    MatrixXd basis(ds.n(), term.size());
    VectorXd buf(term.size());
    for (Index i = 0; i < ds.n(); ++i) {
        term.eval(ds.X(i, k), buf);
        basis.row(i) = buf.transpose();
    }
    out.Z.resize(ds.n(), out.layout.cols());
    for (Index g = 0; g < out.layout.groups(); ++g)
        out.Z.middleCols(out.layout.begin(g), term.size()) =
            basis.array().colwise() * ds.T.col(out.layout.id(g)).array();
    return out;
}

} // namespace gacm

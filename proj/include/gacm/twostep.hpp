#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "design.hpp"
#include "error.hpp"
#include "family.hpp"
#include "solver.hpp"
#include "truth.hpp"

namespace gacm {

/// Undersmoothed knot count floor(c n^{1.01/(2q+1)}).
inline int knot_count_initial(Index n, int q, double c = 2.0) {
    if (n < 2) throw ArgumentError("knot count needs n >= 2");
    if (q < 1) throw ArgumentError("spline order must be >= 1");
    const double v = c * std::pow(static_cast<double>(n), 1.01 / (2.0 * q + 1.0));
    return static_cast<int>(std::floor(v * (1.0 + 1e-12)));
}

/// Unpenalized refit on the selected groups at N_ini knots.
struct InitialFit {
    int num_interior = 0;
    int order = 4;
    std::vector<int> selected;
    std::vector<CovariateTerm> terms;
    GroupCoef coef;
    FitReport report;

    Index s() const { return static_cast<Index>(selected.size()); }
    double intercept(Index j) const { return coef.coef[coef.layout.intercept_col(j)]; }
    auto block(Index j, Index k) const {
        return coef.coef.segment(coef.layout.block_begin(j, k), coef.layout.block_size(k));
    }
    /// alpha-hat_{l k}(x) for the j-th selected group.
    double curve(Index j, Index k, double x) const {
        return terms[static_cast<std::size_t>(k)].eval(x).dot(block(j, k));
    }
};

inline InitialFit fit_initial(const Dataset& ds, const std::vector<int>& selected, const Family& fam, int q = 4,
                              double c = 2.0, const SolverOptions& opts = {}) {
    if (selected.empty()) throw NothingSelected();
    InitialFit fit;
    fit.order = q;
    fit.selected = selected;
    fit.num_interior = knot_count_initial(ds.n(), q, c);
    fit.terms = fit_terms(ds, fit.num_interior, q);
    const GroupedDesign gd = build_design(ds, fit.terms, selected);
    auto [coef, rep] = fit_unpenalized(gd.Z, gd.layout, ds.y, fam, VectorXd::Zero(ds.n()), opts);
    fit.coef = std::move(coef);
    fit.report = std::move(rep);
    return fit;
}

/// Values of the additive components on the training rows, for the
/// selected groups: intercepts a0[j], components comp[k](i, j), and the
/// contribution `extra` of everything outside the selected set.
struct Components {
    VectorXd a0;
    std::vector<MatrixXd> comp;
    VectorXd extra;
};

inline Components components_from_initial(const InitialFit& init, const Dataset& ds) {
    Components c;
    const Index s = init.s();
    c.a0.resize(s);
    for (Index j = 0; j < s; ++j) c.a0[j] = init.intercept(j);
    for (Index k = 0; k < ds.d(); ++k) {
        const auto& term = init.terms[static_cast<std::size_t>(k)];
        MatrixXd basis(ds.n(), term.size());
        VectorXd buf(term.size());
        for (Index i = 0; i < ds.n(); ++i) {
            term.eval(ds.X(i, k), buf);
            basis.row(i) = buf.transpose();
        }
        MatrixXd m(ds.n(), s);
        for (Index j = 0; j < s; ++j) m.col(j) = basis * init.block(j, k);
        c.comp.push_back(std::move(m));
    }
    c.extra = VectorXd::Zero(ds.n());
    return c;
}

/// True components; groups outside `selected` enter through `extra`.
inline Components components_from_truth(const TruthSpec& truth, const Dataset& ds,
                                        const std::vector<int>& selected) {
    if (truth.d != ds.d()) throw ArgumentError("truth has a different number of covariates");
    if (truth.p != ds.p()) throw ArgumentError("truth has a different number of groups");
    Components c;
    const auto s = static_cast<Index>(selected.size());
    c.a0.resize(s);
    for (Index j = 0; j < s; ++j) c.a0[j] = truth.alpha0(selected[static_cast<std::size_t>(j)]);
    for (Index k = 0; k < ds.d(); ++k) {
        MatrixXd m(ds.n(), s);
        for (Index j = 0; j < s; ++j)
            for (Index i = 0; i < ds.n(); ++i) m(i, j) = truth.alpha(selected[static_cast<std::size_t>(j)], k, ds.X(i, k));
        c.comp.push_back(std::move(m));
    }
    c.extra = VectorXd::Zero(ds.n());
    for (int l : truth.signal) {
        if (std::find(selected.begin(), selected.end(), l) != selected.end()) continue;
        for (Index i = 0; i < ds.n(); ++i) {
            double a = truth.alpha0(l);
            for (Index k = 0; k < ds.d(); ++k) a += truth.alpha(l, k, ds.X(i, k));
            c.extra[i] += a * ds.T(i, l);
        }
    }
    return c;
}

/// Second-step estimate of alpha_{l k} for every selected l.
struct StepTwoFit {
    Index k = 0;
    int num_interior = 0;
    std::vector<int> selected;
    CovariateTerm term;
    GroupCoef coef;          // one block per selected group, no intercept
    VectorXd intercepts;     // alpha-hat^S_{l0}
    VectorXd offset;         // curve-pass offset
    VectorXd eta;            // offset + curve part: the full fitted predictor
    double loss = 0.0;       // L_n^S at the fit
    FitReport report;
    FitReport intercept_report;

    double curve(Index j, double x) const { return term.eval(x).dot(coef.block(j)); }
    VectorXd curve_on(Index j, const std::vector<double>& grid) const {
        VectorXd out(static_cast<Index>(grid.size()));
        for (std::size_t g = 0; g < grid.size(); ++g) out[static_cast<Index>(g)] = curve(j, grid[g]);
        return out;
    }
};

namespace detail {

inline void check_components(const Components& c, const Dataset& ds, Index s) {
    if (c.a0.size() != s || static_cast<Index>(c.comp.size()) != ds.d() || c.extra.size() != ds.n())
        throw ArgumentError("components do not cover the selected groups");
    for (const auto& m : c.comp)
        if (m.rows() != ds.n() || m.cols() != s) throw ArgumentError("component matrix has the wrong shape");
}

} // namespace detail

/// Offsets, curve fit and intercept pass for covariate k, given component
/// values. fit_second_step and fit_oracle both land here.
inline StepTwoFit fit_second_step(const Dataset& ds, const std::vector<int>& selected, const Components& comp,
                                  Index k, int num_interior, const Family& fam, int q = 4,
                                  const SolverOptions& opts = {}) {
    if (selected.empty()) throw NothingSelected();
    if (k < 0 || k >= ds.d()) throw StructuralError("covariate index out of range");
    const auto s = static_cast<Index>(selected.size());
    detail::check_components(comp, ds, s);

    StepTwoFit fit;
    fit.k = k;
    fit.num_interior = num_interior;
    fit.selected = selected;
    fit.term = fit_term(ds, k, num_interior, q);

    // sum_l {a_l0 + sum_{k' != k} a_lk'} T_l, plus the outside groups.
    fit.offset = comp.extra;
    VectorXd all_curves_offset = comp.extra;
    for (Index j = 0; j < s; ++j) {
        const auto t = ds.T.col(selected[static_cast<std::size_t>(j)]);
        VectorXd a = VectorXd::Constant(ds.n(), comp.a0[j]);
        VectorXd curves = VectorXd::Zero(ds.n());
        for (Index kk = 0; kk < ds.d(); ++kk) {
            curves += comp.comp[static_cast<std::size_t>(kk)].col(j);
            if (kk != k) a += comp.comp[static_cast<std::size_t>(kk)].col(j);
        }
        fit.offset.array() += a.array() * t.array();
        all_curves_offset.array() += curves.array() * t.array();
    }

    const GroupedDesign gd = build_step2_design(ds, selected, k, fit.term);
    auto [coef, rep] = fit_unpenalized(gd.Z, gd.layout, ds.y, fam, fit.offset, opts);
    fit.eta = fit.offset + gd.Z * coef.coef;
    fit.loss = detail::loss(fam, fit.eta, ds.y);
    fit.coef = std::move(coef);
    fit.report = std::move(rep);

    // Intercepts with every curve held at its supplied value.
    MatrixXd Tsel(ds.n(), s);
    for (Index j = 0; j < s; ++j) Tsel.col(j) = ds.T.col(selected[static_cast<std::size_t>(j)]);
    auto [icoef, irep] = fit_unpenalized(Tsel, ds.y, fam, all_curves_offset, opts);
    fit.intercepts = icoef.coef;
    fit.intercept_report = std::move(irep);
    return fit;
}

inline StepTwoFit fit_second_step(const Dataset& ds, const InitialFit& init, Index k, int num_interior,
                                  const Family& fam, const SolverOptions& opts = {}) {
    return fit_second_step(ds, init.selected, components_from_initial(init, ds), k, num_interior, fam, init.order,
                           opts);
}

/// Same estimator with the nuisance components replaced by the truth.
inline StepTwoFit fit_oracle(const Dataset& ds, const std::vector<int>& selected, const TruthSpec& truth, Index k,
                             int num_interior, int q = 4, const SolverOptions& opts = {}) {
    return fit_second_step(ds, selected, components_from_truth(truth, ds, selected), k, num_interior, truth.family,
                           q, opts);
}

struct KnotChoice {
    int num_interior = 0;
    std::vector<int> candidates;
    std::vector<double> bic;
    std::vector<StepTwoFit> fits;
    const StepTwoFit& chosen() const {
        for (std::size_t i = 0; i < candidates.size(); ++i)
            if (candidates[i] == num_interior) return fits[i];
        throw StructuralError("chosen knot count missing from candidates");
    }
};

/// Candidate range [floor(n^{1/(2q+1)}), floor(2 n^{1/(2q+1)})].
inline std::vector<int> step2_knot_candidates(Index n, int q) {
    const double r = std::pow(static_cast<double>(n), 1.0 / (2.0 * q + 1.0));
    const int lo = static_cast<int>(std::floor(r * (1.0 + 1e-12)));
    const int hi = static_cast<int>(std::floor(2.0 * r * (1.0 + 1e-12)));
    std::vector<int> out;
    for (int N = lo; N <= hi; ++N) out.push_back(N);
    return out;
}

/// BIC(N) = 2 L_n^S + d (N + q) log n over the candidate range; ties go to
/// the smaller N.
inline KnotChoice choose_knots_bic(const Dataset& ds, const std::vector<int>& selected, const Components& comp,
                                   Index k, const Family& fam, int q = 4, const SolverOptions& opts = {}) {
    KnotChoice kc;
    kc.candidates = step2_knot_candidates(ds.n(), q);
    if (kc.candidates.empty()) throw ArgumentError("empty knot candidate range");
    double best = std::numeric_limits<double>::infinity();
    for (int N : kc.candidates) {
        kc.fits.push_back(fit_second_step(ds, selected, comp, k, N, fam, q, opts));
        const double b = 2.0 * kc.fits.back().loss +
                         static_cast<double>(ds.d()) * (N + q) * std::log(static_cast<double>(ds.n()));
        kc.bic.push_back(b);
        if (b < best) {
            best = b;
            kc.num_interior = N;
        }
    }
    return kc;
}

inline KnotChoice choose_knots_bic(const Dataset& ds, const InitialFit& init, Index k, const Family& fam,
                                   const SolverOptions& opts = {}) {
    return choose_knots_bic(ds, init.selected, components_from_initial(init, ds), k, fam, init.order, opts);
}

} // namespace gacm

#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "design.hpp"
#include "error.hpp"
#include "family.hpp"

namespace gacm {

/// Tolerances of the IRLS and LQA loops. The defaults are the documented
/// engineering choices; every one is a knob.
struct SolverOptions {
    int max_irls = 100;
    double irls_tol = 1e-10;        // relative objective change
    int max_outer = 200;
    double coef_tol = 1e-7;         // relative coefficient change (LQA)
    double eps_lqa = 1e-6;          // floor on ||gamma_l|| in the LQA weight
    double drop_factor = 1e-4;      // groups below drop_factor*sqrt(size) freeze at zero
    int max_halving = 20;
    int max_reactivations = 25;
    double kkt_tol = 1e-4;
    int max_polish = 50;            // proximal-Newton steps after LQA
    int max_sweeps = 1000;          // block coordinate sweeps per polish step
};

/// Coefficients aligned to a GroupLayout, with cached group norms and the
/// fixed offset the fit was computed with.
struct GroupCoef {
    VectorXd coef;
    GroupLayout layout;
    VectorXd norms;
    VectorXd offset;

    GroupCoef() = default;
    GroupCoef(VectorXd c, GroupLayout lay, VectorXd off)
        : coef(std::move(c)), layout(std::move(lay)), offset(std::move(off)) {
        if (coef.size() != layout.cols()) throw StructuralError("coefficient length does not match layout");
        refresh_norms();
    }

    Index groups() const { return layout.groups(); }
    auto block(Index g) const { return coef.segment(layout.begin(g), layout.size(g)); }
    auto block(Index g) { return coef.segment(layout.begin(g), layout.size(g)); }
    double norm(Index g) const { return norms[g]; }

    void refresh_norms() {
        norms.resize(layout.groups());
        for (Index g = 0; g < layout.groups(); ++g) norms[g] = block(g).norm();
    }

    /// Layout ids of groups with positive norm, in layout order.
    std::vector<int> selected_ids() const {
        std::vector<int> out;
        for (Index g = 0; g < groups(); ++g)
            if (norms[g] > 0.0) out.push_back(layout.id(g));
        return out;
    }
};

struct FitReport {
    std::vector<double> objective;  // one entry per accepted iterate
    int outer_iterations = 0;
    int inner_iterations = 0;
    int reactivations = 0;
    bool converged = false;
    bool jitter_applied = false;
    bool separation = false;
    double grad_max = 0.0;
    std::vector<double> kkt;  // per-group KKT residuals (penalized fits)
    std::vector<std::string> notes;
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline void check_problem(const MatrixXd& Z, const GroupLayout& layout, const VectorXd& y,
                          const VectorXd& offset) {
    if (Z.rows() != y.size()) throw StructuralError("design rows do not match response length");
    if (Z.cols() != layout.cols()) throw StructuralError("design columns do not match layout");
    if (offset.size() != y.size()) throw StructuralError("offset length does not match response");
    if (!offset.allFinite()) throw ArgumentError("offset has non-finite entries");
}

inline double loss(const Family& fam, const VectorXd& eta, const VectorXd& y) {
    double s = 0.0;
    for (Index i = 0; i < y.size(); ++i) s += fam.loss_eta(eta[i], y[i]);
    return s;
}

inline void working(const Family& fam, const VectorXd& eta, const VectorXd& y, VectorXd& q1,
                    VectorXd& w) {
    q1.resize(y.size());
    w.resize(y.size());
    for (Index i = 0; i < y.size(); ++i) {
        const QDerivs qd = fam.q_derivs(eta[i], y[i]);
        q1[i] = qd.q1;
        w[i] = qd.w;
    }
}

// Lower triangle of Z^T diag(w) Z.
inline MatrixXd weighted_gram(const MatrixXd& Z, const VectorXd& w) {
    MatrixXd Zw = Z.array().colwise() * w.array().sqrt();
    MatrixXd G = MatrixXd::Zero(Z.cols(), Z.cols());
    G.selfadjointView<Eigen::Lower>().rankUpdate(Zw.transpose());
    return G;
}

// Solves A x = b for SPD A (lower triangle used). On failure adds
// 1e-10 * trace / cols to the diagonal once; still failing throws.
inline VectorXd spd_solve(MatrixXd A, const VectorXd& b, bool& jittered) {
    Eigen::LLT<MatrixXd, Eigen::Lower> llt(A);
    // A pivot at roundoff level relative to the diagonal means numerical rank loss.
    const double dmax = A.diagonal().cwiseAbs().maxCoeff();
    const bool well_posed = llt.info() == Eigen::Success &&
        llt.matrixLLT().diagonal().array().square().minCoeff() > 1e-13 * dmax;
    if (well_posed) {
        VectorXd x = llt.solve(b);
        if (x.allFinite()) return x;
    }
    double jitter = 1e-10 * A.diagonal().sum() / static_cast<double>(A.rows());
    if (!(jitter > 0.0)) jitter = 1e-10;
    A.diagonal().array() += jitter;
    llt.compute(A);
    if (llt.info() != Eigen::Success) throw NumericalError("weighted Gram matrix is singular");
    VectorXd x = llt.solve(b);
    if (!x.allFinite()) throw NumericalError("weighted Gram solve produced non-finite values");
    jittered = true;
    return x;
}

// Columns of the listed groups, concatenated.
inline std::vector<Index> group_columns(const GroupLayout& layout, const std::vector<Index>& groups) {
    std::vector<Index> cols;
    for (Index g : groups)
        for (Index c = 0; c < layout.size(g); ++c) cols.push_back(layout.begin(g) + c);
    return cols;
}

inline MatrixXd take_columns(const MatrixXd& Z, const std::vector<Index>& cols) {
    MatrixXd out(Z.rows(), static_cast<Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = Z.col(cols[j]);
    return out;
}

// argmin_u 0.5 u'Hu - a'u + c||u|| for a block with H = V diag(lam) V'.
// Zero when ||a|| <= c; otherwise u = (H + sI)^{-1} a with ||u|| = c/s, s
// found by bisection on the increasing map s -> s||(H + sI)^{-1} a|| - c.
inline VectorXd block_prox_exact(const Eigen::SelfAdjointEigenSolver<MatrixXd>& eig,
                                 const VectorXd& a, double c) {
    if (a.norm() <= c) return VectorXd::Zero(a.size());
    const VectorXd b = eig.eigenvectors().transpose() * a;
    const double floor = 1e-12 * std::max(eig.eigenvalues().maxCoeff(), 1e-300);
    const VectorXd lam = eig.eigenvalues().cwiseMax(floor);
    auto h = [&](double s) { return s * (b.array() / (lam.array() + s)).matrix().norm() - c; };
    if (c == 0.0) return eig.eigenvectors() * (b.array() / lam.array()).matrix();
    double lo = 0.0, hi = std::max(c, lam.maxCoeff());
    while (h(hi) <= 0.0) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (h(mid) > 0.0 ? hi : lo) = mid;
    }
    const double s = 0.5 * (lo + hi);
    return eig.eigenvectors() * (b.array() / (lam.array() + s)).matrix();
}

inline bool any_clamped(const Family& fam, const VectorXd& eta) {
    if (fam.kind() != FamilyKind::BernoulliLogit) return false;
    for (Index i = 0; i < eta.size(); ++i) {
        const double mu = fam.mean(eta[i]);
        if (mu <= Family::kMeanClamp || mu >= 1.0 - Family::kMeanClamp) return true;
    }
    return false;
}

} // namespace detail

/// Sum of quasi-likelihood losses at coefficients `coef`.
inline double unpenalized_objective(const MatrixXd& Z, const VectorXd& y, const Family& fam,
                                    const VectorXd& coef, const VectorXd& offset) {
    return detail::loss(fam, offset + Z * coef, y);
}

/// sum_i Q(mu_i, y_i) + n * lambda * sum_l w_l ||gamma_l||, infinite-weight
/// groups contributing 0 when zero.
inline double penalized_objective(const MatrixXd& Z, const GroupLayout& layout, const VectorXd& y,
                                  const Family& fam, double lambda, const VectorXd& weights,
                                  const VectorXd& coef, const VectorXd& offset) {
    double pen = 0.0;
    const double n = static_cast<double>(y.size());
    for (Index g = 0; g < layout.groups(); ++g) {
        const double nrm = coef.segment(layout.begin(g), layout.size(g)).norm();
        if (nrm == 0.0) continue;
        if (!std::isfinite(weights[g])) return detail::kInf;
        pen += weights[g] * nrm;
    }
    return unpenalized_objective(Z, y, fam, coef, offset) + n * lambda * pen;
}

/// Gradient of the unpenalized objective, Z^T q1.
inline VectorXd loss_gradient(const MatrixXd& Z, const VectorXd& y, const Family& fam,
                              const VectorXd& coef, const VectorXd& offset) {
    VectorXd q1, w;
    detail::working(fam, offset + Z * coef, y, q1, w);
    return Z.transpose() * q1;
}

/// Fisher-scoring IRLS with step halving. Stops when the relative objective
/// change drops below opts.irls_tol or after opts.max_irls iterations.
inline std::pair<GroupCoef, FitReport> fit_unpenalized(const MatrixXd& Z, const GroupLayout& layout,
                                                       const VectorXd& y, const Family& fam,
                                                       const VectorXd& offset,
                                                       const SolverOptions& opts = {},
                                                       const VectorXd* start = nullptr) {
    detail::check_problem(Z, layout, y, offset);
    FitReport rep;
    VectorXd beta = start ? *start : VectorXd::Zero(Z.cols());
    if (beta.size() != Z.cols()) throw StructuralError("start vector has wrong length");

    VectorXd eta = offset + Z * beta;
    double f = detail::loss(fam, eta, y);
    if (!std::isfinite(f)) throw NumericalError("non-finite objective at start");
    rep.objective.push_back(f);

    VectorXd q1, w, grad;
    int polish = 0;
    bool small_change = false;
    for (int it = 0; it < opts.max_irls + 3; ++it) {
        detail::working(fam, eta, y, q1, w);
        grad = Z.transpose() * q1;
        if (Z.cols() == 0) {
            rep.converged = true;
            break;
        }
        MatrixXd H = detail::weighted_gram(Z, w);
        const VectorXd delta = detail::spd_solve(std::move(H), -grad, rep.jitter_applied);

        double step = 1.0;
        bool accepted = false;
        VectorXd beta_try, eta_try;
        double f_try = f;
        for (int h = 0; h <= opts.max_halving; ++h) {
            beta_try = beta + step * delta;
            eta_try = offset + Z * beta_try;
            f_try = detail::loss(fam, eta_try, y);
            // Once converged, polishing steps may move f only at roundoff level.
            const double allow = small_change ? 1e-14 * std::max(1.0, std::abs(f)) : 0.0;
            if (std::isfinite(f_try) && f_try <= f + allow) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        ++rep.inner_iterations;
        if (!accepted) {
            rep.converged = true;
            break;
        }
        const double rel = std::abs(f - f_try) / std::max(std::abs(f), 1e-300);
        beta = beta_try;
        eta = eta_try;
        f = f_try;
        rep.objective.push_back(f);
        if (small_change) {
            if (++polish >= 3) break;
            continue;
        }
        if (rel < opts.irls_tol) {
            rep.converged = true;
            small_change = true;
        } else if (it + 1 >= opts.max_irls) {
            break;
        }
    }
    detail::working(fam, eta, y, q1, w);
    grad = Z.transpose() * q1;
    rep.grad_max = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
    rep.separation = detail::any_clamped(fam, eta);
    if (rep.separation) rep.notes.push_back("fitted means reached the clamp: separation");
    if (rep.jitter_applied) rep.notes.push_back("ridge jitter applied to the weighted Gram");
    rep.outer_iterations = rep.inner_iterations;
    return {GroupCoef(std::move(beta), layout, offset), std::move(rep)};
}

/// Plain-matrix overload: every column is its own group.
inline std::pair<GroupCoef, FitReport> fit_unpenalized(const MatrixXd& Z, const VectorXd& y,
                                                       const Family& fam, const VectorXd& offset,
                                                       const SolverOptions& opts = {}) {
    return fit_unpenalized(Z, GroupLayout::uniform(Z.cols(), 1), y, fam, offset, opts);
}

/// Smallest lambda whose penalized solution is identically zero:
/// max_l ||grad_l Q(0)|| / (n w_l) over finite-weight groups.
inline double lambda_max(const MatrixXd& Z, const GroupLayout& layout, const VectorXd& y,
                         const Family& fam, const VectorXd& weights, const VectorXd& offset) {
    detail::check_problem(Z, layout, y, offset);
    if (weights.size() != layout.groups()) throw StructuralError("weight count does not match groups");
    VectorXd q1, w;
    detail::working(fam, offset, y, q1, w);
    const VectorXd grad = Z.transpose() * q1;
    double best = -1.0;
    for (Index g = 0; g < layout.groups(); ++g) {
        if (!std::isfinite(weights[g])) continue;
        const double v = grad.segment(layout.begin(g), layout.size(g)).norm() /
                         (static_cast<double>(y.size()) * weights[g]);
        best = std::max(best, v);
    }
    if (best < 0.0) throw ArgumentError("all group weights are infinite");
    return best;
}

struct KktReport {
    std::vector<double> residual;  // relative to n*lambda*w_l (absolute when that is 0)
    std::vector<bool> pass;
    bool all_pass = true;
};

/// Optimality certificate for the group-penalized objective. Nonzero groups:
/// ||g_l + c_l gamma_l/||gamma_l|| || <= tol * c_l. Zero groups:
/// ||g_l|| <= c_l (1 + tol). c_l = n lambda w_l; infinite weights always pass.
inline KktReport kkt_check(const MatrixXd& Z, const GroupLayout& layout, const VectorXd& y,
                           const Family& fam, double lambda, const VectorXd& weights,
                           const GroupCoef& sol, double tol = 1e-4) {
    detail::check_problem(Z, layout, y, sol.offset);
    if (sol.coef.size() != Z.cols()) throw StructuralError("solution length does not match design");
    const VectorXd grad = loss_gradient(Z, y, fam, sol.coef, sol.offset);
    const double n = static_cast<double>(y.size());
    KktReport rep;
    for (Index g = 0; g < layout.groups(); ++g) {
        if (!std::isfinite(weights[g])) {
            rep.residual.push_back(0.0);
            rep.pass.push_back(true);
            continue;
        }
        const double c = n * lambda * weights[g];
        const double scale = c > 0.0 ? c : 1.0;
        const auto gb = grad.segment(layout.begin(g), layout.size(g));
        const auto cb = sol.coef.segment(layout.begin(g), layout.size(g));
        const double nrm = cb.norm();
        double r;
        bool ok;
        if (nrm > 0.0) {
            r = (gb + c * cb / nrm).norm() / scale;
            ok = r <= tol;
        } else {
            r = gb.norm() / scale - (c > 0.0 ? 1.0 : 0.0);
            ok = r <= tol;
        }
        rep.residual.push_back(r);
        rep.pass.push_back(ok);
        rep.all_pass = rep.all_pass && ok;
    }
    return rep;
}

/// Minimizes sum_i Q + n lambda sum_l w_l ||gamma_l|| by local quadratic
/// approximation of the group norms. Each outer iterate does one Fisher
/// scoring step on the penalized quadratic surrogate, with step halving on
/// the true objective. Groups whose norm falls below drop_factor*sqrt(size)
/// are frozen at zero when that does not raise the objective. Zero groups
/// violating their KKT condition at convergence are restarted from a block
/// proximal-gradient step, since LQA cannot leave zero on its own. A
/// proximal-Newton polish on the active set follows each LQA round.
inline std::pair<GroupCoef, FitReport> fit_group_penalized(
    const MatrixXd& Z, const GroupLayout& layout, const VectorXd& y, const Family& fam,
    double lambda, const VectorXd& weights, const VectorXd& offset, const SolverOptions& opts = {},
    const VectorXd* warm = nullptr) {
    detail::check_problem(Z, layout, y, offset);
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ArgumentError("lambda must be finite and >= 0");
    if (weights.size() != layout.groups()) throw StructuralError("weight count does not match groups");
    for (Index g = 0; g < weights.size(); ++g)
        if (!(weights[g] > 0.0)) throw ArgumentError("group weights must lie in (0, inf]");

    const Index G = layout.groups();
    const double n = static_cast<double>(y.size());
    std::vector<Index> finite;
    for (Index g = 0; g < G; ++g)
        if (std::isfinite(weights[g])) finite.push_back(g);

    if (lambda == 0.0) {
        const auto cols = detail::group_columns(layout, finite);
        const MatrixXd Zf = detail::take_columns(Z, cols);
        auto [sub, rep] =
            fit_unpenalized(Zf, GroupLayout::uniform(Zf.cols(), 1), y, fam, offset, opts);
        VectorXd beta = VectorXd::Zero(Z.cols());
        for (std::size_t j = 0; j < cols.size(); ++j) beta[cols[j]] = sub.coef[static_cast<Index>(j)];
        GroupCoef out(std::move(beta), layout, offset);
        rep.kkt = kkt_check(Z, layout, y, fam, 0.0, weights, out, opts.kkt_tol).residual;
        return {std::move(out), std::move(rep)};
    }

    FitReport rep;
    VectorXd beta = VectorXd::Zero(Z.cols());
    if (warm) {
        if (warm->size() != Z.cols()) throw StructuralError("warm start has wrong length");
        beta = *warm;
        for (Index g = 0; g < G; ++g)
            if (!std::isfinite(weights[g])) beta.segment(layout.begin(g), layout.size(g)).setZero();
    }
    VectorXd cost(G);
    for (Index g = 0; g < G; ++g) cost[g] = std::isfinite(weights[g]) ? n * lambda * weights[g] : 0.0;

    auto group_norm = [&](const VectorXd& b, Index g) {
        return b.segment(layout.begin(g), layout.size(g)).norm();
    };
    auto penalty = [&](const VectorXd& b, const std::vector<Index>& groups) {
        double s = 0.0;
        for (Index g : groups) s += cost[g] * group_norm(b, g);
        return s;
    };

    std::vector<Index> active;
    for (Index g : finite)
        if (group_norm(beta, g) > 0.0) active.push_back(g);

    // eta tracks offset + Z beta restricted to the active groups.
    std::vector<Index> cols = detail::group_columns(layout, active);
    MatrixXd ZA = detail::take_columns(Z, cols);
    auto gather = [&](const VectorXd& b) {
        VectorXd out(static_cast<Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j) out[static_cast<Index>(j)] = b[cols[j]];
        return out;
    };
    auto scatter = [&](VectorXd& b, const VectorXd& sub) {
        for (std::size_t j = 0; j < cols.size(); ++j) b[cols[j]] = sub[static_cast<Index>(j)];
    };
    VectorXd eta = offset + ZA * gather(beta);
    double f = detail::loss(fam, eta, y) + penalty(beta, active);
    if (!std::isfinite(f)) throw NumericalError("non-finite objective at start");
    rep.objective.push_back(f);

    VectorXd q1, w;
    const double tiny = 1e-12;
    for (int round = 0;; ++round) {
        // LQA on the current active set.
        bool lqa_converged = active.empty();
        for (int t = 0; t < opts.max_outer && !active.empty(); ++t) {
            ++rep.outer_iterations;
            const VectorXd bA = gather(beta);
            detail::working(fam, eta, y, q1, w);
            const VectorXd gA = ZA.transpose() * q1;
            MatrixXd H = detail::weighted_gram(ZA, w);
            VectorXd dpen(bA.size());
            Index pos = 0;
            for (Index g : active) {
                const double d = cost[g] / std::max(group_norm(beta, g), opts.eps_lqa);
                dpen.segment(pos, layout.size(g)).setConstant(d);
                pos += layout.size(g);
            }
            H.diagonal() += dpen;
            const VectorXd delta =
                detail::spd_solve(std::move(H), -(gA + dpen.cwiseProduct(bA)), rep.jitter_applied);

            double step = 1.0;
            bool accepted = false;
            VectorXd b_try, eta_try;
            double f_try = f;
            VectorXd beta_try = beta;
            for (int h = 0; h <= opts.max_halving; ++h) {
                b_try = bA + step * delta;
                eta_try = offset + ZA * b_try;
                scatter(beta_try, b_try);
                f_try = detail::loss(fam, eta_try, y) + penalty(beta_try, active);
                ++rep.inner_iterations;
                if (std::isfinite(f_try) && f_try <= f) {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) {
                lqa_converged = true;
                break;
            }
            const double change = (b_try - bA).norm() / std::max(bA.norm(), tiny);
            beta = beta_try;
            eta = eta_try;
            f = f_try;

            // Freeze vanishing groups if that does not raise the objective.
            std::vector<Index> keep, drop;
            for (Index g : active) {
                const double thr = opts.drop_factor * std::sqrt(static_cast<double>(layout.size(g)));
                (group_norm(beta, g) < thr ? drop : keep).push_back(g);
            }
            if (!drop.empty()) {
                VectorXd beta_z = beta;
                for (Index g : drop) beta_z.segment(layout.begin(g), layout.size(g)).setZero();
                const auto keep_cols = detail::group_columns(layout, keep);
                MatrixXd ZK = detail::take_columns(Z, keep_cols);
                VectorXd bK(static_cast<Index>(keep_cols.size()));
                for (std::size_t j = 0; j < keep_cols.size(); ++j)
                    bK[static_cast<Index>(j)] = beta_z[keep_cols[j]];
                VectorXd eta_z = offset + ZK * bK;
                const double f_z = detail::loss(fam, eta_z, y) + penalty(beta_z, keep);
                if (std::isfinite(f_z) && f_z <= f) {
                    beta = std::move(beta_z);
                    eta = std::move(eta_z);
                    f = f_z;
                    active = std::move(keep);
                    cols = keep_cols;
                    ZA = std::move(ZK);
                }
            }
            if (!std::isfinite(f)) throw NumericalError("non-finite penalized objective");
            rep.objective.push_back(f);
            if (change < opts.coef_tol) {
                lqa_converged = true;
                break;
            }
        }
        rep.converged = lqa_converged;

        // LQA contracts slowly on groups with small nonzero norm. Finish with
        // proximal-Newton steps on the active set: exact block coordinate
        // descent on the penalized quadratic model, then step halving on the
        // true objective.
        auto active_kkt_ok = [&](const VectorXd& q) {
            const VectorXd gA = ZA.transpose() * q;
            Index pos = 0;
            for (Index g : active) {
                const Index sz = layout.size(g);
                const auto bg = beta.segment(layout.begin(g), sz);
                const double nb = bg.norm();
                const double r = nb > 0.0 ? (gA.segment(pos, sz) + cost[g] * bg / nb).norm()
                                          : gA.segment(pos, sz).norm() - cost[g];
                if (r > 1e-2 * opts.kkt_tol * std::max(cost[g], tiny)) return false;
                pos += sz;
            }
            return true;
        };
        for (int it = 0; it < opts.max_polish && !active.empty(); ++it) {
            detail::working(fam, eta, y, q1, w);
            if (active_kkt_ok(q1)) break;
            const VectorXd bA = gather(beta);
            const VectorXd gA = ZA.transpose() * q1;
            MatrixXd H = detail::weighted_gram(ZA, w);
            H = H.selfadjointView<Eigen::Lower>();
            std::vector<Index> offs;
            std::vector<Eigen::SelfAdjointEigenSolver<MatrixXd>> eigs;
            Index pos = 0;
            for (Index g : active) {
                const Index sz = layout.size(g);
                offs.push_back(pos);
                eigs.emplace_back(H.block(pos, pos, sz, sz));
                pos += sz;
            }
            VectorXd u = bA;
            VectorXd Hd = VectorXd::Zero(u.size());  // H (u - bA)
            for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
                double moved = 0.0;
                for (std::size_t k = 0; k < active.size(); ++k) {
                    const Index g = active[k], o = offs[k], sz = layout.size(g);
                    const VectorXd ug = u.segment(o, sz);
                    const VectorXd a = H.block(o, o, sz, sz) * ug - gA.segment(o, sz) - Hd.segment(o, sz);
                    const VectorXd un = detail::block_prox_exact(eigs[k], a, cost[g]);
                    const VectorXd du = un - ug;
                    if (du.squaredNorm() == 0.0) continue;
                    Hd.noalias() += H.middleCols(o, sz) * du;
                    u.segment(o, sz) = un;
                    moved = std::max(moved, du.norm());
                }
                if (moved <= 1e-13 * std::max(u.norm(), 1.0)) break;
            }
            const VectorXd delta = u - bA;
            double step = 1.0;
            bool accepted = false;
            for (int h = 0; h <= opts.max_halving; ++h) {
                VectorXd beta_try = beta;
                scatter(beta_try, bA + step * delta);
                VectorXd eta_try = offset + ZA * (bA + step * delta);
                const double f_try = detail::loss(fam, eta_try, y) + penalty(beta_try, active);
                ++rep.inner_iterations;
                if (std::isfinite(f_try) && f_try <= f) {
                    beta = std::move(beta_try);
                    eta = std::move(eta_try);
                    f = f_try;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) break;
            rep.objective.push_back(f);
            // Groups the prox set exactly to zero leave the active set.
            std::vector<Index> keep;
            for (Index g : active)
                if (group_norm(beta, g) > 0.0) keep.push_back(g);
            if (keep.size() != active.size()) {
                active = std::move(keep);
                cols = detail::group_columns(layout, active);
                ZA = detail::take_columns(Z, cols);
            }
            rep.converged = true;
        }

        // KKT screen of the zero finite-weight groups.
        detail::working(fam, eta, y, q1, w);
        std::vector<Index> violators;
        std::vector<VectorXd> grads;
        for (Index g : finite) {
            if (group_norm(beta, g) > 0.0) continue;
            VectorXd gg = Z.middleCols(layout.begin(g), layout.size(g)).transpose() * q1;
            if (gg.norm() > cost[g] * (1.0 + opts.kkt_tol)) {
                violators.push_back(g);
                grads.push_back(std::move(gg));
            }
        }
        if (violators.empty()) break;
        if (round >= opts.max_reactivations) {
            rep.converged = false;
            rep.notes.push_back("reactivation limit reached with KKT violations");
            break;
        }

        // Block proximal-gradient step for each violator, halved jointly until
        // the objective does not increase.
        VectorXd proposal = VectorXd::Zero(Z.cols());
        for (std::size_t v = 0; v < violators.size(); ++v) {
            const Index g = violators[v];
            const MatrixXd Zg = Z.middleCols(layout.begin(g), layout.size(g));
            MatrixXd Hg = detail::weighted_gram(Zg, w);
            Hg = Hg.selfadjointView<Eigen::Lower>();
            const double lip = std::max(Eigen::SelfAdjointEigenSolver<MatrixXd>(Hg, Eigen::EigenvaluesOnly)
                                            .eigenvalues()
                                            .maxCoeff(),
                                        tiny);
            const double gn = grads[v].norm();
            proposal.segment(layout.begin(g), layout.size(g)) = -grads[v] * ((1.0 - cost[g] / gn) / lip);
        }
        std::vector<Index> grown = active;
        grown.insert(grown.end(), violators.begin(), violators.end());
        std::sort(grown.begin(), grown.end());
        const auto grown_cols = detail::group_columns(layout, grown);
        MatrixXd ZG = detail::take_columns(Z, grown_cols);
        bool moved = false;
        double step = 1.0;
        for (int h = 0; h <= opts.max_halving; ++h) {
            VectorXd beta_try = beta + step * proposal;
            VectorXd bG(static_cast<Index>(grown_cols.size()));
            for (std::size_t j = 0; j < grown_cols.size(); ++j)
                bG[static_cast<Index>(j)] = beta_try[grown_cols[j]];
            VectorXd eta_try = offset + ZG * bG;
            const double f_try = detail::loss(fam, eta_try, y) + penalty(beta_try, grown);
            if (std::isfinite(f_try) && f_try <= f) {
                beta = std::move(beta_try);
                eta = std::move(eta_try);
                f = f_try;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) {
            rep.notes.push_back("KKT violators could not be activated without ascent");
            break;
        }
        ++rep.reactivations;
        rep.objective.push_back(f);
        active = std::move(grown);
        cols = grown_cols;
        ZA = std::move(ZG);
    }

    GroupCoef out(std::move(beta), layout, offset);
    const KktReport kkt = kkt_check(Z, layout, y, fam, lambda, weights, out, opts.kkt_tol);
    rep.kkt = kkt.residual;
    rep.grad_max = 0.0;
    rep.separation = detail::any_clamped(fam, eta);
    if (rep.jitter_applied) rep.notes.push_back("ridge jitter applied to the penalized Gram");
    return {std::move(out), std::move(rep)};
}

} // namespace gacm

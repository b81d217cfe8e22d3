#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "design.hpp"
#include "error.hpp"
#include "family.hpp"
#include "parallel.hpp"
#include "solver.hpp"
#include "twostep.hpp"

namespace gacm {

/// Q_L(alpha) = sqrt(2 log(L+1)) d_L(alpha), with
/// d_L(alpha) = 1 - [log(-log(1-alpha)/2) + (log log(L+1) + log 4pi)/2] / (2 log(L+1)).
inline double scb_threshold(int L, double alpha) {
    if (L < 1) throw ArgumentError("L must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ArgumentError("alpha must lie in (0,1)");
    const double a = 2.0 * std::log(static_cast<double>(L) + 1.0);
    const double inner = std::log(-0.5 * std::log1p(-alpha)) +
                         0.5 * (std::log(std::log(static_cast<double>(L) + 1.0)) + std::log(4.0 * std::numbers::pi));
    return std::sqrt(a) * (1.0 - inner / a);
}

/// L+1 equally spaced points 0 < xi_0 < ... < xi_L < 1 with xi_j = (j+1)/(L+2).
inline std::vector<double> band_grid(int L) {
    if (L < 1) throw ArgumentError("L must be >= 1");
    std::vector<double> g(static_cast<std::size_t>(L) + 1);
    for (int j = 0; j <= L; ++j) g[static_cast<std::size_t>(j)] = (j + 1.0) / (L + 2.0);
    return g;
}

namespace detail {

// b' [M^{-1}]_{block} b for each row b of `basis`, where M = Z' diag(w) Z and
// the block covers columns [begin, begin + basis.cols()).
inline VectorXd plugin_sd(const MatrixXd& Z, const VectorXd& w, Index begin, const MatrixXd& basis) {
    MatrixXd M = weighted_gram(Z, w);
    M = M.selfadjointView<Eigen::Lower>();
    Eigen::LLT<MatrixXd> llt(M);
    const double dmax = M.diagonal().cwiseAbs().maxCoeff();
    if (llt.info() != Eigen::Success ||
        llt.matrixLLT().diagonal().array().square().minCoeff() <= 1e-13 * dmax) {
        double jitter = 1e-10 * M.trace() / static_cast<double>(M.rows());
        if (!(jitter > 0.0)) jitter = 1e-10;
        M.diagonal().array() += jitter;
        llt.compute(M);
        if (llt.info() != Eigen::Success) throw NumericalError("information matrix is singular");
    }
    MatrixXd E = MatrixXd::Zero(M.rows(), basis.cols());
    E.middleRows(begin, basis.cols()) = MatrixXd::Identity(basis.cols(), basis.cols());
    const MatrixXd Sblock = llt.solve(E).middleRows(begin, basis.cols());
    VectorXd out(basis.rows());
    for (Index r = 0; r < basis.rows(); ++r) {
        const double v = basis.row(r) * Sblock * basis.row(r).transpose();
        out[r] = std::sqrt(std::max(v, 0.0));
    }
    return out;
}

} // namespace detail

/// Plug-in sigma_{n1}(x) on `grid` for the j-th selected group of a step-2
/// fit, with weights {d mu / d eta}^2 / V(mu) at the fitted predictor.
inline VectorXd sigma_plugin(const Dataset& ds, const StepTwoFit& fit, const Family& fam, Index j,
                             const std::vector<double>& grid) {
    const GroupedDesign gd = build_step2_design(ds, fit.selected, fit.k, fit.term);
    VectorXd q1, w;
    detail::working(fam, fit.eta, ds.y, q1, w);
    MatrixXd basis(static_cast<Index>(grid.size()), fit.term.size());
    for (std::size_t g = 0; g < grid.size(); ++g) basis.row(static_cast<Index>(g)) = fit.term.eval(grid[g]).transpose();
    return detail::plugin_sd(gd.Z, w, gd.layout.begin(j), basis);
}

struct BootstrapConfig {
    int B = 200;
    std::uint64_t seed = 1;
    int q = 4;
    double c = 2.0;
    int threads = 1;
    double max_drop_fraction = 0.10;
    SolverOptions solver;
};

/// Replicate curves for every (selected group j, covariate k) and the
/// resample count matrix. Rows of `counts` and of each curve matrix are the
/// surviving replicates, in replicate order.
struct BootstrapRun {
    int B = 0;
    std::uint64_t seed = 0;
    std::vector<int> kept;                   // replicate indices that survived
    std::vector<std::string> dropped;        // "replicate j: reason"
    Eigen::MatrixXi counts;                  // kept x n
    std::vector<std::vector<MatrixXd>> curves;  // [k][j]: kept x grid

    const MatrixXd& curve(Index j, Index k) const {
        return curves[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
    }
};

/// Nonparametric bootstrap of the two-step estimator with the selected set
/// held fixed. `knots[k]` is the step-2 knot count for covariate k.
inline BootstrapRun bootstrap_curves(const Dataset& ds, const std::vector<int>& selected, const Family& fam,
                                     const std::vector<int>& knots, const std::vector<double>& grid,
                                     const BootstrapConfig& cfg) {
    if (cfg.B < 2) throw ArgumentError("bootstrap needs B >= 2");
    if (selected.empty()) throw NothingSelected();
    if (static_cast<Index>(knots.size()) != ds.d()) throw StructuralError("need one knot count per covariate");
    const Index n = ds.n(), d = ds.d();
    const auto s = static_cast<Index>(selected.size());
    const auto G = static_cast<Index>(grid.size());
    const auto B = static_cast<std::size_t>(cfg.B);

    std::vector<int> local(static_cast<std::size_t>(s));
    for (Index j = 0; j < s; ++j) local[static_cast<std::size_t>(j)] = static_cast<int>(j);
    const Dataset base = ds.subset([&] {
        std::vector<Index> all(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
        return all;
    }(), selected);

    struct Slot {
        bool ok = false;
        std::string reason;
        Eigen::VectorXi counts;
        std::vector<std::vector<VectorXd>> curves;  // [k][j]
    };
    std::vector<Slot> slots(B);
    parallel_for(B, resolve_threads(cfg.threads), [&](std::size_t r) {
        Slot& slot = slots[r];
        std::mt19937_64 rng(derive_seed(cfg.seed, r));
        std::uniform_int_distribution<Index> pick(0, n - 1);
        std::vector<Index> rows(static_cast<std::size_t>(n));
        slot.counts = Eigen::VectorXi::Zero(n);
        for (auto& i : rows) {
            i = pick(rng);
            ++slot.counts[i];
        }
        try {
            const Dataset rep = base.subset(rows);
            const InitialFit init = fit_initial(rep, local, fam, cfg.q, cfg.c, cfg.solver);
            const Components comp = components_from_initial(init, rep);
            slot.curves.resize(static_cast<std::size_t>(d));
            for (Index k = 0; k < d; ++k) {
                const StepTwoFit fit =
                    fit_second_step(rep, local, comp, k, knots[static_cast<std::size_t>(k)], fam, cfg.q, cfg.solver);
                for (Index j = 0; j < s; ++j) slot.curves[static_cast<std::size_t>(k)].push_back(fit.curve_on(j, grid));
            }
            slot.ok = true;
        } catch (const Error& e) {
            slot.reason = e.what();
        }
    });

    BootstrapRun run;
    run.B = cfg.B;
    run.seed = cfg.seed;
    for (std::size_t r = 0; r < B; ++r) {
        if (slots[r].ok) run.kept.push_back(static_cast<int>(r));
        else run.dropped.push_back("replicate " + std::to_string(r) + ": " + slots[r].reason);
    }
    if (static_cast<double>(run.dropped.size()) > cfg.max_drop_fraction * static_cast<double>(B))
        throw NumericalError("bootstrap dropped " + std::to_string(run.dropped.size()) + " of " +
                             std::to_string(B) + " replicates");
    if (run.kept.size() < 2) throw NumericalError("fewer than 2 bootstrap replicates survived");
    const auto K = static_cast<Index>(run.kept.size());
    run.counts.resize(K, n);
    run.curves.assign(static_cast<std::size_t>(d), std::vector<MatrixXd>(static_cast<std::size_t>(s), MatrixXd(K, G)));
    for (Index r = 0; r < K; ++r) {
        const Slot& slot = slots[static_cast<std::size_t>(run.kept[static_cast<std::size_t>(r)])];
        run.counts.row(r) = slot.counts.transpose();
        for (Index k = 0; k < d; ++k)
            for (Index j = 0; j < s; ++j)
                run.curves[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)].row(r) =
                    slot.curves[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)].transpose();
    }
    return run;
}

/// Sample SD across replicates (divisor B-1), per grid point.
inline VectorXd sd_unsmoothed(const MatrixXd& curves) {
    if (curves.rows() < 2) throw ArgumentError("need at least 2 replicates");
    const Eigen::RowVectorXd mean = curves.colwise().mean();
    const MatrixXd centered = curves.rowwise() - mean;
    return (centered.colwise().squaredNorm() / static_cast<double>(curves.rows() - 1)).array().sqrt().transpose();
}

struct SmoothedSd {
    VectorXd center;  // replicate mean
    VectorXd sd;
};

/// Delta-method SD of the bagged estimate: sqrt(sum_i cov_i^2) with
/// cov_i = sum_j (C_ji - C_.i)(a_j - a_.) / B.
inline SmoothedSd sd_smoothed(const MatrixXd& curves, const Eigen::MatrixXi& counts) {
    if (curves.rows() < 2) throw ArgumentError("need at least 2 replicates");
    if (counts.rows() != curves.rows()) throw StructuralError("count rows do not match replicates");
    const auto Bk = static_cast<double>(curves.rows());
    SmoothedSd out;
    out.center = curves.colwise().mean().transpose();
    const MatrixXd a = curves.rowwise() - out.center.transpose();
    const MatrixXd C = counts.cast<double>();
    const MatrixXd Cc = C.rowwise() - C.colwise().mean();
    const MatrixXd cov = Cc.transpose() * a / Bk;  // n x grid
    out.sd = cov.colwise().norm().transpose();
    return out;
}

struct Band {
    std::vector<double> grid;
    VectorXd center, sd, lower, upper;
    double threshold = 0.0;

    /// Truth inside [lower, upper] at every grid point.
    bool covers(const VectorXd& truth) const {
        if (truth.size() != center.size()) throw StructuralError("truth length does not match the grid");
        for (Index g = 0; g < truth.size(); ++g)
            if (truth[g] < lower[g] || truth[g] > upper[g]) return false;
        return true;
    }
};

inline Band build_band(const std::vector<double>& grid, const VectorXd& center, const VectorXd& sd, double threshold) {
    if (center.size() != static_cast<Index>(grid.size()) || sd.size() != center.size())
        throw StructuralError("band vectors are not aligned to the grid");
    if ((sd.array() < 0.0).any()) throw ArgumentError("band SD must be nonnegative");
    Band b;
    b.grid = grid;
    b.center = center;
    b.sd = sd;
    b.threshold = threshold;
    b.lower = center - threshold * sd;
    b.upper = center + threshold * sd;
    return b;
}

inline Band build_band(const std::vector<double>& grid, const VectorXd& center, const VectorXd& sd, int L,
                       double alpha) {
    return build_band(grid, center, sd, scb_threshold(L, alpha));
}

} // namespace gacm

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "bands.hpp"
#include "design.hpp"
#include "error.hpp"
#include "family.hpp"
#include "parallel.hpp"
#include "select.hpp"
#include "solver.hpp"
#include "truth.hpp"
#include "twostep.hpp"

namespace gacm {

struct SnpOptions {
    double maf = 0.3;
    double block_rho = 0.3;
    int block_size = 10;
};

/// Genotypes coded (minor-allele count - 1). Columns come in independent
/// blocks of equicorrelated latent normals, thresholded to Hardy-Weinberg
/// frequencies {(1-maf)^2, 2 maf(1-maf), maf^2}.
inline MatrixXd gen_snps(Index n, Index p, const SnpOptions& opt, std::uint64_t seed) {
    if (!(opt.maf > 0.0 && opt.maf <= 0.5)) throw ArgumentError("maf must lie in (0, 0.5]");
    if (!(opt.block_rho >= 0.0 && opt.block_rho < 1.0)) throw ArgumentError("block_rho must lie in [0,1)");
    if (opt.block_size < 1) throw ArgumentError("block_size must be >= 1");
    const boost::math::normal_distribution<double> stdnorm;
    const double lo = boost::math::quantile(stdnorm, (1.0 - opt.maf) * (1.0 - opt.maf));
    const double hi = boost::math::quantile(stdnorm, 1.0 - opt.maf * opt.maf);
    const double a = std::sqrt(opt.block_rho), b = std::sqrt(1.0 - opt.block_rho);

    MatrixXd T(n, p);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (Index i = 0; i < n; ++i) {
        double shared = 0.0;
        for (Index l = 0; l < p; ++l) {
            if (l % opt.block_size == 0) shared = nd(rng);
            const double z = a * shared + b * nd(rng);
            T(i, l) = z < lo ? -1.0 : (z > hi ? 1.0 : 0.0);
        }
    }
    return T;
}

struct Example1Options {
    SnpOptions snp;
};

/// Simulated logistic data with the four-signal truth; X is uniform on [0,1]^2.
inline std::pair<Dataset, TruthSpec> gen_example1(Index n, Index p, std::uint64_t seed,
                                                  const Example1Options& opt = {}) {
    if (p < 4) throw ArgumentError("the simulation design needs p >= 4");
    if (n < 2) throw ArgumentError("n must be >= 2");
    TruthSpec truth = example1_truth(n, p);
    Dataset ds;
    ds.X.resize(n, 2);
    std::mt19937_64 xr(derive_seed(seed, 1));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < 2; ++k) ds.X(i, k) = u(xr);
    ds.T = gen_snps(n, p, opt.snp, derive_seed(seed, 2));
    const VectorXd mu = truth.mean(ds.X, ds.T);
    std::mt19937_64 yr(derive_seed(seed, 3));
    ds.y.resize(n);
    for (Index i = 0; i < n; ++i) ds.y[i] = u(yr) < mu[i] ? 1.0 : 0.0;
    ds.validate();
    return {std::move(ds), std::move(truth)};
}

struct SelectionMetrics {
    bool correct = false, over = false, incorrect = false;
    int tp = 0, fp = 0;
    double mr = 0.0;
};

/// C/O/I, TP, FP against the true signal set and MR = sum (mu-hat - mu)^2 / n.
inline SelectionMetrics metrics(const std::vector<int>& selected, const TruthSpec& truth, const VectorXd& mu_hat,
                                const VectorXd& mu) {
    if (mu_hat.size() != mu.size()) throw StructuralError("fitted and true means differ in length");
    if (mu.size() == 0) throw ArgumentError("no observations");
    SelectionMetrics m;
    for (int l : selected) {
        if (truth.is_signal(l)) ++m.tp;
        else ++m.fp;
    }
    const bool all_in = m.tp == static_cast<int>(truth.s());
    m.correct = all_in && m.fp == 0;
    m.over = all_in && m.fp > 0;
    m.incorrect = !all_in;
    m.mr = (mu_hat - mu).squaredNorm() / static_cast<double>(mu.size());
    return m;
}

/// Fitted means of a penalized fit on the stage-1 design of `res`.
inline VectorXd fitted_mean(const Dataset& ds, const SelectionResult& res, const Family& fam, const GroupCoef& fit) {
    const GroupedDesign gd = build_design(ds, res.terms);
    VectorXd mu = gd.Z * fit.coef + fit.offset;
    for (auto& v : mu) v = fam.mean(v);
    return mu;
}

/// 1 + M^{-1} sum_{j,k} (1 - r_jk^2) over all ordered pairs. A constant
/// column is treated as uncorrelated with every other column.
inline double m_eff(const MatrixXd& T) {
    const Index M = T.cols();
    if (M < 1) throw ArgumentError("m_eff needs at least one column");
    if (T.rows() < 2) throw ArgumentError("m_eff needs at least two rows");
    MatrixXd C = T.rowwise() - T.colwise().mean();
    VectorXd nrm = C.colwise().norm();
    for (Index j = 0; j < M; ++j) {
        if (nrm[j] > 0.0) C.col(j) /= nrm[j];
        else C.col(j).setZero();
    }
    const MatrixXd R = C.transpose() * C;
    double sum = 0.0;
    for (Index j = 0; j < M; ++j)
        for (Index k = 0; k < M; ++k) {
            if (j == k) continue;
            const double r = std::clamp(R(j, k), -1.0, 1.0);
            sum += 1.0 - r * r;
        }
    return 1.0 + sum / static_cast<double>(M);
}

struct ScreeningResult {
    std::vector<int> selected;
    std::vector<double> stat;     // LRT statistic per T column
    std::vector<double> pvalue;
    double m_eff = 0.0;
    double cutoff = 0.0;          // alpha0 / M_eff
    int df = 0;
};

/// One logistic fit per T column: main effects of X plus T_l and X_k T_l,
/// likelihood ratio test against the X-only model on d+1 degrees of freedom,
/// Bonferroni at alpha0 / M_eff.
inline ScreeningResult screening_baseline(const Dataset& ds, const Family& fam, double alpha0 = 0.05,
                                          int threads = 1, const SolverOptions& opts = {}) {
    if (fam.kind() != FamilyKind::BernoulliLogit) throw UnsupportedError("screening baseline requires the logit family");
    if (ds.d() < 1) throw ArgumentError("screening needs d >= 1");
    if (!(alpha0 > 0.0 && alpha0 < 1.0)) throw ArgumentError("alpha0 must lie in (0,1)");
    const Index n = ds.n(), d = ds.d(), p = ds.p();
    MatrixXd Z0(n, 1 + d);
    Z0.col(0).setOnes();
    Z0.rightCols(d) = ds.X;
    const VectorXd off = VectorXd::Zero(n);
    const double null_loss = detail::loss(fam, Z0 * fit_unpenalized(Z0, ds.y, fam, off, opts).first.coef, ds.y);

    ScreeningResult out;
    out.df = static_cast<int>(d + 1);
    out.stat.assign(static_cast<std::size_t>(p), 0.0);
    out.pvalue.assign(static_cast<std::size_t>(p), 1.0);
    parallel_for(static_cast<std::size_t>(p), resolve_threads(threads), [&](std::size_t l) {
        MatrixXd Z1(n, 2 + 2 * d);
        Z1.leftCols(1 + d) = Z0;
        const auto t = ds.T.col(static_cast<Index>(l));
        Z1.col(1 + d) = t;
        for (Index k = 0; k < d; ++k) Z1.col(2 + d + k) = ds.X.col(k).cwiseProduct(t);
        const double alt_loss = detail::loss(fam, Z1 * fit_unpenalized(Z1, ds.y, fam, off, opts).first.coef, ds.y);
        const double stat = std::max(0.0, 2.0 * (null_loss - alt_loss));
        out.stat[l] = stat;
        out.pvalue[l] = boost::math::gamma_q(0.5 * out.df, 0.5 * stat);
    });
    out.m_eff = m_eff(ds.T);
    out.cutoff = alpha0 / out.m_eff;
    for (Index l = 0; l < p; ++l)
        if (out.pvalue[static_cast<std::size_t>(l)] < out.cutoff) out.selected.push_back(static_cast<int>(l));
    return out;
}

struct BenchConfig {
    int reps = 100;
    Index n = 300;
    Index p = 200;
    std::uint64_t seed = 1;
    int threads = 1;  // over replications
    Example1Options data;
    SelectConfig select;
    bool screening = false;
    bool coverage = false;
    bool coverage_on_truth_set = false;  // bands on the true set instead of the selected one
    int B = 200;
    int grid = 20;
    double alpha = 0.05;
};

struct CurveRecord {
    int l = 0, k = 0;
    bool covered_unsmoothed = false, covered_smoothed = false;
    double sd_median_unsmoothed = 0.0, sd_mean_unsmoothed = 0.0;
    double sd_median_smoothed = 0.0, sd_mean_smoothed = 0.0;
};

struct RepRecord {
    int rep = 0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::vector<int> agl_selected, gl_selected, screen_selected;
    SelectionMetrics agl, gl, screen;
    bool has_screen = false;
    std::vector<CurveRecord> curves;  // signal groups that entered the bands
    int boot_dropped = 0;
};

struct Table1Row {
    std::string method;
    int reps = 0;
    double correct = 0.0, over = 0.0, incorrect = 0.0;  // percentages
    double tp = 0.0, fp = 0.0, mr = 0.0;
};

struct Table2Row {
    int l = 0, k = 0;
    int reps = 0;  // replications with this curve banded
    double cov_unsmoothed = std::numeric_limits<double>::quiet_NaN();
    double sd_median_unsmoothed = std::numeric_limits<double>::quiet_NaN();
    double sd_mean_unsmoothed = std::numeric_limits<double>::quiet_NaN();
    double cov_smoothed = std::numeric_limits<double>::quiet_NaN();
    double sd_median_smoothed = std::numeric_limits<double>::quiet_NaN();
    double sd_mean_smoothed = std::numeric_limits<double>::quiet_NaN();
};

struct BenchResult {
    std::vector<RepRecord> reps;
    std::vector<Table1Row> table1;
    std::vector<Table2Row> table2;
    int completed = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline Table1Row table1_row(const std::string& method, const std::vector<const SelectionMetrics*>& ms) {
    Table1Row row;
    row.method = method;
    row.reps = static_cast<int>(ms.size());
    if (ms.empty()) {
        row.correct = row.over = row.incorrect = row.tp = row.fp = row.mr = std::numeric_limits<double>::quiet_NaN();
        return row;
    }
    for (const auto* m : ms) {
        row.correct += m->correct;
        row.over += m->over;
        row.incorrect += m->incorrect;
        row.tp += m->tp;
        row.fp += m->fp;
        row.mr += m->mr;
    }
    const double r = static_cast<double>(ms.size());
    row.correct *= 100.0 / r;
    row.over *= 100.0 / r;
    row.incorrect *= 100.0 / r;
    row.tp /= r;
    row.fp /= r;
    row.mr /= r;
    return row;
}

} // namespace detail

/// Tables from per-replication records; failed replications are skipped.
inline void aggregate(BenchResult& res, const TruthSpec& truth) {
    std::vector<const SelectionMetrics*> agl, gl, scr;
    res.completed = 0;
    for (const auto& r : res.reps) {
        if (!r.ok) continue;
        ++res.completed;
        agl.push_back(&r.agl);
        gl.push_back(&r.gl);
        if (r.has_screen) scr.push_back(&r.screen);
    }
    res.table1 = {detail::table1_row("AGL", agl), detail::table1_row("GL", gl)};
    if (!scr.empty()) res.table1.push_back(detail::table1_row("LR", scr));

    res.table2.clear();
    for (int l : truth.signal)
        for (int k = 0; k < static_cast<int>(truth.d); ++k) {
            Table2Row row;
            row.l = l;
            row.k = k;
            double cu = 0.0, cs = 0.0, mu = 0.0, au = 0.0, ms = 0.0, as = 0.0;
            for (const auto& r : res.reps) {
                if (!r.ok) continue;
                for (const auto& c : r.curves) {
                    if (c.l != l || c.k != k) continue;
                    ++row.reps;
                    cu += c.covered_unsmoothed;
                    cs += c.covered_smoothed;
                    mu += c.sd_median_unsmoothed;
                    au += c.sd_mean_unsmoothed;
                    ms += c.sd_median_smoothed;
                    as += c.sd_mean_smoothed;
                }
            }
            if (row.reps > 0) {
                const double r = row.reps;
                row.cov_unsmoothed = cu / r;
                row.cov_smoothed = cs / r;
                row.sd_median_unsmoothed = mu / r;
                row.sd_mean_unsmoothed = au / r;
                row.sd_median_smoothed = ms / r;
                row.sd_mean_smoothed = as / r;
            }
            res.table2.push_back(row);
        }
}

/// Coverage flags and SD summaries for every signal group in `band_set`.
inline std::vector<CurveRecord> coverage_records(const Dataset& ds, const TruthSpec& truth,
                                                 const std::vector<int>& band_set, const BenchConfig& cfg,
                                                 std::uint64_t seed, int& dropped) {
    const Family& fam = truth.family;
    const int q = cfg.select.q;
    const InitialFit init = fit_initial(ds, band_set, fam, q, cfg.select.c, cfg.select.solver);
    const Components comp = components_from_initial(init, ds);
    std::vector<int> knots;
    std::vector<StepTwoFit> fits;
    for (Index k = 0; k < ds.d(); ++k) {
        KnotChoice kc = choose_knots_bic(ds, band_set, comp, k, fam, q, cfg.select.solver);
        knots.push_back(kc.num_interior);
        fits.push_back(kc.chosen());
    }
    const std::vector<double> grid = band_grid(cfg.grid);
    BootstrapConfig bc;
    bc.B = cfg.B;
    bc.seed = seed;
    bc.q = q;
    bc.c = cfg.select.c;
    bc.threads = 1;
    bc.solver = cfg.select.solver;
    const BootstrapRun run = bootstrap_curves(ds, band_set, fam, knots, grid, bc);
    dropped = static_cast<int>(run.dropped.size());
    const double thr = scb_threshold(cfg.grid, cfg.alpha);

    std::vector<CurveRecord> out;
    for (std::size_t j = 0; j < band_set.size(); ++j) {
        const int l = band_set[j];
        if (!truth.is_signal(l)) continue;
        for (Index k = 0; k < ds.d(); ++k) {
            const auto jj = static_cast<Index>(j);
            VectorXd tv(static_cast<Index>(grid.size()));
            for (std::size_t g = 0; g < grid.size(); ++g) tv[static_cast<Index>(g)] = truth.alpha(l, k, grid[g]);
            const MatrixXd& a = run.curve(jj, k);
            const VectorXd su = sd_unsmoothed(a);
            const SmoothedSd ss = sd_smoothed(a, run.counts);
            const Band bu = build_band(grid, fits[static_cast<std::size_t>(k)].curve_on(jj, grid), su, thr);
            const Band bs = build_band(grid, ss.center, ss.sd, thr);
            CurveRecord c;
            c.l = l;
            c.k = static_cast<int>(k);
            c.covered_unsmoothed = bu.covers(tv);
            c.covered_smoothed = bs.covers(tv);
            c.sd_median_unsmoothed = detail::median({su.data(), su.data() + su.size()});
            c.sd_mean_unsmoothed = su.mean();
            c.sd_median_smoothed = detail::median({ss.sd.data(), ss.sd.data() + ss.sd.size()});
            c.sd_mean_smoothed = ss.sd.mean();
            out.push_back(c);
        }
    }
    return out;
}

/// One replication: data from derive_seed(seed, rep), selection, metrics and
/// optionally screening and bands.
inline RepRecord run_replication(const BenchConfig& cfg, int rep) {
    RepRecord r;
    r.rep = rep;
    r.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(rep));
    try {
        auto [ds, truth] = gen_example1(cfg.n, cfg.p, r.seed, cfg.data);
        const VectorXd mu = truth.mean(ds.X, ds.T);
        SelectConfig sc = cfg.select;
        sc.threads = 1;
        const SelectionResult sel = select_model(ds, truth.family, sc);
        r.gl_selected = sel.stage1().selected;
        r.gl = metrics(r.gl_selected, truth, fitted_mean(ds, sel, truth.family, sel.stage1().fit), mu);
        r.agl_selected = sel.selected;
        const GroupCoef& final_fit = sel.has_stage2() ? sel.final_point().fit : sel.stage1().fit;
        r.agl = metrics(r.agl_selected, truth, fitted_mean(ds, sel, truth.family, final_fit), mu);
        if (cfg.screening) {
            const ScreeningResult sr = screening_baseline(ds, truth.family, 0.05, 1, cfg.select.solver);
            r.screen_selected = sr.selected;
            r.screen = metrics(sr.selected, truth, mu, mu);
            r.screen.mr = std::numeric_limits<double>::quiet_NaN();  // no joint fit to evaluate
            r.has_screen = true;
        }
        if (cfg.coverage) {
            const std::vector<int> band_set = cfg.coverage_on_truth_set ? truth.signal : sel.selected;
            if (!band_set.empty())
                r.curves = coverage_records(ds, truth, band_set, cfg, derive_seed(r.seed, 4), r.boot_dropped);
        }
        r.ok = true;
    } catch (const Error& e) {
        r.error = e.what();
    }
    return r;
}

inline BenchResult run_benchmark(const BenchConfig& cfg) {
    if (cfg.reps < 1) throw ArgumentError("reps must be >= 1");
    BenchResult res;
    res.reps.resize(static_cast<std::size_t>(cfg.reps));
    parallel_for(res.reps.size(), resolve_threads(cfg.threads),
                 [&](std::size_t i) { res.reps[i] = run_replication(cfg, static_cast<int>(i)); });
    aggregate(res, example1_truth(cfg.n, cfg.p));
    return res;
}

} // namespace gacm

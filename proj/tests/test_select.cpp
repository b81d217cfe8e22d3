#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <gacm/select.hpp>
#include <gacm/simlab.hpp>

#include "oracles.hpp"

using namespace gacm;

namespace {

struct Toy {
    MatrixXd Z;
    VectorXd y;
    GroupLayout layout;
};

// Gaussian toy: 8 groups of 3, first two active.
Toy gaussian_toy(unsigned seed, int n = 100) {
    std::mt19937_64 rng(seed);
    Toy t;
    t.Z = oracle::random_matrix(rng, n, 24);
    VectorXd beta = VectorXd::Zero(24);
    beta.head(6) << 1.0, -0.8, 0.5, 0.7, 0.6, -0.9;
    std::normal_distribution<double> nd(0.0, 1.0);
    t.y = t.Z * beta;
    for (int i = 0; i < n; ++i) t.y[i] += nd(rng);
    t.layout = GroupLayout::uniform(8, 3);
    return t;
}

Toy logit_toy(unsigned seed, int n = 120) {
    std::mt19937_64 rng(seed);
    Toy t;
    t.Z = oracle::random_matrix(rng, n, 15);
    VectorXd beta = VectorXd::Zero(15);
    beta.head(3) << 1.2, -1.0, 0.8;
    const VectorXd eta = t.Z * beta;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    t.y.resize(n);
    for (int i = 0; i < n; ++i) t.y[i] = u(rng) < 1.0 / (1.0 + std::exp(-eta[i])) ? 1.0 : 0.0;
    t.layout = GroupLayout::uniform(5, 3);
    return t;
}

EbicSpec spec_for(const Toy& t) { return EbicSpec{0.5, t.y.size(), t.layout.groups(), 1, 2}; }

} // namespace

TEST(KnotCount, Stage1Values) {
    EXPECT_EQ(knot_count_stage1(300, 4, 2.0), 3);
    EXPECT_EQ(knot_count_stage1(512, 4, 1.0), 2);
    EXPECT_THROW(knot_count_stage1(1, 4, 2.0), ArgumentError);
}

TEST(Ebic, Pieces) {
    // nu = 0 is plain BIC.
    EXPECT_NEAR(ebic(10.0, 3, 0.0, 300, 50, 2, 7), 20.0 + 3 * 15 * std::log(300.0), 1e-12);
    // s* = 0 leaves only the deviance.
    EXPECT_NEAR(ebic(10.0, 0, 0.5, 300, 50, 2, 7), 20.0, 1e-12);
    // C(5,2) = 10.
    EXPECT_NEAR(ebic(0.0, 2, 0.5, 100, 5, 1, 1) - 2 * 2 * std::log(100.0), 2 * 0.5 * std::log(10.0), 1e-12);
    EXPECT_NEAR(log_binomial(1286, 4), std::log(1286.0 * 1285 * 1284 * 1283 / 24), 1e-9);
    EXPECT_THROW(ebic(0.0, 6, 0.5, 100, 5, 1, 1), ArgumentError);
    EXPECT_THROW(ebic(0.0, 1, 1.5, 100, 5, 1, 1), ArgumentError);
}

TEST(LambdaGrid, LogSpacedDescending) {
    const auto g = lambda_grid(2.0, 50, 1e-3);
    ASSERT_EQ(g.size(), 50u);
    EXPECT_DOUBLE_EQ(g.front(), 2.0);
    EXPECT_NEAR(g.back(), 2e-3, 1e-15);
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_NEAR(g[i] / g[i - 1], std::pow(1e-3, 1.0 / 49), 1e-12);
}

TEST(Path, AboveLambdaMaxIsEmpty) {
    const Toy t = logit_toy(1);
    const VectorXd w = VectorXd::Ones(5), off = VectorXd::Zero(t.y.size());
    const double lm = lambda_max(t.Z, t.layout, t.y, Family::logit(), w, off);
    const auto path = group_lasso_path(t.Z, t.layout, t.y, Family::logit(), {1.01 * lm}, w, off, spec_for(t));
    ASSERT_EQ(path.size(), 1u);
    EXPECT_EQ(path[0].s, 0);
    EXPECT_EQ(path[0].fit.coef.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Path, FullLengthAndBookkeeping) {
    const Toy t = gaussian_toy(2);
    const VectorXd w = VectorXd::Ones(8), off = VectorXd::Zero(t.y.size());
    const double lm = lambda_max(t.Z, t.layout, t.y, Family::gaussian(), w, off);
    PathOptions po;
    po.early_stop = false;
    const auto path = group_lasso_path(t.Z, t.layout, t.y, Family::gaussian(), lambda_grid(lm, 50, 1e-3), w, off,
                                       spec_for(t), po);
    ASSERT_EQ(path.size(), 50u);
    EXPECT_EQ(path[0].s, 0);
    for (const auto& pt : path) {
        EXPECT_EQ(pt.s, static_cast<Index>(pt.selected.size()));
        for (int id : pt.selected) EXPECT_GT(pt.fit.norm(pt.fit.layout.find(id)), 0.0);
        const double loss = unpenalized_objective(t.Z, t.y, Family::gaussian(), pt.fit.coef, off);
        EXPECT_NEAR(ebic(loss, pt.s, 0.5, t.y.size(), 8, 1, 2), pt.ebic, 1e-10);
    }
}

TEST(Path, WarmAndColdStartsAgree) {
    const Toy t = gaussian_toy(3);
    const VectorXd w = VectorXd::Ones(8), off = VectorXd::Zero(t.y.size());
    const double lm = lambda_max(t.Z, t.layout, t.y, Family::gaussian(), w, off);
    const auto grid = lambda_grid(lm, 20, 1e-2);
    PathOptions warm, cold;
    warm.early_stop = false;
    cold.warm_start = false;
    cold.threads = 2;
    const auto a = group_lasso_path(t.Z, t.layout, t.y, Family::gaussian(), grid, w, off, spec_for(t), warm);
    const auto b = group_lasso_path(t.Z, t.layout, t.y, Family::gaussian(), grid, w, off, spec_for(t), cold);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].selected, b[i].selected) << "point " << i;
        EXPECT_NEAR(a[i].ebic, b[i].ebic, 1e-6 * std::abs(a[i].ebic));
    }
}

TEST(Path, RejectsUnsortedGrid) {
    const Toy t = gaussian_toy(4);
    const VectorXd w = VectorXd::Ones(8), off = VectorXd::Zero(t.y.size());
    EXPECT_THROW(group_lasso_path(t.Z, t.layout, t.y, Family::gaussian(), {0.1, 0.2}, w, off, spec_for(t)),
                 ArgumentError);
}

TEST(Path, EbicTiesGoToLargerLambda) {
    std::vector<PathPoint> path(3);
    path[0].ebic = 5.0;
    path[1].ebic = 3.0;
    path[2].ebic = 3.0;
    EXPECT_EQ(ebic_argmin(path), 1);
}

TEST(AdaptiveWeights, Reciprocal) {
    VectorXd c(6);
    c << 0.3, 0.4, 0.0, 0.0, 0.0, 0.0;
    GroupCoef gc(c, GroupLayout::uniform(3, 2), VectorXd::Zero(1));
    const VectorXd w = adaptive_weights(gc);
    EXPECT_DOUBLE_EQ(w[0], 2.0);
    EXPECT_TRUE(std::isinf(w[1]));
    EXPECT_TRUE(std::isinf(w[2]));
}

namespace {

Dataset gam_dataset(unsigned seed, Index n, Index p, double signal) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    Dataset ds;
    ds.X.resize(n, 1);
    ds.T.resize(n, p);
    ds.y.resize(n);
    for (Index i = 0; i < n; ++i) {
        ds.X(i, 0) = u(rng);
        for (Index l = 0; l < p; ++l) ds.T(i, l) = nd(rng);
        ds.y[i] = signal * (1.0 + std::sin(2.0 * 3.141592653589793 * ds.X(i, 0))) * ds.T(i, 0) + nd(rng);
    }
    ds.validate();
    return ds;
}

} // namespace

TEST(SelectModel, SingleStrongGroup) {
    const Dataset ds = gam_dataset(5, 200, 1, 3.0);
    const auto res = select_model(ds, Family::gaussian());
    EXPECT_EQ(res.selected, std::vector<int>{0});
    EXPECT_FALSE(res.empty);
}

TEST(SelectModel, StageInvariants) {
    const Dataset ds = gam_dataset(6, 200, 6, 2.0);
    SelectConfig cfg;
    cfg.early_stop = false;
    cfg.grid_size = 20;
    const auto res = select_model(ds, Family::gaussian(), cfg);
    ASSERT_TRUE(res.has_stage2());
    EXPECT_EQ(res.selected, res.final_point().selected);
    // Adaptive stage never revives a group the first stage zeroed.
    for (const auto& pt : res.stage2_path)
        for (int id : pt.selected) EXPECT_TRUE(std::isfinite(res.weights[id]));
    for (const auto& pt : res.stage1_path) EXPECT_LE(pt.lambda, res.lambda_max1 * (1 + 1e-12));
    EXPECT_EQ(res.stage1_path.front().s, 0);
    EXPECT_EQ(res.stage2_path.front().s, 0);
}

TEST(SelectModel, GridFloorApproachesRefit) {
    // Gaussian, p < n: at a vanishing floor the adaptive fit tends to the
    // unpenalized refit on its selected groups.
    const Dataset ds = gam_dataset(7, 300, 3, 2.0);
    double prev_gap = std::numeric_limits<double>::infinity();
    for (double floor : {1e-2, 1e-4, 1e-6}) {
        SelectConfig cfg;
        cfg.early_stop = false;
        cfg.grid_size = 10;
        cfg.grid_floor_ratio = floor;
        const auto res = select_model(ds, Family::gaussian(), cfg);
        const PathPoint& last = res.stage2_path.back();
        const GroupedDesign gd = build_design(ds, res.terms, last.selected);
        auto [refit, rep] = fit_unpenalized(gd.Z, gd.layout, ds.y, Family::gaussian(), VectorXd::Zero(ds.n()));
        double gap = 0.0;
        for (Index g = 0; g < gd.layout.groups(); ++g) {
            const Index full = last.fit.layout.find(gd.layout.id(g));
            gap = std::max(gap, (last.fit.block(full) - refit.block(g)).cwiseAbs().maxCoeff());
        }
        EXPECT_LT(gap, prev_gap);
        prev_gap = gap;
    }
    EXPECT_LT(prev_gap, 1e-3);
}

TEST(SelectModel, NullDataSelectsNothingUsually) {
    int empty = 0;
    for (unsigned seed = 0; seed < 7; ++seed) {
        Dataset ds = gam_dataset(100 + seed, 200, 20, 0.0);
        if (select_model(ds, Family::gaussian()).empty) ++empty;
    }
    EXPECT_GE(empty, 4);
}

TEST(SelectModel, AllZeroStageOneIsFlagged) {
    Dataset ds = gam_dataset(8, 100, 3, 0.0);
    SelectConfig cfg;
    cfg.grid_size = 1;
    const auto res = select_model(ds, Family::gaussian(), cfg);
    EXPECT_TRUE(res.empty);
    EXPECT_FALSE(res.has_stage2());
    EXPECT_FALSE(res.notes.empty());
}

TEST(SelectModel, PermutationEquivariant) {
    Dataset ds = gam_dataset(9, 200, 5, 2.0);
    const auto a = select_model(ds, Family::gaussian());
    Dataset sh = ds;
    const std::vector<int> perm{3, 0, 4, 1, 2};  // new column j holds old column perm[j]
    for (int j = 0; j < 5; ++j) sh.T.col(j) = ds.T.col(perm[j]);
    const auto b = select_model(sh, Family::gaussian());
    std::vector<int> mapped;
    for (int j : b.selected) mapped.push_back(perm[j]);
    std::sort(mapped.begin(), mapped.end());
    EXPECT_EQ(mapped, a.selected);
}

// The selection target for the simulated logistic design. See the project
// notes: under the EBIC model-size penalty at n = 300 this is not reachable.
TEST(SelectExample1, RecoversSignalInMajority) {
    int hits = 0;
    for (unsigned r = 0; r < 5; ++r) {
        auto [ds, truth] = gen_example1(300, 200, derive_seed(2024, r));
        const auto res = select_model(ds, Family::logit());
        int tp = 0;
        for (int l : res.selected) tp += truth.is_signal(l);
        if (tp == 4) ++hits;
    }
    EXPECT_GE(hits, 3);
}

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <boost/math/constants/constants.hpp>
#include <boost/multiprecision/cpp_dec_float.hpp>

#include <gacm/bands.hpp>

#include "oracles.hpp"

using namespace gacm;

namespace {

using Big = boost::multiprecision::number<boost::multiprecision::cpp_dec_float<200>>;

// The closed form evaluated in 200-digit decimal arithmetic.
double threshold_oracle(int L, double alpha) {
    const Big Lp1 = Big(L) + 1;
    const Big a = 2 * log(Lp1);
    const Big pi = boost::math::constants::pi<Big>();
    const Big inner = log(-log(1 - Big(alpha)) / 2) + (log(log(Lp1)) + log(4 * pi)) / 2;
    const Big q = sqrt(a) * (1 - inner / a);
    return q.convert_to<double>();
}

Dataset small_gauss(unsigned seed, Index n) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> nd(0.0, 1.0);
    Dataset ds;
    ds.X.resize(n, 2);
    ds.T.resize(n, 3);
    ds.y.resize(n);
    for (Index i = 0; i < n; ++i) {
        ds.X(i, 0) = u(rng);
        ds.X(i, 1) = u(rng);
        for (Index l = 0; l < 3; ++l) ds.T(i, l) = nd(rng);
        ds.y[i] = (1.0 + std::sin(6.283185307179586 * ds.X(i, 0)) + ds.X(i, 1)) * ds.T(i, 0) +
                  0.5 * ds.T(i, 2) + 0.5 * nd(rng);
    }
    ds.validate();
    return ds;
}

} // namespace

TEST(Threshold, MatchesHighPrecision) {
    for (int L : {5, 20, 100})
        for (double a : {0.01, 0.05, 0.10}) EXPECT_NEAR(scb_threshold(L, a), threshold_oracle(L, a), 1e-12);
    EXPECT_NEAR(scb_threshold(20, 0.05), 3.2136, 1e-3);
}

TEST(Threshold, WiderThanPointwise) {
    EXPECT_GT(scb_threshold(20, 0.05) / 1.959963984540054, 1.0);
}

TEST(Threshold, IncreasingInL) {
    for (double a : {0.05, 0.10})
        for (int L = 5; L < 200; ++L) EXPECT_LT(scb_threshold(L, a), scb_threshold(L + 1, a));
}

TEST(Threshold, SmallAlphaDipsAtSmallL) {
    // At alpha = 0.01 the closed form decreases from L = 5 to L = 9 and
    // increases afterwards.
    for (int L = 5; L < 9; ++L) EXPECT_GT(scb_threshold(L, 0.01), scb_threshold(L + 1, 0.01));
    for (int L = 9; L < 200; ++L) EXPECT_LT(scb_threshold(L, 0.01), scb_threshold(L + 1, 0.01));
}

TEST(Threshold, Errors) {
    EXPECT_THROW(scb_threshold(20, 0.0), ArgumentError);
    EXPECT_THROW(scb_threshold(20, 1.0), ArgumentError);
    EXPECT_THROW(scb_threshold(0, 0.05), ArgumentError);
}

TEST(Grid, EquallySpacedInterior) {
    const auto g = band_grid(20);
    ASSERT_EQ(g.size(), 21u);
    EXPECT_DOUBLE_EQ(g.front(), 1.0 / 22.0);
    EXPECT_DOUBLE_EQ(g.back(), 21.0 / 22.0);
    for (std::size_t j = 1; j < g.size(); ++j) EXPECT_NEAR(g[j] - g[j - 1], 1.0 / 22.0, 1e-15);
}

TEST(PluginSd, OrthonormalClosedForm) {
    // Z'Z = n I and unit weights: sigma(x) = |b(x)| / sqrt(n).
    std::mt19937_64 rng(1);
    const Index n = 64;
    MatrixXd A = oracle::random_matrix(rng, n, 3);
    const MatrixXd Q = Eigen::HouseholderQR<MatrixXd>(A).householderQ() * MatrixXd::Identity(n, 3);
    const MatrixXd Z = std::sqrt(static_cast<double>(n)) * Q;
    MatrixXd basis(4, 1);
    basis << 0.3, -1.2, 0.0, 2.5;
    const VectorXd sd = detail::plugin_sd(Z, VectorXd::Ones(n), 1, basis);
    for (Index r = 0; r < 4; ++r) EXPECT_NEAR(sd[r], std::abs(basis(r, 0)) / std::sqrt(64.0), 1e-12);
}

TEST(PluginSd, LogitMatchesExplicitAssembly) {
    std::mt19937_64 rng(2);
    const Index n = 80;
    Dataset ds;
    ds.X.resize(n, 1);
    ds.T.resize(n, 2);
    ds.y.resize(n);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> snp(-1, 1);
    for (Index i = 0; i < n; ++i) {
        ds.X(i, 0) = u(rng);
        ds.T(i, 0) = 1.0;
        ds.T(i, 1) = snp(rng);
        ds.y[i] = u(rng) < 0.4 + 0.3 * ds.X(i, 0) ? 1.0 : 0.0;
    }
    ds.validate();
    Components zero;
    zero.a0 = VectorXd::Zero(2);
    zero.comp = {MatrixXd::Zero(n, 2)};
    zero.extra = VectorXd::Zero(n);
    const StepTwoFit fit = fit_second_step(ds, {0, 1}, zero, 0, 1, Family::logit());
    const std::vector<double> grid = band_grid(10);
    const VectorXd sd = sigma_plugin(ds, fit, Family::logit(), 1, grid);

    // Explicit sum of outer products, weights mu(1-mu), dense LU inverse.
    const Index J = fit.term.size();
    MatrixXd M = MatrixXd::Zero(2 * J, 2 * J);
    for (Index i = 0; i < n; ++i) {
        VectorXd z(2 * J);
        const VectorXd b = fit.term.eval(ds.X(i, 0));
        z << b * ds.T(i, 0), b * ds.T(i, 1);
        const double mu = 1.0 / (1.0 + std::exp(-fit.eta[i]));
        M += mu * (1.0 - mu) * z * z.transpose();
    }
    const MatrixXd Minv = M.fullPivLu().inverse();
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const VectorXd b = fit.term.eval(grid[g]);
        const double v = b.dot(Minv.block(J, J, J, J) * b);
        EXPECT_NEAR(sd[static_cast<Index>(g)], std::sqrt(v), 1e-8 * std::sqrt(v));
        EXPECT_GE(sd[static_cast<Index>(g)], 0.0);
    }
}

TEST(Bootstrap, CountsAndDeterminism) {
    const Dataset ds = small_gauss(3, 120);
    const std::vector<double> grid = band_grid(20);
    BootstrapConfig cfg;
    cfg.B = 12;
    cfg.seed = 99;
    const auto a = bootstrap_curves(ds, {0, 2}, Family::gaussian(), {2, 2}, grid, cfg);
    ASSERT_EQ(a.kept.size(), 12u);
    for (Index r = 0; r < a.counts.rows(); ++r) {
        EXPECT_EQ(a.counts.row(r).sum(), 120);
        EXPECT_GE(a.counts.row(r).minCoeff(), 0);
    }
    cfg.threads = 3;
    const auto b = bootstrap_curves(ds, {0, 2}, Family::gaussian(), {2, 2}, grid, cfg);
    EXPECT_EQ(a.counts, b.counts);
    for (Index k = 0; k < 2; ++k)
        for (Index j = 0; j < 2; ++j) EXPECT_EQ(a.curve(j, k), b.curve(j, k));
    cfg.seed = 100;
    const auto c = bootstrap_curves(ds, {0, 2}, Family::gaussian(), {2, 2}, grid, cfg);
    EXPECT_NE(a.counts, c.counts);
}

TEST(Bootstrap, Errors) {
    const Dataset ds = small_gauss(4, 60);
    BootstrapConfig cfg;
    cfg.B = 1;
    EXPECT_THROW(bootstrap_curves(ds, {0}, Family::gaussian(), {2, 2}, band_grid(5), cfg), ArgumentError);
    cfg.B = 5;
    EXPECT_THROW(bootstrap_curves(ds, {}, Family::gaussian(), {2, 2}, band_grid(5), cfg), NothingSelected);
}

TEST(Bootstrap, TooManyDegenerateReplicatesIsAnError) {
    // A covariate with two distinct values collapses to a constant in many
    // resamples of 6 rows.
    Dataset ds = small_gauss(5, 6);
    ds.X.col(1) << 0.0, 0.0, 0.0, 0.0, 0.0, 1.0;
    BootstrapConfig cfg;
    cfg.B = 40;
    EXPECT_THROW(bootstrap_curves(ds, {0}, Family::gaussian(), {1, 1}, band_grid(5), cfg), NumericalError);
}

TEST(UnsmoothedSd, Identities) {
    MatrixXd same(5, 4);
    same.rowwise() = Eigen::RowVector4d(1, 2, 3, 4);
    EXPECT_EQ(sd_unsmoothed(same).cwiseAbs().maxCoeff(), 0.0);
    MatrixXd two(2, 3);
    two << 1, 5, -2, 4, 1, 0;
    const VectorXd sd = sd_unsmoothed(two);
    for (Index g = 0; g < 3; ++g) EXPECT_NEAR(sd[g], std::abs(two(0, g) - two(1, g)) / std::sqrt(2.0), 1e-15);
}

TEST(UnsmoothedSd, TextbookOracle) {
    std::mt19937_64 rng(6);
    const MatrixXd curves = oracle::random_matrix(rng, 37, 9);
    const VectorXd sd = sd_unsmoothed(curves);
    for (Index g = 0; g < 9; ++g) {
        double m = 0.0;
        for (Index r = 0; r < 37; ++r) m += curves(r, g);
        m /= 37.0;
        double ss = 0.0;
        for (Index r = 0; r < 37; ++r) ss += (curves(r, g) - m) * (curves(r, g) - m);
        EXPECT_NEAR(sd[g], std::sqrt(ss / 36.0), 1e-13);
    }
}

TEST(SmoothedSd, ConstantReplicates) {
    std::mt19937_64 rng(7);
    const Index n = 30, B = 50;
    Eigen::MatrixXi counts(B, n);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
    for (Index r = 0; r < B; ++r) {
        counts.row(r).setZero();
        for (Index i = 0; i < n; ++i) ++counts(r, pick(rng));
    }
    Eigen::RowVectorXd original(6);
    original << 0.1, -0.4, 2.0, 1.5, 0.0, -3.0;
    MatrixXd curves(B, 6);
    curves.rowwise() = original;
    const SmoothedSd s = sd_smoothed(curves, counts);
    EXPECT_EQ(s.center.transpose(), original);
    EXPECT_EQ(s.sd.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SmoothedSd, IndependentCurvesShrinkWithB) {
    // With curves independent of the counts, E sum_i cov_i^2 is about
    // n var(C) var(a) / B, var(C) ~ 1: sd ~ sd_a sqrt(n / B).
    const Index n = 40;
    for (Index B : {500, 8000}) {
        std::mt19937_64 rng(8 + B);
        Eigen::MatrixXi counts(B, n);
        std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
        for (Index r = 0; r < B; ++r) {
            counts.row(r).setZero();
            for (Index i = 0; i < n; ++i) ++counts(r, pick(rng));
        }
        const MatrixXd curves = oracle::random_matrix(rng, static_cast<int>(B), 5);
        const SmoothedSd s = sd_smoothed(curves, counts);
        const double expect = std::sqrt(static_cast<double>(n) / B);
        for (Index g = 0; g < 5; ++g) {
            EXPECT_GT(s.sd[g], 0.5 * expect);
            EXPECT_LT(s.sd[g], 1.5 * expect);
        }
    }
}

TEST(SmoothedSd, MatchesLoopOracle) {
    std::mt19937_64 rng(9);
    const Index n = 12, B = 25;
    Eigen::MatrixXi counts(B, n);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(n) - 1);
    for (Index r = 0; r < B; ++r) {
        counts.row(r).setZero();
        for (Index i = 0; i < n; ++i) ++counts(r, pick(rng));
    }
    const MatrixXd curves = oracle::random_matrix(rng, static_cast<int>(B), 3);
    const SmoothedSd s = sd_smoothed(curves, counts);
    for (Index g = 0; g < 3; ++g) {
        double abar = 0.0;
        for (Index r = 0; r < B; ++r) abar += curves(r, g) / B;
        double total = 0.0;
        for (Index i = 0; i < n; ++i) {
            double cbar = 0.0;
            for (Index r = 0; r < B; ++r) cbar += counts(r, i) / static_cast<double>(B);
            double cov = 0.0;
            for (Index r = 0; r < B; ++r) cov += (counts(r, i) - cbar) * (curves(r, g) - abar);
            cov /= B;
            total += cov * cov;
        }
        EXPECT_NEAR(s.sd[g], std::sqrt(total), 1e-12);
        EXPECT_NEAR(s.center[g], abar, 1e-14);
    }
}

TEST(BuildBand, Envelopes) {
    const std::vector<double> grid = band_grid(20);
    VectorXd center = VectorXd::LinSpaced(21, -1.0, 1.0);
    const Band flat = build_band(grid, center, VectorXd::Zero(21), 20, 0.05);
    EXPECT_EQ(flat.lower, center);
    EXPECT_EQ(flat.upper, center);
    const VectorXd sd = VectorXd::LinSpaced(21, 0.1, 0.5);
    const Band b = build_band(grid, center, sd, 20, 0.05);
    const double q = scb_threshold(20, 0.05);
    for (Index g = 0; g < 21; ++g) {
        EXPECT_NEAR(b.upper[g] - center[g], sd[g] * q, 1e-14);
        EXPECT_LE(b.lower[g], center[g]);
        EXPECT_GE(b.upper[g], center[g]);
    }
    EXPECT_TRUE(b.covers(center));
    VectorXd off = center;
    off[7] = b.upper[7] + 1e-9;
    EXPECT_FALSE(b.covers(off));
    EXPECT_THROW(build_band(grid, VectorXd::Zero(20), VectorXd::Zero(20), 20, 0.05), StructuralError);
}

#include <gtest/gtest.h>

#include <random>

#include <gacm/design.hpp>

using namespace gacm;

namespace {

Dataset random_dataset(unsigned seed, Index n, Index d, Index p) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> snp(-1, 1);
    Dataset ds;
    ds.y = VectorXd::Zero(n);
    ds.X.resize(n, d);
    ds.T.resize(n, p);
    for (Index i = 0; i < n; ++i) {
        for (Index k = 0; k < d; ++k) ds.X(i, k) = u(rng);
        for (Index l = 0; l < p; ++l) ds.T(i, l) = snp(rng);
    }
    ds.T.col(0).setOnes();
    ds.validate();
    return ds;
}

} // namespace

TEST(Rescale, AffineMap) {
    MatrixXd raw(3, 2);
    raw << 2, 0, 4, 0.25, 6, 1;
    auto [unit, params] = rescale(raw);
    EXPECT_DOUBLE_EQ(unit(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(unit(1, 0), 0.5);
    EXPECT_DOUBLE_EQ(unit(2, 0), 1.0);
    EXPECT_EQ(unit.col(1), raw.col(1));
    EXPECT_DOUBLE_EQ(params[0].min, 2.0);
    EXPECT_DOUBLE_EQ(params[0].max, 6.0);
}

TEST(Rescale, RoundTrip) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(5.0, 30.0);
    MatrixXd raw(200, 3);
    for (auto& v : raw.reshaped()) v = nd(rng);
    auto [unit, params] = rescale(raw);
    EXPECT_GE(unit.minCoeff(), 0.0);
    EXPECT_LE(unit.maxCoeff(), 1.0);
    for (Index k = 0; k < 3; ++k) {
        EXPECT_EQ(unit.col(k).minCoeff(), 0.0);
        EXPECT_EQ(unit.col(k).maxCoeff(), 1.0);
    }
    EXPECT_LT((unscale(unit, params) - raw).cwiseAbs().maxCoeff(), 1e-12 * raw.cwiseAbs().maxCoeff());
}

TEST(Rescale, ConstantColumnNamed) {
    MatrixXd raw(4, 2);
    raw << 1, 3, 2, 3, 3, 3, 4, 3;
    try {
        rescale(raw, {"age", "dose"});
        FAIL() << "expected DegenerateCovariate";
    } catch (const DegenerateCovariate& e) {
        EXPECT_EQ(e.column(), "dose");
    }
}

TEST(Dataset, ValidateRejectsOutOfRange) {
    Dataset ds;
    ds.y = VectorXd::Zero(3);
    ds.X = MatrixXd::Constant(3, 1, 0.5);
    ds.X(1, 0) = 1.5;
    ds.T = MatrixXd::Ones(3, 1);
    EXPECT_THROW(ds.validate(), DomainError);
    ds.X(1, 0) = 0.5;
    ds.T.resize(2, 1);
    EXPECT_THROW(ds.validate(), StructuralError);
}

TEST(Dataset, SubsetPicksRowsAndColumns) {
    const Dataset ds = random_dataset(1, 20, 2, 5);
    const Dataset sub = ds.subset({3, 3, 7}, {4, 1});
    ASSERT_EQ(sub.n(), 3);
    ASSERT_EQ(sub.p(), 2);
    EXPECT_EQ(sub.X.row(1), ds.X.row(3));
    EXPECT_EQ(sub.T(2, 0), ds.T(7, 4));
    EXPECT_EQ(sub.T(2, 1), ds.T(7, 1));
    EXPECT_EQ(sub.t_names[0], "t5");
}

// Hand computation: X = (0, 0.5, 1), q = 2, N = 1 puts the interior knot at
// 0.5, so the raw hats evaluate to the identity rows. All raw means are 1/3,
// every ratio is 1 and the scale sqrt(N) is 1: B_2 = b_2 - b_1 = (-1, 1, 0),
// B_3 = b_3 - b_1 = (-1, 0, 1).
TEST(BuildDesign, HandExample) {
    Dataset ds;
    ds.y = VectorXd::Zero(3);
    ds.X.resize(3, 1);
    ds.X << 0.0, 0.5, 1.0;
    ds.T.resize(3, 2);
    ds.T << 1, 2, 1, 0, 1, -1;
    ds.validate();
    const auto terms = fit_terms(ds, 1, 2);
    const GroupedDesign gd = build_design(ds, terms);
    MatrixXd expected(3, 6);
    expected << 1, -1, -1, 2, -2, -2,  //
        1, 1, 0, 0, 0, 0,              //
        1, 0, 1, -1, 0, -1;
    EXPECT_LT((gd.Z - expected).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ(gd.layout.groups(), 2);
    EXPECT_EQ(gd.layout.intercept_col(1), 3);
    EXPECT_EQ(gd.layout.block_begin(1, 0), 4);
}

TEST(BuildDesign, GamSpecialCase) {
    Dataset ds = random_dataset(2, 100, 1, 1);
    const auto terms = fit_terms(ds, 3, 4);
    const GroupedDesign gd = build_design(ds, terms);
    ASSERT_EQ(gd.Z.cols(), 1 + terms[0].size());
    EXPECT_EQ(gd.Z.col(0), VectorXd::Ones(100));
    for (Index i = 0; i < 100; ++i)
        EXPECT_EQ(gd.Z.row(i).tail(terms[0].size()).transpose(), terms[0].eval(ds.X(i, 0)));
    // Pure-basis columns are centered.
    for (Index c = 1; c < gd.Z.cols(); ++c) EXPECT_LT(std::abs(gd.Z.col(c).mean()), 1e-9);
}

TEST(BuildDesign, LayoutAndRowwiseReconstruction) {
    const Dataset ds = random_dataset(3, 60, 2, 4);
    const auto terms = fit_terms(ds, 2, 4);
    const GroupedDesign gd = build_design(ds, terms);
    const Index J1 = terms[0].size();
    ASSERT_EQ(J1, 5);
    EXPECT_EQ(gd.Z.cols(), 4 * (1 + 2 * J1));
    for (Index g = 0; g + 1 < gd.layout.groups(); ++g) EXPECT_LT(gd.layout.begin(g), gd.layout.begin(g + 1));
    EXPECT_EQ(gd.layout.cols(), gd.Z.cols());
    for (Index i = 0; i < ds.n(); ++i) {
        for (Index g = 0; g < 4; ++g) {
            const double t = ds.T(i, g);
            EXPECT_EQ(gd.Z(i, gd.layout.intercept_col(g)), t);
            for (Index k = 0; k < 2; ++k) {
                const VectorXd b = terms[k].eval(ds.X(i, k));
                for (Index j = 0; j < J1; ++j) EXPECT_EQ(gd.Z(i, gd.layout.block_begin(g, k) + j), b[j] * t);
            }
            if (t == 0.0) EXPECT_EQ(gd.Z.row(i).segment(gd.layout.begin(g), gd.layout.size(g)).norm(), 0.0);
        }
    }
}

TEST(BuildDesign, SubsetOfGroupsAndErrors) {
    const Dataset ds = random_dataset(4, 40, 1, 6);
    const auto terms = fit_terms(ds, 1, 4);
    const GroupedDesign gd = build_design(ds, terms, {5, 2});
    EXPECT_EQ(gd.layout.id(0), 5);
    EXPECT_EQ(gd.layout.find(2), 1);
    EXPECT_EQ(gd.layout.find(3), -1);
    EXPECT_EQ(gd.Z.col(0), ds.T.col(5));
    EXPECT_THROW(build_design(ds, terms, {6}), StructuralError);
    auto two = terms;
    two.push_back(terms[0]);
    EXPECT_THROW(build_design(ds, two), StructuralError);
}

TEST(BuildDesign, LinearCovariateColumn) {
    Dataset ds = random_dataset(5, 50, 2, 2);
    ds.x_linear = {false, true};
    const auto terms = fit_terms(ds, 2, 4);
    EXPECT_EQ(terms[1].size(), 1);
    const GroupedDesign gd = build_design(ds, terms);
    const Index c = gd.layout.block_begin(0, 1);
    EXPECT_LT(std::abs(gd.Z.col(c).mean()), 1e-12);
    EXPECT_NEAR(gd.Z(7, c), ds.X(7, 1) - ds.X.col(1).mean(), 1e-15);
}

TEST(Step2Design, CountsAndZeros) {
    Dataset ds = random_dataset(6, 80, 2, 6);
    const auto terms = fit_terms(ds, 3, 4);
    ASSERT_EQ(terms[1].size(), 6);
    const GroupedDesign gd = build_step2_design(ds, {1, 2, 4, 5}, 1, terms[1]);
    EXPECT_EQ(gd.Z.cols(), 24);
    EXPECT_FALSE(gd.layout.intercept);
    for (Index i = 0; i < ds.n(); ++i) {
        bool all_zero = true;
        for (int l : {1, 2, 4, 5}) all_zero = all_zero && ds.T(i, l) == 0.0;
        if (all_zero) EXPECT_EQ(gd.Z.row(i).norm(), 0.0);
    }
    const GroupedDesign uni = build_step2_design(ds, {0}, 0, terms[0]);
    for (Index i = 0; i < ds.n(); ++i) EXPECT_EQ(uni.Z.row(i).transpose(), terms[0].eval(ds.X(i, 0)));
    EXPECT_THROW(build_step2_design(ds, {}, 0, terms[0]), NothingSelected);
}

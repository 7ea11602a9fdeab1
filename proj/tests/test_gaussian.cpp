#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "ngf/error.hpp"
#include "ngf/gaussian.hpp"
#include "support.hpp"

using namespace ngf;

namespace {

const double kSqrt3 = std::sqrt(3.0);
const double kSqrt2 = std::sqrt(2.0);

} // namespace

TEST(UnscentedPoints, ScalarKappaTwo) {
    const GaussianBelief<1> b(Vector<1>::Zero(), Matrix<1>::Identity());
    const auto set = unscented_points(b, 2.0);
    ASSERT_EQ(set.size(), 3u);
    EXPECT_DOUBLE_EQ(set.points[0](0), 0.0);
    EXPECT_NEAR(set.points[1](0), kSqrt3, 1e-15);
    EXPECT_NEAR(set.points[2](0), -kSqrt3, 1e-15);
    EXPECT_NEAR(set.weights[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(set.weights[1], 1.0 / 6.0, 1e-15);
    EXPECT_NEAR(set.weights[2], 1.0 / 6.0, 1e-15);
}

TEST(UnscentedPoints, PlanarKappaOne) {
    const GaussianBelief<2> b(Eigen::Vector2d(1.0, 2.0), Eigen::Matrix2d::Identity());
    const auto set = unscented_points(b, 1.0);
    ASSERT_EQ(set.size(), 5u);
    const std::vector<Eigen::Vector2d> expected{
        {1.0, 2.0}, {1.0 + kSqrt3, 2.0}, {1.0, 2.0 + kSqrt3}, {1.0 - kSqrt3, 2.0}, {1.0, 2.0 - kSqrt3}};
    for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_NEAR((set.points[i] - expected[i]).norm(), 0.0, 1e-14) << "point " << i;
    }
    EXPECT_NEAR(set.weights[0], 1.0 / 3.0, 1e-15);
    for (std::size_t i = 1; i < 5; ++i) {
        EXPECT_NEAR(set.weights[i], 1.0 / 6.0, 1e-15);
    }
}

TEST(UnscentedPoints, RejectsKappaAtOrBelowMinusD) {
    const GaussianBelief<2> b(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    EXPECT_THROW(unscented_points(b, -2.0), std::invalid_argument);
}

TEST(UnscentedPoints, NonFiniteBeliefIsInvalid) {
    GaussianBelief<2> b(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    b.mean(1) = std::nan("");
    try {
        unscented_points(b, 1.0);
        FAIL() << "expected FilterError";
    } catch (const FilterError& e) {
        EXPECT_STREQ(e.what(), "invalid belief");
    }
}

TEST(UnscentedPoints, DefaultKappaKeepsWeightsNonnegative) {
    EXPECT_DOUBLE_EQ(default_kappa(1), 2.0);
    EXPECT_DOUBLE_EQ(default_kappa(3), 0.0);
    EXPECT_DOUBLE_EQ(default_kappa(6), 0.0);
    const GaussianBelief<6> b(Vector<6>::Zero(), Matrix<6>::Identity());
    const auto set = generate_points(PointRule::unscented(), b);
    for (double w : set.weights) {
        EXPECT_GE(w, 0.0);
    }
}

TEST(CubaturePoints, StandardPlanar) {
    const GaussianBelief<2> b(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    const auto set = cubature_points(b);
    ASSERT_EQ(set.size(), 4u);
    const std::vector<Eigen::Vector2d> expected{{kSqrt2, 0.0}, {0.0, kSqrt2}, {-kSqrt2, 0.0}, {0.0, -kSqrt2}};
    for (std::size_t i = 0; i < expected.size(); ++i) {
        EXPECT_NEAR((set.points[i] - expected[i]).norm(), 0.0, 1e-15);
        EXPECT_DOUBLE_EQ(set.weights[i], 0.25);
    }
}

TEST(CubaturePoints, ScalarVarianceFour) {
    const GaussianBelief<1> b(Vector<1>::Constant(5.0), Matrix<1>::Constant(4.0));
    const auto set = cubature_points(b);
    ASSERT_EQ(set.size(), 2u);
    EXPECT_DOUBLE_EQ(set.points[0](0), 7.0);
    EXPECT_DOUBLE_EQ(set.points[1](0), 3.0);
    EXPECT_DOUBLE_EQ(set.weights[0], 0.5);
    EXPECT_DOUBLE_EQ(set.weights[1], 0.5);
}

TEST(PointRule, Counts) {
    EXPECT_EQ(PointRule::unscented().point_count(3), 7u);
    EXPECT_EQ(PointRule::cubature().point_count(3), 6u);
    EXPECT_EQ(PointRule::mean_only().point_count(3), 1u);
}

TEST(MomentsFromPoints, TwoPointVariance) {
    const std::vector<Vector<1>> pts{Vector<1>::Constant(-1.0), Vector<1>::Constant(1.0)};
    const auto b = moments_from_points(pts, {0.5, 0.5});
    EXPECT_DOUBLE_EQ(b.mean(0), 0.0);
    EXPECT_DOUBLE_EQ(b.cov(0, 0), 1.0);
}

TEST(MomentsFromPoints, SinglePointHasFlooredZeroCovariance) {
    const std::vector<Eigen::Vector2d> pts{{3.0, -4.0}};
    const auto b = moments_from_points(pts, {1.0});
    EXPECT_EQ(b.mean, Eigen::Vector2d(3.0, -4.0));
    // Zero up to the eigenvalue floor of the repair policy.
    EXPECT_LE(b.cov.cwiseAbs().maxCoeff(), 1e-11);
}

TEST(MomentsFromPoints, EmptySetThrows) {
    EXPECT_THROW(moments_from_points(std::vector<Vector<1>>{}, {}), std::invalid_argument);
}

TEST(GaussianLogpdf, StandardNormalAtZero) {
    const GaussianBelief<1> b(Vector<1>::Zero(), Matrix<1>::Identity());
    EXPECT_NEAR(gaussian_logpdf(Vector<1>::Zero().eval(), b), -0.91893853, 1e-8);
}

TEST(GaussianLogpdf, VarianceTwoAtZero) {
    const GaussianBelief<1> b(Vector<1>::Zero(), Matrix<1>::Constant(2.0));
    EXPECT_NEAR(gaussian_logpdf(Vector<1>::Zero().eval(), b), -1.26551, 1e-5);
    EXPECT_NEAR(gaussian_logpdf(Vector<1>::Zero().eval(), b),
                -0.5 * (std::log(2.0 * std::numbers::pi) + std::log(2.0)), 1e-15);
}

TEST(GaussianLogpdf, AtMeanOnlyNormalizer) {
    test::Gen gen(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto b = gen.belief<3>(3);
        const double expected = -0.5 * (3.0 * std::log(2.0 * std::numbers::pi) + std::log(b.cov.determinant()));
        EXPECT_NEAR(gaussian_logpdf(b.mean, b), expected, 1e-10);
    }
}

TEST(GaussianLogpdf, IntegratesToOne) {
    const double m = 1.3;
    const double sigma = 0.7;
    const GaussianBelief<1> b(Vector<1>::Constant(m), Matrix<1>::Constant(sigma * sigma));
    const int n = 20000;
    const double lo = m - 8 * sigma;
    const double h = 16 * sigma / n;
    double total = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double w = (i == 0 || i == n) ? 0.5 : 1.0;
        total += w * std::exp(gaussian_logpdf(Vector<1>::Constant(lo + i * h).eval(), b));
    }
    EXPECT_NEAR(total * h, 1.0, 1e-6);
}

TEST(PsdRepair, IdentityUnchanged) {
    EXPECT_EQ(psd_repair(Eigen::Matrix3d::Identity().eval()), Eigen::Matrix3d::Identity());
}

TEST(PsdRepair, SymmetrizesByAveraging) {
    Eigen::Matrix2d c;
    c << 1.0, 0.5, 0.4, 1.0;
    Eigen::Matrix2d expected;
    expected << 1.0, 0.45, 0.45, 1.0;
    EXPECT_NEAR((psd_repair(c) - expected).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(PsdRepair, FloorsTinyNegativeEigenvalue) {
    Eigen::Matrix2d c = Eigen::Vector2d(1.0, -1e-15).asDiagonal();
    const Eigen::Matrix2d r = psd_repair(c, PsdRepairPolicy{1e-12, true, true});
    EXPECT_NEAR(r(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(r(1, 1), 1e-12, 1e-20);
    EXPECT_NEAR(r(0, 1), 0.0, 1e-20);
}

TEST(PsdRepair, ScaleAwareFloor) {
    Eigen::Matrix2d c = Eigen::Vector2d(100.0, 0.0).asDiagonal();
    const Eigen::Matrix2d r = psd_repair(c);
    EXPECT_NEAR(r(1, 1), 1e-10, 1e-18);
}

TEST(PsdRepair, RejectsNonFinite) {
    Eigen::Matrix2d c = Eigen::Matrix2d::Identity();
    c(0, 1) = INFINITY;
    EXPECT_THROW(psd_repair(c), std::invalid_argument);
}

TEST(CovarianceSqrt, SemidefiniteFactor) {
    Eigen::Matrix2d c;
    c << 1.0, 1.0, 1.0, 1.0;
    const Eigen::Matrix2d a = covariance_sqrt(c);
    EXPECT_NEAR((a * a.transpose() - c).cwiseAbs().maxCoeff(), 0.0, 1e-14);
}

TEST(SmallCholesky, MatchesEigen) {
    test::Gen gen(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = gen.integer(1, 3);
        Matrix<Eigen::Dynamic> a = gen.spd<Eigen::Dynamic>(n);
        Matrix<Eigen::Dynamic> l = a;
        ASSERT_TRUE(detail::small_cholesky(l));
        const Eigen::MatrixXd ref = Eigen::LLT<Eigen::MatrixXd>(a).matrixL();
        EXPECT_NEAR((l - ref).cwiseAbs().maxCoeff(), 0.0, 1e-12);
        EXPECT_NEAR(detail::inverse_trace_from_cholesky(l), a.inverse().trace(), 1e-9 * a.inverse().trace());
    }
    Eigen::Matrix2d indefinite;
    indefinite << 1.0, 2.0, 2.0, 1.0;
    EXPECT_FALSE(detail::small_cholesky(indefinite));
}

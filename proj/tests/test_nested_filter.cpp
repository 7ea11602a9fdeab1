#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ngf/error.hpp"
#include "ngf/lorenz63.hpp"
#include "ngf/nested_filter.hpp"
#include "support.hpp"

using namespace ngf;

namespace {

const Eigen::Vector3d kTheta(10.0, 28.0, 8.0 / 3.0);

struct LorenzFixture {
    Lorenz63Config cfg;
    Lorenz63Model model = make_lorenz63_model(cfg);
    GaussianBelief<3> prior_x{Eigen::Vector3d(-6.0, -5.5, -24.5), Eigen::Matrix3d::Identity()};
    GaussianBelief<3> prior_theta{Eigen::Vector3d(11.2, 27.4, 2.9), Eigen::Matrix3d::Identity()};
    Trajectory<3> truth;

    explicit LorenzFixture(long steps, std::uint64_t seed = 21)
        : truth(simulate_ground_truth(cfg, kTheta, prior_x, steps, seed)) {}

    std::span<const Observation<3>> obs() const { return truth.observations; }
};

template <int Dx, int Dp>
std::vector<NestedFilterState<Dx, Dp>> run_nested(const GaussianBelief<Dp>& prior_theta,
                                                  const GaussianBelief<Dx>& prior_x,
                                                  std::span<const Observation<Dx>> obs,
                                                  const StateSpaceModel<Dx, Dp>& model, const NestedFilterConfig& cfg,
                                                  Execution exec = Execution::serial) {
    std::vector<NestedFilterState<Dx, Dp>> states;
    auto s = initialize<Dx, Dp>(prior_theta, prior_x, cfg);
    for (std::size_t k = 0; k < obs.size(); ++k) {
        s = outer_step(s, obs.first(k + 1), model, prior_x, cfg, exec);
        states.push_back(s);
    }
    return states;
}

template <int Dx, int Dp>
void expect_bitwise_equal(const NestedFilterState<Dx, Dp>& a, const NestedFilterState<Dx, Dp>& b) {
    ASSERT_EQ(a.param_belief.mean, b.param_belief.mean);
    ASSERT_EQ(a.param_belief.cov, b.param_belief.cov);
    ASSERT_EQ(a.state_belief.mean, b.state_belief.mean);
    ASSERT_EQ(a.state_belief.cov, b.state_belief.cov);
    ASSERT_EQ(a.posterior_weights, b.posterior_weights);
    ASSERT_EQ(a.log_normalizer, b.log_normalizer);
    ASSERT_EQ(a.bank.size(), b.bank.size());
    for (std::size_t i = 0; i < a.bank.size(); ++i) {
        ASSERT_EQ(a.bank[i].belief.mean, b.bank[i].belief.mean);
        ASSERT_EQ(a.bank[i].belief.cov, b.bank[i].belief.cov);
    }
}

} // namespace

TEST(NormTest, IdenticalPointsPass) {
    for (PNorm p : {PNorm::one, PNorm::two, PNorm::infinity}) {
        EXPECT_TRUE(norm_test(kTheta, kTheta, 1e-9, p));
    }
}

TEST(NormTest, SmallEuclideanMove) {
    const Eigen::Vector3d moved = kTheta + Eigen::Vector3d(0.001, 0.0, 0.0);
    EXPECT_NEAR(1e-3 * kTheta.norm(), 0.029852, 1e-6);
    EXPECT_TRUE(norm_test(moved, kTheta, 1e-3, PNorm::two));
}

TEST(NormTest, ThreeFourFiveFails) {
    EXPECT_FALSE(norm_test(Eigen::Vector3d::Zero(), Eigen::Vector3d(3.0, 4.0, 0.0), 1e-3, PNorm::two));
}

TEST(NormTest, ZeroReferenceForcesRestart) {
    EXPECT_FALSE(norm_test(Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), 1.0, PNorm::two));
}

TEST(NormTest, NormsDiffer) {
    const Eigen::Vector3d old(1.0, 1.0, 1.0);
    const Eigen::Vector3d moved(1.5, 1.5, 1.0);
    // distances: p=1 -> 1, p=2 -> 0.707, inf -> 0.5; scales: 3, 1.732, 1
    EXPECT_FALSE(norm_test(moved, old, 0.3, PNorm::one));
    EXPECT_TRUE(norm_test(moved, old, 0.45, PNorm::two));
    EXPECT_FALSE(norm_test(moved, old, 0.45, PNorm::infinity));
    EXPECT_TRUE(norm_test(moved, old, 0.51, PNorm::infinity));
    EXPECT_THROW(norm_test(Eigen::Vector2d::Zero(), old, 0.1, PNorm::two), std::invalid_argument);
}

TEST(PosteriorWeights, ConstantLikelihoodsKeepUniform) {
    const std::vector<double> ll{-3.7, -3.7, -3.7};
    const std::vector<double> w{1.0 / 3, 1.0 / 3, 1.0 / 3};
    const auto out = posterior_weights(ll, w);
    for (double v : out.weights) {
        EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
    }
}

TEST(PosteriorWeights, TwoToOne) {
    const std::vector<double> ll{std::log(2.0), 0.0};
    const auto out = posterior_weights(ll, std::vector<double>{0.5, 0.5});
    EXPECT_NEAR(out.weights[0], 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(out.weights[1], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(out.log_normalizer, std::log(1.5), 1e-15);
}

TEST(PosteriorWeights, ShiftInvariant) {
    const std::vector<double> ll{-1.0, -2.5, 0.3, -7.0};
    const std::vector<double> w{0.1, 0.2, 0.3, 0.4};
    std::vector<double> shifted = ll;
    for (double& v : shifted) {
        v += 1000.0;
    }
    const auto a = posterior_weights(ll, w);
    const auto b = posterior_weights(shifted, w);
    // The shifted inputs are themselves rounded at the 1e-13 level.
    for (std::size_t i = 0; i < ll.size(); ++i) {
        EXPECT_NEAR(a.weights[i], b.weights[i], 1e-12);
    }
    EXPECT_NEAR(b.log_normalizer - a.log_normalizer, 1000.0, 1e-9);
}

TEST(PosteriorWeights, AllMinusInfinityUnderflows) {
    const double ninf = -std::numeric_limits<double>::infinity();
    try {
        posterior_weights(std::vector<double>{ninf, ninf}, std::vector<double>{0.5, 0.5});
        FAIL() << "expected underflow";
    } catch (const FilterError& e) {
        EXPECT_STREQ(e.what(), "total likelihood underflow");
    }
    EXPECT_THROW(posterior_weights(std::vector<double>{NAN, 0.0}, std::vector<double>{0.5, 0.5}), FilterError);
    EXPECT_THROW(posterior_weights(std::vector<double>{0.0}, std::vector<double>{0.5, 0.5}), std::invalid_argument);
}

TEST(PosteriorWeights, PriorScaleInvariant) {
    const std::vector<double> ll{-1.0, -2.0, -0.5};
    const std::vector<double> w{0.2, 0.5, 0.3};
    const std::vector<double> scaled{0.2 * 7.0, 0.5 * 7.0, 0.3 * 7.0};
    const auto a = posterior_weights(ll, w);
    const auto b = posterior_weights(ll, scaled);
    for (std::size_t i = 0; i < ll.size(); ++i) {
        EXPECT_NEAR(a.weights[i], b.weights[i], 1e-15);
    }
}

TEST(EstimateParameters, TwoPointWeightedMoments) {
    SigmaPointSet<1> set{{Vector<1>::Constant(0.0), Vector<1>::Constant(1.0)}, {0.5, 0.5}};
    const auto b = estimate_parameters(set, std::vector<double>{0.25, 0.75});
    EXPECT_DOUBLE_EQ(b.mean(0), 0.75);
    EXPECT_DOUBLE_EQ(b.cov(0, 0), 0.1875);
}

TEST(EstimateParameters, OneHotCollapses) {
    const GaussianBelief<3> prior(kTheta, Eigen::Matrix3d::Identity());
    const auto set = unscented_points(prior, 1.0);
    std::vector<double> w(set.size(), 0.0);
    w[4] = 1.0;
    const auto b = estimate_parameters(set, w);
    EXPECT_EQ(b.mean, set.points[4]);
    EXPECT_LE(b.cov.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(EstimateParameters, CanonicalWeightsRecoverBelief) {
    test::Gen gen(31);
    for (int trial = 0; trial < 20; ++trial) {
        const auto b = gen.belief<3>(3);
        const auto set = unscented_points(b, 0.5);
        const auto back = estimate_parameters(set, set.weights);
        EXPECT_LE((back.mean - b.mean).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LE((back.cov - b.cov).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(EstimateState, MixtureMeanAndSpread) {
    using Bank = std::vector<InnerFilterState<1, 1>>;
    const Bank bank{{GaussianBelief<1>(Vector<1>::Constant(-1.0), Matrix<1>::Constant(0.3)), Vector<1>::Zero(), 1},
                    {GaussianBelief<1>(Vector<1>::Constant(1.0), Matrix<1>::Constant(0.5)), Vector<1>::Zero(), 1}};
    const auto b = estimate_state(bank, std::vector<double>{0.5, 0.5});
    EXPECT_DOUBLE_EQ(b.mean(0), 0.0);
    EXPECT_DOUBLE_EQ(b.cov(0, 0), 1.0);
    const auto full = estimate_state(bank, std::vector<double>{0.5, 0.5}, true);
    EXPECT_DOUBLE_EQ(full.cov(0, 0), 1.4);
    const auto hot = estimate_state(bank, std::vector<double>{0.0, 1.0});
    EXPECT_DOUBLE_EQ(hot.mean(0), 1.0);
    EXPECT_LE(hot.cov(0, 0), 1e-11);
}

TEST(EstimateState, EqualMeansZeroSpread) {
    const Eigen::Vector3d m(1.0, 2.0, 3.0);
    std::vector<InnerFilterState<3, 3>> bank(4, {GaussianBelief<3>(m, Eigen::Matrix3d::Identity()), kTheta, 0});
    const auto b = estimate_state(bank, std::vector<double>{0.1, 0.2, 0.3, 0.4});
    EXPECT_LE((b.mean - m).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE(b.cov.cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Initialize, PointCountsAndBank) {
    const LorenzFixture f(0);
    NestedFilterConfig cfg;
    const auto ut = initialize<3, 3>(f.prior_theta, f.prior_x, cfg);
    EXPECT_EQ(ut.points.size(), 7u);
    EXPECT_EQ(ut.bank.size(), 7u);
    for (const auto& inner : ut.bank) {
        EXPECT_EQ(inner.belief.mean, f.prior_x.mean);
        EXPECT_EQ(inner.belief.cov, f.prior_x.cov);
    }
    EXPECT_EQ(ut.prev_points.points, ut.points.points);
    cfg.point_rule = PointRule::cubature();
    EXPECT_EQ((initialize<3, 3>(f.prior_theta, f.prior_x, cfg).points.size()), 6u);
}

TEST(Initialize, DegeneratePriorCollapsesPoints) {
    const LorenzFixture f(0);
    const GaussianBelief<3> point_prior(kTheta, Eigen::Matrix3d::Zero());
    const auto s = initialize<3, 3>(point_prior, f.prior_x, NestedFilterConfig{});
    for (const auto& p : s.points.points) {
        // Equal up to the square root of the eigenvalue floor.
        EXPECT_LE((p - kTheta).norm(), 1e-4);
    }
}

TEST(NestedFilterConfig, RejectsNonPositiveLambda) {
    NestedFilterConfig cfg;
    cfg.lambda = 0.0;
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(OuterStep, SinglePointEstimatorCollapses) {
    const LorenzFixture f(50);
    NestedFilterConfig cfg;
    cfg.point_rule = PointRule::mean_only();
    const auto states = run_nested(f.prior_theta, f.prior_x, f.obs(), f.model, cfg);
    for (const auto& s : states) {
        EXPECT_EQ(s.param_belief.mean, f.prior_theta.mean);
        EXPECT_LE(s.param_belief.cov.cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(OuterStep, ThetaFreeLikelihoodKeepsPrior) {
    auto sys = test::planar_system();
    sys.b.setZero();
    const auto model = test::make_linear_model<2, 1>(sys);
    test::Gen gen(77);
    const auto ys = test::simulate_linear(sys, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(2), 10, 2, gen);
    std::vector<Observation<2>> obs;
    for (std::size_t k = 0; k < ys.size(); ++k) {
        obs.push_back({static_cast<long>(2 * (k + 1)), ys[k]});
    }
    const GaussianBelief<1> prior_theta(Vector<1>::Constant(3.0), Matrix<1>::Constant(0.4));
    const GaussianBelief<2> prior_x(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    NestedFilterConfig cfg;
    cfg.micro_steps = 2;
    const auto states = run_nested<2, 1>(prior_theta, prior_x, obs, model, cfg);
    for (const auto& s : states) {
        EXPECT_NEAR(s.param_belief.mean(0), 3.0, 1e-12);
        EXPECT_NEAR(s.param_belief.cov(0, 0), 0.4, 1e-12);
    }
}

TEST(OuterStep, MatchesThreeAtomQuadrature) {
    const auto sys = test::scalar_system();
    const auto model = test::make_linear_model<1, 1>(sys);
    const GaussianBelief<1> prior_theta(Vector<1>::Constant(1.5), Matrix<1>::Constant(0.8));
    const GaussianBelief<1> prior_x(Vector<1>::Constant(0.2), Matrix<1>::Constant(1.3));
    const int micro = 3;
    test::Gen gen(5);
    const auto ys = test::simulate_linear(sys, Eigen::VectorXd::Constant(1, 1.2), Eigen::VectorXd::Zero(1), 4, micro, gen);
    std::vector<Observation<1>> obs;
    for (std::size_t k = 0; k < ys.size(); ++k) {
        obs.push_back({static_cast<long>(micro * (k + 1)), ys[k]});
    }
    NestedFilterConfig cfg;
    cfg.micro_steps = micro;
    cfg.recursive = false;
    const auto first = outer_step(initialize<1, 1>(prior_theta, prior_x, cfg),
                                  std::span<const Observation<1>>(obs).first(1), model, prior_x, cfg);

    // E[theta | y_1] restricted to the atoms mu, mu +/- sqrt(3 c) with weights 2/3, 1/6, 1/6.
    const double mu = 1.5;
    const double spread = std::sqrt(3.0 * 0.8);
    const std::vector<double> atoms{mu, mu + spread, mu - spread};
    const std::vector<double> prior_w{2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0};
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < atoms.size(); ++i) {
        test::KalmanOracle kf{prior_x.mean, prior_x.cov};
        for (int k = 0; k < micro; ++k) {
            kf.predict(sys.a, sys.b * Eigen::VectorXd::Constant(1, atoms[i]), sys.q);
        }
        kf.update(ys[0], sys.h, sys.r);
        const double lik = std::exp(kf.last_log_likelihood);
        num += prior_w[i] * lik * atoms[i];
        den += prior_w[i] * lik;
    }
    EXPECT_NEAR(first.param_belief.mean(0), num / den, 1e-12);
    EXPECT_NEAR(first.log_normalizer, std::log(den), 1e-12);
}

TEST(OuterStep, VanishingLambdaEqualsNonRecursive) {
    const LorenzFixture f(250);
    ASSERT_EQ(f.obs().size(), 50u);
    NestedFilterConfig recursive;
    recursive.lambda = 1e-300;
    NestedFilterConfig replay = recursive;
    replay.recursive = false;
    const auto a = run_nested(f.prior_theta, f.prior_x, f.obs(), f.model, recursive);
    const auto b = run_nested(f.prior_theta, f.prior_x, f.obs(), f.model, replay);
    for (std::size_t k = 0; k < a.size(); ++k) {
        expect_bitwise_equal(a[k], b[k]);
    }
}

TEST(OuterStep, FrozenPointsReplayEqualsIncremental) {
    const LorenzFixture f(250);
    NestedFilterConfig incremental;
    incremental.point_rule = PointRule::mean_only();
    NestedFilterConfig replay = incremental;
    replay.recursive = false;
    const auto a = run_nested(f.prior_theta, f.prior_x, f.obs(), f.model, incremental);
    const auto b = run_nested(f.prior_theta, f.prior_x, f.obs(), f.model, replay);
    for (std::size_t k = 0; k < a.size(); ++k) {
        expect_bitwise_equal(a[k], b[k]);
        EXPECT_EQ(a[k].restart_count, 0);
        EXPECT_EQ(b[k].restart_count, 1);
    }
}

TEST(OuterStep, ThetaFreeReplayMatchesIncremental) {
    auto sys = test::planar_system();
    sys.b.setZero();
    const auto model = test::make_linear_model<2, 1>(sys);
    test::Gen gen(78);
    const auto ys = test::simulate_linear(sys, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(2), 30, 2, gen);
    std::vector<Observation<2>> obs;
    for (std::size_t k = 0; k < ys.size(); ++k) {
        obs.push_back({static_cast<long>(2 * (k + 1)), ys[k]});
    }
    const GaussianBelief<1> prior_theta(Vector<1>::Constant(3.0), Matrix<1>::Constant(0.4));
    const GaussianBelief<2> prior_x(Eigen::Vector2d::Zero(), Eigen::Matrix2d::Identity());
    NestedFilterConfig incremental;
    incremental.micro_steps = 2;
    NestedFilterConfig replay = incremental;
    replay.recursive = false;
    const auto a = run_nested<2, 1>(prior_theta, prior_x, obs, model, incremental);
    const auto b = run_nested<2, 1>(prior_theta, prior_x, obs, model, replay);
    for (std::size_t k = 0; k < a.size(); ++k) {
        EXPECT_NEAR(a[k].param_belief.mean(0), b[k].param_belief.mean(0), 1e-12);
        EXPECT_NEAR(a[k].param_belief.cov(0, 0), b[k].param_belief.cov(0, 0), 1e-12);
        EXPECT_LE((a[k].state_belief.mean - b[k].state_belief.mean).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(OuterStep, InvariantsAlongLorenzRun) {
    const LorenzFixture f(2500);
    NestedFilterConfig cfg;
    const auto states = run_nested(f.prior_theta, f.prior_x, f.obs(), f.model, cfg);
    long expected_index = 0;
    for (const auto& s : states) {
        ++expected_index;
        EXPECT_EQ(s.obs_index, expected_index);
        ASSERT_EQ(s.bank.size(), s.points.size());
        double total = 0.0;
        for (double w : s.posterior_weights) {
            ASSERT_TRUE(std::isfinite(w));
            total += w;
        }
        EXPECT_NEAR(total, 1.0, 1e-12);
        const Eigen::Matrix3d& c = s.param_belief.cov;
        EXPECT_EQ(c, c.transpose());
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(c).eigenvalues().minCoeff(), 0.0);
        for (const auto& inner : s.bank) {
            EXPECT_EQ(inner.last_obs_index, s.obs_index);
        }
    }
}

TEST(OuterStep, LogNormalizerIsLogMixtureLikelihood) {
    const LorenzFixture f(10);
    NestedFilterConfig cfg;
    const auto s0 = initialize<3, 3>(f.prior_theta, f.prior_x, cfg);
    const auto adv = advance_bank(s0, f.obs().first(1), f.model, f.prior_x, cfg, Execution::serial);
    double mix = 0.0;
    for (std::size_t i = 0; i < adv.log_likelihoods.size(); ++i) {
        mix += s0.points.weights[i] * std::exp(adv.log_likelihoods[i]);
    }
    const auto s1 = outer_step(s0, f.obs().first(1), f.model, f.prior_x, cfg, Execution::serial);
    EXPECT_NEAR(s1.log_normalizer, std::log(mix), 1e-12);
}

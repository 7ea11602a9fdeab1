/**
 * @file baselines.hpp
 * @brief Comparison filters for joint state/parameter estimation:
 * state-augmented UKF, state-augmented stochastic EnKF, and an SMC outer
 * layer over a bank of EKFs (nested hybrid filter).
 *
 * The augmented filters track z = (x; theta). Parameters follow identity
 * dynamics plus a small Gaussian jitter per observation interval.
 */
#pragma once

#include <cmath>
#include <exception>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "ngf/ekf.hpp"
#include "ngf/gaussian.hpp"
#include "ngf/model.hpp"
#include "ngf/nested_filter.hpp"

namespace ngf {

template <int Dx, int Dp>
using AugmentedVector = Vector<sum_dim(Dx, Dp)>;

template <int Dx, int Dp>
using AugmentedMatrix = Matrix<sum_dim(Dx, Dp)>;

template <int Dx, int Dp>
struct AugmentedState {
    GaussianBelief<sum_dim(Dx, Dp)> belief;

    [[nodiscard]] Vector<Dx> state_mean(Eigen::Index dx) const { return belief.mean.head(dx); }
    [[nodiscard]] Vector<Dp> param_mean(Eigen::Index dp) const { return belief.mean.tail(dp); }
};

template <int Dp>
struct AugmentationConfig {
    int micro_steps = 5;
    std::optional<double> kappa;
    // Per-component standard deviation of the parameter random walk, applied
    // once per observation interval.
    Vector<Dp> param_jitter_std;
};

/// Jitter of 1e-4 prior standard deviations per component.
template <int Dp>
Vector<Dp> default_param_jitter(const GaussianBelief<Dp>& prior_theta) {
    return 1e-4 * prior_theta.cov.diagonal().cwiseSqrt();
}

template <int Dx, int Dp>
AugmentedState<Dx, Dp> make_augmented_state(const GaussianBelief<Dx>& prior_x, const GaussianBelief<Dp>& prior_theta) {
    const Eigen::Index dx = prior_x.dim();
    const Eigen::Index dp = prior_theta.dim();
    AugmentedVector<Dx, Dp> mean(dx + dp);
    mean << prior_x.mean, prior_theta.mean;
    AugmentedMatrix<Dx, Dp> cov = AugmentedMatrix<Dx, Dp>::Zero(dx + dp, dx + dp);
    cov.topLeftCorner(dx, dx) = prior_x.cov;
    cov.bottomRightCorner(dp, dp) = prior_theta.cov;
    return {GaussianBelief<sum_dim(Dx, Dp)>(std::move(mean), cov)};
}

/**
 * Unscented prediction over config.micro_steps micro-steps. Sigma points are
 * redrawn every micro-step and V is added to the state block each time, so
 * the result is exact for models linear in (x, theta).
 */
template <int Dx, int Dp>
AugmentedState<Dx, Dp> augmented_ukf_predict(const AugmentedState<Dx, Dp>& state, const StateSpaceModel<Dx, Dp>& model,
                                             const AugmentationConfig<Dp>& config) {
    constexpr int A = sum_dim(Dx, Dp);
    const Eigen::Index dx = model.dx;
    const Eigen::Index dp = model.dtheta;
    if (state.belief.dim() != dx + dp) {
        throw std::invalid_argument("augmented_ukf_predict: belief dimension mismatch");
    }
    const double kappa = config.kappa.value_or(default_kappa(dx + dp));
    GaussianBelief<A> belief = state.belief;
    for (int k = 0; k < config.micro_steps; ++k) {
        SigmaPointSet<A> pts = unscented_points(belief, kappa);
        for (auto& p : pts.points) {
            const Vector<Dx> x = p.head(dx);
            const Vector<Dp> theta = p.tail(dp);
            p.head(dx) = model.drift(x, theta);
        }
        GaussianBelief<A> moved = moments_from_points(pts);
        Matrix<A> cov = moved.cov;
        cov.topLeftCorner(dx, dx) += model.state_noise_cov;
        if (!moved.mean.allFinite() || !cov.allFinite()) {
            throw FilterError("filter diverged");
        }
        belief = GaussianBelief<A>(std::move(moved.mean), cov);
    }
    Matrix<A> cov = belief.cov;
    cov.bottomRightCorner(dp, dp).diagonal() += config.param_jitter_std.array().square().matrix();
    return {GaussianBelief<A>(belief.mean, psd_repair(cov))};
}

template <int Dx, int Dp>
AugmentedState<Dx, Dp> augmented_ukf_update(const AugmentedState<Dx, Dp>& predicted, const ObsVector<Dx>& y,
                                            const StateSpaceModel<Dx, Dp>& model, const AugmentationConfig<Dp>& config) {
    constexpr int A = sum_dim(Dx, Dp);
    using CrossCov = Eigen::Matrix<double, A, Eigen::Dynamic, Eigen::ColMajor, A, Dx>;
    const Eigen::Index dx = model.dx;
    const Eigen::Index dp = model.dtheta;
    const double kappa = config.kappa.value_or(default_kappa(dx + dp));
    const SigmaPointSet<A> pts = unscented_points(predicted.belief, kappa);

    std::vector<ObsVector<Dx>> z(pts.size());
    ObsVector<Dx> z_mean = ObsVector<Dx>::Zero(y.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const Vector<Dx> x = pts.points[i].head(dx);
        const Vector<Dp> theta = pts.points[i].tail(dp);
        z[i] = model.obs(x, theta);
        if (z[i].size() != y.size()) {
            throw std::invalid_argument("augmented_ukf_update: observation dimension mismatch");
        }
        z_mean.noalias() += pts.weights[i] * z[i];
    }
    ObsMatrix<Dx> s = model.obs_noise_cov;
    CrossCov cross = CrossCov::Zero(dx + dp, y.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const ObsVector<Dx> dz = z[i] - z_mean;
        s.noalias() += pts.weights[i] * dz * dz.transpose();
        cross.noalias() += pts.weights[i] * (pts.points[i] - predicted.belief.mean) * dz.transpose();
    }
    s = 0.5 * (s + s.transpose()).eval();
    Eigen::LLT<ObsMatrix<Dx>> llt(s);
    if (!s.allFinite() || llt.info() != Eigen::Success) {
        throw FilterError("degenerate innovation");
    }
    const CrossCov gain = llt.solve(cross.transpose()).transpose();
    Vector<A> mean = predicted.belief.mean + gain * (y - z_mean);
    const Matrix<A> cov = predicted.belief.cov - gain * s * gain.transpose();
    if (!mean.allFinite() || !cov.allFinite()) {
        throw FilterError("filter diverged");
    }
    return {GaussianBelief<A>(std::move(mean), psd_repair(cov))};
}

template <int Dx, int Dp>
AugmentedState<Dx, Dp> augmented_ukf_step(const AugmentedState<Dx, Dp>& state, const ObsVector<Dx>& y,
                                          const StateSpaceModel<Dx, Dp>& model, const AugmentationConfig<Dp>& config) {
    return augmented_ukf_update(augmented_ukf_predict(state, model, config), y, model, config);
}

// ---------------------------------------------------------------------------
// Ensemble Kalman filter with perturbed observations

template <int Dx, int Dp>
using Ensemble = std::vector<AugmentedVector<Dx, Dp>>;

template <int Dx, int Dp, typename Rng>
Ensemble<Dx, Dp> sample_ensemble(const GaussianBelief<Dx>& prior_x, const GaussianBelief<Dp>& prior_theta,
                                 std::size_t size, Rng& rng) {
    const AugmentedState<Dx, Dp> joint = make_augmented_state(prior_x, prior_theta);
    const auto sqrt_cov = covariance_sqrt(joint.belief.cov);
    std::normal_distribution<double> normal(0.0, 1.0);
    Ensemble<Dx, Dp> ensemble;
    ensemble.reserve(size);
    const Eigen::Index n = joint.belief.dim();
    for (std::size_t j = 0; j < size; ++j) {
        AugmentedVector<Dx, Dp> xi(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            xi(i) = normal(rng);
        }
        ensemble.push_back(joint.belief.mean + sqrt_cov * xi);
    }
    return ensemble;
}

/// Sample mean and (N - 1)-normalized covariance of an ensemble.
template <int Dx, int Dp>
GaussianBelief<sum_dim(Dx, Dp)> ensemble_moments(const Ensemble<Dx, Dp>& ensemble) {
    if (ensemble.size() < 2) {
        throw std::invalid_argument("ensemble_moments: need at least two members");
    }
    constexpr int A = sum_dim(Dx, Dp);
    const Eigen::Index n = ensemble.front().size();
    Vector<A> mean = Vector<A>::Zero(n);
    for (const auto& a : ensemble) {
        mean += a;
    }
    mean /= static_cast<double>(ensemble.size());
    Matrix<A> cov = Matrix<A>::Zero(n, n);
    for (const auto& a : ensemble) {
        const Vector<A> d = a - mean;
        cov.noalias() += d * d.transpose();
    }
    cov /= static_cast<double>(ensemble.size() - 1);
    return GaussianBelief<A>(std::move(mean), cov);
}

/**
 * Stochastic EnKF step: members propagate through the noisy dynamics (theta
 * by identity plus jitter), then each is updated against its own perturbed
 * copy of y with the gain built from ensemble sample covariances.
 */
template <int Dx, int Dp, typename Rng>
Ensemble<Dx, Dp> augmented_enkf_step(const Ensemble<Dx, Dp>& ensemble, const ObsVector<Dx>& y,
                                     const StateSpaceModel<Dx, Dp>& model, const AugmentationConfig<Dp>& config,
                                     Rng& rng) {
    constexpr int A = sum_dim(Dx, Dp);
    using CrossCov = Eigen::Matrix<double, A, Eigen::Dynamic, Eigen::ColMajor, A, Dx>;
    if (ensemble.size() < 2) {
        throw std::invalid_argument("augmented_enkf_step: ensemble size must be at least 2");
    }
    const Eigen::Index dx = model.dx;
    const Eigen::Index dp = model.dtheta;
    const Eigen::Index dy = y.size();
    const auto n = static_cast<double>(ensemble.size());
    std::normal_distribution<double> normal(0.0, 1.0);
    const Matrix<Dx> state_noise_sqrt = covariance_sqrt(model.state_noise_cov);
    const ObsMatrix<Dx> obs_noise_sqrt = covariance_sqrt(model.obs_noise_cov);

    Ensemble<Dx, Dp> forecast = ensemble;
    for (auto& a : forecast) {
        Vector<Dx> x = a.head(dx);
        const Vector<Dp> theta = a.tail(dp);
        for (int k = 0; k < config.micro_steps; ++k) {
            Vector<Dx> xi(dx);
            for (Eigen::Index i = 0; i < dx; ++i) {
                xi(i) = normal(rng);
            }
            x = model.drift(x, theta) + state_noise_sqrt * xi;
        }
        a.head(dx) = x;
        for (Eigen::Index i = 0; i < dp; ++i) {
            a(dx + i) += config.param_jitter_std(i) * normal(rng);
        }
        if (!a.allFinite()) {
            throw FilterError("filter diverged");
        }
    }

    std::vector<ObsVector<Dx>> predicted_obs;
    predicted_obs.reserve(forecast.size());
    Vector<A> mean = Vector<A>::Zero(dx + dp);
    ObsVector<Dx> obs_mean = ObsVector<Dx>::Zero(dy);
    for (const auto& a : forecast) {
        predicted_obs.push_back(model.obs(a.head(dx), a.tail(dp)));
        mean += a;
        obs_mean += predicted_obs.back();
    }
    mean /= n;
    obs_mean /= n;

    ObsMatrix<Dx> obs_cov = ObsMatrix<Dx>::Zero(dy, dy);
    CrossCov cross = CrossCov::Zero(dx + dp, dy);
    double spread = 0.0;
    for (std::size_t j = 0; j < forecast.size(); ++j) {
        const Vector<A> da = forecast[j] - mean;
        const ObsVector<Dx> dh = predicted_obs[j] - obs_mean;
        obs_cov.noalias() += dh * dh.transpose();
        cross.noalias() += da * dh.transpose();
        spread += da.squaredNorm();
    }
    // Spread at the rounding level of the mean counts as collapse.
    constexpr double eps = std::numeric_limits<double>::epsilon();
    if (!(spread > 16.0 * eps * eps * n * mean.squaredNorm()) || !(spread > 0.0)) {
        throw FilterError("ensemble collapse");
    }
    obs_cov /= n - 1.0;
    cross /= n - 1.0;

    ObsMatrix<Dx> s = obs_cov + model.obs_noise_cov;
    s = 0.5 * (s + s.transpose()).eval();
    Eigen::LLT<ObsMatrix<Dx>> llt(s);
    if (llt.info() != Eigen::Success) {
        throw FilterError("degenerate innovation");
    }
    const CrossCov gain = llt.solve(cross.transpose()).transpose();

    for (std::size_t j = 0; j < forecast.size(); ++j) {
        ObsVector<Dx> r(dy);
        for (Eigen::Index i = 0; i < dy; ++i) {
            r(i) = normal(rng);
        }
        const ObsVector<Dx> perturbed = y + obs_noise_sqrt * r;
        forecast[j] += gain * (perturbed - predicted_obs[j]);
    }
    return forecast;
}

// ---------------------------------------------------------------------------
// SMC outer layer over a bank of EKFs

template <int Dx, int Dp>
struct ParticleCloud {
    std::vector<Vector<Dp>> particles;
    std::vector<double> weights;
    std::vector<InnerFilterState<Dx, Dp>> bank;
    // Weighted estimates computed before any resampling in the last step.
    Vector<Dp> param_estimate;
    Vector<Dx> state_estimate;
    bool resampled = false;
};

template <int Dp>
struct SmcConfig {
    int micro_steps = 5;
    // Per-component standard deviation of the jittering kernel.
    Vector<Dp> jitter_std;
    // Resample when the effective sample size drops below this fraction of N.
    double ess_fraction = 0.5;
};

/// Kernel standard deviation c / sqrt(N) with c = 0.05 prior standard deviations.
template <int Dp>
Vector<Dp> default_smc_jitter(const GaussianBelief<Dp>& prior_theta, std::size_t particles) {
    return 0.05 * prior_theta.cov.diagonal().cwiseSqrt() / std::sqrt(static_cast<double>(particles));
}

template <int Dx, int Dp, typename Rng>
ParticleCloud<Dx, Dp> init_particle_cloud(const GaussianBelief<Dp>& prior_theta, const GaussianBelief<Dx>& prior_x,
                                          std::size_t size, Rng& rng) {
    if (size == 0) {
        throw std::invalid_argument("init_particle_cloud: need at least one particle");
    }
    const auto sqrt_cov = covariance_sqrt(prior_theta.cov);
    std::normal_distribution<double> normal(0.0, 1.0);
    ParticleCloud<Dx, Dp> cloud;
    const Eigen::Index dp = prior_theta.dim();
    for (std::size_t n = 0; n < size; ++n) {
        Vector<Dp> xi(dp);
        for (Eigen::Index i = 0; i < dp; ++i) {
            xi(i) = normal(rng);
        }
        cloud.particles.push_back(prior_theta.mean + sqrt_cov * xi);
        cloud.bank.push_back({prior_x, cloud.particles.back(), 0});
    }
    cloud.weights.assign(size, 1.0 / static_cast<double>(size));
    cloud.param_estimate = prior_theta.mean;
    cloud.state_estimate = prior_x.mean;
    return cloud;
}

/// Multinomial resampling: @p count indices drawn i.i.d. with probabilities @p weights.
template <typename Rng>
std::vector<std::size_t> multinomial_resample(std::span<const double> weights, std::size_t count, Rng& rng) {
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    std::vector<std::size_t> indices(count);
    for (auto& idx : indices) {
        idx = pick(rng);
    }
    return indices;
}

inline double effective_sample_size(std::span<const double> weights) {
    double sum_sq = 0.0;
    for (double w : weights) {
        sum_sq += w * w;
    }
    return 1.0 / sum_sq;
}

/**
 * Jitters every particle, advances its EKF one observation interval under
 * the jittered parameter, reweights by the predictive likelihood and
 * resamples (multinomial) when the ESS falls below ess_fraction * N.
 */
template <int Dx, int Dp, typename Rng>
ParticleCloud<Dx, Dp> smc_ekf_step(const ParticleCloud<Dx, Dp>& cloud, const ObsVector<Dx>& y,
                                   const StateSpaceModel<Dx, Dp>& model, const SmcConfig<Dp>& config, Rng& rng,
                                   Execution exec = Execution::parallel) {
    const std::size_t n = cloud.particles.size();
    if (n == 0 || cloud.weights.size() != n || cloud.bank.size() != n) {
        throw std::invalid_argument("smc_ekf_step: inconsistent particle cloud");
    }
    const Eigen::Index dp = model.dtheta;
    const Eigen::Index dx = model.dx;
    std::normal_distribution<double> normal(0.0, 1.0);

    ParticleCloud<Dx, Dp> next;
    next.particles = cloud.particles;
    for (auto& theta : next.particles) {
        for (Eigen::Index i = 0; i < dp; ++i) {
            theta(i) += config.jitter_std(i) * normal(rng);
        }
    }

    next.bank.resize(n);
    std::vector<double> log_lik(n, 0.0);
    auto advance_one = [&](std::size_t i) {
        const Vector<Dp>& theta = next.particles[i];
        const GaussianBelief<Dx> predicted = ekf_predict(cloud.bank[i].belief, theta, model, config.micro_steps);
        EkfUpdate<Dx> upd = ekf_update_with_likelihood(predicted, y, theta, model);
        next.bank[i] = {std::move(upd.posterior), theta, cloud.bank[i].last_obs_index + 1};
        log_lik[i] = upd.log_likelihood;
    };
    if (exec == Execution::serial) {
        for (std::size_t i = 0; i < n; ++i) {
            advance_one(i);
        }
    } else {
        std::vector<std::exception_ptr> errors(n);
        const auto count = static_cast<long>(n);
#pragma omp parallel for schedule(static)
        for (long i = 0; i < count; ++i) {
            try {
                advance_one(static_cast<std::size_t>(i));
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
        for (const auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    }

    next.weights = posterior_weights(log_lik, cloud.weights).weights;
    next.param_estimate = Vector<Dp>::Zero(dp);
    next.state_estimate = Vector<Dx>::Zero(dx);
    for (std::size_t i = 0; i < n; ++i) {
        next.param_estimate.noalias() += next.weights[i] * next.particles[i];
        next.state_estimate.noalias() += next.weights[i] * next.bank[i].belief.mean;
    }

    if (effective_sample_size(next.weights) < config.ess_fraction * static_cast<double>(n)) {
        const std::vector<std::size_t> picks = multinomial_resample(next.weights, n, rng);
        std::vector<Vector<Dp>> particles(n);
        std::vector<InnerFilterState<Dx, Dp>> bank(n);
        for (std::size_t i = 0; i < n; ++i) {
            particles[i] = next.particles[picks[i]];
            bank[i] = next.bank[picks[i]];
        }
        next.particles = std::move(particles);
        next.bank = std::move(bank);
        next.weights.assign(n, 1.0 / static_cast<double>(n));
        next.resampled = true;
    }
    return next;
}

} // namespace ngf

/**
 * @file ekf.hpp
 * @brief Extended Kalman filter conditional on a fixed parameter vector.
 *
 * This is the inner-layer filter of the nested scheme. Besides the usual
 * predict/update pair it returns log p(y_t | y_{1:t-1}, theta), the Gaussian
 * predictive density of the observation, which drives the outer-layer weights.
 */
#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>

#include "ngf/error.hpp"
#include "ngf/gaussian.hpp"
#include "ngf/model.hpp"

namespace ngf {

template <int Dx, int Dp>
struct InnerFilterState {
    GaussianBelief<Dx> belief;
    Vector<Dp> last_theta;
    // Number of observations assimilated so far.
    long last_obs_index = 0;
};

template <int Dx>
struct EkfUpdate {
    GaussianBelief<Dx> posterior;
    double log_likelihood = 0.0;
};

/// Runs micro_steps prediction steps (mean through f, covariance J C J^T + V).
template <int Dx, int Dp>
GaussianBelief<Dx> ekf_predict(const GaussianBelief<Dx>& belief, const Vector<Dp>& theta,
                               const StateSpaceModel<Dx, Dp>& model, int micro_steps,
                               const PsdRepairPolicy& policy = {}) {
    if (micro_steps < 1) {
        throw std::invalid_argument("ekf_predict: micro_steps must be at least 1");
    }
    Vector<Dx> mean = belief.mean;
    Matrix<Dx> cov = belief.cov;
    for (int k = 0; k < micro_steps; ++k) {
        if (!mean.allFinite() || !cov.allFinite()) {
            throw FilterError("filter diverged");
        }
        const Matrix<Dx> jac = model.drift_jacobian(mean, theta);
        mean = model.drift(mean, theta);
        cov = jac * cov * jac.transpose() + model.state_noise_cov;
    }
    if (!mean.allFinite() || !cov.allFinite()) {
        throw FilterError("filter diverged");
    }
    return GaussianBelief<Dx>(std::move(mean), psd_repair(cov, policy));
}

template <int Dx, int Dp>
GaussianBelief<Dx> ekf_predict(const InnerFilterState<Dx, Dp>& state, const Vector<Dp>& theta,
                               const StateSpaceModel<Dx, Dp>& model, int micro_steps) {
    return ekf_predict(state.belief, theta, model, micro_steps);
}

/**
 * Measurement update and predictive log-likelihood sharing one Cholesky
 * factorization of the innovation covariance S = J_g C J_g^T + R.
 *
 * K = C J_g^T S^-1; the covariance uses the Joseph form
 * (I - K J_g) C (I - K J_g)^T + K R K^T, then psd_repair.
 * The likelihood is log N(y | g(x~), S), exact for affine g.
 */
template <int Dx, int Dp>
EkfUpdate<Dx> ekf_update_with_likelihood(const GaussianBelief<Dx>& predicted, const ObsVector<Dx>& y,
                                         const Vector<Dp>& theta, const StateSpaceModel<Dx, Dp>& model,
                                         const PsdRepairPolicy& policy = {}) {
    using KalmanGain = Eigen::Matrix<double, Dx, Eigen::Dynamic, Eigen::ColMajor, Dx, Dx>;
    const Eigen::Index dx = predicted.dim();
    const ObsVector<Dx> y_pred = model.obs(predicted.mean, theta);
    if (y.size() != y_pred.size()) {
        throw std::invalid_argument("ekf_update: observation dimension mismatch");
    }
    const ObsJacobian<Dx> h = model.obs_jacobian(predicted.mean, theta);
    const ObsJacobian<Dx> hc = h * predicted.cov;
    ObsMatrix<Dx> s = hc * h.transpose() + model.obs_noise_cov;
    s = 0.5 * (s + s.transpose()).eval();
    if (!s.allFinite()) {
        throw FilterError("filter diverged");
    }
    ObsMatrix<Dx> chol = s;
    if (!detail::small_cholesky(chol)) {
        throw FilterError("degenerate innovation");
    }
    const ObsVector<Dx> innovation = y - y_pred;

    // gain^T = S^-1 (H C)
    ObsJacobian<Dx> gain_t = hc;
    detail::forward_substitute(chol, gain_t);
    detail::back_substitute_transposed(chol, gain_t);
    const KalmanGain gain = gain_t.transpose();
    Vector<Dx> mean = predicted.mean + gain * innovation;
    const Matrix<Dx> a = Matrix<Dx>::Identity(dx, dx) - gain * h;
    const Matrix<Dx> cov = a * predicted.cov * a.transpose() + gain * model.obs_noise_cov * gain.transpose();
    if (!mean.allFinite() || !cov.allFinite()) {
        throw FilterError("filter diverged");
    }

    ObsVector<Dx> z = innovation;
    detail::forward_substitute(chol, z);
    const double log_det = 2.0 * chol.diagonal().array().log().sum();
    const double dy = static_cast<double>(y.size());
    const double log_lik = -0.5 * (dy * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());

    return {GaussianBelief<Dx>(std::move(mean), psd_repair(cov, policy)), log_lik};
}

template <int Dx, int Dp>
GaussianBelief<Dx> ekf_update(const GaussianBelief<Dx>& predicted, const ObsVector<Dx>& y, const Vector<Dp>& theta,
                              const StateSpaceModel<Dx, Dp>& model) {
    return ekf_update_with_likelihood(predicted, y, theta, model).posterior;
}

/// log N(y | g(x~, theta), J_g C~ J_g^T + R): log p(y_t | y_{1:t-1}, theta) for affine g.
template <int Dx, int Dp>
double predictive_log_likelihood(const GaussianBelief<Dx>& predicted, const ObsVector<Dx>& y,
                                 const Vector<Dp>& theta, const StateSpaceModel<Dx, Dp>& model) {
    return ekf_update_with_likelihood(predicted, y, theta, model).log_likelihood;
}

template <int Dx, int Dp>
struct ScratchRun {
    InnerFilterState<Dx, Dp> state;
    // Predictive log-likelihood of the last observation; empty without observations.
    std::optional<double> log_likelihood;
};

/// Filters all of @p observations from the prior with a fixed theta.
template <int Dx, int Dp>
ScratchRun<Dx, Dp> ekf_run_from_scratch(const Vector<Dp>& theta, const StateSpaceModel<Dx, Dp>& model,
                                        const GaussianBelief<Dx>& prior,
                                        std::span<const Observation<Dx>> observations, int micro_steps) {
    ScratchRun<Dx, Dp> run{{prior, theta, 0}, std::nullopt};
    for (const auto& obs : observations) {
        const GaussianBelief<Dx> predicted = ekf_predict(run.state.belief, theta, model, micro_steps);
        EkfUpdate<Dx> upd = ekf_update_with_likelihood(predicted, obs.value, theta, model);
        run.state.belief = std::move(upd.posterior);
        run.state.last_obs_index += 1;
        run.log_likelihood = upd.log_likelihood;
    }
    return run;
}

} // namespace ngf

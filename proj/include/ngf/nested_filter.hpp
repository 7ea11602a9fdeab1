/**
 * @file nested_filter.hpp
 * @brief Nested Gaussian filter: a sigma-point layer over the static
 * parameters driving a bank of conditional EKFs over the dynamic state.
 *
 * Each outer step
 *   1. advances inner filter i with its reference point theta_t^i, either
 *      recursively from its previous belief (when theta_t^i moved less than
 *      lambda * ||theta_{t-1}^i||_p) or by replaying the whole observation
 *      history from the state prior;
 *   2. turns the M predictive log-likelihoods into posterior weights;
 *   3. forms the parameter and state estimates as weighted moments;
 *   4. places the next reference points on N(theta_hat_t, C_t^theta).
 *
 * With recursive = false every step replays the history (quadratic cost).
 */
#pragma once

#include <exception>
#include <span>
#include <stdexcept>
#include <vector>

#include "ngf/ekf.hpp"
#include "ngf/gaussian.hpp"
#include "ngf/model.hpp"

namespace ngf {

enum class PNorm { one, two, infinity };

/// Serial loops are the reference the OpenMP kernels are tested against.
enum class Execution { serial, parallel };

double pnorm(const Eigen::Ref<const Eigen::VectorXd>& v, PNorm p);

/// True iff ||theta_new - theta_old||_p < lambda ||theta_old||_p; false when theta_old is zero.
bool norm_test(const Eigen::Ref<const Eigen::VectorXd>& theta_new, const Eigen::Ref<const Eigen::VectorXd>& theta_old,
               double lambda, PNorm norm);

struct WeightNormalization {
    std::vector<double> weights;
    // log of sum_i p(y_t | y_{1:t-1}, theta^i) w^i
    double log_normalizer = 0.0;
};

/// Normalizes exp(log_likelihoods[i]) * prior_weights[i] in a shift-invariant way.
WeightNormalization posterior_weights(std::span<const double> log_likelihoods, std::span<const double> prior_weights);

struct NestedFilterConfig {
    double lambda = 1e-3;
    PNorm norm = PNorm::two;
    PointRule point_rule = PointRule::unscented();
    int micro_steps = 5;
    bool recursive = true;
    // Add the within-filter covariances to the state covariance estimate.
    bool full_mixture_state_cov = false;

    void validate() const {
        if (!(lambda > 0.0)) {
            throw std::invalid_argument("NestedFilterConfig: lambda must be positive");
        }
        if (micro_steps < 1) {
            throw std::invalid_argument("NestedFilterConfig: micro_steps must be at least 1");
        }
    }
};

template <int Dx, int Dp>
struct NestedFilterState {
    GaussianBelief<Dp> param_belief;
    SigmaPointSet<Dp> points;      // theta_t^i, w_t^i: used at the next step
    SigmaPointSet<Dp> prev_points; // theta_{t-1}^i: what the bank is conditioned on
    std::vector<InnerFilterState<Dx, Dp>> bank;
    GaussianBelief<Dx> state_belief;
    double log_normalizer = 0.0;
    std::vector<double> posterior_weights;
    int restart_count = 0;
    long obs_index = 0;
};

template <int Dp>
GaussianBelief<Dp> estimate_parameters(const SigmaPointSet<Dp>& points, std::span<const double> weights) {
    if (points.size() != weights.size()) {
        throw std::invalid_argument("estimate_parameters: length mismatch");
    }
    return moments_from_points(points.points, std::vector<double>(weights.begin(), weights.end()));
}

template <int Dx, int Dp>
GaussianBelief<Dx> estimate_state(const std::vector<InnerFilterState<Dx, Dp>>& bank, std::span<const double> weights,
                                  bool full_mixture = false) {
    if (bank.size() != weights.size() || bank.empty()) {
        throw std::invalid_argument("estimate_state: length mismatch");
    }
    const Eigen::Index d = bank.front().belief.dim();
    Vector<Dx> mean = Vector<Dx>::Zero(d);
    for (std::size_t i = 0; i < bank.size(); ++i) {
        mean.noalias() += weights[i] * bank[i].belief.mean;
    }
    Matrix<Dx> cov = Matrix<Dx>::Zero(d, d);
    for (std::size_t i = 0; i < bank.size(); ++i) {
        const Vector<Dx> diff = bank[i].belief.mean - mean;
        cov.noalias() += weights[i] * diff * diff.transpose();
        if (full_mixture) {
            cov.noalias() += weights[i] * bank[i].belief.cov;
        }
    }
    return GaussianBelief<Dx>(std::move(mean), psd_repair(cov));
}

template <int Dx, int Dp>
NestedFilterState<Dx, Dp> initialize(const GaussianBelief<Dp>& prior_theta, const GaussianBelief<Dx>& prior_x,
                                     const NestedFilterConfig& config) {
    config.validate();
    NestedFilterState<Dx, Dp> state;
    state.param_belief = prior_theta;
    state.points = generate_points(config.point_rule, prior_theta);
    state.prev_points = state.points;
    state.bank.reserve(state.points.size());
    for (const auto& theta : state.points.points) {
        state.bank.push_back({prior_x, theta, 0});
    }
    state.state_belief = prior_x;
    return state;
}

template <int Dx, int Dp>
struct BankAdvance {
    std::vector<InnerFilterState<Dx, Dp>> bank;
    std::vector<double> log_likelihoods;
    int restarts = 0;
};

/**
 * Moves every inner filter to the newest observation (history.back()) under
 * its current reference point. Filters are independent; the parallel path
 * distributes them over OpenMP threads and must match the serial one bitwise.
 */
template <int Dx, int Dp>
BankAdvance<Dx, Dp> advance_bank(const NestedFilterState<Dx, Dp>& state, std::span<const Observation<Dx>> history,
                                 const StateSpaceModel<Dx, Dp>& model, const GaussianBelief<Dx>& prior_x,
                                 const NestedFilterConfig& config, Execution exec = Execution::parallel) {
    const std::size_t m = state.points.size();
    if (state.bank.size() != m || state.prev_points.size() != m) {
        throw std::invalid_argument("advance_bank: bank and reference points disagree in size");
    }
    if (history.empty()) {
        throw std::invalid_argument("advance_bank: empty observation history");
    }
    const Observation<Dx>& newest = history.back();

    BankAdvance<Dx, Dp> out;
    out.bank.resize(m);
    out.log_likelihoods.assign(m, 0.0);
    std::vector<char> restarted(m, 0);

    auto advance_one = [&](std::size_t i) {
        const Vector<Dp>& theta = state.points.points[i];
        const bool reuse = config.recursive && norm_test(theta, state.prev_points.points[i], config.lambda, config.norm);
        if (reuse) {
            const auto& previous = state.bank[i];
            const GaussianBelief<Dx> predicted = ekf_predict(previous.belief, theta, model, config.micro_steps);
            EkfUpdate<Dx> upd = ekf_update_with_likelihood(predicted, newest.value, theta, model);
            out.bank[i] = {std::move(upd.posterior), theta, previous.last_obs_index + 1};
            out.log_likelihoods[i] = upd.log_likelihood;
        } else {
            ScratchRun<Dx, Dp> run = ekf_run_from_scratch(theta, model, prior_x, history, config.micro_steps);
            out.bank[i] = std::move(run.state);
            out.log_likelihoods[i] = *run.log_likelihood;
            restarted[i] = 1;
        }
    };

    if (exec == Execution::serial) {
        for (std::size_t i = 0; i < m; ++i) {
            advance_one(i);
        }
    } else {
        std::vector<std::exception_ptr> errors(m);
        const auto count = static_cast<long>(m);
#pragma omp parallel for schedule(dynamic, 1)
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
    for (char r : restarted) {
        out.restarts += r;
    }
    return out;
}

/**
 * One sequential step for the observation history.back(). @p history holds
 * every observation received so far, oldest first; it is only read when an
 * inner filter has to restart from @p prior_x.
 */
template <int Dx, int Dp>
NestedFilterState<Dx, Dp> outer_step(const NestedFilterState<Dx, Dp>& state, std::span<const Observation<Dx>> history,
                                     const StateSpaceModel<Dx, Dp>& model, const GaussianBelief<Dx>& prior_x,
                                     const NestedFilterConfig& config, Execution exec = Execution::parallel) {
    BankAdvance<Dx, Dp> adv = advance_bank(state, history, model, prior_x, config, exec);
    WeightNormalization pw = posterior_weights(adv.log_likelihoods, state.points.weights);

    NestedFilterState<Dx, Dp> next;
    next.param_belief = estimate_parameters(state.points, pw.weights);
    next.state_belief = estimate_state(adv.bank, pw.weights, config.full_mixture_state_cov);
    next.bank = std::move(adv.bank);
    next.prev_points = state.points;
    next.points = generate_points(config.point_rule, next.param_belief);
    next.log_normalizer = pw.log_normalizer;
    next.posterior_weights = std::move(pw.weights);
    next.restart_count = adv.restarts;
    next.obs_index = static_cast<long>(history.size());
    return next;
}

} // namespace ngf

#include "ngf/nested_filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ngf {

double pnorm(const Eigen::Ref<const Eigen::VectorXd>& v, PNorm p) {
    switch (p) {
    case PNorm::one: return v.lpNorm<1>();
    case PNorm::two: return v.norm();
    case PNorm::infinity: return v.size() == 0 ? 0.0 : v.lpNorm<Eigen::Infinity>();
    }
    throw std::invalid_argument("pnorm: unknown norm");
}

bool norm_test(const Eigen::Ref<const Eigen::VectorXd>& theta_new, const Eigen::Ref<const Eigen::VectorXd>& theta_old,
               double lambda, PNorm norm) {
    if (theta_new.size() != theta_old.size()) {
        throw std::invalid_argument("norm_test: dimension mismatch");
    }
    const double scale = pnorm(theta_old, norm);
    if (scale == 0.0) {
        return false;
    }
    return pnorm(theta_new - theta_old, norm) < lambda * scale;
}

WeightNormalization posterior_weights(std::span<const double> log_likelihoods, std::span<const double> prior_weights) {
    if (log_likelihoods.size() != prior_weights.size() || log_likelihoods.empty()) {
        throw std::invalid_argument("posterior_weights: length mismatch");
    }
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < log_likelihoods.size(); ++i) {
        if (std::isnan(log_likelihoods[i])) {
            throw FilterError("posterior_weights: NaN log-likelihood");
        }
        if (prior_weights[i] != 0.0) {
            peak = std::max(peak, log_likelihoods[i]);
        }
    }
    if (!std::isfinite(peak)) {
        throw FilterError("total likelihood underflow");
    }

    WeightNormalization out;
    out.weights.resize(log_likelihoods.size());
    double total = 0.0;
    for (std::size_t i = 0; i < log_likelihoods.size(); ++i) {
        out.weights[i] = prior_weights[i] * std::exp(log_likelihoods[i] - peak);
        total += out.weights[i];
    }
    if (!(total > 0.0) || !std::isfinite(total)) {
        throw FilterError("total likelihood underflow");
    }
    double prior_total = 0.0;
    for (double w : prior_weights) {
        prior_total += w;
    }
    out.log_normalizer = peak + std::log(total / prior_total);
    for (double& w : out.weights) {
        w /= total;
    }
    // Second pass pins the sum to one up to a single rounding.
    double check = 0.0;
    for (double w : out.weights) {
        check += w;
    }
    for (double& w : out.weights) {
        w /= check;
    }
    return out;
}

} // namespace ngf

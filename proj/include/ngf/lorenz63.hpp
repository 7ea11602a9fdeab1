/**
 * @file lorenz63.hpp
 * @brief Stochastic Lorenz 63 benchmark: Euler-Maruyama drift, partial linear
 * observations and seeded ground-truth simulation.
 *
 * Parameters are theta = (S, R, B). One micro-step advances the SDE by delta
 * continuous-time units; an observation is emitted every m_o micro-steps.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ngf/gaussian.hpp"
#include "ngf/model.hpp"

namespace ngf {

using Lorenz63Model = StateSpaceModel<3, 3>;

struct Lorenz63Config {
    double delta = 2e-4;
    double sigma2 = 0.1;
    double sigma_y2 = 1.0;
    double k_o = 1.0;
    // 1-based, strictly increasing subset of {1, 2, 3}.
    std::vector<int> observed_indices{1, 3};
    int m_o = 5;

    void validate() const;
};

Eigen::Vector3d lorenz63_drift(const Eigen::Vector3d& x, const Eigen::Vector3d& theta, double delta);

Eigen::Matrix3d lorenz63_jacobian(const Eigen::Vector3d& x, const Eigen::Vector3d& theta, double delta);

ObsVector<3> linear_observation(const Eigen::Vector3d& x, const Lorenz63Config& config);

/// k_o times the rows of I_3 selected by observed_indices.
ObsJacobian<3> observation_matrix(const Lorenz63Config& config);

/// State noise per micro-step is sigma2 * delta * I_3; observation noise sigma_y2 * I_dy.
Lorenz63Model make_lorenz63_model(const Lorenz63Config& config);

Trajectory<3> simulate_ground_truth(const Lorenz63Config& config, const Eigen::Vector3d& theta_true,
                                    const GaussianBelief<3>& x0, long t_steps, std::uint64_t rng_seed);

void write_states_csv(const Trajectory<3>& trajectory, const std::filesystem::path& path);
void write_observations_csv(const Trajectory<3>& trajectory, const std::filesystem::path& path);
Trajectory<3> read_trajectory_csv(const std::filesystem::path& states_path,
                                  const std::filesystem::path& observations_path);

} // namespace ngf

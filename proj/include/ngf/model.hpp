#pragma once

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ngf/gaussian.hpp"

namespace ngf {

/// Observation-sized storage: run-time length, never more than Dx entries.
template <int Dx>
using ObsVector = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, Dx, 1>;

template <int Dx>
using ObsMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, Dx, Dx>;

template <int Dx>
using ObsJacobian = Eigen::Matrix<double, Eigen::Dynamic, Dx, Eigen::ColMajor, Dx, Dx>;

/**
 * Markov state-space model with additive Gaussian noise,
 *
 *   x_t = f(x_{t-1}, theta) + v_t,   v_t ~ N(0, V)
 *   y_t = g(x_t, theta) + r_t,       r_t ~ N(0, R)
 *
 * where f is one micro-step of the (discretized) dynamics. Observations may
 * arrive only every few micro-steps; filters take that count separately.
 */
template <int Dx, int Dp>
struct StateSpaceModel {
    using State = Vector<Dx>;
    using StateMatrix = Matrix<Dx>;
    using Params = Vector<Dp>;
    using Obs = ObsVector<Dx>;
    using ObsCov = ObsMatrix<Dx>;
    using ObsJac = ObsJacobian<Dx>;

    static constexpr int state_dim = Dx;
    static constexpr int param_dim = Dp;

    Eigen::Index dx = 0;
    Eigen::Index dy = 0;
    Eigen::Index dtheta = 0;

    std::function<State(const State&, const Params&)> drift;
    std::function<StateMatrix(const State&, const Params&)> drift_jacobian;
    std::function<Obs(const State&, const Params&)> obs;
    std::function<ObsJac(const State&, const Params&)> obs_jacobian;

    StateMatrix state_noise_cov;
    ObsCov obs_noise_cov;

    void validate() const {
        if (dx <= 0 || dy <= 0 || dtheta <= 0) {
            throw std::invalid_argument("StateSpaceModel: dimensions must be positive");
        }
        if (dy > dx) {
            throw std::invalid_argument("StateSpaceModel: observation dimension exceeds state dimension");
        }
        if (!drift || !drift_jacobian || !obs || !obs_jacobian) {
            throw std::invalid_argument("StateSpaceModel: missing model function");
        }
        if (state_noise_cov.rows() != dx || state_noise_cov.cols() != dx) {
            throw std::invalid_argument("StateSpaceModel: state noise covariance has wrong shape");
        }
        if (obs_noise_cov.rows() != dy || obs_noise_cov.cols() != dy) {
            throw std::invalid_argument("StateSpaceModel: observation noise covariance has wrong shape");
        }
        check_psd(state_noise_cov, "state noise covariance");
        check_psd(obs_noise_cov, "observation noise covariance");
    }

private:
    template <typename M>
    static void check_psd(const M& m, const char* what) {
        if (!m.allFinite() || (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + m.cwiseAbs().maxCoeff())) {
            throw std::invalid_argument(std::string("StateSpaceModel: ") + what + " not symmetric");
        }
        Eigen::SelfAdjointEigenSolver<M> eig(m, Eigen::EigenvaluesOnly);
        if (eig.eigenvalues().minCoeff() < -1e-12 * (1.0 + m.cwiseAbs().maxCoeff())) {
            throw std::invalid_argument(std::string("StateSpaceModel: ") + what + " not PSD");
        }
    }
};

/// An observation vector tagged with the micro-step index it belongs to.
template <int Dx>
struct Observation {
    long step = 0;
    ObsVector<Dx> value;
};

template <int Dx>
struct Trajectory {
    std::vector<Vector<Dx>> states;            // t = 0 .. t_steps
    std::vector<Observation<Dx>> observations; // t = k m_o, k >= 1
};

} // namespace ngf

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "ngf/gaussian.hpp"
#include "ngf/model.hpp"

namespace ngf::test {

// Seeded generator for property tests.
class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

    template <int D>
    Vector<D> vector(Eigen::Index n, double scale = 1.0) {
        Vector<D> v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            v(i) = scale * normal();
        }
        return v;
    }

    // SPD with eigenvalues log-uniform in [lo, hi].
    template <int D>
    Matrix<D> spd(Eigen::Index n, double lo = 1e-2, double hi = 10.0) {
        Eigen::MatrixXd g(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < n; ++j) {
                g(i, j) = normal();
            }
        }
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        const Eigen::MatrixXd q = qr.householderQ();
        Eigen::VectorXd ev(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            ev(i) = std::exp(uniform(std::log(lo), std::log(hi)));
        }
        Eigen::MatrixXd m = q * ev.asDiagonal() * q.transpose();
        m = 0.5 * (m + m.transpose()).eval();
        return m;
    }

    template <int D>
    GaussianBelief<D> belief(Eigen::Index n) {
        return GaussianBelief<D>(vector<D>(n, 3.0), spd<D>(n));
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

/// x' = A x + B theta + v, y = H x + r: linear in both state and parameter.
struct LinearSystem {
    Eigen::MatrixXd a;
    Eigen::MatrixXd b;
    Eigen::MatrixXd h;
    Eigen::MatrixXd q;
    Eigen::MatrixXd r;
};

template <int Dx, int Dp>
StateSpaceModel<Dx, Dp> make_linear_model(const LinearSystem& s) {
    StateSpaceModel<Dx, Dp> m;
    m.dx = s.a.rows();
    m.dy = s.h.rows();
    m.dtheta = s.b.cols();
    const Matrix<Dx> a = s.a;
    const Eigen::MatrixXd b = s.b;
    const ObsJacobian<Dx> h = s.h;
    m.drift = [a, b](const Vector<Dx>& x, const Vector<Dp>& th) -> Vector<Dx> { return a * x + b * th; };
    m.drift_jacobian = [a](const Vector<Dx>&, const Vector<Dp>&) -> Matrix<Dx> { return a; };
    m.obs = [h](const Vector<Dx>& x, const Vector<Dp>&) -> ObsVector<Dx> { return h * x; };
    m.obs_jacobian = [h](const Vector<Dx>&, const Vector<Dp>&) -> ObsJacobian<Dx> { return h; };
    m.state_noise_cov = s.q;
    m.obs_noise_cov = s.r;
    m.validate();
    return m;
}

/// Textbook Kalman filter with explicit inverses and determinants.
struct KalmanOracle {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    double last_log_likelihood = 0.0;

    void predict(const Eigen::MatrixXd& a, const Eigen::VectorXd& offset, const Eigen::MatrixXd& q) {
        mean = a * mean + offset;
        cov = a * cov * a.transpose() + q;
    }

    void update(const Eigen::VectorXd& y, const Eigen::MatrixXd& h, const Eigen::MatrixXd& r) {
        const Eigen::MatrixXd s = h * cov * h.transpose() + r;
        const Eigen::MatrixXd s_inv = s.inverse();
        const Eigen::MatrixXd k = cov * h.transpose() * s_inv;
        const Eigen::VectorXd innov = y - h * mean;
        const double dy = static_cast<double>(y.size());
        last_log_likelihood = -0.5 * (dy * std::log(2.0 * std::numbers::pi) + std::log(s.determinant()) +
                                      innov.dot(s_inv * innov));
        mean = mean + k * innov;
        const Eigen::MatrixXd i = Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
        cov = (i - k * h) * cov;
        cov = 0.5 * (cov + cov.transpose()).eval();
    }
};

/// Simulated observations of a LinearSystem with fixed theta.
inline std::vector<Eigen::VectorXd> simulate_linear(const LinearSystem& s, const Eigen::VectorXd& theta,
                                                    Eigen::VectorXd x, int steps, int micro_steps, Gen& gen) {
    const Eigen::MatrixXd lq = Eigen::LLT<Eigen::MatrixXd>(s.q).matrixL();
    const Eigen::MatrixXd lr = Eigen::LLT<Eigen::MatrixXd>(s.r).matrixL();
    std::vector<Eigen::VectorXd> ys;
    for (int t = 0; t < steps; ++t) {
        for (int k = 0; k < micro_steps; ++k) {
            Eigen::VectorXd v(x.size());
            for (Eigen::Index i = 0; i < v.size(); ++i) {
                v(i) = gen.normal();
            }
            x = s.a * x + s.b * theta + lq * v;
        }
        Eigen::VectorXd e(s.h.rows());
        for (Eigen::Index i = 0; i < e.size(); ++i) {
            e(i) = gen.normal();
        }
        ys.push_back(s.h * x + lr * e);
    }
    return ys;
}

inline LinearSystem scalar_system() {
    LinearSystem s;
    s.a = Eigen::MatrixXd::Constant(1, 1, 0.95);
    s.b = Eigen::MatrixXd::Constant(1, 1, 0.5);
    s.h = Eigen::MatrixXd::Constant(1, 1, 1.0);
    s.q = Eigen::MatrixXd::Constant(1, 1, 0.1);
    s.r = Eigen::MatrixXd::Constant(1, 1, 0.5);
    return s;
}

inline LinearSystem planar_system() {
    LinearSystem s;
    s.a.resize(2, 2);
    s.a << 0.98, 0.1, -0.1, 0.95;
    s.b.resize(2, 1);
    s.b << 0.2, -0.1;
    s.h.resize(1, 2);
    s.h << 1.0, 0.5;
    s.q.resize(2, 2);
    s.q << 0.05, 0.01, 0.01, 0.08;
    s.r = Eigen::MatrixXd::Constant(1, 1, 0.3);
    return s;
}

} // namespace ngf::test

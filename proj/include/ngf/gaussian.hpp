/**
 * @file gaussian.hpp
 * @brief Gaussian beliefs, deterministic sigma-point rules and covariance repair.
 *
 * Everything here is templated on the compile-time dimension so the hot
 * filtering loops can run on fixed-size Eigen storage. Pass Eigen::Dynamic
 * for run-time sized problems.
 */
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ngf/error.hpp"

namespace ngf {

template <int D>
using Vector = Eigen::Matrix<double, D, 1>;

template <int D>
using Matrix = Eigen::Matrix<double, D, D>;

/// Sum of two compile-time dimensions, Dynamic if either one is.
constexpr int sum_dim(int a, int b) {
    return (a == Eigen::Dynamic || b == Eigen::Dynamic) ? Eigen::Dynamic : a + b;
}

struct PsdRepairPolicy {
    double eigen_floor = 1e-12;
    bool symmetrize = true;
    // Multiply the floor by max(1, largest diagonal entry).
    bool scale_aware = true;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
    return m.allFinite();
}

namespace detail {

// Plain-loop Cholesky and substitutions. State and observation dimensions
// are tiny, where Eigen's blocked triangular kernels cost more than the math.

/// In-place lower Cholesky factor; false unless strictly positive definite.
template <typename M>
bool small_cholesky(M& a) {
    const Eigen::Index n = a.rows();
    for (Eigen::Index j = 0; j < n; ++j) {
        double d = a(j, j);
        for (Eigen::Index k = 0; k < j; ++k) {
            d -= a(j, k) * a(j, k);
        }
        if (!(d > 0.0)) {
            return false;
        }
        d = std::sqrt(d);
        a(j, j) = d;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (Eigen::Index k = 0; k < j; ++k) {
                s -= a(i, k) * a(j, k);
            }
            a(i, j) = s / d;
        }
        for (Eigen::Index i = 0; i < j; ++i) {
            a(i, j) = 0.0;
        }
    }
    return true;
}

/// b <- L^-1 b for every column of b.
template <typename L, typename B>
void forward_substitute(const L& l, B& b) {
    const Eigen::Index n = l.rows();
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double s = b(i, c);
            for (Eigen::Index k = 0; k < i; ++k) {
                s -= l(i, k) * b(k, c);
            }
            b(i, c) = s / l(i, i);
        }
    }
}

/// b <- L^-T b for every column of b.
template <typename L, typename B>
void back_substitute_transposed(const L& l, B& b) {
    const Eigen::Index n = l.rows();
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
        for (Eigen::Index i = n - 1; i >= 0; --i) {
            double s = b(i, c);
            for (Eigen::Index k = i + 1; k < n; ++k) {
                s -= l(k, i) * b(k, c);
            }
            b(i, c) = s / l(i, i);
        }
    }
}

/// ||L^-1||_F^2 = trace(A^-1) for A = L L^T.
template <typename L>
double inverse_trace_from_cholesky(const L& l) {
    const Eigen::Index n = l.rows();
    std::array<double, 16> col_small{};
    std::vector<double> col_big;
    double* col = col_small.data();
    if (n > static_cast<Eigen::Index>(col_small.size())) {
        col_big.assign(static_cast<std::size_t>(n), 0.0);
        col = col_big.data();
    }
    double total = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
        // Column c of L^-1 is zero above the diagonal.
        for (Eigen::Index i = c; i < n; ++i) {
            double s = (i == c) ? 1.0 : 0.0;
            for (Eigen::Index k = c; k < i; ++k) {
                s -= l(i, k) * col[k];
            }
            col[i] = s / l(i, i);
            total += col[i] * col[i];
        }
    }
    return total;
}

} // namespace detail

/**
 * Returns the symmetric part of @p cov with every eigenvalue raised to at
 * least the policy floor.
 *
 * Matrices whose smallest eigenvalue is provably above the floor (checked via
 * a Cholesky factor and the bound lambda_min >= 1 / trace(C^-1)) skip the
 * eigendecomposition and come back merely symmetrized.
 */
template <typename MatrixType>
MatrixType psd_repair(const MatrixType& cov, const PsdRepairPolicy& policy = {}) {
    if (cov.rows() != cov.cols()) {
        throw std::invalid_argument("psd_repair: matrix is not square");
    }
    if (!cov.allFinite()) {
        throw std::invalid_argument("psd_repair: non-finite entries");
    }
    if (policy.eigen_floor < 0.0) {
        throw std::invalid_argument("psd_repair: negative eigen floor");
    }
    MatrixType sym = cov;
    if (policy.symmetrize) {
        sym = 0.5 * (cov + cov.transpose());
    }
    if (sym.rows() == 0) {
        return sym;
    }
    double floor = policy.eigen_floor;
    if (policy.scale_aware) {
        floor *= std::max(1.0, sym.diagonal().maxCoeff());
    }

    MatrixType factor = sym;
    if (detail::small_cholesky(factor)) {
        const double trace_inv = detail::inverse_trace_from_cholesky(factor);
        if (std::isfinite(trace_inv) && trace_inv > 0.0 && 1.0 / trace_inv >= floor) {
            return sym;
        }
    }

    Eigen::SelfAdjointEigenSolver<MatrixType> eig(sym);
    auto values = eig.eigenvalues().eval();
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        values(i) = std::max(values(i), floor);
    }
    const MatrixType& vectors = eig.eigenvectors();
    MatrixType repaired = vectors * values.asDiagonal() * vectors.transpose();
    return 0.5 * (repaired + repaired.transpose());
}

/// N(mean, cov). The covariance is symmetrized on construction.
template <int D>
struct GaussianBelief {
    Vector<D> mean;
    Matrix<D> cov;

    GaussianBelief() = default;

    GaussianBelief(Vector<D> m, const Matrix<D>& c) : mean(std::move(m)), cov(0.5 * (c + c.transpose())) {
        if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
            throw std::invalid_argument("GaussianBelief: mean/covariance dimension mismatch");
        }
    }

    [[nodiscard]] Eigen::Index dim() const { return mean.size(); }

    [[nodiscard]] bool finite() const { return mean.allFinite() && cov.allFinite(); }
};

/// Deterministic weighted point set representing a Gaussian.
template <int D>
struct SigmaPointSet {
    std::vector<Vector<D>> points;
    std::vector<double> weights;

    [[nodiscard]] std::size_t size() const { return points.size(); }
};

/// kappa = max(0, 3 - d): keeps every unscented weight nonnegative.
inline double default_kappa(Eigen::Index d) {
    return std::max(0.0, 3.0 - static_cast<double>(d));
}

namespace detail {

template <int D>
Matrix<D> lower_cholesky(const GaussianBelief<D>& belief, const PsdRepairPolicy& policy) {
    if (!belief.finite()) {
        throw FilterError("invalid belief");
    }
    const Matrix<D> repaired = psd_repair(belief.cov, policy);
    Eigen::LLT<Matrix<D>> llt(repaired);
    if (llt.info() != Eigen::Success) {
        throw FilterError("covariance not PSD");
    }
    return llt.matrixL();
}

} // namespace detail

/**
 * Classic unscented transform: the mean plus mean +/- the columns of
 * sqrt((d + kappa) C), with w_0 = kappa / (d + kappa) and 1 / (2 (d + kappa))
 * elsewhere. Points are ordered mean, +columns, -columns.
 */
template <int D>
SigmaPointSet<D> unscented_points(const GaussianBelief<D>& belief, double kappa,
                                  const PsdRepairPolicy& policy = {}) {
    const Eigen::Index d = belief.dim();
    const auto dd = static_cast<double>(d);
    if (!(kappa > -dd)) {
        throw std::invalid_argument("unscented_points: kappa must exceed -d");
    }
    const Matrix<D> chol = detail::lower_cholesky(belief, policy);
    const double scale = std::sqrt(dd + kappa);

    SigmaPointSet<D> set;
    set.points.reserve(static_cast<std::size_t>(2 * d + 1));
    set.weights.reserve(static_cast<std::size_t>(2 * d + 1));
    set.points.push_back(belief.mean);
    set.weights.push_back(kappa / (dd + kappa));
    const double w = 1.0 / (2.0 * (dd + kappa));
    for (Eigen::Index j = 0; j < d; ++j) {
        set.points.push_back(belief.mean + scale * chol.col(j));
        set.weights.push_back(w);
    }
    for (Eigen::Index j = 0; j < d; ++j) {
        set.points.push_back(belief.mean - scale * chol.col(j));
        set.weights.push_back(w);
    }
    return set;
}

/// Third-degree spherical cubature rule: 2d points mean +/- sqrt(d) chol(C)_j.
template <int D>
SigmaPointSet<D> cubature_points(const GaussianBelief<D>& belief, const PsdRepairPolicy& policy = {}) {
    const Eigen::Index d = belief.dim();
    if (d == 0) {
        throw std::invalid_argument("cubature_points: zero dimension");
    }
    const Matrix<D> chol = detail::lower_cholesky(belief, policy);
    const double scale = std::sqrt(static_cast<double>(d));
    const double w = 1.0 / (2.0 * static_cast<double>(d));

    SigmaPointSet<D> set;
    set.points.reserve(static_cast<std::size_t>(2 * d));
    for (Eigen::Index j = 0; j < d; ++j) {
        set.points.push_back(belief.mean + scale * chol.col(j));
    }
    for (Eigen::Index j = 0; j < d; ++j) {
        set.points.push_back(belief.mean - scale * chol.col(j));
    }
    set.weights.assign(set.points.size(), w);
    return set;
}

/// Which deterministic rule places the outer-layer reference points.
struct PointRule {
    enum class Kind { unscented, cubature, mean_only };

    Kind kind = Kind::unscented;
    // Unscented only; unset means default_kappa(d).
    std::optional<double> kappa;

    static PointRule unscented(std::optional<double> k = std::nullopt) { return {Kind::unscented, k}; }
    static PointRule cubature() { return {Kind::cubature, std::nullopt}; }
    // Single point at the mean with weight one (a plain conditional filter).
    static PointRule mean_only() { return {Kind::mean_only, std::nullopt}; }

    [[nodiscard]] std::size_t point_count(Eigen::Index d) const {
        switch (kind) {
        case Kind::unscented: return static_cast<std::size_t>(2 * d + 1);
        case Kind::cubature: return static_cast<std::size_t>(2 * d);
        case Kind::mean_only: return 1;
        }
        return 0;
    }
};

template <int D>
SigmaPointSet<D> generate_points(const PointRule& rule, const GaussianBelief<D>& belief,
                                 const PsdRepairPolicy& policy = {}) {
    switch (rule.kind) {
    case PointRule::Kind::unscented:
        return unscented_points(belief, rule.kappa.value_or(default_kappa(belief.dim())), policy);
    case PointRule::Kind::cubature:
        return cubature_points(belief, policy);
    case PointRule::Kind::mean_only: {
        if (!belief.finite()) {
            throw FilterError("invalid belief");
        }
        SigmaPointSet<D> set;
        set.points.push_back(belief.mean);
        set.weights.push_back(1.0);
        return set;
    }
    }
    throw std::invalid_argument("generate_points: unknown rule");
}

/// Any A with A A^T = cov; exact zeros for semidefinite directions (used for sampling).
template <typename MatrixType>
MatrixType covariance_sqrt(const MatrixType& cov) {
    Eigen::LLT<MatrixType> llt(cov);
    if (llt.info() == Eigen::Success) {
        return llt.matrixL();
    }
    Eigen::SelfAdjointEigenSolver<MatrixType> eig(cov);
    auto values = eig.eigenvalues().eval();
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        values(i) = std::sqrt(std::max(values(i), 0.0));
    }
    return eig.eigenvectors() * values.asDiagonal();
}

/// Weighted mean and covariance of a point set, covariance repaired.
template <int D>
GaussianBelief<D> moments_from_points(const std::vector<Vector<D>>& points, const std::vector<double>& weights,
                                      const PsdRepairPolicy& policy = {}) {
    if (points.empty()) {
        throw std::invalid_argument("moments_from_points: empty point set");
    }
    if (points.size() != weights.size()) {
        throw std::invalid_argument("moments_from_points: points/weights length mismatch");
    }
    const Eigen::Index d = points.front().size();
    Vector<D> mean = Vector<D>::Zero(d);
    for (std::size_t i = 0; i < points.size(); ++i) {
        mean.noalias() += weights[i] * points[i];
    }
    Matrix<D> cov = Matrix<D>::Zero(d, d);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Vector<D> diff = points[i] - mean;
        cov.noalias() += weights[i] * diff * diff.transpose();
    }
    return GaussianBelief<D>(std::move(mean), psd_repair(cov, policy));
}

template <int D>
GaussianBelief<D> moments_from_points(const SigmaPointSet<D>& set, const PsdRepairPolicy& policy = {}) {
    return moments_from_points(set.points, set.weights, policy);
}

/// log N(x | mean, cov) evaluated through a Cholesky factor of the repaired covariance.
template <int D>
double gaussian_logpdf(const Vector<D>& x, const GaussianBelief<D>& belief, const PsdRepairPolicy& policy = {}) {
    if (x.size() != belief.dim()) {
        throw std::invalid_argument("gaussian_logpdf: dimension mismatch");
    }
    const Matrix<D> repaired = psd_repair(belief.cov, policy);
    Eigen::LLT<Matrix<D>> llt(repaired);
    if (llt.info() != Eigen::Success) {
        throw FilterError("degenerate density");
    }
    const Vector<D> z = llt.matrixL().solve(x - belief.mean);
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double d = static_cast<double>(x.size());
    return -0.5 * (d * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

} // namespace ngf

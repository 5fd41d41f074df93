#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <optional>

#include "scent/error.hpp"

namespace scent {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace linalg {

inline constexpr double kJitterStart = 1e-10;
inline constexpr double kJitterMax = 1e-6;

/// Cholesky factor of an SPD matrix plus the diagonal jitter that was needed.
struct Cholesky {
    Eigen::LLT<Matrix> llt;
    double jitter = 0.0;

    [[nodiscard]] Matrix inverse() const {
        const auto n = llt.matrixLLT().rows();
        Matrix inv = llt.solve(Matrix::Identity(n, n));
        return 0.5 * (inv + inv.transpose());
    }

    [[nodiscard]] double log_det() const {
        return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    }
};

/// Factor without any jitter; nullopt when the matrix is not numerically SPD.
inline std::optional<Eigen::LLT<Matrix>> try_cholesky(const Matrix& a) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success) {
        return std::nullopt;
    }
    if (!llt.matrixLLT().diagonal().allFinite() ||
        (llt.matrixLLT().diagonal().array() <= 0.0).any()) {
        return std::nullopt;
    }
    return llt;
}

/// Cholesky with jitter escalation 1e-10 -> 1e-6 (relative to the mean diagonal).
inline Cholesky cholesky(const Matrix& a, ErrorCode on_failure = ErrorCode::NumericallySingular) {
    require(a.rows() == a.cols(), ErrorCode::DimensionMismatch, "cholesky: matrix is not square");
    require(a.allFinite(), on_failure, "cholesky: matrix has non-finite entries");
    if (auto llt = try_cholesky(a)) {
        return {std::move(*llt), 0.0};
    }
    const double scale = a.rows() > 0 ? std::max(1.0, a.diagonal().cwiseAbs().mean()) : 1.0;
    for (double jitter = kJitterStart; jitter <= kJitterMax * 1.0000001; jitter *= 10.0) {
        Matrix shifted = a;
        shifted.diagonal().array() += jitter * scale;
        if (auto llt = try_cholesky(shifted)) {
            return {std::move(*llt), jitter * scale};
        }
    }
    fail(on_failure, "cholesky failed after jitter escalation");
}

inline Matrix symmetrize(const Matrix& a) { return 0.5 * (a + a.transpose()); }

/// Project a symmetric matrix onto the SPD cone by clipping eigenvalues at `floor`.
inline Matrix clip_to_spd(const Matrix& a, double floor) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(a));
    Vector values = eig.eigenvalues().cwiseMax(floor);
    Matrix out = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
    return symmetrize(out);
}

inline bool is_spd(const Matrix& a, double symmetry_tol = 1e-10) {
    if (a.rows() != a.cols() || !a.allFinite()) {
        return false;
    }
    if ((a - a.transpose()).cwiseAbs().maxCoeff() > symmetry_tol * std::max(1.0, a.cwiseAbs().maxCoeff())) {
        return false;
    }
    return try_cholesky(a).has_value();
}

inline double sup_norm(const Matrix& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace linalg
}  // namespace scent

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace modconn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MatrixList = std::vector<Matrix>;

/// Base for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent input data (shapes, non-finite values, degenerate classes).
class DataError : public Error {
public:
    using Error::Error;
};

/// Parameters or data led to an ill-conditioned or non-finite computation.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// File-system and format failures.
class IoError : public Error {
public:
    using Error::Error;
};

// Eigenvalue floor for latent covariances.
inline constexpr double kPsdFloor = 1e-8;
// Lower bound on the observation noise variance.
inline constexpr double kVarianceFloor = 1e-6;

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// ‖WᵀW − I‖_F
inline double orthonormality_residual(const Matrix& W) {
    const auto k = W.cols();
    return (W.transpose() * W - Matrix::Identity(k, k)).norm();
}

}  // namespace modconn

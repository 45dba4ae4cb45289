#pragma once

// Dense covariance baselines for held-out likelihood comparisons.

#include "modconn/common.hpp"

#include <string>

namespace modconn {

struct CovEstimate {
    Matrix Sigma;
    std::string method;
    double shrinkage = 0.0;  // Ledoit-Wolf intensity; 0 for the sample covariance
};

/// (1/n) XcᵀXc on column-centered data.
[[nodiscard]] CovEstimate sample_cov(const Matrix& X);

/// Linear shrinkage (1-α)S + α(tr S / p)I with the Ledoit-Wolf intensity, α ∈ [0,1].
[[nodiscard]] CovEstimate ledoit_wolf(const Matrix& X);

/// Raises every eigenvalue to at least `floor` so the matrix can be inverted.
[[nodiscard]] Matrix eigen_floor(const Matrix& S, double floor = 1e-10);

}  // namespace modconn

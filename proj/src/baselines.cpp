#include "modconn/baselines.hpp"

#include "modconn/dataset.hpp"

#include <algorithm>

namespace modconn {

namespace {

Matrix centered(const Matrix& X) {
    if (X.rows() < 2) throw DataError("covariance baselines need at least 2 observations");
    return center_columns(X, column_means(X));
}

}  // namespace

CovEstimate sample_cov(const Matrix& X) {
    const Matrix Xc = centered(X);
    return {symmetrize(Xc.transpose() * Xc / static_cast<double>(Xc.rows())), "sample_cov", 0.0};
}

CovEstimate ledoit_wolf(const Matrix& X) {
    const Matrix Xc = centered(X);
    const double n = static_cast<double>(Xc.rows());
    const double p = static_cast<double>(Xc.cols());
    const Matrix S = symmetrize(Xc.transpose() * Xc / n);
    const double mu = S.trace() / p;
    Matrix target = Matrix::Identity(Xc.cols(), Xc.cols()) * mu;

    const double delta = (S - target).squaredNorm() / p;
    double beta = 0.0;
    for (Eigen::Index r = 0; r < Xc.rows(); ++r) {
        const double sq = Xc.row(r).squaredNorm();
        beta += sq * sq;
    }
    beta = (beta - n * S.squaredNorm()) / (n * n * p);
    const double alpha = delta > 0.0 ? std::clamp(std::min(beta, delta) / delta, 0.0, 1.0) : 0.0;
    return {symmetrize((1.0 - alpha) * S + alpha * target), "ledoit_wolf", alpha};
}

Matrix eigen_floor(const Matrix& S, double floor) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(S));
    const Vector d = eig.eigenvalues().cwiseMax(floor);
    return symmetrize(eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose());
}

}  // namespace modconn

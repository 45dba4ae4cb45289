#include "modconn/directed.hpp"

#include "modconn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace modconn {

namespace {

constexpr double kK1 = 79.047;
constexpr double kK2 = 7.4129;
constexpr double kGamma = 0.37457;

Vector standardize(const Vector& x) {
    const double mean = x.mean();
    const Vector c = x.array() - mean;
    const double sd = std::sqrt(c.squaredNorm() / static_cast<double>(c.size()));
    if (!(sd > 0.0)) return Vector::Zero(c.size());
    return c / sd;
}

// Residual of y after least-squares regression on x (both centered).
Vector residual(const Vector& y, const Vector& x) {
    const double xx = x.squaredNorm();
    if (!(xx > 0.0)) return y;
    return y - (x.dot(y) / xx) * x;
}

}  // namespace

void StructuralModel::validate() const {
    const auto k = B.rows();
    if (B.cols() != k || static_cast<Eigen::Index>(order.size()) != k) {
        throw DataError("structural model shapes disagree");
    }
    std::vector<int> pos(static_cast<std::size_t>(k), -1);
    for (std::size_t r = 0; r < order.size(); ++r) pos.at(static_cast<std::size_t>(order[r])) = static_cast<int>(r);
    for (Eigen::Index c = 0; c < k; ++c)
        for (Eigen::Index p = 0; p < k; ++p) {
            if (B(c, p) != 0.0 && pos[static_cast<std::size_t>(p)] >= pos[static_cast<std::size_t>(c)]) {
                throw DataError("structural matrix is not acyclic under its order");
            }
        }
}

Matrix project_latents(const Matrix& W, const Matrix& X) {
    if (X.cols() != W.rows()) throw DataError("observation and loading dimensions disagree");
    return X * W;
}

Matrix standardize_columns(const Matrix& Z) {
    Matrix out(Z.rows(), Z.cols());
    for (Eigen::Index j = 0; j < Z.cols(); ++j) out.col(j) = standardize(Z.col(j));
    return out;
}

double approx_entropy(const Vector& u) {
    const double n = static_cast<double>(u.size());
    double logcosh = 0.0, gauss = 0.0;
    for (Eigen::Index t = 0; t < u.size(); ++t) {
        const double a = std::abs(u[t]);
        // log cosh a = a + log(1 + e^{-2a}) - log 2, stable for large a
        logcosh += a + std::log1p(std::exp(-2.0 * a)) - std::numbers::ln2;
        gauss += u[t] * std::exp(-0.5 * u[t] * u[t]);
    }
    logcosh /= n;
    gauss /= n;
    return 0.5 * (1.0 + std::log(2.0 * std::numbers::pi)) - kK1 * (logcosh - kGamma) * (logcosh - kGamma) -
           kK2 * gauss * gauss;
}

double pairwise_contrast(const Vector& xi, const Vector& xj) {
    const Vector si = standardize(xi);
    const Vector sj = standardize(xj);
    const Vector ri_j = standardize(residual(si, sj));
    const Vector rj_i = standardize(residual(sj, si));
    return (approx_entropy(sj) + approx_entropy(ri_j)) - (approx_entropy(si) + approx_entropy(rj_i));
}

StructuralModel lingam(const Matrix& Z, const LingamOptions& opts) {
    const auto n = Z.rows();
    const auto k = Z.cols();
    if (k < 1) throw DataError("lingam needs at least one variable");
    if (n < 10 * k) {
        throw DataError("lingam needs n >= 10k observations (n=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");
    }
    Matrix X = Z.rowwise() - Z.colwise().mean();
    {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(X.transpose() * X / static_cast<double>(n), Eigen::EigenvaluesOnly);
        const Vector ev = eig.eigenvalues();
        if (!(ev.minCoeff() > 1e-10 * std::max(1.0, ev.maxCoeff()))) {
            throw NumericalError("latent scores are rank-deficient");
        }
    }

    StructuralModel model;
    std::vector<int> remaining(static_cast<std::size_t>(k));
    std::iota(remaining.begin(), remaining.end(), 0);
    Matrix R = X;
    while (!remaining.empty()) {
        int chosen = remaining.front();
        if (remaining.size() > 1) {
            const auto m = remaining.size();
            Matrix diff = Matrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
            for (std::size_t a = 0; a < m; ++a)
                for (std::size_t b = a + 1; b < m; ++b) {
                    const double d = pairwise_contrast(R.col(remaining[a]), R.col(remaining[b]));
                    diff(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = d;
                    diff(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) = -d;
                    model.contrast = std::max(model.contrast, std::abs(d));
                }
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < m; ++a) {
                double score = 0.0;
                for (std::size_t b = 0; b < m; ++b) {
                    if (a == b) continue;
                    const double d = std::min(0.0, diff(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)));
                    score += d * d;
                }
                if (score < best) {
                    best = score;
                    chosen = remaining[a];
                }
            }
        }
        model.order.push_back(chosen);
        remaining.erase(std::find(remaining.begin(), remaining.end(), chosen));
        for (const int j : remaining) R.col(j) = residual(R.col(j), R.col(chosen));
    }
    model.low_confidence = k > 1 && model.contrast < opts.contrast_scale / static_cast<double>(n);

    model.B = Matrix::Zero(k, k);
    model.disturbance_variances = Vector::Zero(k);
    for (std::size_t r = 0; r < model.order.size(); ++r) {
        const int child = model.order[r];
        const Vector y = X.col(child);
        if (r == 0) {
            model.disturbance_variances[child] = y.squaredNorm() / static_cast<double>(n);
            continue;
        }
        Matrix P(n, static_cast<Eigen::Index>(r));
        for (std::size_t q = 0; q < r; ++q) P.col(static_cast<Eigen::Index>(q)) = X.col(model.order[q]);
        const Vector coef = P.colPivHouseholderQr().solve(y);
        Vector kept = coef;
        for (Eigen::Index q = 0; q < kept.size(); ++q) {
            if (std::abs(kept[q]) < opts.prune_tol) kept[q] = 0.0;
        }
        for (std::size_t q = 0; q < r; ++q) model.B(child, model.order[q]) = kept[static_cast<Eigen::Index>(q)];
        model.disturbance_variances[child] = (y - P * kept).squaredNorm() / static_cast<double>(n);
    }
    return model;
}

std::vector<StructuralModel> fit_structural(const MultiClassDataset& ds, const Matrix& W, const LingamOptions& opts) {
    std::vector<StructuralModel> out(ds.num_classes());
    for_each_class(ds.num_classes(), Exec::parallel, [&](std::size_t i) {
        out[i] = lingam(standardize_columns(project_latents(W, ds.classes[i])), opts);
    });
    return out;
}

DirectedFit two_stage_fit(const MultiClassDataset& ds, const FitConfig& cfg, const LingamOptions& opts) {
    DirectedFit result;
    FitResult stage1 = fit_score_matching(ds, cfg);
    result.params = std::move(stage1.params);
    result.diagnostics = std::move(stage1.diagnostics);
    result.structural = fit_structural(ds, result.params.W, opts);
    return result;
}

}  // namespace modconn

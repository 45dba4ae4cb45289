#include "modconn/metrics.hpp"

#include "modconn/baselines.hpp"
#include "modconn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>

namespace modconn {

namespace {

Matrix column_cost(const Matrix& W_hat, const Matrix& W_true) {
    if (W_hat.rows() != W_true.rows() || W_hat.cols() != W_true.cols()) {
        throw DataError("loading matrices differ in shape");
    }
    const auto k = W_true.cols();
    Matrix cost(k, k);
    for (Eigen::Index j = 0; j < k; ++j)
        for (Eigen::Index l = 0; l < k; ++l) cost(j, l) = (W_true.col(j) - W_hat.col(l)).squaredNorm();
    return cost;
}

double assignment_cost(const Matrix& cost, const std::vector<int>& perm) {
    double s = 0.0;
    for (std::size_t j = 0; j < perm.size(); ++j) s += cost(static_cast<Eigen::Index>(j), perm[j]);
    return s;
}

// Shortest augmenting path Hungarian method; rows are assigned to columns.
std::vector<int> hungarian(const Matrix& cost) {
    const int n = static_cast<int>(cost.rows());
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            double delta = inf;
            int j1 = 0;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> assign(n, 0);
    for (int j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
    return assign;
}

double mean_sq(const Matrix& a, const Matrix& b) {
    return (a - b).squaredNorm() / static_cast<double>(a.size());
}

double choose2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

std::vector<int> align_columns(const Matrix& W_hat, const Matrix& W_true) {
    return hungarian(column_cost(W_hat, W_true));
}

std::vector<int> align_columns_exhaustive(const Matrix& W_hat, const Matrix& W_true) {
    const Matrix cost = column_cost(W_hat, W_true);
    std::vector<int> perm(static_cast<std::size_t>(cost.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    double best_cost = assignment_cost(cost, perm);
    while (std::next_permutation(perm.begin(), perm.end())) {
        const double c = assignment_cost(cost, perm);
        if (c < best_cost) {
            best_cost = c;
            best = perm;
        }
    }
    return best;
}

Matrix permute_columns(const Matrix& W, const std::vector<int>& perm) {
    Matrix out(W.rows(), static_cast<Eigen::Index>(perm.size()));
    for (std::size_t j = 0; j < perm.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = W.col(perm[j]);
    return out;
}

Matrix permute_symmetric(const Matrix& G, const std::vector<int>& perm) {
    const auto k = static_cast<Eigen::Index>(perm.size());
    Matrix out(k, k);
    for (Eigen::Index a = 0; a < k; ++a)
        for (Eigen::Index b = 0; b < k; ++b) out(a, b) = G(perm[a], perm[b]);
    return out;
}

double loading_mse(const Matrix& W_hat, const Matrix& W_true) {
    return loading_mse(W_hat, W_true, align_columns(W_hat, W_true));
}

double loading_mse(const Matrix& W_hat, const Matrix& W_true, const std::vector<int>& perm) {
    return mean_sq(permute_columns(W_hat, perm), W_true);
}

std::vector<double> latent_conn_mse(const MatrixList& G_hat, const MatrixList& G_true, const std::vector<int>& perm) {
    if (G_hat.size() != G_true.size()) throw DataError("latent connectivity lists differ in length");
    std::vector<double> out;
    out.reserve(G_hat.size());
    for (std::size_t i = 0; i < G_hat.size(); ++i) {
        out.push_back(mean_sq(permute_symmetric(G_hat[i], perm), G_true[i]));
    }
    return out;
}

std::vector<int> module_labels(const Matrix& W) {
    std::vector<int> labels(static_cast<std::size_t>(W.rows()));
    for (Eigen::Index r = 0; r < W.rows(); ++r) {
        Eigen::Index arg = 0;
        const double m = W.row(r).maxCoeff(&arg);
        labels[static_cast<std::size_t>(r)] = m > 0.0 ? static_cast<int>(arg) : static_cast<int>(W.cols());
    }
    return labels;
}

double adjusted_rand(const std::vector<int>& labels_hat, const std::vector<int>& labels_true) {
    if (labels_hat.size() != labels_true.size()) throw DataError("label vectors differ in length");
    const double n = static_cast<double>(labels_hat.size());
    std::map<std::pair<int, int>, double> table;
    std::map<int, double> rows, cols;
    for (std::size_t i = 0; i < labels_hat.size(); ++i) {
        table[{labels_hat[i], labels_true[i]}] += 1.0;
        rows[labels_hat[i]] += 1.0;
        cols[labels_true[i]] += 1.0;
    }
    double index = 0.0, a = 0.0, b = 0.0;
    for (const auto& [key, c] : table) index += choose2(c);
    for (const auto& [key, c] : rows) a += choose2(c);
    for (const auto& [key, c] : cols) b += choose2(c);
    const double expected = a * b / choose2(n);
    const double max_index = 0.5 * (a + b);
    // Both partitions trivial (all singletons or one cluster): agreement is perfect.
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

double order_spearman(const std::vector<int>& order_hat, const std::vector<int>& order_true) {
    const auto k = order_true.size();
    if (order_hat.size() != k) throw DataError("orders differ in length");
    if (k < 2) return 1.0;
    std::vector<double> pos_hat(k), pos_true(k);
    for (std::size_t r = 0; r < k; ++r) {
        pos_hat.at(static_cast<std::size_t>(order_hat[r])) = static_cast<double>(r);
        pos_true.at(static_cast<std::size_t>(order_true[r])) = static_cast<double>(r);
    }
    double d2 = 0.0;
    for (std::size_t j = 0; j < k; ++j) d2 += (pos_hat[j] - pos_true[j]) * (pos_hat[j] - pos_true[j]);
    const double kk = static_cast<double>(k);
    return 1.0 - 6.0 * d2 / (kk * (kk * kk - 1.0));
}

NllSummary heldout_nll_eval(const ModelParams& params, const MultiClassDataset& heldout) {
    if (heldout.num_classes() != params.num_classes()) throw DataError("held-out data and model differ in class count");
    NllSummary s;
    s.per_class.resize(heldout.num_classes());
    for (std::size_t i = 0; i < heldout.num_classes(); ++i) {
        s.per_class[i] = negative_log_likelihood(params, heldout.classes[i], i);
    }
    s.mean = ordered_mean(s.per_class);
    return s;
}

double dense_gaussian_nll(const Matrix& Sigma, const Matrix& data) {
    const auto p = static_cast<double>(Sigma.rows());
    Eigen::LLT<Matrix> llt(Sigma);
    if (llt.info() != Eigen::Success) throw NumericalError("covariance is not positive definite");
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const Matrix Y = llt.matrixL().solve(data.transpose());
    const double quad = Y.squaredNorm() / static_cast<double>(data.rows());
    const double nll = 0.5 * (p * std::log(2.0 * std::numbers::pi) + logdet + quad);
    if (!std::isfinite(nll)) throw NumericalError("non-finite negative log-likelihood");
    return nll;
}

void compare_loadings(EvalReport& report, const ModelParams& params, const Matrix& W_true, const MatrixList& G_true) {
    report.alignment = align_columns(params.W, W_true);
    report.loading_mse = loading_mse(params.W, W_true, report.alignment);
    report.ari = adjusted_rand(module_labels(params.W), module_labels(W_true));
    if (!G_true.empty()) {
        report.latent_conn_mse = latent_conn_mse(params.G, G_true, report.alignment);
        report.latent_conn_mse_mean = ordered_mean(report.latent_conn_mse);
    }
}

void baseline_nll(EvalReport& report, const MultiClassDataset& train, const MultiClassDataset& heldout) {
    if (train.num_classes() != heldout.num_classes()) {
        throw DataError("baseline_nll: train and held-out class counts differ");
    }
    const std::size_t N = train.num_classes();
    NllSummary sc, lw;
    sc.per_class.resize(N);
    lw.per_class.resize(N);
    for_each_class(N, Exec::parallel, [&](std::size_t i) {
        sc.per_class[i] = dense_gaussian_nll(eigen_floor(sample_cov(train.classes[i]).Sigma), heldout.classes[i]);
        lw.per_class[i] = dense_gaussian_nll(ledoit_wolf(train.classes[i]).Sigma, heldout.classes[i]);
    });
    sc.mean = ordered_mean(sc.per_class);
    lw.mean = ordered_mean(lw.per_class);
    report.sample_cov_nll = std::move(sc);
    report.ledoit_wolf_nll = std::move(lw);
}

double structural_mse(const Matrix& B_hat, const Matrix& B_true, const std::vector<int>& perm) {
    return mean_sq(permute_symmetric(B_hat, perm), B_true);
}

Matrix standardize_structural(const Matrix& B, const Matrix& G) {
    if (B.rows() != G.rows() || B.cols() != G.cols()) throw DataError("standardize_structural: B and G shapes differ");
    const Vector sd = G.diagonal().cwiseMax(0.0).cwiseSqrt();
    if ((sd.array() <= 0.0).any()) throw NumericalError("standardize_structural: latent with zero variance");
    return sd.cwiseInverse().asDiagonal() * B * sd.asDiagonal();
}

std::vector<int> relabel_order(const std::vector<int>& order_hat, const std::vector<int>& perm) {
    std::vector<int> inverse(perm.size());
    for (std::size_t j = 0; j < perm.size(); ++j) inverse.at(static_cast<std::size_t>(perm[j])) = static_cast<int>(j);
    std::vector<int> out;
    out.reserve(order_hat.size());
    for (const int l : order_hat) out.push_back(inverse.at(static_cast<std::size_t>(l)));
    return out;
}

}  // namespace modconn

#pragma once

// Permutation-aware comparison of estimates with ground truth or held-out data.
// Columns of W are identified only up to permutation, so every ground-truth
// metric first aligns estimated columns to true columns.

#include "modconn/common.hpp"
#include "modconn/dataset.hpp"
#include "modconn/model.hpp"

#include <optional>
#include <vector>

namespace modconn {

/// perm[j] is the column of W_hat matched to true column j. Solved as an
/// assignment problem on the squared column distances.
[[nodiscard]] std::vector<int> align_columns(const Matrix& W_hat, const Matrix& W_true);

/// Brute-force alignment over all k! permutations (reference for small k).
[[nodiscard]] std::vector<int> align_columns_exhaustive(const Matrix& W_hat, const Matrix& W_true);

/// W_hat with its columns reordered so column j is W_hat.col(perm[j]).
[[nodiscard]] Matrix permute_columns(const Matrix& W, const std::vector<int>& perm);
/// Rows and columns of a k×k matrix reordered by perm.
[[nodiscard]] Matrix permute_symmetric(const Matrix& G, const std::vector<int>& perm);

/// Mean squared entrywise error after optimal alignment.
[[nodiscard]] double loading_mse(const Matrix& W_hat, const Matrix& W_true);
[[nodiscard]] double loading_mse(const Matrix& W_hat, const Matrix& W_true, const std::vector<int>& perm);

[[nodiscard]] std::vector<double> latent_conn_mse(const MatrixList& G_hat, const MatrixList& G_true,
                                                  const std::vector<int>& perm);

/// Row-argmax labels; rows without a positive entry get label k ("unassigned").
[[nodiscard]] std::vector<int> module_labels(const Matrix& W);

[[nodiscard]] double adjusted_rand(const std::vector<int>& labels_hat, const std::vector<int>& labels_true);

/// Spearman correlation between position-in-order of each variable.
[[nodiscard]] double order_spearman(const std::vector<int>& order_hat, const std::vector<int>& order_true);

struct NllSummary {
    std::vector<double> per_class;
    double mean = 0.0;
};

/// `heldout` must already be centered with the training means.
[[nodiscard]] NllSummary heldout_nll_eval(const ModelParams& params, const MultiClassDataset& heldout);

/// Gaussian NLL per observation of centered rows under a dense covariance.
[[nodiscard]] double dense_gaussian_nll(const Matrix& Sigma, const Matrix& data);

struct EvalReport {
    std::optional<double> loading_mse;
    std::vector<double> latent_conn_mse;
    std::optional<double> latent_conn_mse_mean;
    std::optional<NllSummary> heldout_nll;
    std::optional<double> ari;
    std::vector<double> order_spearman;
    std::optional<double> order_spearman_mean;
    std::vector<double> structural_mse;  // directed only, standardized units
    std::optional<double> structural_mse_mean;
    std::vector<int> alignment;
    // Baseline held-out NLL, filled when training data is supplied.
    std::optional<NllSummary> sample_cov_nll;
    std::optional<NllSummary> ledoit_wolf_nll;
};

/// Fills sample_cov_nll and ledoit_wolf_nll: both estimators are fitted on
/// `train`, and `heldout` must already be centered with the training means.
/// The sample covariance is floored with eigen_floor so it stays invertible when n < p.
void baseline_nll(EvalReport& report, const MultiClassDataset& train, const MultiClassDataset& heldout);

/// Fills loading_mse, latent_conn_mse, ari and alignment.
void compare_loadings(EvalReport& report, const ModelParams& params, const Matrix& W_true, const MatrixList& G_true);

/// Mean squared error of aligned B matrices.
[[nodiscard]] double structural_mse(const Matrix& B_hat, const Matrix& B_true, const std::vector<int>& perm);

/// B expressed for unit-variance latents: D⁻¹ B D with D = sqrt(diag(G)).
[[nodiscard]] Matrix standardize_structural(const Matrix& B, const Matrix& G);

/// Orders expressed in true-latent labels: maps each estimated latent index through perm.
[[nodiscard]] std::vector<int> relabel_order(const std::vector<int>& order_hat, const std::vector<int>& perm);

}  // namespace modconn

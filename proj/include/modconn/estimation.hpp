#pragma once

// Constrained fitting of the modular latent covariance model.
//
// Orthonormality of W is enforced by an augmented Lagrangian
//   J̃(W) = J(W) + ρ/2 ‖WᵀW - I‖²_F + tr(Λᵀ(WᵀW - I)),
// non-negativity by projecting onto the non-negative orthant after every
// gradient step. Each inner iteration takes one projected Armijo step on W,
// sets every G_i to its closed form psd_project(WᵀK_iW - v_iI), and takes one
// projected Armijo step on every v_i. After each inner loop the multipliers
// move by ρ(WᵀW - I) and ρ grows geometrically up to rho_max.
//
// The score-matching route costs O(p²k) per class and iteration; the likelihood
// route forms a dense p×p matrix per class for its W gradient and costs O(p³).

#include "modconn/common.hpp"
#include "modconn/dataset.hpp"
#include "modconn/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace modconn {

enum class Estimator { score_matching, mle };

/// Starting loading matrix. `spectral` clusters the rows of the leading
/// eigenvectors of the pooled covariance; `random` draws |N(0,1)| entries.
enum class InitMethod { spectral, random };

[[nodiscard]] std::string to_string(Estimator e);
/// Accepts "sm", "score_matching", "mle", "ml".
[[nodiscard]] Estimator parse_estimator(const std::string& name);
[[nodiscard]] std::string to_string(InitMethod m);
[[nodiscard]] InitMethod parse_init(const std::string& name);

struct ArmijoConfig {
    double c = 1e-4;
    double backtrack = 0.5;
    double eta0 = 1.0;
    int max_backtracks = 60;
};

struct FitConfig {
    Eigen::Index k = 2;
    double rho0 = 1.0;
    double rho_growth = 2.0;
    double rho_max = 1e6;
    int inner_max = 100;
    int outer_max = 200;
    double grad_tol = 1e-6;
    double ortho_tol = 1e-4;
    ArmijoConfig armijo;
    std::uint64_t seed = 0;
    Estimator estimator = Estimator::score_matching;
    InitMethod init = InitMethod::spectral;
    bool record_steps = false;  // fill FitDiagnostics::steps

    /// Throws DataError on non-positive tolerances, rho_growth ≤ 1 or k out of [1, p].
    void validate(Eigen::Index p) const;
};

struct FitDiagnostics {
    // One entry per outer iteration.
    std::vector<double> objective;       // J (without penalty terms)
    std::vector<double> ortho_residual;  // ‖WᵀW - I‖_F
    std::vector<double> grad_norm;       // projected-gradient norm at the end of the inner loop
    std::vector<int> inner_iterations;
    std::vector<double> wall_seconds;    // not part of the deterministic trace
    int iterations = 0;                  // outer iterations used
    int total_inner_iterations = 0;
    bool converged = false;
    bool clipped = false;                // some G_i hit the eigenvalue floor in the final update

    /// Augmented objective before and after each W step and each joint v step,
    /// recorded only with FitConfig::record_steps.
    struct Step {
        char block;  // 'W' or 'v'
        double before;
        double after;
    };
    std::vector<Step> steps;
};

struct FitResult {
    ModelParams params;
    FitDiagnostics diagnostics;
};

/// |N(0,1)| entries with unit-norm columns, drawn from `seed`.
[[nodiscard]] Matrix initial_loading(Eigen::Index p, Eigen::Index k, std::uint64_t seed);

/// Module labels from k-means (k-means++ seeding, 10 restarts) on the
/// row-normalized top-k eigenvectors of Σ K_i. Each variable gets weight 1 on
/// its cluster and 0.01 elsewhere, then columns are normalized.
[[nodiscard]] Matrix spectral_loading(const SampleMoments& moments, Eigen::Index k, std::uint64_t seed);

/// Initial loading for cfg.init.
[[nodiscard]] Matrix starting_loading(const SampleMoments& moments, const FitConfig& cfg);

/// Core loop on precomputed moments. `init_W` overrides the seeded initial loading.
[[nodiscard]] FitResult fit_moments(const SampleMoments& moments, const FitConfig& cfg,
                                    const std::optional<Matrix>& init_W = std::nullopt);

[[nodiscard]] FitResult fit_score_matching(const MultiClassDataset& ds, FitConfig cfg,
                                           const std::optional<Matrix>& init_W = std::nullopt);
[[nodiscard]] FitResult fit_mle(const MultiClassDataset& ds, FitConfig cfg,
                                const std::optional<Matrix>& init_W = std::nullopt);
/// Dispatches on cfg.estimator.
[[nodiscard]] FitResult fit(const MultiClassDataset& ds, const FitConfig& cfg,
                            const std::optional<Matrix>& init_W = std::nullopt);

/// Objective of the selected estimator (score matching J or likelihood L).
[[nodiscard]] double estimator_objective(const ModelParams& params, const SampleMoments& moments, Estimator e);

struct TuneEntry {
    Eigen::Index k = 0;
    double mean_nll = 0.0;               // mean over classes of per-observation held-out NLL
    std::vector<double> class_nll;
    bool converged = false;
};

struct TuneResult {
    Eigen::Index best_k = 0;
    std::vector<TuneEntry> table;
};

/// Tail split per class; fits every k on the training part and picks the
/// smallest held-out NLL (ties within 1e-6 go to the smaller k).
[[nodiscard]] TuneResult tune_k(const MultiClassDataset& ds, const std::vector<Eigen::Index>& k_grid,
                                const FitConfig& cfg, double holdout_frac);

}  // namespace modconn

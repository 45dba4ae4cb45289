#pragma once

// Seeded generators for the two synthetic regimes: Gaussian latents with a full
// covariance per class, and linear non-Gaussian acyclic latents with a
// per-class causal order. All randomness flows from one master seed; each class
// draws from its own deterministic sub-stream.

#include "modconn/common.hpp"
#include "modconn/dataset.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace modconn {

struct GroundTruth {
    std::string regime;                 // "gaussian" or "directed"
    std::uint64_t seed = 0;
    Matrix W;                           // p×k, one positive entry per row, orthonormal columns
    MatrixList G;                       // latent covariance per class
    MatrixList B;                       // directed only: B(child, parent)
    std::vector<std::vector<int>> orders;  // directed only: causal order, 0-based latent indices
    std::vector<double> v;
};

struct SimulationOptions {
    double noise_variance = 1.0;
    double edge_probability = 0.5;
    double weight_min = 0.3;
    double weight_max = 0.9;
};

/// Deterministic child seed for stream `stream` of `master`.
[[nodiscard]] std::uint64_t substream_seed(std::uint64_t master, std::uint64_t stream);

/// Uniform(0,1) entries, row-wise max kept, columns normalized. Re-draws when a
/// module comes out empty; throws DataError after 100 attempts.
[[nodiscard]] Matrix gen_loading(Eigen::Index p, Eigen::Index k, std::uint64_t seed);

/// L Lᵀ with L lower triangular, N(0,1) entries.
[[nodiscard]] Matrix gen_latent_cov(Eigen::Index k, std::uint64_t seed);

/// Random strictly-lower-triangular (under a random order) weight matrix.
struct StructuralDraw {
    std::vector<int> order;
    Matrix B;
};
[[nodiscard]] StructuralDraw gen_structural(Eigen::Index k, std::uint64_t seed, const SimulationOptions& opts = {});

/// Samples n draws of Z = (I - B)⁻¹ e with unit-variance Logistic disturbances.
[[nodiscard]] Matrix sample_structural_latents(const StructuralDraw& s, Eigen::Index n, std::uint64_t seed);

/// Covariance of Z = (I - B)⁻¹ e for unit-variance disturbances.
[[nodiscard]] Matrix structural_covariance(const Matrix& B);

[[nodiscard]] std::pair<MultiClassDataset, GroundTruth>
gen_gaussian_dataset(Eigen::Index p, Eigen::Index k, std::size_t N, Eigen::Index n, std::uint64_t seed,
                     const SimulationOptions& opts = {});

[[nodiscard]] std::pair<MultiClassDataset, GroundTruth>
gen_directed_dataset(Eigen::Index p, Eigen::Index k, std::size_t N, Eigen::Index n, std::uint64_t seed,
                     const SimulationOptions& opts = {});

/// Adds isotropic Gaussian noise to Z Wᵀ.
[[nodiscard]] Matrix observe(const Matrix& Z, const Matrix& W, double noise_variance, std::uint64_t seed);

}  // namespace modconn

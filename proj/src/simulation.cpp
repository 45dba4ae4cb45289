#include "modconn/simulation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace modconn {

namespace {

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(rng);
    return m;
}

// Symmetric square root with negative eigenvalues clipped to zero.
Matrix psd_sqrt(const Matrix& S) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(S));
    const Vector d = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * d.asDiagonal() * eig.eigenvectors().transpose();
}

std::string describe(const char* regime, Eigen::Index p, Eigen::Index k, std::size_t N, Eigen::Index n) {
    return std::string(regime) + " p=" + std::to_string(p) + " k=" + std::to_string(k) +
           " N=" + std::to_string(N) + " n=" + std::to_string(n);
}

}  // namespace

std::uint64_t substream_seed(std::uint64_t master, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::array<std::uint32_t, 2> out{};
    seq.generate(out.begin(), out.end());
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

Matrix gen_loading(Eigen::Index p, Eigen::Index k, std::uint64_t seed) {
    if (k < 1 || k > p) throw DataError("gen_loading requires 1 ≤ k ≤ p");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int attempt = 0; attempt < 100; ++attempt) {
        Matrix U(p, k);
        for (Eigen::Index i = 0; i < p; ++i)
            for (Eigen::Index j = 0; j < k; ++j) U(i, j) = ud(rng);
        Matrix W = Matrix::Zero(p, k);
        for (Eigen::Index i = 0; i < p; ++i) {
            Eigen::Index arg = 0;
            U.row(i).maxCoeff(&arg);
            W(i, arg) = U(i, arg);
        }
        bool empty = false;
        for (Eigen::Index j = 0; j < k; ++j) {
            const double norm = W.col(j).norm();
            if (norm == 0.0) {
                empty = true;
                break;
            }
            W.col(j) /= norm;
        }
        if (!empty) return W;
    }
    throw DataError("gen_loading: could not draw a loading matrix without empty modules in 100 attempts");
}

Matrix gen_latent_cov(Eigen::Index k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Matrix L = normal_matrix(k, k, rng).triangularView<Eigen::Lower>();
    return symmetrize(L * L.transpose());
}

StructuralDraw gen_structural(Eigen::Index k, std::uint64_t seed, const SimulationOptions& opts) {
    std::mt19937_64 rng(seed);
    StructuralDraw s;
    s.order.resize(static_cast<std::size_t>(k));
    std::iota(s.order.begin(), s.order.end(), 0);
    std::shuffle(s.order.begin(), s.order.end(), rng);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    s.B = Matrix::Zero(k, k);
    for (Eigen::Index b = 1; b < k; ++b) {
        for (Eigen::Index a = 0; a < b; ++a) {
            if (ud(rng) >= opts.edge_probability) continue;
            const double magnitude = opts.weight_min + (opts.weight_max - opts.weight_min) * ud(rng);
            const double sign = ud(rng) < 0.5 ? -1.0 : 1.0;
            s.B(s.order[static_cast<std::size_t>(b)], s.order[static_cast<std::size_t>(a)]) = sign * magnitude;
        }
    }
    return s;
}

Matrix sample_structural_latents(const StructuralDraw& s, Eigen::Index n, std::uint64_t seed) {
    const auto k = s.B.rows();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    // Logistic(0, s) has variance s²π²/3.
    const double scale = std::sqrt(3.0) / std::numbers::pi;
    Matrix E(n, k);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < k; ++j) {
            double u = ud(rng);
            while (u <= 0.0) u = ud(rng);
            E(i, j) = scale * std::log(u / (1.0 - u));
        }
    // Z_j = Σ_r B_jr Z_r + e_j, filled in causal order.
    Matrix Z = E;
    for (const int j : s.order) {
        for (Eigen::Index r = 0; r < k; ++r) {
            if (s.B(j, r) != 0.0) Z.col(j) += s.B(j, r) * Z.col(r);
        }
    }
    return Z;
}

Matrix structural_covariance(const Matrix& B) {
    const auto k = B.rows();
    const Matrix inv = (Matrix::Identity(k, k) - B).inverse();
    return symmetrize(inv * inv.transpose());
}

Matrix observe(const Matrix& Z, const Matrix& W, double noise_variance, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Matrix X = Z * W.transpose();
    X += std::sqrt(noise_variance) * normal_matrix(X.rows(), X.cols(), rng);
    return X;
}

std::pair<MultiClassDataset, GroundTruth> gen_gaussian_dataset(Eigen::Index p, Eigen::Index k, std::size_t N,
                                                               Eigen::Index n, std::uint64_t seed,
                                                               const SimulationOptions& opts) {
    GroundTruth truth;
    truth.regime = "gaussian";
    truth.seed = seed;
    truth.W = gen_loading(p, k, substream_seed(seed, 0));
    MultiClassDataset ds;
    ds.variable_names = default_variable_names(p);
    ds.seed = seed;
    ds.generator = describe("gaussian", p, k, N, n);
    for (std::size_t i = 0; i < N; ++i) {
        const std::uint64_t cls_seed = substream_seed(seed, i + 1);
        Matrix G = gen_latent_cov(k, substream_seed(cls_seed, 0));
        std::mt19937_64 rng(substream_seed(cls_seed, 1));
        const Matrix Z = normal_matrix(n, k, rng) * psd_sqrt(G);
        ds.classes.push_back(observe(Z, truth.W, opts.noise_variance, substream_seed(cls_seed, 2)));
        truth.G.push_back(std::move(G));
        truth.v.push_back(opts.noise_variance);
    }
    return {std::move(ds), std::move(truth)};
}

std::pair<MultiClassDataset, GroundTruth> gen_directed_dataset(Eigen::Index p, Eigen::Index k, std::size_t N,
                                                               Eigen::Index n, std::uint64_t seed,
                                                               const SimulationOptions& opts) {
    GroundTruth truth;
    truth.regime = "directed";
    truth.seed = seed;
    truth.W = gen_loading(p, k, substream_seed(seed, 0));
    MultiClassDataset ds;
    ds.variable_names = default_variable_names(p);
    ds.seed = seed;
    ds.generator = describe("directed", p, k, N, n);
    for (std::size_t i = 0; i < N; ++i) {
        const std::uint64_t cls_seed = substream_seed(seed, i + 1);
        StructuralDraw s = gen_structural(k, substream_seed(cls_seed, 0), opts);
        const Matrix Z = sample_structural_latents(s, n, substream_seed(cls_seed, 1));
        ds.classes.push_back(observe(Z, truth.W, opts.noise_variance, substream_seed(cls_seed, 2)));
        truth.G.push_back(structural_covariance(s.B));
        truth.B.push_back(std::move(s.B));
        truth.orders.push_back(std::move(s.order));
        truth.v.push_back(opts.noise_variance);
    }
    return {std::move(ds), std::move(truth)};
}

}  // namespace modconn

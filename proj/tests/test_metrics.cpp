#include "doctest.h"
#include "test_support.hpp"

#include "modconn/baselines.hpp"
#include "modconn/metrics.hpp"
#include "modconn/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

using namespace modconn;
using namespace modconn::testing;

namespace {

std::vector<int> random_perm(int k, std::mt19937_64& rng) {
    std::vector<int> p(static_cast<std::size_t>(k));
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

double cost(const Matrix& W_hat, const Matrix& W_true, const std::vector<int>& perm) {
    return (permute_columns(W_hat, perm) - W_true).squaredNorm();
}

// ARI by pair counting over all pairs of items.
double ari_by_pairs(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size();
    double both = 0, in_a = 0, in_b = 0, pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const bool sa = a[i] == a[j], sb = b[i] == b[j];
            both += sa && sb;
            in_a += sa;
            in_b += sb;
            pairs += 1;
        }
    const double expected = in_a * in_b / pairs;
    return (both - expected) / (0.5 * (in_a + in_b) - expected);
}

}  // namespace

TEST_CASE("align_columns") {
    std::mt19937_64 rng(3);
    SUBCASE("recovers a known permutation") {
        const Matrix W = block_loading(20, 5, rng);
        const auto p0 = random_perm(5, rng);
        Matrix W_hat(20, 5);
        for (int j = 0; j < 5; ++j) W_hat.col(p0[static_cast<std::size_t>(j)]) = W.col(j);
        const auto perm = align_columns(W_hat, W);
        CHECK(perm == p0);
        CHECK(loading_mse(W_hat, W) == 0.0);
    }
    SUBCASE("matches exhaustive search over 120 permutations") {
        for (int trial = 0; trial < 200; ++trial) {
            const Matrix A = random_normal(12, 5, rng).cwiseAbs();
            const Matrix B = random_normal(12, 5, rng).cwiseAbs();
            const auto fast = align_columns(A, B);
            const auto brute = align_columns_exhaustive(A, B);
            CHECK(cost(A, B, fast) == doctest::Approx(cost(A, B, brute)).epsilon(1e-12));
        }
    }
    SUBCASE("k=6 against exhaustive") {
        for (int trial = 0; trial < 30; ++trial) {
            const Matrix A = random_normal(10, 6, rng);
            const Matrix B = random_normal(10, 6, rng);
            CHECK(cost(A, B, align_columns(A, B)) ==
                  doctest::Approx(cost(A, B, align_columns_exhaustive(A, B))).epsilon(1e-12));
        }
    }
    SUBCASE("identical columns tie") {
        Matrix A = Matrix::Constant(6, 3, 0.4);
        const Matrix B = random_normal(6, 3, rng);
        const auto perm = align_columns(A, B);
        CHECK(cost(A, B, perm) == doctest::Approx(cost(A, B, align_columns_exhaustive(A, B))));
        std::vector<int> sorted = perm;
        std::sort(sorted.begin(), sorted.end());
        CHECK(sorted == std::vector<int>{0, 1, 2});
    }
}

TEST_CASE("loading_mse") {
    std::mt19937_64 rng(5);
    const Matrix W = block_loading(30, 4, rng);
    CHECK(loading_mse(W, W) == 0.0);
    CHECK(loading_mse(Matrix::Zero(30, 4), W) == doctest::Approx(1.0 / 30.0).epsilon(1e-14));
    for (int t = 0; t < 20; ++t) {
        const Matrix A = random_normal(30, 4, rng).cwiseAbs();
        const double brute = cost(A, W, align_columns_exhaustive(A, W)) / (30.0 * 4.0);
        CHECK(loading_mse(A, W) == doctest::Approx(brute).epsilon(1e-12));
    }
}

TEST_CASE("latent_conn_mse") {
    std::mt19937_64 rng(6);
    const MatrixList G{random_spd(4, rng), random_spd(4, rng)};
    const std::vector<int> id{0, 1, 2, 3};
    for (double e : latent_conn_mse(G, G, id)) CHECK(e == 0.0);

    // Estimated W has columns permuted by p0; its G is congruently permuted.
    const auto p0 = random_perm(4, rng);
    MatrixList G_hat;
    for (const auto& g : G) {
        Matrix h(4, 4);
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) h(p0[static_cast<std::size_t>(a)], p0[static_cast<std::size_t>(b)]) = g(a, b);
        G_hat.push_back(h);
    }
    for (double e : latent_conn_mse(G_hat, G, p0)) CHECK(e == doctest::Approx(0.0));

    // Column permutation of (W_hat, G_hat) together leaves both MSEs unchanged.
    const Matrix W = block_loading(16, 4, rng);
    const Matrix W_noisy = (W + 0.05 * random_normal(16, 4, rng)).cwiseAbs();
    const MatrixList G_noisy{G[0] + 0.1 * Matrix::Identity(4, 4), G[1]};
    const auto perm = align_columns(W_noisy, W);
    const auto q = random_perm(4, rng);
    Matrix W_q(16, 4);
    MatrixList G_q;
    for (int j = 0; j < 4; ++j) W_q.col(q[static_cast<std::size_t>(j)]) = W_noisy.col(j);
    for (const auto& g : G_noisy) {
        Matrix h(4, 4);
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) h(q[static_cast<std::size_t>(a)], q[static_cast<std::size_t>(b)]) = g(a, b);
        G_q.push_back(h);
    }
    const auto perm_q = align_columns(W_q, W);
    CHECK(loading_mse(W_q, W) == doctest::Approx(loading_mse(W_noisy, W)).epsilon(1e-14));
    const auto e1 = latent_conn_mse(G_noisy, G, perm);
    const auto e2 = latent_conn_mse(G_q, G, perm_q);
    for (std::size_t i = 0; i < 2; ++i) CHECK(e1[i] == doctest::Approx(e2[i]).epsilon(1e-14));
}

TEST_CASE("module_labels and adjusted_rand") {
    Matrix W(4, 2);
    W << 0.7, 0, 0.7, 0, 0, 0.7, 0, 0;
    CHECK(module_labels(W) == std::vector<int>{0, 0, 1, 2});

    const std::vector<int> aabb{0, 0, 1, 1}, abab{0, 1, 0, 1};
    CHECK(adjusted_rand(aabb, aabb) == 1.0);
    CHECK(adjusted_rand(aabb, std::vector<int>{1, 1, 0, 0}) == 1.0);
    // Contingency table of ones: Σ C(n_ij,2) = 0; row and column sums are 2, so
    // Σ C(a,2) = Σ C(b,2) = 2; C(4,2) = 6; expected = 2·2/6; max = 2.
    // ARI = (0 - 2/3)/(2 - 2/3) = -1/2.
    CHECK(adjusted_rand(aabb, abab) == doctest::Approx(-0.5).epsilon(1e-14));

    std::mt19937_64 rng(7);
    std::uniform_int_distribution<int> lab(0, 3);
    for (int t = 0; t < 50; ++t) {
        std::vector<int> a(25), b(25);
        for (auto& x : a) x = lab(rng);
        for (auto& x : b) x = lab(rng);
        CHECK(adjusted_rand(a, b) == doctest::Approx(ari_by_pairs(a, b)).epsilon(1e-12));
        std::vector<int> renamed = a;
        for (auto& x : renamed) x = 3 - x;
        CHECK(adjusted_rand(a, renamed) == doctest::Approx(1.0));
    }
}

TEST_CASE("order_spearman") {
    CHECK(order_spearman({0, 1, 2, 3}, {0, 1, 2, 3}) == 1.0);
    CHECK(order_spearman({0, 1, 2, 3}, {3, 2, 1, 0}) == doctest::Approx(-1.0));
    CHECK(order_spearman({0, 1, 2}, {0, 2, 1}) == doctest::Approx(0.5));
    CHECK(order_spearman({0}, {0}) == 1.0);
}

TEST_CASE("relabel_order and standardize_structural") {
    // perm[j] = estimated latent matched to true latent j.
    const std::vector<int> perm{2, 0, 1};
    CHECK(relabel_order({2, 0, 1}, perm) == std::vector<int>{0, 1, 2});

    Matrix B = Matrix::Zero(2, 2);
    B(1, 0) = 0.8;
    const Matrix G = structural_covariance(B);
    const Matrix Bs = standardize_structural(B, G);
    // Standardized coefficient equals the correlation for a single edge.
    CHECK(Bs(1, 0) == doctest::Approx(0.8 / std::sqrt(1.64)));
}

TEST_CASE("heldout_nll_eval") {
    std::mt19937_64 rng(8);
    ModelParams m = random_params(6, 2, 1, rng, true);
    const Matrix S = model_covariance(m, 0);
    const Matrix L = Eigen::LLT<Matrix>(S).matrixL();
    const Eigen::Index n = 100000;
    const Matrix X = random_normal(n, 6, rng) * L.transpose();
    MultiClassDataset held;
    held.classes = {X};
    const double entropy =
        0.5 * (6.0 * std::log(2.0 * std::numbers::pi * std::numbers::e) + std::log(S.determinant()));
    const auto res = heldout_nll_eval(m, held);
    // Per-observation NLL has standard deviation sqrt(p/2); 5 standard errors.
    CHECK(std::abs(res.mean - entropy) <= 5.0 * std::sqrt(3.0 / n));
    CHECK(res.per_class[0] == doctest::Approx(dense_gaussian_nll(S, X)).epsilon(1e-10));

    ModelParams dup = m;
    dup.G.push_back(m.G[0]);
    dup.v.push_back(m.v[0]);
    held.classes.push_back(X);
    const auto two = heldout_nll_eval(dup, held);
    CHECK(two.per_class[0] == two.per_class[1]);
    CHECK(two.mean == two.per_class[0]);
}

TEST_CASE("comparison table") {
    auto [ds, truth] = gen_gaussian_dataset(10, 2, 2, 400, 5);
    const TailSplit split = tail_split(ds, 0.5);
    MultiClassDataset held = split.holdout;
    for (std::size_t i = 0; i < 2; ++i)
        held.classes[i] = center_columns(held.classes[i], column_means(split.train.classes[i]));
    EvalReport report;
    report.heldout_nll = heldout_nll_eval(ModelParams{truth.W, truth.G, truth.v}, held);
    baseline_nll(report, split.train, held);
    REQUIRE(report.sample_cov_nll);
    REQUIRE(report.ledoit_wolf_nll);
    CHECK(report.sample_cov_nll->per_class.size() == 2);
    // The true model beats both empirical estimates on fresh data.
    CHECK(report.heldout_nll->mean < report.ledoit_wolf_nll->mean);
    CHECK(report.heldout_nll->mean < report.sample_cov_nll->mean);
}

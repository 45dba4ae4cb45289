#include "modconn/estimation.hpp"

#include "modconn/kernels.hpp"
#include "modconn/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <random>

namespace modconn {

std::string to_string(Estimator e) { return e == Estimator::score_matching ? "sm" : "mle"; }

Estimator parse_estimator(const std::string& name) {
    if (name == "sm" || name == "score_matching") return Estimator::score_matching;
    if (name == "mle" || name == "ml") return Estimator::mle;
    throw DataError("unknown estimator '" + name + "' (expected sm or mle)");
}

std::string to_string(InitMethod m) { return m == InitMethod::spectral ? "spectral" : "random"; }

InitMethod parse_init(const std::string& name) {
    if (name == "spectral") return InitMethod::spectral;
    if (name == "random") return InitMethod::random;
    throw DataError("unknown init method '" + name + "' (expected spectral or random)");
}

void FitConfig::validate(Eigen::Index p) const {
    if (k < 1 || k > p) {
        throw DataError("k=" + std::to_string(k) + " must lie in [1, p=" + std::to_string(p) + "]");
    }
    if (!(rho0 > 0.0) || !(rho_max >= rho0)) throw DataError("penalty weights must satisfy 0 < rho0 ≤ rho_max");
    if (!(rho_growth > 1.0)) throw DataError("rho_growth must exceed 1");
    if (inner_max < 1 || outer_max < 1) throw DataError("iteration limits must be positive");
    if (!(grad_tol > 0.0) || !(ortho_tol > 0.0)) throw DataError("tolerances must be positive");
    if (!(armijo.c > 0.0 && armijo.c < 1.0) || !(armijo.backtrack > 0.0 && armijo.backtrack < 1.0) ||
        !(armijo.eta0 > 0.0) || armijo.max_backtracks < 1) {
        throw DataError("invalid Armijo parameters");
    }
}

Matrix initial_loading(Eigen::Index p, Eigen::Index k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Matrix W(p, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        for (Eigen::Index i = 0; i < p; ++i) W(i, j) = std::abs(nd(rng));
        W.col(j).normalize();
    }
    return W;
}

namespace {

std::vector<int> kmeans_rows(const Matrix& U, Eigen::Index k, std::mt19937_64& rng) {
    const auto p = U.rows();
    std::vector<int> best;
    double best_cost = std::numeric_limits<double>::infinity();
    for (int rep = 0; rep < 10; ++rep) {
        Matrix centers(k, U.cols());
        std::uniform_int_distribution<Eigen::Index> pick(0, p - 1);
        centers.row(0) = U.row(pick(rng));
        Vector d2(p);
        for (Eigen::Index c = 1; c < k; ++c) {
            for (Eigen::Index r = 0; r < p; ++r) {
                double m = std::numeric_limits<double>::infinity();
                for (Eigen::Index q = 0; q < c; ++q) m = std::min(m, (U.row(r) - centers.row(q)).squaredNorm());
                d2[r] = m;
            }
            // All rows coincide with existing centers: any row will do.
            if (!(d2.sum() > 0.0)) d2.setOnes();
            std::discrete_distribution<Eigen::Index> draw(d2.data(), d2.data() + p);
            centers.row(c) = U.row(draw(rng));
        }
        std::vector<int> labels(static_cast<std::size_t>(p), -1);
        for (int it = 0; it < 100; ++it) {
            bool changed = false;
            for (Eigen::Index r = 0; r < p; ++r) {
                Eigen::Index arg = 0;
                (centers.rowwise() - U.row(r)).rowwise().squaredNorm().minCoeff(&arg);
                if (labels[static_cast<std::size_t>(r)] != static_cast<int>(arg)) {
                    labels[static_cast<std::size_t>(r)] = static_cast<int>(arg);
                    changed = true;
                }
            }
            if (!changed) break;
            Matrix sums = Matrix::Zero(k, U.cols());
            Vector counts = Vector::Zero(k);
            for (Eigen::Index r = 0; r < p; ++r) {
                sums.row(labels[static_cast<std::size_t>(r)]) += U.row(r);
                counts[labels[static_cast<std::size_t>(r)]] += 1.0;
            }
            for (Eigen::Index c = 0; c < k; ++c)
                if (counts[c] > 0.0) centers.row(c) = sums.row(c) / counts[c];
        }
        double cost = 0.0;
        for (Eigen::Index r = 0; r < p; ++r) cost += (U.row(r) - centers.row(labels[static_cast<std::size_t>(r)])).squaredNorm();
        if (cost < best_cost) {
            best_cost = cost;
            best = labels;
        }
    }
    return best;
}

}  // namespace

Matrix spectral_loading(const SampleMoments& moments, Eigen::Index k, std::uint64_t seed) {
    const auto p = moments.dim();
    if (k < 1 || k > p) throw DataError("spectral_loading requires 1 ≤ k ≤ p");
    Matrix S = Matrix::Zero(p, p);
    for (const auto& K : moments.K) S += K;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(S));
    if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of pooled covariance failed");
    Matrix U = eig.eigenvectors().rightCols(k);
    for (Eigen::Index r = 0; r < p; ++r) {
        const double norm = U.row(r).norm();
        if (norm > 0.0) U.row(r) /= norm;
    }
    std::mt19937_64 rng(seed);
    const std::vector<int> labels = kmeans_rows(U, k, rng);
    Matrix W = Matrix::Constant(p, k, 0.01);
    for (Eigen::Index r = 0; r < p; ++r) W(r, labels[static_cast<std::size_t>(r)]) = 1.0;
    for (Eigen::Index c = 0; c < k; ++c) W.col(c).normalize();
    return W;
}

Matrix starting_loading(const SampleMoments& moments, const FitConfig& cfg) {
    return cfg.init == InitMethod::spectral ? spectral_loading(moments, cfg.k, cfg.seed)
                                            : initial_loading(moments.dim(), cfg.k, cfg.seed);
}

double estimator_objective(const ModelParams& params, const SampleMoments& moments, Estimator e) {
    return e == Estimator::score_matching ? score_matching_objective(params, moments)
                                          : ml_objective(params, moments);
}

namespace {

using Clock = std::chrono::steady_clock;

// Mutable state of one fit. Per-class products with K are cached for the
// current W and reused by the gradient after a line search accepts a step.
class FitState {
public:
    FitState(const SampleMoments& moments, const FitConfig& cfg, Matrix W0)
        : moments_(moments), cfg_(cfg), N_(moments.num_classes()), p_(moments.dim()) {
        params_.W = std::move(W0);
        trace_K_.resize(N_);
        for (std::size_t i = 0; i < N_; ++i) {
            trace_K_[i] = moments.K[i].trace();
            params_.G.push_back(Matrix::Identity(cfg.k, cfg.k));
            params_.v.push_back(std::max(kVarianceFloor, 0.1 * trace_K_[i] / static_cast<double>(p_)));
        }
        Lambda_ = Matrix::Zero(cfg.k, cfg.k);
        rho_ = cfg.rho0;
        prev_v_.assign(N_, 0.0);
        prev_gv_.assign(N_, 0.0);
        have_prev_v_.assign(N_, 0);
        set_W(params_.W);
        refresh_spectra();
    }

    const ModelParams& params() const { return params_; }
    double rho() const { return rho_; }

    // --- W subproblem ------------------------------------------------------

    double data_value() const { return data_value(C_, Q_); }

    double augmented_value() const { return data_value(C_, Q_) + penalty_value(Q_); }

    Matrix augmented_gradient() const {
        std::vector<Matrix> terms(N_);
        if (cfg_.estimator == Estimator::score_matching) {
            for_each_class(N_, Exec::parallel, [&](std::size_t i) {
                terms[i] = sm_class_grad_W(params_.W, KW_[i], C_[i], Q_, spectra_[i]);
            });
        } else {
            for_each_class(N_, Exec::parallel, [&](std::size_t i) {
                terms[i] = -2.0 * (ml_M(params_, moments_.K[i], i) * params_.W) * params_.G[i];
            });
        }
        Matrix g = Matrix::Zero(p_, cfg_.k);
        for (const auto& t : terms) g += t;
        const Matrix residual = Q_ - Matrix::Identity(cfg_.k, cfg_.k);
        g += 2.0 * rho_ * params_.W * residual + params_.W * (Lambda_ + Lambda_.transpose());
        return g;
    }

    /// One projected Armijo step on W; returns false if no step was accepted.
    bool step_W(const Matrix& grad, double f0) {
        double eta = initial_step(params_.W, grad);
        for (int b = 0; b < cfg_.armijo.max_backtracks; ++b, eta *= cfg_.armijo.backtrack) {
            trial_W_ = project_nonneg(params_.W - eta * grad);
            const double decrease = (grad.array() * (trial_W_ - params_.W).array()).sum();
            if (!(decrease < 0.0)) break;
            if ((trial_W_.colwise().squaredNorm().array() == 0.0).any()) continue;
            products(trial_W_, trial_Q_, trial_KW_, trial_C_);
            const double f = data_value(trial_C_, trial_Q_) + penalty_value(trial_Q_);
            if (std::isfinite(f) && f <= f0 + cfg_.armijo.c * decrease) {
                prev_W_ = params_.W;
                prev_grad_ = grad;
                std::swap(params_.W, trial_W_);
                std::swap(Q_, trial_Q_);
                std::swap(KW_, trial_KW_);
                std::swap(C_, trial_C_);
                return true;
            }
        }
        prev_W_.resize(0, 0);
        return false;
    }

    // --- G and v -------------------------------------------------------------

    bool update_G() {
        std::vector<char> clipped(N_, 0);
        if (cfg_.estimator == Estimator::score_matching) spectra_.resize(N_);
        for_each_class(N_, Exec::parallel, [&](std::size_t i) {
            Matrix raw = C_[i];
            raw.diagonal().array() -= params_.v[i];
            raw = symmetrize(raw);
            // One eigendecomposition serves both the projection and the spectrum.
            Eigen::SelfAdjointEigenSolver<Matrix> eig(raw);
            if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed in G update");
            const Vector& d = eig.eigenvalues();
            const bool clip = (d.array() < kPsdFloor).any();
            clipped[i] = clip ? 1 : 0;
            LatentSpectrum base;
            base.V = eig.eigenvectors();
            base.d = d.cwiseMax(kPsdFloor);
            params_.G[i] = clip ? symmetrize(base.V * base.d.asDiagonal() * base.V.transpose()) : raw;
            if (cfg_.estimator == Estimator::score_matching) spectra_[i] = latent_spectrum(base, params_.v[i]);
        });
        return std::any_of(clipped.begin(), clipped.end(), [](char c) { return c != 0; });
    }

    /// One projected Armijo step on each v_i; returns the projected-gradient norm before the step.
    double step_v() {
        std::vector<double> pg(N_, 0.0);
        for_each_class(N_, Exec::parallel, [&](std::size_t i) {
            const double v0 = params_.v[i];
            const bool sm = cfg_.estimator == Estimator::score_matching;
            std::optional<SmNoiseProfile> profile;
            if (sm) profile.emplace(C_[i], Q_, trace_K_[i], spectra_[i], p_);
            const auto value = [&](double v) {
                return sm ? profile->value(v) : ml_class_objective(C_[i], Q_, trace_K_[i], params_.G[i], v, p_);
            };
            const double g = sm ? profile->derivative(v0) : ml_class_grad_v(C_[i], Q_, trace_K_[i], params_.G[i], v0, p_);
            pg[i] = v0 - std::max(kVarianceFloor, v0 - g);
            if (g == 0.0) return;
            const double f0 = value(v0);
            // Secant estimate of the inverse curvature; the first step moves v by at most eta0·v.
            double eta = cfg_.armijo.eta0 * std::min(1.0, v0 / std::abs(g));
            const double dv = v0 - prev_v_[i], dg = g - prev_gv_[i];
            if (have_prev_v_[i] && dv * dg > 0.0) eta = dv / dg;
            for (int b = 0; b < cfg_.armijo.max_backtracks; ++b, eta *= cfg_.armijo.backtrack) {
                const double trial = std::max(kVarianceFloor, v0 - eta * g);
                if (trial == v0) break;
                double f = std::numeric_limits<double>::infinity();
                try {
                    f = value(trial);
                } catch (const NumericalError&) {
                }
                if (std::isfinite(f) && f <= f0 + cfg_.armijo.c * g * (trial - v0)) {
                    params_.v[i] = trial;
                    break;
                }
            }
            prev_v_[i] = v0;
            prev_gv_[i] = g;
            have_prev_v_[i] = 1;
            if (sm && params_.v[i] != v0) spectra_[i] = latent_spectrum(spectra_[i], params_.v[i]);
        });
        double s = 0.0;
        for (double x : pg) s += x * x;
        return std::sqrt(s);
    }

    // --- multipliers -----------------------------------------------------------

    void update_multipliers() {
        Lambda_ += rho_ * (Q_ - Matrix::Identity(cfg_.k, cfg_.k));
        rho_ = std::min(rho_ * cfg_.rho_growth, cfg_.rho_max);
    }

    double ortho_residual() const { return (Q_ - Matrix::Identity(cfg_.k, cfg_.k)).norm(); }

private:
    void set_W(const Matrix& W) {
        params_.W = W;
        products(W, Q_, KW_, C_);
    }

    void products(const Matrix& W, Matrix& Q, std::vector<Matrix>& KW, std::vector<Matrix>& C) const {
        Q = symmetrize(W.transpose().lazyProduct(W));
        KW.resize(N_);
        C.resize(N_);
        for_each_class(N_, Exec::parallel, [&](std::size_t i) {
            KW[i].noalias() = moments_.K[i] * W;
            C[i] = symmetrize(W.transpose().lazyProduct(KW[i]));
        });
    }

    double data_value(const std::vector<Matrix>& C, const Matrix& Q) const {
        const auto terms = map_classes<double>(N_, Exec::parallel, [&](std::size_t i) {
            return class_value(C[i], Q, i);
        });
        return ordered_sum(terms);
    }

    void refresh_spectra() {
        if (cfg_.estimator != Estimator::score_matching) return;
        spectra_.resize(N_);
        for_each_class(N_, Exec::parallel,
                       [&](std::size_t i) { spectra_[i] = latent_spectrum(params_.G[i], params_.v[i]); });
    }

    double class_value(const Matrix& C, const Matrix& Q, std::size_t i) const {
        if (cfg_.estimator == Estimator::score_matching) {
            return sm_class_objective(C, Q, trace_K_[i], spectra_[i], p_);
        }
        return ml_class_objective(C, Q, trace_K_[i], params_.G[i], params_.v[i], p_);
    }

    double initial_step(const Matrix& W, const Matrix& grad) const {
        const double gn = grad.norm();
        if (prev_W_.size() > 0) {
            const Matrix sdiff = W - prev_W_;
            const double sy = (sdiff.array() * (grad - prev_grad_).array()).sum();
            if (sy > 0.0) return sdiff.squaredNorm() / sy;
        }
        // First step moves W by at most eta0 times its own norm.
        return gn > 0.0 ? cfg_.armijo.eta0 * std::min(1.0, W.norm() / gn) : cfg_.armijo.eta0;
    }

    double penalty_value(const Matrix& Q) const {
        const Matrix residual = Q - Matrix::Identity(cfg_.k, cfg_.k);
        return 0.5 * rho_ * residual.squaredNorm() + (Lambda_.array() * residual.array()).sum();
    }

    const SampleMoments& moments_;
    const FitConfig& cfg_;
    std::size_t N_;
    Eigen::Index p_;
    ModelParams params_;
    std::vector<double> trace_K_;
    Matrix Q_;
    std::vector<Matrix> KW_;
    std::vector<Matrix> C_;
    std::vector<LatentSpectrum> spectra_;
    // Line-search buffers, swapped in when a trial is accepted.
    Matrix trial_W_;
    Matrix trial_Q_;
    std::vector<Matrix> trial_KW_;
    std::vector<Matrix> trial_C_;
    Matrix Lambda_;
    double rho_ = 1.0;
    // Previous accepted iterate and gradient, for secant (Barzilai-Borwein) trial steps.
    Matrix prev_W_;
    Matrix prev_grad_;
    std::vector<double> prev_v_;
    std::vector<double> prev_gv_;
    std::vector<char> have_prev_v_;
};

double projected_gradient_norm(const Matrix& W, const Matrix& grad) {
    return (W - project_nonneg(W - grad)).norm();
}

void check_moments(const SampleMoments& moments) {
    if (moments.num_classes() == 0) throw DataError("dataset has no classes");
    for (std::size_t i = 0; i < moments.num_classes(); ++i) {
        if (moments.K[i].rows() != moments.dim()) throw DataError("class " + std::to_string(i) + " has mismatched p");
        if (moments.n[i] < 2) throw DataError("class " + std::to_string(i) + " has fewer than 2 observations");
        if (!(moments.K[i].trace() > 1e-300)) {
            throw DataError("class " + std::to_string(i) + " has zero variance");
        }
    }
}

}  // namespace

FitResult fit_moments(const SampleMoments& moments, const FitConfig& cfg, const std::optional<Matrix>& init_W) {
    check_moments(moments);
    const auto p = moments.dim();
    cfg.validate(p);
    Matrix W0 = init_W ? *init_W : starting_loading(moments, cfg);
    if (W0.rows() != p || W0.cols() != cfg.k) throw DataError("initial loading matrix has the wrong shape");

    FitState state(moments, cfg, std::move(W0));
    FitDiagnostics diag;

    struct Candidate {
        ModelParams params;
        double residual = std::numeric_limits<double>::infinity();
        double objective = std::numeric_limits<double>::infinity();
    } best;

    for (int outer = 0; outer < cfg.outer_max; ++outer) {
        const auto t0 = Clock::now();
        double gnorm = std::numeric_limits<double>::infinity();
        int inner = 0;
        for (; inner < cfg.inner_max; ++inner) {
            const double f0 = state.augmented_value();
            const Matrix grad = state.augmented_gradient();
            const double gW = projected_gradient_norm(state.params().W, grad);
            const bool moved = state.step_W(grad, f0);
            if (cfg.record_steps && moved) diag.steps.push_back({'W', f0, state.augmented_value()});
            state.update_G();
            const double before_v = cfg.record_steps ? state.augmented_value() : 0.0;
            const double gv = state.step_v();
            if (cfg.record_steps) diag.steps.push_back({'v', before_v, state.augmented_value()});
            gnorm = std::hypot(gW, gv);
            if (gnorm <= cfg.grad_tol) {
                ++inner;
                break;
            }
        }
        const double residual = state.ortho_residual();
        const double objective = state.data_value();
        diag.objective.push_back(objective);
        diag.ortho_residual.push_back(residual);
        diag.grad_norm.push_back(gnorm);
        diag.inner_iterations.push_back(inner);
        diag.total_inner_iterations += inner;
        diag.iterations = outer + 1;

        const bool feasible = residual <= cfg.ortho_tol;
        const bool better = feasible ? (best.residual > cfg.ortho_tol || objective < best.objective)
                                     : (best.residual > cfg.ortho_tol && residual < best.residual);
        if (better) best = {state.params(), residual, objective};

        diag.wall_seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
        if (feasible && gnorm <= cfg.grad_tol) {
            diag.converged = true;
            best = {state.params(), residual, objective};
            break;
        }
        state.update_multipliers();
    }

    FitResult result;
    result.params = best.params;
    // Final G consistent with the returned W and v.
    for (std::size_t i = 0; i < moments.num_classes(); ++i) {
        bool clipped = false;
        result.params.G[i] = closed_form_G(result.params.W, moments.K[i], result.params.v[i], &clipped);
        diag.clipped = diag.clipped || clipped;
    }
    result.diagnostics = std::move(diag);
    return result;
}

FitResult fit_score_matching(const MultiClassDataset& ds, FitConfig cfg, const std::optional<Matrix>& init_W) {
    cfg.estimator = Estimator::score_matching;
    return fit_moments(compute_moments(ds), cfg, init_W);
}

FitResult fit_mle(const MultiClassDataset& ds, FitConfig cfg, const std::optional<Matrix>& init_W) {
    cfg.estimator = Estimator::mle;
    return fit_moments(compute_moments(ds), cfg, init_W);
}

FitResult fit(const MultiClassDataset& ds, const FitConfig& cfg, const std::optional<Matrix>& init_W) {
    return fit_moments(compute_moments(ds), cfg, init_W);
}

TuneResult tune_k(const MultiClassDataset& ds, const std::vector<Eigen::Index>& k_grid, const FitConfig& cfg,
                  double holdout_frac) {
    ds.validate();
    if (k_grid.empty()) throw DataError("k grid is empty");
    const auto p = ds.num_variables();
    for (const auto k : k_grid) {
        if (k < 1 || k > p) {
            throw DataError("k=" + std::to_string(k) + " in grid exceeds p=" + std::to_string(p));
        }
    }
    const TailSplit split = tail_split(ds, holdout_frac);
    const SampleMoments train_moments = compute_moments(split.train);
    MultiClassDataset heldout = split.holdout;
    for (std::size_t i = 0; i < ds.num_classes(); ++i) {
        heldout.classes[i] = center_columns(split.holdout.classes[i], column_means(split.train.classes[i]));
    }

    TuneResult result;
    result.table.resize(k_grid.size());
    // Grid points are independent; each fit keeps its own class loop serial-safe.
    for_each_class(k_grid.size(), Exec::parallel, [&](std::size_t g) {
        FitConfig c = cfg;
        c.k = k_grid[g];
        const FitResult fitted = fit_moments(train_moments, c);
        const NllSummary nll = heldout_nll_eval(fitted.params, heldout);
        result.table[g] = {c.k, nll.mean, nll.per_class, fitted.diagnostics.converged};
    });

    const double best_nll =
        std::min_element(result.table.begin(), result.table.end(),
                         [](const TuneEntry& a, const TuneEntry& b) { return a.mean_nll < b.mean_nll; })
            ->mean_nll;
    Eigen::Index best_k = std::numeric_limits<Eigen::Index>::max();
    for (const auto& e : result.table) {
        if (e.mean_nll <= best_nll + 1e-6) best_k = std::min(best_k, e.k);
    }
    result.best_k = best_k;
    return result;
}

}  // namespace modconn

#pragma once

// Modular latent covariance model Σ_i = W G_i Wᵀ + v_i I.
//
// W (p×k) is a shared non-negative loading matrix with orthonormal columns, so
// each observed variable belongs to at most one module. G_i is the latent
// covariance ("connectivity") of class i and v_i its isotropic noise variance.
//
// The score-matching objective -tr(Ω) + ½tr(Ω²K), with the Woodbury precision
// Ω = v⁻¹(I - W A Wᵀ), is evaluated through k×k quantities only,
//   J_i = -p/v + tr(AQ)/v + ½v⁻²tr(K) - v⁻²tr(AC) + ½v⁻²tr(AQAC),
// with Q = WᵀW, C = WᵀKW and A = G(G+vI)⁻¹, which costs O(p²k) per class.
// Q = I recovers the familiar orthonormal expansion.

#include "modconn/common.hpp"
#include "modconn/dataset.hpp"
#include "modconn/kernels.hpp"

#include <vector>

namespace modconn {

struct ModelParams {
    Matrix W;                // p×k loadings
    MatrixList G;            // N latent covariances, k×k
    std::vector<double> v;   // N noise variances

    [[nodiscard]] std::size_t num_classes() const { return G.size(); }
    [[nodiscard]] Eigen::Index p() const { return W.rows(); }
    [[nodiscard]] Eigen::Index k() const { return W.cols(); }

    /// Shape and positivity checks; throws DataError.
    void validate() const;
    void check_class(std::size_t cls) const;
};

/// Eigen-decomposition G = V diag(d) Vᵀ together with the spectral functions of
/// G needed at noise level v.
struct LatentSpectrum {
    Matrix V;
    Vector d;
    double v = 1.0;
    Matrix A;  ///< G(G+vI)⁻¹ = V diag(d/(d+v)) Vᵀ
    Matrix R;  ///< (G+vI)⁻¹

    /// ∂A/∂v = V diag(-d/(d+v)²) Vᵀ
    [[nodiscard]] Matrix dA_dv() const;
    /// ∂(A²)/∂v = V diag(-2d²/(d+v)³) Vᵀ
    [[nodiscard]] Matrix dAA_dv() const;
};

/// Throws NumericalError if G+vI is singular.
[[nodiscard]] LatentSpectrum latent_spectrum(const Matrix& G, double v);
/// Same G as `base` at a new noise level; reuses its eigendecomposition.
[[nodiscard]] LatentSpectrum latent_spectrum(const LatentSpectrum& base, double v);

/// Per-class intermediate quantities shared by the objective and its gradients.
struct ClassWorkspace {
    Matrix KW;        // p×k
    Matrix C;         // WᵀKW
    double trace_K = 0.0;
    LatentSpectrum spectrum;
    Matrix Dt;        // ∂A/∂v
    Matrix Dtt;       // ∂A²/∂v
    Matrix H1;        // 2A - vD̃ - AQA + ½v(D̃QA + AQD̃); Q = I gives 2A - vD̃ - A² + ½vD̃̃
    double H2 = 0.0;  // -v⁻²tr((A - vD̃)Q)
    Matrix M;         // ML path only: -Ω + ΩKΩ (p×p)
};

struct Workspace {
    Matrix Q;         // WᵀW
    std::vector<ClassWorkspace> classes;
    Matrix Lambda;    // k×k Lagrange multipliers
    double rho = 1.0; // penalty weight
};

/// Fills the score-matching workspace for the current parameters.
[[nodiscard]] Workspace make_workspace(const ModelParams& params, const SampleMoments& moments,
                                       Exec exec = Exec::parallel);
/// Adds the dense M matrices used by the ML gradient (O(p³) per class).
void add_ml_terms(Workspace& ws, const ModelParams& params, const SampleMoments& moments,
                  Exec exec = Exec::parallel);

[[nodiscard]] Matrix model_covariance(const ModelParams& params, std::size_t cls);
/// Woodbury form v⁻¹(I - W A Wᵀ); exact when W is orthonormal.
[[nodiscard]] Matrix model_precision(const ModelParams& params, std::size_t cls);

// --- score matching -------------------------------------------------------

/// One class term of the k×k-expanded objective.
[[nodiscard]] double sm_class_objective(const Matrix& C, const Matrix& Q, double trace_K,
                                        const LatentSpectrum& s, Eigen::Index p);
[[nodiscard]] double score_matching_objective(const ModelParams& params, const SampleMoments& moments,
                                              Exec exec = Exec::parallel);
/// Reference evaluation through explicit p×p precision matrices.
[[nodiscard]] double score_matching_objective_dense(const ModelParams& params,
                                                    const SampleMoments& moments);

[[nodiscard]] Matrix grad_W(const ModelParams& params, const SampleMoments& moments, const Workspace& ws,
                            Exec exec = Exec::parallel);
[[nodiscard]] MatrixList grad_G(const ModelParams& params, const SampleMoments& moments,
                                const Workspace& ws, Exec exec = Exec::parallel);
[[nodiscard]] std::vector<double> grad_v(const ModelParams& params, const SampleMoments& moments,
                                         const Workspace& ws, Exec exec = Exec::parallel);

/// ∂J_i/∂v_i for fixed W and G.
[[nodiscard]] double sm_class_grad_v(const Matrix& C, const Matrix& Q, double trace_K,
                                     const LatentSpectrum& s, Eigen::Index p);
/// One class's score-matching objective as a function of v alone, with W and
/// G fixed. Q and C are rotated into the eigenbasis of G once, after which the
/// value and derivative at any v cost O(k²).
class SmNoiseProfile {
public:
    SmNoiseProfile(const Matrix& C, const Matrix& Q, double trace_K, const LatentSpectrum& s, Eigen::Index p);
    [[nodiscard]] double value(double v) const;
    [[nodiscard]] double derivative(double v) const;

private:
    Vector d_;
    Matrix Qt_;  // VᵀQV
    Matrix Ct_;  // VᵀCV
    double trace_K_;
    double p_;
};

/// Score-matching gradient in W for one class, given KW and the spectrum of G.
[[nodiscard]] Matrix sm_class_grad_W(const Matrix& W, const Matrix& KW, const Matrix& C, const Matrix& Q,
                                     const LatentSpectrum& s);

// --- maximum likelihood -----------------------------------------------------
//
// L = Σ_i p log 2π + log det Σ_i + tr(Σ_i⁻¹ K_i), evaluated exactly for any W via
// B = G(vI + WᵀW G)⁻¹, Σ⁻¹ = v⁻¹(I - W B Wᵀ).

struct MlClassTerms {
    Matrix B;
    double log_det_sigma = 0.0;
};
[[nodiscard]] MlClassTerms ml_class_terms(const Matrix& Q, const Matrix& G, double v, Eigen::Index p);
[[nodiscard]] double ml_class_objective(const Matrix& C, const Matrix& Q, double trace_K,
                                        const Matrix& G, double v, Eigen::Index p);
[[nodiscard]] double ml_class_grad_v(const Matrix& C, const Matrix& Q, double trace_K,
                                     const Matrix& G, double v, Eigen::Index p);
[[nodiscard]] double ml_objective(const ModelParams& params, const SampleMoments& moments,
                                  Exec exec = Exec::parallel);
/// Dense M = -Σ⁻¹ + Σ⁻¹KΣ⁻¹ for one class.
[[nodiscard]] Matrix ml_M(const ModelParams& params, const Matrix& K, std::size_t cls);
/// Requires add_ml_terms on ws.
[[nodiscard]] Matrix ml_grad_W(const ModelParams& params, const Workspace& ws, Exec exec = Exec::parallel);
[[nodiscard]] MatrixList ml_grad_G(const ModelParams& params, const Workspace& ws);
[[nodiscard]] std::vector<double> ml_grad_v(const ModelParams& params, const SampleMoments& moments,
                                            Exec exec = Exec::parallel);

// --- updates and projections -----------------------------------------------

/// Clips eigenvalues below `floor`; returns the symmetric input untouched when
/// no clipping is needed.
[[nodiscard]] Matrix psd_project(const Matrix& M, double floor = kPsdFloor, bool* clipped = nullptr);

/// psd_project(WᵀKW - vI): stationary point of both objectives in G.
[[nodiscard]] Matrix closed_form_G(const Matrix& W, const Matrix& K, double v, bool* clipped = nullptr);

/// Elementwise max(0, ·).
[[nodiscard]] Matrix project_nonneg(const Matrix& W);

// --- likelihood ------------------------------------------------------------

/// log det Σ_i via the determinant lemma, O(pk² + k³).
[[nodiscard]] double log_det_covariance(const ModelParams& params, std::size_t cls);

/// ½ mean over rows of [p log 2π + log det Σ + xᵀΣ⁻¹x]; `data` must already be centered.
[[nodiscard]] double negative_log_likelihood(const ModelParams& params, const Matrix& data, std::size_t cls);

}  // namespace modconn

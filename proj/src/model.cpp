#include "modconn/model.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace modconn {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2π)

// tr(XY) for symmetric X, Y.
double trace_sym_product(const Matrix& X, const Matrix& Y) { return X.cwiseProduct(Y).sum(); }

Matrix spectral(const Matrix& V, const Vector& diag) {
    return V * diag.asDiagonal() * V.transpose();
}

}  // namespace

void ModelParams::validate() const {
    const auto n = G.size();
    if (n == 0) throw DataError("model has no classes");
    if (v.size() != n) throw DataError("model has " + std::to_string(n) + " latent covariances but " +
                                       std::to_string(v.size()) + " noise variances");
    if (W.cols() == 0 || W.rows() < W.cols()) throw DataError("loading matrix must be p×k with 1 ≤ k ≤ p");
    for (std::size_t i = 0; i < n; ++i) {
        if (G[i].rows() != W.cols() || G[i].cols() != W.cols()) {
            throw DataError("latent covariance " + std::to_string(i) + " is not k×k");
        }
        if (!(v[i] > 0.0)) throw DataError("noise variance of class " + std::to_string(i) + " must be positive");
    }
}

void ModelParams::check_class(std::size_t cls) const {
    if (cls >= G.size() || cls >= v.size()) {
        throw std::out_of_range("class index " + std::to_string(cls) + " out of range (N=" +
                                std::to_string(G.size()) + ")");
    }
}

Matrix LatentSpectrum::dA_dv() const {
    const Vector diag = d.binaryExpr(Vector::Constant(d.size(), v),
                                     [](double dj, double vv) { return -dj / ((dj + vv) * (dj + vv)); });
    return spectral(V, diag);
}

Matrix LatentSpectrum::dAA_dv() const {
    const Vector diag = d.binaryExpr(Vector::Constant(d.size(), v), [](double dj, double vv) {
        const double s = dj + vv;
        return -2.0 * dj * dj / (s * s * s);
    });
    return spectral(V, diag);
}

LatentSpectrum latent_spectrum(const Matrix& G, double v) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(G));
    if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of latent covariance failed");
    LatentSpectrum s;
    s.V = eig.eigenvectors();
    s.d = eig.eigenvalues();
    return latent_spectrum(s, v);
}

LatentSpectrum latent_spectrum(const LatentSpectrum& base, double v) {
    LatentSpectrum s;
    s.V = base.V;
    s.d = base.d;
    s.v = v;
    const Vector shifted = s.d.array() + v;
    const double scale = std::max(1.0, s.d.cwiseAbs().maxCoeff());
    if ((shifted.array().abs() <= 1e-14 * scale).any() || !shifted.allFinite()) {
        throw NumericalError("G + vI is singular");
    }
    s.A = spectral(s.V, s.d.cwiseQuotient(shifted));
    s.R = spectral(s.V, shifted.cwiseInverse());
    return s;
}

namespace {

Matrix h1_matrix(const Matrix& A, const Matrix& Dt, const Matrix& Q, double v) {
    const Matrix DQA = Dt * Q * A;
    return symmetrize(2.0 * A - v * Dt - A * Q * A + 0.5 * v * (DQA + DQA.transpose()));
}

double h2_scalar(const Matrix& A, const Matrix& Dt, const Matrix& Q, double v) {
    return -trace_sym_product(A - v * Dt, Q) / (v * v);
}

}  // namespace

Workspace make_workspace(const ModelParams& params, const SampleMoments& moments, Exec exec) {
    params.validate();
    if (moments.num_classes() != params.num_classes()) throw DataError("moments and model disagree on N");
    Workspace ws;
    ws.Q = symmetrize(params.W.transpose() * params.W);
    ws.classes.resize(params.num_classes());
    ws.Lambda = Matrix::Zero(params.k(), params.k());
    for_each_class(params.num_classes(), exec, [&](std::size_t i) {
        ClassWorkspace& c = ws.classes[i];
        const Matrix& K = moments.K[i];
        const double v = params.v[i];
        c.KW = K * params.W;
        c.C = symmetrize(params.W.transpose() * c.KW);
        c.trace_K = K.trace();
        c.spectrum = latent_spectrum(params.G[i], v);
        c.Dt = c.spectrum.dA_dv();
        c.Dtt = c.spectrum.dAA_dv();
        c.H1 = h1_matrix(c.spectrum.A, c.Dt, ws.Q, v);
        c.H2 = h2_scalar(c.spectrum.A, c.Dt, ws.Q, v);
    });
    return ws;
}

void add_ml_terms(Workspace& ws, const ModelParams& params, const SampleMoments& moments, Exec exec) {
    for_each_class(params.num_classes(), exec, [&](std::size_t i) {
        ws.classes[i].M = ml_M(params, moments.K[i], i);
    });
}

Matrix model_covariance(const ModelParams& params, std::size_t cls) {
    params.check_class(cls);
    Matrix S = params.W * params.G[cls] * params.W.transpose();
    S.diagonal().array() += params.v[cls];
    return symmetrize(S);
}

Matrix model_precision(const ModelParams& params, std::size_t cls) {
    params.check_class(cls);
    const double v = params.v[cls];
    if (!(v > 0.0)) throw NumericalError("noise variance must be positive");
    const LatentSpectrum s = latent_spectrum(params.G[cls], v);
    Matrix Omega = -params.W * s.A * params.W.transpose();
    Omega.diagonal().array() += 1.0;
    return symmetrize(Omega / v);
}

// --- score matching -------------------------------------------------------

double sm_class_objective(const Matrix& C, const Matrix& Q, double trace_K, const LatentSpectrum& s,
                          Eigen::Index p) {
    const double iv = 1.0 / s.v;
    const double iv2 = iv * iv;
    const Matrix& A = s.A;
    const Matrix AQA = A * Q * A;
    return -static_cast<double>(p) * iv + trace_sym_product(A, Q) * iv + 0.5 * iv2 * trace_K -
           iv2 * trace_sym_product(A, C) + 0.5 * iv2 * trace_sym_product(AQA, C);
}

double score_matching_objective(const ModelParams& params, const SampleMoments& moments, Exec exec) {
    params.validate();
    if (moments.num_classes() != params.num_classes()) throw DataError("moments and model disagree on N");
    const Matrix Q = symmetrize(params.W.transpose() * params.W);
    const auto terms = map_classes<double>(params.num_classes(), exec, [&](std::size_t i) {
        const Matrix& K = moments.K[i];
        const Matrix C = symmetrize(params.W.transpose() * K * params.W);
        return sm_class_objective(C, Q, K.trace(), latent_spectrum(params.G[i], params.v[i]), params.p());
    });
    return ordered_sum(terms);
}

double score_matching_objective_dense(const ModelParams& params, const SampleMoments& moments) {
    double total = 0.0;
    for (std::size_t i = 0; i < params.num_classes(); ++i) {
        const Matrix Omega = model_precision(params, i);
        total += -Omega.trace() + 0.5 * (Omega * Omega * moments.K[i]).trace();
    }
    return total;
}

SmNoiseProfile::SmNoiseProfile(const Matrix& C, const Matrix& Q, double trace_K, const LatentSpectrum& s,
                               Eigen::Index p)
    : d_(s.d), Qt_(s.V.transpose() * Q * s.V), Ct_(s.V.transpose() * C * s.V), trace_K_(trace_K),
      p_(static_cast<double>(p)) {}

double SmNoiseProfile::value(double v) const {
    const Eigen::Index k = d_.size();
    double aq = 0.0, ac = 0.0, aqac = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
        const double aj = d_[j] / (d_[j] + v);
        aq += aj * Qt_(j, j);
        ac += aj * Ct_(j, j);
        for (Eigen::Index l = 0; l < k; ++l) aqac += aj * (d_[l] / (d_[l] + v)) * Qt_(j, l) * Ct_(l, j);
    }
    const double iv = 1.0 / v;
    return -p_ * iv + aq * iv + 0.5 * iv * iv * trace_K_ - iv * iv * ac + 0.5 * iv * iv * aqac;
}

double SmNoiseProfile::derivative(double v) const {
    const Eigen::Index k = d_.size();
    double aq = 0.0, daq = 0.0, ac = 0.0, dac = 0.0, aqac = 0.0, daqac = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
        const double sj = d_[j] + v;
        const double aj = d_[j] / sj;
        const double dj = -d_[j] / (sj * sj);
        aq += aj * Qt_(j, j);
        daq += dj * Qt_(j, j);
        ac += aj * Ct_(j, j);
        dac += dj * Ct_(j, j);
        for (Eigen::Index l = 0; l < k; ++l) {
            const double sl = d_[l] + v;
            const double al = d_[l] / sl;
            const double dl = -d_[l] / (sl * sl);
            const double qc = Qt_(j, l) * Ct_(l, j);
            aqac += aj * al * qc;
            daqac += (dj * al + aj * dl) * qc;
        }
    }
    const double iv = 1.0 / v;
    const double iv2 = iv * iv;
    const double iv3 = iv2 * iv;
    return p_ * iv2 - aq * iv2 + daq * iv - trace_K_ * iv3 + 2.0 * iv3 * ac - iv2 * dac - iv3 * aqac +
           0.5 * iv2 * daqac;
}

Matrix sm_class_grad_W(const Matrix& W, const Matrix& KW, const Matrix& C, const Matrix& Q,
                       const LatentSpectrum& s) {
    // 2v⁻¹WA - 2v⁻²KWA + v⁻²W(ACA) + v⁻²KW(AQA)
    const double iv = 1.0 / s.v;
    const double iv2 = iv * iv;
    const Matrix& A = s.A;
    // Thin products with a k-sized inner dimension: coefficient-based beats gemm here.
    const Matrix left = 2.0 * iv * A + iv2 * (A * C * A);
    const Matrix right = iv2 * (A * Q * A - 2.0 * A);
    Matrix g = W.lazyProduct(left);
    g.noalias() += KW.lazyProduct(right);
    return g;
}

Matrix grad_W(const ModelParams& params, const SampleMoments& moments, const Workspace& ws, Exec exec) {
    (void)moments;
    // Per-class terms are independent; summed in class order.
    std::vector<Matrix> terms(params.num_classes());
    for_each_class(params.num_classes(), exec, [&](std::size_t i) {
        const ClassWorkspace& c = ws.classes[i];
        terms[i] = sm_class_grad_W(params.W, c.KW, c.C, ws.Q, c.spectrum);
    });
    Matrix g = Matrix::Zero(params.p(), params.k());
    for (const auto& t : terms) g += t;
    return g;
}

MatrixList grad_G(const ModelParams& params, const SampleMoments& moments, const Workspace& ws, Exec exec) {
    (void)moments;
    MatrixList out(params.num_classes());
    const Matrix& Q = ws.Q;
    for_each_class(params.num_classes(), exec, [&](std::size_t i) {
        const ClassWorkspace& c = ws.classes[i];
        const double v = params.v[i];
        const double iv = 1.0 / v;
        const Matrix& A = c.spectrum.A;
        // ∂J/∂A = v⁻¹Q - v⁻²C + ½v⁻²(QAC + CAQ), then dA = v R dG R.
        const Matrix QAC = Q * A * c.C;
        const Matrix S = iv * Q - (iv * iv) * c.C + 0.5 * (iv * iv) * (QAC + QAC.transpose());
        out[i] = symmetrize(v * c.spectrum.R * S * c.spectrum.R);
    });
    return out;
}

double sm_class_grad_v(const Matrix& C, const Matrix& Q, double trace_K, const LatentSpectrum& s,
                       Eigen::Index p) {
    const double v = s.v;
    const Matrix Dt = s.dA_dv();
    const Matrix H1 = h1_matrix(s.A, Dt, Q, v);
    const double H2 = h2_scalar(s.A, Dt, Q, v);
    const double iv3 = 1.0 / (v * v * v);
    return iv3 * (static_cast<double>(p) * v - trace_K) + iv3 * trace_sym_product(C, H1) + H2;
}

std::vector<double> grad_v(const ModelParams& params, const SampleMoments& moments, const Workspace& ws,
                           Exec exec) {
    (void)moments;
    const auto p = params.p();
    return map_classes<double>(params.num_classes(), exec, [&](std::size_t i) {
        const ClassWorkspace& c = ws.classes[i];
        const double v = params.v[i];
        const double iv3 = 1.0 / (v * v * v);
        return iv3 * (static_cast<double>(p) * v - c.trace_K) + iv3 * trace_sym_product(c.C, c.H1) + c.H2;
    });
}

// --- maximum likelihood -----------------------------------------------------

MlClassTerms ml_class_terms(const Matrix& Q, const Matrix& G, double v, Eigen::Index p) {
    const auto k = G.rows();
    Matrix T = Q * G;
    T.diagonal().array() += v;
    // det(vI + QG) = det(vI + GQ); B = G(vI + QG)⁻¹ = ((vI + GQ)⁻¹G)ᵀ.
    Eigen::PartialPivLU<Matrix> lu(T.transpose());
    const double det = lu.determinant();
    if (!(det > 0.0) || !std::isfinite(det)) throw NumericalError("vI + WᵀWG is not positive definite");
    MlClassTerms out;
    out.B = symmetrize(lu.solve(G).transpose());
    out.log_det_sigma = static_cast<double>(p - k) * std::log(v) + std::log(det);
    return out;
}

double ml_class_objective(const Matrix& C, const Matrix& Q, double trace_K, const Matrix& G, double v,
                          Eigen::Index p) {
    const MlClassTerms t = ml_class_terms(Q, G, v, p);
    const double trace_omega_K = (trace_K - trace_sym_product(t.B, C)) / v;
    return static_cast<double>(p) * kLog2Pi + t.log_det_sigma + trace_omega_K;
}

double ml_class_grad_v(const Matrix& C, const Matrix& Q, double trace_K, const Matrix& G, double v,
                       Eigen::Index p) {
    // ∂L/∂v = tr(Ω) - tr(Ω²K)
    const MlClassTerms t = ml_class_terms(Q, G, v, p);
    const Matrix& B = t.B;
    const double trace_omega = (static_cast<double>(p) - trace_sym_product(B, Q)) / v;
    const double trace_omega2_K =
        (trace_K - 2.0 * trace_sym_product(B, C) + (B * Q * B * C).trace()) / (v * v);
    return trace_omega - trace_omega2_K;
}

double ml_objective(const ModelParams& params, const SampleMoments& moments, Exec exec) {
    params.validate();
    const Matrix Q = params.W.transpose() * params.W;
    const auto terms = map_classes<double>(params.num_classes(), exec, [&](std::size_t i) {
        const Matrix& K = moments.K[i];
        const Matrix C = symmetrize(params.W.transpose() * K * params.W);
        return ml_class_objective(C, Q, K.trace(), params.G[i], params.v[i], params.p());
    });
    return ordered_sum(terms);
}

Matrix ml_M(const ModelParams& params, const Matrix& K, std::size_t cls) {
    params.check_class(cls);
    const Matrix& W = params.W;
    const double v = params.v[cls];
    const Matrix Q = W.transpose() * W;
    const MlClassTerms t = ml_class_terms(Q, params.G[cls], v, params.p());
    Matrix Omega = -(W * t.B * W.transpose());
    Omega.diagonal().array() += 1.0;
    Omega /= v;
    // Dense p×p products: this is the O(p³) step of the likelihood route.
    const Matrix OK = Omega * K;
    Matrix M = OK * Omega - Omega;
    return symmetrize(M);
}

Matrix ml_grad_W(const ModelParams& params, const Workspace& ws, Exec exec) {
    std::vector<Matrix> terms(params.num_classes());
    for_each_class(params.num_classes(), exec, [&](std::size_t i) {
        terms[i] = -2.0 * ws.classes[i].M * params.W * params.G[i];
    });
    Matrix g = Matrix::Zero(params.p(), params.k());
    for (const auto& t : terms) g += t;
    return g;
}

MatrixList ml_grad_G(const ModelParams& params, const Workspace& ws) {
    MatrixList out(params.num_classes());
    for (std::size_t i = 0; i < params.num_classes(); ++i) {
        out[i] = -symmetrize(params.W.transpose() * ws.classes[i].M * params.W);
    }
    return out;
}

std::vector<double> ml_grad_v(const ModelParams& params, const SampleMoments& moments, Exec exec) {
    const Matrix Q = params.W.transpose() * params.W;
    return map_classes<double>(params.num_classes(), exec, [&](std::size_t i) {
        const Matrix& K = moments.K[i];
        const Matrix C = symmetrize(params.W.transpose() * K * params.W);
        return ml_class_grad_v(C, Q, K.trace(), params.G[i], params.v[i], params.p());
    });
}

// --- updates and projections -----------------------------------------------

Matrix psd_project(const Matrix& M, double floor, bool* clipped) {
    const Matrix S = symmetrize(M);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
    if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed in PSD projection");
    const Vector& d = eig.eigenvalues();
    const bool needs_clip = (d.array() < floor).any();
    if (clipped != nullptr) *clipped = needs_clip;
    if (!needs_clip) return S;
    return spectral(eig.eigenvectors(), d.cwiseMax(floor));
}

Matrix closed_form_G(const Matrix& W, const Matrix& K, double v, bool* clipped) {
    Matrix raw = W.transpose() * K * W;
    raw.diagonal().array() -= v;
    return psd_project(raw, kPsdFloor, clipped);
}

Matrix project_nonneg(const Matrix& W) { return W.cwiseMax(0.0); }

// --- likelihood ------------------------------------------------------------

double log_det_covariance(const ModelParams& params, std::size_t cls) {
    params.check_class(cls);
    const Matrix Q = params.W.transpose() * params.W;
    return ml_class_terms(Q, params.G[cls], params.v[cls], params.p()).log_det_sigma;
}

double negative_log_likelihood(const ModelParams& params, const Matrix& data, std::size_t cls) {
    params.check_class(cls);
    if (data.cols() != params.p()) throw DataError("data has the wrong number of variables");
    if (data.rows() == 0) throw DataError("no observations to evaluate");
    const Matrix& W = params.W;
    const double v = params.v[cls];
    const Matrix Q = W.transpose() * W;
    const MlClassTerms t = ml_class_terms(Q, params.G[cls], v, params.p());
    const Matrix XW = data * W;
    const double quad = (data.squaredNorm() - trace_sym_product(t.B, XW.transpose() * XW)) / v;
    const double n = static_cast<double>(data.rows());
    const double nll = 0.5 * (static_cast<double>(params.p()) * kLog2Pi + t.log_det_sigma + quad / n);
    if (!std::isfinite(nll)) throw NumericalError("non-finite negative log-likelihood (degenerate covariance)");
    return nll;
}

}  // namespace modconn

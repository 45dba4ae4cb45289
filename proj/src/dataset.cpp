#include "modconn/dataset.hpp"

#include <cmath>
#include <string>

namespace modconn {

void MultiClassDataset::validate() const {
    if (classes.empty()) throw DataError("dataset has no classes");
    const auto p = classes.front().cols();
    if (p == 0) throw DataError("dataset has zero variables");
    for (std::size_t i = 0; i < classes.size(); ++i) {
        const Matrix& X = classes[i];
        if (X.cols() != p) {
            throw DataError("class " + std::to_string(i) + " has " + std::to_string(X.cols()) +
                            " variables, expected " + std::to_string(p));
        }
        if (!X.allFinite()) throw DataError("class " + std::to_string(i) + " contains non-finite values");
    }
    if (!variable_names.empty() && static_cast<Eigen::Index>(variable_names.size()) != p) {
        throw DataError("variable name count " + std::to_string(variable_names.size()) +
                        " does not match p=" + std::to_string(p));
    }
}

Vector column_means(const Matrix& X) {
    if (X.rows() == 0) return Vector::Zero(X.cols());
    return X.colwise().mean().transpose();
}

Matrix center_columns(const Matrix& X, const Vector& means) {
    return X.rowwise() - means.transpose();
}

SampleMoments compute_moments(const MultiClassDataset& ds) {
    ds.validate();
    SampleMoments m;
    m.K.resize(ds.num_classes());
    m.n.resize(ds.num_classes());
    for (std::size_t i = 0; i < ds.num_classes(); ++i) {
        const Matrix& X = ds.classes[i];
        if (X.rows() < 2) {
            throw DataError("class " + std::to_string(i) + " has fewer than 2 observations");
        }
        const Matrix Xc = center_columns(X, column_means(X));
        Matrix K(X.cols(), X.cols());
        K.setZero();
        K.selfadjointView<Eigen::Lower>().rankUpdate(Xc.transpose(), 1.0 / static_cast<double>(X.rows()));
        m.K[i] = K.selfadjointView<Eigen::Lower>();
        m.n[i] = X.rows();
    }
    return m;
}

TailSplit tail_split(const MultiClassDataset& ds, double holdout_frac) {
    if (!(holdout_frac > 0.0 && holdout_frac < 1.0)) {
        throw DataError("holdout fraction must lie in (0, 1)");
    }
    TailSplit out;
    out.train.variable_names = ds.variable_names;
    out.holdout.variable_names = ds.variable_names;
    out.train.seed = out.holdout.seed = ds.seed;
    out.train.generator = out.holdout.generator = ds.generator;
    for (std::size_t i = 0; i < ds.num_classes(); ++i) {
        const Matrix& X = ds.classes[i];
        const auto n = X.rows();
        const auto n_hold = static_cast<Eigen::Index>(std::llround(holdout_frac * static_cast<double>(n)));
        if (n_hold < 2 || n - n_hold < 2) {
            throw DataError("class " + std::to_string(i) + " with " + std::to_string(n) +
                            " rows is too small for a holdout fraction of " + std::to_string(holdout_frac));
        }
        out.train.classes.push_back(X.topRows(n - n_hold));
        out.holdout.classes.push_back(X.bottomRows(n_hold));
    }
    return out;
}

MultiClassDataset head_rows(const MultiClassDataset& ds, Eigen::Index n) {
    MultiClassDataset out = ds;
    for (std::size_t i = 0; i < out.classes.size(); ++i) {
        if (out.classes[i].rows() < n) {
            throw DataError("class " + std::to_string(i) + " has fewer than " + std::to_string(n) + " rows");
        }
        out.classes[i] = ds.classes[i].topRows(n);
    }
    return out;
}

std::vector<std::string> default_variable_names(Eigen::Index p) {
    std::vector<std::string> names;
    names.reserve(static_cast<std::size_t>(p));
    for (Eigen::Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
    return names;
}

}  // namespace modconn

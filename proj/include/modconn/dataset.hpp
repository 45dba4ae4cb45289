#pragma once

#include "modconn/common.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace modconn {

/// N observation matrices (n_i × p) over a shared set of p variables.
struct MultiClassDataset {
    std::vector<Matrix> classes;
    std::vector<std::string> variable_names;
    std::optional<std::uint64_t> seed;  // set for simulated data
    std::string generator;              // free-form provenance, empty if not simulated

    [[nodiscard]] std::size_t num_classes() const { return classes.size(); }
    [[nodiscard]] Eigen::Index num_variables() const {
        return classes.empty() ? 0 : classes.front().cols();
    }

    /// Throws DataError if classes disagree on p or contain non-finite values.
    void validate() const;
};

/// Per-class sample covariances K_i = X_iᵀX_i / n_i on column-centered data.
struct SampleMoments {
    std::vector<Matrix> K;
    std::vector<Eigen::Index> n;

    [[nodiscard]] std::size_t num_classes() const { return K.size(); }
    [[nodiscard]] Eigen::Index dim() const { return K.empty() ? 0 : K.front().rows(); }
};

[[nodiscard]] Vector column_means(const Matrix& X);
[[nodiscard]] Matrix center_columns(const Matrix& X, const Vector& means);

/// Sample moments with each class centered on its own column means.
[[nodiscard]] SampleMoments compute_moments(const MultiClassDataset& ds);

/// Train/holdout split of each class: the last `holdout` rows form the holdout part.
struct TailSplit {
    MultiClassDataset train;
    MultiClassDataset holdout;
};
[[nodiscard]] TailSplit tail_split(const MultiClassDataset& ds, double holdout_frac);

/// Keeps only the first `n` rows of every class (all classes must have at least n rows).
[[nodiscard]] MultiClassDataset head_rows(const MultiClassDataset& ds, Eigen::Index n);

/// Default variable names "x1".."xp".
[[nodiscard]] std::vector<std::string> default_variable_names(Eigen::Index p);

}  // namespace modconn

#pragma once

#include "pfvi/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pfvi {

struct UqfEstimate {
    double value = 0.0;
    std::string method;                 // "analytic" or "split_sample"
    std::vector<double> fold_values;
    Index eigvec_count = 0;
};

/// 1 / lambda_max(cov_pi * q_precision).
double uqf_analytic(const Matrix& cov_pi, const Matrix& q_precision);

/// Five-fold estimator from samples of pi (rows are draws). When `shuffle_seed` is
/// given the rows are permuted before the contiguous fold split.
UqfEstimate uqf_split_sample(const Matrix& pi_samples, const Matrix& q_precision, int folds = 5,
                             Index top = 50, std::optional<std::uint64_t> shuffle_seed = std::nullopt);

/// 1 - TV between binned Gaussian KDEs of two univariate samples.
double tv_accuracy(const Vector& a, const Vector& b);

/// Unbiased sample covariance of the rows of `samples`.
Matrix sample_covariance(const Matrix& samples);

}  // namespace pfvi

#pragma once

#include "pfvi/surrogate.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pfvi {

struct GibbsOptions {
    int iters = 20000;                    // retained iterations before thinning
    int burn_in = 1000;
    int thin = 1;
    std::uint64_t seed = 1;
    /// When set, sigma^2 and Sigma_k stay fixed and theta is drawn i.i.d.
    std::optional<double> fixed_sigma2;
    std::optional<std::vector<Matrix>> fixed_sigma;
    Index guard = kDefaultDenseGuard;
};

struct GibbsDraws {
    Matrix theta;                         // S x p, natural block order
    Vector sigma2;                        // S
    std::vector<std::vector<Matrix>> sigma_k;  // per factor, S matrices
    std::uint64_t seed = 0;
    int burn_in = 0;
    int thin = 1;
};

/// Blocked Gibbs sampler for the Gaussian model: theta jointly, then sigma^2, then each Sigma_k.
GibbsDraws gibbs_gaussian(const Problem& problem, const GibbsOptions& opts = {});

/// Unbiased covariance of the draws; constant columns are reported in `warnings`.
Matrix posterior_cov_estimate(const Matrix& draws, std::vector<std::string>* warnings = nullptr);

/// Draw from IW(df, scale) via the Bartlett decomposition.
template <class Engine>
Matrix sample_inverse_wishart(double df, const Matrix& scale, Engine& rng);

}  // namespace pfvi

#include "pfvi/detail/wishart.hpp"

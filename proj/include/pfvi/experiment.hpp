#pragma once

#include "pfvi/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace pfvi {

struct SimConfig {
    LikelihoodKind lik = LikelihoodKind::Gaussian;
    std::vector<Index> g_grid{32, 64, 128, 256};
    double missing_prob = 0.9;
    int replicates = 20;
    std::uint64_t seed = 1;
    double tol = 1e-6;
    int max_iter = 1000;
    int jobs = 1;
    /// Gibbs draws per Gaussian replicate for the split-sample UQF; 0 disables it.
    int gibbs_draws = 2000;
    int gibbs_burn_in = 500;
    /// Split-sample UQF only when 1 + G1 + G2 is at most this.
    Index split_max_params = 300;
    Index guard = 2000;

    /// G from 2^5 to 2^10 with 100 replicates.
    static SimConfig full_scale(LikelihoodKind lik);
    void validate() const;
};

struct GridRow {
    Index g = 0;
    std::string family;                // ff, pf, uf
    std::string partition;
    int replicates = 0;
    int failures = 0;
    double mean_n = 0.0;
    Index num_params = 0;
    double uqf_fixed_phi = 0.0;        // analytic at the converged q(phi); NaN when unavailable
    double uqf_split = 0.0;            // split-sample against Gibbs; NaN when not computed
    double time_per_iter = 0.0;        // seconds, mean over replicates
    double iterations = 0.0;
    double converged_fraction = 0.0;
};

struct GridResult {
    std::vector<GridRow> rows;
    std::vector<std::string> failures;
    double wall_seconds = 0.0;
};

/// Runs every (G, replicate) cell; each cell's seeds derive from (seed, G, replicate).
GridResult run_grid(const SimConfig& config);

std::string grid_csv(const GridResult& result);

}  // namespace pfvi

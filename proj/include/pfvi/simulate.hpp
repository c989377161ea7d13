#pragma once

#include "pfvi/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pfvi {

/// Two crossed factors; one observation per listed cell (0-based levels).
struct CrossedDesign {
    Index g1 = 0;
    Index g2 = 0;
    std::vector<std::pair<Index, Index>> cells;
    std::string generator;        // "mcar" or "biregular"
    std::string method;           // how the design was obtained
    std::uint64_t seed = 0;
    int attempts = 0;
    double missing_prob = 0.0;    // mcar only
    Index d1 = 0;                 // biregular only
    Index d2 = 0;

    Index n() const { return static_cast<Index>(cells.size()); }
};

CrossedDesign gen_crossed_mcar(Index g1, Index g2, double missing_prob, std::uint64_t seed);
CrossedDesign gen_biregular(Index n, Index d1, Index d2, std::uint64_t seed);

/// True when every level is observed and the bipartite level graph is connected.
bool design_connected(const CrossedDesign& design);

/// Intercept-only two-factor data with the given responses (trials all 1 if binomial).
MixedModelData design_to_data(const CrossedDesign& design, const Vector& y,
                              LikelihoodKind lik = LikelihoodKind::Gaussian);

struct SimOptions {
    double sigma = 1.0;                          // residual sd (Gaussian)
    double intercept = 0.0;
    /// Overrides the prior draw of the factor variances (test hook).
    std::optional<std::vector<double>> factor_variances;
};

struct SimulatedData {
    MixedModelData data;
    std::vector<double> factor_variances;
    std::vector<Vector> effects;
    double intercept = 0.0;
    double sigma = 1.0;
};

/// Variances from InverseGamma(1, 0.5), effects from their normals, then y.
SimulatedData simulate_responses(const CrossedDesign& design, LikelihoodKind lik, std::uint64_t seed,
                                 const SimOptions& opts = {});

}  // namespace pfvi

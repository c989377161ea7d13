#pragma once

#include "pfvi/model.hpp"

#include <cstdint>
#include <vector>

namespace pfvi {

/// pi(theta) = N(mu, Q^{-1}) split into blocks of the given sizes.
struct GaussianTarget {
    Vector mu;
    Matrix Q;
    std::vector<Index> block_sizes;

    void validate() const;
};

/// The U-marginal of a target in coordinates where each diagonal block of the
/// precision is the identity; z = L_k'(m_k - mu_k) with Q_U[kk] = L_k L_k'.
struct NormalizedTarget {
    Matrix q_tilde;
    std::vector<Index> blocks;           // indices of the U blocks in the original target
    std::vector<Index> offsets;          // offsets of the U blocks inside q_tilde
    std::vector<Index> sizes;
    std::vector<Matrix> chol;            // L_k per U block
    Vector mu_u;                         // exact mean of theta_U

    Index dim() const { return q_tilde.rows(); }
    Index num_blocks() const { return static_cast<Index>(blocks.size()); }
    /// lambda_min(q_tilde) = UQF of the mean-field optimum against pi(theta_U).
    double uqf() const;
    /// Unit eigenvector of q_tilde for its smallest eigenvalue.
    Vector min_eigenvector() const;
    Vector to_normalized(const Vector& m_u) const;
    Vector from_normalized(const Vector& z) const;
};

/// Collapses the blocks listed in `collapsed` exactly and normalises the rest.
NormalizedTarget normalize_target(const GaussianTarget& target, const std::vector<Index>& collapsed);

/// KL gap between the current mean-field iterate and the optimum: z' Q~ z / 2.
double v_gap(const NormalizedTarget& t, const Vector& z);

/// One mean-field block update in normalised coordinates.
void rs_update(const NormalizedTarget& t, Vector& z, Index block);

struct RsTrajectory {
    std::vector<double> gaps;           // after 0, 1, ..., T sweeps
    Vector final_z;
};

/// |U| * sweeps updates, each on a block drawn uniformly from U.
RsTrajectory rs_cavi(const NormalizedTarget& t, const Vector& z0, int sweeps, std::uint64_t seed);

struct DualityReport {
    double uqf = 0.0;
    Index num_uncollapsed = 0;
    std::vector<double> mean_gap;       // per sweep, averaged over runs
    std::vector<double> se_gap;
    std::vector<double> lower;          // gap0 (1 - uqf/|U|)^{2|U|t}
    std::vector<double> upper;          // gap0 (1 - uqf/|U|)^{|U|t}
    double fitted_rate = 0.0;           // slope of log mean gap per sweep
    double rate_lo = 0.0;
    double rate_hi = 0.0;
    bool rate_in_bracket = false;
    bool bracket_satisfied = false;
    Vector mean_final_z;
};

/// Runs rs_cavi from the minimal eigenvector and compares with the bracket (3 sigma slack).
DualityReport duality_check(const GaussianTarget& target, const std::vector<Index>& collapsed, int sweeps,
                            int runs, std::uint64_t seed);

}  // namespace pfvi

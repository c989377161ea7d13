#pragma once

#include "pfvi/surrogate.hpp"

#include <optional>
#include <vector>

namespace pfvi {

using SparseColMatrix = Eigen::SparseMatrix<double>;

/// Weighted level counts for random-intercept factors.
struct DesignCounts {
    Index n = 0;
    double d_bar = 1.0;                       // mean of D_ii^2
    std::vector<Vector> level_counts;         // per factor: n_g^{(k)}
    /// pair_counts[k][l] is the G_k x G_l matrix n_{g,h}^{(k,l)} (k != l; diagonal entries empty).
    std::vector<std::vector<SparseColMatrix>> pair_counts;

    Index num_factors() const { return static_cast<Index>(level_counts.size()); }
};

/// Counts weighted by D_ii^2 of the surrogate. Needs D_k = 1 for every factor.
DesignCounts weighted_counts(const GaussianSurrogate& s, const MixedModelData& data);
/// Same with unit weights.
DesignCounts weighted_counts(const MixedModelData& data);

bool is_balanced(const DesignCounts& counts, double tol = 1e-9);

/// Upper bound on the mean-field UQF; T holds the scalar T_k per factor.
double ff_bound(const DesignCounts& counts, const std::vector<double>& T, Index n);

/// Second largest eigenvalue of S_12 S_21 for factors (0, 1).
double lambda_aux(const DesignCounts& counts, Index guard = kDefaultDenseGuard);

struct PfBalanced {
    double uqf_exact = 0.0;
    double lambda_aux = 0.0;
};

/// Exact UQF of the partially factorised family with C = {0} on a balanced design.
PfBalanced pf_uqf_balanced(const DesignCounts& counts, const std::vector<double>& T, Index n,
                           Index guard = kDefaultDenseGuard);

/// Asymptotic lower bound on random biregular designs.
double rg_bound(Index n, Index g1, Index g2);

/// factor `inner` is nested in `outer`: each observed level of `inner` meets exactly one level of `outer`.
bool is_nested_in(const DesignCounts& counts, Index inner, Index outer);

struct BoundsReport {
    Index num_factors = 0;
    double ff_upper = 0.0;
    std::optional<double> pf_exact;
    std::optional<double> rg_lower;
    std::optional<double> lambda_aux;
    bool balanced = false;
    std::optional<double> laplacian_gap;
};

/// Evaluates every statement that applies to the model; T_k taken from the surrogate.
BoundsReport bounds_report(const GaussianSurrogate& s, const MixedModelData& data,
                           Index guard = kDefaultDenseGuard);

}  // namespace pfvi

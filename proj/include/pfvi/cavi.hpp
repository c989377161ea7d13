#pragma once

#include "pfvi/surrogate.hpp"

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <vector>

namespace pfvi {

/// Implicit Lambda_k = Lambda_k^0 + R' R for one uncollapsed block, where
/// Lambda_k^0 = (W_k'W_k + P_k)^{-1} and R = L^{-1} B_k Lambda_k^0 with
/// L L' = H_C - B_k Lambda_k^0 B_k' and B_k = W_C'W_k.
struct LambdaFactor {
    Index block = -1;
    Index levels = 0;
    Index dim = 0;
    std::vector<Matrix> lam0;            // G_k blocks of size D_k x D_k
    Matrix r;                            // p_C x p_k; empty when C is empty
    double logdet = 0.0;                 // log|Lambda_k|
    double logdet_lam0 = 0.0;
    std::uint64_t generation = 0;

    Index size() const { return levels * dim; }
    Vector apply(const Vector& a) const;
    Matrix apply(const Matrix& a) const;
    /// Diagonal D_k x D_k blocks of Lambda_k.
    std::vector<Matrix> diag_blocks() const;
};

/// q(theta_C | theta_U) = N(offset + sum_k A_k theta_k, H_C^{-1}).
struct CollapsedLaw {
    std::shared_ptr<const CollapsedSystem> system;
    Vector offset;                       // H_C^{-1} W_C' nu
    std::vector<Matrix> a;               // per block (empty unless k in U): -H_C^{-1} B_k
    std::vector<Matrix> b;               // per block: B_k = W_C'W_k
};

struct VariationalState {
    Partition part;
    PhiParams phi;
    std::shared_ptr<const GaussianSurrogate> surrogate;
    CollapsedLaw law;
    std::vector<Vector> mu;              // per block; only U blocks are populated
    std::vector<std::optional<LambdaFactor>> lambda;
    Vector eta_u;                        // sum_{k in U} Z_k mu_k
    std::uint64_t generation = 0;        // bumped whenever the surrogate changes
    std::vector<double> elbo_trace;
};

/// Moments of q(theta) needed by the phi updates, the ELBO and reports.
struct QMoments {
    Vector eta_mean;
    Vector eta_var;
    Vector theta_mean;                   // natural block order
    Vector theta_var;                    // marginal variances, natural order
    std::vector<Matrix> second_moment;   // per factor: sum_g E[alpha_g alpha_g']
    Matrix cov_c;                        // Cov_q(theta_C)
};

struct FitOptions {
    double tol = 1e-6;
    int max_iter = 1000;
    bool update_phi = true;
    /// When positive, convergence also needs max |change in E[theta]| < mean_tol.
    double mean_tol = 0.0;
    std::optional<PhiParams> initial_phi;
};

struct FitResult {
    VariationalState state;
    std::vector<double> elbo_trace;      // entry 0 is the initial state
    int iterations = 0;
    bool converged = false;
    std::vector<double> sweep_seconds;
};

/// Initial q(phi) as documented for the engine (depends on the data only).
PhiParams initial_phi(const Problem& problem);

VariationalState init_state(const Problem& problem, const Partition& part,
                            const std::optional<PhiParams>& phi0 = std::nullopt);

/// Rebuilds pi(theta) from the current q(phi) and refreshes q(theta_C | theta_U).
void refresh_surrogate(const Problem& problem, VariationalState& state);

/// Updates q(Sigma_k), then q(sigma^2) or q(omega).
void update_phi(const Problem& problem, VariationalState& state);

/// Updates mu_k and the implicit Lambda_k for an uncollapsed block k.
void update_random_block(const Problem& problem, VariationalState& state, Index k);

Vector apply_lambda(const VariationalState& state, Index k, const Vector& a);
std::vector<Matrix> extract_lambda_blocks(const VariationalState& state, Index k);
double lambda_logdet(const VariationalState& state, Index k);

QMoments q_moments(const Problem& problem, const VariationalState& state);
double elbo(const Problem& problem, const VariationalState& state);

FitResult fit(const Problem& problem, const Partition& part, const FitOptions& opts = {});

// Dense views of q(theta) (small problems only).
Vector q_mean(const Problem& problem, const VariationalState& state);
Matrix q_covariance(const Problem& problem, const VariationalState& state,
                    Index guard = kDefaultDenseGuard);
Matrix export_q_precision(const Problem& problem, const VariationalState& state,
                          Index guard = kDefaultDenseGuard);

}  // namespace pfvi

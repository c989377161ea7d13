#pragma once

#include "pfvi/model.hpp"

#include <Eigen/Cholesky>

#include <memory>
#include <string>
#include <vector>

namespace pfvi {

/// Split of the block indices {0..K} into collapsed C and uncollapsed U.
struct Partition {
    std::vector<Index> collapsed;
    std::vector<Index> uncollapsed;

    static Partition ff(Index K);          // C = {}
    static Partition pf_fixed(Index K);    // C = {0}
    static Partition uf(Index K);          // C = {0..K}
    /// Builds the complement of `collapsed` in {0..K}; checks ranges and duplicates.
    static Partition from_collapsed(std::vector<Index> collapsed, Index K);

    bool is_collapsed(Index k) const;
    std::string describe() const;  // e.g. "C={0,1} U={2}"
};

/// Parameters of the non-Gaussian factors q(Sigma_k), q(sigma^2), q(omega_i).
struct PhiParams {
    std::vector<double> iw_df;       // a_k
    std::vector<Matrix> iw_scale;    // Phi_k
    double ig_shape = 1.0;           // a_{sigma^2} (Gaussian)
    double ig_rate = 1.0;            // b_{sigma^2} (Gaussian)
    Vector pg_b;                     // b_i (binomial)
    Vector pg_c;                     // c_i (binomial)

    /// E[1/sigma^2]; 1 for the binomial model.
    double tau(LikelihoodKind lik) const;
    /// E[Sigma_k^{-1}] = a_k Phi_k^{-1}, k = 1..K (factor index k-1 internally).
    Matrix expected_sigma_inv(Index factor) const;

    /// q(phi) whose surrogate has E[1/sigma^2] = tau and T_k = penalties[k-1]
    /// (binomial: T_k = penalties, E[omega_i] from pg_c). Used for fixed-phi work.
    static PhiParams for_target(const Problem& problem, double tau, const std::vector<Matrix>& penalties,
                                const Vector& pg_c = Vector());

    void validate(const Problem& problem) const;
};

/// Polya-Gamma mean E[omega] for PG(b, c); the c -> 0 limit is b/4.
double pg_mean(double b, double c);

/// The Gaussian target pi(theta) for a fixed q(phi).
struct GaussianSurrogate {
    Vector nu;
    Vector d_diag;                        // D_ii
    std::vector<SparseRowMatrix> W;       // W_k = D Z_k, k = 0..K
    std::vector<Matrix> T;                // T_k, k = 0..K; T_0 is empty (P_0 = 0)
    std::shared_ptr<const BlockLayout> layout;

    Index n() const { return nu.size(); }
    Index num_blocks() const { return static_cast<Index>(W.size()); }
    /// Dense P_k = I_{G_k} kron T_k (zero for k = 0).
    Matrix penalty_dense(Index k) const;
};

GaussianSurrogate build_surrogate(const Problem& problem, const PhiParams& phi);

/// Factorisation of H_C = W_C'W_C + P_C shared by every uncollapsed block.
class CollapsedSystem {
public:
    CollapsedSystem(const GaussianSurrogate& s, const Partition& part);

    Index dim() const { return dim_; }
    bool empty() const { return dim_ == 0; }
    const std::vector<Index>& blocks() const { return blocks_; }
    /// Offset of collapsed block blocks()[j] inside the stacked theta_C.
    Index local_offset(std::size_t j) const { return offsets_[j]; }
    const SparseRowMatrix& wc() const { return wc_; }
    const Matrix& h() const { return h_; }
    const Eigen::LLT<Matrix>& llt() const { return llt_; }
    /// H_C^{-1}, formed once (cubic in dim()).
    const Matrix& h_inv() const { return h_inv_; }
    double logdet() const { return logdet_; }

    /// M_C v without forming M_C.
    Vector apply_projector(const Vector& v) const;
    Matrix solve(const Matrix& b) const { return llt_.solve(b); }

private:
    std::vector<Index> blocks_;
    std::vector<Index> offsets_;
    Index dim_ = 0;
    SparseRowMatrix wc_;
    Matrix h_;
    Eigen::LLT<Matrix> llt_;
    Matrix h_inv_;
    double logdet_ = 0.0;
};

Vector apply_projector(const GaussianSurrogate& s, const Partition& part, const Vector& v);

/// Default limit on the parameter count for dense oracle computations.
inline constexpr Index kDefaultDenseGuard = 2000;

void check_dense_guard(Index p, Index guard, const char* what);

/// Exact moments of pi(theta) split along a partition (dense; small problems only).
struct ExactMoments {
    Vector mean;          // full theta, natural block order
    Matrix cov;           // full theta
    Matrix precision;     // W'W + P
    Vector mean_u;        // stacked over U in partition order
    Matrix cov_u;         // (P_U + W_U'M_C W_U)^{-1}
    Matrix cond_cov;      // H_C^{-1}
    Matrix cond_map;      // A: E[theta_C | theta_U] = cond_offset + A theta_U
    Vector cond_offset;
};

ExactMoments exact_target_moments(const GaussianSurrogate& s, const Partition& part,
                                  Index guard = kDefaultDenseGuard);

/// Dense joint precision W'W + P in natural block order.
Matrix dense_target_precision(const GaussianSurrogate& s, Index guard = kDefaultDenseGuard);

/// Indices of theta (natural order) belonging to the given blocks, in block order.
std::vector<Index> block_indices(const BlockLayout& layout, const std::vector<Index>& blocks);

}  // namespace pfvi

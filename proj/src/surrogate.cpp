#include "pfvi/surrogate.hpp"

#include "pfvi/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace pfvi {

// ---------------------------------------------------------------------------
// Partition

Partition Partition::ff(Index K) { return from_collapsed({}, K); }
Partition Partition::pf_fixed(Index K) { return from_collapsed({0}, K); }

Partition Partition::uf(Index K) {
    std::vector<Index> all;
    for (Index k = 0; k <= K; ++k) all.push_back(k);
    return from_collapsed(all, K);
}

Partition Partition::from_collapsed(std::vector<Index> collapsed, Index K) {
    std::sort(collapsed.begin(), collapsed.end());
    if (std::adjacent_find(collapsed.begin(), collapsed.end()) != collapsed.end())
        fail(ErrorKind::Schema, "partition lists a block twice");
    for (Index k : collapsed)
        if (k < 0 || k > K)
            fail(ErrorKind::Schema, "partition block " + std::to_string(k) + " outside 0.." +
                                        std::to_string(K));
    Partition p;
    p.collapsed = collapsed;
    for (Index k = 0; k <= K; ++k)
        if (!std::binary_search(collapsed.begin(), collapsed.end(), k)) p.uncollapsed.push_back(k);
    return p;
}

bool Partition::is_collapsed(Index k) const {
    return std::find(collapsed.begin(), collapsed.end(), k) != collapsed.end();
}

std::string Partition::describe() const {
    std::ostringstream os;
    auto list = [&](const std::vector<Index>& v) {
        os << '{';
        for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
        os << '}';
    };
    os << "C=";
    list(collapsed);
    os << " U=";
    list(uncollapsed);
    return os.str();
}

// ---------------------------------------------------------------------------
// q(phi)

double PhiParams::tau(LikelihoodKind lik) const {
    return lik == LikelihoodKind::Gaussian ? ig_shape / ig_rate : 1.0;
}

Matrix PhiParams::expected_sigma_inv(Index factor) const {
    const auto f = static_cast<std::size_t>(factor);
    const Matrix& scale = iw_scale[f];
    return iw_df[f] * scale.llt().solve(Matrix::Identity(scale.rows(), scale.cols()));
}

double pg_mean(double b, double c) {
    c = std::abs(c);
    if (c < 1e-4) return b / 4.0 * (1.0 - c * c / 12.0);
    return b / (2.0 * c) * std::tanh(c / 2.0);
}

PhiParams PhiParams::for_target(const Problem& problem, double tau,
                                const std::vector<Matrix>& penalties, const Vector& pg_c) {
    const auto& data = *problem.data;
    if (static_cast<Index>(penalties.size()) != data.num_factors())
        fail(ErrorKind::Precondition, "for_target needs one penalty matrix per factor");
    if (!(tau > 0)) fail(ErrorKind::Domain, "tau must be positive");
    PhiParams phi;
    const bool gauss = problem.lik == LikelihoodKind::Gaussian;
    for (std::size_t f = 0; f < penalties.size(); ++f) {
        const Matrix& t = penalties[f];
        const double a = static_cast<double>(t.rows()) + 1.0;
        Matrix e_inv = gauss ? Matrix(t / tau) : t;
        phi.iw_df.push_back(a);
        phi.iw_scale.push_back(a * e_inv.llt().solve(Matrix::Identity(t.rows(), t.cols())));
    }
    phi.ig_shape = 1.0;
    phi.ig_rate = 1.0 / tau;
    if (!gauss) {
        phi.pg_b = data.trials.cast<double>();
        phi.pg_c = pg_c.size() ? pg_c : Vector::Zero(data.n());
    }
    return phi;
}

void PhiParams::validate(const Problem& problem) const {
    const auto& data = *problem.data;
    if (static_cast<Index>(iw_df.size()) != data.num_factors() ||
        static_cast<Index>(iw_scale.size()) != data.num_factors())
        fail(ErrorKind::Domain, "q(phi) must carry IW parameters for every factor");
    for (std::size_t f = 0; f < iw_df.size(); ++f) {
        const Index d = data.factors[f].effect_dim;
        if (!(iw_df[f] > static_cast<double>(d) - 1.0))
            fail(ErrorKind::Domain, "IW degrees of freedom too small for factor " + data.factors[f].name);
        if (iw_scale[f].rows() != d || iw_scale[f].cols() != d ||
            iw_scale[f].llt().info() != Eigen::Success)
            fail(ErrorKind::Domain, "IW scale not positive definite for factor " + data.factors[f].name);
    }
    if (problem.lik == LikelihoodKind::Gaussian) {
        if (!(ig_shape > 0) || !(ig_rate > 0))
            fail(ErrorKind::Domain, "inverse-gamma parameters must be positive");
    } else {
        if (pg_b.size() != data.n() || pg_c.size() != data.n())
            fail(ErrorKind::Domain, "Polya-Gamma parameters must have length n");
        if ((pg_b.array() <= 0).any() || (pg_c.array() < 0).any() || !pg_c.allFinite())
            fail(ErrorKind::Domain, "Polya-Gamma parameters need b_i > 0 and c_i >= 0");
    }
}

// ---------------------------------------------------------------------------
// Surrogate

Matrix GaussianSurrogate::penalty_dense(Index k) const {
    const Block& b = layout->block(k);
    Matrix p = Matrix::Zero(b.size(), b.size());
    if (k == 0) return p;
    for (Index g = 0; g < b.levels; ++g) p.block(g * b.dim, g * b.dim, b.dim, b.dim) = T[k];
    return p;
}

GaussianSurrogate build_surrogate(const Problem& problem, const PhiParams& phi) {
    phi.validate(problem);
    const auto& data = *problem.data;
    const Index n = data.n();
    GaussianSurrogate s;
    s.layout = problem.layout;
    Vector d_sq(n);
    if (problem.lik == LikelihoodKind::Gaussian) {
        const double tau = phi.tau(problem.lik);
        d_sq.setConstant(tau);
        s.nu = data.y * std::sqrt(tau);
    } else {
        s.nu.resize(n);
        for (Index i = 0; i < n; ++i) {
            d_sq(i) = pg_mean(phi.pg_b(i), phi.pg_c(i));
            s.nu(i) = (data.y(i) - 0.5 * data.trials(i)) / std::sqrt(d_sq(i));
        }
    }
    s.d_diag = d_sq.cwiseSqrt();
    const double tau = phi.tau(problem.lik);
    s.T.emplace_back();
    for (Index f = 0; f < data.num_factors(); ++f) s.T.push_back(tau * phi.expected_sigma_inv(f));
    for (const auto& z : problem.Z) s.W.push_back(s.d_diag.asDiagonal() * z);
    return s;
}

// ---------------------------------------------------------------------------
// Collapsed system

namespace {

SparseRowMatrix hstack(const std::vector<const SparseRowMatrix*>& parts, Index rows) {
    Index cols = 0;
    Index nnz = 0;
    for (auto* p : parts) {
        cols += p->cols();
        nnz += p->nonZeros();
    }
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(nnz));
    Index base = 0;
    for (auto* p : parts) {
        for (Index i = 0; i < p->outerSize(); ++i)
            for (SparseRowMatrix::InnerIterator it(*p, i); it; ++it)
                trips.emplace_back(it.row(), base + it.col(), it.value());
        base += p->cols();
    }
    SparseRowMatrix out(rows, cols);
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
}

}  // namespace

CollapsedSystem::CollapsedSystem(const GaussianSurrogate& s, const Partition& part)
    : blocks_(part.collapsed) {
    std::vector<const SparseRowMatrix*> parts;
    for (Index k : blocks_) {
        offsets_.push_back(dim_);
        dim_ += s.W[static_cast<std::size_t>(k)].cols();
        parts.push_back(&s.W[static_cast<std::size_t>(k)]);
    }
    if (dim_ == 0) return;
    wc_ = hstack(parts, s.n());
    SparseRowMatrix gram = SparseRowMatrix(wc_.transpose()) * wc_;
    h_ = Matrix(gram);
    for (std::size_t j = 0; j < blocks_.size(); ++j) {
        const Index k = blocks_[j];
        if (k == 0) continue;
        const Block& b = s.layout->block(k);
        for (Index g = 0; g < b.levels; ++g)
            h_.block(offsets_[j] + g * b.dim, offsets_[j] + g * b.dim, b.dim, b.dim) +=
                s.T[static_cast<std::size_t>(k)];
    }
    llt_.compute(h_);
    bool ok = llt_.info() == Eigen::Success;
    Vector ld;
    if (ok) {
        ld = Matrix(llt_.matrixL()).diagonal();
        ok = (ld.array() > 1e-300).all() && ld.allFinite() &&
             ld.minCoeff() > 1e-10 * std::max(1.0, ld.maxCoeff());
    }
    if (!ok) {
        std::string who;
        for (std::size_t j = 0; j < blocks_.size(); ++j) {
            const Index sz = (j + 1 < blocks_.size() ? offsets_[j + 1] : dim_) - offsets_[j];
            Eigen::LDLT<Matrix> sub(h_.block(offsets_[j], offsets_[j], sz, sz));
            if (sub.info() != Eigen::Success || !sub.isPositive() ||
                sub.vectorD().minCoeff() <= 1e-12 * std::max(1.0, sub.vectorD().maxCoeff()))
                who += (who.empty() ? "" : ", ") + s.layout->block(blocks_[j]).name;
        }
        if (who.empty()) who = "the joint collapsed system";
        fail(ErrorKind::Singular, "W_C'W_C + P_C is singular; offending block(s): " + who);
    }
    logdet_ = 2.0 * ld.array().log().sum();
    h_inv_ = llt_.solve(Matrix::Identity(dim_, dim_));
}

Vector CollapsedSystem::apply_projector(const Vector& v) const {
    if (empty()) return v;
    Vector t = wc_.transpose() * v;
    return v - wc_ * llt_.solve(t);
}

Vector apply_projector(const GaussianSurrogate& s, const Partition& part, const Vector& v) {
    return CollapsedSystem(s, part).apply_projector(v);
}

// ---------------------------------------------------------------------------
// Dense oracles

void check_dense_guard(Index p, Index guard, const char* what) {
    if (p > guard)
        fail(ErrorKind::DimensionGuard, std::string(what) + ": " + std::to_string(p) +
                                            " parameters exceed the dense guard of " +
                                            std::to_string(guard));
}

std::vector<Index> block_indices(const BlockLayout& layout, const std::vector<Index>& blocks) {
    std::vector<Index> idx;
    for (Index k : blocks)
        for (Index j = 0; j < layout.block(k).size(); ++j) idx.push_back(layout.offset(k) + j);
    return idx;
}

Matrix dense_target_precision(const GaussianSurrogate& s, Index guard) {
    const Index p = s.layout->num_params();
    check_dense_guard(p, guard, "dense target precision");
    std::vector<const SparseRowMatrix*> parts;
    for (const auto& w : s.W) parts.push_back(&w);
    SparseRowMatrix w = hstack(parts, s.n());
    Matrix q = Matrix(SparseRowMatrix(w.transpose()) * w);
    for (Index k = 1; k < s.num_blocks(); ++k) {
        const Index o = s.layout->offset(k);
        const Index sz = s.layout->block(k).size();
        q.block(o, o, sz, sz) += s.penalty_dense(k);
    }
    return q;
}

ExactMoments exact_target_moments(const GaussianSurrogate& s, const Partition& part, Index guard) {
    ExactMoments m;
    m.precision = dense_target_precision(s, guard);
    const Index p = m.precision.rows();
    Eigen::LLT<Matrix> llt(m.precision);
    if (llt.info() != Eigen::Success)
        fail(ErrorKind::Singular, "target precision W'W + P is not positive definite");
    std::vector<const SparseRowMatrix*> parts;
    for (const auto& w : s.W) parts.push_back(&w);
    SparseRowMatrix w = hstack(parts, s.n());
    m.mean = llt.solve(Vector(w.transpose() * s.nu));
    m.cov = llt.solve(Matrix::Identity(p, p));

    const auto ic = block_indices(*s.layout, part.collapsed);
    const auto iu = block_indices(*s.layout, part.uncollapsed);
    const auto pc = static_cast<Index>(ic.size());
    const auto pu = static_cast<Index>(iu.size());
    Vector wtn = w.transpose() * s.nu;
    Matrix q_uu = m.precision(iu, iu);
    Vector rhs_u = wtn(iu);
    if (pc > 0) {
        Matrix qcc = m.precision(ic, ic);
        Eigen::LLT<Matrix> lc(qcc);
        if (lc.info() != Eigen::Success)
            fail(ErrorKind::Singular, "collapsed block W_C'W_C + P_C is singular");
        m.cond_cov = lc.solve(Matrix::Identity(pc, pc));
        m.cond_offset = lc.solve(Vector(wtn(ic)));
        if (pu > 0) {
            Matrix q_cu = m.precision(ic, iu);
            m.cond_map = -lc.solve(q_cu);
            // P_U + W_U' M_C W_U and W_U' M_C nu
            q_uu += q_cu.transpose() * m.cond_map;
            rhs_u -= q_cu.transpose() * m.cond_offset;
        } else {
            m.cond_map = Matrix(pc, 0);
        }
    }
    if (pu > 0) {
        Eigen::LLT<Matrix> lu(q_uu);
        if (lu.info() != Eigen::Success)
            fail(ErrorKind::Singular, "P_U + W_U'M_C W_U is not positive definite");
        m.cov_u = lu.solve(Matrix::Identity(pu, pu));
        m.mean_u = m.cov_u * rhs_u;
    }
    return m;
}

}  // namespace pfvi

#include "pfvi/random_scan.hpp"

#include "pfvi/error.hpp"
#include "pfvi/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pfvi {

void GaussianTarget::validate() const {
    const Index p = Q.rows();
    if (Q.cols() != p || mu.size() != p) fail(ErrorKind::Domain, "target dimensions disagree");
    if (std::accumulate(block_sizes.begin(), block_sizes.end(), Index{0}) != p)
        fail(ErrorKind::Domain, "block sizes do not sum to the dimension");
    for (Index s : block_sizes)
        if (s < 1) fail(ErrorKind::Domain, "block sizes must be positive");
    if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + Q.cwiseAbs().maxCoeff()))
        fail(ErrorKind::Domain, "target precision is not symmetric");
    if (Eigen::LLT<Matrix>(Q).info() != Eigen::Success)
        fail(ErrorKind::Domain, "target precision is not positive definite");
}

NormalizedTarget normalize_target(const GaussianTarget& target, const std::vector<Index>& collapsed) {
    target.validate();
    const auto nb = static_cast<Index>(target.block_sizes.size());
    std::vector<Index> start(static_cast<std::size_t>(nb), 0);
    for (Index k = 1; k < nb; ++k)
        start[static_cast<std::size_t>(k)] = start[static_cast<std::size_t>(k - 1)] + target.block_sizes[static_cast<std::size_t>(k - 1)];
    std::vector<Index> ic, iu;
    NormalizedTarget t;
    for (Index k = 0; k < nb; ++k) {
        const bool c = std::find(collapsed.begin(), collapsed.end(), k) != collapsed.end();
        auto& dst = c ? ic : iu;
        for (Index j = 0; j < target.block_sizes[static_cast<std::size_t>(k)]; ++j)
            dst.push_back(start[static_cast<std::size_t>(k)] + j);
        if (!c) {
            t.blocks.push_back(k);
            t.sizes.push_back(target.block_sizes[static_cast<std::size_t>(k)]);
        }
    }
    for (Index k : collapsed)
        if (k < 0 || k >= nb) fail(ErrorKind::Schema, "collapsed block out of range");
    if (t.blocks.empty()) fail(ErrorKind::Precondition, "random-scan CAVI needs a nonempty U");

    Matrix qu = target.Q(iu, iu);
    if (!ic.empty()) {
        Eigen::LLT<Matrix> lc(Matrix(target.Q(ic, ic)));
        qu -= target.Q(iu, ic) * lc.solve(Matrix(target.Q(ic, iu)));
    }
    t.mu_u = target.mu(iu);
    Index off = 0;
    for (Index s : t.sizes) {
        t.offsets.push_back(off);
        Eigen::LLT<Matrix> l(Matrix(qu.block(off, off, s, s)));
        t.chol.push_back(l.matrixL());
        off += s;
    }
    t.q_tilde = qu;
    for (std::size_t a = 0; a < t.sizes.size(); ++a)
        for (std::size_t b = 0; b < t.sizes.size(); ++b) {
            auto blk = t.q_tilde.block(t.offsets[a], t.offsets[b], t.sizes[a], t.sizes[b]);
            Matrix m = t.chol[a].triangularView<Eigen::Lower>().solve(Matrix(blk));
            m = t.chol[b].triangularView<Eigen::Lower>().solve(Matrix(m.transpose())).transpose();
            blk = m;
        }
    t.q_tilde = 0.5 * (t.q_tilde + t.q_tilde.transpose());
    return t;
}

double NormalizedTarget::uqf() const {
    Eigen::SelfAdjointEigenSolver<Matrix> es(q_tilde, Eigen::EigenvaluesOnly);
    return es.eigenvalues()(0);
}

Vector NormalizedTarget::min_eigenvector() const {
    Eigen::SelfAdjointEigenSolver<Matrix> es(q_tilde);
    return es.eigenvectors().col(0);
}

Vector NormalizedTarget::to_normalized(const Vector& m_u) const {
    Vector z(dim());
    for (std::size_t a = 0; a < sizes.size(); ++a)
        z.segment(offsets[a], sizes[a]) =
            chol[a].transpose() * (m_u.segment(offsets[a], sizes[a]) - mu_u.segment(offsets[a], sizes[a]));
    return z;
}

Vector NormalizedTarget::from_normalized(const Vector& z) const {
    Vector m(dim());
    for (std::size_t a = 0; a < sizes.size(); ++a)
        m.segment(offsets[a], sizes[a]) =
            mu_u.segment(offsets[a], sizes[a]) +
            chol[a].transpose().triangularView<Eigen::Upper>().solve(Vector(z.segment(offsets[a], sizes[a])));
    return m;
}

double v_gap(const NormalizedTarget& t, const Vector& z) { return 0.5 * z.dot(t.q_tilde * z); }

void rs_update(const NormalizedTarget& t, Vector& z, Index block) {
    const auto b = static_cast<std::size_t>(block);
    const Index o = t.offsets[b];
    const Index s = t.sizes[b];
    z.segment(o, s).setZero();
    // the diagonal block of q_tilde is the identity, so the update is minus the off-diagonal pull
    z.segment(o, s) = -(t.q_tilde.middleRows(o, s) * z);
}

RsTrajectory rs_cavi(const NormalizedTarget& t, const Vector& z0, int sweeps, std::uint64_t seed) {
    if (z0.size() != t.dim()) fail(ErrorKind::Domain, "rs_cavi: start has wrong dimension");
    Rng rng(seed);
    std::uniform_int_distribution<Index> pick(0, t.num_blocks() - 1);
    RsTrajectory tr;
    Vector z = z0;
    tr.gaps.push_back(v_gap(t, z));
    for (int s = 0; s < sweeps; ++s) {
        for (Index u = 0; u < t.num_blocks(); ++u) rs_update(t, z, pick(rng));
        tr.gaps.push_back(v_gap(t, z));
    }
    tr.final_z = z;
    return tr;
}

DualityReport duality_check(const GaussianTarget& target, const std::vector<Index>& collapsed, int sweeps,
                            int runs, std::uint64_t seed) {
    if (runs < 2) fail(ErrorKind::SampleSize, "duality_check needs at least 2 runs");
    NormalizedTarget t = normalize_target(target, collapsed);
    DualityReport rep;
    rep.uqf = t.uqf();
    rep.num_uncollapsed = t.num_blocks();
    const Vector z0 = t.min_eigenvector();
    const auto T = static_cast<std::size_t>(sweeps) + 1;
    std::vector<double> sum(T, 0.0), sumsq(T, 0.0);
    rep.mean_final_z = Vector::Zero(t.dim());
    for (int r = 0; r < runs; ++r) {
        RsTrajectory tr = rs_cavi(t, z0, sweeps, derive_seed(seed, {static_cast<std::uint64_t>(r)}));
        for (std::size_t i = 0; i < T; ++i) {
            sum[i] += tr.gaps[i];
            sumsq[i] += tr.gaps[i] * tr.gaps[i];
        }
        rep.mean_final_z += tr.final_z;
    }
    rep.mean_final_z /= static_cast<double>(runs);
    const double u = static_cast<double>(rep.num_uncollapsed);
    const double base = std::max(0.0, 1.0 - rep.uqf / u);
    const double gap0 = v_gap(t, z0);
    rep.bracket_satisfied = true;
    for (std::size_t i = 0; i < T; ++i) {
        const double mean = sum[i] / runs;
        const double var = std::max(0.0, (sumsq[i] - runs * mean * mean) / (runs - 1));
        const double se = std::sqrt(var / runs);
        const double tt = static_cast<double>(i);
        rep.mean_gap.push_back(mean);
        rep.se_gap.push_back(se);
        rep.lower.push_back(gap0 * std::pow(base, 2.0 * u * tt));
        rep.upper.push_back(gap0 * std::pow(base, u * tt));
        const double slack = 3.0 * se + 1e-12 * gap0;
        if (mean < rep.lower.back() - slack || mean > rep.upper.back() + slack) rep.bracket_satisfied = false;
    }
    rep.rate_lo = 2.0 * u * std::log(base);
    rep.rate_hi = u * std::log(base);
    // least-squares slope of log mean gap against sweep index
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int m = 0;
    for (std::size_t i = 0; i < T; ++i) {
        if (!(rep.mean_gap[i] > 1e-300)) break;
        const double x = static_cast<double>(i);
        const double y = std::log(rep.mean_gap[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++m;
    }
    if (m >= 2) {
        rep.fitted_rate = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        rep.rate_in_bracket = rep.fitted_rate >= rep.rate_lo - 1e-9 && rep.fitted_rate <= rep.rate_hi + 1e-9;
    } else {
        rep.fitted_rate = -std::numeric_limits<double>::infinity();
        rep.rate_in_bracket = true;
    }
    return rep;
}

}  // namespace pfvi

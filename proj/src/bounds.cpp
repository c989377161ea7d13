#include "pfvi/bounds.hpp"

#include "pfvi/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace pfvi {

namespace {

DesignCounts counts_from_weights(const Vector& w, const MixedModelData& data) {
    for (const auto& f : data.factors)
        if (f.effect_dim != 1)
            fail(ErrorKind::Unsupported, "weighted counts are defined for random intercepts only (factor '" +
                                             f.name + "' has D_k = " + std::to_string(f.effect_dim) + ")");
    DesignCounts c;
    c.n = data.n();
    c.d_bar = c.n ? w.mean() : 1.0;
    const Index K = data.num_factors();
    for (Index k = 0; k < K; ++k) {
        Vector lc = Vector::Zero(data.factors[static_cast<std::size_t>(k)].levels);
        const auto& m = data.memberships[static_cast<std::size_t>(k)];
        for (Index i = 0; i < c.n; ++i) lc(m(i)) += w(i);
        c.level_counts.push_back(lc);
    }
    c.pair_counts.assign(static_cast<std::size_t>(K), std::vector<SparseColMatrix>(static_cast<std::size_t>(K)));
    for (Index k = 0; k < K; ++k)
        for (Index l = 0; l < K; ++l) {
            if (k == l) continue;
            const auto& mk = data.memberships[static_cast<std::size_t>(k)];
            const auto& ml = data.memberships[static_cast<std::size_t>(l)];
            std::vector<Eigen::Triplet<double>> t;
            t.reserve(static_cast<std::size_t>(c.n));
            for (Index i = 0; i < c.n; ++i) t.emplace_back(mk(i), ml(i), w(i));
            SparseColMatrix m(data.factors[static_cast<std::size_t>(k)].levels,
                              data.factors[static_cast<std::size_t>(l)].levels);
            m.setFromTriplets(t.begin(), t.end());  // duplicates are summed
            c.pair_counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)] = std::move(m);
        }
    return c;
}

void require_two_factors(const DesignCounts& counts, const char* what) {
    if (counts.num_factors() != 2)
        fail(ErrorKind::Unsupported, std::string(what) + " is defined for exactly two factors (K = 2)");
}

}  // namespace

DesignCounts weighted_counts(const GaussianSurrogate& s, const MixedModelData& data) {
    return counts_from_weights(s.d_diag.array().square().matrix(), data);
}

DesignCounts weighted_counts(const MixedModelData& data) {
    return counts_from_weights(Vector::Ones(data.n()), data);
}

bool is_balanced(const DesignCounts& counts, double tol) {
    require_two_factors(counts, "is_balanced");
    for (const auto& lc : counts.level_counts) {
        if (lc.size() == 0) continue;
        const double mean = lc.mean();
        if ((lc.array() - mean).abs().maxCoeff() > tol * mean) return false;
    }
    return true;
}

double ff_bound(const DesignCounts& counts, const std::vector<double>& T, Index n) {
    if (static_cast<Index>(T.size()) != counts.num_factors())
        fail(ErrorKind::Precondition, "ff_bound needs one T_k per factor");
    const double nd = static_cast<double>(n) * counts.d_bar;
    double best = 0.0;
    for (Index k = 0; k < counts.num_factors(); ++k) {
        const double g = static_cast<double>(counts.level_counts[static_cast<std::size_t>(k)].size());
        best = std::max(best, std::sqrt(nd / (g * T[static_cast<std::size_t>(k)] + nd)));
    }
    return 1.0 - best;
}

double lambda_aux(const DesignCounts& counts, Index guard) {
    require_two_factors(counts, "lambda_aux");
    const Vector& n1 = counts.level_counts[0];
    const Vector& n2 = counts.level_counts[1];
    // Restrict to observed levels; unobserved ones carry no edges.
    std::vector<Index> keep1, map2(static_cast<std::size_t>(n2.size()), -1);
    for (Index g = 0; g < n1.size(); ++g)
        if (n1(g) > 0) keep1.push_back(g);
    Index m2 = 0;
    for (Index h = 0; h < n2.size(); ++h)
        if (n2(h) > 0) map2[static_cast<std::size_t>(h)] = m2++;
    const auto m1 = static_cast<Index>(keep1.size());
    if (m1 < 2) return 0.0;
    std::vector<Index> map1(static_cast<std::size_t>(n1.size()), -1);
    for (Index j = 0; j < m1; ++j) map1[static_cast<std::size_t>(keep1[static_cast<std::size_t>(j)])] = j;

    // A = D1^{-1/2} N D2^{-1/2}; A A' is similar to S_12 S_21.
    const SparseColMatrix& N = counts.pair_counts[0][1];
    std::vector<Eigen::Triplet<double>> t;
    for (Index col = 0; col < N.outerSize(); ++col)
        for (SparseColMatrix::InnerIterator it(N, col); it; ++it) {
            if (it.value() == 0.0) continue;
            const Index r = map1[static_cast<std::size_t>(it.row())];
            const Index c = map2[static_cast<std::size_t>(it.col())];
            t.emplace_back(r, c, it.value() / std::sqrt(n1(it.row()) * n2(it.col())));
        }
    SparseColMatrix a(m1, m2);
    a.setFromTriplets(t.begin(), t.end());

    if (m1 <= guard) {
        Matrix ad = Matrix(a);
        Matrix s = ad * ad.transpose();
        Eigen::SelfAdjointEigenSolver<Matrix> es(s, Eigen::EigenvaluesOnly);
        return std::clamp(es.eigenvalues()(m1 - 2), 0.0, 1.0);
    }
    // Deflated power iteration; the top eigenvector is proportional to sqrt(n1).
    Vector u(m1);
    for (Index j = 0; j < m1; ++j) u(j) = std::sqrt(n1(keep1[static_cast<std::size_t>(j)]));
    u.normalize();
    Vector x = Vector::LinSpaced(m1, 1.0, 2.0);
    x -= u.dot(x) * u;
    x.normalize();
    double lam = 0.0;
    for (int it = 0; it < 100000; ++it) {
        Vector y = a * Vector(a.transpose() * x);
        y -= u.dot(y) * u;
        const double next = x.dot(y);
        const double norm = y.norm();
        if (norm == 0.0) return 0.0;
        x = y / norm;
        if (std::abs(next - lam) < 1e-14 && it > 10) {
            lam = next;
            break;
        }
        lam = next;
    }
    return std::clamp(lam, 0.0, 1.0);
}

PfBalanced pf_uqf_balanced(const DesignCounts& counts, const std::vector<double>& T, Index n, Index guard) {
    require_two_factors(counts, "pf_uqf_balanced");
    if (!is_balanced(counts))
        fail(ErrorKind::Precondition, "pf_uqf_balanced needs a balanced design");
    if (T.size() != 2) fail(ErrorKind::Precondition, "pf_uqf_balanced needs T_1 and T_2");
    PfBalanced out;
    out.lambda_aux = lambda_aux(counts, guard);
    const double nd = static_cast<double>(n) * counts.d_bar;
    double prod = 1.0;
    for (std::size_t k = 0; k < 2; ++k) {
        const double g = static_cast<double>(counts.level_counts[k].size());
        prod *= std::sqrt(nd / (g * T[k] + nd));
    }
    out.uqf_exact = 1.0 - prod * std::sqrt(out.lambda_aux);
    return out;
}

double rg_bound(Index n, Index g1, Index g2) {
    if (n <= 0 || g1 <= 0 || g2 <= 0) fail(ErrorKind::Domain, "rg_bound needs positive n, G1, G2");
    const double nn = static_cast<double>(n);
    const double s = std::sqrt(static_cast<double>(g1) / nn) + std::sqrt(static_cast<double>(g2) / nn);
    return 1.0 - std::sqrt(s);
}

bool is_nested_in(const DesignCounts& counts, Index inner, Index outer) {
    if (inner == outer) return false;
    // rows of pair_counts[inner][outer] are levels of `inner`
    const SparseColMatrix& m = counts.pair_counts[static_cast<std::size_t>(inner)][static_cast<std::size_t>(outer)];
    std::vector<int> partners(static_cast<std::size_t>(m.rows()), 0);
    for (Index col = 0; col < m.outerSize(); ++col)
        for (SparseColMatrix::InnerIterator it(m, col); it; ++it)
            if (it.value() != 0.0) ++partners[static_cast<std::size_t>(it.row())];
    bool any = false;
    for (int p : partners) {
        if (p > 1) return false;
        any = any || p == 1;
    }
    return any;
}

BoundsReport bounds_report(const GaussianSurrogate& s, const MixedModelData& data, Index guard) {
    DesignCounts c = weighted_counts(s, data);
    BoundsReport r;
    r.num_factors = c.num_factors();
    std::vector<double> T;
    for (Index k = 1; k < s.num_blocks(); ++k) T.push_back(s.T[static_cast<std::size_t>(k)](0, 0));
    r.ff_upper = c.num_factors() > 0 ? ff_bound(c, T, data.n()) : 1.0;
    if (c.num_factors() == 2) {
        r.balanced = is_balanced(c);
        r.lambda_aux = lambda_aux(c, guard);
        r.laplacian_gap = 1.0 - std::sqrt(*r.lambda_aux);
        if (r.balanced) r.pf_exact = pf_uqf_balanced(c, T, data.n(), guard).uqf_exact;
        r.rg_lower = std::max(0.0, rg_bound(data.n(), data.factors[0].levels, data.factors[1].levels));
    }
    return r;
}

}  // namespace pfvi

#include "pfvi/gibbs.hpp"

#include "pfvi/error.hpp"
#include "pfvi/rng.hpp"
#include "pfvi/uqf.hpp"

#include <cmath>

namespace pfvi {

GibbsDraws gibbs_gaussian(const Problem& problem, const GibbsOptions& opts) {
    if (problem.lik != LikelihoodKind::Gaussian)
        fail(ErrorKind::Unsupported, "the Gibbs oracle covers the Gaussian likelihood only");
    if (opts.iters < 1 || opts.burn_in < 0 || opts.thin < 1)
        fail(ErrorKind::Domain, "Gibbs needs iters >= 1, burn_in >= 0, thin >= 1");
    const BlockLayout& layout = *problem.layout;
    const auto& data = *problem.data;
    const Index p = layout.num_params();
    const Index n = data.n();
    const Index K = data.num_factors();
    check_dense_guard(p, opts.guard, "Gibbs sampler");

    SparseRowMatrix z(n, p);
    {
        std::vector<Eigen::Triplet<double>> t;
        for (Index k = 0; k <= K; ++k)
            for (Index i = 0; i < n; ++i)
                for (SparseRowMatrix::InnerIterator it(problem.Z[static_cast<std::size_t>(k)], i); it; ++it)
                    t.emplace_back(i, layout.offset(k) + it.col(), it.value());
        z.setFromTriplets(t.begin(), t.end());
    }
    const Matrix ztz = Matrix(SparseRowMatrix(z.transpose()) * z);
    const Vector zty = z.transpose() * data.y;

    Rng rng(opts.seed);
    std::normal_distribution<double> norm(0.0, 1.0);

    const bool fixed = opts.fixed_sigma2.has_value() || opts.fixed_sigma.has_value();
    if (fixed && !(opts.fixed_sigma2 && opts.fixed_sigma))
        fail(ErrorKind::Precondition, "fixed-variance Gibbs needs both sigma^2 and every Sigma_k");
    double sigma2 = 1.0;
    std::vector<Matrix> sigma;
    if (fixed) {
        sigma2 = *opts.fixed_sigma2;
        sigma = *opts.fixed_sigma;
        if (static_cast<Index>(sigma.size()) != K) fail(ErrorKind::Precondition, "need one Sigma_k per factor");
    } else {
        if (n > 1) {
            const double m = data.y.mean();
            sigma2 = (data.y.array() - m).square().sum() / static_cast<double>(n - 1);
        }
        if (!(sigma2 > 0)) sigma2 = 1.0;
        for (Index f = 0; f < K; ++f) {
            const Index d = data.factors[static_cast<std::size_t>(f)].effect_dim;
            sigma.push_back(Matrix::Identity(d, d));
        }
    }

    double shape = static_cast<double>(n) / 2.0;
    for (const auto& f : data.factors) shape += static_cast<double>(f.levels * f.effect_dim) / 2.0;

    const int total = opts.burn_in + opts.iters;
    const Index keep = opts.iters / opts.thin;
    GibbsDraws out;
    out.seed = opts.seed;
    out.burn_in = opts.burn_in;
    out.thin = opts.thin;
    out.theta.resize(keep, p);
    out.sigma2.resize(keep);
    out.sigma_k.assign(static_cast<std::size_t>(K), {});

    Vector theta(p);
    Index stored = 0;
    Eigen::LLT<Matrix> llt;
    std::vector<Matrix> sigma_inv(static_cast<std::size_t>(K));
    bool need_factor = true;
    for (int it = 0; it < total; ++it) {
        if (need_factor) {
            Matrix h = ztz;
            for (Index f = 0; f < K; ++f) {
                const Block& b = layout.block(f + 1);
                const Matrix& s = sigma[static_cast<std::size_t>(f)];
                sigma_inv[static_cast<std::size_t>(f)] = s.llt().solve(Matrix::Identity(b.dim, b.dim));
                for (Index g = 0; g < b.levels; ++g)
                    h.block(layout.offset(f + 1) + g * b.dim, layout.offset(f + 1) + g * b.dim, b.dim, b.dim) +=
                        sigma_inv[static_cast<std::size_t>(f)];
            }
            llt.compute(h);
            if (llt.info() != Eigen::Success)
                fail(ErrorKind::Singular, "Gibbs: conditional precision of theta is singular");
            need_factor = !fixed;
        }
        Vector xi(p);
        for (Index j = 0; j < p; ++j) xi(j) = norm(rng);
        theta = llt.solve(zty);
        theta += std::sqrt(sigma2) * Vector(llt.matrixU().solve(xi));

        if (!fixed) {
            const Vector r = data.y - z * theta;
            double rate = r.squaredNorm();
            std::vector<Matrix> outer(static_cast<std::size_t>(K));
            for (Index f = 0; f < K; ++f) {
                const Block& b = layout.block(f + 1);
                Matrix acc = Matrix::Zero(b.dim, b.dim);
                for (Index g = 0; g < b.levels; ++g) {
                    const Vector a = theta.segment(layout.offset(f + 1) + g * b.dim, b.dim);
                    acc += a * a.transpose();
                    rate += a.dot(sigma_inv[static_cast<std::size_t>(f)] * a);
                }
                outer[static_cast<std::size_t>(f)] = acc;
            }
            std::gamma_distribution<double> gam(shape, 1.0);
            sigma2 = (rate / 2.0) / gam(rng);
            for (Index f = 0; f < K; ++f) {
                const auto fi = static_cast<std::size_t>(f);
                const double df = problem.prior.iw_df[fi] + static_cast<double>(data.factors[fi].levels);
                const Matrix scale = problem.prior.iw_scale[fi] + outer[fi] / sigma2;
                sigma[fi] = sample_inverse_wishart(df, scale, rng);
            }
        }

        const int post = it - opts.burn_in;
        if (post >= 0 && post % opts.thin == 0 && stored < keep) {
            out.theta.row(stored) = theta.transpose();
            out.sigma2(stored) = sigma2;
            for (Index f = 0; f < K; ++f) out.sigma_k[static_cast<std::size_t>(f)].push_back(sigma[static_cast<std::size_t>(f)]);
            ++stored;
        }
    }
    return out;
}

Matrix posterior_cov_estimate(const Matrix& draws, std::vector<std::string>* warnings) {
    if (draws.rows() < draws.cols() + 2)
        fail(ErrorKind::SampleSize, "posterior covariance needs at least p + 2 draws");
    Matrix c = sample_covariance(draws);
    if (warnings) {
        for (Index j = 0; j < c.cols(); ++j)
            if (c(j, j) <= 0.0)
                warnings->push_back("column " + std::to_string(j) + " is constant; covariance is rank deficient");
    }
    return c;
}

}  // namespace pfvi

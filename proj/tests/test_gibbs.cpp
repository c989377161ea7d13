#include "doctest.h"
#include "test_util.hpp"

#include "pfvi/error.hpp"
#include "pfvi/gibbs.hpp"

#include <cmath>

using namespace pfvi;
using namespace pfvi::testing;

namespace {

/// Monte Carlo standard error of a column mean from non-overlapping batch means.
double batch_se(const Vector& x, int batches = 40) {
    const Index len = x.size() / batches;
    Vector m(batches);
    for (int b = 0; b < batches; ++b) m(b) = x.segment(b * len, len).mean();
    const double mu = m.mean();
    return std::sqrt((m.array() - mu).square().sum() / (batches - 1.0) / batches);
}

}  // namespace

TEST_CASE("inverse Wishart draws have the right mean") {
    Rng rng(1);
    Matrix scale = random_spd(3, rng);
    const double df = 9.0;
    Matrix acc = Matrix::Zero(3, 3);
    const int S = 40000;
    for (int s = 0; s < S; ++s) acc += sample_inverse_wishart(df, scale, rng);
    acc /= S;
    CHECK(max_rel(acc, Matrix(scale / (df - 3.0 - 1.0))) < 0.02);
}

TEST_CASE("fixed variances: draws are iid from the exact target") {
    RandomModelSpec spec;
    spec.n = 30;
    spec.levels = {3, 4};
    auto d = random_model(spec, 2);
    auto prob = Problem::make(d, LikelihoodKind::Gaussian);
    const double sigma2 = 0.7;
    std::vector<Matrix> sig{Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, 2.0)};
    GibbsOptions go;
    go.iters = 40000;
    go.burn_in = 0;
    go.fixed_sigma2 = sigma2;
    go.fixed_sigma = sig;
    go.seed = 3;
    auto draws = gibbs_gaussian(prob, go);

    // the same law as the surrogate with tau = 1/sigma^2 and T_k = Sigma_k^{-1} / sigma^2
    std::vector<Matrix> T{sig[0].inverse() / sigma2, sig[1].inverse() / sigma2};
    auto ref = dense_target(d, LikelihoodKind::Gaussian, 1.0 / sigma2, T);
    const Matrix cov = ref.q.inverse();
    const Vector mean = ref.q.llt().solve(ref.b);
    const double S = static_cast<double>(draws.theta.rows());
    const Matrix emp = sample_covariance(draws.theta);
    const Vector emp_mean = draws.theta.colwise().mean().transpose();
    double worst_cov = 0.0, worst_mean = 0.0;
    for (Index i = 0; i < cov.rows(); ++i) {
        worst_mean = std::max(worst_mean, std::abs(emp_mean(i) - mean(i)) / std::sqrt(cov(i, i) / S));
        for (Index j = 0; j < cov.cols(); ++j) {
            const double se = std::sqrt((cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / S);
            worst_cov = std::max(worst_cov, std::abs(emp(i, j) - cov(i, j)) / se);
        }
    }
    CHECK(worst_mean < 5.0);
    CHECK(worst_cov < 5.0);
}

TEST_CASE("fixed effects only: matches the conjugate closed form") {
    RandomModelSpec spec;
    spec.n = 40;
    spec.levels = {};
    spec.dims = {};
    spec.fixed_cols = 3;
    auto d = random_model(spec, 4);
    auto prob = Problem::make(d, LikelihoodKind::Gaussian);
    GibbsOptions go;
    go.iters = 40000;
    go.burn_in = 200;
    go.seed = 5;
    auto draws = gibbs_gaussian(prob, go);

    const Matrix xtx = d.X.transpose() * d.X;
    const Vector bhat = xtx.llt().solve(Vector(d.X.transpose() * d.y));
    const double rss = (d.y - d.X * bhat).squaredNorm();
    const double nn = 40.0, p = 3.0;
    // with p(sigma^2) proportional to 1/sigma^2: beta | y is t with scale rss/(n-p) and n-p dof
    const Matrix cov = rss / (nn - p - 2.0) * xtx.inverse();
    const Vector m = draws.theta.colwise().mean().transpose();
    for (Index j = 0; j < 3; ++j) CHECK(std::abs(m(j) - bhat(j)) < 5.0 * batch_se(draws.theta.col(j)));
    CHECK(max_rel(sample_covariance(draws.theta), cov) < 0.05);
    CHECK(draws.sigma2.mean() == doctest::Approx(rss / (nn - p - 2.0)).epsilon(0.03));
}

TEST_CASE("same seed, same draws") {
    auto d = random_model({}, 6);
    auto prob = Problem::make(d, LikelihoodKind::Gaussian);
    GibbsOptions go;
    go.iters = 200;
    go.burn_in = 10;
    go.thin = 2;
    go.seed = 77;
    auto a = gibbs_gaussian(prob, go);
    auto b = gibbs_gaussian(prob, go);
    CHECK(a.theta == b.theta);
    CHECK(a.sigma2 == b.sigma2);
    CHECK(a.theta.rows() == 100);
    go.seed = 78;
    CHECK_FALSE(gibbs_gaussian(prob, go).theta == a.theta);
}

TEST_CASE("posterior mean agrees with the converged variational mean") {
    // q(phi) is factorised from theta, so the means carry a small bias that vanishes as n grows;
    // compare in units of the posterior sd rather than Monte Carlo standard errors.
    for (auto [n, tol] : {std::pair<Index, double>{20, 0.25}, {320, 0.02}}) {
        RandomModelSpec spec;
        spec.n = n;
        spec.levels = {5};
        spec.dims = {1};
        spec.fixed_cols = 1;
        auto d = random_model(spec, 7);
        auto prob = Problem::make(d, LikelihoodKind::Gaussian);
        GibbsOptions go;
        go.iters = 20000;
        go.seed = 8;
        auto draws = gibbs_gaussian(prob, go);
        auto res = fit(prob, Partition::pf_fixed(1));
        CHECK(res.converged);
        const Vector vm = q_mean(prob, res.state);
        const Vector gm = draws.theta.colwise().mean().transpose();
        const Matrix c = sample_covariance(draws.theta);
        for (Index j = 0; j < vm.size(); ++j) {
            const double slack = tol * std::sqrt(c(j, j)) + 3.0 * batch_se(draws.theta.col(j));
            CHECK(std::abs(vm(j) - gm(j)) < slack);
        }
    }
}

TEST_CASE("covariance estimate warns on constant columns and needs enough draws") {
    Rng rng(9);
    std::normal_distribution<double> nd;
    Matrix x(5000, 3);
    for (Index i = 0; i < x.rows(); ++i)
        for (Index j = 0; j < 3; ++j) x(i, j) = nd(rng);
    std::vector<std::string> warn;
    Matrix c = posterior_cov_estimate(x, &warn);
    CHECK(warn.empty());
    CHECK((c - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() < 3.0 / std::sqrt(5000.0) * 2.0);
    x.col(1).setConstant(2.0);
    posterior_cov_estimate(x, &warn);
    CHECK(warn.size() == 1);
    CHECK_THROWS_AS(posterior_cov_estimate(Matrix::Zero(4, 3)), Error);
}

TEST_CASE("gibbs refuses binomial models and half-fixed variances") {
    RandomModelSpec spec;
    spec.lik = LikelihoodKind::Binomial;
    auto d = random_model(spec, 10);
    CHECK_THROWS_AS(gibbs_gaussian(Problem::make(d, LikelihoodKind::Binomial)), Error);
    auto g = Problem::make(random_model({}, 11), LikelihoodKind::Gaussian);
    GibbsOptions go;
    go.fixed_sigma2 = 1.0;
    CHECK_THROWS_AS(gibbs_gaussian(g, go), Error);
}

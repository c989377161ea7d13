#include "doctest.h"
#include "test_util.hpp"

#include "pfvi/error.hpp"
#include "pfvi/surrogate.hpp"

#include <cmath>

using namespace pfvi;
using namespace pfvi::testing;

TEST_CASE("pg_mean: small-c limit and tanh form") {
    CHECK(pg_mean(1.0, 0.0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(pg_mean(1.0, 1e-9) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(pg_mean(2.0, 2.0) == doctest::Approx(0.5 * std::tanh(1.0)).epsilon(1e-14));
    CHECK(pg_mean(2.0, 2.0) == doctest::Approx(0.380797).epsilon(1e-6));
    // continuity across the series switch
    CHECK(pg_mean(3.0, 0.99e-4) == doctest::Approx(pg_mean(3.0, 1.01e-4)).epsilon(1e-10));
    CHECK(pg_mean(1.0, -2.0) == doctest::Approx(pg_mean(1.0, 2.0)));
}

TEST_CASE("Gaussian surrogate: D_ii^2 is a/b of q(sigma^2)") {
    auto d = random_model({}, 11);
    auto prob = Problem::make(d, LikelihoodKind::Gaussian);
    PhiParams phi = initial_phi(prob);
    phi.ig_shape = 2.0;
    phi.ig_rate = 4.0;
    auto s = build_surrogate(prob, phi);
    CHECK((s.d_diag.array().square() - 0.5).abs().maxCoeff() < 1e-15);
    CHECK(s.nu(3) == doctest::Approx(d.y(3) * std::sqrt(0.5)));
}

TEST_CASE("binomial surrogate matches an independent dense build") {
    RandomModelSpec spec;
    spec.lik = LikelihoodKind::Binomial;
    spec.max_trials = 4;
    auto d = random_model(spec, 12);
    auto prob = Problem::make(d, LikelihoodKind::Binomial);
    Rng rng(3);
    auto T = random_penalties(d, rng);
    Vector c = Vector::LinSpaced(d.n(), 0.0, 3.0);
    auto phi = PhiParams::for_target(prob, 1.0, T, c);
    auto s = build_surrogate(prob, phi);
    Vector eo(d.n());
    for (Index i = 0; i < d.n(); ++i) eo(i) = d.trials(i) / (2.0 * c(i)) * std::tanh(c(i) / 2.0);
    eo(0) = d.trials(0) / 4.0;
    auto ref = dense_target(d, LikelihoodKind::Binomial, 1.0, T, eo);
    CHECK(max_rel(dense_target_precision(s), ref.q) < 1e-12);
    CHECK((s.nu - ref.nu).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("projector: C empty is the identity, range of W_C is annihilated") {
    auto d = random_model({}, 13);
    auto prob = Problem::make(d, LikelihoodKind::Gaussian);
    Rng rng(1);
    auto s = build_surrogate(prob, PhiParams::for_target(prob, 1.3, random_penalties(d, rng)));
    Vector v = Vector::Random(d.n());
    CHECK((apply_projector(s, Partition::ff(2), v) - v).norm() == 0.0);

    // C = {0}: P_C = 0 so M_C is an orthogonal projector
    CollapsedSystem sys(s, Partition::pf_fixed(2));
    Vector in_range = Matrix(s.W[0]) * Vector::Random(d.X.cols());
    CHECK(sys.apply_projector(in_range).norm() < 1e-10 * in_range.norm());
    Vector once = sys.apply_projector(v);
    CHECK((sys.apply_projector(once) - once).norm() < 1e-10 * v.norm());
}

TEST_CASE("projector matches dense M_C and is positive semidefinite") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto d = random_model({}, 100 + seed);
        auto prob = Problem::make(d, LikelihoodKind::Gaussian);
        Rng rng(seed);
        auto T = random_penalties(d, rng);
        const double tau = 0.7;
        auto s = build_surrogate(prob, PhiParams::for_target(prob, tau, T));
        auto ref = dense_target(d, LikelihoodKind::Gaussian, tau, T);
        auto blocks = dense_blocks(d);
        for (auto coll : {std::vector<Index>{0}, std::vector<Index>{0, 1}, std::vector<Index>{2}}) {
            auto part = Partition::from_collapsed(coll, 2);
            auto ic = cols_of(blocks, coll);
            Matrix wc = ref.w(Eigen::all, ic);
            Matrix h = ref.q(ic, ic);
            Matrix m = Matrix::Identity(d.n(), d.n()) - wc * h.llt().solve(wc.transpose());
            for (int r = 0; r < 3; ++r) {
                Vector v = Vector::Random(d.n());
                Vector got = apply_projector(s, part, v);
                CHECK((got - m * v).norm() <= 1e-10 * (m * v).norm());
                CHECK(v.dot(got) >= -1e-12);
            }
        }
    }
}

TEST_CASE("collapsed system reports singular blocks") {
    // validation rejects a rank-deficient X, so zero the weighted design of block 0 instead
    auto d = random_model({}, 21);
    auto prob = Problem::make(d, LikelihoodKind::Gaussian);
    auto phi = initial_phi(prob);
    auto s = build_surrogate(prob, phi);
    s.W[0] = SparseRowMatrix(d.n(), d.X.cols());  // W_0 = 0, P_0 = 0
    bool threw = false;
    try {
        CollapsedSystem sys(s, Partition::pf_fixed(2));
    } catch (const Error& e) {
        threw = true;
        CHECK(e.kind() == ErrorKind::Singular);
        CHECK(std::string(e.what()).find("(fixed)") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("exact moments: U covariance equals the dense Schur complement") {
    RandomModelSpec spec;
    spec.n = 30;
    spec.levels = {4, 5};
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        auto d = random_model(spec, 200 + seed);
        auto prob = Problem::make(d, LikelihoodKind::Gaussian);
        Rng rng(seed);
        auto T = random_penalties(d, rng);
        auto s = build_surrogate(prob, PhiParams::for_target(prob, 1.5, T));
        auto ref = dense_target(d, LikelihoodKind::Gaussian, 1.5, T);
        auto blocks = dense_blocks(d);
        for (auto coll : {std::vector<Index>{0}, std::vector<Index>{0, 2}, std::vector<Index>{}}) {
            auto part = Partition::from_collapsed(coll, 2);
            auto ex = exact_target_moments(s, part);
            auto ic = cols_of(blocks, coll);
            auto iu = cols_of(blocks, part.uncollapsed);
            Matrix schur = ref.q(iu, iu);
            if (!ic.empty()) schur -= ref.q(iu, ic) * Matrix(ref.q(ic, ic)).llt().solve(Matrix(ref.q(ic, iu)));
            Matrix prec_u = ex.cov_u.inverse();
            CHECK(max_rel(prec_u, schur) < 1e-10);
            Vector mean = ref.q.llt().solve(ref.b);
            CHECK(max_rel(ex.mean, mean) < 1e-10);
            CHECK(max_rel(ex.mean_u, Vector(mean(iu))) < 1e-10);
            CHECK(max_rel(ex.precision, ref.q) < 1e-12);
        }
    }
}

TEST_CASE("exact moments: C empty gives blocks W_k'W_l + P_k") {
    auto d = random_model({}, 31);
    auto prob = Problem::make(d, LikelihoodKind::Gaussian);
    Rng rng(2);
    auto T = random_penalties(d, rng);
    auto s = build_surrogate(prob, PhiParams::for_target(prob, 1.0, T));
    auto ex = exact_target_moments(s, Partition::ff(2));
    Matrix w1 = Matrix(s.W[1]), w2 = Matrix(s.W[2]);
    Matrix prec = ex.cov_u.inverse();
    auto blocks = dense_blocks(d);
    const Index o1 = blocks[1].first, g1 = blocks[1].second, o2 = blocks[2].first, g2 = blocks[2].second;
    CHECK(max_rel(prec.block(o1, o1, g1, g1), w1.transpose() * w1 + s.penalty_dense(1)) < 1e-10);
    CHECK(max_rel(prec.block(o1, o2, g1, g2), w1.transpose() * w2) < 1e-10);
}

TEST_CASE("exact moments: fixed effects only is weighted least squares") {
    RandomModelSpec spec;
    spec.levels = {};
    spec.dims = {};
    spec.fixed_cols = 3;
    auto d = random_model(spec, 41);
    auto prob = Problem::make(d, LikelihoodKind::Gaussian);
    auto phi = initial_phi(prob);
    phi.ig_shape = 3.0;
    phi.ig_rate = 2.0;
    auto s = build_surrogate(prob, phi);
    auto ex = exact_target_moments(s, Partition::uf(0));
    const double tau = 1.5;
    Matrix xtx = tau * d.X.transpose() * d.X;
    Vector beta = xtx.llt().solve(Vector(tau * d.X.transpose() * d.y));
    CHECK(max_rel(ex.mean, beta) < 1e-10);
    CHECK(max_rel(ex.cov, Matrix(xtx.inverse())) < 1e-10);
}

TEST_CASE("dense guard refuses large problems") {
    auto d = random_model({}, 51);
    auto prob = Problem::make(d, LikelihoodKind::Gaussian);
    auto s = build_surrogate(prob, initial_phi(prob));
    CHECK_THROWS_AS(exact_target_moments(s, Partition::ff(2), 3), Error);
    CHECK_NOTHROW(exact_target_moments(s, Partition::ff(2), 100));
}

TEST_CASE("partition factories and errors") {
    CHECK(Partition::uf(2).describe() == "C={0,1,2} U={}");
    CHECK(Partition::pf_fixed(2).describe() == "C={0} U={1,2}");
    CHECK(Partition::from_collapsed({2, 0}, 2).collapsed == std::vector<Index>{0, 2});
    CHECK_THROWS_AS(Partition::from_collapsed({1, 1}, 2), Error);
    CHECK_THROWS_AS(Partition::from_collapsed({3}, 2), Error);
}

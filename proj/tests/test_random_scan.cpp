#include "doctest.h"
#include "test_util.hpp"

#include "pfvi/error.hpp"
#include "pfvi/random_scan.hpp"

#include <cmath>

using namespace pfvi;
using namespace pfvi::testing;

namespace {

GaussianTarget two_block(double rho) {
    GaussianTarget t;
    t.mu = Vector::Zero(2);
    t.Q.resize(2, 2);
    t.Q << 1, rho, rho, 1;
    t.block_sizes = {1, 1};
    return t;
}

GaussianTarget random_target(Rng& rng, Index blocks, Index max_size) {
    std::uniform_int_distribution<Index> sz(1, max_size);
    GaussianTarget t;
    Index p = 0;
    for (Index b = 0; b < blocks; ++b) {
        t.block_sizes.push_back(sz(rng));
        p += t.block_sizes.back();
    }
    t.Q = random_spd(p, rng, 0.2, 3.0);
    std::normal_distribution<double> nd;
    t.mu.resize(p);
    for (Index i = 0; i < p; ++i) t.mu(i) = nd(rng);
    return t;
}

}  // namespace

TEST_CASE("normalised target: unit diagonal blocks and coordinate round trip") {
    Rng rng(1);
    for (int r = 0; r < 5; ++r) {
        auto t = random_target(rng, 3, 4);
        auto n = normalize_target(t, {});
        for (Index b = 0; b < n.num_blocks(); ++b) {
            const auto bi = static_cast<std::size_t>(b);
            CHECK(n.q_tilde.block(n.offsets[bi], n.offsets[bi], n.sizes[bi], n.sizes[bi])
                      .isIdentity(1e-10));
        }
        Vector m = Vector::Random(t.mu.size());
        CHECK((n.from_normalized(n.to_normalized(m)) - m).norm() < 1e-10);
        CHECK(n.to_normalized(t.mu).norm() < 1e-12);
    }
}

TEST_CASE("normalised target: collapsing uses the Schur complement") {
    Rng rng(2);
    auto t = random_target(rng, 3, 3);
    auto n = normalize_target(t, {1});
    CHECK(n.num_blocks() == 2);
    CHECK(n.blocks == std::vector<Index>{0, 2});
    CHECK_THROWS_AS(normalize_target(t, {0, 1, 2}), Error);
}

TEST_CASE("v_gap: optimum, eigenvectors and dense quadratic form") {
    Rng rng(3);
    auto t = random_target(rng, 3, 3);
    auto n = normalize_target(t, {});
    CHECK(v_gap(n, Vector::Zero(n.dim())) == 0.0);
    Eigen::SelfAdjointEigenSolver<Matrix> es(n.q_tilde);
    for (Index j = 0; j < n.dim(); ++j)
        CHECK(v_gap(n, es.eigenvectors().col(j)) == doctest::Approx(es.eigenvalues()(j) / 2.0).epsilon(1e-12));
    Vector z = Vector::Random(n.dim());
    CHECK(v_gap(n, z) == doctest::Approx(0.5 * z.dot(n.q_tilde * z)).epsilon(1e-14));
}

TEST_CASE("2x2 with rho = 0.5: UQF is 1 - rho") {
    auto n = normalize_target(two_block(0.5), {});
    CHECK(n.uqf() == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(std::abs(n.min_eigenvector().norm() - 1.0) < 1e-14);
}

TEST_CASE("rs_cavi: fixed point, single block, diagonal target, replay") {
    Rng rng(4);
    auto t = random_target(rng, 3, 2);
    auto n = normalize_target(t, {});
    auto tr = rs_cavi(n, Vector::Zero(n.dim()), 10, 1);
    for (double g : tr.gaps) CHECK(g == 0.0);

    auto one = normalize_target(t, {0, 1});
    Vector z = Vector::Random(one.dim());
    rs_update(one, z, 0);
    CHECK(v_gap(one, z) < 1e-28);

    GaussianTarget diag;
    diag.Q = Vector::LinSpaced(4, 1.0, 4.0).asDiagonal();
    diag.mu = Vector::Zero(4);
    diag.block_sizes = {1, 1, 2};
    auto dn = normalize_target(diag, {});
    CHECK(dn.uqf() == doctest::Approx(1.0));
    Vector zd = Vector::Ones(4);
    for (Index b = 0; b < dn.num_blocks(); ++b) rs_update(dn, zd, b);
    CHECK(v_gap(dn, zd) == 0.0);

    auto a = rs_cavi(n, Vector::Ones(n.dim()), 15, 99);
    auto b = rs_cavi(n, Vector::Ones(n.dim()), 15, 99);
    CHECK(a.gaps == b.gaps);
    CHECK(a.final_z == b.final_z);
}

TEST_CASE("rs_cavi: one block update minimises the gap along that block") {
    Rng rng(5);
    auto t = random_target(rng, 3, 3);
    auto n = normalize_target(t, {});
    Vector z = Vector::Random(n.dim());
    Vector before = z;
    rs_update(n, z, 1);
    // perturbing the updated block can only increase the gap
    for (int r = 0; r < 10; ++r) {
        Vector w = z;
        w.segment(n.offsets[1], n.sizes[1]) += 0.1 * Vector::Random(n.sizes[1]);
        CHECK(v_gap(n, w) >= v_gap(n, z) - 1e-14);
    }
    CHECK(v_gap(n, z) <= v_gap(n, before) + 1e-14);
}

TEST_CASE("duality: rho = 0.5 two-block target stays inside the bracket") {
    auto rep = duality_check(two_block(0.5), {}, 20, 10000, 7);
    CHECK(rep.uqf == doctest::Approx(0.5));
    CHECK(rep.bracket_satisfied);
    CHECK(rep.mean_gap.size() == 21);
    CHECK(rep.lower[3] == doctest::Approx(rep.mean_gap[0] * std::pow(0.75, 12)));
}

TEST_CASE("duality: expected iterate from the minimal eigenvector decays geometrically") {
    Rng rng(6);
    auto t = random_target(rng, 3, 2);
    auto n = normalize_target(t, {});
    const Vector v = n.min_eigenvector();
    const int sweeps = 3;
    const int runs = 20000;
    auto rep = duality_check(t, {}, sweeps, runs, 11);
    const double u = static_cast<double>(n.num_blocks());
    const Vector expect = std::pow(1.0 - n.uqf() / u, u * sweeps) * v;
    // the final iterate has per-coordinate spread at most |v| so 5/sqrt(runs) is a loose bound
    CHECK((rep.mean_final_z - expect).cwiseAbs().maxCoeff() < 5.0 / std::sqrt(static_cast<double>(runs)));
}

TEST_CASE("duality: random 3-block targets satisfy the bracket") {
    Rng rng(8);
    for (int r = 0; r < 20; ++r) {
        auto t = random_target(rng, 3, 5);
        auto rep = duality_check(t, {}, 10, 2000, 100 + static_cast<std::uint64_t>(r));
        CHECK(rep.bracket_satisfied);
    }
}

TEST_CASE("target validation") {
    GaussianTarget t = two_block(0.5);
    t.block_sizes = {1};
    CHECK_THROWS_AS(normalize_target(t, {}), Error);
    t = two_block(2.0);  // indefinite
    CHECK_THROWS_AS(normalize_target(t, {}), Error);
}

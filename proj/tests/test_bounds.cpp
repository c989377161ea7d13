#include "doctest.h"
#include "test_util.hpp"

#include "pfvi/bounds.hpp"
#include "pfvi/error.hpp"
#include "pfvi/simulate.hpp"

#include <cmath>

using namespace pfvi;
using namespace pfvi::testing;

namespace {

MixedModelData crossed(const std::vector<std::pair<Index, Index>>& cells, Index g1, Index g2) {
    CrossedDesign d;
    d.g1 = g1;
    d.g2 = g2;
    d.cells = cells;
    return design_to_data(d, Vector::LinSpaced(static_cast<Index>(cells.size()), -1.0, 1.0));
}

MixedModelData complete(Index g1, Index g2, int reps = 1) {
    std::vector<std::pair<Index, Index>> cells;
    for (int r = 0; r < reps; ++r)
        for (Index a = 0; a < g1; ++a)
            for (Index b = 0; b < g2; ++b) cells.emplace_back(a, b);
    return crossed(cells, g1, g2);
}

struct Fitted {
    Problem prob;
    PhiParams phi;
};

Fitted at_fixed_phi(const MixedModelData& d, double tau, double t1, double t2) {
    Fitted f{Problem::make(d, LikelihoodKind::Gaussian), {}};
    f.phi = PhiParams::for_target(f.prob, tau, {Matrix::Constant(1, 1, t1), Matrix::Constant(1, 1, t2)});
    return f;
}

}  // namespace

TEST_CASE("counts: complete design and marginalisation") {
    auto d = complete(3, 3);
    auto c = weighted_counts(d);
    CHECK(c.n == 9);
    CHECK(c.d_bar == 1.0);
    CHECK(Matrix(c.pair_counts[0][1]) == Matrix::Ones(3, 3));
    Rng rng(1);
    auto m = gen_crossed_mcar(7, 5, 0.5, 3);
    auto dm = design_to_data(m, Vector::Zero(m.n()));
    auto cm = weighted_counts(dm);
    CHECK((Matrix(cm.pair_counts[0][1]).rowwise().sum() - cm.level_counts[0]).norm() == 0.0);
    CHECK((Matrix(cm.pair_counts[1][0]).rowwise().sum() - cm.level_counts[1]).norm() == 0.0);
}

TEST_CASE("counts: surrogate weights scale every count") {
    auto f = at_fixed_phi(complete(3, 4), 2.5, 1.0, 1.0);
    auto s = build_surrogate(f.prob, f.phi);
    auto c = weighted_counts(s, *f.prob.data);
    CHECK(c.d_bar == doctest::Approx(2.5));
    CHECK(Matrix(c.pair_counts[0][1]).isApprox(Matrix::Constant(3, 4, 2.5)));
}

TEST_CASE("counts: random slopes are refused") {
    RandomModelSpec spec;
    spec.dims = {2, 1};
    auto d = random_model(spec, 1);
    CHECK_THROWS_AS(weighted_counts(d), Error);
}

TEST_CASE("balance: complete, extra replicate, biregular") {
    CHECK(is_balanced(weighted_counts(complete(4, 3))));
    auto d = complete(4, 3);
    auto cells = std::vector<std::pair<Index, Index>>{};
    for (Index a = 0; a < 4; ++a)
        for (Index b = 0; b < 3; ++b) cells.emplace_back(a, b);
    cells.emplace_back(0, 0);
    CHECK_FALSE(is_balanced(weighted_counts(crossed(cells, 4, 3))));
    auto br = gen_biregular(48, 4, 6, 2);
    CHECK(is_balanced(weighted_counts(design_to_data(br, Vector::Zero(br.n()))), 0.0));
}

TEST_CASE("ff_bound: direct evaluation and the large-n limit") {
    DesignCounts c;
    c.n = 10;
    c.d_bar = 1.0;
    c.level_counts = {Vector::Ones(10), Vector::Ones(10)};
    CHECK(ff_bound(c, {1.0, 1.0}, 10) == doctest::Approx(1.0 - std::sqrt(0.5)).epsilon(1e-12));
    CHECK(ff_bound(c, {1.0, 1.0}, 1000000000) < 1e-3);
    CHECK_THROWS_AS(ff_bound(c, {1.0}, 10), Error);
}

TEST_CASE("ff_bound holds for the fitted mean-field UQF") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        CrossedDesign des = seed % 2 ? gen_crossed_mcar(6, 7, 0.5, seed) : gen_biregular(24, 4, 3, seed);
        auto d = design_to_data(des, Vector::LinSpaced(des.n(), 0.0, 1.0));
        const double tau = 0.5 + 0.3 * static_cast<double>(seed);
        const double t1 = 0.2 + 0.4 * static_cast<double>(seed % 3), t2 = 1.3;
        auto f = at_fixed_phi(d, tau, t1, t2);
        const double u = fixed_phi_uqf(f.prob, f.phi, Partition::ff(2));
        auto s = build_surrogate(f.prob, f.phi);
        const double bound = ff_bound(weighted_counts(s, d), {t1, t2}, d.n());
        CHECK(u <= bound + 1e-10);
    }
}

TEST_CASE("lambda_aux: nested factor and complete design") {
    // factor 2 refines factor 1: level b of factor 2 belongs to level b / 3 of factor 1
    std::vector<std::pair<Index, Index>> cells;
    for (Index b = 0; b < 6; ++b)
        for (int r = 0; r < 2; ++r) cells.emplace_back(b / 3, b);
    auto nested = weighted_counts(crossed(cells, 2, 6));
    CHECK(lambda_aux(nested) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(is_nested_in(nested, 1, 0));
    CHECK_FALSE(is_nested_in(nested, 0, 1));

    auto full = weighted_counts(complete(5, 4, 2));
    CHECK(lambda_aux(full) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    auto pf = pf_uqf_balanced(full, {1.0, 1.0}, full.n);
    CHECK(pf.uqf_exact == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("lambda_aux: dense and power-iteration paths agree and stay in [0, 1]") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto des = gen_crossed_mcar(30, 20, 0.8, seed);
        auto c = weighted_counts(design_to_data(des, Vector::Zero(des.n())));
        const double dense = lambda_aux(c);
        const double power = lambda_aux(c, 1);
        CHECK(dense >= 0.0);
        CHECK(dense <= 1.0);
        CHECK(power == doctest::Approx(dense).epsilon(1e-8));
    }
}

TEST_CASE("pf_uqf_balanced equals the fitted partially factorised UQF") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const Index d1 = 3 + static_cast<Index>(seed % 3);
        auto des = gen_biregular(d1 * 10, d1, d1, 50 + seed);
        auto d = design_to_data(des, Vector::LinSpaced(des.n(), -1.0, 1.0));
        const double tau = 1.7, t1 = 0.6, t2 = 2.0;
        auto f = at_fixed_phi(d, tau, t1, t2);
        auto s = build_surrogate(f.prob, f.phi);
        auto counts = weighted_counts(s, d);
        auto pf = pf_uqf_balanced(counts, {t1, t2}, d.n());
        const double fitted = fixed_phi_uqf(f.prob, f.phi, Partition::pf_fixed(2));
        CHECK(fitted == doctest::Approx(pf.uqf_exact).epsilon(1e-8));

        // loose bounds and ordering of families
        const double nd = static_cast<double>(d.n()) * counts.d_bar;
        const double loose = 1.0 - std::sqrt(nd / (10.0 * t1 + nd)) * std::sqrt(nd / (10.0 * t2 + nd));
        CHECK(pf.uqf_exact >= loose - 1e-12);
        CHECK(pf.uqf_exact >= 1.0 - std::sqrt(pf.lambda_aux) - 1e-12);
        const double ff = fixed_phi_uqf(f.prob, f.phi, Partition::ff(2));
        const double uf = fixed_phi_uqf(f.prob, f.phi, Partition::uf(2));
        CHECK(ff <= fitted + 1e-9);
        CHECK(fitted <= uf + 1e-9);
        CHECK(uf == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("pf_uqf_balanced refuses unbalanced designs") {
    auto des = gen_crossed_mcar(6, 6, 0.5, 1);
    auto c = weighted_counts(design_to_data(des, Vector::Zero(des.n())));
    if (!is_balanced(c)) {
        try {
            pf_uqf_balanced(c, {1.0, 1.0}, c.n);
            FAIL("expected a precondition error");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::Precondition);
        }
    }
}

TEST_CASE("rg_bound: direct evaluation and limit") {
    CHECK(rg_bound(1600, 100, 100) == doctest::Approx(1.0 - std::sqrt(0.5)).epsilon(1e-12));
    CHECK(rg_bound(100000000, 10, 10) > 0.97);
    CHECK_THROWS_AS(rg_bound(0, 1, 1), Error);
}

TEST_CASE("bounds report on balanced and nested designs") {
    auto f = at_fixed_phi(complete(4, 4, 2), 1.0, 1.0, 1.0);
    auto s = build_surrogate(f.prob, f.phi);
    auto r = bounds_report(s, *f.prob.data);
    CHECK(r.balanced);
    REQUIRE(r.pf_exact.has_value());
    REQUIRE(r.lambda_aux.has_value());
    CHECK(*r.rg_lower >= 0.0);

    std::vector<std::pair<Index, Index>> cells;
    for (Index b = 0; b < 6; ++b) cells.emplace_back(b / 2, b);
    auto g = at_fixed_phi(crossed(cells, 3, 6), 1.0, 1.0, 1.0);
    auto rn = bounds_report(build_surrogate(g.prob, g.phi), *g.prob.data);
    CHECK(*rn.lambda_aux == doctest::Approx(1.0));
    CHECK(*rn.laplacian_gap == doctest::Approx(0.0).scale(1.0));
}

#include "doctest.h"
#include "test_util.hpp"

#include "pfvi/error.hpp"
#include "pfvi/model.hpp"

#include <sstream>

using namespace pfvi;

namespace {

Schema grp_schema() {
    return Schema::from_json_text(R"({"response": "y", "trials": null, "fixed": [], "factors": [{"name": "grp"}]})");
}

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Io;
}

}  // namespace

TEST_CASE("csv: four rows with two groups") {
    std::istringstream in("y,grp\n1.0,a\n2.0,b\n0.5,a\n3.0,b\n");
    auto d = parse_long_csv(in, grp_schema(), LikelihoodKind::Gaussian);
    CHECK(d.n() == 4);
    CHECK(d.num_factors() == 1);
    CHECK(d.factors[0].levels == 2);
    CHECK(d.factors[0].effect_dim == 1);
    CHECK(d.memberships[0](0) == 0);
    CHECK(d.memberships[0](1) == 1);
    CHECK(d.X.cols() == 1);
    CHECK(d.X.col(0).isOnes());
}

TEST_CASE("csv: binomial response above trials is a domain error") {
    auto schema = Schema::from_json_text(R"({"response": "y", "trials": "n", "fixed": [], "factors": [{"name": "g"}]})");
    std::istringstream in("y,n,g\n3,2,a\n1,2,b\n");
    CHECK(kind_of([&] { parse_long_csv(in, schema, LikelihoodKind::Binomial); }) == ErrorKind::Domain);
}

TEST_CASE("csv: two factors with 5 and 7 levels") {
    auto schema = Schema::from_json_text(R"({"response": "y", "factors": [{"name": "a"}, {"name": "b"}]})");
    std::ostringstream csv;
    csv << "y,a,b\n";
    for (int i = 0; i < 35; ++i) csv << i * 0.1 << ',' << "a" << (i % 5) << ',' << (i % 7) << '\n';
    std::istringstream in(csv.str());
    auto d = parse_long_csv(in, schema, LikelihoodKind::Gaussian);
    CHECK(d.num_factors() == 2);
    CHECK(d.factors[0].levels == 5);
    CHECK(d.factors[1].levels == 7);
}

TEST_CASE("csv: numeric levels sort numerically") {
    auto schema = Schema::from_json_text(R"({"response": "y", "factors": [{"name": "g"}]})");
    std::istringstream in("y,g\n1,10\n2,9\n3,2\n");
    auto d = parse_long_csv(in, schema, LikelihoodKind::Gaussian);
    CHECK(d.factors[0].level_labels == std::vector<std::string>{"2", "9", "10"});
    CHECK(d.memberships[0](0) == 2);
}

TEST_CASE("csv: schema and parse errors") {
    auto schema = Schema::from_json_text(R"({"response": "z", "factors": [{"name": "g"}]})");
    std::istringstream missing("y,g\n1,a\n");
    CHECK(kind_of([&] { parse_long_csv(missing, schema, LikelihoodKind::Gaussian); }) == ErrorKind::Schema);
    std::istringstream bad("y,grp\nabc,a\n1,b\n");
    CHECK(kind_of([&] { parse_long_csv(bad, grp_schema(), LikelihoodKind::Gaussian); }) == ErrorKind::Parse);
    CHECK(kind_of([] { Schema::from_json_text("{not json"); }) == ErrorKind::Schema);
}

TEST_CASE("csv: random slopes and interactions") {
    auto schema = Schema::from_json_text(
        R"({"response": "y", "fixed": ["x"], "factors": [{"name": "g", "slopes": ["1", "x"]},
            {"name": "gh", "interaction": ["g", "h"]}]})");
    std::istringstream in("y,x,g,h\n1,0.5,a,u\n2,1.5,a,v\n3,-1,b,u\n4,2,b,u\n");
    auto d = parse_long_csv(in, schema, LikelihoodKind::Gaussian);
    CHECK(d.X.cols() == 2);
    CHECK(d.factors[0].effect_dim == 2);
    CHECK(d.slope_values[0](0, 1) == doctest::Approx(0.5));
    CHECK(d.factors[1].levels == 3);  // a:u, a:v, b:u
    CHECK(d.memberships[1](2) == d.memberships[1](3));
}

TEST_CASE("schema json round trip") {
    auto s = Schema::from_json_text(R"({"response": "y", "trials": "n", "fixed": ["x"], "factors": [{"name": "g", "slopes": ["1", "x"]}]})");
    auto t = Schema::from_json_text(s.to_json_text());
    CHECK(t.response == "y");
    CHECK(t.trials.value() == "n");
    CHECK(t.factors[0].slopes.size() == 2);
}

TEST_CASE("designs: one-hot intercepts and kronecker slopes") {
    MixedModelData d;
    d.y = Vector::Zero(3);
    d.X = Matrix::Ones(3, 1);
    FactorSpec f;
    f.name = "g";
    f.levels = 4;
    f.effect_dim = 2;
    f.slope_columns = {"1", "w"};
    d.factors.push_back(f);
    Eigen::VectorXi m(3);
    m << 2, 0, 3;
    d.memberships.push_back(m);
    Matrix w(3, 2);
    w << 1, 0.5, 1, -1, 1, 2;
    d.slope_values.push_back(w);
    auto z = build_designs(d);
    REQUIRE(z.size() == 1);
    Matrix zd = Matrix(z[0]);
    // membership 3 of 4 (0-based 2) occupies columns 5, 6 (1-based)
    CHECK(zd(0, 4) == 1.0);
    CHECK(zd(0, 5) == 0.5);
    CHECK(zd.row(0).cwiseAbs().sum() == doctest::Approx(1.5));
    CHECK(z[0].row(0).nonZeros() == 2);
}

TEST_CASE("designs: intercept design is a partition of unity and round-trips memberships") {
    testing::RandomModelSpec spec;
    spec.n = 50;
    spec.levels = {6, 3, 4};
    spec.dims = {1, 2, 1};
    auto d = testing::random_model(spec, 7);
    auto z = build_designs(d);
    Matrix z0 = Matrix(z[0]);
    CHECK((z0.rowwise().sum().array() == 1.0).all());
    for (std::size_t k = 0; k < z.size(); ++k) {
        const Index dk = d.factors[k].effect_dim;
        for (Index i = 0; i < d.n(); ++i) {
            SparseRowMatrix::InnerIterator it(z[k], i);
            REQUIRE(it);
            CHECK(it.col() / dk == d.memberships[k](i));
        }
    }
    for (Index i = 0; i < d.n(); ++i) {
        Index nnz = 0;
        for (auto& zk : z) nnz += zk.row(i).nonZeros();
        CHECK(nnz == 1 + 2 + 1);
    }
}

TEST_CASE("validation: duplicated column is fatal, empty level warns, clean input passes") {
    testing::RandomModelSpec spec;
    auto d = testing::random_model(spec, 3);
    auto rep = validate_model(d, PriorSpec::defaults(d), LikelihoodKind::Gaussian);
    CHECK(rep.ok());
    CHECK(rep.warnings.empty());

    auto dup = d;
    dup.X.col(1) = dup.X.col(0);
    auto r2 = validate_model(dup, PriorSpec::defaults(dup), LikelihoodKind::Gaussian);
    CHECK_FALSE(r2.ok());
    CHECK(r2.errors[0].code == "rank");
    CHECK(kind_of([&] { r2.throw_if_fatal(); }) == ErrorKind::Validation);

    auto empty = d;
    empty.factors[0].levels += 1;
    auto r3 = validate_model(empty, PriorSpec::defaults(empty), LikelihoodKind::Gaussian);
    CHECK(r3.ok());
    CHECK(r3.warnings.size() == 1);

    auto bad_prior = PriorSpec::defaults(d);
    bad_prior.iw_scale[0](0, 0) = -1.0;
    CHECK_FALSE(validate_model(d, bad_prior, LikelihoodKind::Gaussian).ok());

    auto bad_member = d;
    bad_member.memberships[1](0) = 99;
    CHECK_FALSE(validate_model(bad_member, PriorSpec::defaults(d), LikelihoodKind::Gaussian).ok());
}

TEST_CASE("default prior is IW(D+1, I)") {
    testing::RandomModelSpec spec;
    spec.dims = {1, 2};
    auto d = testing::random_model(spec, 5);
    auto p = PriorSpec::defaults(d);
    CHECK(p.iw_df[0] == 2.0);
    CHECK(p.iw_df[1] == 3.0);
    CHECK(p.iw_scale[1].isIdentity());
}

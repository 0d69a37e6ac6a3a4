#include "doctest.h"

#include <set>

#include "safemc/conic_program.hpp"

using namespace safemc;
using namespace safemc::conic;

TEST_CASE("variable indexing covers every scalar once") {
    ConicProgram p;
    p.add_block("A", 2, 3);
    p.add_block("S", 3, 3, true);
    CHECK(p.num_variables() == 6 + 6);
    std::set<int> seen;
    for (int j = 0; j < 3; ++j) {
        for (int i = 0; i < 2; ++i) seen.insert(p.var("A", i, j));
    }
    for (int j = 0; j < 3; ++j) {
        for (int i = 0; i <= j; ++i) {
            seen.insert(p.var("S", i, j));
            CHECK(p.var("S", i, j) == p.var("S", j, i));
        }
    }
    CHECK(seen.size() == 12);
    CHECK(*seen.rbegin() == 11);
    CHECK_THROWS_AS(p.var("A", 2, 0), DimensionMismatch);
    CHECK_THROWS(p.var("B", 0, 0));
    CHECK_THROWS(p.add_block("A", 1, 1));
    CHECK_THROWS_AS(p.add_block("R", 2, 3, true), DimensionMismatch);
}

TEST_CASE("pack and unpack are inverse on symmetric data") {
    ConicProgram p;
    p.add_block("A", 2, 2);
    p.add_block("S", 2, 2, true);
    Matrix a(2, 2);
    a << 1, 2, 3, 4;
    Matrix s(2, 2);
    s << 5, 6, 6, 7;
    const auto x = p.pack({{"A", a}, {"S", s}});
    const auto back = p.unpack(x);
    CHECK(back.at("A") == a);
    CHECK(back.at("S") == s);
}

TEST_CASE("cone violations") {
    ConicProgram p;
    p.add_block("x", 2, 1);
    const int x0 = p.var("x", 0);
    const int x1 = p.var("x", 1);
    const std::vector<double> x{2.0, -3.0};

    ConstraintGroup zero{"eq", Cone::Zero, 0, {LinearExpr(-2.0).add(x0, 1.0), LinearExpr(1.0).add(x1, 1.0)}};
    CHECK(p.violation(zero, x) == doctest::Approx(2.0));

    ConstraintGroup nonneg{"ge", Cone::Nonnegative, 0, {LinearExpr().add(x0, 1.0), LinearExpr().add(x1, 1.0)}};
    CHECK(p.violation(nonneg, x) == doctest::Approx(3.0));

    // [[x0, 1], [1, x0]] has eigenvalues x0 +- 1.
    ConstraintGroup psd{"psd", Cone::Psd, 2, {LinearExpr().add(x0, 1.0), LinearExpr(1.0), LinearExpr().add(x0, 1.0)}};
    CHECK(p.violation(psd, x) == doctest::Approx(0.0));
    const std::vector<double> small{0.5, 0.0};
    CHECK(p.violation(psd, small) == doctest::Approx(0.5));
    const Matrix m = p.psd_matrix(psd, small);
    CHECK(m(0, 1) == 1.0);
    CHECK(m(1, 0) == 1.0);

    ConstraintGroup wrong{"bad", Cone::Psd, 2, {LinearExpr()}};
    CHECK_THROWS_AS(p.add_group(wrong), DimensionMismatch);
    ConstraintGroup undeclared{"u", Cone::Zero, 0, {LinearExpr().add(7, 1.0)}};
    CHECK_THROWS(p.add_group(undeclared));
}

TEST_CASE("json dump lists blocks, groups and triplets") {
    ConicProgram p;
    p.add_block("x", 1, 1);
    p.add_group({"ge", Cone::Nonnegative, 0, {LinearExpr(1.0).add(0, 2.0)}});
    p.objective = LinearExpr(3.0).add(0, -1.0);
    const auto j = p.to_json();
    CHECK(j["num_variables"] == 1);
    CHECK(j["groups"][0]["cone"] == "nonnegative");
    CHECK(j["groups"][0]["triplets"]["value"][0] == 2.0);
    CHECK(j["groups"][0]["constant"][0] == 1.0);
    CHECK(j["objective"]["constant"] == 3.0);
}

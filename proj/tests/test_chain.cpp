#include "doctest.h"

#include <cmath>

#include "safemc/chain.hpp"
#include "safemc/problem_io.hpp"
#include "test_support.hpp"

using namespace safemc;
using namespace testing_support;

TEST_CASE("validation rejects malformed inputs") {
    Matrix bad(2, 2);
    bad << 0.5, 0.2, 0.5, 0.7;
    CHECK_THROWS_AS(ColumnStochasticMatrix::validate(bad), ColumnSumViolation);
    bad << -0.1, 0.5, 1.1, 0.5;
    CHECK_THROWS_AS(ColumnStochasticMatrix::validate(bad), NegativeEntry);
    CHECK_THROWS_AS(ColumnStochasticMatrix::validate(Matrix::Ones(2, 3) / 2.0), DimensionMismatch);

    Matrix adj = Matrix::Ones(2, 2);
    adj(0, 0) = 0.0;
    CHECK_THROWS_AS(AdjacencyMatrix::validate(adj), RangeViolation);
    adj(0, 0) = 1.0;
    adj(0, 1) = 0.5;
    CHECK_THROWS_AS(AdjacencyMatrix::validate(adj), RangeViolation);

    Matrix k = Matrix::Ones(2, 2);
    k(1, 1) = 0.9;
    CHECK_THROWS_AS(SingleActionPolicy::validate(k), RangeViolation);

    Vector v(2);
    v << 0.5, 0.6;
    CHECK_THROWS_AS(ProbVector::validate(v), ColumnSumViolation);
    CHECK_NOTHROW(ProbVector::validate(v, 0.2));
}

TEST_CASE("adjacency orientation: entry (i, j) permits i -> j, M(i, j) is j -> i") {
    Matrix a = Matrix::Identity(2, 2);
    a(0, 1) = 1.0;
    const auto adj = AdjacencyMatrix::validate(a);
    CHECK(adj.allows(0, 1));
    CHECK_FALSE(adj.allows(1, 0));
    CHECK(adj.permits_entry(1, 0));
    CHECK_FALSE(adj.permits_entry(0, 1));
}

TEST_CASE("compose_single matches the case-analysis reference") {
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 7;
        const Matrix g = random_stochastic(gen, n, 0.3);
        const Matrix k = random_acceptance(gen, n);
        const auto m = compose_single(ColumnStochasticMatrix::validate(g), SingleActionPolicy::validate(k));
        CHECK((m.matrix() - single_chain_reference(g, k)).cwiseAbs().maxCoeff() <= 1e-14);
        for (int j = 0; j < n; ++j) CHECK(std::abs(m.matrix().col(j).sum() - 1.0) <= 1e-12);
    }
}

TEST_CASE("compose_single edge cases") {
    std::mt19937_64 gen(3);
    const Matrix g = random_stochastic(gen, 4);
    const auto gm = ColumnStochasticMatrix::validate(g);
    // Full acceptance reproduces G exactly.
    CHECK(compose_single(gm, SingleActionPolicy::validate(Matrix::Ones(4, 4))).matrix() == g);
    // No off-diagonal acceptance: the agent never moves.
    const Matrix frozen = compose_single(gm, SingleActionPolicy::validate(Matrix::Identity(4, 4))).matrix();
    CHECK((frozen - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK((frozen.array() == 0.0).count() == 12);
}

TEST_CASE("compose_multi matches the event-tree reference") {
    std::mt19937_64 gen(12);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 5;
        const int m = 1 + trial % 3;
        const auto env = random_env(gen, n, m);
        const AcceptancePlan plan(random_plan(gen, n, m));
        const DecisionPolicy policy = extract_policy(plan);
        std::vector<Matrix> g;
        for (const auto& gk : env.on) g.push_back(gk.matrix());
        const Matrix reference = multi_chain_reference(g, env.off.matrix(), policy.alpha, policy.q);
        const Matrix composed = compose_multi(env, plan).matrix();
        CHECK((composed - reference).cwiseAbs().maxCoeff() <= 1e-13);
    }
}

TEST_CASE("compose_multi special cases") {
    std::mt19937_64 gen(5);
    const auto env = random_env(gen, 4, 2);
    CHECK(compose_multi(env, AcceptancePlan::zeros(4, 2)).matrix() == env.off.matrix());

    // Always choosing action 1 and always accepting reproduces G_1.
    std::vector<Matrix> p{Matrix::Ones(4, 4), Matrix::Zero(4, 4)};
    CHECK((compose_multi(env, AcceptancePlan(p)).matrix() - env.on[0].matrix()).cwiseAbs().maxCoeff() <= 1e-15);

    p[1] = Matrix::Constant(4, 4, 0.1);
    CHECK_THROWS_AS(compose_multi(env, AcceptancePlan(p)), BudgetViolation);
    CHECK_THROWS_AS(compose_multi(env, AcceptancePlan::zeros(4, 3)), DimensionMismatch);
    CHECK_THROWS_AS(AcceptancePlan({Matrix::Constant(4, 4, 1.5)}), RangeViolation);
}

TEST_CASE("budget is the sum over actions of column maxima") {
    Matrix p1 = Matrix::Zero(2, 2);
    Matrix p2 = Matrix::Zero(2, 2);
    p1 << 0.2, 0.0, 0.6, 0.1;
    p2 << 0.4, 0.9, 0.1, 0.0;
    const AcceptancePlan plan({p1, p2});
    const Vector b = column_budget(plan);
    CHECK(b(0) == doctest::Approx(1.0));
    CHECK(b(1) == doctest::Approx(1.0));
    CHECK(budget_ok(plan));
    p2(1, 1) = 0.95;
    CHECK_FALSE(budget_ok(AcceptancePlan({p1, p2})));
}

TEST_CASE("extract_policy: alpha is the column max, Q the scaled column, zeros where alpha vanishes") {
    Matrix p = Matrix::Zero(3, 3);
    p.col(0) << 0.1, 0.4, 0.2;
    const DecisionPolicy pol = extract_policy(AcceptancePlan({p}));
    CHECK(pol.alpha[0](0) == 0.4);
    CHECK(pol.alpha[0](1) == 0.0);
    CHECK(pol.q[0](1, 0) == 1.0);
    CHECK(pol.q[0](0, 0) == doctest::Approx(0.25));
    CHECK(pol.q[0].col(1).isZero(0.0));
    CHECK(policy_violations(pol).empty());
}

TEST_CASE("extraction round trip and normalization invariance") {
    std::mt19937_64 gen(21);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 6;
        const int m = 1 + trial % 4;
        const auto raw = random_plan(gen, n, m);
        const AcceptancePlan plan(raw);
        const AcceptancePlan back = policy_to_plan(extract_policy(plan));
        for (int k = 0; k < m; ++k) {
            for (int j = 0; j < n; ++j) {
                for (int i = 0; i < n; ++i) {
                    const double a = raw[k](i, j);
                    const double b = back[k](i, j);
                    CHECK(std::abs(a - b) <= 4.0 * std::abs(std::nextafter(a, 2.0) - a));
                }
            }
        }
        bool dead = false;
        for (int j = 0; j < n; ++j) dead = dead || column_budget(plan)(j) == 0.0;
        if (dead) {
            CHECK_THROWS_AS(normalize_policy(plan), DeadState);
            continue;
        }
        const auto env = random_env(gen, n, m);
        const DecisionPolicy norm = normalize_policy(plan);
        Vector total = Vector::Zero(n);
        for (const auto& a : norm.alpha) total += a;
        CHECK((total.array() - 1.0).abs().maxCoeff() <= 1e-12);
        CHECK(policy_violations(norm).empty());
        const Matrix before = compose_multi(env, plan).matrix();
        const Matrix after = compose_multi(env, policy_to_plan(norm)).matrix();
        CHECK((before - after).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("policy_violations names broken invariants") {
    DecisionPolicy pol{{Vector::Constant(2, 0.7), Vector::Constant(2, 0.5)},
                       {Matrix::Constant(2, 2, 0.5), Matrix::Constant(2, 2, 1.2)}};
    const auto bad = policy_violations(pol);
    REQUIRE(bad.size() == 3);
    CHECK(bad[0].rfind("acceptance_range", 0) == 0);
    CHECK(bad[1].rfind("selection_sum", 0) == 0);
    CHECK_THROWS_AS(policy_to_plan(pol), RangeViolation);
}

TEST_CASE("stored reference policy of the bundled example composes to a near-stationary chain") {
    const Problem p = parse_problem_text(bundled_paper_example());
    REQUIRE(p.reference_policy);
    const auto m = compose_multi(p.spec.env, policy_to_plan(*p.reference_policy));
    const Vector& v = p.spec.target.values();
    CHECK((m.matrix() * v - v).cwiseAbs().maxCoeff() <= 1e-2);
}

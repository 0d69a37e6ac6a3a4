#include "doctest.h"

#include <future>

#include "safemc/solver.hpp"
#include "safemc/verify.hpp"
#include "test_support.hpp"

using namespace safemc;
using namespace safemc::conic;
using namespace testing_support;

namespace {

ConicProgram scalar_program() {
    ConicProgram p;
    p.add_block("x", 1, 1);
    p.objective = LinearExpr().add(0, 1.0);
    return p;
}

struct Solved {
    FeasibleInstance inst;
    Solution solution;
};

Solved solved_instance(std::uint64_t seed, int n, int m) {
    std::mt19937_64 gen(seed);
    auto inst = feasible_instance(gen, n, m, DecayLmi{0.5, std::nullopt});
    inst.spec = with_lambda(inst.spec, std::min(0.99, inst.slem + 0.05));
    Solution sol = solve(build_program(inst.spec));
    return {std::move(inst), std::move(sol)};
}

} // namespace

TEST_CASE("LP: minimize x subject to x >= 2") {
    ConicProgram p = scalar_program();
    p.add_group({"lower", Cone::Nonnegative, 0, {LinearExpr(-2.0).add(0, 1.0)}});
    const Solution s = solve(p);
    CHECK(s.status == SolveStatus::Optimal);
    CHECK(s.values.at("x")(0, 0) == doctest::Approx(2.0).epsilon(1e-7));
    CHECK(s.objective_value == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("LP: x >= 1 and x <= 0 is infeasible") {
    ConicProgram p = scalar_program();
    p.add_group({"lower", Cone::Nonnegative, 0, {LinearExpr(-1.0).add(0, 1.0)}});
    p.add_group({"upper", Cone::Nonnegative, 0, {LinearExpr().add(0, -1.0)}});
    const Solution s = solve(p);
    CHECK(s.status == SolveStatus::Infeasible);
    CHECK(s.values.empty());
}

TEST_CASE("LP: unconstrained descent is unbounded") {
    ConicProgram p = scalar_program();
    p.add_group({"upper", Cone::Nonnegative, 0, {LinearExpr().add(0, -1.0)}});
    p.objective = LinearExpr().add(0, 1.0);
    CHECK(solve(p).status == SolveStatus::Unbounded);
}

TEST_CASE("SDP: minimize t subject to [[t, 1], [1, t]] psd gives t = 1") {
    ConicProgram p = scalar_program();
    p.add_group({"psd", Cone::Psd, 2, {LinearExpr().add(0, 1.0), LinearExpr(1.0), LinearExpr().add(0, 1.0)}});
    const Solution s = solve(p);
    CHECK(s.status == SolveStatus::Optimal);
    CHECK(s.values.at("x")(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("SDP off-diagonal scaling: [[t, 2], [2, 1]] psd needs t >= 4") {
    ConicProgram p = scalar_program();
    p.add_group({"psd", Cone::Psd, 2, {LinearExpr().add(0, 1.0), LinearExpr(2.0), LinearExpr(1.0)}});
    const Solution s = solve(p);
    CHECK(s.status == SolveStatus::Optimal);
    CHECK(s.values.at("x")(0, 0) == doctest::Approx(4.0).epsilon(1e-6));
}

TEST_CASE("iteration cap surfaces as a non-optimal status") {
    ConicProgram p = scalar_program();
    p.add_group({"psd", Cone::Psd, 2, {LinearExpr().add(0, 1.0), LinearExpr(1.0), LinearExpr().add(0, 1.0)}});
    const Solution s = solve(p, SolverOptions{1e-12, 2, 0.0, false});
    CHECK(s.status != SolveStatus::Optimal);
    CHECK(s.stats.iterations <= 2);
}

TEST_CASE("synthesis on a feasible instance validates and recovers a consistent result") {
    const auto [inst, sol] = solved_instance(41, 4, 2);
    REQUIRE(sol.status == SolveStatus::Optimal);
    const SynthesisResult r = recover_and_validate(inst.spec, sol);
    for (const auto& e : r.report) {
        CAPTURE(e.name);
        CHECK(e.passed);
        CHECK(e.residual <= 1e-6);
    }
    CHECK(r.projection_distance <= 1e-6);
    CHECK((compose_multi(inst.spec.env, r.plan).matrix() - r.m.matrix()).cwiseAbs().maxCoeff() <= 1e-8);
    Vector total = Vector::Zero(4);
    for (const auto& a : r.policy.alpha) total += a;
    CHECK((total.array() - 1.0).abs().maxCoeff() <= 1e-12);
    CHECK((compose_multi(inst.spec.env, policy_to_plan(r.policy)).matrix() - r.m.matrix()).cwiseAbs().maxCoeff() <=
          1e-12);

    const Vector& v = inst.spec.target.values();
    CHECK((r.m.matrix() * v - v).cwiseAbs().maxCoeff() <= 1e-6);
    REQUIRE(r.lyapunov);
    const double lambda = std::get<DecayLmi>(inst.spec.ergodicity).lambda;
    CHECK(contraction_check(r.m.matrix(), v, *r.lyapunov, lambda, 100, 7).passed);

    REQUIRE(r.certificates.size() == 1);
    const auto& sp = inst.spec.safety[0];
    CHECK(certificate_check(sp.evaluate(r.m.matrix()), sp.cap, sp.bound, r.certificates[0].s, r.certificates[0].y,
                            1e-6));

    // Idempotence.
    const SynthesisResult again = recover_and_validate(inst.spec, sol);
    REQUIRE(again.report.size() == r.report.size());
    for (std::size_t i = 0; i < r.report.size(); ++i) {
        CHECK(again.report[i].name == r.report[i].name);
        CHECK(again.report[i].residual == r.report[i].residual);
    }
    CHECK(again.m.matrix() == r.m.matrix());
}

TEST_CASE("injected faults are named") {
    const auto [inst, sol] = solved_instance(42, 4, 2);
    REQUIRE(sol.usable());

    Solution bumped = sol;
    bumped.values["M"](0, 0) += 1e-2;
    try {
        recover_and_validate(inst.spec, bumped);
        FAIL("expected ValidationFailure");
    } catch (const ValidationFailure& e) {
        CHECK(e.names("stochasticity"));
        CHECK(e.names("coupling"));
        CHECK(e.names("composition"));
    }

    // Raise the largest entry of P_2 in column 1 until the budget there is exceeded by 1e-3.
    Solution over = sol;
    std::vector<Matrix> clamped;
    for (const char* k : {"P_1", "P_2"}) clamped.push_back(over.values[k].cwiseMax(0.0).cwiseMin(1.0));
    const double excess = 1.0 + 1e-3 - column_budget(AcceptancePlan(clamped))(0);
    Eigen::Index top = 0;
    clamped[1].col(0).maxCoeff(&top);
    over.values["P_2"](top, 0) = clamped[1](top, 0) + excess;
    try {
        recover_and_validate(inst.spec, over);
        FAIL("expected ValidationFailure");
    } catch (const ValidationFailure& e) {
        CHECK(e.names("budget"));
    }

    Solution empty;
    empty.status = SolveStatus::Infeasible;
    CHECK_THROWS_AS(recover_and_validate(inst.spec, empty), SolverFailure);
}

TEST_CASE("all three ergodicity encodings solve a feasible instance") {
    std::mt19937_64 gen(43);
    auto inst = feasible_instance(gen, 4, 1, Connectivity{1e-6});
    const Vector& v = inst.spec.target.values();
    const double rate = std::min(0.99, inst.slem + 0.05);
    for (const ErgodicityMode& mode : {ErgodicityMode{DecayLmi{rate, std::nullopt}}, ErgodicityMode{Reversible{rate}},
                                       ErgodicityMode{Connectivity{1e-6}}}) {
        CAPTURE(mode_name(mode));
        inst.spec.ergodicity = mode;
        const Solution sol = solve(build_program(inst.spec));
        REQUIRE(sol.usable());
        const SynthesisResult r = recover_and_validate(inst.spec, sol);
        CHECK((r.m.matrix() * v - v).cwiseAbs().maxCoeff() <= 1e-7);
        CHECK(connectivity_check((r.m.matrix().array() > 0.0).cast<double>().matrix()));
        if (std::holds_alternative<Reversible>(mode)) CHECK(detailed_balance_residual(r.m.matrix(), v) <= 1e-8);
    }
}

TEST_CASE("independent solves may run concurrently") {
    std::mt19937_64 gen(44);
    auto inst = feasible_instance(gen, 4, 2, Connectivity{1e-6});
    const ConicProgram program = build_program(inst.spec);
    const Solution reference = solve(program);
    std::vector<std::future<Solution>> runs;
    for (int i = 0; i < 4; ++i) runs.push_back(std::async(std::launch::async, [&] { return solve(program); }));
    for (auto& f : runs) {
        const Solution s = f.get();
        CHECK(s.status == reference.status);
        CHECK(s.values.at("M") == reference.values.at("M"));
    }
}

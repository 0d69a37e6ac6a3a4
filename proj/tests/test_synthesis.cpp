#include "doctest.h"

#include <cmath>

#include "safemc/problem_io.hpp"
#include "safemc/synthesis.hpp"
#include "test_support.hpp"

using namespace safemc;
using namespace testing_support;

namespace {

double worst_violation(const ConicProgram& program, const std::vector<double>& x) {
    double worst = 0.0;
    for (const auto& g : program.groups()) worst = std::max(worst, program.violation(g, x));
    return worst;
}

std::map<std::string, double> group_violations(const ConicProgram& program, const std::vector<double>& x) {
    std::map<std::string, double> out;
    for (const auto& g : program.groups()) out[g.name] = program.violation(g, x);
    return out;
}

} // namespace

TEST_CASE("bundled example program: block sizes and the 16x16 decay LMI") {
    const Problem p = parse_problem_text(bundled_paper_example());
    const ConicProgram program = build_program(p.spec);
    CHECK(program.block("M").size() == 64);
    int plan_total = 0;
    for (int k = 0; k < 5; ++k) plan_total += program.block(blocks::plan(k)).size();
    CHECK(plan_total == 320);
    CHECK(program.block("S_1").size() == 64);
    CHECK(program.block("y_1").size() == 8);
    CHECK(program.block("beta").size() == 40);
    CHECK(program.block("lyapunov").size() == 36);
    CHECK(program.num_variables() == 64 + 320 + 64 + 8 + 40 + 36);

    const auto* lmi = program.find_group("decay_lmi");
    REQUIRE(lmi);
    CHECK(lmi->cone == conic::Cone::Psd);
    CHECK(lmi->psd_dim == 16);
    int psd_groups = 0;
    for (const auto& g : program.groups()) psd_groups += g.cone == conic::Cone::Psd;
    CHECK(psd_groups == 1);
    CHECK(program.parameters.at("lambda") == 0.975);

    // One transition row per forbidden entry.
    int forbidden = 0;
    for (int j = 0; j < 8; ++j) {
        for (int i = 0; i < 8; ++i) forbidden += !p.spec.adjacency.permits_entry(i, j);
    }
    CHECK(static_cast<int>(program.find_group("transition")->rows.size()) == forbidden);
}

TEST_CASE("objective counts off-diagonal motion") {
    const Problem p = parse_problem_text(bundled_paper_example());
    const ConicProgram program = build_program(p.spec);
    std::map<std::string, Matrix> values{{"M", Matrix::Identity(8, 8)}};
    CHECK(program.objective.evaluate(program.pack(values)) == doctest::Approx(0.0));
    values["M"] = Matrix::Constant(8, 8, 1.0 / 8.0);
    CHECK(program.objective.evaluate(program.pack(values)) == doctest::Approx(7.0));
}

TEST_CASE("known feasible points satisfy every emitted constraint") {
    std::mt19937_64 gen(31);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 2 + trial % 5;
        const int m = 1 + trial % 3;
        {
            const auto inst = feasible_instance(gen, n, m, Connectivity{1e-9});
            const ConicProgram program = build_program(inst.spec);
            CHECK(worst_violation(program, program.pack(inst.point)) <= 1e-12);
        }
        {
            auto inst = feasible_instance(gen, n, m, Reversible{0.5});
            inst.spec = with_lambda(inst.spec, std::min(0.999, inst.slem + 1e-6));
            const ConicProgram program = build_program(inst.spec);
            CHECK(worst_violation(program, program.pack(inst.point)) <= 1e-10);
        }
        {
            // F = diag(v)^-1 and P = F certify any rate above the SLEM; the block stores
            // D^-1 P D^-1 with D = diag(v)^-1/2, which is the identity.
            auto inst = feasible_instance(gen, n, m, DecayLmi{0.5, std::nullopt});
            inst.spec = with_lambda(inst.spec, std::min(0.999, inst.slem + 1e-6));
            const ConicProgram program = build_program(inst.spec);
            auto point = inst.point;
            point["lyapunov"] = Matrix::Identity(n, n);
            CHECK(worst_violation(program, program.pack(point)) <= 1e-10);
        }
    }
}

TEST_CASE("rate below the SLEM is rejected by the LMI at the Metropolis point") {
    std::mt19937_64 gen(32);
    auto inst = feasible_instance(gen, 4, 1, DecayLmi{0.5, std::nullopt}, false);
    REQUIRE(inst.slem > 0.05);
    inst.spec = with_lambda(inst.spec, inst.slem * 0.9);
    const ConicProgram program = build_program(inst.spec);
    auto point = inst.point;
    point["lyapunov"] = Matrix::Identity(4, 4);
    CHECK(program.violation(*program.find_group("decay_lmi"), program.pack(point)) > 1e-6);
}

TEST_CASE("scaled decay LMI is a congruence of the textbook block") {
    std::mt19937_64 gen(33);
    const int n = 5;
    auto inst = feasible_instance(gen, n, 2, DecayLmi{0.9, std::nullopt}, false);
    const ConicProgram program = build_program(inst.spec);
    const Vector& v = inst.spec.target.values();
    const Matrix f = v.cwiseInverse().asDiagonal();
    const Matrix a = inst.point["M"] - v * Eigen::RowVectorXd::Ones(n);
    Matrix stored = random_stochastic(gen, n);
    stored = (stored + stored.transpose()).eval();
    auto point = inst.point;
    point["lyapunov"] = stored;

    const Vector root = v.cwiseInverse().cwiseSqrt();
    const Matrix p = root.asDiagonal() * stored * root.asDiagonal();
    Matrix textbook(2 * n, 2 * n);
    textbook << 0.81 * p, a.transpose() * f.transpose(), f * a, f + f.transpose() - p;
    Matrix scale = Matrix::Zero(2 * n, 2 * n);
    scale.diagonal() << root.cwiseInverse(), root.cwiseInverse();
    const Matrix expected = scale * textbook * scale;
    const Matrix emitted = program.psd_matrix(*program.find_group("decay_lmi"), program.pack(point));
    CHECK((emitted - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("explicit non-diagonal F uses the unscaled block") {
    std::mt19937_64 gen(34);
    const int n = 3;
    auto inst = feasible_instance(gen, n, 1, DecayLmi{0.9, std::nullopt}, false);
    Matrix f = Matrix::Identity(n, n) * 2.0;
    f(0, 1) = 0.5;
    inst.spec.ergodicity = DecayLmi{0.9, f};
    CHECK_FALSE(lyapunov_congruence(inst.spec.ergodicity, inst.spec.target));
    const ConicProgram program = build_program(inst.spec);
    auto point = inst.point;
    const Matrix p = Matrix::Identity(n, n);
    point["lyapunov"] = p;
    const Vector& v = inst.spec.target.values();
    const Matrix a = inst.point["M"] - v * Eigen::RowVectorXd::Ones(n);
    Matrix expected(2 * n, 2 * n);
    expected << 0.81 * p, a.transpose() * f.transpose(), f * a, f + f.transpose() - p;
    const Matrix emitted = program.psd_matrix(*program.find_group("decay_lmi"), program.pack(point));
    CHECK((emitted - expected).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("OFF-only point: P = 0, M = G_off") {
    std::mt19937_64 gen(35);
    const int n = 4;
    auto inst = feasible_instance(gen, n, 2, Connectivity{1e-6});
    // Rebuild the environment with the reversible chain as the OFF action.
    std::vector<ColumnStochasticMatrix> on = inst.spec.env.on;
    const Matrix off = inst.point["M"];
    inst.spec.env = EnvironmentModel(std::move(on), ColumnStochasticMatrix::validate(off));
    const ConicProgram program = build_program(inst.spec);
    auto point = inst.point;
    point["P_1"] = Matrix::Zero(n, n);
    point["beta"] = Matrix::Zero(2, n);
    CHECK(worst_violation(program, program.pack(point)) <= 1e-12);
}

TEST_CASE("two-state connectivity example: P_1 = ones gives M = G_1") {
    Matrix g(2, 2);
    g << 0.5, 0.3, 0.5, 0.7;
    Vector v(2);
    v << 0.375, 0.625;
    CHECK((g * v - v).cwiseAbs().maxCoeff() <= 1e-15);
    SynthesisSpec spec{EnvironmentModel({ColumnStochasticMatrix::validate(g)}, ColumnStochasticMatrix::identity(2)),
                       AdjacencyMatrix::full(2), ProbVector::validate(v), {}, Connectivity{1e-6}, std::nullopt};
    const ConicProgram program = build_program(spec);
    Matrix beta(1, 2);
    beta << 1.0, 1.0;
    const auto x = program.pack({{"M", g}, {"P_1", Matrix::Ones(2, 2)}, {"beta", beta}});
    CHECK(worst_violation(program, x) <= 1e-15);
}

TEST_CASE("budget slack reformulation is exact in both directions") {
    std::mt19937_64 gen(36);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + trial % 4;
        const int m = 1 + trial % 3;
        auto inst = feasible_instance(gen, n, m, Connectivity{1e-9}, false);
        const ConicProgram program = build_program(inst.spec);
        const auto* slack = program.find_group("budget_slack");
        const auto* total = program.find_group("budget_total");

        // Plans within budget admit beta = column maxima.
        const AcceptancePlan plan(random_plan(gen, n, m));
        std::map<std::string, Matrix> values;
        Matrix beta(m, n);
        for (int k = 0; k < m; ++k) {
            values[blocks::plan(k)] = plan[k];
            beta.row(k) = plan[k].colwise().maxCoeff();
        }
        values["beta"] = beta;
        auto x = program.pack(values);
        CHECK(program.violation(*slack, x) == 0.0);
        CHECK(program.violation(*total, x) <= 1e-15);

        // Any (P, beta) meeting the slack rows respects the budget.
        Matrix b(m, n);
        for (int j = 0; j < n; ++j) b.col(j) = random_simplex(gen, m) * unit(gen);
        std::map<std::string, Matrix> w{{"beta", b}};
        for (int k = 0; k < m; ++k) {
            Matrix pk(n, n);
            for (int j = 0; j < n; ++j) {
                for (int i = 0; i < n; ++i) pk(i, j) = b(k, j) * unit(gen);
            }
            w[blocks::plan(k)] = pk;
        }
        x = program.pack(w);
        REQUIRE(program.violation(*slack, x) == 0.0);
        REQUIRE(program.violation(*total, x) <= 1e-15);
        std::vector<Matrix> ps;
        for (int k = 0; k < m; ++k) ps.push_back(w[blocks::plan(k)]);
        CHECK(budget_ok(AcceptancePlan(ps)));
    }
}

TEST_CASE("coupling rows encode the composition formula") {
    std::mt19937_64 gen(37);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + trial % 5;
        const int m = 1 + trial % 3;
        auto inst = feasible_instance(gen, n, m, Connectivity{1e-9}, false);
        inst.spec.env = random_env(gen, n, m, 0.0);
        const ConicProgram program = build_program(inst.spec);
        const AcceptancePlan plan(random_plan(gen, n, m));
        std::map<std::string, Matrix> values{{"M", compose_multi(inst.spec.env, plan).matrix()}};
        for (int k = 0; k < m; ++k) values[blocks::plan(k)] = plan[k];
        const auto x = program.pack(values);
        CHECK(program.violation(*program.find_group("coupling"), x) <= 1e-14);
        CHECK(program.violation(*program.find_group("column_sum"), x) <= 1e-14);
    }
}

TEST_CASE("safety dual: constant examples") {
    ConicProgram program;
    SafetySpec zero = SafetySpec::general(SafetySpec::Form::Constant, Matrix::Zero(1, 2), Vector::Ones(2), Vector::Zero(1));
    build_safety_dual(program, zero, {"1", "", std::nullopt});
    const auto x = program.pack({});
    CHECK(worst_violation(program, x) == 0.0);

    // L = [2, 0], cap = (1, 1), bound = 1.5: worst case 2 at e_1, no certificate.
    Matrix l(1, 2);
    l << 2.0, 0.0;
    Vector bound(1);
    bound << 1.5;
    CHECK(worst_case_by_vertices(l.row(0).transpose(), Vector::Ones(2)) == 2.0);
    const Certificate c = closed_form_certificate(l, Vector::Ones(2));
    ConicProgram p2;
    build_safety_dual(p2, SafetySpec::general(SafetySpec::Form::Constant, l, Vector::Ones(2), bound), {"1", "", std::nullopt});
    CHECK(group_violations(p2, p2.pack({{"S_1", c.s}, {"y_1", c.y}}))["safety_1_bound"] == doctest::Approx(0.5));
}

TEST_CASE("safety constructors") {
    Vector d(3);
    d << 0.5, 0.3, 0.9;
    const auto up = SafetySpec::density_upper(d);
    CHECK(up.form == SafetySpec::Form::PlusM);
    CHECK(up.cap == d);
    CHECK(up.bound == d);
    Matrix m = Matrix::Constant(3, 3, 1.0 / 3.0);
    CHECK(up.evaluate(m) == m);

    Vector f = Vector::Constant(3, 0.05);
    const auto rate = SafetySpec::density_rate(f, d);
    CHECK(rate.rows() == 6);
    Matrix expected(6, 3);
    expected << m - Matrix::Identity(3, 3), Matrix::Identity(3, 3) - m;
    CHECK((rate.evaluate(m) - expected).cwiseAbs().maxCoeff() == 0.0);
    CHECK(rate.bound.head(3) == f);
    CHECK(rate.bound.tail(3) == f);

    CHECK_THROWS_AS(SafetySpec::general(SafetySpec::Form::Constant, Matrix::Zero(2, 3), d, Vector::Zero(1)),
                    DimensionMismatch);
    CHECK_THROWS_AS(SafetySpec::density_upper(Vector::Constant(2, 1.5)), RangeViolation);
    CHECK(parse_form(form_name(SafetySpec::Form::MinusM)) == SafetySpec::Form::MinusM);
}

TEST_CASE("reversible mode with uniform target: h h^T = ones / 4") {
    const int n = 4;
    SynthesisSpec spec{EnvironmentModel({ColumnStochasticMatrix::validate(Matrix::Constant(n, n, 0.25))},
                                        ColumnStochasticMatrix::identity(n)),
                       AdjacencyMatrix::full(n), ProbVector::validate(Vector::Constant(n, 0.25)), {},
                       Reversible{0.5}, std::nullopt};
    const ConicProgram program = build_program(spec);
    const auto* upper = program.find_group("spectral_upper");
    REQUIRE(upper);
    // At M = 0 the upper block is lambda I + h h^T.
    const Matrix at_zero = program.psd_matrix(*upper, program.pack({}));
    CHECK((at_zero - (0.5 * Matrix::Identity(n, n) + Matrix::Constant(n, n, 0.25))).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(program.find_group("detailed_balance")->rows.size() == 6);

    Vector v(n);
    v << 0.5, 0.5, 0.0, 0.0;
    spec.target = ProbVector::validate(v);
    CHECK_THROWS_AS(build_program(spec), ZeroTargetEntry);
}

TEST_CASE("connectivity floors exactly the realizable support of the bundled example") {
    Problem p = parse_problem_text(bundled_paper_example());
    p.spec.ergodicity = Connectivity{1e-6};
    const ConicProgram program = build_program(p.spec);
    int expected = 0;
    for (int j = 0; j < 8; ++j) {
        for (int i = 0; i < 8; ++i) {
            bool env = p.spec.env.off(i, j) > 0.0;
            for (const auto& g : p.spec.env.on) env = env || g(i, j) > 0.0;
            expected += env && p.spec.adjacency.matrix()(j, i) == 1.0;
        }
    }
    CHECK(static_cast<int>(program.find_group("connectivity_floor")->rows.size()) == expected);
    CHECK(program.parameters.at("epsilon") == 1e-6);
}

TEST_CASE("structural infeasibility is reported without solving") {
    Matrix sink(2, 2);
    sink << 1.0, 1.0, 0.0, 0.0;
    Vector v(2);
    v << 0.5, 0.5;
    SynthesisSpec spec{EnvironmentModel({ColumnStochasticMatrix::validate(sink)}, ColumnStochasticMatrix::validate(sink)),
                       AdjacencyMatrix::full(2), ProbVector::validate(v), {}, Connectivity{1e-6}, std::nullopt};
    try {
        build_program(spec);
        FAIL("expected InfeasibleByStructure");
    } catch (const InfeasibleByStructure& e) {
        REQUIRE(e.reasons.size() == 1);
        CHECK(e.reasons[0].find("state 2") != std::string::npos);
    }
}

TEST_CASE("specification checks") {
    std::mt19937_64 gen(38);
    auto inst = feasible_instance(gen, 3, 1, DecayLmi{1.0, std::nullopt}, false);
    CHECK_THROWS_AS(inst.spec.check(), RangeViolation);
    inst.spec.ergodicity = Connectivity{0.0};
    CHECK_THROWS_AS(inst.spec.check(), RangeViolation);
    inst.spec.ergodicity = Reversible{-0.1};
    CHECK_THROWS_AS(inst.spec.check(), RangeViolation);
    inst.spec.ergodicity = Connectivity{1e-6};
    CHECK_THROWS_AS(with_lambda(inst.spec, 0.5), Error);
}

TEST_CASE("line search: solve counts and bracketing with a threshold oracle") {
    std::mt19937_64 gen(39);
    const auto inst = feasible_instance(gen, 3, 1, DecayLmi{0.5, std::nullopt}, false);
    const double threshold = 0.61234;
    int calls = 0;
    const FeasibilityOracle oracle = [&](const ConicProgram& program) {
        ++calls;
        return program.parameters.at("lambda") >= threshold;
    };
    const LineSearchResult r = line_search_lambda(inst.spec, 0.0, 1.0, 1e-3, oracle);
    CHECK(r.bisection_solves == static_cast<int>(std::ceil(std::log2(1.0 / 1e-3))));
    CHECK(r.total_solves == r.bisection_solves + 1);
    CHECK(calls == r.total_solves);
    CHECK(r.lambda >= threshold);
    CHECK(r.lambda - threshold <= 1e-3);

    const LineSearchResult r2 = line_search_lambda(inst.spec, 0.5, 0.9, 1e-3, oracle);
    CHECK(r2.bisection_solves == static_cast<int>(std::ceil(std::log2(0.4 / 1e-3))));

    CHECK_THROWS_AS(line_search_lambda(inst.spec, 0.0, 0.6, 1e-3, oracle), InfeasibleAtUpper);
    CHECK_THROWS_AS(line_search_lambda(inst.spec, 0.7, 0.6, 1e-3, oracle), RangeViolation);
}

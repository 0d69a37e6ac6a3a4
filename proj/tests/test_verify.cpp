#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "safemc/problem_io.hpp"
#include "safemc/verify.hpp"
#include "test_support.hpp"

using namespace safemc;
using namespace testing_support;

namespace {

Vector random_cap(std::mt19937_64& gen, int n) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector cap(n);
    do {
        for (int i = 0; i < n; ++i) cap(i) = unit(gen) < 0.2 ? 1.0 : unit(gen);
    } while (cap.sum() < 1.0);
    return cap;
}

} // namespace

TEST_CASE("safety oracle: the box is self-bounding") {
    Vector d(4);
    d << 0.3, 0.5, 1.0, 0.2;
    const SafetyReport r = safety_oracle(Matrix::Identity(4, 4), d, d);
    CHECK(r.safe);
    for (int i = 0; i < 4; ++i) {
        CHECK(r.rows[i].worst == doctest::Approx(std::min(d(i), 1.0)));
        CHECK(r.rows[i].margin >= 0.0);
    }
}

TEST_CASE("safety oracle: unsafe example with witness e_1") {
    Matrix l(1, 2);
    l << 2.0, 0.0;
    Vector bound(1);
    bound << 1.5;
    const SafetyReport r = safety_oracle(l, Vector::Ones(2), bound);
    CHECK_FALSE(r.safe);
    CHECK(r.rows[0].worst == 2.0);
    CHECK(r.rows[0].witness == Vector::Unit(2, 0));
    CHECK(r.rows[0].margin == -0.5);
    CHECK_THROWS_AS(safety_oracle(l, Vector::Constant(2, 0.4), bound), InfeasibleSet);
}

TEST_CASE("greedy fill equals vertex enumeration") {
    std::mt19937_64 gen(61);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 1 + trial % 7;
        const Vector cap = random_cap(gen, n);
        Matrix l(2, n);
        for (int i = 0; i < n; ++i) {
            l(0, i) = normal(gen);
            l(1, i) = std::round(normal(gen)); // ties
        }
        const SafetyReport r = safety_oracle(l, cap, Vector::Zero(2));
        for (int row = 0; row < 2; ++row) {
            CHECK(r.rows[row].worst == doctest::Approx(worst_case_by_vertices(l.row(row).transpose(), cap)).epsilon(1e-12));
            const Vector& w = r.rows[row].witness;
            CHECK(std::abs(w.sum() - 1.0) <= 1e-12);
            CHECK((w.array() <= cap.array() + 1e-15).all());
            CHECK(w.minCoeff() >= 0.0);
        }
    }
}

TEST_CASE("closed-form certificate is tight and passes certificate_check") {
    std::mt19937_64 gen(62);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 1 + trial % 6;
        const Vector cap = random_cap(gen, n);
        Matrix l(3, n);
        for (int r = 0; r < 3; ++r) {
            for (int i = 0; i < n; ++i) l(r, i) = normal(gen);
        }
        const SafetyReport rep = safety_oracle(l, cap, Vector::Zero(3));
        Vector worst(3);
        for (int r = 0; r < 3; ++r) worst(r) = rep.rows[r].worst;
        const Certificate c = closed_form_certificate(l, cap);
        CHECK(certificate_check(l, cap, worst, c.s, c.y, 1e-12));
        CHECK_FALSE(certificate_check(l, cap, worst.array() - 1e-6, c.s, c.y, 1e-9));
    }
}

TEST_CASE("certificate_check trivial cases and injected faults") {
    CHECK(certificate_check(Matrix::Zero(1, 3), Vector::Ones(3), Vector::Zero(1), Matrix::Zero(1, 3), Vector::Zero(1), 0.0));
    Vector d(3);
    d << 0.5, 0.5, 0.5;
    const Matrix l = Matrix::Identity(3, 3);
    const Certificate c = closed_form_certificate(l, d);
    REQUIRE(certificate_check(l, d, d, c.s, c.y, 1e-12));
    Vector y = c.y;
    y(1) -= 1.0;
    CHECK_FALSE(certificate_check(l, d, d, c.s, y, 1e-6));
    Matrix s = c.s;
    s(0, 0) = -0.1;
    CHECK_FALSE(certificate_check(l, d, d, s, c.y, 1e-6));
    CHECK_THROWS_AS(certificate_check(l, d, d, Matrix::Zero(2, 3), c.y, 1e-6), DimensionMismatch);
}

TEST_CASE("certificate search agrees with the oracle on clear-cut instances") {
    std::mt19937_64 gen(63);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 2 + trial % 3;
        const Vector cap = random_cap(gen, n);
        Matrix l(1, n);
        for (int i = 0; i < n; ++i) l(0, i) = normal(gen);
        const double worst = safety_oracle(l, cap, Vector::Zero(1)).rows[0].worst;
        Vector bound(1);
        bound << worst + (unit(gen) < 0.5 ? -1.0 : 1.0) * (0.01 + 0.2 * unit(gen));
        const CertificateSearch found = certificate_exists(l, cap, bound);
        CHECK(found.exists == safety_oracle(l, cap, bound).safe);
        CHECK(found.relaxation == doctest::Approx(worst - bound(0)).epsilon(1e-6));
    }
}

TEST_CASE("contraction check") {
    std::mt19937_64 gen(64);
    const Vector v = random_simplex(gen, 4);
    const Matrix rank_one = v * Eigen::RowVectorXd::Ones(4);
    const ConvergenceReport zero = contraction_check(rank_one, v, Matrix::Identity(4, 4), 0.1, 100);
    CHECK(zero.passed);
    CHECK(zero.lyapunov_ratio_max <= 1e-10);

    const Vector u = Vector::Constant(4, 0.25);
    const ConvergenceReport stuck = contraction_check(Matrix::Identity(4, 4), u, Matrix::Identity(4, 4), 0.9, 100);
    CHECK_FALSE(stuck.passed);
    CHECK(stuck.violations == 100);
    CHECK(stuck.lyapunov_ratio_max == doctest::Approx(1.0));

    // Metropolis chain: P = diag(v)^-1 contracts at the SLEM.
    auto inst = feasible_instance(gen, 5, 1, Connectivity{1e-6}, false);
    const Vector& tv = inst.spec.target.values();
    const Matrix p = tv.cwiseInverse().asDiagonal();
    CHECK(contraction_check(inst.point["M"], tv, p, inst.slem + 1e-9, 200).passed);
    CHECK_FALSE(contraction_check(inst.point["M"], tv, p, inst.slem * 0.1, 2000).passed);

    Vector x0 = Vector::Unit(5, 0);
    const ConvergenceReport traj = trajectory_convergence(inst.point["M"], tv, x0, p, inst.slem + 1e-9, 2000);
    CHECK(traj.passed);
    REQUIRE(traj.t_star);
    // Before t_star the error is still >= 1e-3 somewhere.
    Vector x = x0;
    for (int t = 0; t < *traj.t_star; ++t) {
        CHECK((x - tv).cwiseAbs().maxCoeff() >= 1e-3);
        x = inst.point["M"] * x;
    }
    CHECK((x - tv).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("connectivity") {
    Matrix cycle = Matrix::Zero(3, 3);
    cycle(0, 1) = cycle(1, 2) = cycle(2, 0) = 1.0;
    CHECK(connectivity_check(cycle));
    Matrix blocks = Matrix::Zero(4, 4);
    blocks.topLeftCorner(2, 2).setOnes();
    blocks.bottomRightCorner(2, 2).setOnes();
    CHECK_FALSE(connectivity_check(blocks));
    Matrix chain = Matrix::Zero(3, 3);
    chain(0, 1) = chain(1, 2) = 1.0; // reachable from 0 but not back
    CHECK_FALSE(connectivity_check(chain));
    CHECK(connectivity_check(Matrix::Ones(1, 1)));

    const Problem p = parse_problem_text(bundled_paper_example());
    CHECK(connectivity_check(p.spec.adjacency.matrix()));
}

TEST_CASE("detailed balance residual") {
    std::mt19937_64 gen(65);
    auto inst = feasible_instance(gen, 5, 1, Connectivity{1e-6}, false);
    CHECK(detailed_balance_residual(inst.point["M"], inst.spec.target.values()) <= 1e-15);
    Matrix cyc = Matrix::Zero(3, 3);
    cyc(1, 0) = cyc(2, 1) = cyc(0, 2) = 1.0;
    CHECK(detailed_balance_residual(cyc, Vector::Constant(3, 1.0 / 3.0)) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("Monte Carlo vs analytic") {
    // Deterministic chain: the ensemble equals the analytic history exactly.
    Matrix shift = Matrix::Zero(3, 3);
    shift(1, 0) = shift(2, 1) = shift(0, 2) = 1.0;
    const auto g = ColumnStochasticMatrix::validate(shift);
    const EnvironmentModel env({g}, ColumnStochasticMatrix::identity(3));
    const DecisionPolicy always{{Vector::Ones(3)}, {Matrix::Ones(3, 3)}};
    Vector x(3);
    x << 0.5, 0.3, 0.2;
    const ProbVector x0 = ProbVector::validate(x);
    const DensityHistory h = run_ensemble({1000, 12, 1, x0, true, 0}, always, env);
    const McComparison c = compare_mc_analytic(h, g, x0, 1000, Vector::Constant(3, 0.5));
    CHECK(*std::max_element(c.max_deviation.begin(), c.max_deviation.end()) <= 1e-15);
    CHECK(c.band_coverage == 1.0);
    CHECK(c.analytic_safe);
    CHECK(c.safety_flags.empty());
    const McComparison tight = compare_mc_analytic(h, g, x0, 1000, Vector::Constant(3, 0.4));
    CHECK_FALSE(tight.analytic_safe);
    CHECK_FALSE(tight.safety_flags.empty());
}

TEST_CASE("Monte Carlo deviation shrinks like one over root N") {
    std::mt19937_64 gen(66);
    const int n = 4;
    const auto env = random_env(gen, n, 2, 0.0);
    const AcceptancePlan plan(random_plan(gen, n, 2));
    const DecisionPolicy pol = extract_policy(plan);
    const auto m = compose_multi(env, plan);
    const ProbVector x0 = ProbVector::validate(Vector::Unit(n, 0));
    std::vector<double> medians;
    for (int agents : {500, 8000}) {
        std::vector<double> devs;
        for (std::uint64_t seed = 0; seed < 9; ++seed) {
            const DensityHistory h = run_ensemble({agents, 30, seed, x0, true, 0}, pol, env);
            const McComparison c = compare_mc_analytic(h, m, x0, agents);
            devs.push_back(*std::max_element(c.max_deviation.begin(), c.max_deviation.end()));
        }
        std::nth_element(devs.begin(), devs.begin() + 4, devs.end());
        medians.push_back(devs[4]);
    }
    // N grows 16x, so the deviation should shrink about 4x; allow +-50%.
    const double ratio = medians[0] / medians[1];
    CHECK(ratio >= 2.0);
    CHECK(ratio <= 6.0);
}

TEST_CASE("report json schema") {
    const std::vector<CheckResult> checks{{"a", true, 0.0, nullptr}, {"b", false, 2.5, {{"row", 1}}}};
    const auto j = report_json(checks);
    CHECK(j["all_passed"] == false);
    CHECK(j["checks"][1]["check"] == "b");
    CHECK(j["checks"][1]["residual"] == 2.5);
    CHECK(j["checks"][1]["witness"]["row"] == 1);
    CHECK(report_json({checks[0]})["all_passed"] == true);
}

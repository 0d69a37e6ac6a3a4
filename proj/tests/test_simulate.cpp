#include "doctest.h"

#include <cmath>
#include <sstream>

#include "safemc/problem_io.hpp"
#include "safemc/random.hpp"
#include "safemc/simulate.hpp"
#include "test_support.hpp"

using namespace safemc;
using namespace testing_support;

namespace {

double binomial_sigma(double p, double samples) {
    return std::sqrt(p * (1.0 - p) / samples);
}

DecisionPolicy single_action(const Vector& alpha, const Matrix& q) {
    return DecisionPolicy{{alpha}, {q}};
}

} // namespace

TEST_CASE("sample_column: half-open intervals in index order") {
    Matrix m(4, 1);
    m << 0.25, 0.0, 0.5, 0.25;
    CHECK(sample_column(m, 0, 0.0) == 0);
    CHECK(sample_column(m, 0, 0.2499999) == 0);
    CHECK(sample_column(m, 0, 0.25) == 2); // zero-mass index 1 is never chosen
    CHECK(sample_column(m, 0, 0.75) == 3);
    CHECK(sample_column(m, 0, std::nextafter(1.0, 0.0)) == 3);

    // Columns that sum to slightly less than one keep the overflow on the last positive entry.
    Matrix short_col(3, 1);
    short_col << 0.3, 0.7 - 1e-15, 0.0;
    CHECK(sample_column(short_col, 0, std::nextafter(1.0, 0.0)) == 1);
}

TEST_CASE("single-action step: trivial acceptance matrices") {
    std::mt19937_64 gen(51);
    const auto g = ColumnStochasticMatrix::validate(random_stochastic(gen, 4));
    const auto all = SingleActionPolicy::validate(Matrix::Ones(4, 4));
    const auto none = SingleActionPolicy::validate(Matrix::Identity(4, 4));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const int j = trial % 4;
        const SingleDraws d{unit(gen), unit(gen)};
        const SingleStep on = step_agent_single(j, all, g, d);
        CHECK(on.mode == Mode::On);
        CHECK(on.next == sample_column(g.matrix(), j, d.observe));
        const SingleStep stay = step_agent_single(j, none, g, d);
        CHECK(stay.next == j);
        CHECK((stay.mode == Mode::On) == (on.next == j));
    }
}

TEST_CASE("single-action step: ON frequency for a deterministic observation is binomial") {
    Matrix g = Matrix::Identity(2, 2);
    g(0, 0) = 0.0;
    g(1, 0) = 1.0;
    Matrix k = Matrix::Ones(2, 2);
    k(1, 0) = 0.3;
    const auto gm = ColumnStochasticMatrix::validate(g);
    const auto km = SingleActionPolicy::validate(k);
    const int draws = 1000000;
    int on = 0;
    for (int s = 0; s < draws; ++s) {
        const auto d = draws_at(5, s, 0);
        on += step_agent_single(0, km, gm, {d.observe, d.accept}).mode == Mode::On;
    }
    CHECK(std::abs(on / double(draws) - 0.3) <= 3.0 * binomial_sigma(0.3, draws));
}

TEST_CASE("general step: trivial policies") {
    std::mt19937_64 gen(52);
    const auto env = random_env(gen, 3, 2);
    Matrix unit_g = Matrix::Zero(3, 3);
    unit_g.row(2).setOnes();
    const EnvironmentModel det({ColumnStochasticMatrix::validate(unit_g), env.on[1]}, env.off);

    DecisionPolicy always{{Vector::Ones(3), Vector::Zero(3)}, {Matrix::Ones(3, 3), Matrix::Zero(3, 3)}};
    DecisionPolicy never{{Vector::Zero(3), Vector::Zero(3)}, {Matrix::Ones(3, 3), Matrix::Ones(3, 3)}};
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const GeneralDraws d{unit(gen), unit(gen), unit(gen), unit(gen)};
        const int j = trial % 3;
        const GeneralStep a = step_agent_general(j, always, det, d);
        CHECK(a.mode == Mode::On);
        CHECK(a.action == 0);
        CHECK(a.next == 2);
        const GeneralStep o = step_agent_general(j, never, det, d);
        CHECK(o.mode == Mode::Off);
        CHECK(o.action == -1);
        CHECK(o.next == sample_column(env.off.matrix(), j, d.fallback));
    }
}

TEST_CASE("general step: per-state cumulative selection thresholds") {
    const EnvironmentModel env({ColumnStochasticMatrix::identity(2), ColumnStochasticMatrix::identity(2)},
                               ColumnStochasticMatrix::identity(2));
    DecisionPolicy pol{{Vector::Constant(2, 0.25), Vector::Constant(2, 0.5)}, {Matrix::Ones(2, 2), Matrix::Ones(2, 2)}};
    auto pick = [&](double select) { return step_agent_general(0, pol, env, {select, 0.5, 0.5, 0.5}).action; };
    CHECK(pick(0.0) == 0);
    CHECK(pick(std::nextafter(0.25, 0.0)) == 0);
    CHECK(pick(0.25) == 1);
    CHECK(pick(std::nextafter(0.75, 0.0)) == 1);
    CHECK(pick(0.75) == -1);
}

TEST_CASE("ON frequency equals the sum over actions of alpha Q G") {
    const Problem p = parse_problem_text(bundled_paper_example());
    REQUIRE(p.reference_policy);
    const DecisionPolicy& pol = *p.reference_policy;
    const int j = 0;
    const int draws = 1000000;
    std::vector<int> on_by_action(pol.m(), 0);
    for (int s = 0; s < draws; ++s) {
        const GeneralStep st = step_agent_general(j, pol, p.spec.env, draws_at(17, s, 0));
        if (st.mode == Mode::On) ++on_by_action[st.action];
    }
    for (int k = 0; k < pol.m(); ++k) {
        const double expected =
            pol.alpha[k](j) * pol.q[k].col(j).cwiseProduct(p.spec.env.on[k].matrix().col(j)).sum();
        CAPTURE(k);
        CHECK(std::abs(on_by_action[k] / double(draws) - expected) <= 3.0 * binomial_sigma(expected, draws) + 1e-12);
    }
}

TEST_CASE("counter draws are pure functions of (seed, stream, step)") {
    const GeneralDraws a = draws_at(9, 123, 45);
    const GeneralDraws b = draws_at(9, 123, 45);
    CHECK(a.select == b.select);
    CHECK(a.fallback == b.fallback);
    CHECK(a.select != draws_at(10, 123, 45).select);
    CHECK(a.select != draws_at(9, 124, 45).select);
    CHECK(a.select != draws_at(9, 123, 46).select);
    CHECK(a.select == rng::uniform(9, 123, 1 + 4 * 45));

    // Uniformity sanity: mean and variance of 10^5 draws.
    double sum = 0.0;
    double sq = 0.0;
    const int count = 100000;
    for (int c = 0; c < count; ++c) {
        const double u = rng::uniform(1, 2, c);
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
        sq += u * u;
    }
    CHECK(std::abs(sum / count - 0.5) <= 4.0 * std::sqrt(1.0 / 12.0 / count));
    CHECK(std::abs(sq / count - sum * sum / count / count - 1.0 / 12.0) <= 2e-3);
}

TEST_CASE("exact counts: largest remainder") {
    Vector x(8);
    x << 0.5, 0, 0.5, 0, 0, 0, 0, 0;
    const auto c = exact_counts(ProbVector::validate(x), 3000);
    CHECK(c[0] == 1500);
    CHECK(c[2] == 1500);
    Vector thirds = Vector::Constant(3, 1.0 / 3.0);
    const auto t = exact_counts(ProbVector::validate(thirds), 10);
    CHECK(t == std::vector<int>{4, 3, 3});
    Vector y(3);
    y << 0.15, 0.26, 0.59;
    CHECK(exact_counts(ProbVector::validate(y), 10) == std::vector<int>{1, 3, 6});
}

TEST_CASE("ensemble: initial counts, stationarity of the identity and thread independence") {
    std::mt19937_64 gen(53);
    const int n = 5;
    const auto env = random_env(gen, n, 2);
    const DecisionPolicy pol = extract_policy(AcceptancePlan(random_plan(gen, n, 2)));
    const ProbVector x0 = ProbVector::validate(random_simplex(gen, n));

    EnsembleConfig cfg{997, 40, 77, x0, true, 1};
    const DensityHistory one = run_ensemble(cfg, pol, env);
    cfg.threads = 3;
    const DensityHistory three = run_ensemble(cfg, pol, env);
    cfg.threads = 8;
    const DensityHistory eight = run_ensemble(cfg, pol, env);
    CHECK(one.to_csv() == three.to_csv());
    CHECK(one.to_csv() == eight.to_csv());
    CHECK(one.steps() == 41);
    for (const auto& x : one.density) {
        CHECK(std::abs(x.sum() - 1.0) <= 1e-12);
        CHECK(x.minCoeff() >= 0.0);
    }
    const auto counts = exact_counts(x0, 997);
    for (int i = 0; i < n; ++i) CHECK(one.density[0](i) * 997 == doctest::Approx(counts[i]));

    cfg.seed = 78;
    CHECK(run_ensemble(cfg, pol, env).to_csv() != one.to_csv());

    // No ON actions and an identity OFF action freeze the ensemble.
    const EnvironmentModel frozen(env.on, ColumnStochasticMatrix::identity(n));
    const DecisionPolicy idle{{Vector::Zero(n), Vector::Zero(n)}, {Matrix::Zero(n, n), Matrix::Zero(n, n)}};
    const DensityHistory still = run_ensemble(cfg, idle, frozen);
    for (const auto& x : still.density) CHECK(x == still.density[0]);
}

TEST_CASE("ensemble: sampled initial states follow x0") {
    Vector x(3);
    x << 0.2, 0.3, 0.5;
    const EnvironmentModel env({ColumnStochasticMatrix::identity(3)}, ColumnStochasticMatrix::identity(3));
    EnsembleConfig cfg{200000, 1, 3, ProbVector::validate(x), false, 0};
    const DensityHistory h = run_ensemble(cfg, single_action(Vector::Zero(3), Matrix::Zero(3, 3)), env);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(h.density[0](i) - x(i)) <= 4.0 * binomial_sigma(x(i), 200000));
}

TEST_CASE("ensemble converges to the stationary distribution") {
    std::mt19937_64 gen(54);
    const int n = 4;
    auto inst = feasible_instance(gen, n, 1, Connectivity{1e-6}, false);
    const DecisionPolicy pol = extract_policy(AcceptancePlan({inst.point["P_1"]}));
    const Vector& v = inst.spec.target.values();
    const int agents = 20000;
    EnsembleConfig cfg{agents, 200, 5, ProbVector::validate(Vector::Unit(n, 0)), true, 0};
    const DensityHistory h = run_ensemble(cfg, pol, inst.spec.env);
    // Average of the last 50 steps; correlated samples, so allow a wide band.
    Vector mean = Vector::Zero(n);
    for (int t = 151; t <= 200; ++t) mean += h.density[t];
    mean /= 50.0;
    for (int i = 0; i < n; ++i) CHECK(std::abs(mean(i) - v(i)) <= 3.0 * binomial_sigma(v(i), agents));
}

TEST_CASE("analytic propagation") {
    std::mt19937_64 gen(55);
    const Vector v = random_simplex(gen, 4);
    const ProbVector x0 = ProbVector::validate(random_simplex(gen, 4));
    const DensityHistory flat = propagate_analytic(ColumnStochasticMatrix::identity(4), x0, 5);
    CHECK(flat.steps() == 6);
    for (const auto& x : flat.density) CHECK(x == x0.values());
    const auto rank_one = ColumnStochasticMatrix::validate(v * Eigen::RowVectorXd::Ones(4));
    CHECK((propagate_analytic(rank_one, x0, 1).density[1] - v).cwiseAbs().maxCoeff() <= 1e-15);
    CHECK(flat.stddev.empty());
}

TEST_CASE("transition estimate matches the composed chain") {
    std::mt19937_64 gen(56);
    const auto env = random_env(gen, 4, 2);
    const AcceptancePlan plan(random_plan(gen, 4, 2));
    const TransitionEstimate est = estimate_transition_matrix(extract_policy(plan), env, 1000000, 99);
    const Matrix m = compose_multi(env, plan).matrix();
    for (int j = 0; j < 4; ++j) {
        for (int i = 0; i < 4; ++i) CHECK(std::abs(est.m_hat(i, j) - m(i, j)) <= std::max(5e-3, 4.0 * est.stderr_hat(i, j)));
    }
    CHECK(est.m_hat == estimate_transition_matrix(extract_policy(plan), env, 1000000, 99, 1).m_hat);

    const EnvironmentModel idle_env(env.on, ColumnStochasticMatrix::identity(4));
    const TransitionEstimate idle = estimate_transition_matrix(extract_policy(AcceptancePlan::zeros(4, 2)), idle_env, 1000, 1);
    CHECK(idle.m_hat == Matrix::Identity(4, 4));
}

TEST_CASE("csv layout") {
    DensityHistory h;
    Vector a(2);
    a << 0.5, 0.5;
    Vector b(2);
    b << 1.0 / 3.0, 2.0 / 3.0;
    h.density = {a, b};
    CHECK(h.to_csv() == "t,x1,x2\n0,0.5,0.5\n1,0.3333333333,0.6666666667\n");
    h.stddev = {Vector::Zero(2), Vector::Constant(2, 0.125)};
    CHECK(h.to_csv() == "t,x1,x2,s1,s2\n0,0.5,0.5,0,0\n1,0.3333333333,0.6666666667,0.125,0.125\n");
}

TEST_CASE("thread count resolution") {
    CHECK(resolve_threads(3) == 3);
    CHECK(resolve_threads(0) >= 1);
}

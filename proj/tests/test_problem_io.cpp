#include "doctest.h"

#include "safemc/problem_io.hpp"
#include "test_support.hpp"

using namespace safemc;
using namespace testing_support;
using nlohmann::json;

namespace {

Problem small_problem(std::uint64_t seed, ErgodicityMode mode) {
    std::mt19937_64 gen(seed);
    auto inst = feasible_instance(gen, 3, 2, mode);
    Problem p{inst.spec, ProbVector::validate(Vector::Unit(3, 0)), {}, {}, std::nullopt, "small", json::object()};
    return p;
}

InputError expect_input_error(const json& doc) {
    try {
        parse_problem(doc);
    } catch (const InputError& e) {
        return e;
    }
    FAIL("expected InputError");
    throw std::logic_error("unreachable");
}

} // namespace

TEST_CASE("bundled example") {
    const Problem p = parse_problem_text(bundled_paper_example());
    CHECK(p.spec.n() == 8);
    CHECK(p.spec.m() == 5);
    const auto* decay = std::get_if<DecayLmi>(&p.spec.ergodicity);
    REQUIRE(decay);
    CHECK(decay->lambda == 0.975);
    CHECK_FALSE(decay->f);
    REQUIRE(p.spec.safety.size() == 1);
    Vector d(8);
    d << 1, 0.15, 1, 0.12, 0.12, 1, 0.4, 1;
    CHECK(p.spec.safety[0].bound == d);
    CHECK(p.spec.safety[0].cap == d);
    CHECK(p.spec.safety[0].form == SafetySpec::Form::PlusM);
    Vector x0(8);
    x0 << 0.5, 0, 0.5, 0, 0, 0, 0, 0;
    CHECK(p.x0.values() == x0);
    for (const auto& g : p.spec.env.on) {
        for (int j = 0; j < 8; ++j) CHECK(std::abs(g.matrix().col(j).sum() - 1.0) <= 1e-12);
    }
    CHECK(p.spec.env.off.matrix() == Matrix::Identity(8, 8));
    CHECK(p.simulation.num_agents == 3000);
    CHECK(p.simulation.t_max == 300);
    CHECK(p.reference_policy);
}

TEST_CASE("input errors carry JSON pointers") {
    json doc = json::parse(bundled_paper_example());

    SUBCASE("column sums of 0.98 without renormalization") {
        json bad = doc;
        bad["renormalize"] = false;
        for (auto& row : bad["G"][0]) {
            for (auto& x : row) x = x.get<double>() * 0.98;
        }
        const InputError e = expect_input_error(bad);
        CHECK(e.kind == InputError::Kind::Stochasticity);
        CHECK(e.pointer == "/G/0");
        CHECK(std::string(e.kind_name()) == "StochasticityError");
    }
    SUBCASE("target of the wrong length") {
        json bad = doc;
        bad["v"].erase(bad["v"].size() - 1);
        const InputError e = expect_input_error(bad);
        CHECK(e.kind == InputError::Kind::Dimension);
        CHECK(e.pointer == "/v");
        CHECK(std::string(e.kind_name()) == "DimensionError");
    }
    SUBCASE("missing convention") {
        json bad = doc;
        bad.erase("convention");
        const InputError e = expect_input_error(bad);
        CHECK(e.kind == InputError::Kind::Parse);
        CHECK(e.pointer == "/convention");
    }
    SUBCASE("row-stochastic convention is rejected") {
        json bad = doc;
        bad["convention"] = "row_stochastic";
        CHECK(expect_input_error(bad).pointer == "/convention");
    }
    SUBCASE("ragged matrix row") {
        json bad = doc;
        bad["A_a"][3].erase(0);
        const InputError e = expect_input_error(bad);
        CHECK(e.kind == InputError::Kind::Dimension);
        CHECK(e.pointer == "/A_a/3");
    }
    SUBCASE("non-binary adjacency") {
        json bad = doc;
        bad["A_a"][0][1] = 0.5;
        CHECK(expect_input_error(bad).pointer == "/A_a");
    }
    SUBCASE("unknown ergodicity mode") {
        json bad = doc;
        bad["ergodicity"]["mode"] = "fast";
        CHECK(expect_input_error(bad).pointer == "/ergodicity/mode");
    }
    SUBCASE("decay rate outside [0, 1)") {
        json bad = doc;
        bad["ergodicity"]["lambda"] = 1.0;
        CHECK(expect_input_error(bad).pointer == "/ergodicity");
    }
    SUBCASE("string where a number belongs") {
        json bad = doc;
        bad["safety"][0]["d"][2] = "one";
        CHECK(expect_input_error(bad).pointer == "/safety/0/d/2");
    }
    SUBCASE("malformed text") {
        CHECK_THROWS_AS(parse_problem_text("{ not json"), InputError);
    }
}

TEST_CASE("problem round trip through the canonical form") {
    for (const ErgodicityMode& mode : {ErgodicityMode{DecayLmi{0.9, std::nullopt}}, ErgodicityMode{Reversible{0.8}},
                                       ErgodicityMode{Connectivity{1e-5}}}) {
        Problem p = small_problem(71, mode);
        p.spec.safety.push_back(SafetySpec::density_rate(Vector::Constant(3, 0.1), Vector::Constant(3, 0.9)));
        p.simulation.seed = 1234567890123ULL;
        const json once = write_problem(p);
        const Problem back = parse_problem(once);
        CHECK(write_problem(back) == once);
        CHECK(spec_hash(back) == spec_hash(p));
        CHECK(back.spec.env.on[1].matrix() == p.spec.env.on[1].matrix());
        CHECK(back.spec.safety[1].evaluate(Matrix::Identity(3, 3)) == p.spec.safety[1].evaluate(Matrix::Identity(3, 3)));
        CHECK(back.spec.ergodicity.index() == p.spec.ergodicity.index());
    }
    const Problem bundled = parse_problem_text(bundled_paper_example());
    const json canon = write_problem(bundled);
    CHECK(write_problem(parse_problem(canon)) == canon);
}

TEST_CASE("spec hash tracks content") {
    Problem p = small_problem(72, Connectivity{1e-6});
    const std::string h = spec_hash(p);
    CHECK(h.size() == 16);
    p.spec.ergodicity = Connectivity{2e-6};
    CHECK(spec_hash(p) != h);
}

TEST_CASE("policy file round trip") {
    std::mt19937_64 gen(73);
    const Problem p = small_problem(73, DecayLmi{0.9, std::nullopt});
    const AcceptancePlan plan(random_plan(gen, 3, 2));
    const auto m = compose_multi(p.spec.env, plan);
    SynthesisResult r{m, plan, extract_policy(plan), {{Matrix::Ones(3, 3), Vector::Zero(3)}}, Matrix::Identity(3, 3),
                      {{"composition", 1e-12, 1e-6, true}}, 0.0};
    Solution s;
    s.status = SolveStatus::Optimal;
    const json doc = write_policy(p, r, s);
    CHECK(doc["convention"] == "column_stochastic");
    CHECK(doc["metadata"]["spec_hash"] == spec_hash(p));
    CHECK(doc["metadata"]["solver"]["status"] == "optimal");
    const PolicyFile back = parse_policy(doc);
    CHECK(back.m == m.matrix());
    for (int k = 0; k < 2; ++k) {
        CHECK(back.plan[k] == plan[k]);
        CHECK(back.policy.q[k] == r.policy.q[k]);
        CHECK(back.policy.alpha[k] == r.policy.alpha[k]);
    }
    json bad = doc;
    bad["Q"].erase(1);
    CHECK_THROWS_AS(parse_policy(bad), InputError);
}

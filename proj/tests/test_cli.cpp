#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "safemc/cli.hpp"
#include "test_support.hpp"

using namespace safemc;
using namespace testing_support;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("safemc_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    args.insert(args.begin(), "safemc");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(f), {});
}

void write(const std::string& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
}

std::string small_problem_file(const TempDir& dir, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    auto inst = feasible_instance(gen, 4, 2, DecayLmi{0.5, std::nullopt});
    inst.spec = with_lambda(inst.spec, std::min(0.99, inst.slem + 0.05));
    // x0 must start inside the safe box for the trajectory to stay there.
    const Vector x0 = 0.5 * (inst.spec.target.values() + Vector::Constant(4, 0.25));
    Problem p{inst.spec, ProbVector::validate(x0), {}, {500, 30, 3, true}, std::nullopt, "", json::object()};
    const std::string path = dir.file("problem.json");
    write(path, write_problem(p).dump(2));
    return path;
}

} // namespace

TEST_CASE("synth, verify and simulate on a small problem") {
    TempDir dir;
    const std::string problem = small_problem_file(dir, 81);
    const std::string policy = dir.file("policy.json");

    const Run synth = cli({"synth", problem, "-o", policy});
    REQUIRE_MESSAGE(synth.code == exit_code::ok, synth.err);
    CHECK(json::parse(synth.out)["status"] == "optimal");

    const Run verify = cli({"verify", policy, problem});
    CHECK(verify.code == exit_code::ok);
    const json report = json::parse(verify.out);
    CHECK(report["all_passed"] == true);
    std::set<std::string> names;
    for (const auto& c : report["checks"]) names.insert(c["check"].get<std::string>());
    for (const char* expected : {"policy_invariants", "plan_consistency", "budget", "composition", "stochasticity",
                                 "transition", "stationarity", "safety_1", "certificate_1", "connectivity",
                                 "contraction"}) {
        CHECK(names.count(expected) == 1);
    }
    CHECK(cli({"verify", policy, problem}).out == verify.out);

    const std::string a = dir.file("a.csv");
    const std::string b = dir.file("b.csv");
    CHECK(cli({"simulate", policy, problem, "-o", a, "--seed", "7"}).code == exit_code::ok);
    CHECK(cli({"simulate", policy, problem, "-o", b, "--seed", "7"}).code == exit_code::ok);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a).rfind("t,x1,x2,x3,x4,s1,s2,s3,s4\n", 0) == 0);
    CHECK(cli({"simulate", policy, problem, "-o", b, "--seed", "8"}).code == exit_code::ok);
    CHECK(slurp(a) != slurp(b));

    // Corrupt one acceptance probability.
    json doc = json::parse(slurp(policy));
    doc["Q"][0][1][0] = 1.5;
    const std::string corrupted = dir.file("corrupted.json");
    write(corrupted, doc.dump());
    const Run bad = cli({"verify", corrupted, problem});
    CHECK(bad.code == exit_code::verify_failed);
    const json bad_report = json::parse(bad.out);
    CHECK(bad_report["all_passed"] == false);
    bool named = false;
    for (const auto& c : bad_report["checks"]) {
        if (c["check"] == "policy_invariants") {
            CHECK(c["passed"] == false);
            named = c["witness"][0].get<std::string>().rfind("acceptance_range", 0) == 0;
        }
    }
    CHECK(named);
}

TEST_CASE("decay-rate search") {
    TempDir dir;
    const std::string problem = small_problem_file(dir, 82);
    const Run r = cli({"rates", problem, "--lo", "0.0", "--hi", "0.99", "--tol", "0.01"});
    REQUIRE_MESSAGE(r.code == exit_code::ok, r.err);
    const json out = json::parse(r.out);
    CHECK(out["bisection_solves"] == 7);
    CHECK(out["total_solves"] == 8);
    CHECK(out["lambda"].get<double>() <= 0.99);
}

TEST_CASE("rank-one target under a forbidden transition is infeasible") {
    TempDir dir;
    std::mt19937_64 gen(83);
    auto inst = feasible_instance(gen, 3, 1, DecayLmi{0.0, std::nullopt}, false);
    Matrix adj = Matrix::Ones(3, 3);
    adj(0, 1) = 0.0;
    inst.spec.adjacency = AdjacencyMatrix::validate(adj);
    Problem p{inst.spec, ProbVector::validate(Vector::Unit(3, 0)), {}, {}, std::nullopt, "", json::object()};
    const std::string path = dir.file("p.json");
    write(path, write_problem(p).dump());
    const Run r = cli({"synth", path, "-o", dir.file("out.json")});
    CHECK(r.code == exit_code::solver_failure);
    // SCS may stop "optimal" on a near-feasible point with an exploding Lyapunov block; validation rejects it.
    const std::string error = json::parse(r.err)["error"];
    CHECK((error == "SolverFailure" || error == "ValidationFailure"));
    CHECK_FALSE(fs::exists(dir.file("out.json")));
}

TEST_CASE("input errors exit with code 2 and JSON on stderr") {
    TempDir dir;
    const Run missing = cli({"verify", dir.file("none.json"), "@paper"});
    CHECK(missing.code == exit_code::input_error);
    CHECK(json::parse(missing.err).contains("error"));

    json doc = json::parse(bundled_paper_example());
    doc["v"].erase(0);
    write(dir.file("bad.json"), doc.dump());
    const Run bad = cli({"synth", dir.file("bad.json"), "-o", dir.file("x.json")});
    CHECK(bad.code == exit_code::input_error);
    const json err = json::parse(bad.err);
    CHECK(err["error"] == "DimensionError");
    CHECK(err["pointer"] == "/v");

    CHECK(cli({"frobnicate"}).code == exit_code::input_error);
    CHECK(cli({}).code == exit_code::input_error);
}

TEST_CASE("installed binary propagates exit codes") {
    TempDir dir;
    const std::string cmd = std::string(SAFEMC_CLI_PATH) + " verify " + dir.file("none.json") + " @paper 2> " +
                            dir.file("err.txt");
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == exit_code::input_error);
    CHECK(json::parse(slurp(dir.file("err.txt"))).contains("error"));
}

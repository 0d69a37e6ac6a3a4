#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "safemc/chain.hpp"
#include "safemc/conic_program.hpp"
#include "safemc/synthesis.hpp"

namespace safemc {

enum class SolveStatus { Optimal, Feasible, Infeasible, Unbounded, NumericalFailure };

const char* status_name(SolveStatus status);

struct SolverOptions {
    double eps = 1e-8;
    int max_iters = 200000;
    double time_limit_secs = 0.0; // 0 disables the limit
    bool verbose = false;
};

struct SolverStats {
    int iterations = 0;
    double solve_time_ms = 0.0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double gap = 0.0;
    std::string message;
};

struct Solution {
    SolveStatus status = SolveStatus::NumericalFailure;
    std::map<std::string, Matrix> values; // empty unless Optimal or Feasible
    double objective_value = 0.0;
    SolverStats stats;

    bool usable() const { return status == SolveStatus::Optimal || status == SolveStatus::Feasible; }
};

/// Each call owns its workspace; concurrent calls on distinct programs are safe.
Solution solve(const conic::ConicProgram& program, const SolverOptions& options = {});

struct ResidualEntry {
    std::string name;
    double residual = 0.0;
    double tol = 0.0;
    bool passed = true;
};

struct SafetyCertificate {
    Matrix s;
    Vector y;
};

struct SynthesisResult {
    ColumnStochasticMatrix m;
    AcceptancePlan plan;
    DecisionPolicy policy;
    std::vector<SafetyCertificate> certificates;
    std::optional<Matrix> lyapunov;
    std::vector<ResidualEntry> report;
    double projection_distance = 0.0;
};

/// Strict positivity threshold for the Lyapunov matrix: lambda_min >= 1e-9 * trace / n.
inline constexpr double lyapunov_definiteness = 1e-9;

/// Checks the raw solver values against every constraint of the feasible set, projects
/// them onto exact probability semantics and extracts the executable policy.
/// Throws SolverFailure for unusable solutions and ValidationFailure listing every failed check.
SynthesisResult recover_and_validate(const SynthesisSpec& spec, const Solution& sol, double tol = 1e-6);

/// Oracle for line_search_lambda backed by solve().
FeasibilityOracle solver_oracle(const SolverOptions& options = {});

} // namespace safemc

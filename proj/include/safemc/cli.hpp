#pragma once

#include <ostream>
#include <vector>

#include "safemc/problem_io.hpp"
#include "safemc/solver.hpp"
#include "safemc/verify.hpp"

namespace safemc {

struct SynthOutcome {
    Solution solution;
    SynthesisResult result;
};

/// build_program -> solve -> recover_and_validate. Throws SolverFailure or ValidationFailure.
SynthOutcome synthesize(const Problem& problem);

/// Every invariant a policy file must satisfy against its problem; pure in its inputs.
std::vector<CheckResult> verify_policy(const PolicyFile& policy, const Problem& problem);

DensityHistory simulate_policy(const PolicyFile& policy, const Problem& problem);

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int verify_failed = 1;
inline constexpr int input_error = 2;
inline constexpr int solver_failure = 3;
} // namespace exit_code

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace safemc

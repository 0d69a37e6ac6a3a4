#pragma once

// Problem and policy files. Matrices are stored as arrays of rows (row-major) and carry the
// column-stochastic meaning M[i][j] = P(next = i | current = j); the mandatory top-level field
// "convention": "column_stochastic" records this.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "safemc/chain.hpp"
#include "safemc/solver.hpp"
#include "safemc/synthesis.hpp"

namespace safemc {

class InputError : public Error {
public:
    enum class Kind { Parse, Dimension, Stochasticity };

    InputError(Kind kind, std::string pointer, const std::string& message);
    Kind kind;
    std::string pointer; // JSON pointer of the offending value

    const char* kind_name() const;
};

struct SimulationConfig {
    int num_agents = 3000;
    int t_max = 300;
    std::uint64_t seed = 42;
    bool exact_counts = true;
};

struct Problem {
    SynthesisSpec spec;
    ProbVector x0;
    SolverOptions solver;
    SimulationConfig simulation;
    std::optional<DecisionPolicy> reference_policy;
    std::string description;
    nlohmann::json metadata;
};

Problem parse_problem(const nlohmann::json& doc);
Problem parse_problem_text(std::string_view text);
Problem load_problem(const std::string& path);

/// Canonical form: explicit matrices, scale 1, no renormalization.
nlohmann::json write_problem(const Problem& problem);

/// FNV-1a of the canonical problem serialization, hex encoded.
std::string spec_hash(const Problem& problem);

std::string_view bundled_paper_example();

struct PolicyFile {
    DecisionPolicy policy;
    std::vector<Matrix> plan; // raw P_k as stored
    Matrix m;
    nlohmann::json metadata;
};

nlohmann::json write_policy(const Problem& problem, const SynthesisResult& result, const Solution& solution);
PolicyFile parse_policy(const nlohmann::json& doc);
PolicyFile load_policy(const std::string& path);

nlohmann::json matrix_json(const Matrix& m);
nlohmann::json vector_json(const Vector& v);
/// Inverse of matrix_json; throws InputError naming `pointer` on shape or type errors.
Matrix matrix_from_json(const nlohmann::json& rows, int n_rows, int n_cols, const std::string& pointer = "");

} // namespace safemc

#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "safemc/chain.hpp"
#include "safemc/conic_program.hpp"

namespace safemc {

using conic::ConicProgram;

/// Linear density constraint "L x <= bound for every probability vector x with x <= cap",
/// where L = l_const + l_coeff * M is affine in the synthesized chain M.
struct SafetySpec {
    enum class Form { Constant, PlusM, MinusM, Rate };

    Form form = Form::Constant;
    Matrix l_const; // r x n
    Matrix l_coeff; // r x n, multiplies M from the left
    Vector cap;     // n
    Vector bound;   // r

    /// x(t) <= d for all t.
    static SafetySpec density_upper(const Vector& d);
    /// -f <= x(t+1) - x(t) <= f while x stays in the box x <= d.
    static SafetySpec density_rate(const Vector& f, const Vector& d);
    static SafetySpec general(Form form, Matrix l_const, Vector cap, Vector bound);

    int rows() const { return static_cast<int>(bound.size()); }
    int n() const { return static_cast<int>(cap.size()); }
    Matrix evaluate(const Matrix& m) const { return l_const + l_coeff * m; }
    void check() const;
};

const char* form_name(SafetySpec::Form form);
SafetySpec::Form parse_form(const std::string& name);

struct DecayLmi {
    double lambda = 0.975;
    std::optional<Matrix> f; // defaults to diag(v)^-1
};

struct Reversible {
    double lambda = 0.975;
};

struct Connectivity {
    double epsilon = 1e-6;
};

using ErgodicityMode = std::variant<DecayLmi, Reversible, Connectivity>;

const char* mode_name(const ErgodicityMode& mode);

/// Linear objective <weights, M> + constant. The default minimizes the total
/// off-diagonal motion, sum_i (1 - M(i, i)).
struct Objective {
    Matrix weights;
    double constant = 0.0;

    static Objective minimize_off_diagonal_action(int n);
};

struct SynthesisSpec {
    EnvironmentModel env;
    AdjacencyMatrix adjacency;
    ProbVector target;
    std::vector<SafetySpec> safety;
    ErgodicityMode ergodicity;
    std::optional<Objective> objective;

    int n() const { return env.n(); }
    int m() const { return env.m(); }
    void check() const;
};

namespace blocks {
inline const std::string chain = "M";
inline const std::string beta = "beta";
inline const std::string lyapunov = "lyapunov";
std::string plan(int k);       // "P_1" ...
std::string certificate_s(int s); // "S_1" ...
std::string certificate_y(int s); // "y_1" ...
} // namespace blocks

/// Entries (i, j) where M(i, j) may be positive: the adjacency permits j -> i and
/// some ON action or the OFF action reaches i from j.
Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> realizable_support(const SynthesisSpec& spec);

/// Throws InfeasibleByStructure when the indicator pattern already rules out a solution.
void check_structure(const SynthesisSpec& spec);

ConicProgram build_program(const SynthesisSpec& spec);

struct SafetyDualOptions {
    std::string tag = "1";
    /// Block holding M; empty when the safety matrix is constant.
    std::string chain_block;
    /// Scalar variable added to the bound rows (relaxes "y + bound >= ...").
    std::optional<int> relaxation_var;
};

/// Declares S_tag >= 0 and free y_tag, and emits the certificate inequalities
/// [L + S + y 1^T] >= 0 and y + bound >= [L + S + y 1^T] cap.
void build_safety_dual(conic::ConicProgram& program, const SafetySpec& sspec, const SafetyDualOptions& options);

/// F of a DecayLmi mode; diag(v)^-1 unless given.
Matrix decay_weight(const DecayLmi& decay, const ProbVector& target);

/// sqrt(diag F) when F is diagonal and positive. The lyapunov block then stores D^-1 P D^-1
/// with D = diag of this vector.
std::optional<Vector> lyapunov_congruence(const ErgodicityMode& mode, const ProbVector& target);

/// Emits M v = v plus the constraints of the chosen ergodicity encoding.
void build_ergodicity(conic::ConicProgram& program, const ErgodicityMode& mode, const ProbVector& target,
                      const AdjacencyMatrix& adjacency, const EnvironmentModel& env);

struct LineSearchResult {
    double lambda = 1.0;
    int bisection_solves = 0;
    int total_solves = 0;
};

/// Returns true when the program admits a solution.
using FeasibilityOracle = std::function<bool(const conic::ConicProgram&)>;

/// Bisection over the decay rate for DecayLmi or Reversible specs. Throws InfeasibleAtUpper.
LineSearchResult line_search_lambda(const SynthesisSpec& spec_template, double lo, double hi, double tol,
                                    const FeasibilityOracle& feasible);

/// Decay rate of a DecayLmi or Reversible mode; -1 for Connectivity.
double mode_lambda(const ErgodicityMode& mode);

SynthesisSpec with_lambda(const SynthesisSpec& spec, double lambda);

} // namespace safemc

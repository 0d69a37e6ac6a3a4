#pragma once

// Domain types for ON/OFF Markov chains and the composition of the effective
// transition matrix from an environment and an acceptance plan.
//
// Convention: every matrix is column-stochastic, M(i, j) = P(next = i | current = j).

#include <Eigen/Dense>

#include <vector>

#include "safemc/error.hpp"

namespace safemc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace tolerance {
inline constexpr double constructed = 1e-12;
inline constexpr double user_input = 1e-9;
inline constexpr double budget = 1e-9;
} // namespace tolerance

class ProbVector {
public:
    static ProbVector validate(const Vector& values, double tol = tolerance::constructed);

    const Vector& values() const { return values_; }
    int size() const { return static_cast<int>(values_.size()); }
    double operator[](int i) const { return values_(i); }

private:
    explicit ProbVector(Vector values) : values_(std::move(values)) {}
    Vector values_;
};

class ColumnStochasticMatrix {
public:
    /// Throws NegativeEntry or ColumnSumViolation.
    static ColumnStochasticMatrix validate(const Matrix& m, double tol = tolerance::constructed);
    static ColumnStochasticMatrix identity(int n);

    const Matrix& matrix() const { return m_; }
    int size() const { return static_cast<int>(m_.rows()); }
    double operator()(int i, int j) const { return m_(i, j); }

private:
    explicit ColumnStochasticMatrix(Matrix m) : m_(std::move(m)) {}
    Matrix m_;
};

/// Binary matrix; entry (i, j) = 1 permits the transition i -> j. Self-transitions are required.
class AdjacencyMatrix {
public:
    static AdjacencyMatrix validate(const Matrix& a);
    static AdjacencyMatrix full(int n);

    const Matrix& matrix() const { return a_; }
    int size() const { return static_cast<int>(a_.rows()); }
    bool allows(int from, int to) const { return a_(from, to) != 0.0; }
    /// Whether M(i, j), the move j -> i, is permitted.
    bool permits_entry(int i, int j) const { return allows(j, i); }

private:
    explicit AdjacencyMatrix(Matrix a) : a_(std::move(a)) {}
    Matrix a_;
};

/// Acceptance matrix K of the single-action model: entries in [0,1], unit diagonal.
class SingleActionPolicy {
public:
    static SingleActionPolicy validate(const Matrix& k);

    const Matrix& matrix() const { return k_; }
    int size() const { return static_cast<int>(k_.rows()); }

private:
    explicit SingleActionPolicy(Matrix k) : k_(std::move(k)) {}
    Matrix k_;
};

struct EnvironmentModel {
    EnvironmentModel(std::vector<ColumnStochasticMatrix> on_actions, ColumnStochasticMatrix off);

    std::vector<ColumnStochasticMatrix> on;
    ColumnStochasticMatrix off;

    int n() const { return off.size(); }
    int m() const { return static_cast<int>(on.size()); }
};

/// Combined choose-and-accept probabilities P_k = Q_k diag(alpha_k), one matrix per ON action.
/// Construction checks shapes and the [0,1] range; the per-state budget is checked separately.
class AcceptancePlan {
public:
    explicit AcceptancePlan(std::vector<Matrix> p);
    static AcceptancePlan zeros(int n, int m);

    const std::vector<Matrix>& matrices() const { return p_; }
    const Matrix& operator[](int k) const { return p_[k]; }
    int n() const { return p_.empty() ? 0 : static_cast<int>(p_.front().rows()); }
    int m() const { return static_cast<int>(p_.size()); }

private:
    std::vector<Matrix> p_;
};

struct DecisionPolicy {
    std::vector<Vector> alpha;
    std::vector<Matrix> q;

    int n() const { return q.empty() ? 0 : static_cast<int>(q.front().rows()); }
    int m() const { return static_cast<int>(q.size()); }
};

/// Human-readable list of violated policy invariants (empty when valid).
std::vector<std::string> policy_violations(const DecisionPolicy& policy, double tol = tolerance::budget);

ColumnStochasticMatrix compose_single(const ColumnStochasticMatrix& g, const SingleActionPolicy& k);

/// Effective chain of the multi-action model. Throws BudgetViolation or DimensionMismatch.
ColumnStochasticMatrix compose_multi(const EnvironmentModel& env, const AcceptancePlan& plan);

/// Per-state sum over actions of the column maxima of P_k.
Vector column_budget(const AcceptancePlan& plan);
bool budget_ok(const AcceptancePlan& plan);

DecisionPolicy extract_policy(const AcceptancePlan& plan);
/// Rescales the action-selection probabilities so that they sum to one at every state.
DecisionPolicy normalize_policy(const AcceptancePlan& plan);
AcceptancePlan policy_to_plan(const DecisionPolicy& policy);

} // namespace safemc

#include "safemc/chain.hpp"

#include <cmath>
#include <string>

namespace safemc {

namespace {

void require_square(const Matrix& m, const char* what) {
    if (m.rows() != m.cols() || m.rows() == 0) {
        throw DimensionMismatch(std::string(what) + " must be a non-empty square matrix");
    }
}

void require_size(const Matrix& m, int n, const char* what) {
    if (m.rows() != n || m.cols() != n) {
        throw DimensionMismatch(std::string(what) + " has shape " + std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()) + ", expected " + std::to_string(n) + "x" +
                                std::to_string(n));
    }
}

} // namespace

ProbVector ProbVector::validate(const Vector& values, double tol) {
    if (values.size() == 0) throw DimensionMismatch("probability vector is empty");
    for (int i = 0; i < values.size(); ++i) {
        if (!(values(i) >= 0.0)) throw NegativeEntry(i, 0, values(i));
    }
    const double sum = values.sum();
    if (std::abs(sum - 1.0) > tol) throw ColumnSumViolation(0, sum);
    return ProbVector(values);
}

ColumnStochasticMatrix ColumnStochasticMatrix::validate(const Matrix& m, double tol) {
    require_square(m, "stochastic matrix");
    for (int j = 0; j < m.cols(); ++j) {
        for (int i = 0; i < m.rows(); ++i) {
            if (!(m(i, j) >= 0.0)) throw NegativeEntry(i, j, m(i, j));
        }
        const double sum = m.col(j).sum();
        if (std::abs(sum - 1.0) > tol) throw ColumnSumViolation(j, sum);
    }
    return ColumnStochasticMatrix(m);
}

ColumnStochasticMatrix ColumnStochasticMatrix::identity(int n) {
    return ColumnStochasticMatrix(Matrix::Identity(n, n));
}

AdjacencyMatrix AdjacencyMatrix::validate(const Matrix& a) {
    require_square(a, "adjacency matrix");
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) {
            if (a(i, j) != 0.0 && a(i, j) != 1.0) {
                throw RangeViolation("adjacency entry (" + std::to_string(i) + ", " + std::to_string(j) +
                                     ") is not binary");
            }
        }
        if (a(i, i) != 1.0) {
            throw RangeViolation("adjacency must permit the self-transition of state " + std::to_string(i));
        }
    }
    return AdjacencyMatrix(a);
}

AdjacencyMatrix AdjacencyMatrix::full(int n) {
    return AdjacencyMatrix(Matrix::Ones(n, n));
}

SingleActionPolicy SingleActionPolicy::validate(const Matrix& k) {
    require_square(k, "acceptance matrix");
    for (int i = 0; i < k.rows(); ++i) {
        for (int j = 0; j < k.cols(); ++j) {
            if (!(k(i, j) >= 0.0 && k(i, j) <= 1.0)) {
                throw RangeViolation("acceptance entry (" + std::to_string(i) + ", " + std::to_string(j) +
                                     ") outside [0, 1]");
            }
        }
        if (k(i, i) != 1.0) throw RangeViolation("acceptance matrix diagonal must be 1");
    }
    return SingleActionPolicy(k);
}

EnvironmentModel::EnvironmentModel(std::vector<ColumnStochasticMatrix> on_actions, ColumnStochasticMatrix off_action)
    : on(std::move(on_actions)), off(std::move(off_action)) {
    if (on.empty()) throw DimensionMismatch("environment needs at least one ON action");
    for (const auto& g : on) require_size(g.matrix(), off.size(), "ON-action matrix");
}

AcceptancePlan::AcceptancePlan(std::vector<Matrix> p) : p_(std::move(p)) {
    if (p_.empty()) throw DimensionMismatch("acceptance plan needs at least one action");
    const int n = static_cast<int>(p_.front().rows());
    for (const auto& pk : p_) {
        require_size(pk, n, "plan matrix");
        if (!((pk.array() >= 0.0).all() && (pk.array() <= 1.0).all())) {
            throw RangeViolation("plan entries must lie in [0, 1]");
        }
    }
}

AcceptancePlan AcceptancePlan::zeros(int n, int m) {
    return AcceptancePlan(std::vector<Matrix>(m, Matrix::Zero(n, n)));
}

std::vector<std::string> policy_violations(const DecisionPolicy& policy, double tol) {
    std::vector<std::string> out;
    if (policy.alpha.size() != policy.q.size() || policy.q.empty()) {
        out.emplace_back("shape: alpha and Q counts differ or are empty");
        return out;
    }
    const int n = policy.n();
    Vector total = Vector::Zero(n);
    for (int k = 0; k < policy.m(); ++k) {
        const auto& q = policy.q[k];
        const auto& a = policy.alpha[k];
        if (q.rows() != n || q.cols() != n || a.size() != n) {
            out.push_back("shape: action " + std::to_string(k));
            continue;
        }
        if ((q.array() < -tol).any() || (q.array() > 1.0 + tol).any()) {
            out.push_back("acceptance_range: Q_" + std::to_string(k) + " outside [0, 1]");
        }
        if ((a.array() < -tol).any() || (a.array() > 1.0 + tol).any()) {
            out.push_back("selection_range: alpha_" + std::to_string(k) + " outside [0, 1]");
        }
        total += a;
    }
    for (int j = 0; j < n && total.size() == n; ++j) {
        if (total(j) > 1.0 + tol) {
            out.push_back("selection_sum: state " + std::to_string(j) + " sums to " + std::to_string(total(j)));
        }
    }
    return out;
}

ColumnStochasticMatrix compose_single(const ColumnStochasticMatrix& g, const SingleActionPolicy& k) {
    const int n = g.size();
    require_size(k.matrix(), n, "acceptance matrix");
    Matrix m = g.matrix().cwiseProduct(k.matrix());
    // Rejected proposals stay put. Summing the rejected mass (rather than 1 - accepted) keeps
    // full acceptance bit-identical to G.
    for (int j = 0; j < n; ++j) {
        double rejected = 0.0;
        for (int i = 0; i < n; ++i) {
            if (i != j) rejected += g.matrix()(i, j) * (1.0 - k.matrix()(i, j));
        }
        m(j, j) = g.matrix()(j, j) + rejected;
    }
    return ColumnStochasticMatrix::validate(m);
}

Vector column_budget(const AcceptancePlan& plan) {
    Vector total = Vector::Zero(plan.n());
    for (const auto& pk : plan.matrices()) total += pk.colwise().maxCoeff().transpose();
    return total;
}

bool budget_ok(const AcceptancePlan& plan) {
    return (column_budget(plan).array() <= 1.0 + tolerance::budget).all();
}

ColumnStochasticMatrix compose_multi(const EnvironmentModel& env, const AcceptancePlan& plan) {
    const int n = env.n();
    if (plan.m() != env.m()) throw DimensionMismatch("plan and environment action counts differ");
    if (plan.n() != n) throw DimensionMismatch("plan and environment state counts differ");
    const Vector budget = column_budget(plan);
    for (int j = 0; j < n; ++j) {
        if (budget(j) > 1.0 + tolerance::budget) throw BudgetViolation(j, budget(j));
    }

    Matrix on = Matrix::Zero(n, n);
    for (int k = 0; k < env.m(); ++k) on += env.on[k].matrix().cwiseProduct(plan[k]);

    Matrix m = on;
    const Eigen::RowVectorXd on_mass = on.colwise().sum();
    for (int j = 0; j < n; ++j) {
        // Within the budget slack the ON mass may exceed one by rounding; fold it back.
        const double off_weight = 1.0 - on_mass(j);
        if (off_weight >= 0.0) {
            m.col(j) += off_weight * env.off.matrix().col(j);
        } else {
            m.col(j) /= on_mass(j);
        }
    }
    return ColumnStochasticMatrix::validate(m);
}

DecisionPolicy extract_policy(const AcceptancePlan& plan) {
    DecisionPolicy policy;
    for (const auto& pk : plan.matrices()) {
        Vector alpha = pk.colwise().maxCoeff().transpose();
        Matrix q = Matrix::Zero(pk.rows(), pk.cols());
        for (int j = 0; j < pk.cols(); ++j) {
            if (alpha(j) > 0.0) q.col(j) = pk.col(j) / alpha(j);
        }
        policy.alpha.push_back(std::move(alpha));
        policy.q.push_back(std::move(q));
    }
    return policy;
}

DecisionPolicy normalize_policy(const AcceptancePlan& plan) {
    const Vector total = column_budget(plan);
    for (int j = 0; j < total.size(); ++j) {
        if (!(total(j) > 0.0)) throw DeadState(j);
    }
    DecisionPolicy policy;
    for (const auto& pk : plan.matrices()) {
        Vector alpha = pk.colwise().maxCoeff().transpose().cwiseQuotient(total);
        Matrix q = Matrix::Zero(pk.rows(), pk.cols());
        for (int j = 0; j < pk.cols(); ++j) {
            if (alpha(j) > 0.0) q.col(j) = (pk.col(j) / alpha(j)).cwiseMin(1.0);
        }
        policy.alpha.push_back(std::move(alpha));
        policy.q.push_back(std::move(q));
    }
    return policy;
}

AcceptancePlan policy_to_plan(const DecisionPolicy& policy) {
    if (const auto bad = policy_violations(policy); !bad.empty()) {
        throw RangeViolation("policy invariant violated: " + bad.front());
    }
    std::vector<Matrix> p;
    p.reserve(policy.q.size());
    for (int k = 0; k < policy.m(); ++k) {
        Matrix pk = policy.q[k] * policy.alpha[k].asDiagonal();
        p.push_back(pk.cwiseMax(0.0).cwiseMin(1.0));
    }
    return AcceptancePlan(std::move(p));
}

} // namespace safemc

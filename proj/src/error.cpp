#include "safemc/error.hpp"

#include <algorithm>
#include <sstream>

namespace safemc {

namespace {

std::string describe(const std::vector<Violation>& violations) {
    std::ostringstream out;
    out << "validation failed:";
    for (const auto& v : violations) {
        out << ' ' << v.constraint << " (residual " << v.residual << ")";
    }
    return out.str();
}

std::string join(const std::vector<std::string>& items) {
    std::string s;
    for (const auto& item : items) {
        if (!s.empty()) s += "; ";
        s += item;
    }
    return s;
}

} // namespace

NegativeEntry::NegativeEntry(int row, int col, double value)
    : Error("negative entry " + std::to_string(value) + " at (" + std::to_string(row) + ", " +
            std::to_string(col) + ")"),
      row(row), col(col), value(value) {}

ColumnSumViolation::ColumnSumViolation(int col, double sum)
    : Error("column " + std::to_string(col) + " sums to " + std::to_string(sum)), col(col), sum(sum) {}

BudgetViolation::BudgetViolation(int col, double total)
    : Error("action budget exceeded at state " + std::to_string(col) + ": " + std::to_string(total)),
      col(col), total(total) {}

DeadState::DeadState(int state)
    : Error("state " + std::to_string(state) + " never observes any action"), state(state) {}

InfeasibleByStructure::InfeasibleByStructure(std::vector<std::string> reasons)
    : Error("structurally infeasible: " + join(reasons)), reasons(std::move(reasons)) {}

ZeroTargetEntry::ZeroTargetEntry(int state)
    : Error("target distribution vanishes at state " + std::to_string(state)), state(state) {}

InfeasibleAtUpper::InfeasibleAtUpper(double upper)
    : Error("program infeasible at upper decay rate " + std::to_string(upper)), upper(upper) {}

ValidationFailure::ValidationFailure(std::vector<Violation> violations)
    : Error(describe(violations)), violations(std::move(violations)) {}

bool ValidationFailure::names(const std::string& constraint) const {
    return std::any_of(violations.begin(), violations.end(),
                       [&](const Violation& v) { return v.constraint == constraint; });
}

} // namespace safemc

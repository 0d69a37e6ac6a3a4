#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace safemc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class NegativeEntry : public Error {
public:
    NegativeEntry(int row, int col, double value);
    int row;
    int col;
    double value;
};

class ColumnSumViolation : public Error {
public:
    ColumnSumViolation(int col, double sum);
    int col;
    double sum;
};

/// An entry outside its admissible range (binary adjacency, [0,1] probabilities, unit diagonals).
class RangeViolation : public Error {
public:
    using Error::Error;
};

class BudgetViolation : public Error {
public:
    BudgetViolation(int col, double total);
    int col;
    double total;
};

class DeadState : public Error {
public:
    explicit DeadState(int state);
    int state;
};

class InfeasibleByStructure : public Error {
public:
    explicit InfeasibleByStructure(std::vector<std::string> reasons);
    std::vector<std::string> reasons;
};

class ZeroTargetEntry : public Error {
public:
    explicit ZeroTargetEntry(int state);
    int state;
};

class InfeasibleAtUpper : public Error {
public:
    explicit InfeasibleAtUpper(double upper);
    double upper;
};

class InfeasibleSet : public Error {
public:
    using Error::Error;
};

/// Solver terminated without a usable answer (diagnostics in the message).
class SolverFailure : public Error {
public:
    using Error::Error;
};

struct Violation {
    std::string constraint;
    double residual;
};

class ValidationFailure : public Error {
public:
    explicit ValidationFailure(std::vector<Violation> violations);
    std::vector<Violation> violations;

    bool names(const std::string& constraint) const;
};

} // namespace safemc

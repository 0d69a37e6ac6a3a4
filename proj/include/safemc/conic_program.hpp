#pragma once

// Solver-agnostic conic program: named variable blocks, affine expressions over
// their scalar entries, and constraint groups that place those expressions in a
// cone (zero, nonnegative orthant, or positive semidefinite).

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "safemc/chain.hpp"

namespace safemc::conic {

struct Block {
    std::string name;
    int rows = 0;
    int cols = 0;
    bool symmetric = false; // stores the upper triangle only
    int offset = 0;

    int size() const { return symmetric ? rows * (rows + 1) / 2 : rows * cols; }
};

class LinearExpr {
public:
    LinearExpr() = default;
    explicit LinearExpr(double constant) : constant_(constant) {}

    LinearExpr& add(int var, double coeff);
    LinearExpr& add(const LinearExpr& other, double scale = 1.0);
    LinearExpr& add_constant(double c) {
        constant_ += c;
        return *this;
    }

    const std::vector<std::pair<int, double>>& terms() const { return terms_; }
    double constant() const { return constant_; }
    double evaluate(std::span<const double> x) const;

private:
    std::vector<std::pair<int, double>> terms_;
    double constant_ = 0.0;
};

enum class Cone { Zero, Nonnegative, Psd };

const char* cone_name(Cone cone);

/// For Psd groups, rows hold the lower triangle of a psd_dim x psd_dim symmetric
/// matrix in column-major order, unscaled.
struct ConstraintGroup {
    std::string name;
    Cone cone = Cone::Zero;
    int psd_dim = 0;
    std::vector<LinearExpr> rows;

    static int psd_row_count(int dim) { return dim * (dim + 1) / 2; }
};

class ConicProgram {
public:
    int add_block(const std::string& name, int rows, int cols, bool symmetric = false);
    void add_group(ConstraintGroup group);

    bool has_block(const std::string& name) const;
    const Block& block(const std::string& name) const;
    const std::vector<Block>& blocks() const { return blocks_; }
    const std::vector<ConstraintGroup>& groups() const { return groups_; }
    const ConstraintGroup* find_group(const std::string& name) const;

    /// Index of scalar (i, j) of a block; symmetric blocks map (i, j) and (j, i) together.
    int var(const std::string& name, int i, int j = 0) const;
    int num_variables() const { return num_variables_; }

    LinearExpr objective;
    std::map<std::string, double> parameters;

    /// Flattens named block values into the scalar variable vector (missing blocks stay zero).
    std::vector<double> pack(const std::map<std::string, Matrix>& values) const;
    std::map<std::string, Matrix> unpack(std::span<const double> x) const;

    /// Expanded symmetric matrix of a Psd group evaluated at x.
    Matrix psd_matrix(const ConstraintGroup& group, std::span<const double> x) const;
    /// Amount by which x violates the group's cone (0 when satisfied).
    double violation(const ConstraintGroup& group, std::span<const double> x) const;

    /// Debug dump: blocks plus each group's coefficient matrix in triplet form.
    nlohmann::json to_json() const;

private:
    std::vector<Block> blocks_;
    std::map<std::string, int> block_index_;
    std::vector<ConstraintGroup> groups_;
    int num_variables_ = 0;
};

} // namespace safemc::conic

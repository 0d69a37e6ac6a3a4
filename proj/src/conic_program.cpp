#include "safemc/conic_program.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace safemc::conic {

LinearExpr& LinearExpr::add(int var, double coeff) {
    if (coeff != 0.0) terms_.emplace_back(var, coeff);
    return *this;
}

LinearExpr& LinearExpr::add(const LinearExpr& other, double scale) {
    for (const auto& [var, coeff] : other.terms_) add(var, coeff * scale);
    constant_ += scale * other.constant_;
    return *this;
}

double LinearExpr::evaluate(std::span<const double> x) const {
    double value = constant_;
    for (const auto& [var, coeff] : terms_) value += coeff * x[var];
    return value;
}

const char* cone_name(Cone cone) {
    switch (cone) {
    case Cone::Zero: return "zero";
    case Cone::Nonnegative: return "nonnegative";
    case Cone::Psd: return "psd";
    }
    return "unknown";
}

int ConicProgram::add_block(const std::string& name, int rows, int cols, bool symmetric) {
    if (block_index_.count(name)) throw Error("duplicate variable block '" + name + "'");
    if (symmetric && rows != cols) throw DimensionMismatch("symmetric block must be square");
    Block b{name, rows, cols, symmetric, num_variables_};
    num_variables_ += b.size();
    block_index_[name] = static_cast<int>(blocks_.size());
    blocks_.push_back(b);
    return static_cast<int>(blocks_.size()) - 1;
}

void ConicProgram::add_group(ConstraintGroup group) {
    if (group.cone == Cone::Psd &&
        static_cast<int>(group.rows.size()) != ConstraintGroup::psd_row_count(group.psd_dim)) {
        throw DimensionMismatch("psd group '" + group.name + "' has the wrong number of entries");
    }
    for (const auto& row : group.rows) {
        for (const auto& [var, coeff] : row.terms()) {
            if (var < 0 || var >= num_variables_) {
                throw Error("group '" + group.name + "' references an undeclared variable");
            }
        }
    }
    groups_.push_back(std::move(group));
}

bool ConicProgram::has_block(const std::string& name) const {
    return block_index_.count(name) != 0;
}

const Block& ConicProgram::block(const std::string& name) const {
    const auto it = block_index_.find(name);
    if (it == block_index_.end()) throw Error("unknown variable block '" + name + "'");
    return blocks_[it->second];
}

const ConstraintGroup* ConicProgram::find_group(const std::string& name) const {
    for (const auto& g : groups_) {
        if (g.name == name) return &g;
    }
    return nullptr;
}

int ConicProgram::var(const std::string& name, int i, int j) const {
    const Block& b = block(name);
    if (i < 0 || j < 0 || i >= b.rows || j >= b.cols) {
        throw DimensionMismatch("index out of range for block '" + name + "'");
    }
    if (b.symmetric) {
        if (i > j) std::swap(i, j);
        // upper triangle stored column by column
        return b.offset + j * (j + 1) / 2 + i;
    }
    return b.offset + j * b.rows + i;
}

std::vector<double> ConicProgram::pack(const std::map<std::string, Matrix>& values) const {
    std::vector<double> x(num_variables_, 0.0);
    for (const auto& b : blocks_) {
        const auto it = values.find(b.name);
        if (it == values.end()) continue;
        const Matrix& v = it->second;
        if (v.rows() != b.rows || v.cols() != b.cols) {
            throw DimensionMismatch("value for block '" + b.name + "' has the wrong shape");
        }
        for (int j = 0; j < b.cols; ++j) {
            for (int i = 0; i < b.rows; ++i) {
                if (b.symmetric && i > j) continue;
                x[var(b.name, i, j)] = b.symmetric ? 0.5 * (v(i, j) + v(j, i)) : v(i, j);
            }
        }
    }
    return x;
}

std::map<std::string, Matrix> ConicProgram::unpack(std::span<const double> x) const {
    std::map<std::string, Matrix> out;
    for (const auto& b : blocks_) {
        Matrix v(b.rows, b.cols);
        for (int j = 0; j < b.cols; ++j) {
            for (int i = 0; i < b.rows; ++i) v(i, j) = x[var(b.name, i, j)];
        }
        out.emplace(b.name, std::move(v));
    }
    return out;
}

Matrix ConicProgram::psd_matrix(const ConstraintGroup& group, std::span<const double> x) const {
    const int d = group.psd_dim;
    Matrix m(d, d);
    int r = 0;
    for (int j = 0; j < d; ++j) {
        for (int i = j; i < d; ++i) {
            m(i, j) = m(j, i) = group.rows[r++].evaluate(x);
        }
    }
    return m;
}

double ConicProgram::violation(const ConstraintGroup& group, std::span<const double> x) const {
    double worst = 0.0;
    switch (group.cone) {
    case Cone::Zero:
        for (const auto& row : group.rows) worst = std::max(worst, std::abs(row.evaluate(x)));
        break;
    case Cone::Nonnegative:
        for (const auto& row : group.rows) worst = std::max(worst, -row.evaluate(x));
        break;
    case Cone::Psd: {
        if (group.psd_dim == 0) break;
        Eigen::SelfAdjointEigenSolver<Matrix> eig(psd_matrix(group, x), Eigen::EigenvaluesOnly);
        worst = std::max(0.0, -eig.eigenvalues().minCoeff());
        break;
    }
    }
    return worst;
}

nlohmann::json ConicProgram::to_json() const {
    nlohmann::json out;
    out["num_variables"] = num_variables_;
    out["blocks"] = nlohmann::json::array();
    for (const auto& b : blocks_) {
        out["blocks"].push_back({{"name", b.name},
                                 {"rows", b.rows},
                                 {"cols", b.cols},
                                 {"symmetric", b.symmetric},
                                 {"offset", b.offset},
                                 {"size", b.size()}});
    }
    out["groups"] = nlohmann::json::array();
    for (const auto& g : groups_) {
        nlohmann::json rows = nlohmann::json::array();
        nlohmann::json cols = nlohmann::json::array();
        nlohmann::json vals = nlohmann::json::array();
        nlohmann::json constants = nlohmann::json::array();
        for (std::size_t r = 0; r < g.rows.size(); ++r) {
            for (const auto& [var, coeff] : g.rows[r].terms()) {
                rows.push_back(r);
                cols.push_back(var);
                vals.push_back(coeff);
            }
            constants.push_back(g.rows[r].constant());
        }
        nlohmann::json entry{{"name", g.name},
                             {"cone", cone_name(g.cone)},
                             {"num_rows", g.rows.size()},
                             {"triplets", {{"row", rows}, {"col", cols}, {"value", vals}}},
                             {"constant", constants}};
        if (g.cone == Cone::Psd) entry["psd_dim"] = g.psd_dim;
        out["groups"].push_back(std::move(entry));
    }
    nlohmann::json obj_cols = nlohmann::json::array();
    nlohmann::json obj_vals = nlohmann::json::array();
    for (const auto& [var, coeff] : objective.terms()) {
        obj_cols.push_back(var);
        obj_vals.push_back(coeff);
    }
    out["objective"] = {{"col", obj_cols}, {"value", obj_vals}, {"constant", objective.constant()}};
    out["parameters"] = parameters;
    return out;
}

} // namespace safemc::conic

#include "safemc/solver.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>

#include "scs.h"

namespace safemc {

using conic::Cone;
using conic::ConicProgram;
using conic::ConstraintGroup;

const char* status_name(SolveStatus status) {
    switch (status) {
    case SolveStatus::Optimal: return "optimal";
    case SolveStatus::Feasible: return "feasible";
    case SolveStatus::Infeasible: return "infeasible";
    case SolveStatus::Unbounded: return "unbounded";
    case SolveStatus::NumericalFailure: return "numerical_failure";
    }
    return "numerical_failure";
}

namespace {

struct ConeData {
    Eigen::SparseMatrix<double, Eigen::ColMajor, scs_int> a;
    std::vector<double> b;
    scs_int zero_rows = 0;
    scs_int nonneg_rows = 0;
    std::vector<scs_int> psd_dims;
};

// Rows in the order SCS expects: zero cone, nonnegative orthant, PSD blocks.
// For expression e = a^T x + c in cone K the SCS row is (-a, c) since s = b - A x.
ConeData assemble(const ConicProgram& program) {
    ConeData data;
    std::vector<Eigen::Triplet<double, scs_int>> triplets;
    scs_int row = 0;
    auto emit = [&](const conic::LinearExpr& e, double scale) {
        for (const auto& [var, coeff] : e.terms()) triplets.emplace_back(row, var, -scale * coeff);
        data.b.push_back(scale * e.constant());
        ++row;
    };
    for (const auto& g : program.groups()) {
        if (g.cone != Cone::Zero) continue;
        for (const auto& e : g.rows) emit(e, 1.0);
        data.zero_rows += static_cast<scs_int>(g.rows.size());
    }
    for (const auto& g : program.groups()) {
        if (g.cone != Cone::Nonnegative) continue;
        for (const auto& e : g.rows) emit(e, 1.0);
        data.nonneg_rows += static_cast<scs_int>(g.rows.size());
    }
    const double sqrt2 = std::sqrt(2.0);
    for (const auto& g : program.groups()) {
        if (g.cone != Cone::Psd) continue;
        int r = 0;
        for (int c = 0; c < g.psd_dim; ++c) {
            for (int i = c; i < g.psd_dim; ++i) emit(g.rows[r++], i == c ? 1.0 : sqrt2);
        }
        data.psd_dims.push_back(g.psd_dim);
    }
    data.a.resize(row, program.num_variables());
    data.a.setFromTriplets(triplets.begin(), triplets.end());
    data.a.makeCompressed();
    return data;
}

SolveStatus map_status(scs_int flag) {
    switch (flag) {
    case SCS_SOLVED: return SolveStatus::Optimal;
    case SCS_SOLVED_INACCURATE: return SolveStatus::Feasible;
    case SCS_INFEASIBLE:
    case SCS_INFEASIBLE_INACCURATE: return SolveStatus::Infeasible;
    case SCS_UNBOUNDED:
    case SCS_UNBOUNDED_INACCURATE: return SolveStatus::Unbounded;
    default: return SolveStatus::NumericalFailure;
    }
}

} // namespace

Solution solve(const ConicProgram& program, const SolverOptions& options) {
    Solution out;
    const int n = program.num_variables();
    if (n == 0) throw Error("program declares no variables");
    ConeData data = assemble(program);
    const scs_int m = static_cast<scs_int>(data.b.size());

    std::vector<double> c(n, 0.0);
    for (const auto& [var, coeff] : program.objective.terms()) c[var] += coeff;

    ScsMatrix a_mat{data.a.valuePtr(), data.a.innerIndexPtr(), data.a.outerIndexPtr(), m, n};
    ScsData scs_data{m, n, &a_mat, nullptr, data.b.data(), c.data()};

    ScsCone cone{};
    cone.z = data.zero_rows;
    cone.l = data.nonneg_rows;
    cone.s = data.psd_dims.empty() ? nullptr : data.psd_dims.data();
    cone.ssize = static_cast<scs_int>(data.psd_dims.size());

    ScsSettings settings;
    scs_set_default_settings(&settings);
    settings.eps_abs = options.eps;
    settings.eps_rel = options.eps;
    settings.eps_infeas = std::min(1e-7, options.eps * 10.0);
    settings.max_iters = options.max_iters;
    settings.time_limit_secs = options.time_limit_secs;
    settings.verbose = options.verbose ? 1 : 0;

    std::vector<double> x(n, 0.0);
    std::vector<double> y(m, 0.0);
    std::vector<double> s(m, 0.0);
    ScsSolution sol{x.data(), y.data(), s.data()};
    ScsInfo info{};
    const scs_int flag = scs(&scs_data, &cone, &settings, &sol, &info);

    out.status = map_status(flag);
    out.stats.iterations = static_cast<int>(info.iter);
    out.stats.solve_time_ms = info.setup_time + info.solve_time;
    out.stats.primal_residual = info.res_pri;
    out.stats.dual_residual = info.res_dual;
    out.stats.gap = info.gap;
    out.stats.message = info.status;
    if (out.status == SolveStatus::NumericalFailure) {
        out.stats.message = "solver stopped with status '" + std::string(info.status) + "' (" +
                            std::to_string(static_cast<long>(flag)) + ")";
    }
    if (out.usable()) {
        out.values = program.unpack(x);
        out.objective_value = program.objective.evaluate(x);
    }
    return out;
}

namespace {

struct Recorder {
    std::vector<ResidualEntry> entries;

    void add(const std::string& name, double residual, double tol) {
        const bool ok = std::isfinite(residual) && residual <= tol;
        entries.push_back({name, residual, tol, ok});
    }

    std::vector<Violation> violations() const {
        std::vector<Violation> out;
        for (const auto& e : entries) {
            if (!e.passed) out.push_back({e.name, e.residual});
        }
        return out;
    }
};

const Matrix& value_of(const Solution& sol, const std::string& name) {
    const auto it = sol.values.find(name);
    if (it == sol.values.end()) throw SolverFailure("solution has no values for block '" + name + "'");
    return it->second;
}

} // namespace

SynthesisResult recover_and_validate(const SynthesisSpec& spec, const Solution& sol, double tol) {
    if (!sol.usable()) {
        throw SolverFailure(std::string("cannot recover a solution with status ") + status_name(sol.status) +
                            ": " + sol.stats.message);
    }
    const int n = spec.n();
    const int m = spec.m();
    const ConicProgram program = build_program(spec);
    const std::vector<double> x = program.pack(sol.values);

    Recorder rec;
    for (const auto& g : program.groups()) rec.add(g.name, program.violation(g, x), tol);

    const Matrix& m_raw = value_of(sol, blocks::chain);
    std::vector<Matrix> p_raw;
    for (int k = 0; k < m; ++k) p_raw.push_back(value_of(sol, blocks::plan(k)));

    // Independent re-evaluation of the chain from its defining formulas.
    double stochasticity = std::max(0.0, -m_raw.minCoeff());
    for (int j = 0; j < n; ++j) stochasticity = std::max(stochasticity, std::abs(m_raw.col(j).sum() - 1.0));
    rec.add("stochasticity", stochasticity, tol);

    Matrix on = Matrix::Zero(n, n);
    for (int k = 0; k < m; ++k) on += spec.env.on[k].matrix().cwiseProduct(p_raw[k]);
    Matrix composed = on;
    const Eigen::RowVectorXd off_weight = Eigen::RowVectorXd::Ones(n) - on.colwise().sum();
    for (int j = 0; j < n; ++j) composed.col(j) += off_weight(j) * spec.env.off.matrix().col(j);
    rec.add("composition", (composed - m_raw).cwiseAbs().maxCoeff(), tol);

    Vector budget = Vector::Zero(n);
    for (const auto& p : p_raw) budget += p.cwiseMax(0.0).cwiseMin(1.0).colwise().maxCoeff().transpose();
    rec.add("budget", std::max(0.0, budget.maxCoeff() - 1.0), tol);

    std::optional<Matrix> lyapunov;
    if (std::holds_alternative<DecayLmi>(spec.ergodicity)) {
        lyapunov = value_of(sol, blocks::lyapunov);
        if (const auto root = lyapunov_congruence(spec.ergodicity, spec.target)) {
            *lyapunov = root->asDiagonal() * *lyapunov * root->asDiagonal();
        }
        Eigen::SelfAdjointEigenSolver<Matrix> eig(*lyapunov, Eigen::EigenvaluesOnly);
        const double floor = lyapunov_definiteness * lyapunov->trace() / n;
        rec.add("positive_definite_lyapunov", std::max(0.0, floor - eig.eigenvalues().minCoeff()), 0.0);
    }

    // Projection onto exact probability semantics.
    std::vector<Matrix> p_proj;
    for (int k = 0; k < m; ++k) {
        Matrix p = p_raw[k].cwiseMax(0.0).cwiseMin(1.0);
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                if (!spec.adjacency.permits_entry(i, j) && spec.env.on[k](i, j) > 0.0) p(i, j) = 0.0;
            }
        }
        p_proj.push_back(std::move(p));
    }
    {
        Vector total = Vector::Zero(n);
        for (const auto& p : p_proj) total += p.colwise().maxCoeff().transpose();
        for (int j = 0; j < n; ++j) {
            if (total(j) > 1.0) {
                for (auto& p : p_proj) p.col(j) /= total(j);
            }
        }
    }
    AcceptancePlan plan(std::move(p_proj));
    Matrix m_final = compose_multi(spec.env, plan).matrix();
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            if (!spec.adjacency.permits_entry(i, j)) m_final(i, j) = 0.0;
        }
        m_final.col(j) /= m_final.col(j).sum();
    }
    const double projection = (m_final - m_raw).cwiseAbs().maxCoeff();
    rec.add("projection", projection, tol);

    const Vector& v = spec.target.values();
    rec.add("stationarity_projected", (m_final * v - v).cwiseAbs().maxCoeff(), tol);

    if (const auto bad = rec.violations(); !bad.empty()) throw ValidationFailure(bad);

    DecisionPolicy policy;
    try {
        policy = normalize_policy(plan);
    } catch (const DeadState&) {
        policy = extract_policy(plan);
    }

    std::vector<SafetyCertificate> certificates;
    for (int s = 0; s < static_cast<int>(spec.safety.size()); ++s) {
        certificates.push_back({value_of(sol, blocks::certificate_s(s)), value_of(sol, blocks::certificate_y(s)).col(0)});
    }

    return SynthesisResult{ColumnStochasticMatrix::validate(m_final, tolerance::constructed),
                           std::move(plan),
                           std::move(policy),
                           std::move(certificates),
                           std::move(lyapunov),
                           std::move(rec.entries),
                           projection};
}

FeasibilityOracle solver_oracle(const SolverOptions& options) {
    return [options](const ConicProgram& program) { return solve(program, options).status == SolveStatus::Optimal; };
}

} // namespace safemc

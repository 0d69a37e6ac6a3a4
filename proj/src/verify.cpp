#include "safemc/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "safemc/synthesis.hpp"

namespace safemc {

SafetyReport safety_oracle(const Matrix& l, const Vector& cap, const Vector& bound, double tol) {
    const int n = static_cast<int>(cap.size());
    if (l.cols() != n || l.rows() != bound.size()) throw DimensionMismatch("safety oracle inputs disagree in shape");
    if (cap.sum() < 1.0) throw InfeasibleSet("sum of caps is below one; no probability vector fits the box");

    SafetyReport report;
    std::vector<int> order(n);
    for (int r = 0; r < l.rows(); ++r) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return l(r, a) > l(r, b); });
        SafetyRow row;
        row.witness = Vector::Zero(n);
        double remaining = 1.0;
        for (int i : order) {
            if (remaining <= 0.0) break;
            const double take = std::min(std::max(cap(i), 0.0), remaining);
            row.witness(i) = take;
            remaining -= take;
        }
        row.worst = l.row(r).dot(row.witness);
        row.bound = bound(r);
        row.margin = row.bound - row.worst;
        report.safe = report.safe && row.worst <= row.bound + tol;
        report.rows.push_back(std::move(row));
    }
    return report;
}

bool certificate_check(const Matrix& l, const Vector& cap, const Vector& bound, const Matrix& s, const Vector& y,
                       double tol) {
    const int r = static_cast<int>(l.rows());
    const int n = static_cast<int>(l.cols());
    if (s.rows() != r || s.cols() != n || y.size() != r || cap.size() != n || bound.size() != r) {
        throw DimensionMismatch("certificate shapes disagree");
    }
    if ((s.array() < -tol).any()) return false;
    const Matrix combined = l + s + y * Eigen::RowVectorXd::Ones(n);
    if ((combined.array() < -tol).any()) return false;
    const Vector lhs = y + bound;
    const Vector rhs = combined * cap;
    return ((lhs - rhs).array() >= -tol).all();
}

CertificateSearch certificate_exists(const Matrix& l, const Vector& cap, const Vector& bound, double tol,
                                     const SolverOptions& options) {
    const SafetySpec sspec = SafetySpec::general(SafetySpec::Form::Constant, l, cap, bound);
    ConicProgram program;
    program.add_block("relax", 1, 1);
    const int relax = program.var("relax", 0);
    build_safety_dual(program, sspec, SafetyDualOptions{"1", "", relax});
    program.objective = conic::LinearExpr().add(relax, 1.0);

    const Solution sol = solve(program, options);
    CertificateSearch out;
    out.status = sol.status;
    if (sol.usable()) {
        out.relaxation = sol.values.at("relax")(0, 0);
        out.exists = out.relaxation <= tol;
    }
    return out;
}

namespace {

double weighted(const Matrix& p, const Vector& e) {
    return e.dot(p * e);
}

} // namespace

ConvergenceReport contraction_check(const Matrix& m, const Vector& v, const Matrix& p_lyap, double lambda, int trials,
                                    std::uint64_t seed) {
    const int n = static_cast<int>(v.size());
    const Matrix a = m - v * Eigen::RowVectorXd::Ones(n);
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ConvergenceReport report;
    for (int t = 0; t < trials; ++t) {
        Vector e(n);
        for (int i = 0; i < n; ++i) e(i) = normal(gen);
        e.array() -= e.mean();
        const double before = weighted(p_lyap, e);
        const double after = weighted(p_lyap, a * e);
        if (before > 0.0) report.lyapunov_ratio_max = std::max(report.lyapunov_ratio_max, std::sqrt(std::max(after, 0.0) / before));
        if (after > lambda * lambda * before + 1e-9) ++report.violations;
    }
    report.passed = report.violations == 0;
    return report;
}

ConvergenceReport trajectory_convergence(const Matrix& m, const Vector& v, const Vector& x0, const Matrix& p_lyap,
                                         double lambda, int t_max, double tol) {
    ConvergenceReport report;
    Vector x = x0;
    for (int t = 0; t <= t_max; ++t) {
        const Vector e = x - v;
        if (!report.t_star && e.cwiseAbs().maxCoeff() < tol) report.t_star = t;
        if (t == t_max) break;
        const Vector next = m * x;
        const double before = weighted(p_lyap, e);
        const double after = weighted(p_lyap, next - v);
        // Rounding in x is ~1e-16 absolute, so a ratio is only resolved to 1e-9 once |e| >= 1e-6.
        if (e.cwiseAbs().maxCoeff() >= 1e-6) {
            const double ratio = std::sqrt(std::max(after, 0.0) / before);
            report.lyapunov_ratio_max = std::max(report.lyapunov_ratio_max, ratio);
            if (ratio > lambda + 1e-9) ++report.violations;
        }
        x = next;
    }
    report.passed = report.violations == 0;
    return report;
}

bool connectivity_check(const Matrix& indicator) {
    const int n = static_cast<int>(indicator.rows());
    if (indicator.cols() != n) throw DimensionMismatch("indicator matrix must be square");
    if (n == 0) return true;
    auto reaches_all = [&](bool transpose) {
        std::vector<char> seen(n, 0);
        std::vector<int> stack{0};
        seen[0] = 1;
        int count = 1;
        while (!stack.empty()) {
            const int u = stack.back();
            stack.pop_back();
            for (int w = 0; w < n; ++w) {
                const double edge = transpose ? indicator(w, u) : indicator(u, w);
                if (edge > 0.0 && !seen[w]) {
                    seen[w] = 1;
                    ++count;
                    stack.push_back(w);
                }
            }
        }
        return count == n;
    };
    return reaches_all(false) && reaches_all(true);
}

double detailed_balance_residual(const Matrix& m, const Vector& v) {
    double worst = 0.0;
    for (int j = 0; j < m.cols(); ++j) {
        for (int i = 0; i < m.rows(); ++i) worst = std::max(worst, std::abs(m(i, j) * v(j) - m(j, i) * v(i)));
    }
    return worst;
}

McComparison compare_mc_analytic(const DensityHistory& empirical, const ColumnStochasticMatrix& m,
                                 const ProbVector& x0, int num_agents, const std::optional<Vector>& d) {
    if (empirical.steps() == 0) throw DimensionMismatch("empirical history is empty");
    McComparison out;
    out.analytic = propagate_analytic(m, x0, empirical.steps() - 1);
    const int n = m.size();
    long inside = 0;
    long total = 0;
    for (int t = 0; t < empirical.steps(); ++t) {
        const Vector& xe = empirical.density[t];
        const Vector& xa = out.analytic.density[t];
        out.max_deviation.push_back((xe - xa).cwiseAbs().maxCoeff());
        for (int i = 0; i < n; ++i) {
            const double sigma = std::sqrt(std::max(xa(i) * (1.0 - xa(i)), 0.0) / num_agents);
            if (std::abs(xe(i) - xa(i)) <= 3.0 * sigma + 1e-12) ++inside;
            ++total;
            if (d) {
                const double sigma_hat = std::sqrt(std::max(xe(i) * (1.0 - xe(i)), 0.0) / num_agents);
                if (xe(i) > (*d)(i) + 3.0 * sigma_hat) out.safety_flags.emplace_back(t, i);
                if (xa(i) > (*d)(i) + 1e-8) out.analytic_safe = false;
            }
        }
    }
    out.band_coverage = static_cast<double>(inside) / static_cast<double>(total);
    return out;
}

nlohmann::json to_json(const CheckResult& check) {
    return {{"check", check.name}, {"passed", check.passed}, {"residual", check.residual}, {"witness", check.witness}};
}

nlohmann::json report_json(const std::vector<CheckResult>& checks) {
    nlohmann::json list = nlohmann::json::array();
    bool all = true;
    for (const auto& c : checks) {
        list.push_back(to_json(c));
        all = all && c.passed;
    }
    return {{"all_passed", all}, {"checks", list}};
}

} // namespace safemc

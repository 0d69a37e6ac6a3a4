#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "safemc/chain.hpp"
#include "safemc/simulate.hpp"
#include "safemc/solver.hpp"

namespace safemc {

struct SafetyRow {
    double worst = 0.0;  // max of l^T x over {x >= 0, 1^T x = 1, x <= cap}
    double bound = 0.0;
    double margin = 0.0; // bound - worst
    Vector witness;      // maximizing vertex
};

struct SafetyReport {
    std::vector<SafetyRow> rows;
    bool safe = true;
};

/// Exact worst case by greedy fill in descending coefficient order. Throws InfeasibleSet when sum(cap) < 1.
SafetyReport safety_oracle(const Matrix& l, const Vector& cap, const Vector& bound, double tol = 1e-9);

bool certificate_check(const Matrix& l, const Vector& cap, const Vector& bound, const Matrix& s, const Vector& y,
                       double tol);

struct CertificateSearch {
    bool exists = false;
    double relaxation = 0.0; // smallest uniform slack on the bound rows: max over rows of worst - bound
    SolveStatus status = SolveStatus::NumericalFailure;
};

/// Solves the certificate LP for a constant L with a free relaxation added to every bound row;
/// a certificate exists iff the optimal relaxation is <= tol.
CertificateSearch certificate_exists(const Matrix& l, const Vector& cap, const Vector& bound, double tol = 1e-7,
                                     const SolverOptions& options = {1e-9, 200000, 0.0, false});

struct ConvergenceReport {
    std::optional<int> t_star;
    double lyapunov_ratio_max = 0.0; // max sqrt(e'^T P e' / e^T P e), comparable to lambda
    bool passed = true;
    int violations = 0;
};

/// Checks e^T A^T P A e <= lambda^2 e^T P e + 1e-9 on random zero-sum e, A = M - v 1^T.
ConvergenceReport contraction_check(const Matrix& m, const Vector& v, const Matrix& p_lyap, double lambda, int trials,
                                    std::uint64_t seed = 1);

/// Follows x(t+1) = M x(t): first t with ||x(t) - v||_inf < tol and the P-weighted error ratios per step
/// (steps with ||x(t) - v||_inf < 1e-6 are skipped as unresolvable).
ConvergenceReport trajectory_convergence(const Matrix& m, const Vector& v, const Vector& x0, const Matrix& p_lyap,
                                         double lambda, int t_max, double tol = 1e-3);

/// Strong connectivity of the graph with an edge wherever the indicator is positive.
bool connectivity_check(const Matrix& indicator);

double detailed_balance_residual(const Matrix& m, const Vector& v);

struct McComparison {
    std::vector<double> max_deviation; // per step
    double band_coverage = 0.0;        // fraction of (t, state) pairs inside 3 sigma
    std::vector<std::pair<int, int>> safety_flags; // (t, state) with x_hat > d + 3 sigma_hat
    bool analytic_safe = true;                      // x(t) <= d + 1e-8 for all t
    DensityHistory analytic;
};

McComparison compare_mc_analytic(const DensityHistory& empirical, const ColumnStochasticMatrix& m,
                                 const ProbVector& x0, int num_agents, const std::optional<Vector>& d = std::nullopt);

struct CheckResult {
    std::string name;
    bool passed = true;
    double residual = 0.0;
    nlohmann::json witness;
};

nlohmann::json to_json(const CheckResult& check);
nlohmann::json report_json(const std::vector<CheckResult>& checks);

} // namespace safemc

#include "safemc/synthesis.hpp"

#include <cmath>
#include <string>

namespace safemc {

using conic::Cone;
using conic::ConstraintGroup;
using conic::LinearExpr;

namespace blocks {
std::string plan(int k) { return "P_" + std::to_string(k + 1); }
std::string certificate_s(int s) { return "S_" + std::to_string(s + 1); }
std::string certificate_y(int s) { return "y_" + std::to_string(s + 1); }
} // namespace blocks

namespace {

Matrix coefficient_for(SafetySpec::Form form, int rows, int n) {
    switch (form) {
    case SafetySpec::Form::Constant: return Matrix::Zero(rows, n);
    case SafetySpec::Form::PlusM: return Matrix::Identity(n, n);
    case SafetySpec::Form::MinusM: return -Matrix::Identity(n, n);
    case SafetySpec::Form::Rate: {
        Matrix c(2 * n, n);
        c << Matrix::Identity(n, n), -Matrix::Identity(n, n);
        return c;
    }
    }
    return Matrix::Zero(rows, n);
}

void check_lambda(double lambda) {
    if (!(lambda >= 0.0 && lambda < 1.0)) {
        throw RangeViolation("decay rate must lie in [0, 1), got " + std::to_string(lambda));
    }
}

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> support_of(const AdjacencyMatrix& adjacency,
                                                               const EnvironmentModel& env) {
    const int n = env.n();
    Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> s(n, n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            bool reachable = env.off(i, j) > 0.0;
            for (const auto& g : env.on) reachable = reachable || g(i, j) > 0.0;
            s(i, j) = reachable && adjacency.permits_entry(i, j);
        }
    }
    return s;
}

} // namespace

SafetySpec SafetySpec::density_upper(const Vector& d) {
    const int n = static_cast<int>(d.size());
    return general(Form::PlusM, Matrix::Zero(n, n), d, d);
}

SafetySpec SafetySpec::density_rate(const Vector& f, const Vector& d) {
    const int n = static_cast<int>(d.size());
    if (f.size() != n) throw DimensionMismatch("rate bound and density cap differ in length");
    Matrix l_const(2 * n, n);
    l_const << -Matrix::Identity(n, n), Matrix::Identity(n, n);
    Vector bound(2 * n);
    bound << f, f;
    return general(Form::Rate, std::move(l_const), d, std::move(bound));
}

SafetySpec SafetySpec::general(Form form, Matrix l_const, Vector cap, Vector bound) {
    SafetySpec s;
    s.form = form;
    s.l_coeff = coefficient_for(form, static_cast<int>(l_const.rows()), static_cast<int>(cap.size()));
    s.l_const = std::move(l_const);
    s.cap = std::move(cap);
    s.bound = std::move(bound);
    s.check();
    return s;
}

void SafetySpec::check() const {
    const int r = rows();
    const int nn = n();
    if (l_const.rows() != r || l_const.cols() != nn || l_coeff.rows() != r || l_coeff.cols() != nn) {
        throw DimensionMismatch("safety matrices must be " + std::to_string(r) + "x" + std::to_string(nn));
    }
    if (!((cap.array() >= 0.0).all() && (cap.array() <= 1.0).all())) {
        throw RangeViolation("safety cap must lie in [0, 1]");
    }
    if (!bound.allFinite() || !l_const.allFinite()) throw RangeViolation("safety data must be finite");
}

const char* form_name(SafetySpec::Form form) {
    switch (form) {
    case SafetySpec::Form::Constant: return "none";
    case SafetySpec::Form::PlusM: return "plus_M";
    case SafetySpec::Form::MinusM: return "minus_M";
    case SafetySpec::Form::Rate: return "rate";
    }
    return "none";
}

SafetySpec::Form parse_form(const std::string& name) {
    if (name == "none") return SafetySpec::Form::Constant;
    if (name == "plus_M") return SafetySpec::Form::PlusM;
    if (name == "minus_M") return SafetySpec::Form::MinusM;
    if (name == "rate") return SafetySpec::Form::Rate;
    throw RangeViolation("unknown safety form '" + name + "'");
}

const char* mode_name(const ErgodicityMode& mode) {
    if (std::holds_alternative<DecayLmi>(mode)) return "decay_lmi";
    if (std::holds_alternative<Reversible>(mode)) return "reversible";
    return "connectivity";
}

Objective Objective::minimize_off_diagonal_action(int n) {
    return Objective{-Matrix::Identity(n, n), static_cast<double>(n)};
}

void SynthesisSpec::check() const {
    const int nn = n();
    if (adjacency.size() != nn) throw DimensionMismatch("adjacency size differs from state count");
    if (target.size() != nn) throw DimensionMismatch("target distribution has the wrong length");
    for (const auto& s : safety) {
        if (s.n() != nn) throw DimensionMismatch("safety specification has the wrong state count");
        s.check();
    }
    if (const auto* d = std::get_if<DecayLmi>(&ergodicity)) {
        check_lambda(d->lambda);
        if (d->f && (d->f->rows() != nn || d->f->cols() != nn)) {
            throw DimensionMismatch("decay LMI multiplier F has the wrong shape");
        }
        if (!d->f) {
            for (int i = 0; i < nn; ++i) {
                if (!(target[i] > 0.0)) throw ZeroTargetEntry(i);
            }
        }
    } else if (const auto* r = std::get_if<Reversible>(&ergodicity)) {
        check_lambda(r->lambda);
        for (int i = 0; i < nn; ++i) {
            if (!(target[i] > 0.0)) throw ZeroTargetEntry(i);
        }
    } else {
        const auto& c = std::get<Connectivity>(ergodicity);
        if (!(c.epsilon > 0.0)) throw RangeViolation("connectivity floor must be positive");
    }
    if (objective && (objective->weights.rows() != nn || objective->weights.cols() != nn)) {
        throw DimensionMismatch("objective weights have the wrong shape");
    }
}

Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> realizable_support(const SynthesisSpec& spec) {
    return support_of(spec.adjacency, spec.env);
}

void check_structure(const SynthesisSpec& spec) {
    const auto support = realizable_support(spec);
    std::vector<std::string> reasons;
    for (int j = 0; j < spec.n(); ++j) {
        if (!support.col(j).any()) {
            reasons.push_back("state " + std::to_string(j + 1) + " has no permitted outgoing transition");
        }
    }
    for (int i = 0; i < spec.n(); ++i) {
        if (spec.target[i] > 0.0 && !support.row(i).any()) {
            reasons.push_back("state " + std::to_string(i + 1) +
                              " carries target mass but no permitted transition reaches it");
        }
    }
    if (!reasons.empty()) throw InfeasibleByStructure(std::move(reasons));
}

void build_safety_dual(ConicProgram& program, const SafetySpec& sspec, const SafetyDualOptions& options) {
    sspec.check();
    const int r = sspec.rows();
    const int n = sspec.n();
    const bool uses_chain = !sspec.l_coeff.isZero(0.0);
    if (uses_chain && options.chain_block.empty()) {
        throw Error("safety specification depends on M but no chain block was given");
    }
    const std::string s_name = "S_" + options.tag;
    const std::string y_name = "y_" + options.tag;
    program.add_block(s_name, r, n);
    program.add_block(y_name, r, 1);

    ConstraintGroup s_nonneg{"safety_" + options.tag + "_S", Cone::Nonnegative, 0, {}};
    ConstraintGroup dual{"safety_" + options.tag + "_dual", Cone::Nonnegative, 0, {}};
    ConstraintGroup bound{"safety_" + options.tag + "_bound", Cone::Nonnegative, 0, {}};

    for (int l = 0; l < r; ++l) {
        // y + bound - sum_j [L + S + y 1^T](l, j) cap(j) >= 0
        LinearExpr bound_row(sspec.bound(l));
        bound_row.add(program.var(y_name, l), 1.0);
        if (options.relaxation_var) bound_row.add(*options.relaxation_var, 1.0);
        for (int j = 0; j < n; ++j) {
            LinearExpr entry(sspec.l_const(l, j));
            if (uses_chain) {
                for (int i = 0; i < n; ++i) {
                    if (sspec.l_coeff(l, i) != 0.0) entry.add(program.var(options.chain_block, i, j), sspec.l_coeff(l, i));
                }
            }
            entry.add(program.var(s_name, l, j), 1.0);
            entry.add(program.var(y_name, l), 1.0);

            s_nonneg.rows.push_back(LinearExpr().add(program.var(s_name, l, j), 1.0));
            bound_row.add(entry, -sspec.cap(j));
            dual.rows.push_back(std::move(entry));
        }
        bound.rows.push_back(std::move(bound_row));
    }
    program.add_group(std::move(s_nonneg));
    program.add_group(std::move(dual));
    program.add_group(std::move(bound));
}

Matrix decay_weight(const DecayLmi& decay, const ProbVector& target) {
    if (decay.f) return *decay.f;
    const Vector& v = target.values();
    for (int i = 0; i < v.size(); ++i) {
        if (!(v(i) > 0.0)) throw ZeroTargetEntry(i);
    }
    return v.cwiseInverse().asDiagonal();
}

std::optional<Vector> lyapunov_congruence(const ErgodicityMode& mode, const ProbVector& target) {
    const auto* decay = std::get_if<DecayLmi>(&mode);
    if (!decay) return std::nullopt;
    const Matrix f = decay_weight(*decay, target);
    const Vector diag = f.diagonal();
    if (!(f - Matrix(diag.asDiagonal())).isZero(0.0) || (diag.array() <= 0.0).any()) return std::nullopt;
    return diag.cwiseSqrt();
}

void build_ergodicity(ConicProgram& program, const ErgodicityMode& mode, const ProbVector& target,
                      const AdjacencyMatrix& adjacency, const EnvironmentModel& env) {
    const int n = target.size();
    const Vector& v = target.values();
    const std::string& M = blocks::chain;

    ConstraintGroup stationary{"stationary", Cone::Zero, 0, {}};
    for (int i = 0; i < n; ++i) {
        LinearExpr row(-v(i));
        for (int j = 0; j < n; ++j) row.add(program.var(M, i, j), v(j));
        stationary.rows.push_back(std::move(row));
    }
    program.add_group(std::move(stationary));

    if (const auto* decay = std::get_if<DecayLmi>(&mode)) {
        check_lambda(decay->lambda);
        const Matrix f = decay_weight(*decay, target);
        const std::optional<Vector> root = lyapunov_congruence(mode, target);
        program.add_block(blocks::lyapunov, n, n, true);
        const double lambda_sq = decay->lambda * decay->lambda;

        // [[lambda^2 P, (M - v 1^T)^T F^T], [F (M - v 1^T), F + F^T - P]] >= 0.
        // For diagonal F = D^2 the block holds D^-1 P D^-1 and the LMI is conjugated by diag(D^-1, D^-1),
        // which turns the lower-right block into 2I - block and keeps entries of order one.
        ConstraintGroup lmi{"decay_lmi", Cone::Psd, 2 * n, {}};
        for (int c = 0; c < 2 * n; ++c) {
            for (int r = c; r < 2 * n; ++r) {
                LinearExpr e;
                if (r < n) {
                    e.add(program.var(blocks::lyapunov, r, c), lambda_sq);
                } else if (c < n) {
                    const int i = r - n;
                    if (root) {
                        const double w = (*root)(i) / (*root)(c);
                        e.add(program.var(M, i, c), w);
                        e.add_constant(-w * v(i));
                    } else {
                        for (int l = 0; l < n; ++l) {
                            if (f(i, l) == 0.0) continue;
                            e.add(program.var(M, l, c), f(i, l));
                            e.add_constant(-f(i, l) * v(l));
                        }
                    }
                } else {
                    const int i = r - n;
                    const int j = c - n;
                    e.add_constant(root ? (i == j ? 2.0 : 0.0) : f(i, j) + f(j, i));
                    e.add(program.var(blocks::lyapunov, i, j), -1.0);
                }
                lmi.rows.push_back(std::move(e));
            }
        }
        program.add_group(std::move(lmi));
        program.parameters["lambda"] = decay->lambda;
    } else if (const auto* rev = std::get_if<Reversible>(&mode)) {
        check_lambda(rev->lambda);
        for (int i = 0; i < n; ++i) {
            if (!(v(i) > 0.0)) throw ZeroTargetEntry(i);
        }
        const Vector h = v.cwiseSqrt();

        ConstraintGroup balance{"detailed_balance", Cone::Zero, 0, {}};
        for (int j = 0; j < n; ++j) {
            for (int i = j + 1; i < n; ++i) {
                balance.rows.push_back(
                    LinearExpr().add(program.var(M, i, j), v(j)).add(program.var(M, j, i), -v(i)));
            }
        }
        program.add_group(std::move(balance));

        // X = H^-1 M H - h h^T, symmetrized entrywise
        auto x_entry = [&](int i, int j) {
            LinearExpr e(-h(i) * h(j));
            e.add(program.var(M, i, j), 0.5 * h(j) / h(i));
            e.add(program.var(M, j, i), 0.5 * h(i) / h(j));
            return e;
        };
        ConstraintGroup upper{"spectral_upper", Cone::Psd, n, {}};
        ConstraintGroup lower{"spectral_lower", Cone::Psd, n, {}};
        for (int c = 0; c < n; ++c) {
            for (int r = c; r < n; ++r) {
                LinearExpr x = x_entry(r, c);
                LinearExpr up = LinearExpr(r == c ? rev->lambda : 0.0).add(x, -1.0);
                LinearExpr lo = LinearExpr(r == c ? rev->lambda : 0.0).add(x, 1.0);
                upper.rows.push_back(std::move(up));
                lower.rows.push_back(std::move(lo));
            }
        }
        program.add_group(std::move(upper));
        program.add_group(std::move(lower));
        program.parameters["lambda"] = rev->lambda;
    } else {
        const auto& conn = std::get<Connectivity>(mode);
        const auto support = support_of(adjacency, env);
        ConstraintGroup floor{"connectivity_floor", Cone::Nonnegative, 0, {}};
        for (int j = 0; j < n; ++j) {
            for (int i = 0; i < n; ++i) {
                if (support(i, j)) floor.rows.push_back(LinearExpr(-conn.epsilon).add(program.var(M, i, j), 1.0));
            }
        }
        program.add_group(std::move(floor));
        program.parameters["epsilon"] = conn.epsilon;
    }
}

ConicProgram build_program(const SynthesisSpec& spec) {
    spec.check();
    check_structure(spec);

    const int n = spec.n();
    const int m = spec.m();
    const std::string& M = blocks::chain;
    ConicProgram program;
    program.add_block(M, n, n);
    for (int k = 0; k < m; ++k) program.add_block(blocks::plan(k), n, n);
    program.add_block(blocks::beta, m, n);

    ConstraintGroup nonneg_m{"nonneg_M", Cone::Nonnegative, 0, {}};
    ConstraintGroup nonneg_p{"nonneg_P", Cone::Nonnegative, 0, {}};
    ConstraintGroup column_sum{"column_sum", Cone::Zero, 0, {}};
    ConstraintGroup transition{"transition", Cone::Zero, 0, {}};
    ConstraintGroup coupling{"coupling", Cone::Zero, 0, {}};
    ConstraintGroup budget_slack{"budget_slack", Cone::Nonnegative, 0, {}};
    ConstraintGroup budget_total{"budget_total", Cone::Nonnegative, 0, {}};

    for (int j = 0; j < n; ++j) {
        LinearExpr col(-1.0);
        // ON mass leaving column j: sum_k sum_l G_k(l, j) P_k(l, j)
        LinearExpr on_mass;
        for (int k = 0; k < m; ++k) {
            for (int l = 0; l < n; ++l) {
                on_mass.add(program.var(blocks::plan(k), l, j), spec.env.on[k](l, j));
            }
        }
        for (int i = 0; i < n; ++i) {
            const int mij = program.var(M, i, j);
            nonneg_m.rows.push_back(LinearExpr().add(mij, 1.0));
            col.add(mij, 1.0);
            if (!spec.adjacency.permits_entry(i, j)) transition.rows.push_back(LinearExpr().add(mij, 1.0));

            // M - sum_k G_k.P_k - G_off.(1 (1^T - 1^T sum_k G_k.P_k)) = 0
            const double g_off = spec.env.off(i, j);
            LinearExpr c(-g_off);
            c.add(mij, 1.0);
            for (int k = 0; k < m; ++k) c.add(program.var(blocks::plan(k), i, j), -spec.env.on[k](i, j));
            if (g_off != 0.0) {
                for (const auto& [var, coeff] : on_mass.terms()) c.add(var, coeff * g_off);
            }
            coupling.rows.push_back(std::move(c));
        }
        column_sum.rows.push_back(std::move(col));

        LinearExpr total(1.0);
        for (int k = 0; k < m; ++k) {
            const int beta = program.var(blocks::beta, k, j);
            total.add(beta, -1.0);
            for (int i = 0; i < n; ++i) {
                const int p = program.var(blocks::plan(k), i, j);
                nonneg_p.rows.push_back(LinearExpr().add(p, 1.0));
                budget_slack.rows.push_back(LinearExpr().add(beta, 1.0).add(p, -1.0));
            }
        }
        budget_total.rows.push_back(std::move(total));
    }

    program.add_group(std::move(nonneg_m));
    program.add_group(std::move(nonneg_p));
    program.add_group(std::move(column_sum));
    if (!transition.rows.empty()) program.add_group(std::move(transition));
    program.add_group(std::move(coupling));
    program.add_group(std::move(budget_slack));
    program.add_group(std::move(budget_total));

    for (int s = 0; s < static_cast<int>(spec.safety.size()); ++s) {
        build_safety_dual(program, spec.safety[s], SafetyDualOptions{std::to_string(s + 1), M, std::nullopt});
    }
    build_ergodicity(program, spec.ergodicity, spec.target, spec.adjacency, spec.env);

    const Objective objective = spec.objective.value_or(Objective::minimize_off_diagonal_action(n));
    program.objective = LinearExpr(objective.constant);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            if (objective.weights(i, j) != 0.0) program.objective.add(program.var(M, i, j), objective.weights(i, j));
        }
    }
    program.parameters["n"] = n;
    program.parameters["m"] = m;
    return program;
}

double mode_lambda(const ErgodicityMode& mode) {
    if (const auto* d = std::get_if<DecayLmi>(&mode)) return d->lambda;
    if (const auto* r = std::get_if<Reversible>(&mode)) return r->lambda;
    return -1.0;
}

SynthesisSpec with_lambda(const SynthesisSpec& spec, double lambda) {
    SynthesisSpec out = spec;
    if (auto* d = std::get_if<DecayLmi>(&out.ergodicity)) {
        d->lambda = lambda;
    } else if (auto* r = std::get_if<Reversible>(&out.ergodicity)) {
        r->lambda = lambda;
    } else {
        throw Error("decay-rate search needs a DecayLmi or Reversible specification");
    }
    return out;
}

LineSearchResult line_search_lambda(const SynthesisSpec& spec_template, double lo, double hi, double tol,
                                    const FeasibilityOracle& feasible) {
    if (mode_lambda(spec_template.ergodicity) < 0.0) {
        throw Error("decay-rate search needs a DecayLmi or Reversible specification");
    }
    if (!(lo >= 0.0 && lo < hi && hi <= 1.0) || !(tol > 0.0)) {
        throw RangeViolation("line search needs 0 <= lo < hi <= 1 and tol > 0");
    }
    // lambda = 1 is outside the mode's domain; probe just below it instead.
    const double upper_probe = hi < 1.0 ? hi : std::nextafter(1.0, 0.0);

    LineSearchResult result;
    result.total_solves = 1;
    if (!feasible(build_program(with_lambda(spec_template, upper_probe)))) throw InfeasibleAtUpper(hi);

    const int iterations = static_cast<int>(std::ceil(std::log2((hi - lo) / tol)));
    double a = lo;
    double b = hi;
    for (int it = 0; it < iterations; ++it) {
        const double mid = 0.5 * (a + b);
        ++result.bisection_solves;
        ++result.total_solves;
        if (feasible(build_program(with_lambda(spec_template, mid)))) {
            b = mid;
        } else {
            a = mid;
        }
    }
    result.lambda = b;
    return result;
}

} // namespace safemc

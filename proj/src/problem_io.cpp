#include "safemc/problem_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace safemc {

using nlohmann::json;

InputError::InputError(Kind k, std::string ptr, const std::string& message)
    : Error(message + " (at " + (ptr.empty() ? std::string("/") : ptr) + ")"), kind(k), pointer(std::move(ptr)) {}

const char* InputError::kind_name() const {
    switch (kind) {
    case Kind::Parse: return "ParseError";
    case Kind::Dimension: return "DimensionError";
    case Kind::Stochasticity: return "StochasticityError";
    }
    return "ParseError";
}

namespace {

using Kind = InputError::Kind;

std::string child(const std::string& ptr, const std::string& key) { return ptr + "/" + key; }
std::string child(const std::string& ptr, std::size_t index) { return ptr + "/" + std::to_string(index); }

const json& field(const json& obj, const std::string& ptr, const std::string& key) {
    if (!obj.is_object() || !obj.contains(key)) throw InputError(Kind::Parse, child(ptr, key), "missing field");
    return obj.at(key);
}

double number(const json& j, const std::string& ptr) {
    if (!j.is_number()) throw InputError(Kind::Parse, ptr, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw InputError(Kind::Parse, ptr, "expected a finite number");
    return v;
}

int integer(const json& j, const std::string& ptr) {
    if (!j.is_number_integer()) throw InputError(Kind::Parse, ptr, "expected an integer");
    return j.get<int>();
}

Vector vector_of(const json& j, const std::string& ptr, int n) {
    if (!j.is_array()) throw InputError(Kind::Parse, ptr, "expected an array");
    if (static_cast<int>(j.size()) != n) {
        throw InputError(Kind::Dimension, ptr, "expected length " + std::to_string(n) + ", got " + std::to_string(j.size()));
    }
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = number(j[i], child(ptr, i));
    return v;
}

Matrix matrix_of(const json& j, const std::string& ptr, int rows, int cols) {
    if (!j.is_array()) throw InputError(Kind::Parse, ptr, "expected an array of rows");
    if (static_cast<int>(j.size()) != rows) {
        throw InputError(Kind::Dimension, ptr, "expected " + std::to_string(rows) + " rows, got " + std::to_string(j.size()));
    }
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) m.row(i) = vector_of(j[i], child(ptr, i), cols).transpose();
    return m;
}

ColumnStochasticMatrix stochastic_of(Matrix m, const std::string& ptr, bool renormalize) {
    if (renormalize) {
        for (int c = 0; c < m.cols(); ++c) {
            const double s = m.col(c).sum();
            if (s > 0.0) m.col(c) /= s;
        }
    }
    try {
        return ColumnStochasticMatrix::validate(m, tolerance::user_input);
    } catch (const Error& e) {
        throw InputError(Kind::Stochasticity, ptr, e.what());
    }
}

SafetySpec safety_of(const json& j, const std::string& ptr, int n) {
    const std::string kind = field(j, ptr, "kind").is_string() ? j.at("kind").get<std::string>() : "";
    try {
        if (kind == "density_upper") return SafetySpec::density_upper(vector_of(field(j, ptr, "d"), child(ptr, "d"), n));
        if (kind == "density_rate") {
            return SafetySpec::density_rate(vector_of(field(j, ptr, "f"), child(ptr, "f"), n),
                                            vector_of(field(j, ptr, "d"), child(ptr, "d"), n));
        }
        if (kind == "general") {
            const auto& form_j = field(j, ptr, "form");
            if (!form_j.is_string()) throw InputError(Kind::Parse, child(ptr, "form"), "expected a string");
            const auto form = parse_form(form_j.get<std::string>());
            const auto& bound_j = field(j, ptr, "bound");
            const int r = bound_j.is_array() ? static_cast<int>(bound_j.size()) : 0;
            return SafetySpec::general(form, matrix_of(field(j, ptr, "L"), child(ptr, "L"), r, n),
                                       vector_of(field(j, ptr, "cap"), child(ptr, "cap"), n),
                                       vector_of(bound_j, child(ptr, "bound"), r));
        }
    } catch (const InputError&) {
        throw;
    } catch (const DimensionMismatch& e) {
        throw InputError(Kind::Dimension, ptr, e.what());
    } catch (const Error& e) {
        throw InputError(Kind::Parse, ptr, e.what());
    }
    throw InputError(Kind::Parse, child(ptr, "kind"), "expected density_upper, density_rate or general");
}

ErgodicityMode ergodicity_of(const json& j, const std::string& ptr, int n) {
    const auto& mode_j = field(j, ptr, "mode");
    const std::string mode = mode_j.is_string() ? mode_j.get<std::string>() : "";
    if (mode == "decay_lmi") {
        DecayLmi d;
        if (j.contains("lambda")) d.lambda = number(j["lambda"], child(ptr, "lambda"));
        if (j.contains("F")) {
            const auto& f = j["F"];
            if (f.is_string()) {
                if (f.get<std::string>() != "diag_v_inv") {
                    throw InputError(Kind::Parse, child(ptr, "F"), "expected \"diag_v_inv\" or a matrix");
                }
            } else {
                d.f = matrix_of(f, child(ptr, "F"), n, n);
            }
        }
        return d;
    }
    if (mode == "reversible") {
        Reversible r;
        if (j.contains("lambda")) r.lambda = number(j["lambda"], child(ptr, "lambda"));
        return r;
    }
    if (mode == "connectivity") {
        Connectivity c;
        if (j.contains("epsilon")) c.epsilon = number(j["epsilon"], child(ptr, "epsilon"));
        return c;
    }
    throw InputError(Kind::Parse, child(ptr, "mode"), "expected decay_lmi, reversible or connectivity");
}

} // namespace

Problem parse_problem(const json& doc) {
    if (!doc.is_object()) throw InputError(Kind::Parse, "", "problem must be a JSON object");
    const auto& conv = field(doc, "", "convention");
    if (!conv.is_string() || conv.get<std::string>() != "column_stochastic") {
        throw InputError(Kind::Parse, "/convention", "only \"column_stochastic\" is accepted");
    }
    const int n = integer(field(doc, "", "n"), "/n");
    const int m = integer(field(doc, "", "m"), "/m");
    if (n < 1 || m < 1) throw InputError(Kind::Dimension, n < 1 ? "/n" : "/m", "must be positive");
    const bool renormalize = doc.value("renormalize", false);
    const double scale = doc.contains("matrix_scale") ? number(doc["matrix_scale"], "/matrix_scale") : 1.0;

    const auto& g_j = field(doc, "", "G");
    if (!g_j.is_array()) throw InputError(Kind::Parse, "/G", "expected a list of matrices");
    if (static_cast<int>(g_j.size()) != m) {
        throw InputError(Kind::Dimension, "/G", "expected " + std::to_string(m) + " matrices");
    }
    std::vector<ColumnStochasticMatrix> on;
    for (int k = 0; k < m; ++k) {
        const std::string ptr = child("/G", k);
        on.push_back(stochastic_of(scale * matrix_of(g_j[k], ptr, n, n), ptr, renormalize));
    }
    const auto& off_j = field(doc, "", "G_off");
    Matrix off_raw;
    if (off_j.is_string()) {
        if (off_j.get<std::string>() != "identity") throw InputError(Kind::Parse, "/G_off", "expected \"identity\" or a matrix");
        off_raw = Matrix::Identity(n, n);
    } else {
        off_raw = scale * matrix_of(off_j, "/G_off", n, n);
    }
    EnvironmentModel env(std::move(on), stochastic_of(off_raw, "/G_off", renormalize));

    const Matrix a_raw = matrix_of(field(doc, "", "A_a"), "/A_a", n, n);
    std::optional<AdjacencyMatrix> adjacency;
    try {
        adjacency = AdjacencyMatrix::validate(a_raw);
    } catch (const Error& e) {
        throw InputError(Kind::Parse, "/A_a", e.what());
    }

    auto prob_of = [&](const std::string& key) {
        Vector raw = vector_of(field(doc, "", key), "/" + key, n);
        if (renormalize && raw.sum() > 0.0) raw /= raw.sum();
        try {
            return ProbVector::validate(raw, tolerance::user_input);
        } catch (const Error& e) {
            throw InputError(Kind::Stochasticity, "/" + key, e.what());
        }
    };
    ProbVector target = prob_of("v");
    ProbVector x0 = prob_of("x0");

    std::vector<SafetySpec> safety;
    if (doc.contains("safety")) {
        if (!doc["safety"].is_array()) throw InputError(Kind::Parse, "/safety", "expected a list");
        for (std::size_t s = 0; s < doc["safety"].size(); ++s) {
            safety.push_back(safety_of(doc["safety"][s], child("/safety", s), n));
        }
    }
    const ErgodicityMode ergodicity = ergodicity_of(field(doc, "", "ergodicity"), "/ergodicity", n);

    std::optional<Objective> objective;
    if (doc.contains("objective")) {
        const auto& o = doc["objective"];
        objective = Objective{matrix_of(field(o, "/objective", "weights"), "/objective/weights", n, n),
                              o.contains("constant") ? number(o["constant"], "/objective/constant") : 0.0};
    }

    SolverOptions solver;
    if (doc.contains("solver")) {
        const auto& s = doc["solver"];
        if (s.contains("eps")) solver.eps = number(s["eps"], "/solver/eps");
        if (s.contains("max_iters")) solver.max_iters = integer(s["max_iters"], "/solver/max_iters");
        if (s.contains("time_limit")) solver.time_limit_secs = number(s["time_limit"], "/solver/time_limit");
        if (!(solver.eps > 0.0) || solver.max_iters < 1) throw InputError(Kind::Parse, "/solver", "invalid solver options");
    }

    SimulationConfig sim;
    if (doc.contains("simulation")) {
        const auto& s = doc["simulation"];
        if (s.contains("N_a")) sim.num_agents = integer(s["N_a"], "/simulation/N_a");
        if (s.contains("t_max")) sim.t_max = integer(s["t_max"], "/simulation/t_max");
        if (s.contains("seed")) {
            if (!s["seed"].is_number_unsigned()) throw InputError(Kind::Parse, "/simulation/seed", "expected a nonnegative integer");
            sim.seed = s["seed"].get<std::uint64_t>();
        }
        if (s.contains("exact_counts")) sim.exact_counts = s["exact_counts"].get<bool>();
        if (sim.num_agents < 1 || sim.t_max < 1) throw InputError(Kind::Parse, "/simulation", "N_a and t_max must be positive");
    }

    std::optional<DecisionPolicy> reference;
    if (doc.contains("reference_policy")) {
        const auto& r = doc["reference_policy"];
        const double q_scale = r.contains("Q_scale") ? number(r["Q_scale"], "/reference_policy/Q_scale") : 1.0;
        DecisionPolicy p;
        const Matrix alpha = matrix_of(field(r, "/reference_policy", "alpha"), "/reference_policy/alpha", m, n);
        const auto& q_j = field(r, "/reference_policy", "Q");
        if (!q_j.is_array() || static_cast<int>(q_j.size()) != m) {
            throw InputError(Kind::Dimension, "/reference_policy/Q", "expected " + std::to_string(m) + " matrices");
        }
        for (int k = 0; k < m; ++k) {
            p.alpha.push_back(alpha.row(k).transpose());
            p.q.push_back(q_scale * matrix_of(q_j[k], child("/reference_policy/Q", k), n, n));
        }
        reference = std::move(p);
    }

    SynthesisSpec spec{std::move(env), std::move(*adjacency), std::move(target), std::move(safety), ergodicity,
                       std::move(objective)};
    try {
        spec.check();
    } catch (const DimensionMismatch& e) {
        throw InputError(Kind::Dimension, "", e.what());
    } catch (const ZeroTargetEntry& e) {
        throw InputError(Kind::Parse, "/v/" + std::to_string(e.state), e.what());
    } catch (const RangeViolation& e) {
        throw InputError(Kind::Parse, "/ergodicity", e.what());
    }

    return Problem{std::move(spec),
                   std::move(x0),
                   solver,
                   sim,
                   std::move(reference),
                   doc.value("description", std::string()),
                   doc.value("metadata", json::object())};
}

Problem parse_problem_text(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw InputError(Kind::Parse, "", std::string("invalid JSON: ") + e.what());
    }
    return parse_problem(doc);
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(Kind::Parse, "", "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace

Problem load_problem(const std::string& path) {
    return parse_problem_text(read_file(path));
}

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (int i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (int j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Matrix matrix_from_json(const json& rows, int n_rows, int n_cols, const std::string& pointer) {
    return matrix_of(rows, pointer, n_rows, n_cols);
}

json vector_json(const Vector& v) {
    json out = json::array();
    for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

json write_problem(const Problem& p) {
    const SynthesisSpec& s = p.spec;
    json doc;
    doc["convention"] = "column_stochastic";
    doc["description"] = p.description;
    doc["n"] = s.n();
    doc["m"] = s.m();
    doc["renormalize"] = false;
    doc["matrix_scale"] = 1.0;
    doc["G"] = json::array();
    for (const auto& g : s.env.on) doc["G"].push_back(matrix_json(g.matrix()));
    doc["G_off"] = matrix_json(s.env.off.matrix());
    doc["A_a"] = matrix_json(s.adjacency.matrix());
    doc["v"] = vector_json(s.target.values());
    doc["x0"] = vector_json(p.x0.values());
    doc["safety"] = json::array();
    for (const auto& sp : s.safety) {
        doc["safety"].push_back({{"kind", "general"},
                                 {"form", form_name(sp.form)},
                                 {"L", matrix_json(sp.l_const)},
                                 {"cap", vector_json(sp.cap)},
                                 {"bound", vector_json(sp.bound)}});
    }
    json erg;
    erg["mode"] = mode_name(s.ergodicity);
    if (const auto* d = std::get_if<DecayLmi>(&s.ergodicity)) {
        erg["lambda"] = d->lambda;
        erg["F"] = d->f ? matrix_json(*d->f) : json("diag_v_inv");
    } else if (const auto* r = std::get_if<Reversible>(&s.ergodicity)) {
        erg["lambda"] = r->lambda;
    } else {
        erg["epsilon"] = std::get<Connectivity>(s.ergodicity).epsilon;
    }
    doc["ergodicity"] = erg;
    if (s.objective) doc["objective"] = {{"weights", matrix_json(s.objective->weights)}, {"constant", s.objective->constant}};
    doc["solver"] = {{"eps", p.solver.eps}, {"max_iters", p.solver.max_iters}, {"time_limit", p.solver.time_limit_secs}};
    doc["simulation"] = {{"N_a", p.simulation.num_agents},
                         {"t_max", p.simulation.t_max},
                         {"seed", p.simulation.seed},
                         {"exact_counts", p.simulation.exact_counts}};
    if (p.reference_policy) {
        json alpha = json::array();
        json q = json::array();
        for (int k = 0; k < p.reference_policy->m(); ++k) {
            alpha.push_back(vector_json(p.reference_policy->alpha[k]));
            q.push_back(matrix_json(p.reference_policy->q[k]));
        }
        doc["reference_policy"] = {{"alpha", alpha}, {"Q", q}, {"Q_scale", 1.0}};
    }
    doc["metadata"] = p.metadata;
    return doc;
}

std::string spec_hash(const Problem& problem) {
    const std::string text = write_problem(problem).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json write_policy(const Problem& problem, const SynthesisResult& result, const Solution& solution) {
    json doc;
    doc["convention"] = "column_stochastic";
    doc["n"] = result.m.size();
    doc["m"] = result.plan.m();
    json alpha = json::array();
    json q = json::array();
    json p = json::array();
    for (int k = 0; k < result.plan.m(); ++k) {
        alpha.push_back(vector_json(result.policy.alpha[k]));
        q.push_back(matrix_json(result.policy.q[k]));
        p.push_back(matrix_json(result.plan[k]));
    }
    doc["alpha"] = alpha;
    doc["Q"] = q;
    doc["P"] = p;
    doc["M"] = matrix_json(result.m.matrix());

    json residuals = json::array();
    for (const auto& r : result.report) {
        residuals.push_back({{"name", r.name}, {"residual", r.residual}, {"tol", r.tol}, {"passed", r.passed}});
    }
    json certs = json::array();
    for (const auto& c : result.certificates) certs.push_back({{"S", matrix_json(c.s)}, {"y", vector_json(c.y)}});
    doc["metadata"] = {{"spec_hash", spec_hash(problem)},
                       {"solver",
                        {{"backend", "scs"},
                         {"status", status_name(solution.status)},
                         {"iterations", solution.stats.iterations},
                         {"solve_time_ms", solution.stats.solve_time_ms},
                         {"primal_residual", solution.stats.primal_residual},
                         {"dual_residual", solution.stats.dual_residual},
                         {"gap", solution.stats.gap},
                         {"objective", solution.objective_value}}},
                       {"residuals", residuals},
                       {"projection_distance", result.projection_distance},
                       {"certificates", certs},
                       {"lyapunov", result.lyapunov ? matrix_json(*result.lyapunov) : json(nullptr)}};
    return doc;
}

PolicyFile parse_policy(const json& doc) {
    if (!doc.is_object()) throw InputError(Kind::Parse, "", "policy must be a JSON object");
    const auto& conv = field(doc, "", "convention");
    if (!conv.is_string() || conv.get<std::string>() != "column_stochastic") {
        throw InputError(Kind::Parse, "/convention", "only \"column_stochastic\" is accepted");
    }
    const int n = integer(field(doc, "", "n"), "/n");
    const int m = integer(field(doc, "", "m"), "/m");
    if (n < 1 || m < 1) throw InputError(Kind::Dimension, n < 1 ? "/n" : "/m", "must be positive");
    PolicyFile out;
    const Matrix alpha = matrix_of(field(doc, "", "alpha"), "/alpha", m, n);
    auto list_of = [&](const std::string& key) {
        const auto& j = field(doc, "", key);
        if (!j.is_array() || static_cast<int>(j.size()) != m) {
            throw InputError(Kind::Dimension, "/" + key, "expected " + std::to_string(m) + " matrices");
        }
        std::vector<Matrix> mats;
        for (int k = 0; k < m; ++k) mats.push_back(matrix_of(j[k], child("/" + key, k), n, n));
        return mats;
    };
    out.policy.q = list_of("Q");
    for (int k = 0; k < m; ++k) out.policy.alpha.push_back(alpha.row(k).transpose());
    out.plan = list_of("P");
    out.m = matrix_of(field(doc, "", "M"), "/M", n, n);
    out.metadata = doc.value("metadata", json::object());
    return out;
}

PolicyFile load_policy(const std::string& path) {
    const std::string text = read_file(path);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(Kind::Parse, "", std::string("invalid JSON: ") + e.what());
    }
    return parse_policy(doc);
}

} // namespace safemc

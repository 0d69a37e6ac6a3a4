#include "safemc/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <thread>

#include "safemc/random.hpp"

namespace safemc {

namespace {

int sample_vector(const Vector& p, double u) {
    double cum = 0.0;
    int last_positive = 0;
    for (int i = 0; i < p.size(); ++i) {
        if (p(i) <= 0.0) continue;
        cum += p(i);
        last_positive = i;
        if (u < cum) return i;
    }
    // u beyond the rounded total: mass belongs to the last reachable index
    return last_positive;
}

template <typename Body>
void parallel_chunks(int count, int threads, Body body) {
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        body(0, 0, count);
        return;
    }
    std::vector<std::thread> pool;
    const int chunk = (count + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const int begin = t * chunk;
        const int end = std::min(count, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back(body, t, begin, end);
    }
    for (auto& th : pool) th.join();
}

} // namespace

int sample_column(const Matrix& m, int j, double u) {
    return sample_vector(m.col(j), u);
}

SingleStep step_agent_single(int j, const SingleActionPolicy& k, const ColumnStochasticMatrix& g,
                             const SingleDraws& draws) {
    const int i = sample_column(g.matrix(), j, draws.observe);
    if (draws.accept < k.matrix()(i, j)) return {Mode::On, i};
    return {Mode::Off, j};
}

GeneralStep step_agent_general(int j, const DecisionPolicy& policy, const EnvironmentModel& env,
                               const GeneralDraws& draws) {
    double upper = 0.0;
    for (int k = 0; k < policy.m(); ++k) {
        upper += policy.alpha[k](j);
        if (draws.select < upper) {
            const int i = sample_column(env.on[k].matrix(), j, draws.observe);
            if (draws.accept < policy.q[k](i, j)) return {Mode::On, k, i};
            break;
        }
    }
    return {Mode::Off, -1, sample_column(env.off.matrix(), j, draws.fallback)};
}

GeneralDraws draws_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t t) {
    const std::uint64_t base = 1 + 4 * t;
    return {rng::uniform(seed, stream, base), rng::uniform(seed, stream, base + 1),
            rng::uniform(seed, stream, base + 2), rng::uniform(seed, stream, base + 3)};
}

void DensityHistory::write_csv(std::ostream& out) const {
    const int nn = n();
    const bool with_std = stddev.size() == density.size() && !stddev.empty();
    out << 't';
    for (int i = 1; i <= nn; ++i) out << ",x" << i;
    if (with_std) {
        for (int i = 1; i <= nn; ++i) out << ",s" << i;
    }
    out << '\n';
    char buf[64];
    for (int t = 0; t < steps(); ++t) {
        out << t;
        for (int i = 0; i < nn; ++i) {
            std::snprintf(buf, sizeof buf, ",%.10g", density[t](i));
            out << buf;
        }
        if (with_std) {
            for (int i = 0; i < nn; ++i) {
                std::snprintf(buf, sizeof buf, ",%.10g", stddev[t](i));
                out << buf;
            }
        }
        out << '\n';
    }
}

std::string DensityHistory::to_csv() const {
    std::ostringstream out;
    write_csv(out);
    return out.str();
}

std::vector<int> exact_counts(const ProbVector& x0, int num_agents) {
    const int n = x0.size();
    std::vector<int> counts(n);
    std::vector<double> remainder(n);
    int assigned = 0;
    for (int i = 0; i < n; ++i) {
        const double share = x0[i] * num_agents;
        counts[i] = static_cast<int>(std::floor(share));
        remainder[i] = share - counts[i];
        assigned += counts[i];
    }
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
    for (int r = 0; assigned < num_agents; r = (r + 1) % n, ++assigned) counts[order[r]] += 1;
    return counts;
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("SAFEMC_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

DensityHistory run_ensemble(const EnsembleConfig& cfg, const DecisionPolicy& policy, const EnvironmentModel& env) {
    if (cfg.num_agents < 1 || cfg.t_max < 1) throw RangeViolation("ensemble needs N_a >= 1 and t_max >= 1");
    const int n = env.n();
    if (cfg.initial.size() != n || policy.n() != n || policy.m() != env.m()) {
        throw DimensionMismatch("policy, environment and initial distribution disagree in size");
    }

    std::vector<int> start(cfg.num_agents);
    if (cfg.exact_counts) {
        const auto counts = exact_counts(cfg.initial, cfg.num_agents);
        int a = 0;
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < counts[i]; ++c) start[a++] = i;
        }
    } else {
        for (int a = 0; a < cfg.num_agents; ++a) {
            start[a] = sample_vector(cfg.initial.values(), rng::uniform(cfg.seed, a, 0));
        }
    }

    const int rows = cfg.t_max + 1;
    const int threads = resolve_threads(cfg.threads);
    std::vector<std::vector<long>> partial(std::max(1, std::min(threads, cfg.num_agents)),
                                           std::vector<long>(static_cast<std::size_t>(rows) * n, 0));
    parallel_chunks(cfg.num_agents, threads, [&](int slot, int begin, int end) {
        auto& counts = partial[slot];
        for (int a = begin; a < end; ++a) {
            int s = start[a];
            counts[s] += 1;
            for (int t = 0; t < cfg.t_max; ++t) {
                s = step_agent_general(s, policy, env, draws_at(cfg.seed, a, t)).next;
                counts[static_cast<std::size_t>(t + 1) * n + s] += 1;
            }
        }
    });

    DensityHistory hist;
    const double scale = 1.0 / cfg.num_agents;
    for (int t = 0; t < rows; ++t) {
        Vector x = Vector::Zero(n);
        for (const auto& counts : partial) {
            for (int i = 0; i < n; ++i) x(i) += static_cast<double>(counts[static_cast<std::size_t>(t) * n + i]);
        }
        x *= scale;
        hist.stddev.push_back((x.array() * (1.0 - x.array()) * scale).sqrt().matrix());
        hist.density.push_back(std::move(x));
    }
    return hist;
}

DensityHistory propagate_analytic(const ColumnStochasticMatrix& m, const ProbVector& x0, int t_max) {
    if (x0.size() != m.size()) throw DimensionMismatch("initial distribution and chain differ in size");
    if (t_max < 0) throw RangeViolation("horizon must be nonnegative");
    DensityHistory hist;
    Vector x = x0.values();
    hist.density.push_back(x);
    for (int t = 0; t < t_max; ++t) {
        x = m.matrix() * x;
        hist.density.push_back(x);
    }
    return hist;
}

TransitionEstimate estimate_transition_matrix(const DecisionPolicy& policy, const EnvironmentModel& env,
                                              int samples_per_column, std::uint64_t seed, int threads) {
    if (samples_per_column < 1) throw RangeViolation("samples_per_column must be positive");
    const int n = env.n();
    if (policy.n() != n || policy.m() != env.m()) throw DimensionMismatch("policy and environment disagree in size");

    Matrix counts = Matrix::Zero(n, n);
    const int workers = std::max(1, std::min(resolve_threads(threads), n));
    std::vector<Matrix> partial(workers, Matrix::Zero(n, n));
    parallel_chunks(n, workers, [&](int slot, int begin, int end) {
        for (int j = begin; j < end; ++j) {
            const std::uint64_t column_stream = static_cast<std::uint64_t>(j) << 40;
            for (int s = 0; s < samples_per_column; ++s) {
                const auto step = step_agent_general(j, policy, env, draws_at(seed, column_stream | s, 0));
                partial[slot](step.next, j) += 1.0;
            }
        }
    });
    for (const auto& p : partial) counts += p;

    TransitionEstimate est;
    est.m_hat = counts / samples_per_column;
    est.stderr_hat = (est.m_hat.array() * (1.0 - est.m_hat.array()) / samples_per_column).sqrt().matrix();
    return est;
}

} // namespace safemc

#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "safemc/chain.hpp"

namespace safemc {

enum class Mode { On, Off };

struct AgentState {
    int state = 0;
    Mode mode_last = Mode::Off;
    int action = -1; // ON action index, -1 when OFF
    std::uint64_t stream = 0;
};

/// Index i whose half-open cumulative interval of column j contains u; ties go to the lower index.
int sample_column(const Matrix& m, int j, double u);

struct SingleDraws {
    double observe = 0.0;
    double accept = 0.0;
};

struct SingleStep {
    Mode mode = Mode::Off;
    int next = 0;
};

SingleStep step_agent_single(int j, const SingleActionPolicy& k, const ColumnStochasticMatrix& g,
                             const SingleDraws& draws);

/// One draw per slot: action selection, observation, acceptance, OFF fallback.
struct GeneralDraws {
    double select = 0.0;
    double observe = 0.0;
    double accept = 0.0;
    double fallback = 0.0;
};

struct GeneralStep {
    Mode mode = Mode::Off;
    int action = -1;
    int next = 0;
};

GeneralStep step_agent_general(int j, const DecisionPolicy& policy, const EnvironmentModel& env,
                               const GeneralDraws& draws);

/// Draws of agent `stream` at step t.
GeneralDraws draws_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t t);

struct EnsembleConfig {
    int num_agents = 1;
    int t_max = 1;
    std::uint64_t seed = 0;
    ProbVector initial;
    bool exact_counts = true;
    int threads = 0; // 0: SAFEMC_THREADS or hardware concurrency
};

/// Rows t = 0..t_max. stddev is empty for analytic histories.
struct DensityHistory {
    std::vector<Vector> density;
    std::vector<Vector> stddev;

    int steps() const { return static_cast<int>(density.size()); }
    int n() const { return density.empty() ? 0 : static_cast<int>(density.front().size()); }
    void write_csv(std::ostream& out) const;
    std::string to_csv() const;
};

/// Largest-remainder apportionment of num_agents over x0 (ties to the lower index).
std::vector<int> exact_counts(const ProbVector& x0, int num_agents);

int resolve_threads(int requested);

DensityHistory run_ensemble(const EnsembleConfig& cfg, const DecisionPolicy& policy, const EnvironmentModel& env);

DensityHistory propagate_analytic(const ColumnStochasticMatrix& m, const ProbVector& x0, int t_max);

struct TransitionEstimate {
    Matrix m_hat;
    Matrix stderr_hat; // binomial sqrt(p (1 - p) / samples)
};

TransitionEstimate estimate_transition_matrix(const DecisionPolicy& policy, const EnvironmentModel& env,
                                              int samples_per_column, std::uint64_t seed, int threads = 0);

} // namespace safemc

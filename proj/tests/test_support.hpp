#pragma once

// Random instance generators and reference implementations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <random>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "safemc/chain.hpp"
#include "safemc/synthesis.hpp"

namespace testing_support {

using safemc::Matrix;
using safemc::Vector;

inline Vector random_simplex(std::mt19937_64& gen, int n, double zero_prob = 0.0) {
    std::exponential_distribution<double> expo(1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector x(n);
    for (int i = 0; i < n; ++i) x(i) = unit(gen) < zero_prob ? 0.0 : expo(gen);
    if (x.sum() == 0.0) x(std::uniform_int_distribution<int>(0, n - 1)(gen)) = 1.0;
    return x / x.sum();
}

/// Columns drawn from the simplex, renormalized so every column sums to one within an ulp.
inline Matrix random_stochastic(std::mt19937_64& gen, int n, double zero_prob = 0.0) {
    Matrix m(n, n);
    for (int j = 0; j < n; ++j) m.col(j) = random_simplex(gen, n, zero_prob);
    return m;
}

/// Acceptance matrix of the single-action model: uniform entries, unit diagonal, some exact 0/1 entries.
inline Matrix random_acceptance(std::mt19937_64& gen, int n) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Matrix k(n, n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const double u = unit(gen);
            k(i, j) = i == j ? 1.0 : (u < 0.1 ? 0.0 : (u > 0.9 ? 1.0 : unit(gen)));
        }
    }
    return k;
}

/// Plan satisfying the per-state budget: per-state selection split, then P_k = Q_k diag(alpha_k).
inline std::vector<Matrix> random_plan(std::mt19937_64& gen, int n, int m) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Matrix> p(m, Matrix::Zero(n, n));
    for (int j = 0; j < n; ++j) {
        const Vector split = random_simplex(gen, m + 1, 0.2); // last slot: OFF
        for (int k = 0; k < m; ++k) {
            if (split(k) == 0.0) continue;
            Vector q(n);
            for (int i = 0; i < n; ++i) q(i) = unit(gen) < 0.15 ? 0.0 : unit(gen);
            q(std::uniform_int_distribution<int>(0, n - 1)(gen)) = 1.0; // column max of Q is one
            p[k].col(j) = split(k) * q;
        }
    }
    return p;
}

inline safemc::EnvironmentModel random_env(std::mt19937_64& gen, int n, int m, double zero_prob = 0.2) {
    std::vector<safemc::ColumnStochasticMatrix> on;
    for (int k = 0; k < m; ++k) on.push_back(safemc::ColumnStochasticMatrix::validate(random_stochastic(gen, n, zero_prob)));
    return safemc::EnvironmentModel(std::move(on),
                                    safemc::ColumnStochasticMatrix::validate(random_stochastic(gen, n, zero_prob)));
}

/// Single-action chain by direct case analysis on the observed destination i of an agent at j.
inline Matrix single_chain_reference(const Matrix& g, const Matrix& k) {
    const int n = static_cast<int>(g.rows());
    Matrix m = Matrix::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            const double observed = g(i, j);
            m(i, j) += observed * k(i, j);       // accepted: move to i
            m(j, j) += observed * (1.0 - k(i, j)); // rejected: stay at j
        }
    }
    return m;
}

/// Multi-action chain by enumerating the event tree of one step from the (alpha, Q) description:
/// pick action k, observe i, accept or fall back to OFF; or pick OFF outright.
inline Matrix multi_chain_reference(const std::vector<Matrix>& g, const Matrix& g_off, const std::vector<Vector>& alpha,
                                    const std::vector<Matrix>& q) {
    const int n = static_cast<int>(g_off.rows());
    Matrix m = Matrix::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        double off_prob = 1.0;
        for (std::size_t k = 0; k < g.size(); ++k) {
            off_prob -= alpha[k](j);
            for (int i = 0; i < n; ++i) {
                const double branch = alpha[k](j) * g[k](i, j);
                m(i, j) += branch * q[k](i, j);
                const double rejected = branch * (1.0 - q[k](i, j));
                for (int l = 0; l < n; ++l) m(l, j) += rejected * g_off(l, j);
            }
        }
        for (int l = 0; l < n; ++l) m(l, j) += off_prob * g_off(l, j);
    }
    return m;
}

/// Worst case of l^T x over {x >= 0, 1^T x = 1, x <= cap} by enumerating every vertex:
/// each coordinate sits at 0 or its cap except at most one, which takes the remaining mass.
inline double worst_case_by_vertices(const Vector& l, const Vector& cap) {
    const int n = static_cast<int>(l.size());
    double best = -std::numeric_limits<double>::infinity();
    int combos = 1;
    for (int i = 0; i < n; ++i) combos *= 2;
    for (int mask = 0; mask < combos; ++mask) {
        for (int free = -1; free < n; ++free) {
            if (free >= 0 && (mask >> free & 1)) continue;
            double mass = 0.0;
            double value = 0.0;
            for (int i = 0; i < n; ++i) {
                if (mask >> i & 1) {
                    mass += cap(i);
                    value += l(i) * cap(i);
                }
            }
            double rest = 1.0 - mass;
            if (free >= 0) {
                if (rest < -1e-12 || rest > cap(free) + 1e-12) continue;
                value += l(free) * rest;
                rest = 0.0;
            }
            if (std::abs(rest) > 1e-12) continue;
            best = std::max(best, value);
        }
    }
    return best;
}

struct Certificate {
    Matrix s;
    Vector y;
};

/// Dual of max l^T x over the capped simplex, row by row: mu is the coefficient at which the greedy
/// fill runs out of mass, w = max(l - mu, 0), S = w - l + mu 1, y = -mu. Tight: y + w^T cap = worst case.
inline Certificate closed_form_certificate(const Matrix& l, const Vector& cap) {
    const int r = static_cast<int>(l.rows());
    const int n = static_cast<int>(l.cols());
    Certificate c{Matrix::Zero(r, n), Vector::Zero(r)};
    for (int row = 0; row < r; ++row) {
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return l(row, a) > l(row, b); });
        double remaining = 1.0;
        double mu = l(row, order.back());
        for (int i : order) {
            if (cap(i) >= remaining) {
                mu = l(row, i);
                break;
            }
            remaining -= cap(i);
        }
        for (int i = 0; i < n; ++i) {
            const double w = std::max(l(row, i) - mu, 0.0);
            c.s(row, i) = w - l(row, i) + mu;
        }
        c.y(row) = -mu;
    }
    return c;
}

/// Metropolis chain for target v with proposal g: reversible w.r.t. v, so M v = v and detailed balance hold.
/// Also the acceptance matrix that realizes it from proposal g with an identity OFF action.
inline std::pair<Matrix, Matrix> metropolis(const Matrix& g, const Vector& v) {
    const int n = static_cast<int>(v.size());
    Matrix accept = Matrix::Ones(n, n);
    Matrix m = Matrix::Zero(n, n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            if (i == j || g(i, j) == 0.0) continue;
            accept(i, j) = std::min(1.0, g(j, i) * v(i) / (g(i, j) * v(j)));
            m(i, j) = g(i, j) * accept(i, j);
        }
        m(j, j) = 1.0 - (m.col(j).sum() - m(j, j));
    }
    return {m, accept};
}

/// Second largest eigenvalue modulus of a chain reversible w.r.t. v.
inline double slem(const Matrix& m, const Vector& v) {
    const Vector h = v.cwiseSqrt();
    const Matrix sym = h.cwiseInverse().asDiagonal() * m * h.asDiagonal() - h * h.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (sym + sym.transpose()), Eigen::EigenvaluesOnly);
    return eig.eigenvalues().cwiseAbs().maxCoeff();
}

/// Instance with a known feasible point: action 1 proposes from a full-support G, its Metropolis acceptance
/// realizes a chain reversible w.r.t. v, the other actions stay unused and OFF keeps the agent in place.
struct FeasibleInstance {
    safemc::SynthesisSpec spec;
    std::map<std::string, Matrix> point; // M, P_k, beta, and certificates for each safety spec
    double slem = 0.0;
};

inline FeasibleInstance feasible_instance(std::mt19937_64& gen, int n, int m, safemc::ErgodicityMode mode,
                                          bool with_safety = true) {
    using namespace safemc;
    Vector target = random_simplex(gen, n).cwiseMax(0.05);
    target /= target.sum();
    std::vector<ColumnStochasticMatrix> on;
    Matrix proposal = random_stochastic(gen, n);
    on.push_back(ColumnStochasticMatrix::validate(proposal));
    for (int k = 1; k < m; ++k) on.push_back(ColumnStochasticMatrix::validate(random_stochastic(gen, n, 0.3)));
    auto [chain, accept] = metropolis(proposal, target);

    FeasibleInstance out{SynthesisSpec{EnvironmentModel(std::move(on), ColumnStochasticMatrix::identity(n)),
                                       AdjacencyMatrix::full(n), ProbVector::validate(target, 1e-12), {}, mode,
                                       std::nullopt},
                         {},
                         slem(chain, target)};
    out.point["M"] = chain;
    out.point["P_1"] = accept;
    for (int k = 1; k < m; ++k) out.point["P_" + std::to_string(k + 1)] = Matrix::Zero(n, n);
    Matrix beta = Matrix::Zero(m, n);
    beta.row(0).setOnes();
    out.point["beta"] = beta;
    if (with_safety) {
        // Loose enough for the Metropolis chain: bound each row by its own worst case plus a margin.
        const Vector cap = (target * 2.0).cwiseMin(1.0).cwiseMax(1.0 / n);
        const Certificate cert = closed_form_certificate(chain, cap);
        const Matrix combined = chain + cert.s + cert.y * Eigen::RowVectorXd::Ones(n);
        const Vector bound = (combined * cap - cert.y).array() + 0.01;
        SafetySpec sp = SafetySpec::general(SafetySpec::Form::PlusM, Matrix::Zero(n, n), cap, bound);
        out.spec.safety.push_back(sp);
        out.point["S_1"] = cert.s;
        out.point["y_1"] = cert.y;
    }
    return out;
}

} // namespace testing_support

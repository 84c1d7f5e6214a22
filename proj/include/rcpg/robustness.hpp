#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcpg/core.hpp"

namespace rcpg {

/// Thrown when a cached artifact has an incompatible version or structure.
struct CacheMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Per (s, a) successor lists, indexed s * n_actions + a. Lists are strictly
/// increasing state indices.
using SupportTable = std::vector<std::vector<int>>;

/**
Observation counts collected while estimating a model. Successor counts are
aligned with the declared support lists. The effective count of a pair adds
the single pseudo observation the estimator smooths with, so it is at least 1
even for pairs that were never visited.
*/
struct VisitationCounts {
    int n_states = 0;
    int n_actions = 0;
    std::vector<long> pair_obs;
    std::vector<std::vector<long>> succ_obs;

    long raw(int s, int a) const { return pair_obs[static_cast<std::size_t>(s) * n_actions + a]; }
    double effective(int s, int a) const { return static_cast<double>(raw(s, a)) + 1.0; }
};

struct NominalEstimate {
    TabularModel model;
    VisitationCounts counts;
};

/**
Maximum-likelihood transition estimate with one pseudo observation spread
uniformly over the declared support of each pair:

    P(s'|s,a) = (n(s,a,s') + 1/|support|) / (n(s,a) + 1)

Every observed successor must appear in the declared support; a transition
outside it is an error in the declaration and is reported as such.
*/
inline NominalEstimate estimate_nominal(const std::vector<Trajectory>& data, int n_states,
                                        int n_actions, const SupportTable& support) {
    if (n_states <= 0 || n_actions <= 0)
        throw std::invalid_argument("estimate_nominal: dimensions must be positive");
    std::size_t pairs = static_cast<std::size_t>(n_states) * n_actions;
    if (support.size() != pairs)
        throw std::invalid_argument("estimate_nominal: support table has wrong size");

    NominalEstimate out{TabularModel(n_states, n_actions), {}};
    out.counts.n_states = n_states;
    out.counts.n_actions = n_actions;
    out.counts.pair_obs.assign(pairs, 0);
    out.counts.succ_obs.resize(pairs);
    for (std::size_t i = 0; i < pairs; ++i) {
        if (support[i].empty())
            throw std::invalid_argument("estimate_nominal: empty support for pair " +
                                        std::to_string(i));
        out.counts.succ_obs[i].assign(support[i].size(), 0);
    }

    for (const Trajectory& traj : data) {
        for (const TrajectoryStep& st : traj.steps) {
            if (st.state < 0 || st.state >= n_states || st.action < 0 || st.action >= n_actions)
                throw std::invalid_argument("estimate_nominal: step outside the state-action space");
            std::size_t i = static_cast<std::size_t>(st.state) * n_actions + st.action;
            const auto& sup = support[i];
            auto it = std::lower_bound(sup.begin(), sup.end(), st.next_state);
            if (it == sup.end() || *it != st.next_state)
                throw std::invalid_argument(
                    "estimate_nominal: observed successor " + std::to_string(st.next_state) +
                    " of pair (" + std::to_string(st.state) + "," + std::to_string(st.action) +
                    ") is outside the declared support");
            out.counts.pair_obs[i] += 1;
            out.counts.succ_obs[i][it - sup.begin()] += 1;
        }
    }

    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            std::size_t i = static_cast<std::size_t>(s) * n_actions + a;
            const auto& sup = support[i];
            double denom = static_cast<double>(out.counts.pair_obs[i]) + 1.0;
            double prior = 1.0 / static_cast<double>(sup.size());
            std::vector<double> row(sup.size());
            for (std::size_t k = 0; k < sup.size(); ++k)
                row[k] = (static_cast<double>(out.counts.succ_obs[i][k]) + prior) / denom;
            out.model.set_row(s, a, sup, std::move(row));
        }
    }
    return out;
}

/**
Hoeffding-style L1 ball radii:

    alpha(s,a) = sqrt((2 / n(s,a)) * ln(2^outcomes * S * A / delta))

with n(s,a) the effective visitation count, clipped to the largest possible
L1 distance of 2. Computed in log space so large outcome counts cannot
overflow the inner product.
*/
inline std::vector<double> hoeffding_budget(const VisitationCounts& counts, int n_outcomes,
                                            double delta) {
    if (n_outcomes <= 0) throw std::invalid_argument("hoeffding_budget: outcomes must be positive");
    if (!(delta > 0.0 && delta < 1.0))
        throw std::invalid_argument("hoeffding_budget: delta must lie in (0, 1)");
    double log_term = n_outcomes * std::log(2.0) + std::log(double(counts.n_states)) +
                      std::log(double(counts.n_actions)) - std::log(delta);
    std::vector<double> alpha(counts.pair_obs.size());
    for (int s = 0; s < counts.n_states; ++s)
        for (int a = 0; a < counts.n_actions; ++a)
            alpha[static_cast<std::size_t>(s) * counts.n_actions + a] =
                std::min(2.0, std::sqrt(2.0 * log_term / counts.effective(s, a)));
    return alpha;
}

/**
Worst-case distribution within an L1 ball around a nominal row:

    argmin_P  P . v   s.t.  ||P - nominal||_1 <= alpha,  P in the simplex

via the sorted-value construction: move eps = min(alpha/2, 1 - nominal[o])
onto the entry o with the smallest v, then strip the same mass from entries
in order of decreasing v. Ties pick the lower index on both sides. Runs in
O(n log n).
*/
inline std::vector<double> worst_case_l1(std::span<const double> nominal,
                                         std::span<const double> v, double alpha) {
    std::size_t n = nominal.size();
    if (n == 0 || v.size() != n)
        throw std::invalid_argument("worst_case_l1: empty row or size mismatch");
    if (!(alpha >= 0.0 && alpha <= 2.0))
        throw std::invalid_argument("worst_case_l1: alpha must lie in [0, 2]");
    double mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!(nominal[i] >= 0.0))
            throw std::invalid_argument("worst_case_l1: nominal has a negative entry");
        if (!std::isfinite(v[i])) throw std::invalid_argument("worst_case_l1: non-finite value");
        mass += nominal[i];
    }
    if (std::abs(mass - 1.0) > 1e-9)
        throw std::invalid_argument("worst_case_l1: nominal mass is not 1 within 1e-9");

    std::size_t o = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (v[i] < v[o]) o = i;

    std::vector<double> out(nominal.begin(), nominal.end());
    double eps = std::min(alpha / 2.0, 1.0 - out[o]);
    if (eps <= 0.0) return out;
    out[o] += eps;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (v[a] != v[b]) return v[a] > v[b];
        return a < b;
    });
    double remaining = eps;
    for (std::size_t idx : order) {
        if (idx == o) continue;
        double take = std::min(out[idx], remaining);
        out[idx] -= take;
        remaining -= take;
        if (remaining <= 0.0) break;
    }
    return out;
}

/// Nominal model with its per-pair L1 radii.
struct UncertaintySet {
    TabularModel nominal;
    std::vector<double> alpha;
    double delta = 0.0;

    double alpha_at(int s, int a) const {
        return alpha[static_cast<std::size_t>(s) * nominal.n_actions() + a];
    }
};

enum class WorstCaseMode { value, constraint, lagrangian };

/**
Selects the worst-case transition model row by row. The per-successor
objective is the state-value estimate (value mode), the negated constraint
estimate (constraint mode) or value - lambda * constraint (lagrangian mode);
each row then solves the L1 worst case at its own radius. Rows with a zero
radius are copied from the nominal verbatim.
*/
inline TabularModel select_worst_model(const UncertaintySet& uset,
                                       std::span<const double> value_at,
                                       std::span<const double> cost_at, double lambda,
                                       WorstCaseMode mode) {
    const TabularModel& nom = uset.nominal;
    int S = nom.n_states(), A = nom.n_actions();
    if (value_at.size() != static_cast<std::size_t>(S) ||
        cost_at.size() != static_cast<std::size_t>(S))
        throw std::invalid_argument("select_worst_model: per-state estimates have wrong size");
    TabularModel out(S, A);
    std::vector<double> obj;
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            if (uset.alpha_at(s, a) == 0.0) {
                // a zero-radius ball admits only the nominal row itself
                out.copy_row(s, a, nom);
                continue;
            }
            const auto& sup = nom.support(s, a);
            obj.resize(sup.size());
            for (std::size_t k = 0; k < sup.size(); ++k) {
                int succ = sup[k];
                switch (mode) {
                    case WorstCaseMode::value: obj[k] = value_at[succ]; break;
                    case WorstCaseMode::constraint: obj[k] = -cost_at[succ]; break;
                    case WorstCaseMode::lagrangian:
                        obj[k] = value_at[succ] - lambda * cost_at[succ];
                        break;
                }
            }
            out.set_row(s, a, sup, worst_case_l1(nom.probs(s, a), obj, uset.alpha_at(s, a)));
        }
    }
    return out;
}

// ---- uncertainty-set serialization ----
//
// Two CSV files sharing a base path: <base>.nominal.csv holds the support
// and probabilities of every row, <base>.alpha.csv the radii and delta.
// Both start with a versioned tag line; loading a different version fails
// with CacheMismatch. Doubles are printed with %.17g and round-trip exactly.

constexpr const char* kUsetNominalTag = "# rcpg-uset-nominal v1";
constexpr const char* kUsetAlphaTag = "# rcpg-uset-alpha v1";

namespace detail {

inline std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

inline void save_uncertainty_set(const UncertaintySet& uset, const std::string& base) {
    const TabularModel& nom = uset.nominal;
    {
        std::ofstream os(base + ".nominal.csv", std::ios::trunc);
        if (!os) throw std::runtime_error("save_uncertainty_set: cannot write " + base);
        os << kUsetNominalTag << "\n";
        os << "states," << nom.n_states() << "\nactions," << nom.n_actions() << "\n";
        os << "s,a,successor,probability\n";
        for (int s = 0; s < nom.n_states(); ++s)
            for (int a = 0; a < nom.n_actions(); ++a) {
                const auto& sup = nom.support(s, a);
                const auto& p = nom.probs(s, a);
                for (std::size_t k = 0; k < sup.size(); ++k)
                    os << s << ',' << a << ',' << sup[k] << ',' << detail::fmt_double(p[k])
                       << "\n";
            }
    }
    {
        std::ofstream os(base + ".alpha.csv", std::ios::trunc);
        if (!os) throw std::runtime_error("save_uncertainty_set: cannot write " + base);
        os << kUsetAlphaTag << "\n";
        os << "delta," << detail::fmt_double(uset.delta) << "\n";
        os << "s,a,alpha\n";
        for (int s = 0; s < nom.n_states(); ++s)
            for (int a = 0; a < nom.n_actions(); ++a)
                os << s << ',' << a << ',' << detail::fmt_double(uset.alpha_at(s, a)) << "\n";
    }
}

inline UncertaintySet load_uncertainty_set(const std::string& base) {
    std::ifstream nf(base + ".nominal.csv");
    if (!nf) throw std::runtime_error("load_uncertainty_set: cannot open " + base + ".nominal.csv");
    std::string line;
    std::getline(nf, line);
    if (line != kUsetNominalTag)
        throw CacheMismatch("load_uncertainty_set: unexpected nominal tag '" + line + "'");
    int S = 0, A = 0;
    std::getline(nf, line);
    if (std::sscanf(line.c_str(), "states,%d", &S) != 1)
        throw CacheMismatch("load_uncertainty_set: bad states line");
    std::getline(nf, line);
    if (std::sscanf(line.c_str(), "actions,%d", &A) != 1)
        throw CacheMismatch("load_uncertainty_set: bad actions line");
    std::getline(nf, line);  // column header
    if (S <= 0 || A <= 0) throw CacheMismatch("load_uncertainty_set: bad dimensions");

    std::vector<std::vector<int>> sup(static_cast<std::size_t>(S) * A);
    std::vector<std::vector<double>> probs(static_cast<std::size_t>(S) * A);
    while (std::getline(nf, line)) {
        if (line.empty()) continue;
        auto f = detail::split_csv(line);
        if (f.size() != 4) throw CacheMismatch("load_uncertainty_set: bad nominal row " + line);
        int s = std::stoi(f[0]), a = std::stoi(f[1]);
        if (s < 0 || s >= S || a < 0 || a >= A)
            throw CacheMismatch("load_uncertainty_set: pair out of range in " + line);
        sup[static_cast<std::size_t>(s) * A + a].push_back(std::stoi(f[2]));
        probs[static_cast<std::size_t>(s) * A + a].push_back(std::stod(f[3]));
    }
    UncertaintySet out;
    out.nominal = TabularModel(S, A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
            std::size_t i = static_cast<std::size_t>(s) * A + a;
            if (sup[i].empty())
                throw CacheMismatch("load_uncertainty_set: missing row for pair (" +
                                    std::to_string(s) + "," + std::to_string(a) + ")");
            out.nominal.set_row(s, a, sup[i], probs[i]);
        }

    std::ifstream af(base + ".alpha.csv");
    if (!af) throw std::runtime_error("load_uncertainty_set: cannot open " + base + ".alpha.csv");
    std::getline(af, line);
    if (line != kUsetAlphaTag)
        throw CacheMismatch("load_uncertainty_set: unexpected alpha tag '" + line + "'");
    std::getline(af, line);
    if (line.rfind("delta,", 0) != 0) throw CacheMismatch("load_uncertainty_set: bad delta line");
    out.delta = std::stod(line.substr(6));
    std::getline(af, line);  // column header
    out.alpha.assign(static_cast<std::size_t>(S) * A,
                     std::numeric_limits<double>::quiet_NaN());
    while (std::getline(af, line)) {
        if (line.empty()) continue;
        auto f = detail::split_csv(line);
        if (f.size() != 3) throw CacheMismatch("load_uncertainty_set: bad alpha row " + line);
        int s = std::stoi(f[0]), a = std::stoi(f[1]);
        if (s < 0 || s >= S || a < 0 || a >= A)
            throw CacheMismatch("load_uncertainty_set: pair out of range in " + line);
        out.alpha[static_cast<std::size_t>(s) * A + a] = std::stod(f[2]);
    }
    for (double x : out.alpha)
        if (std::isnan(x)) throw CacheMismatch("load_uncertainty_set: incomplete alpha table");
    return out;
}

}  // namespace rcpg

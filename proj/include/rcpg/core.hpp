#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcpg/rng.hpp"

namespace rcpg {

/**
A finite constrained MDP with a horizon, a discount and a constraint budget.

`reward` and `constraint_cost` are per (state, action). Domains whose cost is
attached to the cell a transition lands in additionally set `entry_cost`; the
realized cost of one step is then constraint_cost(s, a) + entry_cost(s').
`budget` is expressed in discounted units, matching the training objective.
*/
struct Rcmdp {
    int n_states = 0;
    int n_actions = 0;
    std::function<double(int, int)> reward;           // r(s, a)
    std::function<double(int, int)> constraint_cost;  // c(s, a)
    std::function<double(int)> entry_cost;            // optional, cost of the state entered
    double budget = 0.0;                              // d
    double discount = 0.0;                            // gamma, in (0, 1)
    int horizon = 0;                                  // T
    std::function<bool(int)> is_terminal;             // optional, no terminals if unset
    std::function<int(Rng&)> sample_start;

    void validate() const {
        if (n_states <= 0 || n_actions <= 0)
            throw std::invalid_argument("Rcmdp: state and action counts must be positive");
        if (!(discount > 0.0 && discount < 1.0))
            throw std::invalid_argument("Rcmdp: discount must lie in (0, 1)");
        if (budget < 0.0) throw std::invalid_argument("Rcmdp: budget must be nonnegative");
        if (horizon <= 0) throw std::invalid_argument("Rcmdp: horizon must be positive");
        if (!reward || !constraint_cost)
            throw std::invalid_argument("Rcmdp: reward and constraint_cost are required");
        if (!sample_start) throw std::invalid_argument("Rcmdp: start-state sampler is required");
    }

    bool terminal(int s) const { return is_terminal && is_terminal(s); }

    /// Realized constraint cost of a single step ending in `next`.
    double step_cost(int s, int a, int next) const {
        double c = constraint_cost(s, a);
        if (entry_cost) c += entry_cost(next);
        return c;
    }
};

/**
Tabular transition model over explicit per (s, a) successor supports.

Support lists are strictly increasing state indices; probability rows are
validated to be nonnegative and to sum to one within 1e-9, then renormalized
exactly so downstream arithmetic can rely on unit mass.
*/
class TabularModel {
public:
    TabularModel() = default;
    TabularModel(int n_states, int n_actions)
        : n_states_(n_states), n_actions_(n_actions),
          support_(static_cast<std::size_t>(n_states) * n_actions),
          probs_(static_cast<std::size_t>(n_states) * n_actions) {
        if (n_states <= 0 || n_actions <= 0)
            throw std::invalid_argument("TabularModel: dimensions must be positive");
    }

    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }

    void set_row(int s, int a, std::vector<int> support, std::vector<double> probs) {
        check_pair(s, a);
        if (support.empty() || support.size() != probs.size())
            throw std::invalid_argument("TabularModel: support and probability sizes differ");
        double sum = 0.0;
        for (std::size_t i = 0; i < support.size(); ++i) {
            if (support[i] < 0 || support[i] >= n_states_)
                throw std::invalid_argument("TabularModel: successor index out of range");
            if (i > 0 && support[i] <= support[i - 1])
                throw std::invalid_argument("TabularModel: support must be strictly increasing");
            if (!(probs[i] >= 0.0))
                throw std::invalid_argument("TabularModel: negative or non-finite probability");
            sum += probs[i];
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw std::invalid_argument("TabularModel: row mass " + std::to_string(sum) +
                                        " is not 1 within 1e-9");
        for (double& p : probs) p /= sum;
        support_[index(s, a)] = std::move(support);
        probs_[index(s, a)] = std::move(probs);
    }

    /// Copies one row verbatim from another model, preserving its exact bits
    /// (set_row renormalizes, which can shift an already-normalized row by an
    /// ulp and break exact model comparisons).
    void copy_row(int s, int a, const TabularModel& from) {
        check_pair(s, a);
        support_[index(s, a)] = from.support(s, a);
        probs_[index(s, a)] = from.probs(s, a);
    }

    const std::vector<int>& support(int s, int a) const {
        check_pair(s, a);
        return support_[index(s, a)];
    }

    const std::vector<double>& probs(int s, int a) const {
        check_pair(s, a);
        return probs_[index(s, a)];
    }

    bool has_row(int s, int a) const { return !support_[index(s, a)].empty(); }

    int sample_successor(int s, int a, Rng& g) const {
        const auto& sup = support(s, a);
        if (sup.empty()) throw std::runtime_error("TabularModel: row not set");
        return sup[sample_categorical(probs_[index(s, a)], g)];
    }

private:
    std::size_t index(int s, int a) const {
        return static_cast<std::size_t>(s) * n_actions_ + a;
    }
    void check_pair(int s, int a) const {
        if (s < 0 || s >= n_states_ || a < 0 || a >= n_actions_)
            throw std::out_of_range("TabularModel: state-action pair out of range");
    }

    int n_states_ = 0, n_actions_ = 0;
    std::vector<std::vector<int>> support_;
    std::vector<std::vector<double>> probs_;
};

/**
One simulated step. The score vectors are the gradients of the sampled
choices with respect to the producing network's parameters, cached at rollout
time so the per-episode updates can replay them in reverse order.
`adversary_score` stays empty unless an adversary generated the successor.
*/
struct TrajectoryStep {
    int state = 0;
    int action = 0;
    int next_state = 0;
    double reward = 0.0;
    double cost = 0.0;
    std::vector<double> policy_score;         // d log pi(a|s) / d theta
    std::vector<double> policy_entropy_grad;  // d H(pi(.|s)) / d theta
    std::vector<double> adversary_score;      // d log pi_adv(s'|s,a) / d theta_adv
};

struct Trajectory {
    std::vector<TrajectoryStep> steps;
    int t_stop() const { return static_cast<int>(steps.size()); }
};

/// Discounted returns-to-go at one step: plain value, constraint cost, and
/// the Lagrangian combination value - lambda * cost.
struct LagrangianReturns {
    double value = 0.0;
    double cost = 0.0;
    double combined = 0.0;
};

/**
Single backward sweep computing, for every step t, the discounted reward
return V_t, the discounted constraint return C_t and V_t - lambda * C_t.
*/
inline std::vector<LagrangianReturns> returns_backward(const Trajectory& traj, double discount,
                                                       double lambda) {
    if (traj.steps.empty())
        throw std::invalid_argument("returns_backward: trajectory is empty");
    if (!(discount > 0.0 && discount <= 1.0))
        throw std::invalid_argument("returns_backward: discount must lie in (0, 1]");
    std::vector<LagrangianReturns> out(traj.steps.size());
    double v = 0.0, c = 0.0;
    for (int t = traj.t_stop() - 1; t >= 0; --t) {
        v = traj.steps[t].reward + discount * v;
        c = traj.steps[t].cost + discount * c;
        out[t] = {v, c, v - lambda * c};
    }
    return out;
}

/**
Rescales a discounted-units budget d to undiscounted test units:
d * T / sum_{t=0}^{T-1} gamma^t. A discount of exactly 1 leaves d unchanged.
*/
inline double undiscounted_budget(double budget, double discount, int horizon) {
    if (horizon <= 0) throw std::invalid_argument("undiscounted_budget: horizon must be positive");
    if (!(discount > 0.0 && discount <= 1.0))
        throw std::invalid_argument("undiscounted_budget: discount must lie in (0, 1]");
    if (discount == 1.0) return budget;
    double geo = (1.0 - std::pow(discount, horizon)) / (1.0 - discount);
    return budget * static_cast<double>(horizon) / geo;
}

}  // namespace rcpg

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "rcpg/coding.hpp"
#include "rcpg/core.hpp"
#include "rcpg/diffnet.hpp"
#include "rcpg/robustness.hpp"

namespace rcpg {

enum class Algo {
    pg,
    cpg,
    rcpg_value,
    rcpg_constraint,
    rcpg_lagrangian,
    adv_rcpg,
};

constexpr std::array<Algo, 6> kAllAlgos = {Algo::pg,         Algo::cpg,
                                           Algo::rcpg_value, Algo::rcpg_constraint,
                                           Algo::rcpg_lagrangian, Algo::adv_rcpg};

inline const char* algo_name(Algo a) {
    switch (a) {
        case Algo::pg: return "pg";
        case Algo::cpg: return "cpg";
        case Algo::rcpg_value: return "rcpg-value";
        case Algo::rcpg_constraint: return "rcpg-constraint";
        case Algo::rcpg_lagrangian: return "rcpg-lagrangian";
        case Algo::adv_rcpg: return "adv-rcpg";
    }
    return "?";
}

inline std::optional<Algo> parse_algo(std::string_view name) {
    for (Algo a : kAllAlgos)
        if (name == algo_name(a)) return a;
    return std::nullopt;
}

/// The three worst-case-model algorithms and the adversarial one need the
/// uncertainty set; PG and CPG simulate from the nominal model alone.
inline bool needs_uncertainty_set(Algo a) {
    return a == Algo::rcpg_value || a == Algo::rcpg_constraint || a == Algo::rcpg_lagrangian ||
           a == Algo::adv_rcpg;
}

inline std::optional<WorstCaseMode> worst_case_mode(Algo a) {
    switch (a) {
        case Algo::rcpg_value: return WorstCaseMode::value;
        case Algo::rcpg_constraint: return WorstCaseMode::constraint;
        case Algo::rcpg_lagrangian: return WorstCaseMode::lagrangian;
        default: return std::nullopt;
    }
}

/// Both Lagrange multipliers, kept inside [0, 500] by every update. A frozen
/// adversary multiplier ignores its updates, which turns the deviation
/// penalty into a fixed weight.
struct LagrangeState {
    static constexpr double kMultiplierMax = 500.0;

    double lambda = 0.0;
    double lambda_adv = 0.0;
    bool lambda_adv_frozen = false;

    void nudge_lambda(double delta) {
        lambda = std::clamp(lambda + delta, 0.0, kMultiplierMax);
    }
    void nudge_lambda_adv(double delta) {
        if (lambda_adv_frozen) return;
        lambda_adv = std::clamp(lambda_adv + delta, 0.0, kMultiplierMax);
    }
};

struct TrainerConfig {
    Algo algo = Algo::cpg;
    int episodes = 1000;
    int warmup_episodes = 100;  // nominal-model episodes before the adversary engages

    double policy_lr = 0.001;      // base rate for policy and adversary parameters
    double multiplier_lr = 0.0001; // base rate for both multipliers
    double critic_lr = 0.001;
    int schedule_period = 500;     // rate(n) = base / (1 + n / period)
    double entropy_weight = 5.0;
    double lambda_init = 1.0;
    double lambda_adv_init = 1.0;

    int deviation_batch = 32;   // random pairs per deviation gradient
    int hidden_units = 100;
    bool freeze_lambda_adv = false;

    int pretrain_max_iters = 50000;
    double pretrain_tol = 0.01;

    std::uint64_t seed = 1;

    void validate() const {
        if (episodes <= 0) throw std::invalid_argument("TrainerConfig: episodes must be positive");
        if (warmup_episodes < 0 || warmup_episodes > episodes)
            throw std::invalid_argument("TrainerConfig: warm-up must lie in [0, episodes]");
        if (!(policy_lr > 0.0 && multiplier_lr > 0.0 && critic_lr > 0.0))
            throw std::invalid_argument("TrainerConfig: learning rates must be positive");
        if (schedule_period <= 0)
            throw std::invalid_argument("TrainerConfig: schedule period must be positive");
        if (entropy_weight < 0.0)
            throw std::invalid_argument("TrainerConfig: entropy weight must be non-negative");
        if (lambda_init < 0.0 || lambda_adv_init < 0.0)
            throw std::invalid_argument("TrainerConfig: multiplier inits must be non-negative");
        if (deviation_batch <= 0)
            throw std::invalid_argument("TrainerConfig: deviation batch must be positive");
        if (hidden_units <= 0)
            throw std::invalid_argument("TrainerConfig: hidden width must be positive");
        if (pretrain_max_iters <= 0 || pretrain_tol <= 0.0)
            throw std::invalid_argument("TrainerConfig: pretrain settings must be positive");
    }
};

/// Learning-rate schedule: the base rate divided by 1 + n // period for
/// episode n, counted from zero.
inline double scheduled_rate(double base, int episode, int period) {
    return base / (1.0 + episode / period);
}

namespace detail {

// RNG stream salts. Every consumer of randomness inside one training run
// draws from its own stream so that, e.g., critic initialisation cannot
// shift the rollout sequence shared by algorithms under one seed.
constexpr std::uint64_t kSaltRollout = 0x726f6c6c6f7574ULL;
constexpr std::uint64_t kSaltPolicyInit = 0x706f6c696379ULL;
constexpr std::uint64_t kSaltValueCritic = 0x76637269746963ULL;
constexpr std::uint64_t kSaltCostCritic = 0x63637269746963ULL;
constexpr std::uint64_t kSaltAdversary = 0x616476696e6974ULL;
constexpr std::uint64_t kSaltPretrain = 0x70726574726eULL;
constexpr std::uint64_t kSaltDeviation = 0x646576696174ULL;

inline std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t salt) {
    return mix64(mix64(seed) ^ salt);
}

}  // namespace detail

/// Scratch buffers shared by the adversary helpers.
struct AdversaryWork {
    EncodeBuf buf;
    NetForward fwd;
    std::vector<double> cells;
    std::vector<double> signs;
    std::vector<double> dz;
    std::vector<int> group;
};

/**
Successor distribution the adversary assigns to (s, a): a softmax over the
output slots with each slot's mass pooled onto its cell. cells is resized to
the support of (s, a) and holds the per-cell probabilities in support order.
*/
inline void adversary_row(const DiffNet& adv, const DomainCoding& coding, int s, int a,
                          AdversaryWork& w) {
    NetInput x = coding.adversary_input(s, a, w.buf);
    adv.forward_into(x, w.fwd);
    auto slots = coding.slot_positions(s, a);
    w.cells.assign(coding.successor_support(s, a).size(), 0.0);
    for (std::size_t j = 0; j < slots.size(); ++j) w.cells[slots[j]] += w.fwd.p[j];
}

inline double l1_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("l1_distance: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc;
}

namespace detail {

// dJ/dz for an objective sum_c sign[c] * cell_prob[c] of pooled softmax
// mass: dz_j = p_j * (sign[cell(j)] - sum_c sign[c] * cell_prob[c]).
inline void pooled_sign_dz(const NetForward& fwd, std::span<const int> slots,
                           std::span<const double> cells, std::span<const double> signs,
                           std::vector<double>& dz) {
    double sbar = 0.0;
    for (std::size_t c = 0; c < cells.size(); ++c) sbar += signs[c] * cells[c];
    dz.assign(fwd.p.size(), 0.0);
    for (std::size_t j = 0; j < slots.size(); ++j)
        dz[j] = fwd.p[j] * (signs[slots[j]] - sbar);
}

}  // namespace detail

/**
Mean hinged deviation from the nominal model over a fresh random batch of
state-action pairs: mean over the batch of max(0, |row - nominal|_1 - alpha).
Accumulates the parameter gradient into grad (which is zeroed first) and
returns the objective value. Drawing a new batch per call keeps the penalty
anchored to pairs the adversary does not choose to visit.
*/
inline double nominal_deviation_grad(const DiffNet& adv, const DomainCoding& coding,
                                     const UncertaintySet& uset, int n_samp, Rng& g,
                                     AdversaryWork& w, std::vector<double>& grad) {
    if (n_samp < 1) throw std::invalid_argument("nominal_deviation_grad: batch must be >= 1");
    grad.assign(adv.param_count(), 0.0);
    double total = 0.0;
    const int S = coding.n_states(), A = coding.n_actions();
    for (int i = 0; i < n_samp; ++i) {
        int s = uniform_below(g, S);
        int a = uniform_below(g, A);
        adversary_row(adv, coding, s, a, w);
        const auto& nom = uset.nominal.probs(s, a);
        double dev = l1_distance(w.cells, nom) - uset.alpha_at(s, a);
        if (dev <= 0.0) continue;
        total += dev;
        w.signs.assign(w.cells.size(), 0.0);
        for (std::size_t c = 0; c < w.cells.size(); ++c) {
            double diff = w.cells[c] - nom[c];
            w.signs[c] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        }
        detail::pooled_sign_dz(w.fwd, coding.slot_positions(s, a), w.cells, w.signs, w.dz);
        NetInput x = coding.adversary_input(s, a, w.buf);
        adv.backprop_accum(x, w.fwd, w.dz, 1.0 / n_samp, grad);
    }
    return total / n_samp;
}

struct PretrainResult {
    int iterations = 0;
    double mae = 0.0;
    bool reached_tol = true;
    std::vector<double> history;  // full-model MAE at every check interval
};

namespace detail {

constexpr double kPretrainLr = 0.5;
constexpr int kPretrainBatch = 64;
constexpr int kPretrainCheckEvery = 100;

// Mean over all (s, a) of the mean absolute component difference between the
// adversary's row and the nominal row.
inline double adversary_nominal_mae(const DiffNet& adv, const DomainCoding& coding,
                                    const TabularModel& nominal, AdversaryWork& w) {
    double acc = 0.0;
    const int S = coding.n_states(), A = coding.n_actions();
    for (int s = 0; s < S; ++s) {
        for (int a = 0; a < A; ++a) {
            adversary_row(adv, coding, s, a, w);
            acc += l1_distance(w.cells, nominal.probs(s, a)) / w.cells.size();
        }
    }
    return acc / (S * A);
}

}  // namespace detail

/**
Fits the adversary to the nominal model before training starts: minibatch
subgradient descent on the mean absolute row difference until the full-model
MAE drops below tol or the iteration cap is hit. On a cap hit a warning with
the final MAE goes to stderr.
*/
inline PretrainResult adversary_pretrain(DiffNet& adv, const DomainCoding& coding,
                                         const TabularModel& nominal, const TrainerConfig& cfg,
                                         Rng& g) {
    AdversaryWork w;
    PretrainResult res;
    res.mae = detail::adversary_nominal_mae(adv, coding, nominal, w);
    res.history.push_back(res.mae);
    if (res.mae < cfg.pretrain_tol) return res;

    const int S = coding.n_states(), A = coding.n_actions();
    std::vector<double> grad(adv.param_count());
    for (int it = 1; it <= cfg.pretrain_max_iters; ++it) {
        grad.assign(grad.size(), 0.0);
        for (int i = 0; i < detail::kPretrainBatch; ++i) {
            int s = uniform_below(g, S);
            int a = uniform_below(g, A);
            adversary_row(adv, coding, s, a, w);
            const auto& nom = nominal.probs(s, a);
            w.signs.assign(w.cells.size(), 0.0);
            for (std::size_t c = 0; c < w.cells.size(); ++c) {
                double diff = w.cells[c] - nom[c];
                w.signs[c] = (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0)) / w.cells.size();
            }
            detail::pooled_sign_dz(w.fwd, coding.slot_positions(s, a), w.cells, w.signs, w.dz);
            NetInput x = coding.adversary_input(s, a, w.buf);
            adv.backprop_accum(x, w.fwd, w.dz, 1.0 / detail::kPretrainBatch, grad);
        }
        adv.axpy(-detail::kPretrainLr, grad);
        res.iterations = it;
        if (it % detail::kPretrainCheckEvery == 0) {
            res.mae = detail::adversary_nominal_mae(adv, coding, nominal, w);
            res.history.push_back(res.mae);
            if (res.mae < cfg.pretrain_tol) return res;
        }
    }
    res.mae = detail::adversary_nominal_mae(adv, coding, nominal, w);
    res.history.push_back(res.mae);
    res.reached_tol = res.mae < cfg.pretrain_tol;
    if (!res.reached_tol)
        std::fprintf(stderr,
                     "warning: adversary pretraining stopped at the iteration cap "
                     "(%d iterations, MAE %.5f, tolerance %.5f)\n",
                     cfg.pretrain_max_iters, res.mae, cfg.pretrain_tol);
    return res;
}

/**
One Lagrangian policy update from a finished episode. Walks the steps in
reverse, ascending the policy along return-weighted score gradients plus the
entropy bonus, then moves the multiplier once on the episode's constraint
return against the budget. PG passes update_multiplier = false and keeps
lambda wherever it started.
*/
inline void policy_step(const Trajectory& traj, std::span<const LagrangianReturns> returns,
                        DiffNet& policy, LagrangeState& lag, double budget, double eta1,
                        double eta2, double entropy_weight, bool update_multiplier) {
    if (returns.size() != traj.steps.size())
        throw std::invalid_argument("policy_step: returns do not match the trajectory");
    for (int t = traj.t_stop() - 1; t >= 0; --t) {
        const TrajectoryStep& st = traj.steps[t];
        policy.axpy(eta1 * returns[t].combined, st.policy_score);
        if (entropy_weight != 0.0) policy.axpy(eta1 * entropy_weight, st.policy_entropy_grad);
    }
    if (update_multiplier) lag.nudge_lambda(eta2 * (returns[0].cost - budget));
}

struct AdversaryStepStats {
    double mean_l1_deviation = 0.0;
};

/**
One adversarial update from a finished episode sampled through the adversary.
Per step, in reverse: descend the adversary parameters along the next step's
Lagrangian return times the cached score gradient plus the multiplier-scaled
deviation penalty (fresh random batch per step), then move the adversary
multiplier on the visited pair's deviation against its radius. The final
step's return factor is zero.
*/
inline AdversaryStepStats adversary_step(const Trajectory& traj,
                                         std::span<const LagrangianReturns> returns,
                                         DiffNet& adv, LagrangeState& lag,
                                         const DomainCoding& coding, const UncertaintySet& uset,
                                         double eta1, double eta2, int n_samp, Rng& batch_rng,
                                         AdversaryWork& w) {
    if (returns.size() != traj.steps.size())
        throw std::invalid_argument("adversary_step: returns do not match the trajectory");
    const int T = traj.t_stop();
    double dev_sum = 0.0;
    std::vector<double> pen_grad;
    for (int t = T - 1; t >= 0; --t) {
        const TrajectoryStep& st = traj.steps[t];
        double v_next = t + 1 < T ? returns[t + 1].combined : 0.0;
        nominal_deviation_grad(adv, coding, uset, n_samp, batch_rng, w, pen_grad);
        if (v_next != 0.0) adv.axpy(-eta1 * v_next, st.adversary_score);
        if (lag.lambda_adv != 0.0) adv.axpy(-eta1 * lag.lambda_adv, pen_grad);
        adversary_row(adv, coding, st.state, st.action, w);
        double dp = l1_distance(w.cells, uset.nominal.probs(st.state, st.action));
        dev_sum += dp;
        lag.nudge_lambda_adv(eta2 * (dp - uset.alpha_at(st.state, st.action)));
    }
    return {T > 0 ? dev_sum / T : 0.0};
}

/// Mean over all (s, a) of the full L1 distance between the adversary's rows
/// and the nominal rows.
inline double adversary_mean_l1(const DiffNet& adv, const DomainCoding& coding,
                                const TabularModel& nominal) {
    AdversaryWork w;
    double acc = 0.0;
    for (int s = 0; s < coding.n_states(); ++s) {
        for (int a = 0; a < coding.n_actions(); ++a) {
            adversary_row(adv, coding, s, a, w);
            acc += l1_distance(w.cells, nominal.probs(s, a));
        }
    }
    return acc / (coding.n_states() * coding.n_actions());
}

/// Samples n random pairs and reports each one's deviation slack
/// |row - nominal|_1 - alpha(s, a). Positive entries violate the ball.
inline std::vector<double> deviation_probe(const DiffNet& adv, const DomainCoding& coding,
                                           const UncertaintySet& uset, int n, Rng& g) {
    AdversaryWork w;
    std::vector<double> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        int s = uniform_below(g, coding.n_states());
        int a = uniform_below(g, coding.n_actions());
        adversary_row(adv, coding, s, a, w);
        out.push_back(l1_distance(w.cells, uset.nominal.probs(s, a)) - uset.alpha_at(s, a));
    }
    return out;
}

/// One row of the per-episode training metrics stream.
struct EpisodeMetrics {
    int episode = 0;
    double value = 0.0;            // discounted reward return of the episode
    double constraint_cost = 0.0;  // discounted constraint return
    double overshoot = 0.0;        // constraint return minus the training budget
    double lambda = 0.0;
    double lambda_adv = 0.0;
    double mean_l1_deviation = 0.0;  // simulated model's mean L1 gap to nominal
};

struct TrainResult {
    DiffNet policy;
    std::optional<DiffNet> adversary;
    std::vector<EpisodeMetrics> metrics;
    LagrangeState lag;
    PretrainResult pretrain;
};

namespace detail {

inline void require_matching_support(const DomainCoding& coding, const TabularModel& nominal) {
    if (nominal.n_states() != coding.n_states() || nominal.n_actions() != coding.n_actions())
        throw std::invalid_argument("run_training: nominal model dimensions do not match domain");
    for (int s = 0; s < coding.n_states(); ++s)
        for (int a = 0; a < coding.n_actions(); ++a)
            if (nominal.support(s, a) != coding.successor_support(s, a))
                throw std::invalid_argument(
                    "run_training: nominal model support does not match the domain coding");
}

// Mean over all rows of the L1 distance between two models on one support.
inline double mean_model_l1(const TabularModel& a, const TabularModel& b) {
    double acc = 0.0;
    int rows = 0;
    for (int s = 0; s < a.n_states(); ++s) {
        for (int ac = 0; ac < a.n_actions(); ++ac) {
            acc += l1_distance(a.probs(s, ac), b.probs(s, ac));
            ++rows;
        }
    }
    return rows > 0 ? acc / rows : 0.0;
}

}  // namespace detail

/**
Trains one policy with the configured algorithm.

Every episode starts from a uniformly drawn non-terminal state and rolls out
at most `horizon` steps, sampling actions from the policy and successors from
the nominal model (PG, CPG, and the warm-up phase of the adversarial mode),
the current worst-case model (the three worst-case modes), or the adversary.
After the rollout the policy and multiplier take their Lagrangian step; the
worst-case modes refit their critics on the episode and re-select the
worst-case model; the adversarial mode updates the adversary and its
multiplier. The uncertainty set is required exactly for the robust modes.
*/
inline TrainResult run_training(const TrainerConfig& cfg, const Rcmdp& mdp,
                                const DomainCoding& coding, const TabularModel& nominal,
                                const UncertaintySet* uset) {
    cfg.validate();
    mdp.validate();
    detail::require_matching_support(coding, nominal);
    if (needs_uncertainty_set(cfg.algo) && uset == nullptr)
        throw std::invalid_argument("run_training: this algorithm needs an uncertainty set");

    const bool adversarial = cfg.algo == Algo::adv_rcpg;
    const auto mode = worst_case_mode(cfg.algo);

    Rng rollout = make_stream(detail::derived_seed(cfg.seed, detail::kSaltRollout), 0);
    DiffNet policy(coding.policy_in(), coding.n_actions(), Head::softmax,
                   detail::derived_seed(cfg.seed, detail::kSaltPolicyInit), cfg.hidden_units);

    TrainResult res{std::move(policy), std::nullopt, {}, {}, {}};
    res.lag.lambda = cfg.lambda_init;
    res.lag.lambda_adv = cfg.lambda_adv_init;
    res.lag.lambda_adv_frozen = cfg.freeze_lambda_adv;
    res.metrics.reserve(cfg.episodes);

    // worst-case-mode state
    std::optional<DiffNet> value_critic, cost_critic;
    std::optional<AdamState> value_adam, cost_adam;
    std::optional<TabularModel> worst;
    if (mode) {
        value_critic.emplace(coding.critic_in(), 1, Head::linear,
                             detail::derived_seed(cfg.seed, detail::kSaltValueCritic),
                             cfg.hidden_units);
        cost_critic.emplace(coding.critic_in(), 1, Head::linear,
                            detail::derived_seed(cfg.seed, detail::kSaltCostCritic),
                            cfg.hidden_units);
        value_adam.emplace(*value_critic, cfg.critic_lr);
        cost_adam.emplace(*cost_critic, cfg.critic_lr);
        worst = nominal;  // first episode simulates the nominal model
    }

    // adversarial-mode state
    AdversaryWork work;
    Rng dev_rng = make_stream(detail::derived_seed(cfg.seed, detail::kSaltDeviation), 0);
    if (adversarial) {
        res.adversary.emplace(coding.adversary_in(), coding.adversary_out(), Head::softmax,
                              detail::derived_seed(cfg.seed, detail::kSaltAdversary),
                              cfg.hidden_units);
        Rng pre = make_stream(detail::derived_seed(cfg.seed, detail::kSaltPretrain), 0);
        res.pretrain = adversary_pretrain(*res.adversary, coding, nominal, cfg, pre);
    }

    std::vector<int> starts;
    for (int s = 0; s < mdp.n_states; ++s)
        if (!mdp.terminal(s)) starts.push_back(s);
    if (starts.empty()) throw std::invalid_argument("run_training: every state is terminal");

    EncodeBuf policy_buf;
    NetForward policy_fwd;
    Trajectory traj;
    std::vector<std::vector<int>> critic_batch;
    std::vector<double> value_targets, cost_targets, value_at, cost_at;

    for (int episode = 0; episode < cfg.episodes; ++episode) {
        const double eta1 = scheduled_rate(cfg.policy_lr, episode, cfg.schedule_period);
        const double eta2 = scheduled_rate(cfg.multiplier_lr, episode, cfg.schedule_period);
        const bool adversary_active = adversarial && episode >= cfg.warmup_episodes;

        traj.steps.clear();
        int s = starts[uniform_below(rollout, static_cast<int>(starts.size()))];
        for (int t = 0; t < mdp.horizon; ++t) {
            if (mdp.terminal(s)) break;
            TrajectoryStep st;
            st.state = s;
            NetInput px = coding.policy_input(s, policy_buf);
            res.policy.forward_into(px, policy_fwd);
            st.action = static_cast<int>(sample_categorical(policy_fwd.p, rollout));
            auto score = res.policy.log_prob_grad(px, st.action);
            st.policy_score = std::move(score.grad);
            st.policy_entropy_grad = res.policy.entropy_grad(px).grad;
            st.reward = mdp.reward(s, st.action);

            int next;
            if (adversary_active) {
                adversary_row(*res.adversary, coding, s, st.action, work);
                int pos = sample_categorical(work.cells, rollout);
                next = coding.successor_support(s, st.action)[pos];
                auto slots = coding.slot_positions(s, st.action);
                work.group.clear();
                for (std::size_t j = 0; j < slots.size(); ++j)
                    if (slots[j] == pos) work.group.push_back(static_cast<int>(j));
                NetInput ax = coding.adversary_input(s, st.action, work.buf);
                st.adversary_score = res.adversary->log_prob_grad_group(ax, work.group).grad;
            } else if (mode) {
                next = worst->sample_successor(s, st.action, rollout);
            } else {
                next = nominal.sample_successor(s, st.action, rollout);
            }
            st.next_state = next;
            st.cost = mdp.step_cost(s, st.action, next);
            traj.steps.push_back(std::move(st));
            s = next;
        }

        const double lambda_used = cfg.algo == Algo::pg ? 0.0 : res.lag.lambda;
        auto returns = returns_backward(traj, mdp.discount, lambda_used);
        policy_step(traj, returns, res.policy, res.lag, mdp.budget, eta1, eta2,
                    cfg.entropy_weight, cfg.algo != Algo::pg);

        double mean_dev = 0.0;
        if (mode) {
            critic_batch.clear();
            value_targets.clear();
            cost_targets.clear();
            for (std::size_t t = 0; t < traj.steps.size(); ++t) {
                critic_batch.push_back({traj.steps[t].state});
                value_targets.push_back(returns[t].value);
                cost_targets.push_back(returns[t].cost);
            }
            critic_fit_episode(*value_critic, critic_batch, value_targets, *value_adam);
            critic_fit_episode(*cost_critic, critic_batch, cost_targets, *cost_adam);

            value_at.assign(mdp.n_states, 0.0);
            cost_at.assign(mdp.n_states, 0.0);
            EncodeBuf cbuf;
            for (int cs = 0; cs < mdp.n_states; ++cs) {
                if (mdp.terminal(cs)) continue;  // terminal states are worth exactly 0
                NetInput cx = coding.critic_input(cs, cbuf);
                value_at[cs] = value_critic->value(cx);
                cost_at[cs] = cost_critic->value(cx);
            }
            worst = select_worst_model(*uset, value_at, cost_at, res.lag.lambda, *mode);
            mean_dev = detail::mean_model_l1(*worst, nominal);
        } else if (adversarial) {
            if (adversary_active) {
                mean_dev = adversary_step(traj, returns, *res.adversary, res.lag, coding, *uset,
                                          eta1, eta2, cfg.deviation_batch, dev_rng, work)
                               .mean_l1_deviation;
            } else {
                double acc = 0.0;
                for (const auto& st : traj.steps) {
                    adversary_row(*res.adversary, coding, st.state, st.action, work);
                    acc += l1_distance(work.cells, nominal.probs(st.state, st.action));
                }
                mean_dev = traj.steps.empty() ? 0.0 : acc / traj.steps.size();
            }
        }

        res.metrics.push_back({episode, returns[0].value, returns[0].cost,
                               returns[0].cost - mdp.budget, res.lag.lambda, res.lag.lambda_adv,
                               mean_dev});
    }
    return res;
}

}  // namespace rcpg

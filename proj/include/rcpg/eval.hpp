#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rcpg/coding.hpp"
#include "rcpg/core.hpp"
#include "rcpg/diffnet.hpp"
#include "rcpg/envs.hpp"
#include "rcpg/rng.hpp"
#include "rcpg/trainers.hpp"

namespace rcpg {

// ---------------------------------------------------------------------------
// Greedy policy execution on a live environment
// ---------------------------------------------------------------------------

/// Type-erased environment handle for test rollouts. `terminal` may be left
/// empty for tasks without absorbing states.
struct SimEnv {
    std::function<StepResult(int s, int a, Rng&)> step;
    std::function<bool(int)> terminal;
    int start = 0;
    int horizon = 0;
};

inline SimEnv make_sim(InventoryEnv env) {
    SimEnv sim;
    sim.start = env.start();
    sim.horizon = env.spec().horizon;
    sim.step = [env = std::move(env)](int s, int a, Rng& g) { return env.step(s, a, g); };
    return sim;
}

inline SimEnv make_sim(GridEnv env) {
    SimEnv sim;
    sim.start = env.start();
    sim.horizon = env.spec().horizon;
    sim.terminal = [goal = env.goal()](int s) { return s == goal; };
    sim.step = [env = std::move(env)](int s, int a, Rng& g) { return env.step(s, a, g); };
    return sim;
}

/// Highest-probability action; ties go to the lowest action index.
inline int greedy_action(const DiffNet& policy, const DomainCoding& coding, int s,
                         EncodeBuf& buf) {
    auto p = policy.forward(coding.policy_input(s, buf));
    int best = 0;
    for (int i = 1; i < static_cast<int>(p.size()); ++i)
        if (p[i] > p[best]) best = i;
    return best;
}

struct RolloutOutcome {
    double value = 0.0;  // undiscounted reward sum
    double cost = 0.0;   // undiscounted constraint-cost sum
    int steps = 0;
};

inline RolloutOutcome greedy_rollout(const DiffNet& policy, const DomainCoding& coding,
                                     const SimEnv& env, Rng& g) {
    if (env.horizon <= 0) throw std::invalid_argument("greedy_rollout: horizon must be positive");
    RolloutOutcome out;
    EncodeBuf buf;
    int s = env.start;
    for (int t = 0; t < env.horizon; ++t) {
        if (env.terminal && env.terminal(s)) break;
        int a = greedy_action(policy, coding, s, buf);
        StepResult r = env.step(s, a, g);
        out.value += r.reward;
        out.cost += r.cost;
        out.steps += 1;
        s = r.next;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Test metrics
// ---------------------------------------------------------------------------

inline double penalised_return(double value, double cost, double budget,
                               double lambda_bar = 500.0) {
    return value - lambda_bar * std::max(0.0, cost - budget);
}

/// Signed budget violation; negative when the policy stays under budget.
inline double overshoot(double cost, double budget) { return cost - budget; }

inline DomainCoding domain_coding(Domain d) {
    if (d == Domain::inventory) {
        int n = InventorySpec::standard().n_items;
        return DomainCoding::tabular(n, n);
    }
    return DomainCoding::grid();
}

inline SupportTable domain_support(Domain d) {
    if (d == Domain::inventory)
        return inventory_support_table(InventorySpec::standard().n_items);
    return grid_support_table();
}

/// Undiscounted-equivalent budget used by all test metrics of a domain.
inline double domain_d_eval(Domain d) {
    if (d == Domain::inventory) {
        auto spec = InventorySpec::standard();
        return undiscounted_budget(spec.budget, spec.discount, spec.horizon);
    }
    auto spec = GridSpec::make(d == Domain::nav1 ? GridTask::nav1 : GridTask::nav2);
    return undiscounted_budget(spec.budget, spec.discount, spec.horizon);
}

/// The environment the estimation phase samples from: nominal demand for
/// Inventory, stand-still failures at the task's data-collection success
/// probability for the grids.
inline SimEnv data_collection_env(Domain d) {
    if (d == Domain::inventory) {
        auto spec = InventorySpec::standard();
        return make_sim(InventoryEnv(spec, spec.nominal_demand()));
    }
    if (d == Domain::nav1)
        return make_sim(GridEnv(GridSpec::make(GridTask::nav1), GridDynamics::reliable(0.8)));
    return make_sim(GridEnv(GridSpec::make(GridTask::nav2), GridDynamics::reliable(1.0)));
}

/// Training view of a domain (expected rewards, nominal budget and horizon).
inline Rcmdp domain_rcmdp(Domain d) {
    if (d == Domain::inventory) {
        auto spec = InventorySpec::standard();
        return make_inventory_rcmdp(spec, spec.nominal_demand());
    }
    return make_grid_rcmdp(GridSpec::make(d == Domain::nav1 ? GridTask::nav1 : GridTask::nav2));
}

// ---------------------------------------------------------------------------
// Perturbation-test definitions
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_param(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", x);
    return buf;
}

/// First k entries of a uniformly shuffled 0..n-1, i.e. a uniform draw of k
/// distinct indices.
inline std::vector<int> draw_without_replacement(int n, int k, Rng& g) {
    if (k < 0 || k > n)
        throw std::invalid_argument("draw_without_replacement: k out of range");
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < k; ++i) std::swap(pool[i], pool[i + uniform_below(g, n - i)]);
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace detail

/**
One perturbation test: a named parameter axis plus a factory building the
perturbed environment for a given setting. The factory draws any random
perturbation content (flagged pairs, offsets) from the supplied generator,
so callers construct a fresh environment per rollout.
*/
struct TestGrid {
    Domain domain = Domain::inventory;
    std::string test_id;
    std::string param_name;
    std::vector<std::string> param_labels;
    std::function<SimEnv(int setting, Rng&)> make_env;

    int n_settings() const { return static_cast<int>(param_labels.size()); }
};

/// Test IM: the 3x3 grid of demand distributions around the data-collection
/// demand.
inline TestGrid inventory_demand_test() {
    auto spec = InventorySpec::standard();
    double n = spec.n_items;
    std::vector<double> mus = {n / 6.0, n / 4.0, n / 3.0};
    std::vector<double> sigmas = {n / 8.0, n / 6.0, n / 4.0};

    TestGrid t;
    t.domain = Domain::inventory;
    t.test_id = "IM";
    t.param_name = "mu_sigma";
    std::vector<std::pair<double, double>> settings;
    for (double mu : mus) {
        for (double sigma : sigmas) {
            settings.emplace_back(mu, sigma);
            t.param_labels.push_back(detail::fmt_param(mu) + "/" + detail::fmt_param(sigma));
        }
    }
    t.make_env = [spec, settings](int i, Rng&) {
        auto [mu, sigma] = settings.at(i);
        return make_sim(InventoryEnv(spec, DemandModel{mu, sigma, spec.n_items}));
    };
    return t;
}

/// Tests 1A/2A: sweep the success probability with stand-still failures.
inline TestGrid nav_success_test(GridTask task) {
    TestGrid t;
    t.domain = task == GridTask::nav1 ? Domain::nav1 : Domain::nav2;
    t.test_id = task == GridTask::nav1 ? "1A" : "2A";
    t.param_name = "p_success";
    std::vector<double> probs = {0.6, 0.7, 0.8, 0.9, 1.0};
    for (double p : probs) t.param_labels.push_back(detail::fmt_param(p));
    t.make_env = [task, probs](int i, Rng&) {
        return make_sim(GridEnv(GridSpec::make(task), GridDynamics::reliable(probs.at(i))));
    };
    return t;
}

/// N_eps random state-action pairs flagged to teleport to a fixed random
/// neighbour on failure (the stay cell included). The draw spans all pairs,
/// so flagged pairs of the terminal cell are inert.
inline GridDynamics pair_offset_perturbation(int n_eps, Rng& g) {
    GridDynamics dyn;
    dyn.p_success = 0.8;
    dyn.failure = GridDynamics::Failure::pair_offset;
    dyn.pair_target.assign(kGridStates * kGridActions, -1);
    for (int pair : detail::draw_without_replacement(kGridStates * kGridActions, n_eps, g)) {
        int s = pair / kGridActions;
        auto cells = grid_support(s);
        dyn.pair_target[pair] = cells[uniform_below(g, static_cast<int>(cells.size()))];
    }
    return dyn;
}

/// N_eps random states flagged to fail along the worst-case arrows instead
/// of standing still.
inline GridDynamics arrow_perturbation(int n_eps, Rng& g) {
    GridDynamics dyn;
    dyn.p_success = 0.8;
    dyn.failure = GridDynamics::Failure::state_arrow;
    dyn.arrow_states.assign(kGridStates, 0);
    for (int s : detail::draw_without_replacement(kGridStates, n_eps, g)) dyn.arrow_states[s] = 1;
    return dyn;
}

/// Tests 1B/2B: keep the success probability at 0.8 and perturb the failure
/// branch, drawing a fresh perturbation per environment build.
inline TestGrid nav_perturbation_test(GridTask task) {
    TestGrid t;
    t.domain = task == GridTask::nav1 ? Domain::nav1 : Domain::nav2;
    t.test_id = task == GridTask::nav1 ? "1B" : "2B";
    t.param_name = "n_eps";
    std::vector<int> counts = task == GridTask::nav1 ? std::vector<int>{5, 10, 20, 50, 100}
                                                     : std::vector<int>{5, 10, 15, 20, 25};
    for (int c : counts) t.param_labels.push_back(std::to_string(c));

    t.make_env = [task, counts](int i, Rng& g) {
        GridDynamics dyn = task == GridTask::nav1 ? pair_offset_perturbation(counts.at(i), g)
                                                  : arrow_perturbation(counts.at(i), g);
        return make_sim(GridEnv(GridSpec::make(task), std::move(dyn)));
    };
    return t;
}

inline std::vector<TestGrid> domain_tests(Domain d) {
    if (d == Domain::inventory) return {inventory_demand_test()};
    GridTask task = d == Domain::nav1 ? GridTask::nav1 : GridTask::nav2;
    return {nav_success_test(task), nav_perturbation_test(task)};
}

// ---------------------------------------------------------------------------
// Suite execution and aggregation
// ---------------------------------------------------------------------------

/// Trained policies of one algorithm, aligned with their training seeds.
struct PolicySnapshots {
    Algo algo = Algo::pg;
    std::vector<std::uint64_t> seeds;
    std::vector<DiffNet> policies;
};

struct EvalOptions {
    int repeats = 50;
    std::uint64_t stream_seed = 0x74657374ULL;
    int jobs = 1;  // worker threads for the rollouts; results do not depend on it
};

struct ResultRow {
    std::string algorithm;
    std::string test_id;
    std::string param_name;
    std::string param_value;
    int setting = 0;
    std::uint64_t seed = 0;
    int repeat = 0;
    double value = 0.0;
    double constraint_cost = 0.0;
    double overshoot = 0.0;
};

struct SummaryRow {
    std::string algorithm;
    std::string test_id;
    std::string param_name;
    std::string param_value;
    int setting = 0;
    int n_seeds = 0;
    double mean_value = 0.0, stderr_value = 0.0;
    double mean_cost = 0.0, stderr_cost = 0.0;
    double mean_overshoot = 0.0, stderr_overshoot = 0.0;
};

struct PenalisedRow {
    std::string algorithm;
    int n_seeds = 0;
    double mean = 0.0;
    double stderr_ = 0.0;
};

struct SuiteResult {
    Domain domain = Domain::inventory;
    double d_eval = 0.0;
    int repeats = 0;
    std::vector<ResultRow> rows;
    std::vector<SummaryRow> summary;
    std::vector<PenalisedRow> penalised;
};

/// Standard error of the mean; zero when fewer than two observations.
inline double stderr_of(std::span<const double> xs) {
    std::size_t n = xs.size();
    if (n < 2) return 0.0;
    double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<double>(n));
}

inline double mean_of(std::span<const double> xs) {
    return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
}

namespace detail {

inline std::uint64_t eval_task_salt(std::uint64_t domain_tag, std::uint64_t test_idx,
                                    std::uint64_t setting, std::uint64_t seed_slot,
                                    std::uint64_t repeat) {
    std::uint64_t h = 0x65706973ULL;
    h = mix64(h ^ domain_tag);
    h = mix64(h ^ test_idx);
    h = mix64(h ^ setting);
    h = mix64(h ^ seed_slot);
    h = mix64(h ^ repeat);
    return h;
}

}  // namespace detail

/**
Aggregates raw result rows into per-setting summaries (means of the per-seed
means, standard errors over seeds) and one penalised return per algorithm,
pooled uniformly over every row of that algorithm and seed. Grouping keys are
read off the rows themselves, so a suite parsed back from results.csv
aggregates exactly like a freshly computed one.
*/
inline SuiteResult aggregate_rows(Domain domain, std::vector<ResultRow> rows, int repeats) {
    SuiteResult out;
    out.domain = domain;
    out.d_eval = domain_d_eval(domain);
    out.repeats = repeats;
    out.rows = std::move(rows);

    std::sort(out.rows.begin(), out.rows.end(), [](const ResultRow& a, const ResultRow& b) {
        if (a.test_id != b.test_id) return a.test_id < b.test_id;
        if (a.setting != b.setting) return a.setting < b.setting;
        if (a.algorithm != b.algorithm) return a.algorithm < b.algorithm;
        if (a.seed != b.seed) return a.seed < b.seed;
        return a.repeat < b.repeat;
    });

    // grouping keys: one cell per (test, setting), seeds per algorithm
    struct Cell {
        std::string test_id, param_name, param_value;
        int setting = 0;
    };
    std::vector<Cell> cells;
    std::map<std::string, std::vector<std::uint64_t>> seeds_by_algo;
    for (const auto& row : out.rows) {
        if (cells.empty() || cells.back().test_id != row.test_id ||
            cells.back().setting != row.setting)
            cells.push_back({row.test_id, row.param_name, row.param_value, row.setting});
        seeds_by_algo[row.algorithm].push_back(row.seed);
    }
    for (auto& [algo, seeds] : seeds_by_algo) {
        std::sort(seeds.begin(), seeds.end());
        seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
    }

    for (const Cell& cell : cells) {
        for (const auto& [algo, seeds] : seeds_by_algo) {
            std::vector<double> v_means, c_means, o_means;
            for (std::uint64_t seed : seeds) {
                std::vector<double> v, c, o;
                for (const auto& row : out.rows) {
                    if (row.test_id != cell.test_id || row.setting != cell.setting) continue;
                    if (row.algorithm != algo || row.seed != seed) continue;
                    v.push_back(row.value);
                    c.push_back(row.constraint_cost);
                    o.push_back(row.overshoot);
                }
                v_means.push_back(mean_of(v));
                c_means.push_back(mean_of(c));
                o_means.push_back(mean_of(o));
            }
            SummaryRow s;
            s.algorithm = algo;
            s.test_id = cell.test_id;
            s.param_name = cell.param_name;
            s.param_value = cell.param_value;
            s.setting = cell.setting;
            s.n_seeds = static_cast<int>(seeds.size());
            s.mean_value = mean_of(v_means);
            s.stderr_value = stderr_of(v_means);
            s.mean_cost = mean_of(c_means);
            s.stderr_cost = stderr_of(c_means);
            s.mean_overshoot = mean_of(o_means);
            s.stderr_overshoot = stderr_of(o_means);
            out.summary.push_back(std::move(s));
        }
    }

    // one score per seed, value and cost pooled over all of its rows
    for (const auto& [algo, seeds] : seeds_by_algo) {
        std::vector<double> scores;
        for (std::uint64_t seed : seeds) {
            std::vector<double> v, c;
            for (const auto& row : out.rows) {
                if (row.algorithm != algo || row.seed != seed) continue;
                v.push_back(row.value);
                c.push_back(row.constraint_cost);
            }
            scores.push_back(penalised_return(mean_of(v), mean_of(c), out.d_eval));
        }
        PenalisedRow p;
        p.algorithm = algo;
        p.n_seeds = static_cast<int>(seeds.size());
        p.mean = mean_of(scores);
        p.stderr_ = stderr_of(scores);
        out.penalised.push_back(std::move(p));
    }
    return out;
}

/**
Runs every test of the suite: for each setting, training seed, and repeat,
one greedy rollout on a freshly built perturbed environment. Random draws
come from a stream derived per (test, setting, seed slot, repeat), so results
do not depend on execution order or the number of worker threads, and all
algorithms face the same sequence of perturbed environments.
*/
inline SuiteResult run_test_suite(Domain domain, std::span<const TestGrid> tests,
                                  std::span<const PolicySnapshots> sets,
                                  const DomainCoding& coding, const EvalOptions& opt) {
    if (opt.repeats <= 0) throw std::invalid_argument("run_test_suite: repeats must be positive");
    for (const auto& set : sets) {
        if (set.policies.empty())
            throw std::invalid_argument("run_test_suite: missing policy snapshots for " +
                                        std::string(algo_name(set.algo)));
        if (set.policies.size() != set.seeds.size())
            throw std::invalid_argument("run_test_suite: snapshot/seed list size mismatch");
    }

    struct Task {
        std::size_t test = 0, set = 0, slot = 0;
        int setting = 0, repeat = 0;
    };
    std::vector<Task> tasks;
    for (std::size_t ti = 0; ti < tests.size(); ++ti) {
        const TestGrid& test = tests[ti];
        if (test.domain != domain)
            throw std::invalid_argument("run_test_suite: test " + test.test_id +
                                        " belongs to a different domain");
        for (int si = 0; si < test.n_settings(); ++si)
            for (std::size_t gi = 0; gi < sets.size(); ++gi)
                for (std::size_t ki = 0; ki < sets[gi].policies.size(); ++ki)
                    for (int r = 0; r < opt.repeats; ++r) tasks.push_back({ti, gi, ki, si, r});
    }

    double d_eval = domain_d_eval(domain);
    std::vector<ResultRow> rows(tasks.size());
    auto run_task = [&](std::size_t idx) {
        const Task& tk = tasks[idx];
        const TestGrid& test = tests[tk.test];
        const PolicySnapshots& set = sets[tk.set];
        Rng g = make_stream(opt.stream_seed,
                            detail::eval_task_salt(static_cast<std::uint64_t>(domain), tk.test,
                                                   static_cast<std::uint64_t>(tk.setting), tk.slot,
                                                   static_cast<std::uint64_t>(tk.repeat)));
        SimEnv env = test.make_env(tk.setting, g);
        RolloutOutcome roll = greedy_rollout(set.policies[tk.slot], coding, env, g);

        ResultRow& row = rows[idx];
        row.algorithm = algo_name(set.algo);
        row.test_id = test.test_id;
        row.param_name = test.param_name;
        row.param_value = test.param_labels[tk.setting];
        row.setting = tk.setting;
        row.seed = set.seeds[tk.slot];
        row.repeat = tk.repeat;
        row.value = roll.value;
        row.constraint_cost = roll.cost;
        row.overshoot = overshoot(roll.cost, d_eval);
    };

    int jobs = std::min<int>(std::max(1, opt.jobs), static_cast<int>(std::max<std::size_t>(1, tasks.size())));
    if (jobs == 1) {
        for (std::size_t i = 0; i < tasks.size(); ++i) run_task(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::exception_ptr first_error;
        std::mutex error_mutex;
        std::vector<std::thread> pool;
        for (int j = 0; j < jobs; ++j)
            pool.emplace_back([&] {
                try {
                    for (std::size_t i = next.fetch_add(1); i < tasks.size();
                         i = next.fetch_add(1))
                        run_task(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    return aggregate_rows(domain, std::move(rows), opt.repeats);
}

/// Per-seed penalised returns of one algorithm, pooled as in run_test_suite.
/// Used by comparisons that need the seed-level scores rather than the mean.
inline std::vector<double> per_seed_penalised(const SuiteResult& suite,
                                              const std::string& algorithm) {
    std::vector<std::uint64_t> seeds;
    for (const auto& row : suite.rows)
        if (row.algorithm == algorithm) seeds.push_back(row.seed);
    std::sort(seeds.begin(), seeds.end());
    seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());

    std::vector<double> scores;
    for (std::uint64_t seed : seeds) {
        std::vector<double> v, c;
        for (const auto& row : suite.rows) {
            if (row.algorithm != algorithm || row.seed != seed) continue;
            v.push_back(row.value);
            c.push_back(row.constraint_cost);
        }
        scores.push_back(penalised_return(mean_of(v), mean_of(c), suite.d_eval));
    }
    return scores;
}

}  // namespace rcpg

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "rcpg/core.hpp"
#include "rcpg/robustness.hpp"

namespace rcpg {

/// Result of simulating one environment step.
struct StepResult {
    int next = 0;
    double reward = 0.0;
    double cost = 0.0;
};

// ---------------------------------------------------------------------------
// Inventory management
// ---------------------------------------------------------------------------

/// Integer demand: a Gaussian draw rounded to the nearest integer and clipped
/// to {0, ..., n-1}.
struct DemandModel {
    double mu = 0.0;
    double sigma = 1.0;
    int n = 1;

    int sample(Rng& g) const {
        double d = normal_sample(g, mu, sigma);
        long k = std::lround(d);
        if (k < 0) k = 0;
        if (k > n - 1) k = n - 1;
        return static_cast<int>(k);
    }

    /// Exact law of `sample` through the normal CDF.
    std::vector<double> pmf() const {
        auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - mu) / (sigma * std::sqrt(2.0))); };
        std::vector<double> p(n, 0.0);
        if (n == 1) {
            p[0] = 1.0;
            return p;
        }
        p[0] = cdf(0.5);
        for (int k = 1; k < n - 1; ++k) p[k] = cdf(k + 0.5) - cdf(k - 0.5);
        p[n - 1] = 1.0 - cdf(n - 1.5);
        return p;
    }
};

/**
Stock-control task. States are stock levels 0..n_items-1, actions order that
many new items. Orders beyond the free capacity are truncated, unmet demand
is lost, and the constraint charges the amount ordered above a per-state
purchasing limit. The limit always uses the nominal demand parameters, even
when the simulated demand is perturbed.
*/
struct InventorySpec {
    int n_items = 20;
    double purchase_cost = 2.49;
    double sale_price = 3.99;
    double holding_cost = 0.03;
    double limit_mu = 5.0;         // n_items / 4
    double limit_sigma = 20.0 / 6.0;
    int horizon = 100;
    double discount = 0.99;
    double budget = 6.0;

    static InventorySpec standard() { return InventorySpec{}; }

    double limit(int s) const { return s <= 2 ? limit_mu + limit_sigma : limit_mu; }
    DemandModel nominal_demand() const {
        return DemandModel{n_items / 4.0, n_items / 6.0, n_items};
    }
};

class InventoryEnv {
public:
    InventoryEnv(InventorySpec spec, DemandModel demand) : spec_(spec), demand_(demand) {
        if (demand_.n != spec_.n_items)
            throw std::invalid_argument("InventoryEnv: demand support must match item count");
    }

    const InventorySpec& spec() const { return spec_; }
    int start() const { return 0; }

    StepResult step(int s, int a, Rng& g) const {
        check(s, a);
        int a_eff = std::min(a, spec_.n_items - 1 - s);
        int demand = demand_.sample(g);
        int sold = std::min(s + a_eff, demand);
        int next = s + a_eff - sold;
        StepResult r;
        r.next = next;
        r.reward = spec_.sale_price * sold - spec_.purchase_cost * a_eff -
                   spec_.holding_cost * next;
        r.cost = constraint_cost(s, a);
        return r;
    }

    /// c(s, a) charges the raw order above the purchasing limit, whether or
    /// not capacity truncates it.
    double constraint_cost(int s, int a) const {
        check(s, a);
        return std::max(0.0, static_cast<double>(a) - spec_.limit(s));
    }

    /// Expected one-step reward under the exact demand law.
    double expected_reward(int s, int a) const {
        check(s, a);
        int a_eff = std::min(a, spec_.n_items - 1 - s);
        auto p = demand_.pmf();
        double acc = -spec_.purchase_cost * a_eff;
        for (int d = 0; d < spec_.n_items; ++d) {
            int sold = std::min(s + a_eff, d);
            int next = s + a_eff - sold;
            acc += p[d] * (spec_.sale_price * sold - spec_.holding_cost * next);
        }
        return acc;
    }

private:
    void check(int s, int a) const {
        if (s < 0 || s >= spec_.n_items || a < 0 || a >= spec_.n_items)
            throw std::out_of_range("InventoryEnv: state or action out of range");
    }

    InventorySpec spec_;
    DemandModel demand_;
};

/// RCMDP view of the inventory task. Training simulates transitions from a
/// learned model, so the reward field carries the expected one-step reward
/// under the given demand law.
inline Rcmdp make_inventory_rcmdp(const InventorySpec& spec, const DemandModel& demand) {
    auto env = std::make_shared<InventoryEnv>(spec, demand);
    Rcmdp m;
    m.n_states = spec.n_items;
    m.n_actions = spec.n_items;
    m.reward = [env](int s, int a) { return env->expected_reward(s, a); };
    m.constraint_cost = [env](int s, int a) { return env->constraint_cost(s, a); };
    m.budget = spec.budget;
    m.discount = spec.discount;
    m.horizon = spec.horizon;
    m.sample_start = [](Rng&) { return 0; };
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// Safe navigation grids
// ---------------------------------------------------------------------------

enum class GridTask { nav1, nav2 };

/// The three benchmark tasks.
enum class Domain { inventory, nav1, nav2 };

inline const char* domain_name(Domain d) {
    switch (d) {
        case Domain::inventory: return "inventory";
        case Domain::nav1: return "nav1";
        case Domain::nav2: return "nav2";
    }
    return "?";
}

inline std::optional<Domain> parse_domain(std::string_view name) {
    if (name == "inventory") return Domain::inventory;
    if (name == "nav1") return Domain::nav1;
    if (name == "nav2") return Domain::nav2;
    return std::nullopt;
}

constexpr int kGridSide = 5;
constexpr int kGridStates = kGridSide * kGridSide;
constexpr int kGridActions = 4;

// action order: left, right, up, down
enum GridAction { kLeft = 0, kRight = 1, kUp = 2, kDown = 3 };

constexpr int kArrowSelf = -1;  // worst-case arrow that keeps the agent in place
constexpr int kArrowNone = -2;  // no arrow (the goal cell)

inline int cell_index(int x, int y) { return y * kGridSide + x; }
inline int cell_x(int s) { return s % kGridSide; }
inline int cell_y(int s) { return s / kGridSide; }

/// Target of one move with the grid boundary clamping the agent in place.
inline int grid_move(int s, int action) {
    int x = cell_x(s), y = cell_y(s);
    switch (action) {
        case kLeft: x -= 1; break;
        case kRight: x += 1; break;
        case kUp: y += 1; break;
        case kDown: y -= 1; break;
        default: throw std::invalid_argument("grid_move: bad action");
    }
    if (x < 0 || x >= kGridSide || y < 0 || y >= kGridSide) return s;
    return cell_index(x, y);
}

struct GridCellTables {
    std::vector<int> grey_cells;
    std::vector<int> red_cells;
    std::vector<double> cell_cost;   // per cell, charged on entering it
    std::array<int, kGridStates> arrow{};  // worst-case move per cell
};

/// Static cell layout of a navigation task: cost cells and, for the second
/// task, the worst-case arrow map used by its transition perturbation test.
inline GridCellTables cell_tables(GridTask task) {
    GridCellTables t;
    t.cell_cost.assign(kGridStates, 0.0);
    t.arrow.fill(kArrowNone);
    auto grey = [&](int x, int y, double cost) {
        t.grey_cells.push_back(cell_index(x, y));
        t.cell_cost[cell_index(x, y)] = cost;
    };
    if (task == GridTask::nav1) {
        for (auto [x, y] : {std::pair{1, 0}, {1, 1}, {1, 2}, {3, 2}, {3, 3}, {3, 4}})
            grey(x, y, 1.0);
        return t;
    }
    for (auto [x, y] : {std::pair{1, 0}, {1, 1}, {1, 2}, {2, 2}, {3, 2}, {3, 3}, {3, 4}})
        grey(x, y, 0.1);
    for (auto [x, y] : {std::pair{0, 4}, {1, 4}, {3, 0}, {4, 0}}) {
        t.red_cells.push_back(cell_index(x, y));
        t.cell_cost[cell_index(x, y)] = 1.0;
    }
    // worst-case arrows, row by row from the bottom
    const int R = kRight, L = kLeft, U = kUp, D = kDown, S = kArrowSelf;
    const int row0[] = {R, R, R, S, S};
    const int row1[] = {D, D, D, D, D};
    const int row2[] = {L, L, L, L, L};
    const int row3[] = {U, U, L, L, L};
    const int row4[] = {S, S, L, L, kArrowNone};
    const int* rows[] = {row0, row1, row2, row3, row4};
    for (int y = 0; y < kGridSide; ++y)
        for (int x = 0; x < kGridSide; ++x) t.arrow[cell_index(x, y)] = rows[y][x];
    return t;
}

struct GridSpec {
    GridTask task = GridTask::nav1;
    int horizon = 200;
    double discount = 0.99;
    double budget = 3.0;
    GridCellTables tables;

    static GridSpec make(GridTask task) {
        GridSpec s;
        s.task = task;
        s.tables = cell_tables(task);
        if (task == GridTask::nav2) {
            s.horizon = 100;
            s.budget = 0.4;
        }
        return s;
    }
};

/**
Failure semantics of one grid step. With probability p_success the chosen
move happens; otherwise the agent stands still, is transported to a fixed
per-pair target cell, or follows the worst-case arrow of a flagged state,
depending on the active perturbation.
*/
struct GridDynamics {
    enum class Failure { stay, pair_offset, state_arrow };

    double p_success = 0.8;
    Failure failure = Failure::stay;
    std::vector<int> pair_target;     // pair_offset: cell per s*4+a, -1 keeps stay semantics
    std::vector<char> arrow_states;   // state_arrow: flag per state

    static GridDynamics reliable(double p) {
        GridDynamics d;
        d.p_success = p;
        return d;
    }
};

class GridEnv {
public:
    GridEnv(GridSpec spec, GridDynamics dyn) : spec_(std::move(spec)), dyn_(std::move(dyn)) {
        if (!(dyn_.p_success >= 0.0 && dyn_.p_success <= 1.0))
            throw std::invalid_argument("GridEnv: success probability out of range");
        if (dyn_.failure == GridDynamics::Failure::pair_offset &&
            dyn_.pair_target.size() != kGridStates * kGridActions)
            throw std::invalid_argument("GridEnv: pair offset table has wrong size");
        if (dyn_.failure == GridDynamics::Failure::state_arrow &&
            dyn_.arrow_states.size() != kGridStates)
            throw std::invalid_argument("GridEnv: arrow flag table has wrong size");
    }

    const GridSpec& spec() const { return spec_; }
    int start() const { return cell_index(0, 0); }
    int goal() const { return cell_index(4, 4); }
    bool terminal(int s) const { return s == goal(); }

    StepResult step(int s, int a, Rng& g) const {
        if (s < 0 || s >= kGridStates || a < 0 || a >= kGridActions)
            throw std::out_of_range("GridEnv: state or action out of range");
        if (terminal(s)) throw std::logic_error("GridEnv: stepping from the goal");
        int next;
        if (uniform01(g) < dyn_.p_success) {
            next = grid_move(s, a);
        } else {
            switch (dyn_.failure) {
                case GridDynamics::Failure::stay: next = s; break;
                case GridDynamics::Failure::pair_offset: {
                    int t = dyn_.pair_target[static_cast<std::size_t>(s) * kGridActions + a];
                    next = t >= 0 ? t : s;
                    break;
                }
                case GridDynamics::Failure::state_arrow: {
                    if (!dyn_.arrow_states[s]) {
                        next = s;
                    } else {
                        int arr = spec_.tables.arrow[s];
                        next = arr >= 0 ? grid_move(s, arr) : s;
                    }
                    break;
                }
                default: next = s;
            }
        }
        StepResult r;
        r.next = next;
        r.reward = -1.0;
        r.cost = spec_.tables.cell_cost[next];
        return r;
    }

private:
    GridSpec spec_;
    GridDynamics dyn_;
};

inline Rcmdp make_grid_rcmdp(const GridSpec& spec) {
    auto tables = std::make_shared<GridCellTables>(spec.tables);
    Rcmdp m;
    m.n_states = kGridStates;
    m.n_actions = kGridActions;
    m.reward = [](int, int) { return -1.0; };
    m.constraint_cost = [](int, int) { return 0.0; };
    m.entry_cost = [tables](int next) { return tables->cell_cost[next]; };
    m.budget = spec.budget;
    m.discount = spec.discount;
    m.horizon = spec.horizon;
    m.is_terminal = [](int s) { return s == cell_index(4, 4); };
    m.sample_start = [](Rng&) { return cell_index(0, 0); };
    m.validate();
    return m;
}

/// The five move targets of a cell in a fixed slot order: stay, then the
/// four actions, each clamped by the boundary. Slots of off-grid moves
/// coincide with the stay cell.
inline std::array<int, 5> grid_slot_cells(int s) {
    return {s, grid_move(s, kLeft), grid_move(s, kRight), grid_move(s, kUp), grid_move(s, kDown)};
}

/// Distinct reachable neighbours of a cell, sorted ascending. Between 3
/// (corners) and 5 (interior) cells.
inline std::vector<int> grid_support(int s) {
    auto slots = grid_slot_cells(s);
    std::vector<int> cells(slots.begin(), slots.end());
    std::sort(cells.begin(), cells.end());
    cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
    return cells;
}

inline SupportTable grid_support_table() {
    SupportTable t(static_cast<std::size_t>(kGridStates) * kGridActions);
    for (int s = 0; s < kGridStates; ++s) {
        auto sup = grid_support(s);
        for (int a = 0; a < kGridActions; ++a) t[static_cast<std::size_t>(s) * kGridActions + a] = sup;
    }
    return t;
}

inline SupportTable inventory_support_table(int n_items) {
    std::vector<int> all(n_items);
    for (int i = 0; i < n_items; ++i) all[i] = i;
    return SupportTable(static_cast<std::size_t>(n_items) * n_items, all);
}

/**
Applies cell-table overrides given as CSV lines of `x,y,kind`. Kinds:

  grey   -> constraint-cost cell at the task's grey cost (1.0 nav1, 0.1 nav2)
  red    -> constraint-cost cell at 1.0
  clear  -> remove any cell cost
  left, right, up, down, self -> replace the worst-case arrow
  none   -> remove the worst-case arrow

Blank lines and `#` comments are skipped. Malformed lines throw with their
line number.
*/
inline void apply_cell_overrides(GridCellTables& tables, GridTask task,
                                 const std::string& csv_text) {
    auto fail = [](int line, const std::string& what) {
        throw std::invalid_argument("cell overrides line " + std::to_string(line) + ": " + what);
    };
    auto erase_cell = [](std::vector<int>& cells, int s) {
        cells.erase(std::remove(cells.begin(), cells.end(), s), cells.end());
    };

    std::istringstream in(csv_text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno += 1;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
        line.erase(std::remove_if(line.begin(), line.end(), is_space), line.end());
        if (line.empty()) continue;

        auto c1 = line.find(',');
        auto c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos) fail(lineno, "expected x,y,kind");
        int x, y;
        try {
            std::size_t used = 0;
            x = std::stoi(line.substr(0, c1), &used);
            if (used != c1) throw std::invalid_argument("");
            std::string ys = line.substr(c1 + 1, c2 - c1 - 1);
            y = std::stoi(ys, &used);
            if (used != ys.size()) throw std::invalid_argument("");
        } catch (const std::exception&) {
            fail(lineno, "coordinates must be integers");
            return;
        }
        if (x < 0 || x >= kGridSide || y < 0 || y >= kGridSide)
            fail(lineno, "coordinates out of the 5x5 grid");
        int s = cell_index(x, y);
        std::string kind = line.substr(c2 + 1);

        if (kind == "grey") {
            erase_cell(tables.grey_cells, s);
            erase_cell(tables.red_cells, s);
            tables.grey_cells.push_back(s);
            tables.cell_cost[s] = task == GridTask::nav1 ? 1.0 : 0.1;
        } else if (kind == "red") {
            erase_cell(tables.grey_cells, s);
            erase_cell(tables.red_cells, s);
            tables.red_cells.push_back(s);
            tables.cell_cost[s] = 1.0;
        } else if (kind == "clear") {
            erase_cell(tables.grey_cells, s);
            erase_cell(tables.red_cells, s);
            tables.cell_cost[s] = 0.0;
        } else if (kind == "left") {
            tables.arrow[s] = kLeft;
        } else if (kind == "right") {
            tables.arrow[s] = kRight;
        } else if (kind == "up") {
            tables.arrow[s] = kUp;
        } else if (kind == "down") {
            tables.arrow[s] = kDown;
        } else if (kind == "self") {
            tables.arrow[s] = kArrowSelf;
        } else if (kind == "none") {
            tables.arrow[s] = kArrowNone;
        } else {
            fail(lineno, "unknown kind '" + kind + "'");
        }
    }
}

}  // namespace rcpg

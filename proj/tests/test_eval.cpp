#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include "rcpg/eval.hpp"
#include "rcpg/report.hpp"

using namespace rcpg;

namespace {

void zero_params(DiffNet& net) {
    std::fill(net.params().begin(), net.params().end(), 0.0);
}

// One-hot-input policy whose greedy action at state s is desired.at(s):
// an identity first layer routes each state to its own hidden unit, and the
// second layer scores the chosen action. Unlisted states score all-zero.
DiffNet table_policy(int n_states, int n_actions, const std::map<int, int>& desired) {
    DiffNet net(n_states, n_actions, Head::softmax, 1, n_states);
    zero_params(net);
    auto& p = net.params();
    std::size_t off_w2 = static_cast<std::size_t>(n_states) * (n_states + 1);
    for (int s = 0; s < n_states; ++s) p[static_cast<std::size_t>(s) * n_states + s] = 1.0;
    for (auto [s, a] : desired)
        p[off_w2 + static_cast<std::size_t>(a) * n_states + s] = 5.0;
    return net;
}

int bfs_steps(int from, int to) {
    std::vector<int> dist(kGridStates, -1);
    std::deque<int> q{from};
    dist[from] = 0;
    while (!q.empty()) {
        int s = q.front();
        q.pop_front();
        for (int a = 0; a < kGridActions; ++a) {
            int n = grid_move(s, a);
            if (dist[n] < 0) {
                dist[n] = dist[s] + 1;
                q.push_back(n);
            }
        }
    }
    return dist[to];
}

// policies that pick a fixed action everywhere (all hidden zero, one output
// bias raised)
DiffNet constant_policy(const DomainCoding& coding, int action) {
    DiffNet net(coding.policy_in(), coding.n_actions(), Head::softmax, 1, 4);
    zero_params(net);
    net.params()[net.param_count() - coding.n_actions() + action] = 1.0;
    return net;
}

PolicySnapshots snapshot_set(Algo algo, std::vector<std::uint64_t> seeds, DiffNet policy) {
    PolicySnapshots set;
    set.algo = algo;
    set.seeds = std::move(seeds);
    for (std::size_t i = 0; i < set.seeds.size(); ++i) set.policies.push_back(policy);
    return set;
}

}  // namespace

TEST_CASE("greedy action takes the highest-probability entry, ties to the lowest index") {
    DomainCoding coding = DomainCoding::tabular(3, 4);
    DiffNet net(coding.policy_in(), 4, Head::softmax, 1, 4);
    zero_params(net);
    EncodeBuf buf;
    // all-uniform distribution: every action ties, index 0 wins
    CHECK(greedy_action(net, coding, 0, buf) == 0);
    CHECK(greedy_action(net, coding, 2, buf) == 0);

    net.params()[net.param_count() - 4 + 2] = 1.0;  // raise the third output bias
    CHECK(greedy_action(net, coding, 0, buf) == 2);
    CHECK(greedy_action(net, coding, 1, buf) == 2);
}

TEST_CASE("table policies route each state to its chosen action") {
    DomainCoding coding = DomainCoding::tabular(5, 3);
    DiffNet net = table_policy(5, 3, {{0, 2}, {1, 0}, {2, 1}, {4, 2}});
    EncodeBuf buf;
    CHECK(greedy_action(net, coding, 0, buf) == 2);
    CHECK(greedy_action(net, coding, 1, buf) == 0);
    CHECK(greedy_action(net, coding, 2, buf) == 1);
    CHECK(greedy_action(net, coding, 3, buf) == 0);  // unlisted: uniform, lowest index
    CHECK(greedy_action(net, coding, 4, buf) == 2);
}

TEST_CASE("greedy walk along the short constrained route scores the path length") {
    // the 8-step route right/up/up/right/right/right/up/up crosses 4 grey cells
    std::map<int, int> desired;
    auto at = [](int x, int y) { return cell_index(x, y); };
    desired[at(0, 0)] = kRight;
    desired[at(1, 0)] = kUp;
    desired[at(1, 1)] = kUp;
    desired[at(1, 2)] = kRight;
    desired[at(2, 2)] = kRight;
    desired[at(3, 2)] = kRight;
    desired[at(4, 2)] = kUp;
    desired[at(4, 3)] = kUp;
    DiffNet policy = table_policy(kGridStates, kGridActions, desired);
    DomainCoding coding = DomainCoding::tabular(kGridStates, kGridActions);

    SimEnv env = make_sim(GridEnv(GridSpec::make(GridTask::nav1), GridDynamics::reliable(1.0)));
    Rng g(1);
    auto out = greedy_rollout(policy, coding, env, g);
    int shortest = bfs_steps(cell_index(0, 0), cell_index(4, 4));
    REQUIRE(shortest == 8);
    CHECK(out.steps == shortest);
    CHECK(out.value == -8.0);
    CHECK(out.cost == 4.0);

    // deterministic dynamics and policy: any generator state gives the same outcome
    Rng g2(999);
    auto again = greedy_rollout(policy, coding, env, g2);
    CHECK(again.value == out.value);
    CHECK(again.cost == out.cost);
}

TEST_CASE("unreliable actions stretch the same route") {
    std::map<int, int> desired;
    auto at = [](int x, int y) { return cell_index(x, y); };
    desired[at(0, 0)] = kRight;
    desired[at(1, 0)] = kUp;
    desired[at(1, 1)] = kUp;
    desired[at(1, 2)] = kRight;
    desired[at(2, 2)] = kRight;
    desired[at(3, 2)] = kRight;
    desired[at(4, 2)] = kUp;
    desired[at(4, 3)] = kUp;
    DiffNet policy = table_policy(kGridStates, kGridActions, desired);
    DomainCoding coding = DomainCoding::tabular(kGridStates, kGridActions);

    SimEnv env = make_sim(GridEnv(GridSpec::make(GridTask::nav1), GridDynamics::reliable(0.6)));
    double total = 0.0;
    for (int r = 0; r < 20; ++r) {
        Rng g = make_stream(7, r);
        total += greedy_rollout(policy, coding, env, g).value;
    }
    // stand-still failures repeat steps: about 8/0.6 of them on average
    CHECK(total / 20 < -10.0);
}

TEST_CASE("penalised return and overshoot are exact arithmetic") {
    CHECK(penalised_return(42.0, 1.0, 3.0) == 42.0);
    CHECK(penalised_return(-100.0, 5.0, 3.0) == -1100.0);
    CHECK(penalised_return(0.0, 2.0, 2.0) == 0.0);
    CHECK(overshoot(3.0, 3.0) == 0.0);
    CHECK(overshoot(0.0, 9.25) == -9.25);

    Rng g(3);
    for (int i = 0; i < 50; ++i) {
        double v = uniform01(g) * 200 - 100;
        double c = uniform01(g) * 20;
        double d = uniform01(g) * 10;
        CHECK_THAT(penalised_return(2 * v, 2 * c, 2 * d),
                   Catch::Matchers::WithinAbs(2 * penalised_return(v, c, d), 1e-9));
        CHECK(penalised_return(v, c, d) <= v);
        if (c <= d) CHECK(penalised_return(v, c, d) == v);
    }

    // mean overshoot over runs equals overshoot of the mean cost
    std::vector<double> costs = {1.0, 4.5, 2.25, 8.0};
    double d = 3.0;
    double mean_over = 0.0, mean_cost = 0.0;
    for (double c : costs) {
        mean_over += overshoot(c, d) / costs.size();
        mean_cost += c / costs.size();
    }
    CHECK_THAT(mean_over, Catch::Matchers::WithinAbs(overshoot(mean_cost, d), 1e-12));
}

TEST_CASE("domain budgets correct for the missing discount") {
    // undiscounted equivalent of d: d * T / sum_{t<T} gamma^t
    auto expect = [](double d, double gamma, int T) {
        double geo = 0.0, g = 1.0;
        for (int t = 0; t < T; ++t, g *= gamma) geo += g;
        return d * T / geo;
    };
    CHECK_THAT(domain_d_eval(Domain::inventory),
               Catch::Matchers::WithinAbs(expect(6.0, 0.99, 100), 1e-10));
    CHECK_THAT(domain_d_eval(Domain::inventory), Catch::Matchers::WithinAbs(9.4642, 5e-5));
    CHECK_THAT(domain_d_eval(Domain::nav1),
               Catch::Matchers::WithinAbs(expect(3.0, 0.99, 200), 1e-10));
    CHECK_THAT(domain_d_eval(Domain::nav2),
               Catch::Matchers::WithinAbs(expect(0.4, 0.99, 100), 1e-10));
}

TEST_CASE("domain helpers agree with the task definitions") {
    CHECK(domain_coding(Domain::inventory).n_states() == 20);
    CHECK(domain_coding(Domain::inventory).n_actions() == 20);
    CHECK(domain_coding(Domain::nav1).policy_in() == 2);
    CHECK(domain_support(Domain::nav2).size() == kGridStates * kGridActions);
    CHECK(domain_rcmdp(Domain::inventory).horizon == 100);
    CHECK(domain_rcmdp(Domain::nav1).horizon == 200);
    CHECK(domain_rcmdp(Domain::nav2).budget == 0.4);
    CHECK(parse_domain("nav2") == Domain::nav2);
    CHECK(!parse_domain("nav3").has_value());
    for (Domain d : {Domain::inventory, Domain::nav1, Domain::nav2})
        CHECK(parse_domain(domain_name(d)) == d);
}

TEST_CASE("data-collection environments use the stated reliabilities") {
    // nav2 collects with fully reliable actions: a right move always lands
    SimEnv nav2 = data_collection_env(Domain::nav2);
    for (int r = 0; r < 20; ++r) {
        Rng g(r);
        CHECK(nav2.step(cell_index(0, 0), kRight, g).next == cell_index(1, 0));
    }
    // nav1 collects at 0.8: both outcomes appear
    SimEnv nav1 = data_collection_env(Domain::nav1);
    int moved = 0;
    Rng g(5);
    for (int r = 0; r < 2000; ++r)
        moved += nav1.step(cell_index(0, 0), kRight, g).next == cell_index(1, 0);
    CHECK(moved > 1450);
    CHECK(moved < 1750);
    CHECK(nav1.horizon == 200);
    CHECK(nav2.horizon == 100);

    SimEnv inv = data_collection_env(Domain::inventory);
    CHECK(inv.horizon == 100);
    CHECK(!inv.terminal);
}

TEST_CASE("test axes match the experiment definitions") {
    TestGrid im = inventory_demand_test();
    CHECK(im.test_id == "IM");
    CHECK(im.param_name == "mu_sigma");
    REQUIRE(im.param_labels.size() == 9);
    CHECK(im.param_labels[0] == "3.33333/2.5");
    CHECK(im.param_labels[4] == "5/3.33333");  // the training-matched centre
    CHECK(im.param_labels[8] == "6.66667/5");

    TestGrid a1 = nav_success_test(GridTask::nav1);
    CHECK(a1.test_id == "1A");
    CHECK(a1.param_labels == std::vector<std::string>{"0.6", "0.7", "0.8", "0.9", "1"});

    TestGrid b1 = nav_perturbation_test(GridTask::nav1);
    CHECK(b1.test_id == "1B");
    CHECK(b1.param_labels == std::vector<std::string>{"5", "10", "20", "50", "100"});

    TestGrid a2 = nav_success_test(GridTask::nav2);
    CHECK(a2.test_id == "2A");
    TestGrid b2 = nav_perturbation_test(GridTask::nav2);
    CHECK(b2.param_labels == std::vector<std::string>{"5", "10", "15", "20", "25"});

    CHECK(domain_tests(Domain::inventory).size() == 1);
    auto nav1_tests = domain_tests(Domain::nav1);
    REQUIRE(nav1_tests.size() == 2);
    CHECK(nav1_tests[0].test_id == "1A");
    CHECK(nav1_tests[1].test_id == "1B");
}

TEST_CASE("draws without replacement cover uniformly and never repeat") {
    Rng g(11);
    auto all = detail::draw_without_replacement(10, 10, g);
    std::vector<int> iota(10);
    std::iota(iota.begin(), iota.end(), 0);
    CHECK(all == iota);
    CHECK(detail::draw_without_replacement(10, 0, g).empty());
    CHECK_THROWS_AS(detail::draw_without_replacement(5, 6, g), std::invalid_argument);

    std::vector<int> hits(10, 0);
    for (int r = 0; r < 6000; ++r) {
        auto got = detail::draw_without_replacement(10, 3, g);
        REQUIRE(got.size() == 3);
        CHECK(std::adjacent_find(got.begin(), got.end()) == got.end());
        for (int i : got) hits[i] += 1;
    }
    for (int i = 0; i < 10; ++i) {
        CHECK(hits[i] > 1800 - 180);  // five sigmas around n*k/10
        CHECK(hits[i] < 1800 + 180);
    }
}

TEST_CASE("pair-offset perturbations flag the requested number of pairs") {
    Rng g(21);
    for (int n_eps : {5, 10, 20, 50, 100}) {
        GridDynamics dyn = pair_offset_perturbation(n_eps, g);
        REQUIRE(dyn.pair_target.size() == kGridStates * kGridActions);
        int flagged = 0;
        for (int pair = 0; pair < kGridStates * kGridActions; ++pair) {
            int target = dyn.pair_target[pair];
            if (target < 0) continue;
            flagged += 1;
            auto cells = grid_support(pair / kGridActions);
            CHECK(std::find(cells.begin(), cells.end(), target) != cells.end());
        }
        CHECK(flagged == n_eps);
        CHECK(dyn.p_success == 0.8);
        CHECK(dyn.failure == GridDynamics::Failure::pair_offset);
    }
}

TEST_CASE("arrow perturbations flag the requested number of states") {
    Rng g(22);
    for (int n_eps : {5, 10, 15, 20, 25}) {
        GridDynamics dyn = arrow_perturbation(n_eps, g);
        REQUIRE(dyn.arrow_states.size() == kGridStates);
        CHECK(std::count(dyn.arrow_states.begin(), dyn.arrow_states.end(), char(1)) == n_eps);
        CHECK(dyn.failure == GridDynamics::Failure::state_arrow);
    }
    // fully flagged dynamics still build a working environment
    GridDynamics dyn = arrow_perturbation(kGridStates, g);
    GridEnv env(GridSpec::make(GridTask::nav2), dyn);
    Rng roll(3);
    for (int t = 0; t < 50; ++t) env.step(cell_index(2, 2), kUp, roll);
}

TEST_CASE("standard errors are taken over seeds with small-sample guards") {
    CHECK(stderr_of(std::vector<double>{}) == 0.0);
    CHECK(stderr_of(std::vector<double>{5.0}) == 0.0);
    std::vector<double> xs = {1.0, 2.0, 3.0};
    CHECK_THAT(stderr_of(xs), Catch::Matchers::WithinAbs(1.0 / std::sqrt(3.0), 1e-12));
    CHECK(mean_of(xs) == 2.0);
    CHECK(mean_of(std::vector<double>{}) == 0.0);
}

TEST_CASE("suite on a stuck policy produces exact deterministic aggregates") {
    DomainCoding coding = domain_coding(Domain::nav1);
    DiffNet stuck = constant_policy(coding, kLeft);  // pinned to (0,0) forever

    // stand-still failures cannot unstick the policy, so test 1A alone gives
    // fully predictable rollouts
    std::vector<TestGrid> tests = {nav_success_test(GridTask::nav1)};
    std::vector<PolicySnapshots> sets;
    sets.push_back(snapshot_set(Algo::pg, {1, 2}, stuck));

    EvalOptions opt;
    opt.repeats = 3;
    auto suite = run_test_suite(Domain::nav1, tests, sets, coding, opt);

    CHECK(suite.rows.size() == 5 * 2 * 3);  // settings x seeds x repeats
    for (const auto& row : suite.rows) {
        CHECK(row.value == -200.0);
        CHECK(row.constraint_cost == 0.0);
        CHECK_THAT(row.overshoot, Catch::Matchers::WithinAbs(-suite.d_eval, 1e-12));
    }
    REQUIRE(suite.summary.size() == 5);
    for (const auto& s : suite.summary) {
        CHECK(s.mean_value == -200.0);
        CHECK(s.stderr_value == 0.0);
        CHECK(s.stderr_overshoot == 0.0);
        CHECK(s.n_seeds == 2);
    }
    REQUIRE(suite.penalised.size() == 1);
    CHECK(suite.penalised[0].mean == -200.0);  // under budget: no penalty
    CHECK(suite.penalised[0].stderr_ == 0.0);

    auto per_seed = per_seed_penalised(suite, "pg");
    CHECK(per_seed == std::vector<double>{-200.0, -200.0});
}

TEST_CASE("teleport perturbations can unstick a pinned policy") {
    DomainCoding coding = domain_coding(Domain::nav1);
    DiffNet stuck = constant_policy(coding, kLeft);
    std::vector<TestGrid> tests = {nav_perturbation_test(GridTask::nav1)};
    std::vector<PolicySnapshots> sets;
    sets.push_back(snapshot_set(Algo::pg, {1}, stuck));

    EvalOptions opt;
    opt.repeats = 10;
    auto suite = run_test_suite(Domain::nav1, tests, sets, coding, opt);

    double max_cost = 0.0;
    for (const auto& row : suite.rows) {
        CHECK(row.value >= -200.0);
        CHECK(row.constraint_cost >= 0.0);
        max_cost = std::max(max_cost, row.constraint_cost);
    }
    // with all 100 pairs flagged the agent is bound to visit grey cells
    CHECK(max_cost > 0.0);
}

TEST_CASE("rows come out sorted and reruns are bit-identical") {
    DomainCoding coding = domain_coding(Domain::nav2);
    auto tests = domain_tests(Domain::nav2);
    std::vector<PolicySnapshots> sets;
    sets.push_back(snapshot_set(Algo::cpg, {3, 1}, constant_policy(coding, kRight)));
    sets.push_back(snapshot_set(Algo::pg, {3, 1}, constant_policy(coding, kUp)));

    EvalOptions opt;
    opt.repeats = 4;
    auto a = run_test_suite(Domain::nav2, tests, sets, coding, opt);
    auto b = run_test_suite(Domain::nav2, tests, sets, coding, opt);

    auto key_ok = [](const ResultRow& x, const ResultRow& y) {
        return std::make_tuple(x.test_id, x.setting, x.algorithm, x.seed, x.repeat) <=
               std::make_tuple(y.test_id, y.setting, y.algorithm, y.seed, y.repeat);
    };
    for (std::size_t i = 1; i < a.rows.size(); ++i) CHECK(key_ok(a.rows[i - 1], a.rows[i]));

    std::ostringstream csv_a, csv_b;
    write_results_csv(a, csv_a);
    write_results_csv(b, csv_b);
    CHECK(csv_a.str() == csv_b.str());
}

TEST_CASE("all algorithms face the same perturbed environments") {
    DomainCoding coding = domain_coding(Domain::nav1);
    DiffNet same = constant_policy(coding, kRight);
    auto tests = domain_tests(Domain::nav1);

    // two differently tagged sets sharing one policy and seed list must see
    // identical outcome streams on the randomly perturbed tests
    std::vector<PolicySnapshots> sets;
    sets.push_back(snapshot_set(Algo::pg, {7, 8}, same));
    sets.push_back(snapshot_set(Algo::adv_rcpg, {7, 8}, same));

    EvalOptions opt;
    opt.repeats = 5;
    auto suite = run_test_suite(Domain::nav1, tests, sets, coding, opt);

    std::map<std::tuple<std::string, int, std::uint64_t, int>, std::pair<double, double>> pg_rows;
    for (const auto& row : suite.rows)
        if (row.algorithm == "pg")
            pg_rows[{row.test_id, row.setting, row.seed, row.repeat}] = {row.value,
                                                                         row.constraint_cost};
    int compared = 0;
    for (const auto& row : suite.rows) {
        if (row.algorithm != "adv-rcpg") continue;
        auto it = pg_rows.find({row.test_id, row.setting, row.seed, row.repeat});
        REQUIRE(it != pg_rows.end());
        CHECK(row.value == it->second.first);
        CHECK(row.constraint_cost == it->second.second);
        compared += 1;
    }
    CHECK(compared == 10 * 2 * 5);
}

TEST_CASE("suite validation rejects broken inputs") {
    DomainCoding coding = domain_coding(Domain::nav1);
    auto tests = domain_tests(Domain::nav1);
    std::vector<PolicySnapshots> sets;
    PolicySnapshots empty;
    empty.algo = Algo::pg;
    sets.push_back(empty);
    EvalOptions opt;
    CHECK_THROWS_AS(run_test_suite(Domain::nav1, tests, sets, coding, opt),
                    std::invalid_argument);

    sets.clear();
    sets.push_back(snapshot_set(Algo::pg, {1}, constant_policy(coding, kLeft)));
    auto wrong = domain_tests(Domain::nav2);
    CHECK_THROWS_AS(run_test_suite(Domain::nav1, wrong, sets, coding, opt),
                    std::invalid_argument);

    auto mismatched = snapshot_set(Algo::cpg, {1, 2}, constant_policy(coding, kLeft));
    mismatched.seeds.pop_back();
    sets.assign(1, mismatched);
    CHECK_THROWS_AS(run_test_suite(Domain::nav1, tests, sets, coding, opt),
                    std::invalid_argument);
}

TEST_CASE("idle inventory policies sit exactly at zero") {
    DomainCoding coding = domain_coding(Domain::inventory);
    DiffNet idle = constant_policy(coding, 0);  // never order anything
    auto tests = domain_tests(Domain::inventory);
    std::vector<PolicySnapshots> sets;
    sets.push_back(snapshot_set(Algo::pg, {1, 2, 3}, idle));

    EvalOptions opt;
    opt.repeats = 2;
    auto suite = run_test_suite(Domain::inventory, tests, sets, coding, opt);
    CHECK(suite.rows.size() == 9 * 3 * 2);
    for (const auto& row : suite.rows) {
        CHECK(row.value == 0.0);
        CHECK(row.constraint_cost == 0.0);
    }
    REQUIRE(suite.penalised.size() == 1);
    CHECK(suite.penalised[0].mean == 0.0);
}

TEST_CASE("report files land on disk with the documented shapes") {
    DomainCoding coding = domain_coding(Domain::nav1);
    auto tests = domain_tests(Domain::nav1);
    std::vector<PolicySnapshots> sets;
    sets.push_back(snapshot_set(Algo::pg, {1, 2}, constant_policy(coding, kRight)));
    sets.push_back(snapshot_set(Algo::cpg, {1, 2}, constant_policy(coding, kLeft)));

    EvalOptions opt;
    opt.repeats = 2;
    auto suite = run_test_suite(Domain::nav1, tests, sets, coding, opt);

    auto dir = std::filesystem::temp_directory_path() / "rcpg_report_test";
    std::filesystem::remove_all(dir);
    write_report_files(suite, dir);

    std::ifstream results(dir / "results.csv");
    REQUIRE(results.good());
    std::string header;
    std::getline(results, header);
    CHECK(header == kResultsHeader);
    int lines = 0;
    for (std::string line; std::getline(results, line);) lines += 1;
    CHECK(lines == static_cast<int>(suite.rows.size()));

    std::ifstream summary(dir / "summary.csv");
    REQUIRE(summary.good());
    std::string note;
    std::getline(summary, note);
    CHECK(note.rfind("# penalised return pooled", 0) == 0);
    std::getline(summary, header);
    CHECK(header.rfind("algorithm,domain,test_id", 0) == 0);

    for (const char* test : {"1A", "1B"}) {
        for (const char* metric : {"value", "overshoot"}) {
            auto stem = dir / (std::string("panel_nav1_") + test + "_" + metric);
            REQUIRE(std::filesystem::exists(stem.replace_extension(".csv")));
            std::ifstream svg(stem.replace_extension(".svg"));
            REQUIRE(svg.good());
            std::stringstream ss;
            ss << svg.rdbuf();
            CHECK(ss.str().rfind("<svg", 0) == 0);
            CHECK(ss.str().find("polyline") != std::string::npos);
            CHECK(ss.str().find("</svg>") != std::string::npos);
        }
    }

    // panel CSV carries one column pair per algorithm plus the axis column
    std::ifstream panel(dir / "panel_nav1_1A_value.csv");
    REQUIRE(panel.good());
    std::getline(panel, header);
    CHECK(header == "param_value,cpg_mean,cpg_stderr,pg_mean,pg_stderr");
    lines = 0;
    for (std::string line; std::getline(panel, line);) lines += 1;
    CHECK(lines == 5);

    std::filesystem::remove_all(dir);
}

TEST_CASE("report bytes are a pure function of the suite") {
    DomainCoding coding = domain_coding(Domain::nav2);
    auto tests = domain_tests(Domain::nav2);
    std::vector<PolicySnapshots> sets;
    sets.push_back(snapshot_set(Algo::adv_rcpg, {4}, constant_policy(coding, kUp)));

    EvalOptions opt;
    opt.repeats = 3;
    auto suite = run_test_suite(Domain::nav2, tests, sets, coding, opt);

    std::ostringstream s1, s2;
    write_summary_csv(suite, s1);
    write_summary_csv(suite, s2);
    CHECK(s1.str() == s2.str());
    CHECK(s1.str().find("adv-rcpg,nav2,pooled,all,all,1,,,,,,,") != std::string::npos);

    auto panels = collect_panels(suite);
    REQUIRE(panels.size() == 4);  // two tests x two metrics
    std::ostringstream v1, v2;
    write_panel_svg(panels[0], "t", v1);
    write_panel_svg(panels[0], "t", v2);
    CHECK(v1.str() == v2.str());
}

TEST_CASE("worker-thread count does not change any row") {
    DomainCoding coding = domain_coding(Domain::nav2);
    auto tests = domain_tests(Domain::nav2);
    std::vector<PolicySnapshots> sets;
    sets.push_back(snapshot_set(Algo::pg, {1, 2}, constant_policy(coding, kRight)));
    sets.push_back(snapshot_set(Algo::cpg, {1, 2}, constant_policy(coding, kUp)));

    EvalOptions serial;
    serial.repeats = 3;
    EvalOptions threaded = serial;
    threaded.jobs = 3;
    auto a = run_test_suite(Domain::nav2, tests, sets, coding, serial);
    auto b = run_test_suite(Domain::nav2, tests, sets, coding, threaded);

    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].algorithm == b.rows[i].algorithm);
        CHECK(a.rows[i].seed == b.rows[i].seed);
        CHECK(a.rows[i].repeat == b.rows[i].repeat);
        CHECK(a.rows[i].value == b.rows[i].value);
        CHECK(a.rows[i].constraint_cost == b.rows[i].constraint_cost);
    }
    REQUIRE(a.summary.size() == b.summary.size());
    for (std::size_t i = 0; i < a.summary.size(); ++i) {
        CHECK(a.summary[i].mean_value == b.summary[i].mean_value);
        CHECK(a.summary[i].stderr_cost == b.summary[i].stderr_cost);
    }
}

TEST_CASE("re-aggregating a suite's rows reproduces its summaries") {
    DomainCoding coding = domain_coding(Domain::nav1);
    auto tests = domain_tests(Domain::nav1);
    std::vector<PolicySnapshots> sets;
    sets.push_back(snapshot_set(Algo::rcpg_value, {4, 9}, constant_policy(coding, kUp)));
    sets.push_back(snapshot_set(Algo::adv_rcpg, {4, 9}, constant_policy(coding, kRight)));

    EvalOptions opt;
    opt.repeats = 2;
    auto suite = run_test_suite(Domain::nav1, tests, sets, coding, opt);

    // shuffle the rows, then aggregate the copy
    std::vector<ResultRow> rows = suite.rows;
    Rng g = make_stream(77, 0);
    for (std::size_t i = rows.size(); i > 1; --i)
        std::swap(rows[i - 1], rows[uniform_below(g, static_cast<int>(i))]);
    auto again = aggregate_rows(Domain::nav1, std::move(rows), opt.repeats);

    REQUIRE(again.summary.size() == suite.summary.size());
    for (std::size_t i = 0; i < suite.summary.size(); ++i) {
        CHECK(again.summary[i].algorithm == suite.summary[i].algorithm);
        CHECK(again.summary[i].test_id == suite.summary[i].test_id);
        CHECK(again.summary[i].param_value == suite.summary[i].param_value);
        CHECK(again.summary[i].mean_value == suite.summary[i].mean_value);
        CHECK(again.summary[i].stderr_value == suite.summary[i].stderr_value);
        CHECK(again.summary[i].mean_overshoot == suite.summary[i].mean_overshoot);
    }
    REQUIRE(again.penalised.size() == suite.penalised.size());
    for (std::size_t i = 0; i < suite.penalised.size(); ++i) {
        CHECK(again.penalised[i].algorithm == suite.penalised[i].algorithm);
        CHECK(again.penalised[i].mean == suite.penalised[i].mean);
        CHECK(again.penalised[i].stderr_ == suite.penalised[i].stderr_);
    }
}

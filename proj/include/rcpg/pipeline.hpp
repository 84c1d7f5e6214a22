#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rcpg/config.hpp"
#include "rcpg/eval.hpp"
#include "rcpg/report.hpp"
#include "rcpg/robustness.hpp"
#include "rcpg/trainers.hpp"

namespace rcpg {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitCache = 3;
constexpr int kExitRuntime = 4;

/// Error carrying the process exit code for the experiment driver.
struct PipelineError : std::runtime_error {
    int exit_code;
    PipelineError(int code, const std::string& what)
        : std::runtime_error(what), exit_code(code) {}
};

/// Exclusive marker file so two runs cannot write one output directory.
/// Released on destruction; a file left behind by a crashed run has to be
/// removed by hand, and the error says which file.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& out_dir) {
        std::filesystem::create_directories(out_dir);
        path_ = out_dir / "LOCK";
        std::FILE* f = std::fopen(path_.string().c_str(), "wx");
        if (!f)
            throw PipelineError(kExitRuntime,
                                "output directory is locked; remove " + path_.string() +
                                    " if no other run is active");
        std::fputs("held by a running experiment\n", f);
        std::fclose(f);
    }
    ~RunLock() {
        std::error_code ec;
        std::filesystem::remove(path_, ec);
    }
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Manifest: what a run directory contains and which config produced it
// ---------------------------------------------------------------------------

constexpr const char* kManifestTag = "# rcpg-manifest v1";

struct Manifest {
    std::uint64_t config_hash = 0;
    std::uint32_t net_version = kNetSnapshotVersion;
    bool estimated = false;
    std::vector<std::pair<std::string, std::uint64_t>> trained;  // algorithm, seed
    bool tested = false;

    bool has_trained(const std::string& algo, std::uint64_t seed) const {
        for (const auto& [a, s] : trained)
            if (a == algo && s == seed) return true;
        return false;
    }
};

inline std::string manifest_text(const Manifest& m) {
    std::ostringstream os;
    os << kManifestTag << "\n";
    os << "config_hash = " << m.config_hash << "\n";
    os << "net_version = " << m.net_version << "\n";
    os << "estimated = " << (m.estimated ? "yes" : "no") << "\n";
    for (const auto& [algo, seed] : m.trained) os << "trained = " << algo << " " << seed << "\n";
    os << "tested = " << (m.tested ? "yes" : "no") << "\n";
    return os.str();
}

inline Manifest parse_manifest(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kManifestTag)
        throw CacheMismatch("manifest: unexpected tag '" + line + "'");

    Manifest m;
    bool saw_hash = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw CacheMismatch("manifest: malformed line '" + line + "'");
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        try {
            if (key == "config_hash") {
                m.config_hash = std::stoull(value);
                saw_hash = true;
            } else if (key == "net_version") {
                m.net_version = static_cast<std::uint32_t>(std::stoul(value));
            } else if (key == "estimated") {
                m.estimated = value == "yes";
            } else if (key == "tested") {
                m.tested = value == "yes";
            } else if (key == "trained") {
                auto sp = value.find(' ');
                if (sp == std::string::npos) throw std::invalid_argument(value);
                m.trained.emplace_back(value.substr(0, sp), std::stoull(value.substr(sp + 1)));
            } else {
                throw CacheMismatch("manifest: unknown key '" + key + "'");
            }
        } catch (const CacheMismatch&) {
            throw;
        } catch (const std::exception&) {
            throw CacheMismatch("manifest: malformed value in '" + line + "'");
        }
    }
    if (!saw_hash) throw CacheMismatch("manifest: missing config_hash");
    return m;
}

inline void save_manifest(const Manifest& m, const std::filesystem::path& out_dir) {
    std::filesystem::path tmp = out_dir / "manifest.tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw PipelineError(kExitRuntime, "cannot write " + tmp.string());
        os << manifest_text(m);
    }
    std::filesystem::rename(tmp, out_dir / "manifest.txt");
}

inline std::optional<Manifest> load_manifest(const std::filesystem::path& out_dir) {
    std::ifstream is(out_dir / "manifest.txt");
    if (!is) return std::nullopt;
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_manifest(ss.str());
}

namespace detail {

// stream seed of the shared data-collection phase; deliberately not tied to
// any training seed, the dataset is one artifact of the run
constexpr std::uint64_t kDataCollectionSeed = 0x64617461ULL;

inline std::string pair_stem(const std::string& algo, std::uint64_t seed) {
    return algo + "_seed" + std::to_string(seed);
}

}  // namespace detail

/// Uniform-random-policy episodes on the data-collection environment,
/// recorded as (state, action, successor) steps for model estimation.
inline std::vector<Trajectory> collect_random_episodes(const SimEnv& env, int n_actions,
                                                       int episodes, Rng& g) {
    std::vector<Trajectory> data;
    data.reserve(episodes);
    for (int e = 0; e < episodes; ++e) {
        Trajectory traj;
        int s = env.start;
        for (int t = 0; t < env.horizon; ++t) {
            if (env.terminal && env.terminal(s)) break;
            int a = uniform_below(g, n_actions);
            StepResult st = env.step(s, a, g);
            TrajectoryStep step;
            step.state = s;
            step.action = a;
            step.next_state = st.next;
            step.reward = st.reward;
            step.cost = st.cost;
            traj.steps.push_back(std::move(step));
            s = st.next;
        }
        data.push_back(std::move(traj));
    }
    return data;
}

/// Builds the uncertainty set from scratch: collect episodes, estimate the
/// nominal model, attach Hoeffding radii sized for the largest successor set.
inline UncertaintySet build_uncertainty_set(const ExperimentConfig& cfg) {
    SimEnv env = data_collection_env(cfg.domain);
    DomainCoding coding = domain_coding(cfg.domain);
    SupportTable support = domain_support(cfg.domain);

    Rng g = make_stream(detail::kDataCollectionSeed, 0);
    auto data = collect_random_episodes(env, coding.n_actions(), cfg.estimation_episodes, g);
    NominalEstimate est =
        estimate_nominal(data, coding.n_states(), coding.n_actions(), support);

    std::size_t outcomes = 1;
    for (const auto& sup : support) outcomes = std::max(outcomes, sup.size());

    UncertaintySet uset;
    uset.nominal = std::move(est.model);
    uset.alpha = hoeffding_budget(est.counts, static_cast<int>(outcomes), cfg.delta);
    uset.delta = cfg.delta;
    return uset;
}

/**
Drives the experiment phases against one output directory:

  1. estimate: random-policy data collection, maximum-likelihood nominal
     model, Hoeffding radii; cached as uset.*.csv.
  2. train: every configured algorithm and seed; policy checkpoints and
     per-episode metric streams; completed pairs are skipped on resume.
  3. test: the domain's perturbation suites on the trained policies;
     results.csv, summary.csv, and figure panels under report/.

The manifest records the config hash and the completed work. Rerunning with
a different config against the same directory stops before touching
anything; rerunning with the same config reuses whatever is already done.
The lock file is held for the lifetime of this object.
*/
class ExperimentRun {
public:
    explicit ExperimentRun(ExperimentConfig cfg, std::ostream* log = nullptr)
        : cfg_(std::move(cfg)), out_(cfg_.out_dir), log_(log), lock_(out_) {
        if (auto existing = load_manifest(out_)) {
            if (existing->config_hash != config_hash(cfg_))
                throw PipelineError(kExitCache,
                                    "output directory " + out_.string() +
                                        " was produced by a different config; use a fresh "
                                        "directory or delete it");
            if (existing->net_version != kNetSnapshotVersion)
                throw PipelineError(kExitCache, "output directory holds checkpoints of an "
                                                "unsupported snapshot version");
            manifest_ = std::move(*existing);
        } else {
            manifest_.config_hash = config_hash(cfg_);
            save_manifest(manifest_, out_);
        }
    }

    const ExperimentConfig& config() const { return cfg_; }
    const Manifest& manifest() const { return manifest_; }

    /// Phase 1, cached: loads uset.*.csv when the manifest says it is done.
    const UncertaintySet& estimate() {
        if (uset_) return *uset_;
        std::string base = (out_ / "uset").string();
        if (manifest_.estimated) {
            try {
                uset_ = load_uncertainty_set(base);
            } catch (const CacheMismatch& e) {
                throw PipelineError(kExitCache, e.what());
            }
            note("estimation cached: " + base + ".{nominal,alpha}.csv");
            return *uset_;
        }
        note("estimating nominal model from " + std::to_string(cfg_.estimation_episodes) +
             " random episodes");
        uset_ = build_uncertainty_set(cfg_);
        save_uncertainty_set(*uset_, base);
        manifest_.estimated = true;
        save_manifest(manifest_, out_);
        return *uset_;
    }

    /// Phase 2: trains every configured (algorithm, seed) pair not already
    /// checkpointed, `jobs` pairs at a time.
    void train() {
        const UncertaintySet& uset = estimate();
        std::filesystem::create_directories(out_ / "checkpoints");
        std::filesystem::create_directories(out_ / "metrics");

        struct Pair {
            Algo algo;
            std::uint64_t seed;
        };
        std::vector<Pair> todo;
        for (Algo algo : cfg_.algorithms) {
            for (std::uint64_t seed : cfg_.seeds) {
                if (manifest_.has_trained(algo_name(algo), seed) &&
                    checkpoints_present(algo, seed)) {
                    note(std::string("skipping ") + detail::pair_stem(algo_name(algo), seed) +
                         ": already trained");
                    continue;
                }
                todo.push_back({algo, seed});
            }
        }
        if (todo.empty()) return;

        Rcmdp mdp = domain_rcmdp(cfg_.domain);
        DomainCoding coding = domain_coding(cfg_.domain);

        auto train_one = [&](const Pair& p) {
            TrainerConfig tcfg = cfg_.trainer_for(p.algo, p.seed);
            TrainResult res = run_training(tcfg, mdp, coding, uset.nominal,
                                           needs_uncertainty_set(p.algo) ? &uset : nullptr);
            write_pair_artifacts(p.algo, p.seed, res);
            std::lock_guard<std::mutex> guard(mutex_);
            if (!manifest_.has_trained(algo_name(p.algo), p.seed))
                manifest_.trained.emplace_back(algo_name(p.algo), p.seed);
            manifest_.tested = false;  // stale once any policy changed
            save_manifest(manifest_, out_);
            note(std::string("trained ") + detail::pair_stem(algo_name(p.algo), p.seed));
        };

        int jobs = std::min<int>(std::max(1, cfg_.jobs), static_cast<int>(todo.size()));
        if (jobs == 1) {
            for (const Pair& p : todo) train_one(p);
        } else {
            std::atomic<std::size_t> next{0};
            std::exception_ptr first_error;
            std::mutex error_mutex;
            std::vector<std::thread> pool;
            for (int j = 0; j < jobs; ++j)
                pool.emplace_back([&] {
                    try {
                        for (std::size_t i = next.fetch_add(1); i < todo.size();
                             i = next.fetch_add(1))
                            train_one(todo[i]);
                    } catch (...) {
                        std::lock_guard<std::mutex> guard(error_mutex);
                        if (!first_error) first_error = std::current_exception();
                    }
                });
            for (auto& th : pool) th.join();
            if (first_error) std::rethrow_exception(first_error);
        }
    }

    /// Phase 3: runs the perturbation suites on the checkpointed policies and
    /// writes the report files. A completed phase is not repeated; the stored
    /// results are parsed back instead.
    SuiteResult test() {
        std::filesystem::path report_dir = out_ / "report";
        if (manifest_.tested && std::filesystem::exists(report_dir / "results.csv")) {
            note("test phase already complete; reading stored results");
            return read_results_csv(report_dir / "results.csv");
        }

        DomainCoding coding = domain_coding(cfg_.domain);
        std::vector<PolicySnapshots> sets;
        for (Algo algo : cfg_.algorithms) {
            PolicySnapshots set;
            set.algo = algo;
            for (std::uint64_t seed : cfg_.seeds) {
                std::filesystem::path p = policy_path(algo, seed);
                if (!std::filesystem::exists(p))
                    throw PipelineError(kExitRuntime,
                                        "missing checkpoint " + p.string() +
                                            "; run the training phase first");
                set.seeds.push_back(seed);
                set.policies.push_back(load_net(p.string()));
            }
            sets.push_back(std::move(set));
        }

        auto tests = domain_tests(cfg_.domain);
        EvalOptions opt;
        opt.repeats = cfg_.test_repeats;
        opt.stream_seed = cfg_.test_stream_seed;
        opt.jobs = cfg_.jobs;
        note("running " + std::to_string(tests.size()) + " perturbation tests, " +
             std::to_string(cfg_.test_repeats) + " repeats");
        SuiteResult suite = run_test_suite(cfg_.domain, tests, sets, coding, opt);
        write_report_files(suite, report_dir);

        manifest_.tested = true;
        save_manifest(manifest_, out_);
        note("report written to " + report_dir.string());
        return suite;
    }

    SuiteResult run_all() {
        estimate();
        train();
        return test();
    }

private:
    void note(const std::string& s) {
        std::lock_guard<std::mutex> guard(log_mutex_);
        if (log_) (*log_) << s << "\n";
    }

    std::filesystem::path policy_path(Algo algo, std::uint64_t seed) const {
        return out_ / "checkpoints" / (detail::pair_stem(algo_name(algo), seed) + ".policy.net");
    }
    std::filesystem::path adversary_path(Algo algo, std::uint64_t seed) const {
        return out_ / "checkpoints" /
               (detail::pair_stem(algo_name(algo), seed) + ".adversary.net");
    }

    bool checkpoints_present(Algo algo, std::uint64_t seed) const {
        if (!std::filesystem::exists(policy_path(algo, seed))) return false;
        if (algo == Algo::adv_rcpg && !std::filesystem::exists(adversary_path(algo, seed)))
            return false;
        return true;
    }

    void write_pair_artifacts(Algo algo, std::uint64_t seed, const TrainResult& res) const {
        save_net(res.policy, policy_path(algo, seed).string());
        if (res.adversary) save_net(*res.adversary, adversary_path(algo, seed).string());

        std::filesystem::path mpath =
            out_ / "metrics" / (detail::pair_stem(algo_name(algo), seed) + ".csv");
        std::ofstream os(mpath, std::ios::trunc);
        if (!os) throw PipelineError(kExitRuntime, "cannot write " + mpath.string());
        os << "# " << algo_name(algo) << " seed " << seed;
        if (res.adversary) os << ", pretrain mae " << detail::fmt_g10(res.pretrain.mae);
        os << "\n";
        os << "episode,value,constraint_cost,overshoot,lambda,lambda_adv,mean_l1_deviation\n";
        for (const EpisodeMetrics& m : res.metrics) {
            os << m.episode << ',' << detail::fmt_g10(m.value) << ','
               << detail::fmt_g10(m.constraint_cost) << ',' << detail::fmt_g10(m.overshoot)
               << ',' << detail::fmt_g10(m.lambda) << ',' << detail::fmt_g10(m.lambda_adv) << ','
               << detail::fmt_g10(m.mean_l1_deviation) << "\n";
        }
    }

    ExperimentConfig cfg_;
    std::filesystem::path out_;
    std::ostream* log_;
    RunLock lock_;
    Manifest manifest_;
    std::optional<UncertaintySet> uset_;
    std::mutex mutex_;
    std::mutex log_mutex_;
};

}  // namespace rcpg

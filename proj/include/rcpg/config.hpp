#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rcpg/envs.hpp"
#include "rcpg/eval.hpp"
#include "rcpg/trainers.hpp"

namespace rcpg {

enum class Preset { desk, paper };

inline const char* preset_name(Preset p) { return p == Preset::desk ? "desk" : "paper"; }

inline std::optional<Preset> parse_preset(std::string_view name) {
    if (name == "desk") return Preset::desk;
    if (name == "paper") return Preset::paper;
    return std::nullopt;
}

/**
A fully resolved experiment description. Scale-dependent sizes (training
episodes, test repeats, default seed list) come from the preset, domain
defaults (estimation episodes, initial multiplier) from the domain; explicit
config keys override either. Learning rates and architecture are fixed.
*/
struct ExperimentConfig {
    Domain domain = Domain::nav1;
    Preset preset = Preset::desk;
    std::vector<Algo> algorithms{kAllAlgos.begin(), kAllAlgos.end()};
    std::vector<std::uint64_t> seeds;
    int estimation_episodes = 0;
    double delta = 0.10;
    int train_episodes = 0;
    int warmup_episodes = 100;
    double lambda_init = 0.0;
    int test_repeats = 0;
    std::uint64_t test_stream_seed = 0x74657374ULL;
    std::string out_dir = "out";
    int jobs = 1;

    TrainerConfig trainer_for(Algo algo, std::uint64_t seed) const {
        TrainerConfig t;
        t.algo = algo;
        t.episodes = train_episodes;
        t.warmup_episodes = warmup_episodes;
        t.lambda_init = lambda_init;
        t.lambda_adv_init = lambda_init;
        t.seed = seed;
        return t;
    }
};

inline int default_estimation_episodes(Domain d) {
    return d == Domain::nav2 ? 10000 : 100;
}

inline double default_lambda_init(Domain d) {
    return d == Domain::inventory ? 50.0 : 1.0;
}

struct ConfigMessage {
    int line = 0;  // zero when not tied to a config line
    std::string text;
};

struct ConfigParse {
    std::optional<ExperimentConfig> config;
    std::vector<ConfigMessage> errors;
    std::vector<ConfigMessage> warnings;

    bool ok() const { return config.has_value(); }
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::optional<long long> parse_int(const std::string& s) {
    try {
        std::size_t used = 0;
        long long v = std::stoll(s, &used);
        if (used != s.size()) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

inline std::optional<double> parse_real(const std::string& s) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

}  // namespace detail

/**
Parses and validates the key/value experiment format:

    # comment
    domain = nav1
    preset = desk
    algorithms = pg, cpg, adv-rcpg
    seeds = 1, 2, 3, 4, 5
    out = runs/nav1
    jobs = 1
    estimation.episodes = 100
    estimation.delta = 0.10
    train.episodes = 1000
    train.warmup = 100
    train.lambda_init = 1.0
    test.repeats = 20
    test.stream_seed = 7

Every key is optional except `domain`. Problems are collected with their
line numbers rather than reported one at a time; any error leaves the
config unset. A missing seed list falls back to the preset default with a
warning.
*/
inline ConfigParse validate_config(const std::string& text) {
    ConfigParse out;
    std::map<std::string, std::pair<int, std::string>> kv;  // key -> (line, value)

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        lineno += 1;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::string stripped = detail::trim(line);
        if (stripped.empty()) continue;
        auto eq = stripped.find('=');
        if (eq == std::string::npos) {
            out.errors.push_back({lineno, "expected 'key = value'"});
            continue;
        }
        std::string key = detail::trim(stripped.substr(0, eq));
        std::string value = detail::trim(stripped.substr(eq + 1));
        if (key.empty()) {
            out.errors.push_back({lineno, "missing key before '='"});
            continue;
        }
        if (kv.count(key)) {
            out.errors.push_back({lineno, "duplicate key '" + key + "'"});
            continue;
        }
        kv[key] = {lineno, value};
    }

    static const std::vector<std::string> known = {
        "domain",          "preset",        "algorithms",        "seeds",
        "out",             "jobs",          "estimation.episodes", "estimation.delta",
        "train.episodes",  "train.warmup",  "train.lambda_init", "test.repeats",
        "test.stream_seed"};
    for (const auto& [key, lv] : kv)
        if (std::find(known.begin(), known.end(), key) == known.end())
            out.errors.push_back({lv.first, "unknown key '" + key + "'"});

    auto take = [&](const char* key) -> std::optional<std::pair<int, std::string>> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        return it->second;
    };

    ExperimentConfig cfg;

    if (auto v = take("domain")) {
        if (auto d = parse_domain(v->second))
            cfg.domain = *d;
        else
            out.errors.push_back(
                {v->first, "domain must be one of inventory, nav1, nav2 (got '" + v->second + "')"});
    } else {
        out.errors.push_back({0, "missing required key 'domain'"});
    }

    if (auto v = take("preset")) {
        if (auto p = parse_preset(v->second))
            cfg.preset = *p;
        else
            out.errors.push_back({v->first, "preset must be desk or paper (got '" + v->second + "')"});
    }

    if (auto v = take("algorithms")) {
        cfg.algorithms.clear();
        for (const std::string& tag : detail::split_list(v->second)) {
            auto algo = parse_algo(tag);
            if (!algo) {
                out.errors.push_back({v->first, "unknown algorithm '" + tag + "'"});
                continue;
            }
            if (std::find(cfg.algorithms.begin(), cfg.algorithms.end(), *algo) !=
                cfg.algorithms.end()) {
                out.errors.push_back({v->first, "algorithm '" + tag + "' listed twice"});
                continue;
            }
            cfg.algorithms.push_back(*algo);
        }
        if (cfg.algorithms.empty() && out.errors.empty())
            out.errors.push_back({v->first, "algorithm list is empty"});
    }

    // preset-scaled defaults, overridable below
    bool paper = cfg.preset == Preset::paper;
    cfg.train_episodes = paper ? 5000 : 1000;
    cfg.test_repeats = paper ? 50 : 20;
    cfg.estimation_episodes = default_estimation_episodes(cfg.domain);
    cfg.lambda_init = default_lambda_init(cfg.domain);

    if (auto v = take("seeds")) {
        cfg.seeds.clear();
        for (const std::string& item : detail::split_list(v->second)) {
            auto n = detail::parse_int(item);
            if (!n || *n < 0)
                out.errors.push_back({v->first, "seeds must be non-negative integers (got '" +
                                                    item + "')"});
            else
                cfg.seeds.push_back(static_cast<std::uint64_t>(*n));
        }
        if (cfg.seeds.empty())
            out.errors.push_back({v->first, "seed list is empty"});
    } else {
        int n = paper ? 20 : 5;
        for (int i = 1; i <= n; ++i) cfg.seeds.push_back(static_cast<std::uint64_t>(i));
        out.warnings.push_back(
            {0, std::string("seeds not given; defaulted to 1..") + std::to_string(n)});
    }

    auto int_field = [&](const char* key, int lo, int& into) {
        if (auto v = take(key)) {
            auto n = detail::parse_int(v->second);
            if (!n)
                out.errors.push_back({v->first, std::string(key) + " must be an integer"});
            else if (*n < lo)
                out.errors.push_back({v->first, std::string(key) + " must be at least " +
                                                    std::to_string(lo)});
            else
                into = static_cast<int>(*n);
        }
    };
    int_field("estimation.episodes", 1, cfg.estimation_episodes);
    int_field("train.episodes", 1, cfg.train_episodes);
    int_field("train.warmup", 0, cfg.warmup_episodes);
    int_field("test.repeats", 1, cfg.test_repeats);
    int_field("jobs", 1, cfg.jobs);

    if (auto v = take("estimation.delta")) {
        auto d = detail::parse_real(v->second);
        if (!d || !(*d > 0.0 && *d < 1.0))
            out.errors.push_back({v->first, "estimation.delta must lie in (0, 1)"});
        else
            cfg.delta = *d;
    }
    if (auto v = take("train.lambda_init")) {
        auto d = detail::parse_real(v->second);
        if (!d || *d < 0.0)
            out.errors.push_back({v->first, "train.lambda_init must be non-negative"});
        else
            cfg.lambda_init = *d;
    }
    if (auto v = take("test.stream_seed")) {
        auto n = detail::parse_int(v->second);
        if (!n || *n < 0)
            out.errors.push_back({v->first, "test.stream_seed must be a non-negative integer"});
        else
            cfg.test_stream_seed = static_cast<std::uint64_t>(*n);
    }
    if (auto v = take("out")) {
        if (v->second.empty())
            out.errors.push_back({v->first, "out must not be empty"});
        else
            cfg.out_dir = v->second;
    }

    if (cfg.warmup_episodes > cfg.train_episodes)
        out.errors.push_back({0, "train.warmup must not exceed train.episodes"});
    else if (cfg.warmup_episodes == cfg.train_episodes)
        out.warnings.push_back(
            {0, "train.warmup equals train.episodes; the adversary never activates"});

    if (!out.errors.empty()) return out;
    out.config = std::move(cfg);
    return out;
}

inline ConfigParse load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        ConfigParse out;
        out.errors.push_back({0, "cannot read config file " + path.string()});
        return out;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return validate_config(ss.str());
}

/**
Canonical description of the result-relevant configuration. Output location
and parallelism degree are deliberately excluded: they cannot change any
result. The manifest stores this text and its hash; phase caches use the
hash to detect stale artifacts.
*/
inline std::string describe_config(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "domain = " << domain_name(cfg.domain) << "\n";
    os << "preset = " << preset_name(cfg.preset) << "\n";
    os << "algorithms = ";
    for (std::size_t i = 0; i < cfg.algorithms.size(); ++i)
        os << (i ? ", " : "") << algo_name(cfg.algorithms[i]);
    os << "\n";
    os << "seeds = ";
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) os << (i ? ", " : "") << cfg.seeds[i];
    os << "\n";
    os << "estimation.episodes = " << cfg.estimation_episodes << "\n";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", cfg.delta);
    os << "estimation.delta = " << buf << "\n";
    os << "train.episodes = " << cfg.train_episodes << "\n";
    os << "train.warmup = " << cfg.warmup_episodes << "\n";
    std::snprintf(buf, sizeof buf, "%.17g", cfg.lambda_init);
    os << "train.lambda_init = " << buf << "\n";
    os << "test.repeats = " << cfg.test_repeats << "\n";
    os << "test.stream_seed = " << cfg.test_stream_seed << "\n";
    return os.str();
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
    return fnv1a64(describe_config(cfg));
}

}  // namespace rcpg

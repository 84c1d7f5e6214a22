#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "rcpg/config.hpp"
#include "rcpg/envs.hpp"

using namespace rcpg;

namespace {

bool has_error_containing(const ConfigParse& p, const std::string& needle, int line = -1) {
    for (const auto& m : p.errors)
        if (m.text.find(needle) != std::string::npos && (line < 0 || m.line == line)) return true;
    return false;
}

bool has_warning_containing(const ConfigParse& p, const std::string& needle) {
    for (const auto& m : p.warnings)
        if (m.text.find(needle) != std::string::npos) return true;
    return false;
}

}  // namespace

TEST_CASE("minimal config resolves domain and preset defaults") {
    ConfigParse p = validate_config("domain = nav1\n");
    REQUIRE(p.ok());
    const ExperimentConfig& c = *p.config;
    CHECK(c.domain == Domain::nav1);
    CHECK(c.preset == Preset::desk);
    CHECK(c.estimation_episodes == 100);
    CHECK(c.delta == 0.10);
    CHECK(c.train_episodes == 1000);
    CHECK(c.warmup_episodes == 100);
    CHECK(c.lambda_init == 1.0);
    CHECK(c.test_repeats == 20);
    CHECK(c.algorithms.size() == 6);
    CHECK(c.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
    CHECK(has_warning_containing(p, "seeds not given"));
}

TEST_CASE("paper preset scales phases and keeps estimation size") {
    ConfigParse p = validate_config("domain = inventory\npreset = paper\n");
    REQUIRE(p.ok());
    const ExperimentConfig& c = *p.config;
    CHECK(c.estimation_episodes == 100);
    CHECK(c.train_episodes == 5000);
    CHECK(c.test_repeats == 50);
    CHECK(c.lambda_init == 50.0);
    CHECK(c.seeds.size() == 20);
    CHECK(c.seeds.front() == 1);
    CHECK(c.seeds.back() == 20);
}

TEST_CASE("nav2 defaults to the large estimation run") {
    ConfigParse p = validate_config("domain = nav2\nseeds = 7\n");
    REQUIRE(p.ok());
    CHECK(p.config->estimation_episodes == 10000);
    CHECK(p.config->lambda_init == 1.0);
    CHECK(p.warnings.empty());
}

TEST_CASE("explicit keys override preset and domain defaults") {
    ConfigParse p = validate_config(
        "domain = inventory\n"
        "preset = paper\n"
        "algorithms = cpg, adv-rcpg\n"
        "seeds = 3, 1, 4\n"
        "estimation.episodes = 250\n"
        "estimation.delta = 0.05\n"
        "train.episodes = 123\n"
        "train.warmup = 17\n"
        "train.lambda_init = 2.5\n"
        "test.repeats = 4\n"
        "test.stream_seed = 99\n"
        "out = runs/x\n"
        "jobs = 3\n");
    REQUIRE(p.ok());
    const ExperimentConfig& c = *p.config;
    CHECK(c.algorithms == std::vector<Algo>{Algo::cpg, Algo::adv_rcpg});
    CHECK(c.seeds == std::vector<std::uint64_t>{3, 1, 4});
    CHECK(c.estimation_episodes == 250);
    CHECK(c.delta == 0.05);
    CHECK(c.train_episodes == 123);
    CHECK(c.warmup_episodes == 17);
    CHECK(c.lambda_init == 2.5);
    CHECK(c.test_repeats == 4);
    CHECK(c.test_stream_seed == 99);
    CHECK(c.out_dir == "runs/x");
    CHECK(c.jobs == 3);
    CHECK(p.warnings.empty());

    TrainerConfig t = c.trainer_for(Algo::adv_rcpg, 4);
    CHECK(t.algo == Algo::adv_rcpg);
    CHECK(t.episodes == 123);
    CHECK(t.warmup_episodes == 17);
    CHECK(t.lambda_init == 2.5);
    CHECK(t.lambda_adv_init == 2.5);
    CHECK(t.seed == 4);
    t.validate();
}

TEST_CASE("comments and blank lines are ignored") {
    ConfigParse p = validate_config(
        "# run description\n"
        "\n"
        "domain = nav1   # trailing comment\n"
        "seeds = 1, 2\n");
    REQUIRE(p.ok());
    CHECK(p.config->domain == Domain::nav1);
    CHECK(p.config->seeds.size() == 2);
}

TEST_CASE("out-of-range delta is rejected by name") {
    ConfigParse p = validate_config("domain = nav1\nestimation.delta = 1.5\n");
    REQUIRE_FALSE(p.ok());
    CHECK(has_error_containing(p, "estimation.delta must lie in (0, 1)", 2));
}

TEST_CASE("unknown algorithm tag is reported before any compute") {
    ConfigParse p = validate_config("domain = nav1\nalgorithms = cpg, rcpgvalue\n");
    REQUIRE_FALSE(p.ok());
    CHECK(has_error_containing(p, "unknown algorithm 'rcpgvalue'", 2));
}

TEST_CASE("several problems are reported together with their lines") {
    ConfigParse p = validate_config(
        "preset = huge\n"
        "train.episodes = -3\n"
        "bogus.key = 1\n"
        "seeds = 1, x\n");
    REQUIRE_FALSE(p.ok());
    CHECK(p.errors.size() >= 5);
    CHECK(has_error_containing(p, "missing required key 'domain'", 0));
    CHECK(has_error_containing(p, "preset must be desk or paper", 1));
    CHECK(has_error_containing(p, "train.episodes must be at least 1", 2));
    CHECK(has_error_containing(p, "unknown key 'bogus.key'", 3));
    CHECK(has_error_containing(p, "seeds must be non-negative integers", 4));
}

TEST_CASE("duplicate and malformed lines are flagged") {
    ConfigParse p = validate_config(
        "domain = nav1\n"
        "domain = nav2\n"
        "just words\n"
        "= 4\n");
    REQUIRE_FALSE(p.ok());
    CHECK(has_error_containing(p, "duplicate key 'domain'", 2));
    CHECK(has_error_containing(p, "expected 'key = value'", 3));
    CHECK(has_error_containing(p, "missing key before '='", 4));
}

TEST_CASE("warmup beyond the training horizon is an error, equality a warning") {
    ConfigParse longer = validate_config("domain = nav1\ntrain.episodes = 50\n");
    REQUIRE_FALSE(longer.ok());
    CHECK(has_error_containing(longer, "train.warmup must not exceed"));

    ConfigParse equal =
        validate_config("domain = nav1\ntrain.episodes = 100\nseeds = 1\n");
    REQUIRE(equal.ok());
    CHECK(has_warning_containing(equal, "never activates"));
}

TEST_CASE("config hash ignores output location and parallelism") {
    ConfigParse a = validate_config("domain = nav1\nseeds = 1, 2\nout = here\njobs = 1\n");
    ConfigParse b = validate_config("domain = nav1\nseeds = 1, 2\nout = there\njobs = 8\n");
    ConfigParse c = validate_config("domain = nav1\nseeds = 1, 3\nout = here\njobs = 1\n");
    REQUIRE(a.ok());
    REQUIRE(b.ok());
    REQUIRE(c.ok());
    CHECK(config_hash(*a.config) == config_hash(*b.config));
    CHECK(config_hash(*a.config) != config_hash(*c.config));
    CHECK(describe_config(*a.config) == describe_config(*b.config));
    CHECK(describe_config(*a.config).find("out") == std::string::npos);
    CHECK(describe_config(*a.config).find("jobs") == std::string::npos);
}

TEST_CASE("config files load from disk") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "rcpg_cfg_test";
    fs::create_directories(dir);
    {
        std::ofstream f(dir / "exp.cfg");
        f << "domain = nav1\nseeds = 1\n";
    }
    ConfigParse p = load_config_file(dir / "exp.cfg");
    REQUIRE(p.ok());
    CHECK(p.config->domain == Domain::nav1);

    ConfigParse missing = load_config_file(dir / "nope.cfg");
    REQUIRE_FALSE(missing.ok());
    CHECK(has_error_containing(missing, "cannot read config file"));
    fs::remove_all(dir);
}

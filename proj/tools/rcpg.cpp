#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "rcpg/config.hpp"
#include "rcpg/pipeline.hpp"

namespace {

// Flag overrides are merged at text level: any config line with the same key
// is dropped and the flag's value appended, then the merged text goes through
// the one validation path.
std::string with_override(const std::string& text, const std::string& key,
                          const std::string& value) {
    std::istringstream in(text);
    std::ostringstream out;
    std::string line;
    while (std::getline(in, line)) {
        std::string stripped = line;
        if (auto hash = stripped.find('#'); hash != std::string::npos) stripped.resize(hash);
        auto eq = stripped.find('=');
        if (eq != std::string::npos &&
            rcpg::detail::trim(stripped.substr(0, eq)) == key)
            continue;
        out << line << "\n";
    }
    out << key << " = " << value << "\n";
    return out.str();
}

std::string read_file(const std::string& path, bool& ok) {
    std::ifstream is(path);
    if (!is) {
        ok = false;
        return "";
    }
    std::stringstream ss;
    ss << is.rdbuf();
    ok = true;
    return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust constrained policy-gradient experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir, seeds, preset, algorithms;
    int jobs = 0;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* c = cmd->add_option("--config", config_path, "experiment config file");
        if (needs_config) c->required();
        cmd->add_option("--out", out_dir, "output directory (overrides the config)");
        cmd->add_option("--seeds", seeds, "training seeds, comma separated (overrides)");
        cmd->add_option("--preset", preset, "scale preset, desk or paper (overrides)");
        cmd->add_option("--algorithms", algorithms, "algorithm tags, comma separated (overrides)");
        cmd->add_option("--jobs", jobs, "worker threads (overrides)");
    };

    auto* cmd_estimate =
        app.add_subcommand("estimate", "collect data and estimate the uncertainty set");
    auto* cmd_train = app.add_subcommand("train", "estimate, then train every algorithm and seed");
    auto* cmd_test = app.add_subcommand("test", "run the perturbation suites on the checkpoints");
    auto* cmd_run = app.add_subcommand("run", "all three phases");
    auto* cmd_report =
        app.add_subcommand("report", "rebuild summary and panels from stored results.csv");
    for (CLI::App* cmd : {cmd_estimate, cmd_train, cmd_test, cmd_run}) add_common(cmd, true);
    add_common(cmd_report, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : rcpg::kExitConfig;
    }

    std::string text;
    if (!config_path.empty()) {
        bool ok = false;
        text = read_file(config_path, ok);
        if (!ok) {
            std::cerr << "config error: cannot read " << config_path << "\n";
            return rcpg::kExitConfig;
        }
    } else if (!cmd_report->parsed() || out_dir.empty()) {
        std::cerr << "config error: report needs --config or --out\n";
        return rcpg::kExitConfig;
    }

    if (!out_dir.empty()) text = with_override(text, "out", out_dir);
    if (!seeds.empty()) text = with_override(text, "seeds", seeds);
    if (!preset.empty()) text = with_override(text, "preset", preset);
    if (!algorithms.empty()) text = with_override(text, "algorithms", algorithms);
    if (jobs > 0) text = with_override(text, "jobs", std::to_string(jobs));

    try {
        if (cmd_report->parsed()) {
            // report does not need a full config, only the output directory
            std::string out = out_dir;
            if (out.empty()) {
                rcpg::ConfigParse parsed = rcpg::validate_config(text);
                if (!parsed.ok()) {
                    for (const auto& e : parsed.errors)
                        std::cerr << "config error"
                                  << (e.line > 0 ? " (line " + std::to_string(e.line) + ")" : "")
                                  << ": " << e.text << "\n";
                    return rcpg::kExitConfig;
                }
                out = parsed.config->out_dir;
            }
            rcpg::RunLock lock(out);
            rcpg::SuiteResult suite = rcpg::rebuild_reports(std::filesystem::path(out) / "report");
            std::cout << "rebuilt summary and panels for " << suite.rows.size() << " result rows\n";
            return rcpg::kExitOk;
        }

        rcpg::ConfigParse parsed = rcpg::validate_config(text);
        for (const auto& w : parsed.warnings) std::cerr << "warning: " << w.text << "\n";
        if (!parsed.ok()) {
            for (const auto& e : parsed.errors)
                std::cerr << "config error"
                          << (e.line > 0 ? " (line " + std::to_string(e.line) + ")" : "") << ": "
                          << e.text << "\n";
            return rcpg::kExitConfig;
        }

        rcpg::ExperimentRun run(*parsed.config, &std::cout);
        if (cmd_estimate->parsed()) {
            run.estimate();
        } else if (cmd_train->parsed()) {
            run.train();
        } else if (cmd_test->parsed()) {
            run.test();
        } else {
            run.run_all();
        }
        return rcpg::kExitOk;
    } catch (const rcpg::PipelineError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code;
    } catch (const rcpg::CacheMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return rcpg::kExitCache;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return rcpg::kExitRuntime;
    }
}

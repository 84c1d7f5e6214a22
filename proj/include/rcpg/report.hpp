#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcpg/eval.hpp"

namespace rcpg {

namespace detail {

inline std::string fmt_g10(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

inline std::string fmt_g4(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4g", x);
    return buf;
}

inline const char* algo_color(const std::string& name) {
    if (name == "pg") return "#7f7f7f";
    if (name == "cpg") return "#1f77b4";
    if (name == "rcpg-value") return "#2ca02c";
    if (name == "rcpg-constraint") return "#ff7f0e";
    if (name == "rcpg-lagrangian") return "#9467bd";
    if (name == "adv-rcpg") return "#d62728";
    return "#000000";
}

}  // namespace detail

constexpr const char* kResultsHeader =
    "algorithm,domain,test_id,param_name,param_value,seed,repeat,value,constraint_cost,"
    "overshoot";

inline void write_results_csv(const SuiteResult& suite, std::ostream& os) {
    os << kResultsHeader << "\n";
    for (const auto& r : suite.rows) {
        os << r.algorithm << ',' << domain_name(suite.domain) << ',' << r.test_id << ','
           << r.param_name << ',' << r.param_value << ',' << r.seed << ',' << r.repeat << ','
           << detail::fmt_g10(r.value) << ',' << detail::fmt_g10(r.constraint_cost) << ','
           << detail::fmt_g10(r.overshoot) << "\n";
    }
}

/**
Per-setting means with standard errors over training seeds, then one pooled
penalised-return row per algorithm (test_id "pooled"). Cells that do not
apply to a row kind are left empty.
*/
inline void write_summary_csv(const SuiteResult& suite, std::ostream& os) {
    os << "# penalised return pooled uniformly over all settings of the domain's tests; "
          "errors are standard errors over training-seed means; d_eval="
       << detail::fmt_g10(suite.d_eval) << "\n";
    os << "algorithm,domain,test_id,param_name,param_value,n_seeds,mean_value,stderr_value,"
          "mean_constraint_cost,stderr_constraint_cost,mean_overshoot,stderr_overshoot,"
          "r_pen_mean,r_pen_stderr\n";
    for (const auto& s : suite.summary) {
        os << s.algorithm << ',' << domain_name(suite.domain) << ',' << s.test_id << ','
           << s.param_name << ',' << s.param_value << ',' << s.n_seeds << ','
           << detail::fmt_g10(s.mean_value) << ',' << detail::fmt_g10(s.stderr_value) << ','
           << detail::fmt_g10(s.mean_cost) << ',' << detail::fmt_g10(s.stderr_cost) << ','
           << detail::fmt_g10(s.mean_overshoot) << ',' << detail::fmt_g10(s.stderr_overshoot)
           << ",,\n";
    }
    for (const auto& p : suite.penalised) {
        os << p.algorithm << ',' << domain_name(suite.domain) << ",pooled,all,all," << p.n_seeds
           << ",,,,,,," << detail::fmt_g10(p.mean) << ',' << detail::fmt_g10(p.stderr_) << "\n";
    }
}

// ---------------------------------------------------------------------------
// Figure panels: one CSV + one SVG per (test, metric)
// ---------------------------------------------------------------------------

struct PanelSeries {
    std::string algorithm;
    std::vector<double> mean;
    std::vector<double> err;
};

struct Panel {
    std::string test_id;
    std::string metric;  // "value" or "overshoot"
    std::vector<std::string> labels;
    std::vector<PanelSeries> series;
};

inline std::vector<Panel> collect_panels(const SuiteResult& suite) {
    std::vector<std::string> test_ids;
    for (const auto& s : suite.summary)
        if (std::find(test_ids.begin(), test_ids.end(), s.test_id) == test_ids.end())
            test_ids.push_back(s.test_id);
    std::sort(test_ids.begin(), test_ids.end());

    std::vector<Panel> panels;
    for (const auto& test : test_ids) {
        std::vector<std::string> algos;
        std::vector<std::string> labels;
        for (const auto& s : suite.summary) {
            if (s.test_id != test) continue;
            if (std::find(algos.begin(), algos.end(), s.algorithm) == algos.end())
                algos.push_back(s.algorithm);
            if (std::find(labels.begin(), labels.end(), s.param_value) == labels.end())
                labels.push_back(s.param_value);
        }
        std::sort(algos.begin(), algos.end());

        for (const char* metric : {"value", "overshoot"}) {
            Panel p;
            p.test_id = test;
            p.metric = metric;
            p.labels = labels;
            for (const auto& algo : algos) {
                PanelSeries series;
                series.algorithm = algo;
                for (const auto& s : suite.summary) {
                    if (s.test_id != test || s.algorithm != algo) continue;
                    bool value = std::string(metric) == "value";
                    series.mean.push_back(value ? s.mean_value : s.mean_overshoot);
                    series.err.push_back(value ? s.stderr_value : s.stderr_overshoot);
                }
                p.series.push_back(std::move(series));
            }
            panels.push_back(std::move(p));
        }
    }
    return panels;
}

inline void write_panel_csv(const Panel& panel, std::ostream& os) {
    os << "param_value";
    for (const auto& s : panel.series) os << ',' << s.algorithm << "_mean," << s.algorithm << "_stderr";
    os << "\n";
    for (std::size_t i = 0; i < panel.labels.size(); ++i) {
        os << panel.labels[i];
        for (const auto& s : panel.series)
            os << ',' << detail::fmt_g10(s.mean[i]) << ',' << detail::fmt_g10(s.err[i]);
        os << "\n";
    }
}

/// A static line chart with error bars; x positions are categorical.
inline void write_panel_svg(const Panel& panel, const std::string& title, std::ostream& os) {
    const double width = 660, height = 420;
    const double x0 = 62, x1 = 470, y0 = 46, y1 = 340;
    const int n = static_cast<int>(panel.labels.size());

    double lo = 0.0, hi = 0.0;
    bool first = true;
    for (const auto& s : panel.series) {
        for (std::size_t i = 0; i < s.mean.size(); ++i) {
            double a = s.mean[i] - s.err[i], b = s.mean[i] + s.err[i];
            if (first) lo = a, hi = b, first = false;
            lo = std::min(lo, a);
            hi = std::max(hi, b);
        }
    }
    if (first) lo = 0.0, hi = 1.0;
    if (hi - lo < 1e-12) {
        lo -= 1.0;
        hi += 1.0;
    }
    double pad = 0.06 * (hi - lo);
    lo -= pad;
    hi += pad;

    auto xpos = [&](int i) { return x0 + (x1 - x0) * ((i + 0.5) / std::max(1, n)); };
    auto ypos = [&](double v) { return y1 - (y1 - y0) * ((v - lo) / (hi - lo)); };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
    os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"24\" text-anchor=\"middle\" "
          "font-family=\"sans-serif\" font-size=\"15\">"
       << title << "</text>\n";

    for (int t = 0; t <= 4; ++t) {
        double v = lo + (hi - lo) * t / 4.0;
        double y = ypos(v);
        os << "<line x1=\"" << x0 << "\" y1=\"" << y << "\" x2=\"" << x1 << "\" y2=\"" << y
           << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << x0 - 6 << "\" y=\"" << y + 4
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
           << detail::fmt_g4(v) << "</text>\n";
    }
    os << "<line x1=\"" << x0 << "\" y1=\"" << y1 << "\" x2=\"" << x1 << "\" y2=\"" << y1
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
       << "\" stroke=\"black\"/>\n";

    for (int i = 0; i < n; ++i) {
        double x = xpos(i);
        os << "<line x1=\"" << x << "\" y1=\"" << y1 << "\" x2=\"" << x << "\" y2=\"" << y1 + 4
           << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << x << "\" y=\"" << y1 + 16 << "\" font-family=\"sans-serif\" "
              "font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(30 "
           << x << ' ' << y1 + 16 << ")\">" << panel.labels[i] << "</text>\n";
    }

    for (const auto& s : panel.series) {
        const char* color = detail::algo_color(s.algorithm);
        for (std::size_t i = 0; i < s.mean.size(); ++i) {
            double x = xpos(static_cast<int>(i));
            double ya = ypos(s.mean[i] - s.err[i]), yb = ypos(s.mean[i] + s.err[i]);
            os << "<line x1=\"" << x << "\" y1=\"" << ya << "\" x2=\"" << x << "\" y2=\"" << yb
               << "\" stroke=\"" << color << "\" stroke-width=\"1\"/>\n";
            os << "<line x1=\"" << x - 3 << "\" y1=\"" << ya << "\" x2=\"" << x + 3 << "\" y2=\""
               << ya << "\" stroke=\"" << color << "\"/>\n";
            os << "<line x1=\"" << x - 3 << "\" y1=\"" << yb << "\" x2=\"" << x + 3 << "\" y2=\""
               << yb << "\" stroke=\"" << color << "\"/>\n";
        }
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.8\" points=\"";
        for (std::size_t i = 0; i < s.mean.size(); ++i)
            os << xpos(static_cast<int>(i)) << ',' << ypos(s.mean[i]) << ' ';
        os << "\"/>\n";
        for (std::size_t i = 0; i < s.mean.size(); ++i)
            os << "<circle cx=\"" << xpos(static_cast<int>(i)) << "\" cy=\"" << ypos(s.mean[i])
               << "\" r=\"2.6\" fill=\"" << color << "\"/>\n";
    }

    double ly = y0 + 8;
    for (const auto& s : panel.series) {
        const char* color = detail::algo_color(s.algorithm);
        os << "<line x1=\"" << x1 + 18 << "\" y1=\"" << ly << "\" x2=\"" << x1 + 42 << "\" y2=\""
           << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << x1 + 48 << "\" y=\"" << ly + 4
           << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.algorithm << "</text>\n";
        ly += 20;
    }
    os << "</svg>\n";
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream os(p);
    if (!os) throw std::runtime_error("cannot write " + p.string());
    return os;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.push_back("");
    return fields;
}

}  // namespace detail

/**
Parses a results.csv back into raw rows and re-aggregates them. The numbers
round-trip at the file's printed precision, so summaries derived from a
parsed suite match summaries derived from the file, not necessarily the
last digits of the original in-memory doubles. Setting indices are rebuilt
from the order in which each test's parameter values first appear.
*/
inline SuiteResult read_results_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kResultsHeader)
        throw CacheMismatch("results.csv: unexpected header '" + line + "'");

    std::optional<Domain> domain;
    std::map<std::string, std::vector<std::string>> setting_order;  // test_id -> labels seen
    std::vector<ResultRow> rows;
    int lineno = 1;
    while (std::getline(is, line)) {
        lineno += 1;
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 10)
            throw std::runtime_error("results.csv line " + std::to_string(lineno) +
                                     ": expected 10 fields");
        auto d = parse_domain(fields[1]);
        if (!d)
            throw std::runtime_error("results.csv line " + std::to_string(lineno) +
                                     ": unknown domain '" + fields[1] + "'");
        if (domain && *domain != *d)
            throw std::runtime_error("results.csv line " + std::to_string(lineno) +
                                     ": mixes domains");
        domain = *d;

        ResultRow row;
        row.algorithm = fields[0];
        row.test_id = fields[2];
        row.param_name = fields[3];
        row.param_value = fields[4];
        try {
            row.seed = std::stoull(fields[5]);
            row.repeat = std::stoi(fields[6]);
            row.value = std::stod(fields[7]);
            row.constraint_cost = std::stod(fields[8]);
            row.overshoot = std::stod(fields[9]);
        } catch (const std::exception&) {
            throw std::runtime_error("results.csv line " + std::to_string(lineno) +
                                     ": malformed numeric field");
        }
        auto& labels = setting_order[row.test_id];
        auto it = std::find(labels.begin(), labels.end(), row.param_value);
        if (it == labels.end()) {
            labels.push_back(row.param_value);
            it = std::prev(labels.end());
        }
        row.setting = static_cast<int>(it - labels.begin());
        rows.push_back(std::move(row));
    }
    if (!domain) throw std::runtime_error("results.csv: no data rows");

    int repeats = 0;
    for (const auto& row : rows) repeats = std::max(repeats, row.repeat + 1);
    return aggregate_rows(*domain, std::move(rows), repeats);
}

inline SuiteResult read_results_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    return read_results_csv(is);
}

/// Writes summary.csv and one CSV + SVG pair per figure panel.
inline void write_summary_and_panels(const SuiteResult& suite,
                                     const std::filesystem::path& dir) {
    {
        auto os = detail::open_out(dir / "summary.csv");
        write_summary_csv(suite, os);
    }
    for (const auto& panel : collect_panels(suite)) {
        std::string stem = std::string("panel_") + domain_name(suite.domain) + "_" +
                           panel.test_id + "_" + panel.metric;
        {
            auto os = detail::open_out(dir / (stem + ".csv"));
            write_panel_csv(panel, os);
        }
        {
            auto os = detail::open_out(dir / (stem + ".svg"));
            std::string title = std::string(domain_name(suite.domain)) + " test " +
                                panel.test_id + ": mean " + panel.metric;
            write_panel_svg(panel, title, os);
        }
    }
}

/**
Writes results.csv, summary.csv, and one CSV + SVG pair per figure panel
into the directory (created if needed). Summaries and panels are derived
from the written results.csv rather than the in-memory suite, so rebuilding
them later from the CSV alone reproduces identical bytes.
*/
inline void write_report_files(const SuiteResult& suite, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        auto os = detail::open_out(dir / "results.csv");
        write_results_csv(suite, os);
    }
    write_summary_and_panels(read_results_csv(dir / "results.csv"), dir);
}

/// Rebuilds summary.csv and the panels from an existing results.csv.
inline SuiteResult rebuild_reports(const std::filesystem::path& dir) {
    SuiteResult suite = read_results_csv(dir / "results.csv");
    write_summary_and_panels(suite, dir);
    return suite;
}

}  // namespace rcpg

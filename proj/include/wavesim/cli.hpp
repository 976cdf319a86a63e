#pragma once

// simulate: command-line driver over the harness.
//
// exit 0: success; 1: bad arguments, unreadable or invalid netlist; 2: solver failure.

#include "wavesim/harness.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace wavesim {

struct CliOptions {
    std::string netlist;
    std::string method = "both";
    double tol = 1e-4;
    std::optional<double> reltol;
    int order = 4;
    int max_level = 8;
    bool no_splitting = false;
    std::string out_dir = ".";
    std::vector<double> sweep;
};

namespace cli_detail {

inline nlohmann::json settings_json(const CliOptions& o, double reltol) {
    return {{"tol", o.tol},         {"reltol", reltol},         {"order", o.order},
            {"max_level", o.max_level}, {"splitting", !o.no_splitting}, {"method", o.method}};
}

/// Output grid for a wavelet-only run: the .tran step if given, else 1000 steps.
inline std::vector<double> output_times(double tstop, std::optional<double> tstep) {
    const auto n = static_cast<std::size_t>(
        std::clamp(tstep ? std::ceil(tstop / *tstep - 1e-9) : 1000.0, 1.0, 1e7));
    std::vector<double> t(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        t[i] = tstop * static_cast<double>(i) / static_cast<double>(n);
    }
    t.back() = tstop;
    return t;
}

inline void describe(std::ostream& out, const RunReport& r) {
    out << method_name(r.method) << ": " << (r.success ? "ok" : "FAILED") << ", " << r.grid_points
        << (r.method == Method::Wavelet ? " knots, " : " steps, ") << r.intervals << " interval(s), "
        << r.newton_total << " Newton iterations, " << r.cpu_seconds << " s";
    if (r.diff) {
        out << ", max |diff| " << r.diff->overall;
    }
    out << '\n';
}

}  // namespace cli_detail

[[nodiscard]] inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CliOptions o;
    CLI::App app{"Transient simulation with an adaptive spline-wavelet Galerkin solver and a time-stepping reference",
                 "simulate"};
    app.add_option("--netlist", o.netlist, "SPICE-like netlist file")->required();
    app.add_option("--method", o.method, "wavelet, transient or both")
        ->check(CLI::IsMember({"wavelet", "transient", "both"}))
        ->capture_default_str();
    app.add_option("--tol", o.tol, "wavelet target accuracy")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--reltol", o.reltol, "transient relative tolerance (default: --tol)")->check(CLI::PositiveNumber);
    app.add_option("--order", o.order, "spline order")->check(CLI::Range(2, 4))->capture_default_str();
    app.add_option("--max-level", o.max_level, "maximal refinement level")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    app.add_flag("--no-splitting", o.no_splitting, "solve the whole span as one interval");
    app.add_option("--out-dir", o.out_dir, "directory for csv and json output")->capture_default_str();
    app.add_option("--sweep", o.sweep, "decreasing tolerance ladder, comma separated")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "simulate: " << e.what() << '\n';
        return 1;
    }

    // parse and validate
    std::ifstream in(o.netlist);
    if (!in) {
        err << "simulate: cannot read netlist '" << o.netlist << "'\n";
        return 1;
    }
    std::stringstream text;
    text << in.rdbuf();
    std::optional<DaeSystem> dae;
    double tstop = 0.0;
    std::optional<double> tstep;
    try {
        Circuit c = parse(text.str());
        if (c.analyses.empty()) {
            err << "simulate: " << o.netlist << ": no .tran directive\n";
            return 1;
        }
        tstop = c.analyses.front().tstop;
        tstep = c.analyses.front().tstep;
        dae.emplace(build_dae(std::move(c)));
        if (!o.sweep.empty()) {
            check_ladder(o.sweep);
        }
    } catch (const Error& e) {
        err << "simulate: " << o.netlist << ": " << e.what() << '\n';
        return 1;
    }

    const std::string deck = std::filesystem::path(o.netlist).stem().string();
    const std::filesystem::path dir(o.out_dir);
    const double reltol = o.reltol.value_or(o.tol);
    WaveletConfig wc;
    wc.tol = o.tol;
    wc.order = o.order;
    wc.max_level = o.max_level;
    wc.splitting = !o.no_splitting;
    TranConfig tc;
    tc.reltol = reltol;
    const bool want_w = o.method != "transient";
    const bool want_t = o.method != "wavelet";

    nlohmann::json report = {{"schema_version", kReportSchemaVersion},
                             {"deck", deck},
                             {"netlist", o.netlist},
                             {"tstop", tstop},
                             {"settings", cli_detail::settings_json(o, reltol)}};
    try {
        std::filesystem::create_directories(dir);
        const Eigen::VectorXd x0 = dc_operating_point(*dae, 0.0).x0;

        if (!o.sweep.empty()) {
            SweepOptions so;
            so.ladder = o.sweep;
            so.wavelet = want_w;
            so.transient = want_t;
            so.wavelet_base = wc;
            so.transient_base = tc;
            so.threads = sim_threads();
            const SweepResult sr = sweep(*dae, x0, tstop, so);
            nlohmann::json rows = nlohmann::json::array();
            for (const auto& r : sr.rows) {
                rows.push_back(to_json(r));
                cli_detail::describe(out, r);
            }
            report["sweep"] = {{"ladder", o.sweep},
                               {"reference_reltol", sr.reference_reltol},
                               {"reference_points", sr.reference_points},
                               {"rows", rows}};
            write_file_atomic(dir / (deck + ".sweep.csv"), sweep_csv(sr));
            write_file_atomic(dir / (deck + ".report.json"), report.dump(2) + '\n');
            return 0;
        }

        nlohmann::json runs = nlohmann::json::array();
        std::optional<TransientRun> tr;
        if (want_t) {
            tr = run_transient(*dae, x0, tstop, tc);
            write_file_atomic(dir / (deck + ".tran.csv"), waveform_csv(tr->waveform));
        }
        if (want_w) {
            WaveletRun wr = run_wavelet(*dae, x0, tstop, wc);
            const auto times = tr ? tr->waveform.times : cli_detail::output_times(tstop, tstep);
            const Waveform w = sample_solution(wr.solution, times);
            if (tr) {
                wr.report.diff = compare(w, tr->waveform);
                report["reference"] = "transient";
            }
            write_file_atomic(dir / (deck + ".wavelet.csv"), waveform_csv(w));
            runs.push_back(to_json(wr.report));
            cli_detail::describe(out, wr.report);
        }
        if (tr) {
            runs.push_back(to_json(tr->report));
            cli_detail::describe(out, tr->report);
        }
        report["runs"] = runs;
        write_file_atomic(dir / (deck + ".report.json"), report.dump(2) + '\n');
        return 0;
    } catch (const SolverError& e) {
        err << "simulate: " << deck << ": " << e.what() << " (t = " << e.time() << " s)\n";
        return 2;
    } catch (const Error& e) {
        err << "simulate: " << deck << ": " << e.what() << '\n';
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "simulate: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace wavesim

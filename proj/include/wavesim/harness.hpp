#pragma once

// Evaluation harness: runs the two solvers, measures them against a reference
// on transient grid points, and writes waveforms and reports.

#include "wavesim/error.hpp"
#include "wavesim/mna.hpp"
#include "wavesim/netlist.hpp"
#include "wavesim/transient.hpp"
#include "wavesim/wavelet_solver.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace wavesim {

inline constexpr int kReportSchemaVersion = 1;

struct DiffResult {
    std::vector<double> per_unknown;
    double overall = 0.0;
};

/// Max |a - ref| per unknown over the shared time grid.
[[nodiscard]] inline DiffResult compare(const Waveform& a, const Waveform& ref) {
    if (a.times != ref.times) {
        throw Error(Errc::GridMismatch, "waveforms are sampled on different time grids");
    }
    if (a.values.rows() != ref.values.rows() || a.values.cols() != ref.values.cols() ||
        (!a.labels.empty() && !ref.labels.empty() && a.labels != ref.labels)) {
        throw Error(Errc::GridMismatch, "waveforms have different unknowns");
    }
    DiffResult d;
    for (Eigen::Index r = 0; r < a.values.rows(); ++r) {
        const double m = a.values.cols() == 0 ? 0.0 : (a.values.row(r) - ref.values.row(r)).cwiseAbs().maxCoeff();
        d.per_unknown.push_back(m);
        d.overall = std::max(d.overall, m);
    }
    return d;
}

enum class Method { Wavelet, Transient };

[[nodiscard]] inline std::string method_name(Method m) { return m == Method::Wavelet ? "wavelet" : "transient"; }

struct RunReport {
    Method method = Method::Wavelet;
    bool success = true;
    std::string message;
    double cpu_seconds = 0.0;
    std::size_t grid_points = 0;
    int newton_total = 0;
    std::size_t intervals = 0;
    double tol_used = 0.0;
    std::vector<std::string> labels;
    std::optional<DiffResult> diff;  // absent when this run is itself the reference
    nlohmann::json extra = nlohmann::json::object();  // fields read from newer files, kept verbatim
};

[[nodiscard]] inline nlohmann::json to_json(const RunReport& r) {
    nlohmann::json j = r.extra;
    j["method"] = method_name(r.method);
    j["status"] = r.success ? "success" : "failed";
    j["message"] = r.message;
    j["cpu_seconds"] = r.cpu_seconds;
    j["grid_points"] = r.grid_points;
    j["newton_total"] = r.newton_total;
    j["intervals"] = r.intervals;
    j["tol_used"] = r.tol_used;
    if (r.diff) {
        nlohmann::json per = nlohmann::json::object();
        for (std::size_t i = 0; i < r.diff->per_unknown.size(); ++i) {
            per[i < r.labels.size() ? r.labels[i] : std::to_string(i)] = r.diff->per_unknown[i];
        }
        j["max_abs_diff"] = {{"overall", r.diff->overall}, {"per_unknown", per}};
    } else {
        j["max_abs_diff"] = nullptr;
    }
    return j;
}

[[nodiscard]] inline RunReport report_from_json(const nlohmann::json& j) {
    static const char* known[] = {"method",       "status",    "message",  "cpu_seconds", "grid_points",
                                  "newton_total", "intervals", "tol_used", "max_abs_diff"};
    try {
        RunReport r;
        const std::string m = j.at("method").get<std::string>();
        if (m != "wavelet" && m != "transient") {
            throw Error(Errc::InvalidParam, "unknown method '" + m + "' in report");
        }
        r.method = m == "wavelet" ? Method::Wavelet : Method::Transient;
        r.success = j.at("status").get<std::string>() == "success";
        r.message = j.value("message", "");
        r.cpu_seconds = j.at("cpu_seconds").get<double>();
        r.grid_points = j.at("grid_points").get<std::size_t>();
        r.newton_total = j.at("newton_total").get<int>();
        r.intervals = j.at("intervals").get<std::size_t>();
        r.tol_used = j.at("tol_used").get<double>();
        const auto& d = j.at("max_abs_diff");
        if (!d.is_null()) {
            DiffResult dr;
            dr.overall = d.at("overall").get<double>();
            for (const auto& [name, v] : d.at("per_unknown").items()) {
                r.labels.push_back(name);
                dr.per_unknown.push_back(v.get<double>());
            }
            r.diff = dr;
        }
        for (const auto& [key, v] : j.items()) {
            if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return key == k; }) ==
                std::end(known)) {
                r.extra[key] = v;
            }
        }
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::InvalidParam, std::string("malformed run report: ") + e.what());
    }
}

namespace harness_detail {

inline std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double seconds_since(std::chrono::steady_clock::time_point t) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
    return std::max(s, 1e-9);
}

}  // namespace harness_detail

/// Writes via a temporary sibling and a rename so readers never see half a file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::path tmp = path;
    tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(Errc::InvalidParam, "cannot write " + tmp.string());
        }
        out << text;
        if (!out.flush()) {
            throw Error(Errc::InvalidParam, "write failed for " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

[[nodiscard]] inline std::string waveform_csv(const Waveform& w) {
    std::string s = "time";
    for (const auto& l : w.labels) {
        s += ',' + l;
    }
    s += '\n';
    for (std::size_t k = 0; k < w.times.size(); ++k) {
        s += harness_detail::fmt17(w.times[k]);
        for (Eigen::Index r = 0; r < w.values.rows(); ++r) {
            s += ',' + harness_detail::fmt17(w.values(r, static_cast<Eigen::Index>(k)));
        }
        s += '\n';
    }
    return s;
}

struct WaveletRun {
    WaveletSolution solution;
    RunReport report;
};

struct TransientRun {
    Waveform waveform;
    RunReport report;
};

/// Timed wavelet solve; solver errors propagate.
[[nodiscard]] inline WaveletRun run_wavelet(const DaeSystem& dae, const Eigen::VectorXd& x0, double tstop,
                                            const WaveletConfig& cfg) {
    WaveletRun r;
    const auto t = std::chrono::steady_clock::now();
    r.solution = solve_with_splitting(dae, x0, 0.0, tstop, cfg);
    r.report.cpu_seconds = harness_detail::seconds_since(t);
    r.report.method = Method::Wavelet;
    r.report.grid_points = r.solution.grid_points();
    r.report.newton_total = r.solution.newton_total();
    r.report.intervals = r.solution.intervals.size();
    r.report.tol_used = cfg.tol;
    r.report.labels = dae.unknown_names();
    return r;
}

/// Timed transient solve; solver errors propagate.
[[nodiscard]] inline TransientRun run_transient(const DaeSystem& dae, const Eigen::VectorXd& x0, double tstop,
                                                const TranConfig& cfg) {
    TransientRun r;
    TranStats st;
    const auto t = std::chrono::steady_clock::now();
    r.waveform = tran_solve(dae, x0, 0.0, tstop, cfg, &st);
    r.report.cpu_seconds = harness_detail::seconds_since(t);
    r.report.method = Method::Transient;
    r.report.grid_points = r.waveform.times.size();
    r.report.newton_total = st.newton_iterations;
    r.report.intervals = 1;
    r.report.tol_used = cfg.reltol;
    r.report.labels = dae.unknown_names();
    return r;
}

struct SweepOptions {
    std::vector<double> ladder;
    bool wavelet = true;
    bool transient = true;
    WaveletConfig wavelet_base;
    TranConfig transient_base;
    unsigned threads = 1;
};

struct SweepResult {
    std::vector<RunReport> rows;  // ladder order, wavelet rows first
    double reference_reltol = 0.0;
    std::size_t reference_points = 0;
};

/// Worker count from SIM_THREADS; unset or invalid means one.
[[nodiscard]] inline unsigned sim_threads() {
    const char* s = std::getenv("SIM_THREADS");
    if (s == nullptr) {
        return 1;
    }
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    return end != s && *end == '\0' && v >= 1 ? static_cast<unsigned>(std::min(v, 256L)) : 1U;
}

inline void check_ladder(const std::vector<double>& ladder) {
    if (ladder.empty()) {
        throw Error(Errc::InvalidParam, "empty tolerance ladder");
    }
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        if (!(ladder[i] > 0.0) || (i > 0 && !(ladder[i] < ladder[i - 1]))) {
            throw Error(Errc::InvalidParam, "tolerance ladder must be positive and decreasing");
        }
    }
}

/// One run per (method, tol); the reference is a transient run at min(ladder) / 100
/// that also steps onto every grid point of the transient cells.
[[nodiscard]] inline SweepResult sweep(const DaeSystem& dae, const Eigen::VectorXd& x0, double tstop,
                                       const SweepOptions& opt) {
    check_ladder(opt.ladder);
    SweepResult out;
    const std::size_t nt = opt.ladder.size();
    std::vector<RunReport> tran_rows(opt.transient ? nt : 0);
    std::vector<Waveform> tran_waves(tran_rows.size());
    std::vector<RunReport> wave_rows(opt.wavelet ? nt : 0);
    std::vector<WaveletSolution> wave_sols(wave_rows.size());

    auto parallel = [&](std::size_t count, const std::function<void(std::size_t)>& body) {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i = next++; i < count; i = next++) {
                body(i);
            }
        };
        const unsigned n = std::max(1U, std::min<unsigned>(opt.threads, static_cast<unsigned>(count)));
        std::vector<std::thread> pool;
        for (unsigned k = 1; k < n; ++k) {
            pool.emplace_back(worker);
        }
        worker();
        for (auto& th : pool) {
            th.join();
        }
    };
    auto failed = [&](Method m, double tol, const std::exception& e) {
        RunReport r;
        r.method = m;
        r.success = false;
        r.message = e.what();
        r.tol_used = tol;
        r.labels = dae.unknown_names();
        return r;
    };

    parallel(tran_rows.size(), [&](std::size_t i) {
        TranConfig tc = opt.transient_base;
        tc.reltol = opt.ladder[i];
        try {
            TransientRun r = run_transient(dae, x0, tstop, tc);
            tran_rows[i] = r.report;
            tran_waves[i] = std::move(r.waveform);
        } catch (const std::exception& e) {
            tran_rows[i] = failed(Method::Transient, tc.reltol, e);
        }
    });

    TranConfig rc = opt.transient_base;
    rc.reltol = *std::min_element(opt.ladder.begin(), opt.ladder.end()) / 100.0;
    for (const auto& w : tran_waves) {
        rc.checkpoints.insert(rc.checkpoints.end(), w.times.begin(), w.times.end());
    }
    std::sort(rc.checkpoints.begin(), rc.checkpoints.end());
    rc.checkpoints.erase(std::unique(rc.checkpoints.begin(), rc.checkpoints.end()), rc.checkpoints.end());
    const Waveform ref = tran_solve(dae, x0, 0.0, tstop, rc);
    out.reference_reltol = rc.reltol;
    out.reference_points = ref.times.size();

    for (std::size_t i = 0; i < tran_rows.size(); ++i) {
        if (tran_rows[i].success) {
            tran_rows[i].diff = compare(tran_waves[i], resample(ref, tran_waves[i].times));
        }
    }

    parallel(wave_rows.size(), [&](std::size_t i) {
        WaveletConfig wc = opt.wavelet_base;
        wc.tol = opt.ladder[i];
        try {
            WaveletRun r = run_wavelet(dae, x0, tstop, wc);
            r.report.diff = compare(sample_solution(r.solution, ref.times), ref);
            wave_rows[i] = r.report;
        } catch (const std::exception& e) {
            wave_rows[i] = failed(Method::Wavelet, wc.tol, e);
        }
    });

    out.rows = wave_rows;
    out.rows.insert(out.rows.end(), tran_rows.begin(), tran_rows.end());
    return out;
}

[[nodiscard]] inline std::string sweep_csv(const SweepResult& s) {
    std::string t = "method,tol,cpu_seconds,grid_points,max_abs_diff,status,newton_total,intervals\n";
    for (const auto& r : s.rows) {
        t += method_name(r.method) + ',' + harness_detail::fmt17(r.tol_used) + ',' +
             harness_detail::fmt17(r.cpu_seconds) + ',' + std::to_string(r.grid_points) + ',' +
             (r.diff ? harness_detail::fmt17(r.diff->overall) : std::string("nan")) + ',' +
             (r.success ? "success" : "failed") + ',' + std::to_string(r.newton_total) + ',' +
             std::to_string(r.intervals) + '\n';
    }
    return t;
}

}  // namespace wavesim

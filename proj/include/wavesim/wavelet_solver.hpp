#pragma once

// Adaptive spline-wavelet solution of the charge-form DAE.
//
// One interval: damped Newton in short phases on a grid hierarchy; between
// phases, spans whose residual indicator exceeds tolerance are bisected and the
// iterate is carried over by knot insertion. After convergence small details
// are thresholded away. Intervals are chained by evaluating the previous
// spline at its right end; failing intervals are halved.

#include "wavesim/error.hpp"
#include "wavesim/galerkin.hpp"
#include "wavesim/mra.hpp"
#include "wavesim/spline.hpp"
#include "wavesim/transient.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

namespace wavesim {

struct WaveletConfig {
    double tol = 1e-4;
    int order = 4;
    int initial_spans = 8;
    int max_level = 8;
    double eta = 0.1;
    int newton_max = 30;          // per grid
    int interval_newton_max = 100;  // per interval, over all grids
    int damping_max_halvings = 8;
    int phase_iterations = 5;
    double newton_weight = 0.1;
    double current_factor = 1e-3;
    bool splitting = true;
    double min_interval_fraction = 0x1p-20;
    std::size_t size_lo = 32;
    std::size_t size_hi = 128;
    double growth = 1.5;
    std::size_t max_spans = 1024;
    double span_length = 0.0;  // > 0: initial spans of about this length instead of initial_spans
    bool coarsen = true;
};

inline void check_config(const WaveletConfig& cfg) {
    if (!(cfg.tol > 0.0)) {
        throw Error(Errc::InvalidParam, "tol must be positive");
    }
    if (cfg.max_level < 0) {
        throw Error(Errc::InvalidParam, "maximal level must be non-negative");
    }
    if (!(cfg.eta > 0.0 && cfg.eta <= 1.0)) {
        throw Error(Errc::InvalidParam, "eta must lie in (0, 1]");
    }
    if (cfg.order < 2 || cfg.order > kMaxSplineOrder) {
        throw Error(Errc::InvalidOrder, "spline order must lie in [2, " + std::to_string(kMaxSplineOrder) + "]");
    }
    if (cfg.initial_spans < 1 || cfg.newton_max < 1 || cfg.phase_iterations < 1) {
        throw Error(Errc::InvalidParam, "span and iteration counts must be positive");
    }
    if (!(cfg.growth > 1.0) || cfg.size_lo > cfg.size_hi) {
        throw Error(Errc::InvalidParam, "bad interval size band");
    }
}

enum class IntervalStatus { Converged, Failed };

struct IntervalResult {
    double t0 = 0.0;
    double t1 = 0.0;
    IntervalStatus status = IntervalStatus::Failed;
    SplineCoeffs solution;
    int newton_iterations = 0;
    int refinements = 0;
    std::size_t spans_before_coarsening = 0;
    double last_norm = 0.0;
    std::string reason;

    [[nodiscard]] std::size_t spans() const { return solution.grid.num_spans(); }
};

namespace wavelet_detail {

/// Level at which each finest span first appears as a span of the hierarchy.
inline std::vector<std::size_t> span_levels(const GridHierarchy& h) {
    std::map<double, std::size_t> birth;
    for (double b : h.coarsest().breakpoints()) {
        birth[b] = 0;
    }
    for (std::size_t j = 0; j + 1 < h.num_levels(); ++j) {
        for (double u : h.inserted(j)) {
            birth[u] = j + 1;
        }
    }
    const auto& bp = h.finest().breakpoints();
    std::vector<std::size_t> out(bp.size() - 1);
    for (std::size_t s = 0; s + 1 < bp.size(); ++s) {
        out[s] = std::max(birth.at(bp[s]), birth.at(bp[s + 1]));
    }
    return out;
}

/// Bisects the chosen finest spans, each at the level where it lives.
inline GridHierarchy refine_finest(const GridHierarchy& h, const std::vector<std::size_t>& spans) {
    const auto levels = span_levels(h);
    std::map<std::size_t, std::vector<std::size_t>, std::greater<>> by_level;
    const auto& bp = h.finest().breakpoints();
    for (std::size_t s : spans) {
        const std::size_t j = levels[s];
        by_level[j].push_back(h.level(j).span_index(bp[s]));
    }
    GridHierarchy out = h;
    for (const auto& [j, idx] : by_level) {
        out = refine_spans(out, j, idx);
    }
    return out;
}

inline std::vector<double> new_midpoints(const KnotGrid& g, const std::vector<std::size_t>& spans) {
    std::vector<double> mids;
    for (std::size_t s : spans) {
        mids.push_back(0.5 * (g.breakpoints()[s] + g.breakpoints()[s + 1]));
    }
    return mids;
}

}  // namespace wavelet_detail

/// Adaptive Galerkin solve on [t0, t1] from the flat initial guess x0.
template <typename Dae>
[[nodiscard]] IntervalResult solve_adaptive_interval(const Dae& dae, const Eigen::VectorXd& x0, double t0, double t1,
                                                     const WaveletConfig& cfg) {
    check_config(cfg);
    if (!(t1 > t0)) {
        throw Error(Errc::InvalidSpan, "interval must be increasing");
    }
    IntervalResult res;
    res.t0 = t0;
    res.t1 = t1;
    std::size_t spans0 = static_cast<std::size_t>(cfg.initial_spans);
    if (cfg.span_length > 0.0) {
        spans0 = static_cast<std::size_t>(std::max(1.0, std::ceil((t1 - t0) / cfg.span_length - 1e-9)));
    }
    GridHierarchy hier(KnotGrid(uniform_breakpoints(t0, t1, spans0), cfg.order), cfg.max_level);
    SplineCoeffs c = SplineCoeffs::constant(hier.finest(), x0);
    const GalerkinNewtonOptions base{cfg.tol, cfg.current_factor, cfg.newton_weight, cfg.newton_max,
                                     cfg.damping_max_halvings};

    auto fail = [&](const std::string& why) {
        res.status = IntervalStatus::Failed;
        res.reason = why;
        res.solution = c;
        return res;
    };

    int on_grid = 0;  // Newton iterations spent on the current grid
    while (true) {
        const int budget = std::min(cfg.newton_max - on_grid, cfg.phase_iterations);
        if (budget <= 0) {
            return fail("Newton iteration limit");
        }
        const auto gp = make_galerkin_problem(dae, hier.finest(), x0);
        GalerkinNewtonOptions opt = base;
        opt.max_iterations = budget;
        GalerkinNewtonResult nr;
        try {
            nr = galerkin_newton(gp, c, opt);
        } catch (const Error& e) {
            if (e.code() != Errc::SingularSystem) {
                throw;
            }
            return fail("singular Galerkin Jacobian");
        }
        res.newton_iterations += nr.iterations;
        on_grid += nr.iterations;
        res.last_norm = nr.last_norm;
        if (!nr.solution.coeffs.allFinite()) {
            return fail("non-finite Newton iterate");
        }
        if (nr.status == NewtonStatus::DampingExhausted) {
            return fail("damping exhausted");
        }
        if (res.newton_iterations >= cfg.interval_newton_max && !nr.converged()) {
            return fail("Newton iteration limit");
        }
        c = nr.solution;

        const auto ind = refinement_indicators(gp, c, cfg.tol, cfg.current_factor);
        const auto levels = wavelet_detail::span_levels(hier);
        std::vector<std::size_t> chosen;
        for (std::size_t s : select_refinement(ind, cfg.eta)) {
            if (ind[s] > 1.0 && static_cast<int>(levels[s]) < cfg.max_level) {
                chosen.push_back(s);
            }
        }
        if (chosen.empty()) {
            if (nr.converged()) {
                break;
            }
            continue;
        }
        if (hier.finest().num_spans() + chosen.size() > cfg.max_spans) {
            return fail("grid budget exceeded");
        }
        const auto mids = wavelet_detail::new_midpoints(hier.finest(), chosen);
        hier = wavelet_detail::refine_finest(hier, chosen);
        c = insert_knots(c, mids);
        ++res.refinements;
        on_grid = 0;
    }

    res.spans_before_coarsening = c.grid.num_spans();
    if (cfg.coarsen && hier.num_levels() > 1) {
        // compare details in units of the per-unknown tolerance
        const Eigen::VectorXd atol = unknown_atol(dae, cfg.tol, cfg.current_factor);
        const Eigen::VectorXd to_scaled = atol.cwiseInverse() * cfg.tol;
        SplineCoeffs scaled = c;
        scaled.coeffs = to_scaled.asDiagonal() * c.coeffs;
        const auto th = threshold(decompose(scaled, hier), cfg.tol / 10.0);
        SplineCoeffs back = reconstruct(th.expansion);
        back.coeffs = to_scaled.cwiseInverse().asDiagonal() * back.coeffs;
        c = back;
    }
    c.coeffs.col(0) = x0;
    res.solution = c;
    res.status = IntervalStatus::Converged;
    return res;
}

struct WaveletSolution {
    std::vector<IntervalResult> intervals;
    std::vector<std::string> labels;
    int failed_attempts = 0;

    [[nodiscard]] int newton_total() const {
        int n = 0;
        for (const auto& iv : intervals) {
            n += iv.newton_iterations;
        }
        return n;
    }
    /// Breakpoints summed over intervals.
    [[nodiscard]] std::size_t grid_points() const {
        std::size_t n = 0;
        for (const auto& iv : intervals) {
            n += iv.solution.grid.breakpoints().size();
        }
        return n;
    }
};

/// Chains adaptive interval solves over [t0, t1]. Intervals end at source
/// corners; an interval that fails is halved. Without splitting the whole span
/// is one interval and a failure raises NoConvergence.
template <typename Dae>
[[nodiscard]] WaveletSolution solve_with_splitting(const Dae& dae, const Eigen::VectorXd& x0, double t0, double t1,
                                                   const WaveletConfig& cfg = {}) {
    check_config(cfg);
    if (!(t1 > t0)) {
        throw Error(Errc::InvalidSpan, "simulation span must be increasing");
    }
    WaveletSolution ws;
    ws.labels = dae.unknown_names();
    if (!cfg.splitting) {
        IntervalResult r = solve_adaptive_interval(dae, x0, t0, t1, cfg);
        if (r.status == IntervalStatus::Failed) {
            char msg[160];
            std::snprintf(msg, sizeof msg, "no convergence on [%.9g, %.9g] (%s, last norm %.3g)", t0, t1,
                          r.reason.c_str(), r.last_norm);
            throw SolverError(Errc::NoConvergence, t0, r.last_norm, msg);
        }
        ws.intervals.push_back(std::move(r));
        return ws;
    }

    std::vector<double> stops = dae.breakpoints(t0, t1);
    stops.push_back(t1);
    const double span = t1 - t0;
    const double h_min = span * cfg.min_interval_fraction;
    double t = t0;
    double h = span;
    Eigen::VectorXd x = x0;
    std::size_t next = 0;
    while (t < t1) {
        while (stops[next] <= t) {
            ++next;
        }
        double end = std::min(t + h, stops[next]);
        const bool clamped = end == stops[next];
        // do not leave a sliver before a stop
        if (!clamped && stops[next] - end < 1e-3 * h) {
            end = stops[next];
        }
        const double len = end - t;
        IntervalResult r = solve_adaptive_interval(dae, x, t, end, cfg);
        if (r.status == IntervalStatus::Failed) {
            ++ws.failed_attempts;
            h = 0.5 * len;
            if (h < h_min) {
                char msg[160];
                std::snprintf(msg, sizeof msg, "interval underflow at t = %.9g (%s, last norm %.3g)", t,
                              r.reason.c_str(), r.last_norm);
                throw SolverError(Errc::SplitUnderflow, t, r.last_norm, msg);
            }
            continue;
        }
        const std::size_t n = r.spans();
        if (n < cfg.size_lo) {
            h = std::max(h, cfg.growth * len);
        } else if (n > cfg.size_hi) {
            h = len / cfg.growth;
        } else {
            h = clamped ? std::max(h, len) : len;
        }
        x = eval_expansion(r.solution, end);
        t = end;
        ws.intervals.push_back(std::move(r));
    }
    return ws;
}

/// Evaluates the piecewise expansion; a time on an interval boundary belongs to the later interval.
[[nodiscard]] inline Waveform sample_solution(const WaveletSolution& ws, const std::vector<double>& times) {
    if (ws.intervals.empty()) {
        throw Error(Errc::OutOfRange, "empty wavelet solution");
    }
    Waveform w;
    w.labels = ws.labels;
    w.times = times;
    w.values.resize(ws.intervals.front().solution.rows(), static_cast<Eigen::Index>(times.size()));
    const double a = ws.intervals.front().t0;
    const double b = ws.intervals.back().t1;
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double t = times[i];
        if (!(t >= a && t <= b)) {
            char msg[96];
            std::snprintf(msg, sizeof msg, "sample time %.9g outside [%.9g, %.9g]", t, a, b);
            throw Error(Errc::OutOfRange, msg);
        }
        auto it = std::upper_bound(ws.intervals.begin(), ws.intervals.end(), t,
                                   [](double v, const IntervalResult& iv) { return v < iv.t0; });
        const IntervalResult& iv = *(it - 1);
        w.values.col(static_cast<Eigen::Index>(i)) = eval_expansion(iv.solution, std::min(t, iv.t1));
    }
    return w;
}

}  // namespace wavesim

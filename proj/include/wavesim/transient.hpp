#pragma once

// Classical adaptive time stepping on the charge form d/dt q(x) + f(x) = s(t).
// Local error comes from step doubling; the two half steps are kept.

#include "wavesim/error.hpp"
#include "wavesim/newton.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

namespace wavesim {

enum class TranMethod { Trapezoidal, Bdf2 };

struct TranConfig {
    double reltol = 1e-4;
    double abstol_v = 1e-9;
    double abstol_i = 1e-12;
    double h_init = 0.0;  // 0 picks a default from the span
    double h_min = 0.0;
    double h_max = 0.0;
    TranMethod method = TranMethod::Trapezoidal;
    int newton_max = 50;
    std::vector<double> checkpoints;  // times forced onto the step grid
};

struct Waveform {
    std::vector<double> times;
    Eigen::MatrixXd values;  // one row per unknown, one column per time
    std::vector<std::string> labels;

    [[nodiscard]] int row(const std::string& label) const {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == label) {
                return static_cast<int>(i);
            }
        }
        throw Error(Errc::OutOfRange, "no waveform named " + label);
    }
};

struct TranStats {
    int accepted = 0;
    int rejected = 0;
    int newton_failures = 0;
    int newton_iterations = 0;
    double max_accepted_error = 0.0;
    std::vector<std::pair<double, double>> retries;  // (rejected h, retried h)
};

/// Piecewise-linear interpolation of w at the given times.
[[nodiscard]] inline Waveform resample(const Waveform& w, const std::vector<double>& times) {
    Waveform out;
    out.labels = w.labels;
    out.times = times;
    out.values.resize(w.values.rows(), static_cast<Eigen::Index>(times.size()));
    if (w.times.empty()) {
        throw Error(Errc::OutOfRange, "empty waveform");
    }
    for (std::size_t k = 0; k < times.size(); ++k) {
        const double t = times[k];
        if (!(t >= w.times.front() && t <= w.times.back())) {
            throw Error(Errc::OutOfRange, "resample time " + std::to_string(t) + " outside the waveform");
        }
        auto it = std::lower_bound(w.times.begin(), w.times.end(), t);
        const auto j = static_cast<Eigen::Index>(it - w.times.begin());
        if (*it == t) {
            out.values.col(static_cast<Eigen::Index>(k)) = w.values.col(j);
            continue;
        }
        const double t0 = w.times[static_cast<std::size_t>(j - 1)];
        const double t1 = *it;
        const double a = (t - t0) / (t1 - t0);
        out.values.col(static_cast<Eigen::Index>(k)) = (1.0 - a) * w.values.col(j - 1) + a * w.values.col(j);
    }
    return out;
}

namespace tran_detail {

/// One implicit step: a0 q(x) + f(x) = rhs, with rhs collecting the source and history terms.
template <typename Dae>
struct StepProblem {
    const Dae& dae;
    double a0;       // coefficient of q(x)
    Eigen::VectorXd rhs;
    Eigen::VectorXd weights;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu;

    Eigen::VectorXd residual(const Eigen::VectorXd& x) {
        Eigen::VectorXd q;
        Eigen::VectorXd f;
        dae.evaluate(x, q, f, nullptr, nullptr);
        return a0 * q + f - rhs;
    }

    void factor(const Eigen::VectorXd& x) {
        Eigen::VectorXd q;
        Eigen::VectorXd f;
        Eigen::MatrixXd c;
        Eigen::MatrixXd g;
        dae.evaluate(x, q, f, &c, &g);
        const Eigen::MatrixXd j = a0 * c + g;
        lu.compute(j);
        const double pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
        if (!(pivot > 1e-14 * j.cwiseAbs().maxCoeff())) {
            throw Error(Errc::SingularSystem, "step Jacobian is singular");
        }
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& r) { return lu.solve(r); }

    double norm(const Eigen::VectorXd& dx, const Eigen::VectorXd&) const {
        return (dx.array() / weights.array()).abs().maxCoeff();
    }
};

struct History {
    double t = 0.0;
    Eigen::VectorXd x;
    Eigen::VectorXd q;
    Eigen::VectorXd f;
    Eigen::VectorXd qdot;  // s - f on rows that carry charge, zero on algebraic rows
};

}  // namespace tran_detail

/// Adaptive transient from x0 at t0 to t1.
template <typename Dae>
[[nodiscard]] Waveform tran_solve(const Dae& dae, const Eigen::VectorXd& x0, double t0, double t1,
                                  const TranConfig& cfg = {}, TranStats* stats = nullptr) {
    using tran_detail::History;
    if (!(t1 > t0)) {
        throw Error(Errc::InvalidParam, "transient span must be increasing");
    }
    if (!(cfg.reltol > 0.0 && cfg.abstol_v > 0.0 && cfg.abstol_i > 0.0)) {
        throw Error(Errc::InvalidParam, "tolerances must be positive");
    }
    const int n = dae.dim();
    if (x0.size() != n) {
        throw Error(Errc::InvalidParam, "initial state has the wrong size");
    }
    const double span = t1 - t0;
    const double h_max = cfg.h_max > 0.0 ? cfg.h_max : span / 200.0;
    const double h_min = cfg.h_min > 0.0 ? cfg.h_min : span * 1e-14;
    double h = cfg.h_init > 0.0 ? cfg.h_init : std::min(h_max, span * 1e-5);
    if (!(h_min <= h && h <= h_max)) {
        throw Error(Errc::InvalidParam, "need h_min <= h_init <= h_max");
    }
    TranStats local_stats;
    TranStats& st = stats != nullptr ? *stats : local_stats;

    // corners win over checkpoints that land within rounding distance of them
    const std::vector<double> corners = dae.breakpoints(t0, t1);
    std::vector<double> stops = corners;
    stops.push_back(t1);
    const double merge = 1e-12 * span;
    for (double c : cfg.checkpoints) {
        const bool near = std::any_of(stops.begin(), stops.end(), [&](double s) { return std::abs(s - c) <= merge; });
        if (c > t0 && c < t1 && !near) {
            stops.push_back(c);
        }
    }
    std::sort(stops.begin(), stops.end());

    Eigen::VectorXd scale(n);
    for (int i = 0; i < n; ++i) {
        scale[i] = dae.is_current(i) ? cfg.abstol_i : cfg.abstol_v;
    }

    auto make_history = [&](double t, const Eigen::VectorXd& x) {
        History hst{t, x, {}, {}, {}};
        Eigen::MatrixXd c;
        dae.evaluate(x, hst.q, hst.f, &c, nullptr);
        hst.qdot = dae.eval_s(t) - hst.f;
        for (int i = 0; i < n; ++i) {
            if (c.row(i).cwiseAbs().maxCoeff() == 0.0) {
                hst.qdot[i] = 0.0;
            }
        }
        return hst;
    };

    // one step of length hs from cur (and prev for BDF2); false on Newton failure
    auto step = [&](const History& cur, const History* prev, double hs, bool first_order, Eigen::VectorXd& out) {
        tran_detail::StepProblem<Dae> p{dae, 0.0, {}, {}, {}};
        const double tn = cur.t + hs;
        const Eigen::VectorXd s1 = dae.eval_s(tn);
        if (first_order) {
            p.a0 = 1.0 / hs;
            p.rhs = s1 + cur.q / hs;
        } else if (cfg.method == TranMethod::Trapezoidal) {
            // companion form: algebraic rows are enforced at the new time, not averaged
            p.a0 = 2.0 / hs;
            p.rhs = s1 + 2.0 * cur.q / hs + cur.qdot;
        } else {
            const double w = hs / (cur.t - prev->t);
            p.a0 = (1.0 + 2.0 * w) / ((1.0 + w) * hs);
            p.rhs = s1 + ((1.0 + w) * cur.q - w * w / (1.0 + w) * prev->q) / hs;
        }
        p.weights = 0.05 * (scale.array() + cfg.reltol * cur.x.array().abs()).matrix();
        out = cur.x;
        try {
            const auto r = newton_solve(p, out, NewtonOptions{cfg.newton_max, 10});
            st.newton_iterations += r.iterations;
            return r.converged() && out.allFinite();
        } catch (const Error& e) {
            if (e.code() != Errc::SingularSystem) {
                throw;
            }
            return false;
        }
    };

    Waveform w;
    w.labels = dae.unknown_names();
    std::vector<Eigen::VectorXd> cols{x0};
    w.times.push_back(t0);

    History cur = make_history(t0, x0);
    History prev = cur;
    bool restart = true;  // one backward-Euler step at the start and after each corner
    std::size_t next_stop = 0;

    while (cur.t < t1) {
        while (next_stop < stops.size() && stops[next_stop] <= cur.t) {
            ++next_stop;
        }
        const double target = stops[next_stop];
        bool clamped = false;
        double hs = std::min(h, h_max);
        if (cur.t + hs >= target || target - (cur.t + hs) < 1e-3 * hs) {
            hs = target - cur.t;
            clamped = true;
        }
        if (hs < h_min) {
            char msg[64];
            std::snprintf(msg, sizeof msg, "step size underflow at t = %.9g", cur.t);
            throw SolverError(Errc::StepSizeUnderflow, cur.t, 0.0, msg);
        }
        const bool first_order = restart;

        Eigen::VectorXd full;
        Eigen::VectorXd half;
        Eigen::VectorXd both;
        bool ok = step(cur, &prev, hs, first_order, full);
        History mid;
        if (ok) {
            ok = step(cur, &prev, 0.5 * hs, first_order, half);
        }
        if (ok) {
            mid = make_history(cur.t + 0.5 * hs, half);
            ok = step(mid, &cur, 0.5 * hs, first_order, both);
        }
        if (!ok) {
            ++st.newton_failures;
            ++st.rejected;
            st.retries.push_back({hs, 0.5 * hs});
            h = 0.5 * hs;
            continue;
        }

        const double order = first_order ? 1.0 : 2.0;
        const Eigen::VectorXd err = (both - full) / (std::pow(2.0, order) - 1.0);
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double wi = scale[i] + cfg.reltol * std::max(std::abs(cur.x[i]), std::abs(both[i]));
            acc += (err[i] / wi) * (err[i] / wi);
        }
        const double e = std::sqrt(acc / n);
        if (!(e <= 1.0)) {
            ++st.rejected;
            st.retries.push_back({hs, 0.5 * hs});
            h = 0.5 * hs;
            continue;
        }

        ++st.accepted;
        st.max_accepted_error = std::max(st.max_accepted_error, e);
        const double tn = clamped ? target : cur.t + hs;
        prev = mid;
        cur = make_history(tn, both);
        w.times.push_back(tn);
        cols.push_back(both);

        const double grow = e > 0.0 ? 0.9 * std::pow(e, -1.0 / (order + 1.0)) : 2.0;
        const double next_h = hs * std::clamp(grow, 0.5, 2.0);
        const bool at_corner = clamped && std::binary_search(corners.begin(), corners.end(), target);
        restart = at_corner;
        // a clamp shortens this step only; do not let it throttle the next one
        h = clamped && !at_corner ? std::max(next_h, h) : next_h;
        h = std::min(h, h_max);
    }

    w.values.resize(n, static_cast<Eigen::Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
        w.values.col(static_cast<Eigen::Index>(k)) = cols[k];
    }
    return w;
}

}  // namespace wavesim

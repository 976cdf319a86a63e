#include "test_support.hpp"

#include "wavesim/mna.hpp"
#include "wavesim/transient.hpp"

#include <numbers>

using namespace wavesim;

namespace {

DaeSystem dae_of(const std::string& text) { return build_dae(parse(text)); }

// RC low-pass driven by sin(2 pi f t) from rest
double rc_sine_exact(double t, double tau, double f) {
    const double w = 2.0 * std::numbers::pi * f;
    const double wt = w * tau;
    return (std::sin(w * t) - wt * std::cos(w * t) + wt * std::exp(-t / tau)) / (1.0 + wt * wt);
}

double max_error_rc(const Waveform& w, int row) {
    double e = 0.0;
    for (std::size_t k = 0; k < w.times.size(); ++k) {
        e = std::max(e, std::abs(w.values(row, static_cast<Eigen::Index>(k)) - rc_sine_exact(w.times[k], 1e-3, 100.0)));
    }
    return e;
}

}  // namespace

TEST_CASE("RC decay matches the exponential", "[transient]") {
    const DaeSystem dae = dae_of("R1 1 0 1k\nC1 1 0 1u\n");
    TranConfig cfg;
    cfg.reltol = 1e-6;
    TranStats st;
    const Waveform w = tran_solve(dae, Eigen::VectorXd::Ones(1), 0.0, 1e-3, cfg, &st);
    CHECK(w.times.front() == 0.0);
    CHECK(w.times.back() == 1e-3);
    CHECK(std::abs(w.values(0, w.values.cols() - 1) - std::exp(-1.0)) <= 1e-6);
    CHECK(st.max_accepted_error <= 1.0);
    for (const auto& [tried, retried] : st.retries) {
        CHECK(retried == 0.5 * tried);
    }
    for (std::size_t k = 1; k < w.times.size(); ++k) {
        REQUIRE(w.times[k] > w.times[k - 1]);
    }
    CHECK(w.values.cols() == static_cast<Eigen::Index>(w.times.size()));
}

TEST_CASE("resistive divider stays at its DC value", "[transient]") {
    const DaeSystem dae = dae_of("V1 1 0 DC 5\nR1 1 2 1k\nR2 2 0 1k\n.tran 1m\n");
    const auto op = dc_operating_point(dae, 0.0);
    const Waveform w = tran_solve(dae, op.x0, 0.0, 1e-3);
    for (Eigen::Index k = 0; k < w.values.cols(); ++k) {
        CHECK((w.values.col(k) - op.x0).cwiseAbs().maxCoeff() <= 1e-12);
    }
}

TEST_CASE("LC tank keeps its energy", "[transient]") {
    const DaeSystem dae = dae_of("L1 1 0 1m\nC1 1 0 1u\n");
    Eigen::VectorXd x0(2);
    x0 << 1.0, 0.0;
    TranConfig cfg;
    cfg.reltol = 1e-8;
    const double period = 2.0 * std::numbers::pi * std::sqrt(1e-3 * 1e-6);
    const Waveform w = tran_solve(dae, x0, 0.0, 10.0 * period, cfg);
    double worst = 0.0;
    for (Eigen::Index k = 0; k < w.values.cols(); ++k) {
        const double v = w.values(0, k);
        const double i = w.values(1, k);
        worst = std::max(worst, std::abs(v * v * 1e-6 + i * i * 1e-3 - 1e-6));
    }
    CHECK(worst <= 1e-6);
    // at the final time the analytic solution is cos(10 * 2 pi) = 1
    CHECK(w.values(0, w.values.cols() - 1) == Catch::Approx(1.0).margin(1e-3));
}

TEST_CASE("trapezoidal convergence order on the RC deck", "[transient]") {
    const DaeSystem dae = build_dae(parse(test::read_deck("rc.cir")));
    const Eigen::VectorXd x0 = dc_operating_point(dae, 0.0).x0;
    const int row = dae.index_of("v(out)");
    std::vector<double> log_n;
    std::vector<double> log_e;
    for (double tol : {1e-4, 1e-5, 1e-6, 1e-7, 1e-8}) {
        TranConfig cfg;
        cfg.reltol = tol;
        cfg.abstol_v = tol * 1e-3;
        const Waveform w = tran_solve(dae, x0, 0.0, 10e-3, cfg);
        log_n.push_back(std::log(static_cast<double>(w.times.size())));
        log_e.push_back(std::log(max_error_rc(w, row)));
    }
    // least-squares slope of log(error) against log(steps)
    const double n = static_cast<double>(log_n.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < log_n.size(); ++i) {
        sx += log_n[i];
        sy += log_e[i];
        sxx += log_n[i] * log_n[i];
        sxy += log_n[i] * log_e[i];
    }
    const double order = -(n * sxy - sx * sy) / (n * sxx - sx * sx);
    INFO("observed order " << order);
    CHECK(order >= 1.8);
}

TEST_CASE("BDF2 agrees with trapezoidal on the bundled decks", "[transient]") {
    for (const char* name : {"rc.cir", "rc_pulse.cir", "diode_rectifier.cir", "schmitt.cir", "inverter_chain.cir"}) {
        INFO(name);
        // positive feedback in the Schmitt trigger turns small timing differences into large
        // voltage differences at the switching instants; there we only ask for 2% of the rail
        const bool regenerative = std::string(name) == "schmitt.cir";
        const DaeSystem dae = build_dae(parse(test::read_deck(name)));
        const Eigen::VectorXd x0 = dc_operating_point(dae, 0.0).x0;
        const double tstop = dae.circuit().analyses.front().tstop;
        TranConfig cfg;
        cfg.reltol = 1e-4;
        for (int k = 1; k < 200; ++k) {
            cfg.checkpoints.push_back(tstop * k / 200.0);
        }
        const Waveform trap = tran_solve(dae, x0, 0.0, tstop, cfg);
        cfg.method = TranMethod::Bdf2;
        const Waveform bdf = tran_solve(dae, x0, 0.0, tstop, cfg);
        std::vector<double> common = cfg.checkpoints;
        common.push_back(tstop);
        const Waveform a = resample(trap, common);
        const Waveform b = resample(bdf, common);
        for (Eigen::Index r = 0; r < a.values.rows(); ++r) {
            const double peak = a.values.row(r).cwiseAbs().maxCoeff();
            const double atol = dae.is_current(static_cast<int>(r)) ? cfg.abstol_i : cfg.abstol_v;
            const double diff = (a.values.row(r) - b.values.row(r)).cwiseAbs().maxCoeff();
            INFO(a.labels[static_cast<std::size_t>(r)] << " diff " << diff << " peak " << peak);
            if (regenerative) {
                CHECK(diff <= (dae.is_current(static_cast<int>(r)) ? 0.02 * peak : 0.02 * 5.0));
            } else {
                CHECK(diff <= 10.0 * (cfg.reltol * peak + atol));
            }
        }
    }
}

TEST_CASE("resample", "[transient]") {
    Waveform w;
    w.labels = {"x"};
    for (int k = 0; k <= 400; ++k) {
        w.times.push_back(k * 0.01);
    }
    w.values.resize(1, 401);
    for (int k = 0; k <= 400; ++k) {
        w.values(0, k) = std::exp(-w.times[static_cast<std::size_t>(k)]);
    }
    const Waveform same = resample(w, w.times);
    CHECK(same.values == w.values);

    std::vector<double> mids;
    for (int k = 0; k < 400; ++k) {
        mids.push_back((k + 0.5) * 0.01);
    }
    const Waveform m = resample(w, mids);
    double worst = 0.0;
    for (std::size_t k = 0; k < mids.size(); ++k) {
        worst = std::max(worst, std::abs(m.values(0, static_cast<Eigen::Index>(k)) - std::exp(-mids[k])));
    }
    // h^2 max|f''| / 8 with f'' = exp(-t) <= 1
    CHECK(worst <= 0.01 * 0.01 / 8.0);

    Waveform flat = w;
    flat.values.setConstant(3.0);
    const Waveform f = resample(flat, {0.123, 1.7, 3.99});
    CHECK((f.values.array() - 3.0).abs().maxCoeff() <= 1e-15);

    CHECK_ERRC(resample(w, {4.5}), Errc::OutOfRange);
    CHECK_ERRC(resample(w, {-0.1}), Errc::OutOfRange);
}

TEST_CASE("step size underflow reports the time", "[transient]") {
    const DaeSystem dae = dae_of("V1 in 0 PULSE(0 1 1m 1n 1n 1m 0)\nR1 in out 1k\nC1 out 0 1u\n.tran 3m\n");
    TranConfig cfg;
    cfg.h_min = 1e-6;
    cfg.h_init = 1e-5;
    try {
        (void)tran_solve(dae, Eigen::VectorXd::Zero(dae.dim()), 0.0, 3e-3, cfg);
        FAIL("expected StepSizeUnderflow");
    } catch (const SolverError& e) {
        CHECK(e.code() == Errc::StepSizeUnderflow);
        CHECK(e.time() == Catch::Approx(1e-3));
    }
}

#pragma once

// Charge/flux-oriented modified nodal analysis:
//
//     d/dt q(x) + f(x) = s(t)
//
// x holds the non-ground node voltages followed by the branch currents of
// voltage sources and inductors.

#include "wavesim/error.hpp"
#include "wavesim/netlist.hpp"
#include "wavesim/newton.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace wavesim {

inline constexpr double kThermalVoltage = 0.025852;
inline constexpr double kJunctionGmin = 1e-12;

namespace mna_detail {

inline constexpr double kExpLimit = 40.0;

/// exp(x) continued linearly above kExpLimit; returns value and slope.
inline std::pair<double, double> limited_exp(double x) {
    if (x <= kExpLimit) {
        const double e = std::exp(x);
        return {e, e};
    }
    const double e = std::exp(kExpLimit);
    return {e * (1.0 + x - kExpLimit), e};
}

}  // namespace mna_detail

/// Shichman-Hodges drain current for vds >= 0 with its partial derivatives.
struct MosCurrent {
    double id = 0.0;
    double gm = 0.0;   // d id / d vgs
    double gds = 0.0;  // d id / d vds
};

[[nodiscard]] inline MosCurrent level1_current(double vgs, double vds, double beta, double vt, double lambda) {
    MosCurrent r;
    const double vov = vgs - vt;
    if (vov <= 0.0) {
        return r;
    }
    const double clm = 1.0 + lambda * vds;
    if (vds < vov) {
        const double core = vov * vds - 0.5 * vds * vds;
        r.id = beta * core * clm;
        r.gm = beta * vds * clm;
        r.gds = beta * (vov - vds) * clm + beta * core * lambda;
    } else {
        const double core = 0.5 * vov * vov;
        r.id = beta * core * clm;
        r.gm = beta * vov * clm;
        r.gds = beta * core * lambda;
    }
    return r;
}

class DaeSystem {
public:
    explicit DaeSystem(Circuit c) : circuit_(std::move(c)) {
        for (std::size_t i = 1; i < circuit_.nodes.size(); ++i) {
            names_.push_back("v(" + circuit_.nodes[i] + ")");
        }
        num_nodes_ = static_cast<int>(names_.size());
        for (const auto& d : circuit_.devices) {
            Stamp s;
            s.device = &d - circuit_.devices.data();
            for (const auto& t : d.terminals) {
                s.nodes.push_back(node_unknown(t));
            }
            if (d.kind == DeviceKind::VoltageSource || d.kind == DeviceKind::Inductor) {
                s.branch = static_cast<int>(names_.size());
                names_.push_back("i(" + d.name + ")");
            }
            if (d.kind == DeviceKind::Diode) {
                s.p0 = d.param("IS", 1e-14);
                s.p1 = d.param("N", 1.0) * kThermalVoltage;
            } else if (d.kind == DeviceKind::Mosfet) {
                const bool n = *d.polarity == MosPolarity::Nmos;
                s.sign = n ? 1.0 : -1.0;
                s.p0 = d.param("KP", 2e-5) * d.param("W", 1e-6) / d.param("L", 1e-6);
                s.p1 = n ? d.param("VT0", 1.0) : std::abs(d.param("VT0", -1.0));
                s.p2 = d.param("LAMBDA", 0.0);
                s.p3 = d.param("CGS", 0.0);
                s.p4 = d.param("CGD", 0.0);
            }
            stamps_.push_back(s);
        }
    }

    [[nodiscard]] int dim() const { return static_cast<int>(names_.size()); }
    [[nodiscard]] int num_nodes() const { return num_nodes_; }
    [[nodiscard]] const std::vector<std::string>& unknown_names() const { return names_; }
    [[nodiscard]] const Circuit& circuit() const { return circuit_; }
    [[nodiscard]] bool is_current(int i) const { return i >= num_nodes_; }
    [[nodiscard]] bool charge_is_linear() const { return true; }
    [[nodiscard]] bool is_linear() const {
        return std::none_of(circuit_.devices.begin(), circuit_.devices.end(), [](const Device& d) {
            return d.kind == DeviceKind::Diode || d.kind == DeviceKind::Mosfet;
        });
    }

    /// index of an unknown by label ("v(out)", "i(V1)") or bare node name; -1 if absent
    [[nodiscard]] int index_of(const std::string& label) const {
        for (int i = 0; i < dim(); ++i) {
            if (names_[static_cast<std::size_t>(i)] == label) {
                return i;
            }
        }
        const int k = label == "0" ? -1 : node_unknown(label);
        return k < 0 ? -1 : k;
    }

    /// q, f and optionally the dense Jacobians C = dq/dx, G = df/dx.
    void evaluate(const Eigen::VectorXd& x, Eigen::VectorXd& q, Eigen::VectorXd& f, Eigen::MatrixXd* cmat,
                  Eigen::MatrixXd* gmat) const {
        const int n = dim();
        q.setZero(n);
        f.setZero(n);
        if (cmat != nullptr) {
            cmat->setZero(n, n);
        }
        if (gmat != nullptr) {
            gmat->setZero(n, n);
        }
        auto v = [&](int node) { return node < 0 ? 0.0 : x[node]; };
        auto add = [](Eigen::VectorXd& vec, int row, double val) {
            if (row >= 0) {
                vec[row] += val;
            }
        };
        auto addm = [](Eigen::MatrixXd* m, int row, int col, double val) {
            if (m != nullptr && row >= 0 && col >= 0) {
                (*m)(row, col) += val;
            }
        };
        // two-terminal conductance-like stamp of value g between a and b
        auto pair_stamp = [&](Eigen::MatrixXd* m, int a, int b, double g) {
            addm(m, a, a, g);
            addm(m, a, b, -g);
            addm(m, b, a, -g);
            addm(m, b, b, g);
        };

        for (const auto& s : stamps_) {
            const Device& d = circuit_.devices[static_cast<std::size_t>(s.device)];
            const int a = s.nodes[0];
            const int b = s.nodes[1];
            switch (d.kind) {
                case DeviceKind::Resistor: {
                    const double g = 1.0 / d.value;
                    const double i = g * (v(a) - v(b));
                    add(f, a, i);
                    add(f, b, -i);
                    pair_stamp(gmat, a, b, g);
                    break;
                }
                case DeviceKind::Capacitor: {
                    const double qc = d.value * (v(a) - v(b));
                    add(q, a, qc);
                    add(q, b, -qc);
                    pair_stamp(cmat, a, b, d.value);
                    break;
                }
                case DeviceKind::Inductor: {
                    const int br = s.branch;
                    q[br] = d.value * x[br];
                    addm(cmat, br, br, d.value);
                    f[br] = -(v(a) - v(b));
                    addm(gmat, br, a, -1.0);
                    addm(gmat, br, b, 1.0);
                    add(f, a, x[br]);
                    add(f, b, -x[br]);
                    addm(gmat, a, br, 1.0);
                    addm(gmat, b, br, -1.0);
                    break;
                }
                case DeviceKind::VoltageSource: {
                    const int br = s.branch;
                    f[br] = v(a) - v(b);
                    addm(gmat, br, a, 1.0);
                    addm(gmat, br, b, -1.0);
                    add(f, a, x[br]);
                    add(f, b, -x[br]);
                    addm(gmat, a, br, 1.0);
                    addm(gmat, b, br, -1.0);
                    break;
                }
                case DeviceKind::CurrentSource:
                    break;
                case DeviceKind::Diode: {
                    const double vd = v(a) - v(b);
                    const auto [e, de] = mna_detail::limited_exp(vd / s.p1);
                    const double i = s.p0 * (e - 1.0) + kJunctionGmin * vd;
                    const double g = s.p0 * de / s.p1 + kJunctionGmin;
                    add(f, a, i);
                    add(f, b, -i);
                    pair_stamp(gmat, a, b, g);
                    break;
                }
                case DeviceKind::Mosfet: {
                    const int dn = s.nodes[0];
                    const int gn = s.nodes[1];
                    const int sn = s.nodes[2];
                    const double p = s.sign;
                    const double vds = p * (v(dn) - v(sn));
                    double id = 0.0;
                    double did_dd = 0.0;
                    double did_dg = 0.0;
                    double did_ds = 0.0;
                    if (vds >= 0.0) {
                        const auto r = level1_current(p * (v(gn) - v(sn)), vds, s.p0, s.p1, s.p2);
                        id = p * r.id;
                        did_dd = r.gds;
                        did_dg = r.gm;
                        did_ds = -(r.gm + r.gds);
                    } else {
                        const auto r = level1_current(p * (v(gn) - v(dn)), -vds, s.p0, s.p1, s.p2);
                        id = -p * r.id;
                        did_dd = r.gm + r.gds;
                        did_dg = -r.gm;
                        did_ds = -r.gds;
                    }
                    id += kJunctionGmin * (v(dn) - v(sn));
                    did_dd += kJunctionGmin;
                    did_ds -= kJunctionGmin;
                    add(f, dn, id);
                    add(f, sn, -id);
                    for (const auto& [col, val] : {std::pair{dn, did_dd}, {gn, did_dg}, {sn, did_ds}}) {
                        addm(gmat, dn, col, val);
                        addm(gmat, sn, col, -val);
                    }
                    const double qgs = s.p3 * (v(gn) - v(sn));
                    const double qgd = s.p4 * (v(gn) - v(dn));
                    add(q, gn, qgs + qgd);
                    add(q, sn, -qgs);
                    add(q, dn, -qgd);
                    pair_stamp(cmat, gn, sn, s.p3);
                    pair_stamp(cmat, gn, dn, s.p4);
                    break;
                }
            }
        }
    }

    [[nodiscard]] Eigen::VectorXd eval_q(const Eigen::VectorXd& x) const {
        Eigen::VectorXd q;
        Eigen::VectorXd f;
        evaluate(x, q, f, nullptr, nullptr);
        return q;
    }

    [[nodiscard]] Eigen::VectorXd eval_f(const Eigen::VectorXd& x) const {
        Eigen::VectorXd q;
        Eigen::VectorXd f;
        evaluate(x, q, f, nullptr, nullptr);
        return f;
    }

    [[nodiscard]] Eigen::VectorXd eval_s(double t) const {
        Eigen::VectorXd s = Eigen::VectorXd::Zero(dim());
        for (const auto& st : stamps_) {
            const Device& d = circuit_.devices[static_cast<std::size_t>(st.device)];
            if (d.kind == DeviceKind::VoltageSource) {
                s[st.branch] = d.source->value(t);
            } else if (d.kind == DeviceKind::CurrentSource) {
                const double i = d.source->value(t);
                if (st.nodes[0] >= 0) {
                    s[st.nodes[0]] -= i;
                }
                if (st.nodes[1] >= 0) {
                    s[st.nodes[1]] += i;
                }
            }
        }
        return s;
    }

    [[nodiscard]] Eigen::SparseMatrix<double> jac_q(const Eigen::VectorXd& x) const {
        Eigen::VectorXd q;
        Eigen::VectorXd f;
        Eigen::MatrixXd c;
        evaluate(x, q, f, &c, nullptr);
        return c.sparseView();
    }

    [[nodiscard]] Eigen::SparseMatrix<double> jac_f(const Eigen::VectorXd& x) const {
        Eigen::VectorXd q;
        Eigen::VectorXd f;
        Eigen::MatrixXd g;
        evaluate(x, q, f, nullptr, &g);
        return g.sparseView();
    }

    /// Source corner times strictly inside (t0, t1), sorted and unique.
    [[nodiscard]] std::vector<double> breakpoints(double t0, double t1) const {
        std::vector<double> out;
        for (const auto& d : circuit_.devices) {
            if (d.source) {
                const auto c = d.source->corners(t0, t1);
                out.insert(out.end(), c.begin(), c.end());
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

private:
    struct Stamp {
        std::ptrdiff_t device = 0;
        std::vector<int> nodes;
        int branch = -1;
        double sign = 1.0;
        double p0 = 0.0, p1 = 0.0, p2 = 0.0, p3 = 0.0, p4 = 0.0;
    };

    [[nodiscard]] int node_unknown(const std::string& name) const {
        if (name == "0") {
            return -1;
        }
        const auto it = std::find(circuit_.nodes.begin(), circuit_.nodes.end(), name);
        if (it == circuit_.nodes.end()) {
            return -2;
        }
        return static_cast<int>(it - circuit_.nodes.begin()) - 1;
    }

    Circuit circuit_;
    std::vector<std::string> names_;
    int num_nodes_ = 0;
    std::vector<Stamp> stamps_;
};

/// Assemble the MNA system; floating nodes and source loops make it singular.
[[nodiscard]] inline DaeSystem build_dae(const Circuit& c) {
    for (const auto& diag : validate(c)) {
        if (diag.kind == DiagnosticKind::FloatingNode || diag.kind == DiagnosticKind::VoltageLoop ||
            diag.kind == DiagnosticKind::EmptyCircuit) {
            throw Error(Errc::BuildError, diag.message);
        }
    }
    return DaeSystem(c);
}

struct OperatingPoint {
    Eigen::VectorXd x0;
    bool converged = false;
    int iterations = 0;
    std::string strategy;  // "newton", "gmin", "source"
};

struct DcOptions {
    double reltol = 1e-10;
    double abstol_v = 1e-12;
    double abstol_i = 1e-15;
    int max_iterations = 100;
    double max_voltage_step = 0.5;
};

namespace mna_detail {

/// f(x) + gshunt * x_nodes - alpha * s(t) = 0
struct DcProblem {
    const DaeSystem& dae;
    Eigen::VectorXd s;
    double gshunt = 0.0;
    double alpha = 1.0;
    const DcOptions& opt;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu;

    Eigen::VectorXd residual(const Eigen::VectorXd& x) {
        Eigen::VectorXd r = dae.eval_f(x) - alpha * s;
        r.head(dae.num_nodes()) += gshunt * x.head(dae.num_nodes());
        return r;
    }

    void factor(const Eigen::VectorXd& x) {
        Eigen::VectorXd q;
        Eigen::VectorXd f;
        Eigen::MatrixXd g;
        dae.evaluate(x, q, f, nullptr, &g);
        g.diagonal().head(dae.num_nodes()).array() += gshunt;
        lu.compute(g);
        const double scale = g.cwiseAbs().maxCoeff();
        const double pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
        if (!(pivot > 1e-14 * scale)) {
            throw Error(Errc::SingularSystem, "DC Jacobian is singular");
        }
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) { return lu.solve(rhs); }

    /// caps node-voltage updates, as junction limiting does in classic simulators
    void limit(Eigen::VectorXd& dx, const Eigen::VectorXd&) const {
        const double big = dx.head(dae.num_nodes()).cwiseAbs().maxCoeff();
        if (big > opt.max_voltage_step) {
            dx *= opt.max_voltage_step / big;
        }
    }

    double norm(const Eigen::VectorXd& dx, const Eigen::VectorXd& x) const {
        double m = 0.0;
        for (int i = 0; i < dx.size(); ++i) {
            const double atol = dae.is_current(i) ? opt.abstol_i : opt.abstol_v;
            m = std::max(m, std::abs(dx[i]) / (atol + opt.reltol * std::abs(x[i])));
        }
        return m;
    }
};

inline bool try_newton(DcProblem& p, Eigen::VectorXd& x, int& iterations) {
    Eigen::VectorXd trial = x;
    NewtonResult r;
    try {
        r = newton_solve(p, trial, NewtonOptions{p.opt.max_iterations, 20});
    } catch (const Error& e) {
        if (e.code() != Errc::SingularSystem) {
            throw;
        }
        return false;
    }
    iterations += r.iterations;
    if (r.converged() && trial.allFinite()) {
        x = trial;
        return true;
    }
    return false;
}

}  // namespace mna_detail

/// DC solution of f(x) = s(t0): plain Newton, then gmin stepping, then source stepping.
[[nodiscard]] inline OperatingPoint dc_operating_point(const DaeSystem& dae, double t0, const DcOptions& opt = {}) {
    using mna_detail::DcProblem;
    using mna_detail::try_newton;
    OperatingPoint op;
    DcProblem p{dae, dae.eval_s(t0), 0.0, 1.0, opt, {}};
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(dae.dim());

    Eigen::VectorXd x = zero;
    if (try_newton(p, x, op.iterations)) {
        op = {x, true, op.iterations, "newton"};
        return op;
    }

    // decade steps from 1e-3 down to 1e-12; a failed step retries with a smaller ratio
    x = zero;
    p.gshunt = 1e-3;
    bool ok = try_newton(p, x, op.iterations);
    double g = p.gshunt;
    double ratio = 10.0;
    while (ok && g > 1e-12) {
        const double next = std::max(g / ratio, 1e-12);
        p.gshunt = next;
        if (try_newton(p, x, op.iterations)) {
            g = next;
            ratio = std::min(ratio * ratio, 10.0);
        } else {
            ratio = std::sqrt(ratio);
            ok = ratio > 1.001;
        }
    }
    p.gshunt = 0.0;
    if (ok && try_newton(p, x, op.iterations)) {
        op = {x, true, op.iterations, "gmin"};
        return op;
    }

    x = zero;
    double alpha = 0.0;
    double step = 0.1;
    while (alpha < 1.0) {
        const double next = std::min(1.0, alpha + step);
        p.alpha = next;
        Eigen::VectorXd trial = x;
        if (try_newton(p, trial, op.iterations)) {
            x = trial;
            alpha = next;
            step = std::min(0.5, step * 1.5);
        } else {
            step *= 0.5;
            if (step < 1e-6) {
                throw Error(Errc::NoDcConvergence, "DC operating point failed: source stepping stalled at " +
                                                       std::to_string(alpha));
            }
        }
    }
    op = {x, true, op.iterations, "source"};
    return op;
}

}  // namespace wavesim

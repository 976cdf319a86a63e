#pragma once

// Spline Galerkin discretisation of d/dt q(x) + f(x) = s(t) on one interval.
//
// Trial functions are the order-k B-splines phi_0..phi_n of a knot grid. The
// residual is tested against phi_1..phi_n; the initial condition x(t_a) = x0
// takes the place of phi_0, whose support is the only one touching t_a.
// Testing with the trial space keeps the influence of a local defect local,
// also on algebraic rows and stiff modes. Coefficients are flattened
// basis-major, c[i * dim + u], the column-major storage of a dim x (n+1)
// coefficient matrix.

#include "wavesim/error.hpp"
#include "wavesim/newton.hpp"
#include "wavesim/spline.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace wavesim {

template <typename Dae>
struct GalerkinProblem {
    const Dae* dae = nullptr;
    KnotGrid trial;
    QuadratureRule quad;  // reference rule on [-1, 1], mapped per span
    Eigen::VectorXd x0;
    double ta = 0.0;
    double tb = 0.0;

    [[nodiscard]] int dim() const { return dae->dim(); }
    [[nodiscard]] Eigen::Index size() const {
        return static_cast<Eigen::Index>(trial.dimension()) * dae->dim();
    }
};

template <typename Dae>
[[nodiscard]] GalerkinProblem<Dae> make_galerkin_problem(const Dae& dae, KnotGrid trial, Eigen::VectorXd x0,
                                                         int quad_points = 0) {
    if (trial.order() < 2) {
        throw Error(Errc::InvalidOrder, "Galerkin trial space needs order >= 2");
    }
    if (x0.size() != dae.dim()) {
        throw Error(Errc::InvalidParam, "initial value has the wrong size");
    }
    GalerkinProblem<Dae> gp;
    gp.dae = &dae;
    gp.quad = gauss_legendre(quad_points > 0 ? quad_points : trial.order() + 1);
    gp.ta = trial.front();
    gp.tb = trial.back();
    gp.trial = std::move(trial);
    gp.x0 = std::move(x0);
    return gp;
}

[[nodiscard]] inline Eigen::VectorXd flatten(const SplineCoeffs& c) {
    return Eigen::Map<const Eigen::VectorXd>(c.coeffs.data(), c.coeffs.size());
}

[[nodiscard]] inline SplineCoeffs unflatten(const KnotGrid& g, const Eigen::VectorXd& v, Eigen::Index dim) {
    return {g, Eigen::Map<const Eigen::MatrixXd>(v.data(), dim, v.size() / dim)};
}

namespace galerkin_detail {

/// Residual and/or Jacobian in one sweep over spans and quadrature points.
template <typename Dae>
void assemble(const GalerkinProblem<Dae>& gp, const Eigen::MatrixXd& c, Eigen::VectorXd* res,
              Eigen::SparseMatrix<double>* jac) {
    const Dae& dae = *gp.dae;
    const int n = dae.dim();
    const int k = gp.trial.order();
    const Eigen::Index total = gp.size();
    if (c.rows() != n || static_cast<std::size_t>(c.cols()) != gp.trial.dimension()) {
        throw Error(Errc::GridMismatch, "coefficients do not match the Galerkin trial space");
    }
    const bool nonlinear_charge = !dae.charge_is_linear();
    if (res != nullptr) {
        res->setZero(total);
        res->head(n) = c.col(0) - gp.x0;
    }
    std::vector<Eigen::Triplet<double>> trip;
    if (jac != nullptr) {
        trip.reserve(static_cast<std::size_t>(n) + gp.trial.num_spans() * static_cast<std::size_t>(k * k * n * n));
        for (int u = 0; u < n; ++u) {
            trip.emplace_back(u, u, 1.0);
        }
    }

    Eigen::VectorXd q;
    Eigen::VectorXd f;
    Eigen::MatrixXd cm;
    Eigen::MatrixXd gm;
    Eigen::MatrixXd cp;
    Eigen::MatrixXd dcx(n, n);
    Eigen::MatrixXd local(static_cast<Eigen::Index>(k * n), static_cast<Eigen::Index>(k * n));
    for (std::size_t s = 0; s < gp.trial.num_spans(); ++s) {
        const auto& bp = gp.trial.breakpoints();
        const QuadratureRule rule = map_rule(gp.quad, bp[s], bp[s + 1]);
        if (jac != nullptr) {
            local.setZero();
        }
        for (std::size_t p = 0; p < rule.nodes.size(); ++p) {
            const double t = rule.nodes[p];
            const double wq = rule.weights[p];
            const LocalBasis phi = local_basis(gp.trial, s, t, 1);
            Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
            Eigen::VectorXd xd = Eigen::VectorXd::Zero(n);
            for (int j = 0; j < k; ++j) {
                x += phi.d[0][j] * c.col(static_cast<Eigen::Index>(s) + j);
                xd += phi.d[1][j] * c.col(static_cast<Eigen::Index>(s) + j);
            }
            dae.evaluate(x, q, f, &cm, jac != nullptr ? &gm : nullptr);
            if (res != nullptr) {
                const Eigen::VectorXd r = cm * xd + f - dae.eval_s(t);
                for (int l = s == 0 ? 1 : 0; l < k; ++l) {
                    res->segment((static_cast<Eigen::Index>(s) + l) * n, n) += wq * phi.d[0][l] * r;
                }
            }
            if (jac == nullptr) {
                continue;
            }
            // d/dx (C(x) x') contracted with x', by forward differences of C
            if (nonlinear_charge) {
                for (int v = 0; v < n; ++v) {
                    const double h = 1e-7 * (1.0 + std::abs(x[v]));
                    Eigen::VectorXd xp = x;
                    xp[v] += h;
                    Eigen::VectorXd qp;
                    Eigen::VectorXd fp;
                    dae.evaluate(xp, qp, fp, &cp, nullptr);
                    dcx.col(v) = (cp - cm) * xd / h;
                }
            }
            for (int l = s == 0 ? 1 : 0; l < k; ++l) {
                for (int i = 0; i < k; ++i) {
                    auto blk = local.block(l * n, i * n, n, n);
                    blk += (wq * phi.d[0][l] * phi.d[1][i]) * cm + (wq * phi.d[0][l] * phi.d[0][i]) * gm;
                    if (nonlinear_charge) {
                        blk += (wq * phi.d[0][l] * phi.d[0][i]) * dcx;
                    }
                }
            }
        }
        if (jac != nullptr) {
            const Eigen::Index row0 = static_cast<Eigen::Index>(s) * n;
            const Eigen::Index col0 = static_cast<Eigen::Index>(s) * n;
            for (Eigen::Index cc = 0; cc < local.cols(); ++cc) {
                for (Eigen::Index rr = 0; rr < local.rows(); ++rr) {
                    if (local(rr, cc) != 0.0) {
                        trip.emplace_back(row0 + rr, col0 + cc, local(rr, cc));
                    }
                }
            }
        }
    }
    if (jac != nullptr) {
        jac->resize(total, total);
        jac->setFromTriplets(trip.begin(), trip.end());
        jac->makeCompressed();
    }
}

}  // namespace galerkin_detail

/// Row block 0: x(t_a) - x0. Row block l >= 1: integral of the DAE residual against phi_l.
template <typename Dae>
[[nodiscard]] Eigen::VectorXd assemble_residual(const GalerkinProblem<Dae>& gp, const SplineCoeffs& c) {
    Eigen::VectorXd r;
    galerkin_detail::assemble(gp, c.coeffs, &r, nullptr);
    return r;
}

template <typename Dae>
[[nodiscard]] Eigen::SparseMatrix<double> assemble_jacobian(const GalerkinProblem<Dae>& gp, const SplineCoeffs& c) {
    Eigen::SparseMatrix<double> j;
    galerkin_detail::assemble(gp, c.coeffs, nullptr, &j);
    return j;
}

/// Scale of the Newton and refinement tests: absolute tolerance per unknown.
template <typename Dae>
[[nodiscard]] Eigen::VectorXd unknown_atol(const Dae& dae, double tol, double current_factor) {
    Eigen::VectorXd a(dae.dim());
    for (int u = 0; u < dae.dim(); ++u) {
        a[u] = dae.is_current(u) ? tol * current_factor : tol;
    }
    return a;
}

struct GalerkinNewtonOptions {
    double tol = 1e-4;
    double current_factor = 1e-3;  // currents are checked against tol * this
    double weight = 0.1;           // Newton stops at corrections below weight * tolerance
    int max_iterations = 30;
    int max_halvings = 8;
    double max_voltage_step = 0.5;  // per-iteration cap on voltage coefficients; nonlinear circuits only
};

struct GalerkinNewtonResult {
    SplineCoeffs solution;
    NewtonStatus status = NewtonStatus::IterationLimit;
    int iterations = 0;
    double last_norm = 0.0;
    [[nodiscard]] bool converged() const { return status == NewtonStatus::Converged; }
};

namespace galerkin_detail {

template <typename Dae>
struct NewtonAdapter {
    const GalerkinProblem<Dae>& gp;
    Eigen::VectorXd atol;
    double rtol;
    double weight;
    double max_step;  // <= 0 disables the cap
    Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
    bool analysed = false;

    Eigen::MatrixXd as_matrix(const Eigen::VectorXd& v) const {
        return Eigen::Map<const Eigen::MatrixXd>(v.data(), gp.dim(), v.size() / gp.dim());
    }

    Eigen::VectorXd residual(const Eigen::VectorXd& c) {
        Eigen::VectorXd r;
        assemble(gp, as_matrix(c), &r, nullptr);
        return r;
    }

    void factor(const Eigen::VectorXd& c) {
        Eigen::SparseMatrix<double> j;
        assemble(gp, as_matrix(c), nullptr, &j);
        if (!analysed) {
            lu.analyzePattern(j);
            analysed = true;
        }
        lu.factorize(j);
        if (lu.info() != Eigen::Success) {
            throw Error(Errc::SingularSystem, "Galerkin Jacobian is singular");
        }
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& r) { return lu.solve(r); }

    void limit(Eigen::VectorXd& dx, const Eigen::VectorXd&) const {
        if (!(max_step > 0.0)) {
            return;
        }
        const Eigen::Index n = gp.dim();
        double big = 0.0;
        for (Eigen::Index i = 0; i < dx.size(); ++i) {
            if (!gp.dae->is_current(static_cast<int>(i % n))) {
                big = std::max(big, std::abs(dx[i]));
            }
        }
        if (big > max_step) {
            dx *= max_step / big;
        }
    }

    double norm(const Eigen::VectorXd& dx, const Eigen::VectorXd& x) const {
        const Eigen::Index n = gp.dim();
        double acc = 0.0;
        for (Eigen::Index i = 0; i < dx.size(); ++i) {
            const double z = dx[i] / (weight * (atol[i % n] + rtol * std::abs(x[i])));
            acc += z * z;
        }
        return std::sqrt(acc / static_cast<double>(dx.size()));
    }
};

}  // namespace galerkin_detail

/// Damped Newton on the Galerkin system. Iteration-cap exhaustion is reported
/// as a status; a singular Jacobian throws SingularSystem.
template <typename Dae>
[[nodiscard]] GalerkinNewtonResult galerkin_newton(const GalerkinProblem<Dae>& gp, const SplineCoeffs& c_init,
                                                   const GalerkinNewtonOptions& opt = {}) {
    double cap = opt.max_voltage_step;
    if constexpr (requires(const Dae& d) { d.is_linear(); }) {
        if (gp.dae->is_linear()) {
            cap = 0.0;
        }
    }
    galerkin_detail::NewtonAdapter<Dae> ad{gp, unknown_atol(*gp.dae, opt.tol, opt.current_factor), opt.tol,
                                           opt.weight, cap, {}, false};
    Eigen::VectorXd c = flatten(c_init);
    const NewtonResult nr = newton_solve(ad, c, NewtonOptions{opt.max_iterations, opt.max_halvings});
    GalerkinNewtonResult out;
    out.status = nr.status;
    out.iterations = nr.iterations;
    out.last_norm = nr.last_norm;
    out.solution = unflatten(gp.trial, c, gp.dim());
    if (nr.converged()) {
        // the initial-condition rows are linear; make them hold exactly
        out.solution.coeffs.col(0) = gp.x0;
    }
    return out;
}

/// Per-span refinement indicators, scaled so that 1 means "at tolerance".
///
/// The DAE residual on each span is tested against the Legendre polynomials of
/// degree k-1 and k, the first functionals the test space on that span does not
/// contain. The moments are turned into a state-space error estimate through
/// the local backward-Euler matrix C/h + G and weighted per unknown.
template <typename Dae>
[[nodiscard]] std::vector<double> refinement_indicators(const GalerkinProblem<Dae>& gp, const SplineCoeffs& c,
                                                        double tol, double current_factor) {
    const Dae& dae = *gp.dae;
    const int n = dae.dim();
    const int k = gp.trial.order();
    const Eigen::VectorXd atol = unknown_atol(dae, tol, current_factor);
    const QuadratureRule ref = gauss_legendre(k + 3);
    auto legendre = [](int deg, double x) {
        double p0 = 1.0;
        double p1 = x;
        if (deg == 0) {
            return p0;
        }
        for (int j = 2; j <= deg; ++j) {
            const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
            p0 = p1;
            p1 = p2;
        }
        return p1;
    };
    std::vector<double> out(gp.trial.num_spans(), 0.0);
    Eigen::VectorXd q;
    Eigen::VectorXd f;
    Eigen::MatrixXd cm;
    Eigen::MatrixXd gm;
    for (std::size_t s = 0; s < out.size(); ++s) {
        const double a = gp.trial.breakpoints()[s];
        const double b = gp.trial.breakpoints()[s + 1];
        const double h = b - a;
        Eigen::VectorXd m1 = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd m2 = Eigen::VectorXd::Zero(n);
        for (std::size_t p = 0; p < ref.nodes.size(); ++p) {
            const double xi = ref.nodes[p];
            const double t = 0.5 * (a + b) + 0.5 * h * xi;
            const LocalBasis phi = local_basis(gp.trial, s, t, 1);
            Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
            Eigen::VectorXd xd = Eigen::VectorXd::Zero(n);
            for (int j = 0; j < k; ++j) {
                x += phi.d[0][j] * c.coeffs.col(static_cast<Eigen::Index>(s) + j);
                xd += phi.d[1][j] * c.coeffs.col(static_cast<Eigen::Index>(s) + j);
            }
            dae.evaluate(x, q, f, &cm, nullptr);
            const Eigen::VectorXd r = cm * xd + f - dae.eval_s(t);
            m1 += (ref.weights[p] * 0.5 * (2 * k - 1) * legendre(k - 1, xi)) * r;
            m2 += (ref.weights[p] * 0.5 * (2 * k + 1) * legendre(k, xi)) * r;
        }
        const Eigen::VectorXd xm = eval_expansion(c, 0.5 * (a + b));
        dae.evaluate(xm, q, f, &cm, &gm);
        const Eigen::MatrixXd local = cm / h + gm;
        Eigen::MatrixXd rhs(n, 2);
        rhs << m1, m2;
        const Eigen::MatrixXd e = local.fullPivLu().solve(rhs);
        double worst = 0.0;
        for (int u = 0; u < n; ++u) {
            const double w = atol[u] + tol * std::abs(xm[u]);
            worst = std::max(worst, e.row(u).cwiseAbs().maxCoeff() / w);
        }
        out[s] = std::isfinite(worst) ? worst : std::numeric_limits<double>::infinity();
    }
    return out;
}

}  // namespace wavesim

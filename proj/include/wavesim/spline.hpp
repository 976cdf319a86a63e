#pragma once

// Non-uniform B-splines on clamped knot vectors: local evaluation of values and
// derivatives (de Boor / Piegl-Tiller), Boehm knot insertion, Greville
// interpolation and Gauss-Legendre quadrature on breakpoint spans.

#include "wavesim/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace wavesim {

inline constexpr int kMaxSplineOrder = 8;

/// Breakpoints t_0 < ... < t_m together with the spline order k. The clamped
/// knot vector repeats both end breakpoints k times, so the spline space has
/// dimension m + k - 1 and the first/last basis functions interpolate the ends.
class KnotGrid {
public:
    KnotGrid() = default;

    KnotGrid(std::vector<double> breakpoints, int order)
        : breakpoints_(std::move(breakpoints)), order_(order) {
        if (order_ < 1 || order_ > kMaxSplineOrder) {
            throw Error(Errc::InvalidOrder, "spline order " + std::to_string(order_) +
                                                " outside [1, " + std::to_string(kMaxSplineOrder) + "]");
        }
        if (breakpoints_.size() < 2) {
            throw Error(Errc::InvalidGrid, "need at least two breakpoints");
        }
        for (std::size_t i = 0; i < breakpoints_.size(); ++i) {
            if (!std::isfinite(breakpoints_[i])) {
                throw Error(Errc::InvalidGrid, "non-finite breakpoint");
            }
            if (i > 0 && !(breakpoints_[i] > breakpoints_[i - 1])) {
                throw Error(Errc::InvalidGrid, "breakpoints must be strictly increasing (index " +
                                                   std::to_string(i) + ")");
            }
        }
        knots_.reserve(breakpoints_.size() + 2 * static_cast<std::size_t>(order_ - 1));
        knots_.insert(knots_.end(), static_cast<std::size_t>(order_ - 1), breakpoints_.front());
        knots_.insert(knots_.end(), breakpoints_.begin(), breakpoints_.end());
        knots_.insert(knots_.end(), static_cast<std::size_t>(order_ - 1), breakpoints_.back());
    }

    [[nodiscard]] int order() const noexcept { return order_; }
    [[nodiscard]] const std::vector<double>& breakpoints() const noexcept { return breakpoints_; }
    [[nodiscard]] const std::vector<double>& knots() const noexcept { return knots_; }
    [[nodiscard]] std::size_t num_spans() const noexcept { return breakpoints_.size() - 1; }
    [[nodiscard]] std::size_t dimension() const noexcept {
        return knots_.size() - static_cast<std::size_t>(order_);
    }
    [[nodiscard]] double front() const noexcept { return breakpoints_.front(); }
    [[nodiscard]] double back() const noexcept { return breakpoints_.back(); }
    [[nodiscard]] double span_length(std::size_t s) const { return breakpoints_[s + 1] - breakpoints_[s]; }
    [[nodiscard]] bool contains(double t) const noexcept { return t >= front() && t <= back(); }

    /// Span s with t_s <= t < t_{s+1}; the right end belongs to the last span.
    [[nodiscard]] std::size_t span_index(double t) const {
        if (!contains(t)) {
            throw Error(Errc::OutOfDomain, "t=" + std::to_string(t) + " outside [" +
                                               std::to_string(front()) + ", " + std::to_string(back()) + "]");
        }
        if (t >= back()) {
            return num_spans() - 1;
        }
        auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
        return static_cast<std::size_t>(it - breakpoints_.begin()) - 1;
    }

    /// Knot-vector window [tau_i, tau_{i+k}] carrying basis function i.
    [[nodiscard]] std::pair<double, double> support(std::size_t i) const {
        return {knots_[i], knots_[i + static_cast<std::size_t>(order_)]};
    }

    bool operator==(const KnotGrid&) const = default;

private:
    std::vector<double> breakpoints_;
    std::vector<double> knots_;
    int order_ = 0;
};

/// Public constructor with the contract's order restriction (k >= 2).
[[nodiscard]] inline KnotGrid make_knot_grid(std::vector<double> breakpoints, int order) {
    if (order < 2) {
        throw Error(Errc::InvalidOrder, "spline order must be at least 2");
    }
    return KnotGrid(std::move(breakpoints), order);
}

[[nodiscard]] inline std::vector<double> uniform_breakpoints(double a, double b, std::size_t spans) {
    std::vector<double> bp(spans + 1);
    for (std::size_t i = 0; i <= spans; ++i) {
        bp[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(spans);
    }
    bp.back() = b;
    return bp;
}

/// Values and derivatives of the k basis functions that are nonzero on one span.
/// d[nu][j] is the nu-th derivative of basis function first + j.
struct LocalBasis {
    std::size_t first = 0;
    int order = 0;
    int nders = 0;
    std::array<std::array<double, kMaxSplineOrder>, kMaxSplineOrder> d{};
};

/// Piegl & Tiller, "The NURBS Book", algorithm A2.3, evaluated on span s.
[[nodiscard]] inline LocalBasis local_basis(const KnotGrid& grid, std::size_t s, double t, int nders) {
    const int k = grid.order();
    const int p = k - 1;
    const auto& U = grid.knots();
    const std::size_t mu = s + static_cast<std::size_t>(p);

    LocalBasis out;
    out.first = s;
    out.order = k;
    out.nders = std::max(0, nders);
    const int n = std::min(out.nders, p);

    std::array<std::array<double, kMaxSplineOrder>, kMaxSplineOrder> ndu{};
    std::array<double, kMaxSplineOrder> left{};
    std::array<double, kMaxSplineOrder> right{};
    ndu[0][0] = 1.0;
    for (int j = 1; j <= p; ++j) {
        left[j] = t - U[mu + 1 - static_cast<std::size_t>(j)];
        right[j] = U[mu + static_cast<std::size_t>(j)] - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            ndu[j][r] = right[r + 1] + left[j - r];
            const double temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    for (int j = 0; j <= p; ++j) {
        out.d[0][j] = ndu[j][p];
    }

    std::array<std::array<double, kMaxSplineOrder>, 2> a{};
    for (int r = 0; r <= p; ++r) {
        int s1 = 0;
        int s2 = 1;
        a[0][0] = 1.0;
        for (int kk = 1; kk <= n; ++kk) {
            double dsum = 0.0;
            const int rk = r - kk;
            const int pk = p - kk;
            if (r >= kk) {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                dsum = a[s2][0] * ndu[rk][pk];
            }
            const int j1 = rk >= -1 ? 1 : -rk;
            const int j2 = (r - 1 <= pk) ? kk - 1 : p - r;
            for (int j = j1; j <= j2; ++j) {
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
                dsum += a[s2][j] * ndu[rk + j][pk];
            }
            if (r <= pk) {
                a[s2][kk] = -a[s1][kk - 1] / ndu[pk + 1][r];
                dsum += a[s2][kk] * ndu[r][pk];
            }
            out.d[kk][r] = dsum;
            std::swap(s1, s2);
        }
    }
    double factor = p;
    for (int kk = 1; kk <= n; ++kk) {
        for (int j = 0; j <= p; ++j) {
            out.d[kk][j] *= factor;
        }
        factor *= (p - kk);
    }
    return out;
}

[[nodiscard]] inline LocalBasis local_basis_at(const KnotGrid& grid, double t, int nders) {
    return local_basis(grid, grid.span_index(t), t, nders);
}

/// nu-th derivative of basis function `index` at t; zero once nu reaches the order.
[[nodiscard]] inline double bspline_deriv(const KnotGrid& grid, std::size_t index, double t, int nu) {
    if (index >= grid.dimension()) {
        throw Error(Errc::OutOfRange, "basis index " + std::to_string(index) + " >= dimension " +
                                          std::to_string(grid.dimension()));
    }
    const std::size_t s = grid.span_index(t);
    if (nu >= grid.order() || nu < 0) {
        return 0.0;
    }
    if (index < s || index >= s + static_cast<std::size_t>(grid.order())) {
        return 0.0;
    }
    const LocalBasis lb = local_basis(grid, s, t, nu);
    return lb.d[nu][index - s];
}

[[nodiscard]] inline double bspline_eval(const KnotGrid& grid, std::size_t index, double t) {
    return bspline_deriv(grid, index, t, 0);
}

/// A vector-valued spline: one row per unknown, one column per basis function.
struct SplineCoeffs {
    KnotGrid grid;
    Eigen::MatrixXd coeffs;

    SplineCoeffs() = default;
    SplineCoeffs(KnotGrid g, Eigen::MatrixXd c) : grid(std::move(g)), coeffs(std::move(c)) {
        if (static_cast<std::size_t>(coeffs.cols()) != grid.dimension()) {
            throw Error(Errc::GridMismatch, "coefficient columns " + std::to_string(coeffs.cols()) +
                                                " != spline dimension " + std::to_string(grid.dimension()));
        }
    }

    [[nodiscard]] Eigen::Index rows() const noexcept { return coeffs.rows(); }

    /// Constant function with value `v` in every unknown.
    [[nodiscard]] static SplineCoeffs constant(KnotGrid g, const Eigen::VectorXd& v) {
        Eigen::MatrixXd c = v.replicate(1, static_cast<Eigen::Index>(g.dimension()));
        return {std::move(g), std::move(c)};
    }
};

[[nodiscard]] inline Eigen::VectorXd eval_expansion(const SplineCoeffs& sc, double t, int nu = 0) {
    const std::size_t s = sc.grid.span_index(t);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(sc.rows());
    if (nu < 0 || nu >= sc.grid.order()) {
        return out;
    }
    // clamped ends interpolate their coefficients; skip the rounding of the recurrence
    if (nu == 0 && t == sc.grid.front()) {
        return sc.coeffs.col(0);
    }
    if (nu == 0 && t == sc.grid.back()) {
        return sc.coeffs.col(sc.coeffs.cols() - 1);
    }
    const LocalBasis lb = local_basis(sc.grid, s, t, nu);
    for (int j = 0; j < sc.grid.order(); ++j) {
        out += lb.d[nu][j] * sc.coeffs.col(static_cast<Eigen::Index>(s) + j);
    }
    return out;
}

/// Boehm insertion of a single new breakpoint; the represented function is unchanged.
[[nodiscard]] inline SplineCoeffs insert_knot(const SplineCoeffs& sc, double t_new) {
    const KnotGrid& g = sc.grid;
    if (!(t_new >= g.front() && t_new <= g.back())) {
        throw Error(Errc::OutOfDomain, "knot " + std::to_string(t_new) + " outside the grid");
    }
    const auto& bp = g.breakpoints();
    if (std::binary_search(bp.begin(), bp.end(), t_new)) {
        throw Error(Errc::DuplicateKnot, "knot " + std::to_string(t_new) + " already present");
    }
    const int k = g.order();
    const auto& U = g.knots();
    const std::size_t s = g.span_index(t_new);
    const std::size_t mu = s + static_cast<std::size_t>(k - 1);
    const Eigen::Index n = static_cast<Eigen::Index>(g.dimension());

    Eigen::MatrixXd q(sc.rows(), n + 1);
    for (Eigen::Index i = 0; i <= n; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        if (iu + static_cast<std::size_t>(k - 1) <= mu) {
            q.col(i) = sc.coeffs.col(i);
        } else if (iu >= mu + 1) {
            q.col(i) = sc.coeffs.col(i - 1);
        } else {
            const double alpha = (t_new - U[iu]) / (U[iu + static_cast<std::size_t>(k - 1)] - U[iu]);
            q.col(i) = alpha * sc.coeffs.col(i) + (1.0 - alpha) * sc.coeffs.col(i - 1);
        }
    }
    std::vector<double> nbp = bp;
    nbp.insert(std::upper_bound(nbp.begin(), nbp.end(), t_new), t_new);
    return {KnotGrid(std::move(nbp), k), std::move(q)};
}

/// Inserts every knot of `t_new` (any order) that is not yet a breakpoint.
[[nodiscard]] inline SplineCoeffs insert_knots(SplineCoeffs sc, std::span<const double> t_new) {
    for (double t : t_new) {
        sc = insert_knot(sc, t);
    }
    return sc;
}

/// Greville abscissae, the standard well-posed collocation sites.
[[nodiscard]] inline std::vector<double> greville_abscissae(const KnotGrid& g) {
    const int k = g.order();
    const auto& U = g.knots();
    std::vector<double> xi(g.dimension());
    for (std::size_t i = 0; i < xi.size(); ++i) {
        double sum = 0.0;
        for (int j = 1; j < k; ++j) {
            sum += U[i + static_cast<std::size_t>(j)];
        }
        xi[i] = k > 1 ? sum / (k - 1) : 0.5 * (U[i] + U[i + 1]);
    }
    return xi;
}

/// Spline interpolant at the Greville abscissae of a vector-valued function.
[[nodiscard]] inline SplineCoeffs interpolate(const KnotGrid& g,
                                              const std::function<Eigen::VectorXd(double)>& fn) {
    const auto xi = greville_abscissae(g);
    const auto n = static_cast<Eigen::Index>(xi.size());
    Eigen::MatrixXd colloc = Eigen::MatrixXd::Zero(n, n);
    Eigen::MatrixXd rhs;
    for (Eigen::Index r = 0; r < n; ++r) {
        const LocalBasis lb = local_basis_at(g, xi[static_cast<std::size_t>(r)], 0);
        for (int j = 0; j < g.order(); ++j) {
            colloc(r, static_cast<Eigen::Index>(lb.first) + j) = lb.d[0][j];
        }
        const Eigen::VectorXd v = fn(xi[static_cast<std::size_t>(r)]);
        if (r == 0) {
            rhs.resize(n, v.size());
        }
        rhs.row(r) = v.transpose();
    }
    Eigen::MatrixXd c = colloc.partialPivLu().solve(rhs).transpose();
    return {g, std::move(c)};
}

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

/// Gauss-Legendre rule on [-1, 1] by Newton iteration on P_n.
[[nodiscard]] inline QuadratureRule gauss_legendre(int npoints) {
    if (npoints < 1) {
        throw Error(Errc::InvalidSpan, "quadrature needs at least one point");
    }
    const int n = npoints;
    // returns (P_n(x), P_n'(x))
    auto legendre = [n](double x) {
        double p0 = 1.0;
        double p1 = x;
        for (int j = 2; j <= n; ++j) {
            const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
            p0 = p1;
            p1 = p2;
        }
        return std::pair{p1, n * (x * p1 - p0) / (x * x - 1.0)};
    };

    QuadratureRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        for (int iter = 0; iter < 100; ++iter) {
            const auto [p, dp] = legendre(x);
            const double dx = p / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) {
                break;
            }
        }
        const double dp = legendre(x).second;
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        const auto lo = static_cast<std::size_t>(i);
        const auto hi = static_cast<std::size_t>(n - 1 - i);
        rule.nodes[lo] = -x;
        rule.nodes[hi] = x;
        rule.weights[lo] = w;
        rule.weights[hi] = w;
    }
    if (n % 2 == 1) {
        rule.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
    }
    return rule;
}

/// Maps a reference rule on [-1, 1] onto [a, b].
[[nodiscard]] inline QuadratureRule map_rule(const QuadratureRule& ref, double a, double b) {
    QuadratureRule r;
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    r.nodes.reserve(ref.nodes.size());
    r.weights.reserve(ref.weights.size());
    for (std::size_t i = 0; i < ref.nodes.size(); ++i) {
        r.nodes.push_back(mid + half * ref.nodes[i]);
        r.weights.push_back(half * ref.weights[i]);
    }
    return r;
}

[[nodiscard]] inline QuadratureRule gauss_rule(double a, double b, int npoints) {
    if (!(b > a) || !std::isfinite(a) || !std::isfinite(b)) {
        throw Error(Errc::InvalidSpan, "degenerate quadrature span");
    }
    return map_rule(gauss_legendre(npoints), a, b);
}

}  // namespace wavesim

#pragma once

// Damped Newton iteration with a natural-monotonicity line search.
//
// The problem type supplies
//   Eigen::VectorXd residual(const Eigen::VectorXd& x);
//   void factor(const Eigen::VectorXd& x);              // Jacobian at x, throws on singularity
//   Eigen::VectorXd solve(const Eigen::VectorXd& rhs);  // with the last factorization
//   double norm(const Eigen::VectorXd& dx, const Eigen::VectorXd& x);  // scaled, converged at <= 1
// and optionally
//   void limit(Eigen::VectorXd& dx, const Eigen::VectorXd& x);  // shortens an oversized step

#include "wavesim/error.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace wavesim {

struct NewtonOptions {
    int max_iterations = 50;
    int max_halvings = 12;
};

enum class NewtonStatus { Converged, IterationLimit, DampingExhausted };

struct NewtonResult {
    NewtonStatus status = NewtonStatus::IterationLimit;
    int iterations = 0;
    double last_norm = 0.0;
    [[nodiscard]] bool converged() const { return status == NewtonStatus::Converged; }
};

template <typename Problem>
NewtonResult newton_solve(Problem& problem, Eigen::VectorXd& x, const NewtonOptions& opt = {}) {
    NewtonResult res;
    for (int it = 1; it <= opt.max_iterations; ++it) {
        res.iterations = it;
        const Eigen::VectorXd f0 = problem.residual(x);
        problem.factor(x);
        Eigen::VectorXd dx = -problem.solve(f0);
        const double n0 = problem.norm(dx, x);
        res.last_norm = n0;
        if (!std::isfinite(n0)) {
            res.status = NewtonStatus::DampingExhausted;
            return res;
        }
        if (n0 <= 1.0) {
            x += dx;
            res.status = NewtonStatus::Converged;
            return res;
        }
        if constexpr (requires(Eigen::VectorXd& d) { problem.limit(d, x); }) {
            problem.limit(dx, x);
        }
        // simplified corrections reuse the factorization at x
        double lambda = 1.0;
        bool accepted = false;
        Eigen::VectorXd trial;
        Eigen::VectorXd simplified;
        double n1 = 0.0;
        for (int h = 0; h <= opt.max_halvings; ++h, lambda *= 0.5) {
            trial = x + lambda * dx;
            const Eigen::VectorXd f1 = problem.residual(trial);
            if (!f1.allFinite()) {
                continue;
            }
            simplified = -problem.solve(f1);
            n1 = problem.norm(simplified, trial);
            if (std::isfinite(n1) && (n1 < n0 || n1 <= 1.0)) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            res.status = NewtonStatus::DampingExhausted;
            return res;
        }
        x = trial;
        res.last_norm = n1;
        if (n1 <= 1.0 && lambda == 1.0) {
            x += simplified;
            res.status = NewtonStatus::Converged;
            return res;
        }
    }
    res.status = NewtonStatus::IterationLimit;
    return res;
}

}  // namespace wavesim

#include "test_support.hpp"

#include "wavesim/mra.hpp"

#include <cmath>
#include <numeric>
#include <random>

using namespace wavesim;
using Catch::Approx;

namespace {

GridHierarchy random_hierarchy(std::mt19937& rng, int order, int levels) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<double> bp{0.0, 1.0};
    const int interior = static_cast<int>(rng() % 5);
    for (int i = 0; i < interior; ++i) {
        bp.push_back(0.05 + 0.9 * u01(rng));
    }
    std::sort(bp.begin(), bp.end());
    GridHierarchy h(make_knot_grid(bp, order), levels + 1);
    for (int l = 0; l < levels; ++l) {
        const auto& g = h.finest();
        std::vector<std::size_t> spans;
        for (std::size_t s = 0; s < g.num_spans(); ++s) {
            if (u01(rng) < 0.5) {
                spans.push_back(s);
            }
        }
        if (spans.empty()) {
            spans.push_back(rng() % g.num_spans());
        }
        h = refine_spans(h, h.top_level(), spans);
    }
    // occasionally refine an unrefined span of a lower level as well
    if (h.num_levels() > 2) {
        const auto& g = h.level(1);
        for (std::size_t s = 0; s < g.num_spans(); ++s) {
            if (!h.is_refined(1, s) && u01(rng) < 0.3) {
                const std::size_t one[] = {s};
                h = refine_spans(h, 1, one);
            }
        }
    }
    return h;
}

Eigen::MatrixXd random_coeffs(std::mt19937& rng, Eigen::Index rows, std::size_t cols) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    return Eigen::MatrixXd::NullaryExpr(rows, static_cast<Eigen::Index>(cols), [&] { return u(rng); });
}

double max_diff(const SplineCoeffs& a, const SplineCoeffs& b, int samples = 2000) {
    double worst = 0.0;
    const double lo = a.grid.front();
    const double hi = a.grid.back();
    for (int s = 0; s <= samples; ++s) {
        const double t = lo + (hi - lo) * s / samples;
        worst = std::max(worst, (eval_expansion(a, t) - eval_expansion(b, t)).cwiseAbs().maxCoeff());
    }
    return worst;
}

GridHierarchy uniform_hierarchy(std::size_t spans, int order, int levels) {
    GridHierarchy h(make_knot_grid(uniform_breakpoints(0.0, 1.0, spans), order), levels);
    for (int l = 0; l < levels; ++l) {
        std::vector<std::size_t> all(h.finest().num_spans());
        std::iota(all.begin(), all.end(), 0);
        h = refine_spans(h, h.top_level(), all);
    }
    return h;
}

SplineCoeffs tanh_interpolant(const KnotGrid& g) {
    return interpolate(g, [](double t) {
        Eigen::VectorXd y(1);
        y << std::tanh(50.0 * (t - 0.5));
        return y;
    });
}

}  // namespace

TEST_CASE("refine_spans inserts midpoints", "[mra]") {
    GridHierarchy h(make_knot_grid({0.0, 1.0}, 4), 8);
    const std::size_t s0[] = {0};
    auto h1 = refine_spans(h, 0, s0);
    CHECK(h1.finest().breakpoints() == std::vector<double>{0.0, 0.5, 1.0});
    CHECK(h1.refined_spans(0) == std::vector<std::size_t>{0});

    const std::size_t both[] = {0, 1};
    auto h2 = refine_spans(h1, 1, both);
    CHECK(h2.finest().breakpoints() == std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
    CHECK(h2.num_levels() == 3);
    for (std::size_t j = 0; j + 1 < h2.num_levels(); ++j) {
        for (double t : h2.level(j).breakpoints()) {
            const auto& next = h2.level(j + 1).breakpoints();
            CHECK(std::binary_search(next.begin(), next.end(), t));
        }
    }

    CHECK_ERRC((void)refine_spans(h1, 0, s0), Errc::AlreadyRefined);
    GridHierarchy capped(make_knot_grid({0.0, 1.0}, 4), 1);
    auto c1 = refine_spans(capped, 0, s0);
    CHECK_ERRC((void)refine_spans(c1, 1, s0), Errc::LevelCapExceeded);
}

TEST_CASE("local refinement clusters knots around a transient", "[mra]") {
    GridHierarchy h(make_knot_grid(uniform_breakpoints(0.0, 1.0, 4), 4), 10);
    const double tstar = 0.7;
    for (int l = 0; l < 6; ++l) {
        const std::size_t s[] = {h.finest().span_index(tstar)};
        h = refine_spans(h, h.top_level(), s);
    }
    auto count = [&](double lo, double hi) {
        int n = 0;
        for (double t : h.finest().breakpoints()) {
            n += (t >= lo && t <= hi) ? 1 : 0;
        }
        return n;
    };
    CHECK(count(0.65, 0.75) > count(0.15, 0.25));
}

TEST_CASE("decompose reproduces coarse-space functions with zero details", "[mra]") {
    std::mt19937 rng(3);
    auto h = random_hierarchy(rng, 4, 3);
    // a single cubic polynomial is in every level's space
    auto fine = interpolate(h.finest(), [](double t) {
        Eigen::VectorXd y(2);
        y << 1.0 - 2.0 * t + 0.5 * t * t * t, 4.0;
        return y;
    });
    auto he = decompose(fine, h);
    for (const auto& level : he.details) {
        for (const auto& [u, d] : level) {
            CHECK(d.cwiseAbs().maxCoeff() <= 1e-11);
        }
    }
    CHECK((he.coarse.row(1).array() - 4.0).abs().maxCoeff() <= 1e-12);

    auto wrong = SplineCoeffs(h.coarsest(), Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(h.coarsest().dimension())));
    if (h.num_levels() > 1) {
        CHECK_ERRC((void)decompose(wrong, h), Errc::GridMismatch);
    }
}

TEST_CASE("perfect reconstruction on random hierarchies", "[mra][property]") {
    std::mt19937 rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int order = 2 + trial % 3;
        auto h = random_hierarchy(rng, order, 1 + trial % 4);
        SplineCoeffs fine(h.finest(), random_coeffs(rng, 3, h.finest().dimension()));
        auto back = reconstruct(decompose(fine, h));
        worst = std::max(worst, (back.coeffs - fine.coeffs).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("reconstruct with zero details is knot-insertion prolongation", "[mra]") {
    std::mt19937 rng(5);
    auto h = random_hierarchy(rng, 4, 2);
    HierarchicalExpansion he;
    he.hierarchy = h;
    he.coarse = random_coeffs(rng, 1, h.coarsest().dimension());
    he.details.resize(h.num_levels() - 1);
    auto rec = reconstruct(he);
    SplineCoeffs coarse(h.coarsest(), he.coarse);
    std::vector<double> extra;
    for (double t : h.finest().breakpoints()) {
        const auto& bp = h.coarsest().breakpoints();
        if (!std::binary_search(bp.begin(), bp.end(), t)) {
            extra.push_back(t);
        }
    }
    auto pro = insert_knots(coarse, extra);
    CHECK((rec.coeffs - pro.coeffs).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("a single detail is local", "[mra]") {
    for (int k = 2; k <= 4; ++k) {
        auto h = uniform_hierarchy(8, k, 1);
        HierarchicalExpansion he;
        he.hierarchy = h;
        he.coarse = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(h.coarsest().dimension()));
        he.details.resize(1);
        const double u = h.inserted(0)[3];
        he.details[0][u] = Eigen::VectorXd::Ones(1);
        auto rec = reconstruct(he);
        const auto& bp = h.finest().breakpoints();
        double lo = 1.0;
        double hi = 0.0;
        for (std::size_t s = 0; s + 1 < bp.size(); ++s) {
            for (int i = 0; i <= 16; ++i) {
                const double t = bp[s] + (bp[s + 1] - bp[s]) * (i + 0.5) / 17.0;
                if (std::abs(eval_expansion(rec, t)(0)) > 1e-14) {
                    lo = std::min(lo, bp[s]);
                    hi = std::max(hi, bp[s + 1]);
                }
            }
        }
        const double fine_span = bp[1] - bp[0];
        CHECK((hi - lo) <= k * fine_span + 1e-12);
        CHECK(lo <= u);
        CHECK(hi >= u);
    }
}

TEST_CASE("threshold extremes", "[mra]") {
    std::mt19937 rng(17);
    auto h = random_hierarchy(rng, 4, 3);
    SplineCoeffs fine(h.finest(), random_coeffs(rng, 2, h.finest().dimension()));
    auto he = decompose(fine, h);

    auto keep = threshold(he, 0.0);
    CHECK(keep.dropped.empty());
    CHECK(keep.expansion.hierarchy == h);
    CHECK((reconstruct(keep.expansion).coeffs - fine.coeffs).cwiseAbs().maxCoeff() <= 1e-12);

    auto none = threshold(he, std::numeric_limits<double>::infinity());
    CHECK(none.dropped.size() == he.num_details());
    CHECK(none.expansion.hierarchy.num_levels() == 1);
    CHECK(none.expansion.hierarchy.finest() == h.coarsest());
    CHECK((reconstruct(none.expansion).coeffs - he.coarse).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("thresholding error obeys the dropped-coefficient bound", "[mra][property]") {
    auto h = uniform_hierarchy(8, 4, 5);
    auto fine = tanh_interpolant(h.finest());
    auto he = decompose(fine, h);
    auto res = threshold(he, 1e-3);
    REQUIRE(!res.dropped.empty());
    double bound = 0.0;
    for (const auto& d : res.dropped) {
        bound += he.details[d.level].at(d.position).cwiseAbs().maxCoeff() *
                 detail_function_norm(h, d.level, d.position);
    }
    auto approx = reconstruct(res.expansion);
    CHECK(approx.grid.num_spans() < fine.grid.num_spans());
    const double err = max_diff(fine, approx, 4000);
    CHECK(err <= bound);
    CHECK(err > 0.0);
}

TEST_CASE("un-refinement after thresholding is exact", "[mra][property]") {
    std::mt19937 rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        auto h = random_hierarchy(rng, 2 + trial % 3, 3);
        SplineCoeffs fine(h.finest(), random_coeffs(rng, 1, h.finest().dimension()));
        auto he = decompose(fine, h);
        // zero out roughly half of the details, then compare against the same
        // expansion reconstructed on the original hierarchy
        HierarchicalExpansion zeroed = he;
        std::vector<DetailIndex> drop;
        for (std::size_t j = 0; j < he.details.size(); ++j) {
            for (auto& [u, d] : zeroed.details[j]) {
                if (rng() % 2 == 0) {
                    d.setZero();
                    drop.push_back({j, u});
                }
            }
        }
        auto res = threshold(zeroed, 1e-300);
        CHECK(res.dropped.size() == drop.size());
        CHECK(max_diff(reconstruct(zeroed), reconstruct(res.expansion), 600) <= 1e-12);
        CHECK(res.expansion.hierarchy.finest().num_spans() <= h.finest().num_spans());
    }
}

TEST_CASE("adaptive n-term beats level-capped linear approximation", "[mra][property]") {
    auto h = uniform_hierarchy(8, 4, 7);
    auto fine = tanh_interpolant(h.finest());
    auto he = decompose(fine, h);
    auto truth = [](double t) { return std::tanh(50.0 * (t - 0.5)); };
    auto err_vs_truth = [&](const SplineCoeffs& s) {
        double worst = 0.0;
        for (int i = 0; i <= 20000; ++i) {
            const double t = i / 20000.0;
            worst = std::max(worst, std::abs(eval_expansion(s, t)(0) - truth(t)));
        }
        return worst;
    };
    for (std::size_t J = 0; J <= 2; ++J) {
        auto linear = truncate_levels(he, J);
        const std::size_t n = linear.num_coefficients();
        CHECK(n == h.level(J + 1).dimension());
        auto adaptive = best_n_term(he, n);
        CHECK(adaptive.expansion.num_coefficients() == n);
        const double e_lin = err_vs_truth(reconstruct(linear));
        const double e_ada = err_vs_truth(reconstruct(adaptive.expansion));
        INFO("J=" << J << " n=" << n << " linear=" << e_lin << " adaptive=" << e_ada);
        CHECK(e_ada <= e_lin);
    }
}

TEST_CASE("select_refinement", "[mra]") {
    const double a[] = {1.0, 0.0, 0.0};
    CHECK(select_refinement(a, 0.5) == std::vector<std::size_t>{0});
    const double eq[] = {2.0, 2.0, 2.0};
    CHECK(select_refinement(eq, 0.1).size() == 3);
    const double zero[] = {0.0, 0.0};
    CHECK(select_refinement(zero, 0.1).empty());

    std::vector<double> ind(100);
    for (int i = 0; i < 100; ++i) {
        ind[static_cast<std::size_t>(i)] = std::exp(-std::abs(i - 50) / 3.0);
    }
    auto sel = select_refinement(ind, 0.1);
    std::vector<std::size_t> expected;
    const double mx = *std::max_element(ind.begin(), ind.end());
    for (std::size_t i = 0; i < ind.size(); ++i) {
        if (ind[i] >= 0.1 * mx) {
            expected.push_back(i);
        }
    }
    CHECK(sel == expected);
    REQUIRE(!sel.empty());
    CHECK(sel.back() - sel.front() + 1 == sel.size());
    CHECK(std::find(sel.begin(), sel.end(), 50) != sel.end());
}

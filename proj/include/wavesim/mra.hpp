#pragma once

// Multiresolution representation over nested, non-uniform breakpoint sets.
//
// Level j+1 is level j plus the midpoints of a subset of its spans. Each
// inserted midpoint u owns one detail coefficient: the deviation of the
// level-(j+1) coefficient of the B-spline centred on u from the value predicted
// by knot insertion of the level-j spline. All other level-(j+1) coefficients
// are reproduced exactly by the prediction, so
//
//     fine = A * coarse + E * details
//
// with A the knot-insertion (two-scale) matrix and E selecting one fine
// coefficient per inserted knot. [A | E] is square and is inverted by a sparse
// LU in `decompose`; `reconstruct` applies it forward.

#include "wavesim/error.hpp"
#include "wavesim/spline.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace wavesim {

class GridHierarchy {
public:
    GridHierarchy() = default;

    GridHierarchy(KnotGrid base, int max_level) : max_level_(max_level) {
        if (max_level < 0) {
            throw Error(Errc::LevelCapExceeded, "negative maximal level");
        }
        levels_.push_back(std::move(base));
    }

    [[nodiscard]] int order() const noexcept { return levels_.front().order(); }
    [[nodiscard]] int max_level() const noexcept { return max_level_; }
    [[nodiscard]] std::size_t num_levels() const noexcept { return levels_.size(); }
    [[nodiscard]] std::size_t top_level() const noexcept { return levels_.size() - 1; }
    [[nodiscard]] const KnotGrid& level(std::size_t j) const { return levels_.at(j); }
    [[nodiscard]] const KnotGrid& coarsest() const noexcept { return levels_.front(); }
    [[nodiscard]] const KnotGrid& finest() const noexcept { return levels_.back(); }

    /// Midpoints inserted when going from level j to level j+1 (sorted).
    [[nodiscard]] const std::vector<double>& inserted(std::size_t j) const { return inserted_.at(j); }

    /// Spans of level j that were bisected to form level j+1 (the index set Lambda_j).
    [[nodiscard]] std::vector<std::size_t> refined_spans(std::size_t j) const {
        std::vector<std::size_t> out;
        if (j >= inserted_.size()) {
            return out;
        }
        const auto& g = levels_[j];
        for (double u : inserted_[j]) {
            out.push_back(g.span_index(u));
        }
        return out;
    }

    [[nodiscard]] bool is_refined(std::size_t j, std::size_t span) const {
        const auto& bp = levels_.at(j).breakpoints();
        const double mid = 0.5 * (bp.at(span) + bp.at(span + 1));
        const auto& fine = finest().breakpoints();
        return std::binary_search(fine.begin(), fine.end(), mid);
    }

    bool operator==(const GridHierarchy&) const = default;

private:
    friend GridHierarchy refine_spans(const GridHierarchy&, std::size_t, std::span<const std::size_t>);
    friend struct HierarchyEditor;

    void rebuild() {
        levels_.resize(1);
        for (const auto& ins : inserted_) {
            std::vector<double> bp;
            const auto& prev = levels_.back().breakpoints();
            bp.reserve(prev.size() + ins.size());
            std::merge(prev.begin(), prev.end(), ins.begin(), ins.end(), std::back_inserter(bp));
            levels_.emplace_back(std::move(bp), levels_.front().order());
        }
    }

    std::vector<KnotGrid> levels_;
    std::vector<std::vector<double>> inserted_;
    int max_level_ = 0;
};

/// Internal mutation hooks shared by the thresholding code.
struct HierarchyEditor {
    static void erase(GridHierarchy& h, std::size_t j, double u) {
        auto& ins = h.inserted_[j];
        ins.erase(std::remove(ins.begin(), ins.end(), u), ins.end());
    }
    static void trim_and_rebuild(GridHierarchy& h) {
        while (!h.inserted_.empty() && h.inserted_.back().empty()) {
            h.inserted_.pop_back();
        }
        h.rebuild();
    }
};

/// Bisects the given spans of `level`. Refining the finest level creates a new
/// level; refining a lower level inserts the midpoints into all finer levels.
[[nodiscard]] inline GridHierarchy refine_spans(const GridHierarchy& h, std::size_t level,
                                                std::span<const std::size_t> spans) {
    if (level >= h.num_levels()) {
        throw Error(Errc::OutOfRange, "level " + std::to_string(level) + " does not exist");
    }
    if (static_cast<int>(level) >= h.max_level()) {
        throw Error(Errc::LevelCapExceeded, "refining level " + std::to_string(level) +
                                                " would exceed the maximal level " + std::to_string(h.max_level()));
    }
    const auto& bp = h.level(level).breakpoints();
    const auto& fine = h.finest().breakpoints();
    std::vector<double> mids;
    for (std::size_t s : spans) {
        if (s + 1 >= bp.size()) {
            throw Error(Errc::OutOfRange, "span " + std::to_string(s) + " does not exist at level " +
                                              std::to_string(level));
        }
        const double mid = 0.5 * (bp[s] + bp[s + 1]);
        if (std::binary_search(fine.begin(), fine.end(), mid) ||
            std::find(mids.begin(), mids.end(), mid) != mids.end()) {
            throw Error(Errc::AlreadyRefined, "span " + std::to_string(s) + " at level " + std::to_string(level) +
                                                  " is already refined");
        }
        mids.push_back(mid);
    }
    GridHierarchy out = h;
    if (mids.empty()) {
        return out;
    }
    if (level == h.top_level()) {
        out.inserted_.emplace_back();
    }
    auto& ins = out.inserted_[level];
    ins.insert(ins.end(), mids.begin(), mids.end());
    std::sort(ins.begin(), ins.end());
    out.rebuild();
    return out;
}

namespace mra_detail {

using SparseRow = std::vector<std::pair<Eigen::Index, double>>;

inline SparseRow combine(double a, const SparseRow& x, double b, const SparseRow& y) {
    SparseRow out;
    out.reserve(x.size() + y.size());
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < x.size() || j < y.size()) {
        if (j == y.size() || (i < x.size() && x[i].first < y[j].first)) {
            out.emplace_back(x[i].first, a * x[i].second);
            ++i;
        } else if (i == x.size() || y[j].first < x[i].first) {
            out.emplace_back(y[j].first, b * y[j].second);
            ++j;
        } else {
            out.emplace_back(x[i].first, a * x[i].second + b * y[j].second);
            ++i;
            ++j;
        }
    }
    return out;
}

/// Index of the fine basis function centred on the simple knot u.
inline std::size_t centred_row(const KnotGrid& fine, double u) {
    const auto& U = fine.knots();
    const auto p = static_cast<std::size_t>(std::lower_bound(U.begin(), U.end(), u) - U.begin());
    return p - static_cast<std::size_t>(fine.order() / 2);
}

}  // namespace mra_detail

/// Knot-insertion matrix A (fine x coarse) mapping coefficients on `coarse` to
/// the grid with `new_knots` added.
[[nodiscard]] inline Eigen::SparseMatrix<double> prolongation(const KnotGrid& coarse,
                                                             std::span<const double> new_knots) {
    using mra_detail::SparseRow;
    const int k = coarse.order();
    std::vector<SparseRow> rows(coarse.dimension());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i] = {{static_cast<Eigen::Index>(i), 1.0}};
    }
    std::vector<double> bp = coarse.breakpoints();
    std::vector<double> sorted(new_knots.begin(), new_knots.end());
    std::sort(sorted.begin(), sorted.end());
    for (double u : sorted) {
        const auto it = std::upper_bound(bp.begin(), bp.end(), u);
        const auto s = static_cast<std::size_t>(it - bp.begin()) - 1;
        // clamped knot tau_i = bp[clamp(i - (k-1))]
        auto tau = [&](std::size_t i) {
            const auto off = static_cast<std::ptrdiff_t>(i) - (k - 1);
            const auto idx = std::clamp<std::ptrdiff_t>(off, 0, static_cast<std::ptrdiff_t>(bp.size()) - 1);
            return bp[static_cast<std::size_t>(idx)];
        };
        const std::size_t mu = s + static_cast<std::size_t>(k - 1);
        std::vector<SparseRow> next(rows.size() + 1);
        for (std::size_t i = 0; i < next.size(); ++i) {
            if (i + static_cast<std::size_t>(k - 1) <= mu) {
                next[i] = rows[i];
            } else if (i >= mu + 1) {
                next[i] = rows[i - 1];
            } else {
                const double alpha = (u - tau(i)) / (tau(i + static_cast<std::size_t>(k - 1)) - tau(i));
                next[i] = mra_detail::combine(alpha, rows[i], 1.0 - alpha, rows[i - 1]);
            }
        }
        rows = std::move(next);
        bp.insert(it, u);
    }
    Eigen::SparseMatrix<double> a(static_cast<Eigen::Index>(rows.size()),
                                  static_cast<Eigen::Index>(coarse.dimension()));
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (const auto& [c, v] : rows[i]) {
            if (v != 0.0) {
                trip.emplace_back(static_cast<Eigen::Index>(i), c, v);
            }
        }
    }
    a.setFromTriplets(trip.begin(), trip.end());
    return a;
}

/// Position of a detail coefficient: the level it refines and its inserted knot.
struct DetailIndex {
    std::size_t level = 0;
    double position = 0.0;
    bool operator==(const DetailIndex&) const = default;
};

struct HierarchicalExpansion {
    GridHierarchy hierarchy;
    Eigen::MatrixXd coarse;
    /// details[j] maps an inserted knot of level j -> j+1 to its coefficient column.
    std::vector<std::map<double, Eigen::VectorXd>> details;

    [[nodiscard]] int max_level() const noexcept { return hierarchy.max_level(); }
    [[nodiscard]] std::size_t num_details() const {
        std::size_t n = 0;
        for (const auto& d : details) {
            n += d.size();
        }
        return n;
    }
    /// Coarse basis size plus retained detail count.
    [[nodiscard]] std::size_t num_coefficients() const {
        return static_cast<std::size_t>(coarse.cols()) + num_details();
    }
};

[[nodiscard]] inline HierarchicalExpansion decompose(const SplineCoeffs& fine, const GridHierarchy& h) {
    if (!(fine.grid == h.finest())) {
        throw Error(Errc::GridMismatch, "coefficients do not live on the finest grid of the hierarchy");
    }
    HierarchicalExpansion he;
    he.hierarchy = h;
    he.details.resize(h.num_levels() - 1);
    Eigen::MatrixXd q = fine.coeffs.transpose();  // n_fine x rows
    for (std::size_t jj = h.num_levels() - 1; jj-- > 0;) {
        const auto& ins = h.inserted(jj);
        if (ins.empty()) {
            continue;
        }
        const KnotGrid& cg = h.level(jj);
        const KnotGrid& fg = h.level(jj + 1);
        const auto a = prolongation(cg, ins);
        const Eigen::Index nc = a.cols();
        const Eigen::Index nf = a.rows();
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(static_cast<std::size_t>(a.nonZeros()) + ins.size());
        for (Eigen::Index c = 0; c < a.outerSize(); ++c) {
            for (Eigen::SparseMatrix<double>::InnerIterator it(a, c); it; ++it) {
                trip.emplace_back(it.row(), it.col(), it.value());
            }
        }
        for (std::size_t m = 0; m < ins.size(); ++m) {
            trip.emplace_back(static_cast<Eigen::Index>(mra_detail::centred_row(fg, ins[m])),
                              nc + static_cast<Eigen::Index>(m), 1.0);
        }
        Eigen::SparseMatrix<double> sys(nf, nf);
        sys.setFromTriplets(trip.begin(), trip.end());
        sys.makeCompressed();
        Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
        lu.compute(sys);
        if (lu.info() != Eigen::Success) {
            throw Error(Errc::SingularSystem, "two-scale system at level " + std::to_string(jj) + " is singular");
        }
        const Eigen::MatrixXd x = lu.solve(q);
        for (std::size_t m = 0; m < ins.size(); ++m) {
            he.details[jj][ins[m]] = x.row(nc + static_cast<Eigen::Index>(m)).transpose();
        }
        q = x.topRows(nc);
    }
    he.coarse = q.transpose();
    return he;
}

[[nodiscard]] inline SplineCoeffs reconstruct(const HierarchicalExpansion& he) {
    const auto& h = he.hierarchy;
    Eigen::MatrixXd q = he.coarse.transpose();
    for (std::size_t j = 0; j + 1 < h.num_levels(); ++j) {
        const auto& ins = h.inserted(j);
        if (ins.empty()) {
            continue;
        }
        const auto a = prolongation(h.level(j), ins);
        Eigen::MatrixXd next = a * q;
        if (j < he.details.size()) {
            for (const auto& [u, d] : he.details[j]) {
                next.row(static_cast<Eigen::Index>(mra_detail::centred_row(h.level(j + 1), u))) += d.transpose();
            }
        }
        q = std::move(next);
    }
    return {h.finest(), q.transpose()};
}

/// Max-norm of the detail function owned by knot u of level j, sampled at 33
/// points per span of its support.
[[nodiscard]] inline double detail_function_norm(const GridHierarchy& h, std::size_t j, double u) {
    const KnotGrid& fg = h.level(j + 1);
    const std::size_t row = mra_detail::centred_row(fg, u);
    const auto [lo, hi] = fg.support(row);
    const auto& bp = fg.breakpoints();
    double best = 0.0;
    auto first = std::lower_bound(bp.begin(), bp.end(), lo);
    for (auto it = first; it != bp.end() && *it < hi; ++it) {
        const double a = *it;
        const double b = *(it + 1);
        for (int s = 0; s <= 32; ++s) {
            best = std::max(best, std::abs(bspline_eval(fg, row, a + (b - a) * s / 32.0)));
        }
    }
    return best;
}

struct ThresholdResult {
    HierarchicalExpansion expansion;
    std::vector<DetailIndex> dropped;
};

namespace mra_detail {

/// Removes the details listed in `drop`, then un-refines every inserted knot
/// whose removal leaves the represented function unchanged: no retained detail
/// function has it in its knot window and no finer knot depends on it.
inline HierarchicalExpansion drop_and_coarsen(const HierarchicalExpansion& he,
                                              const std::vector<DetailIndex>& drop) {
    HierarchicalExpansion out = he;
    for (const auto& d : drop) {
        out.details[d.level].erase(d.position);
    }
    const auto& h0 = he.hierarchy;
    const int k = h0.order();

    // knot windows of the retained detail functions, per level; invariant under
    // the removals below because removed knots never lie inside one
    std::vector<std::vector<std::pair<double, double>>> windows(out.details.size());
    for (std::size_t j = 0; j < out.details.size(); ++j) {
        const KnotGrid& fg = h0.level(j + 1);
        for (const auto& [u, d] : out.details[j]) {
            const auto row = centred_row(fg, u);
            windows[j].push_back({fg.knots()[row], fg.knots()[row + static_cast<std::size_t>(k)]});
        }
    }

    GridHierarchy h = h0;
    for (std::size_t jj = out.details.size(); jj-- > 0;) {
        const std::vector<double> candidates = h.inserted(jj);
        for (double u : candidates) {
            if (out.details[jj].count(u) != 0) {
                continue;
            }
            bool blocked = false;
            for (std::size_t l = jj; l < windows.size() && !blocked; ++l) {
                for (const auto& [lo, hi] : windows[l]) {
                    if (lo <= u && u <= hi) {
                        blocked = true;
                        break;
                    }
                }
            }
            if (blocked) {
                continue;
            }
            // finer knots between the level-(j+1) neighbours of u depend on it
            const auto& bp = h.level(jj + 1).breakpoints();
            const auto pos = std::lower_bound(bp.begin(), bp.end(), u);
            const double left = *(pos - 1);
            const double right = *(pos + 1);
            for (std::size_t l = jj + 1; l + 1 < h.num_levels() && !blocked; ++l) {
                for (double v : h.inserted(l)) {
                    if (v > left && v < right) {
                        blocked = true;
                        break;
                    }
                }
            }
            if (blocked) {
                continue;
            }
            HierarchyEditor::erase(h, jj, u);
            HierarchyEditor::trim_and_rebuild(h);
        }
    }
    out.hierarchy = h;
    out.details.resize(h.num_levels() - 1);
    return out;
}

}  // namespace mra_detail

/// Coarsening: details whose scaled magnitude ||d||_inf * omega falls below eps
/// are removed, and the grid is un-refined wherever that is exact.
[[nodiscard]] inline ThresholdResult threshold(const HierarchicalExpansion& he, double eps) {
    ThresholdResult res;
    for (std::size_t j = 0; j < he.details.size(); ++j) {
        for (const auto& [u, d] : he.details[j]) {
            const double mag = d.cwiseAbs().maxCoeff() * detail_function_norm(he.hierarchy, j, u);
            if (mag < eps) {
                res.dropped.push_back({j, u});
            }
        }
    }
    res.expansion = mra_detail::drop_and_coarsen(he, res.dropped);
    return res;
}

/// Keeps the `budget - coarse size` details of largest scaled magnitude
/// (best n-term selection over all levels).
[[nodiscard]] inline ThresholdResult best_n_term(const HierarchicalExpansion& he, std::size_t budget) {
    struct Scored {
        double mag;
        DetailIndex idx;
    };
    std::vector<Scored> all;
    for (std::size_t j = 0; j < he.details.size(); ++j) {
        for (const auto& [u, d] : he.details[j]) {
            all.push_back({d.cwiseAbs().maxCoeff() * detail_function_norm(he.hierarchy, j, u), {j, u}});
        }
    }
    std::stable_sort(all.begin(), all.end(), [](const Scored& a, const Scored& b) { return a.mag > b.mag; });
    const auto ncoarse = static_cast<std::size_t>(he.coarse.cols());
    const std::size_t keep = budget > ncoarse ? std::min(budget - ncoarse, all.size()) : 0;
    ThresholdResult res;
    for (std::size_t i = keep; i < all.size(); ++i) {
        res.dropped.push_back(all[i].idx);
    }
    res.expansion = mra_detail::drop_and_coarsen(he, res.dropped);
    return res;
}

/// Linear approximation: all details of levels 0..max_kept, nothing finer.
[[nodiscard]] inline HierarchicalExpansion truncate_levels(const HierarchicalExpansion& he, std::size_t max_kept) {
    std::vector<DetailIndex> drop;
    for (std::size_t j = max_kept + 1; j < he.details.size(); ++j) {
        for (const auto& [u, d] : he.details[j]) {
            drop.push_back({j, u});
        }
    }
    return mra_detail::drop_and_coarsen(he, drop);
}

/// Spans whose indicator is at least eta times the largest indicator.
[[nodiscard]] inline std::vector<std::size_t> select_refinement(std::span<const double> indicators, double eta) {
    if (!(eta > 0.0 && eta <= 1.0)) {
        throw Error(Errc::InvalidParam, "refinement fraction must lie in (0, 1]");
    }
    std::vector<std::size_t> out;
    double mx = 0.0;
    for (double v : indicators) {
        mx = std::max(mx, v);
    }
    if (!(mx > 0.0)) {
        return out;
    }
    for (std::size_t i = 0; i < indicators.size(); ++i) {
        if (indicators[i] >= eta * mx) {
            out.push_back(i);
        }
    }
    return out;
}

}  // namespace wavesim

// Brute-force reference computations shared by the unit and acceptance tests.
#ifndef ZONOREACH_TESTS_ORACLES_HPP
#define ZONOREACH_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle
{

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd random_matrix(std::mt19937_64& rng, Index rows, Index cols, double scale = 1.0)
{
    std::uniform_real_distribution<double> u(-scale, scale);
    MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j)
            m(i, j) = u(rng);
    return m;
}

inline VectorXd random_vector(std::mt19937_64& rng, Index n, double scale = 1.0)
{
    return random_matrix(rng, n, 1, scale).col(0);
}

inline VectorXd random_point(std::mt19937_64& rng, const VectorXd& lo, const VectorXd& hi)
{
    VectorXd x(lo.size());
    for (Index i = 0; i < lo.size(); ++i)
        x[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
    return x;
}

/// Visits every corner of the box [lo, hi].
template <class F>
void for_each_corner(const VectorXd& lo, const VectorXd& hi, F&& f)
{
    const auto n = static_cast<std::size_t>(lo.size());
    VectorXd x(lo.size());
    for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
        for (std::size_t i = 0; i < n; ++i)
            x[static_cast<Index>(i)] = (mask >> i) & 1U ? hi[static_cast<Index>(i)] : lo[static_cast<Index>(i)];
        f(x);
    }
}

/// Visits a regular grid with `steps` points per axis (endpoints included).
template <class F>
void for_each_grid_point(const VectorXd& lo, const VectorXd& hi, std::size_t steps, F&& f)
{
    const auto n = static_cast<std::size_t>(lo.size());
    std::vector<std::size_t> idx(n, 0);
    VectorXd x(lo.size());
    while (true) {
        for (std::size_t i = 0; i < n; ++i) {
            const double t = steps == 1 ? 0.5 : static_cast<double>(idx[i]) / static_cast<double>(steps - 1);
            x[static_cast<Index>(i)] = lo[static_cast<Index>(i)] + t * (hi[static_cast<Index>(i)] - lo[static_cast<Index>(i)]);
        }
        f(x);
        std::size_t k = 0;
        while (k < n && ++idx[k] == steps)
            idx[k++] = 0;
        if (k == n)
            break;
    }
}

/// Exact min of alpha.eps over {eps in [-1,1]^m : A eps + b >= 0} by vertex
/// enumeration: every vertex fixes some coordinates at +-1 and makes as many
/// constraint rows tight as there are free coordinates. nullopt when empty.
inline std::optional<double> lp_min_vertices(const VectorXd& alpha, const MatrixXd& a, const VectorXd& b,
                                             double tol = 1e-9)
{
    const auto m = static_cast<std::size_t>(alpha.size());
    const auto k = static_cast<std::size_t>(a.rows());
    std::optional<double> best;
    const auto consider = [&](const VectorXd& eps) {
        if ((eps.array().abs() > 1.0 + tol).any())
            return;
        if (k > 0 && ((a * eps + b).array() < -tol).any())
            return;
        const double v = alpha.dot(eps);
        if (!best || v < *best)
            best = v;
    };
    for (std::size_t rows = 0; rows < (std::size_t{1} << k); ++rows) {
        std::vector<Index> tight;
        for (std::size_t r = 0; r < k; ++r)
            if ((rows >> r) & 1U)
                tight.push_back(static_cast<Index>(r));
        const std::size_t f = tight.size();
        if (f > m)
            continue;
        // Choose the free coordinates.
        std::vector<bool> pick(m, false);
        std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(f), true);
        do {
            std::vector<Index> free_idx, fixed_idx;
            for (std::size_t j = 0; j < m; ++j)
                (pick[j] ? free_idx : fixed_idx).push_back(static_cast<Index>(j));
            const std::size_t nf = fixed_idx.size();
            for (std::size_t signs = 0; signs < (std::size_t{1} << nf); ++signs) {
                VectorXd eps = VectorXd::Zero(static_cast<Index>(m));
                for (std::size_t t = 0; t < nf; ++t)
                    eps[fixed_idx[t]] = (signs >> t) & 1U ? 1.0 : -1.0;
                if (f > 0) {
                    MatrixXd sys(static_cast<Index>(f), static_cast<Index>(f));
                    VectorXd rhs(static_cast<Index>(f));
                    for (std::size_t r = 0; r < f; ++r) {
                        double fixed = b[tight[r]];
                        for (Index j : fixed_idx)
                            fixed += a(tight[r], j) * eps[j];
                        rhs[static_cast<Index>(r)] = -fixed;
                        for (std::size_t c = 0; c < f; ++c)
                            sys(static_cast<Index>(r), static_cast<Index>(c)) = a(tight[r], free_idx[c]);
                    }
                    Eigen::FullPivLU<MatrixXd> lu(sys);
                    if (!lu.isInvertible())
                        continue;
                    const VectorXd sol = lu.solve(rhs);
                    for (std::size_t c = 0; c < f; ++c)
                        eps[free_idx[c]] = sol[static_cast<Index>(c)];
                }
                consider(eps);
            }
        } while (std::prev_permutation(pick.begin(), pick.end()));
    }
    return best;
}

/// Grid estimate of the same minimum (an upper bound of the true minimum).
inline std::optional<double> lp_min_grid(const VectorXd& alpha, const MatrixXd& a, const VectorXd& b,
                                         std::size_t steps)
{
    std::optional<double> best;
    const VectorXd lo = VectorXd::Constant(alpha.size(), -1.0);
    const VectorXd hi = VectorXd::Constant(alpha.size(), 1.0);
    for_each_grid_point(lo, hi, steps, [&](const VectorXd& eps) {
        if (a.rows() > 0 && ((a * eps + b).array() < 0.0).any())
            return;
        const double v = alpha.dot(eps);
        if (!best || v < *best)
            best = v;
    });
    return best;
}

/// Exact min of c.x over {x in [lo, hi] : A x + b >= 0}.
inline std::optional<double> box_lp_min(const VectorXd& c, const MatrixXd& a, const VectorXd& b, const VectorXd& lo,
                                        const VectorXd& hi)
{
    // x = mid + rad * eps
    const VectorXd mid = 0.5 * (lo + hi);
    const VectorXd rad = 0.5 * (hi - lo);
    const VectorXd alpha = c.cwiseProduct(rad);
    const MatrixXd scaled = a * rad.asDiagonal();
    const VectorXd offset = b + a * mid;
    const auto v = lp_min_vertices(alpha, scaled, offset);
    if (!v)
        return std::nullopt;
    return *v + c.dot(mid);
}

/// Exact output range of y = W2 relu(W1 x + b1) + b2 over a box, by
/// enumerating every activation pattern and solving each linear piece.
inline std::pair<VectorXd, VectorXd> relu_net_range(const MatrixXd& w1, const VectorXd& b1, const MatrixXd& w2,
                                                    const VectorXd& b2, const VectorXd& lo, const VectorXd& hi)
{
    const auto h = static_cast<std::size_t>(w1.rows());
    VectorXd out_lo = VectorXd::Constant(w2.rows(), std::numeric_limits<double>::infinity());
    VectorXd out_hi = VectorXd::Constant(w2.rows(), -std::numeric_limits<double>::infinity());
    for (std::size_t pattern = 0; pattern < (std::size_t{1} << h); ++pattern) {
        MatrixXd a(w1.rows(), w1.cols());
        VectorXd b(w1.rows());
        VectorXd s(w1.rows());
        for (std::size_t i = 0; i < h; ++i) {
            const double sign = (pattern >> i) & 1U ? 1.0 : -1.0;
            s[static_cast<Index>(i)] = sign > 0 ? 1.0 : 0.0;
            a.row(static_cast<Index>(i)) = sign * w1.row(static_cast<Index>(i));
            b[static_cast<Index>(i)] = sign * b1[static_cast<Index>(i)];
        }
        const MatrixXd lin = w2 * s.asDiagonal() * w1;
        const VectorXd off = w2 * s.asDiagonal() * b1 + b2;
        for (Index o = 0; o < w2.rows(); ++o) {
            const auto mn = box_lp_min(lin.row(o).transpose(), a, b, lo, hi);
            if (!mn)
                continue;
            const auto mx = box_lp_min(-lin.row(o).transpose(), a, b, lo, hi);
            out_lo[o] = std::min(out_lo[o], *mn + off[o]);
            out_hi[o] = std::max(out_hi[o], -*mx + off[o]);
        }
    }
    return {out_lo, out_hi};
}

} // namespace oracle

#endif

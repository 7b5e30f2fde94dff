#include "zonoreach/lp.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "zonoreach/error.hpp"

namespace zonoreach::lp
{

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace
{

constexpr double pivot_tol = 1e-9;
constexpr double cost_tol = 1e-10;

class Tableau
{
public:
    Tableau(Index rows, Index cols) : t_(MatrixXd::Zero(rows + 1, cols + 1)), basis_(rows, -1) {}

    double& at(Index r, Index c) { return t_(r, c); }
    double rhs(Index r) const { return t_(r, t_.cols() - 1); }
    double& rhs(Index r) { return t_(r, t_.cols() - 1); }
    Index rows() const { return t_.rows() - 1; }
    Index cols() const { return t_.cols() - 1; }
    Index& basis(Index r) { return basis_[static_cast<std::size_t>(r)]; }
    // Objective row holds reduced costs; its rhs holds -objective.
    auto objective() { return t_.row(rows()); }

    void pivot(Index r, Index c)
    {
        t_.row(r) /= t_(r, c);
        for (Index i = 0; i <= rows(); ++i) {
            if (i == r)
                continue;
            const double f = t_(i, c);
            if (f != 0.0)
                t_.row(i) -= f * t_.row(r);
        }
        basis(r) = c;
    }

    // Runs simplex iterations over columns [0, allowed). Returns false if unbounded.
    bool optimize(Index allowed)
    {
        const Index limit = 50000;
        for (Index iter = 0; iter < limit; ++iter) {
            Index enter = -1;
            for (Index c = 0; c < allowed; ++c) {
                if (t_(rows(), c) < -cost_tol) {
                    enter = c;
                    break;
                }
            }
            if (enter < 0)
                return true;
            Index leave = -1;
            double best = std::numeric_limits<double>::infinity();
            for (Index r = 0; r < rows(); ++r) {
                const double a = t_(r, enter);
                if (a > pivot_tol) {
                    const double ratio = rhs(r) / a;
                    if (ratio < best - 1e-12 ||
                        (std::abs(ratio - best) <= 1e-12 && leave >= 0 && basis(r) < basis(leave))) {
                        best = ratio;
                        leave = r;
                    }
                }
            }
            if (leave < 0)
                return false;
            pivot(leave, enter);
        }
        throw Error("simplex: iteration limit reached");
    }

private:
    MatrixXd t_;
    std::vector<Index> basis_;
};

} // namespace

Solution minimize(const Problem& p)
{
    const Index n = p.cost.size();
    const Index n_ub = p.ub.rows();
    const Index n_eq = p.eq.rows();
    if ((n_ub > 0 && p.ub.cols() != n) || (n_eq > 0 && p.eq.cols() != n) || p.ub_rhs.size() != n_ub ||
        p.eq_rhs.size() != n_eq)
        throw ShapeError("simplex: inconsistent problem dimensions");

    const Index m = n_ub + n_eq;
    // Artificial variables for every row whose slack cannot start basic.
    std::vector<Index> needs_art;
    for (Index i = 0; i < n_ub; ++i)
        if (p.ub_rhs[i] < 0.0)
            needs_art.push_back(i);
    for (Index i = 0; i < n_eq; ++i)
        needs_art.push_back(n_ub + i);
    const Index n_art = static_cast<Index>(needs_art.size());
    const Index art0 = n + n_ub;

    Tableau tab(m, n + n_ub + n_art);
    for (Index i = 0; i < m; ++i) {
        const bool is_ub = i < n_ub;
        const double b = is_ub ? p.ub_rhs[i] : p.eq_rhs[i - n_ub];
        const double sign = b < 0.0 ? -1.0 : 1.0;
        for (Index j = 0; j < n; ++j)
            tab.at(i, j) = sign * (is_ub ? p.ub(i, j) : p.eq(i - n_ub, j));
        if (is_ub)
            tab.at(i, n + i) = sign;
        tab.rhs(i) = sign * b;
        if (is_ub && sign > 0.0)
            tab.basis(i) = n + i;
    }
    for (Index k = 0; k < n_art; ++k) {
        const Index row = needs_art[static_cast<std::size_t>(k)];
        tab.at(row, art0 + k) = 1.0;
        tab.basis(row) = art0 + k;
    }

    Solution out;
    if (n_art > 0) {
        auto obj = tab.objective();
        obj.setZero();
        for (Index k = 0; k < n_art; ++k)
            obj[art0 + k] = 1.0;
        for (Index k = 0; k < n_art; ++k) {
            const Index row = needs_art[static_cast<std::size_t>(k)];
            for (Index c = 0; c <= tab.cols(); ++c)
                obj[c] -= c == tab.cols() ? tab.rhs(row) : tab.at(row, c);
        }
        tab.optimize(tab.cols());
        const double infeas = -tab.objective()[tab.cols()];
        double scale = 1.0;
        for (Index i = 0; i < m; ++i)
            scale = std::max(scale, std::abs(tab.rhs(i)));
        if (infeas > 1e-9 * scale) {
            out.status = Status::infeasible;
            return out;
        }
        // Drive remaining artificials out of the basis where possible.
        for (Index r = 0; r < m; ++r) {
            if (tab.basis(r) < art0)
                continue;
            for (Index c = 0; c < art0; ++c) {
                if (std::abs(tab.at(r, c)) > pivot_tol) {
                    tab.pivot(r, c);
                    break;
                }
            }
        }
    }

    auto obj = tab.objective();
    obj.setZero();
    for (Index j = 0; j < n; ++j)
        obj[j] = p.cost[j];
    for (Index r = 0; r < m; ++r) {
        const Index b = tab.basis(r);
        if (b < n && p.cost[b] != 0.0) {
            const double f = p.cost[b];
            for (Index c = 0; c <= tab.cols(); ++c)
                obj[c] -= f * (c == tab.cols() ? tab.rhs(r) : tab.at(r, c));
        }
    }
    if (!tab.optimize(art0)) {
        out.status = Status::unbounded;
        return out;
    }
    out.status = Status::optimal;
    out.x = VectorXd::Zero(n);
    for (Index r = 0; r < m; ++r)
        if (tab.basis(r) < n)
            out.x[tab.basis(r)] = std::max(0.0, tab.rhs(r));
    out.objective = p.cost.dot(out.x);
    return out;
}

} // namespace zonoreach::lp

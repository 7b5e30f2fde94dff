#include "zonoreach/zonotope.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "zonoreach/error.hpp"

namespace zonoreach
{

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace
{

double sum_up(double a, double b)
{
    return rounding::directed_sum(a, b, true);
}

// Upper bound of the nonnegative product m * v.
VectorXd upper_matvec(const MatrixXd& m, const VectorXd& v)
{
    VectorXd out = VectorXd::Zero(m.rows());
    for (Index i = 0; i < m.rows(); ++i)
        for (Index k = 0; k < m.cols(); ++k)
            out[i] = sum_up(out[i], rounding::directed_product(m(i, k), v[k], true));
    return out;
}

VectorXd row_abs_sum_up(const MatrixXd& m)
{
    VectorXd out = VectorXd::Zero(m.rows());
    for (Index j = 0; j < m.cols(); ++j)
        for (Index i = 0; i < m.rows(); ++i)
            out[i] = sum_up(out[i], std::abs(m(i, j)));
    return out;
}

VectorXd add_up(const VectorXd& a, const VectorXd& b)
{
    VectorXd out(a.size());
    for (Index i = 0; i < a.size(); ++i)
        out[i] = sum_up(a[i], b[i]);
    return out;
}

// Bound on |exact - fl| of one product added into a running sum, via
// error-free transforms. `err` accumulates upward.
void accumulate(double& s, double& err, double a, double b)
{
    double p, e;
    if (!rounding::two_product(a, b, p, e)) {
        // Near underflow: the product is off by at most one subnormal step.
        e = rounding::up(std::abs(p) * std::numeric_limits<double>::epsilon()) + std::numeric_limits<double>::denorm_min();
    }
    double t, se;
    rounding::two_sum(s, p, t, se);
    s = t;
    if (!std::isfinite(t)) {
        err = rounding::inf;
        return;
    }
    err = sum_up(sum_up(err, std::abs(e)), std::abs(se));
}

// fl(w * m) computed term by term, with the per-row sum of the absolute
// rounding errors over all columns.
std::pair<MatrixXd, VectorXd> product_with_error(const MatrixXd& w, const MatrixXd& m)
{
    MatrixXd out(w.rows(), m.cols());
    VectorXd error = VectorXd::Zero(w.rows());
    for (Index i = 0; i < w.rows(); ++i)
        for (Index j = 0; j < m.cols(); ++j) {
            double s = 0.0, err = 0.0;
            for (Index k = 0; k < w.cols(); ++k)
                if (w(i, k) != 0.0 && m(k, j) != 0.0)
                    accumulate(s, err, w(i, k), m(k, j));
            out(i, j) = s;
            error[i] = sum_up(error[i], err);
        }
    return {out, error};
}

// Rounding error of scaling each row i of `rows` (including its center) by s_i.
VectorXd scaling_error(const VectorXd& s, const MatrixXd& gens, const VectorXd& center)
{
    const double u = std::numeric_limits<double>::epsilon();
    VectorXd out(s.size());
    const VectorXd mass = row_abs_sum_up(gens);
    for (Index i = 0; i < s.size(); ++i) {
        const double m = rounding::up(mass[i] + std::abs(center[i]));
        out[i] = rounding::up(rounding::up(std::abs(s[i]) * m) * u) +
                 rounding::underflow_slack(static_cast<std::size_t>(gens.cols()));
    }
    return out;
}

// Exact sum a + b = s + e.
std::pair<double, double> two_sum(double a, double b)
{
    const double s = a + b;
    const double bb = s - a;
    return {s, (a - (s - bb)) + (b - bb)};
}

// Upper bound on how far the exact value a + b falls short of `target` in
// direction `dir` (-1: a + b should be <= target, +1: >= target).
double reach_gap(double a, double b, double target, double dir)
{
    const auto [s, e] = two_sum(a, b);
    if (dir < 0) {
        if (s == target)
            return e;
        return rounding::up(rounding::up(s - target) + e);
    }
    if (s == target)
        return -e;
    return rounding::up(rounding::up(target - s) - e);
}

} // namespace

SymbolId SymbolPool::fresh(SymbolOrigin origin)
{
    origins_.push_back(origin);
    return origins_.size() - 1;
}

std::vector<SymbolId> merge_symbols(std::span<const SymbolId> a, std::span<const SymbolId> b)
{
    std::vector<SymbolId> out;
    out.reserve(a.size() + b.size());
    std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

MatrixXd expand_columns(const MatrixXd& m, std::span<const SymbolId> from, std::span<const SymbolId> to)
{
    if (from.size() == to.size())
        return m;
    MatrixXd out = MatrixXd::Zero(m.rows(), static_cast<Index>(to.size()));
    std::size_t k = 0;
    for (std::size_t j = 0; j < from.size(); ++j) {
        while (k < to.size() && to[k] != from[j])
            ++k;
        if (k == to.size())
            throw ShapeError("expand_columns: target symbols are not a superset");
        out.col(static_cast<Index>(k)) = m.col(static_cast<Index>(j));
    }
    return out;
}

Zonotope::Zonotope(VectorXd center, MatrixXd generators, std::vector<SymbolId> symbols)
    : Zonotope(std::move(center), std::move(generators), std::move(symbols), VectorXd())
{
}

Zonotope::Zonotope(VectorXd center, MatrixXd generators, std::vector<SymbolId> symbols, VectorXd error)
    : center_(std::move(center)), generators_(std::move(generators)), symbols_(std::move(symbols)),
      error_(std::move(error))
{
    if (error_.size() == 0)
        error_ = VectorXd::Zero(center_.size());
    if (generators_.rows() != center_.size() || error_.size() != center_.size())
        throw ShapeError("zonotope: center, generators and error disagree on dimension");
    if (static_cast<std::size_t>(generators_.cols()) != symbols_.size())
        throw ShapeError("zonotope: generator column count differs from noise count");
}

Zonotope Zonotope::from_box(const IntervalTensor& box, SymbolPool& pool, SymbolOrigin::Kind kind,
                            std::size_t node, Rounding mode)
{
    if (!box.is_finite())
        throw Error("zonotope from box: every bound must be finite");
    const auto d = static_cast<Index>(box.size());
    VectorXd center(d);
    VectorXd error = VectorXd::Zero(d);
    MatrixXd gens = MatrixXd::Zero(d, d);
    std::vector<SymbolId> symbols;
    symbols.reserve(box.size());
    for (Index i = 0; i < d; ++i) {
        const double l = box.lower()[i];
        const double u = box.upper()[i];
        const double c = l + 0.5 * (u - l);
        const double r = 0.5 * (u - l);
        center[i] = c;
        gens(i, i) = r;
        if (mode == Rounding::sound) {
            // Any slack between [c - r, c + r] and [l, u] goes into the error term.
            error[i] = std::max({0.0, reach_gap(c, -r, l, -1.0), reach_gap(c, r, u, 1.0)});
        }
        symbols.push_back(pool.fresh({kind, node, static_cast<std::size_t>(i)}));
    }
    return {center, gens, symbols, error};
}

Zonotope Zonotope::constant(const VectorXd& value)
{
    return {value, MatrixXd::Zero(value.size(), 0), {}};
}

IntervalTensor Zonotope::concretize(Rounding mode) const
{
    const Index d = center_.size();
    VectorXd lo(d), hi(d);
    if (mode == Rounding::fast) {
        const VectorXd mass = generators_.cwiseAbs().rowwise().sum() + error_;
        return {center_ - mass, center_ + mass};
    }
    const VectorXd mass = add_up(row_abs_sum_up(generators_), error_);
    for (Index i = 0; i < d; ++i) {
        if (mass[i] == 0.0) {
            lo[i] = hi[i] = center_[i];
            continue;
        }
        lo[i] = rounding::directed_sum(center_[i], -mass[i], false);
        hi[i] = rounding::directed_sum(center_[i], mass[i], true);
    }
    return {lo, hi};
}

VectorXd Zonotope::evaluate(const VectorXd& eps) const
{
    return center_ + generators_ * eps;
}

Zonotope Zonotope::over_symbols(std::span<const SymbolId> symbols) const
{
    return {center_, expand_columns(generators_, symbols_, symbols),
            std::vector<SymbolId>(symbols.begin(), symbols.end()), error_};
}

Zonotope Zonotope::select(std::span<const std::size_t> rows) const
{
    const auto n = static_cast<Index>(rows.size());
    VectorXd c(n), e(n);
    MatrixXd g(n, generators_.cols());
    for (Index i = 0; i < n; ++i) {
        const auto r = static_cast<Index>(rows[static_cast<std::size_t>(i)]);
        if (r >= center_.size())
            throw ShapeError("zonotope select: row out of range");
        c[i] = center_[r];
        e[i] = error_[r];
        g.row(i) = generators_.row(r);
    }
    return {c, g, symbols_, e};
}

double Zonotope::symbol_mass(SymbolId id) const
{
    const auto it = std::lower_bound(symbols_.begin(), symbols_.end(), id);
    if (it == symbols_.end() || *it != id)
        return 0.0;
    return generators_.col(it - symbols_.begin()).cwiseAbs().sum();
}

Zonotope Zonotope::pruned() const
{
    std::vector<Index> keep;
    for (Index j = 0; j < generators_.cols(); ++j)
        if (!generators_.col(j).isZero(0.0))
            keep.push_back(j);
    if (keep.size() == symbols_.size())
        return *this;
    MatrixXd g(generators_.rows(), static_cast<Index>(keep.size()));
    std::vector<SymbolId> ids;
    for (std::size_t k = 0; k < keep.size(); ++k) {
        g.col(static_cast<Index>(k)) = generators_.col(keep[k]);
        ids.push_back(symbols_[static_cast<std::size_t>(keep[k])]);
    }
    return {center_, g, ids, error_};
}

ReluRelaxation relu_relaxation(double l, double u, Rounding mode)
{
    // Any slope in [0, 1] gives ReLU(x) - slope*x in [0, max(-slope*l, (1-slope)*u)].
    double slope = u / (u - l);
    slope = std::clamp(slope, 0.0, 1.0);
    const double left = rounding::mul_up(-slope, l, mode);
    const double right = rounding::mul_up(rounding::sub_up(1.0, slope, mode), u, mode);
    return {slope, std::max(left, right)};
}

SigmoidRelaxation sigmoid_relaxation(double l, double u, Rounding mode)
{
    SigmoidRelaxation r;
    const double sl = sigmoid(l);
    const double su = sigmoid(u);
    r.slope = std::max(0.0, (su - sl) / (u - l));

    // sigma'(x) = s(1-s) = slope is solved by s = (1 +- sqrt(1 - 4 slope)) / 2,
    // giving the two symmetric tangency points +-t.
    std::vector<double> candidates{l, u};
    const double disc = 1.0 - 4.0 * r.slope;
    if (disc > 0.0 && r.slope > 0.0) {
        const double s = 0.5 * (1.0 + std::sqrt(disc));
        const double t = std::log(s / (1.0 - s));
        if (std::isfinite(t)) {
            if (l < t && t < u)
                candidates.push_back(t);
            if (l < -t && -t < u)
                candidates.push_back(-t);
        }
    }
    auto gap = [&](double x) { return sigmoid(x) - r.slope * x; };
    r.x_plus = candidates.front();
    r.x_minus = candidates.front();
    for (double x : candidates) {
        if (gap(x) > gap(r.x_plus))
            r.x_plus = x;
        if (gap(x) < gap(r.x_minus))
            r.x_minus = x;
    }
    double hi = gap(r.x_plus);
    double lo = gap(r.x_minus);
    if (mode == Rounding::sound) {
        const double eps = std::numeric_limits<double>::epsilon();
        const double margin =
            rounding::up(16.0 * eps * (1.0 + r.slope * std::max(std::abs(l), std::abs(u))));
        hi = rounding::up(hi + margin);
        lo = rounding::down(lo - margin);
    }
    r.offset = lo + 0.5 * (hi - lo);
    r.radius = std::max(rounding::sub_up(hi, r.offset, mode), rounding::sub_up(r.offset, lo, mode));
    return r;
}

namespace zono
{

Zonotope affine(const Zonotope& z, const MatrixXd& weights, const VectorXd& bias, Rounding mode)
{
    if (static_cast<std::size_t>(weights.cols()) != z.dim())
        throw ShapeError("zonotope affine: weights have " + std::to_string(weights.cols()) +
                         " columns, zonotope has dimension " + std::to_string(z.dim()));
    if (bias.size() != weights.rows())
        throw ShapeError("zonotope affine: bias length differs from weight rows");

    if (mode == Rounding::fast)
        return {VectorXd(weights * z.center() + bias), MatrixXd(weights * z.generators()), z.symbols(),
                VectorXd::Zero(weights.rows())};

    MatrixXd with_center(z.dim(), z.noise_count() + 1);
    with_center << z.generators(), z.center();
    auto [product, error] = product_with_error(weights, with_center);
    MatrixXd gens = product.leftCols(static_cast<Index>(z.noise_count()));
    VectorXd center = product.col(static_cast<Index>(z.noise_count()));
    for (Index i = 0; i < center.size(); ++i) {
        double s, e;
        rounding::two_sum(center[i], bias[i], s, e);
        center[i] = s;
        error[i] = sum_up(error[i], std::abs(e));
    }
    if (z.error().any())
        error = add_up(error, upper_matvec(weights.cwiseAbs(), z.error()));
    return {center, gens, z.symbols(), error};
}

Zonotope add(const Zonotope& a, const Zonotope& b, Rounding mode)
{
    if (a.dim() != b.dim())
        throw ShapeError("zonotope add: dimensions differ");
    const auto ids = merge_symbols(a.symbols(), b.symbols());
    const MatrixXd ga = expand_columns(a.generators(), a.symbols(), ids);
    const MatrixXd gb = expand_columns(b.generators(), b.symbols(), ids);
    MatrixXd gens = ga + gb;
    VectorXd center = a.center() + b.center();
    VectorXd error = a.error() + b.error();
    if (mode == Rounding::sound) {
        error = add_up(a.error(), b.error());
        for (Index i = 0; i < gens.rows(); ++i) {
            double s, e;
            for (Index j = 0; j < gens.cols(); ++j) {
                rounding::two_sum(ga(i, j), gb(i, j), s, e);
                error[i] = sum_up(error[i], std::abs(e));
            }
            rounding::two_sum(a.center()[i], b.center()[i], s, e);
            error[i] = sum_up(error[i], std::abs(e));
        }
    }
    return {center, gens, ids, error};
}

Zonotope add_constant(const Zonotope& a, const VectorXd& c, Rounding mode)
{
    if (static_cast<std::size_t>(c.size()) != a.dim() && c.size() != 1)
        throw ShapeError("zonotope add: constant length differs from dimension");
    VectorXd full = c.size() == 1 ? VectorXd::Constant(a.center().size(), c[0]) : c;
    VectorXd center = a.center() + full;
    VectorXd error = a.error();
    if (mode == Rounding::sound) {
        const double u = std::numeric_limits<double>::epsilon();
        for (Index i = 0; i < center.size(); ++i)
            error[i] = rounding::up(error[i] + rounding::up(std::abs(center[i]) * u));
    }
    return {center, a.generators(), a.symbols(), error};
}

Zonotope stack(std::span<const Zonotope> parts)
{
    std::vector<SymbolId> ids;
    Index d = 0;
    for (const auto& p : parts) {
        ids = merge_symbols(ids, p.symbols());
        d += static_cast<Index>(p.dim());
    }
    VectorXd center(d), error(d);
    MatrixXd gens(d, static_cast<Index>(ids.size()));
    Index row = 0;
    for (const auto& p : parts) {
        const auto n = static_cast<Index>(p.dim());
        center.segment(row, n) = p.center();
        error.segment(row, n) = p.error();
        gens.middleRows(row, n) = expand_columns(p.generators(), p.symbols(), ids);
        row += n;
    }
    return {center, gens, ids, error};
}

Zonotope relu(const Zonotope& z, const IntervalTensor& bounds, SymbolPool& pool, Rounding mode,
              std::size_t node, std::span<const Phase> phases)
{
    if (bounds.size() != z.dim())
        throw ShapeError("zonotope relu: bounds dimension differs");
    if (!phases.empty() && phases.size() != z.dim())
        throw ShapeError("zonotope relu: phase vector dimension differs");

    const Index d = static_cast<Index>(z.dim());
    VectorXd scale = VectorXd::Zero(d);
    VectorXd shift = VectorXd::Zero(d);
    std::vector<std::pair<Index, double>> fresh;
    for (Index i = 0; i < d; ++i) {
        const Phase phase = phases.empty() ? Phase::free : phases[static_cast<std::size_t>(i)];
        const double l = bounds.lower()[i];
        const double u = bounds.upper()[i];
        if (phase == Phase::inactive || (phase == Phase::free && u <= 0.0)) {
            scale[i] = 0.0;
        } else if (phase == Phase::active || l >= 0.0) {
            scale[i] = 1.0;
        } else {
            const ReluRelaxation r = relu_relaxation(l, u, mode);
            scale[i] = r.slope;
            const double half = 0.5 * r.offset;
            shift[i] = half;
            fresh.emplace_back(i, half);
        }
    }

    const Index m = static_cast<Index>(z.noise_count());
    MatrixXd gens(d, m + static_cast<Index>(fresh.size()));
    gens.leftCols(m) = scale.asDiagonal() * z.generators();
    gens.rightCols(static_cast<Index>(fresh.size())).setZero();
    VectorXd center = scale.cwiseProduct(z.center()) + shift;
    VectorXd error = scale.cwiseAbs().cwiseProduct(z.error());

    std::vector<SymbolId> ids = z.symbols();
    for (std::size_t k = 0; k < fresh.size(); ++k) {
        const auto [i, half] = fresh[k];
        gens(i, m + static_cast<Index>(k)) = half;
        ids.push_back(pool.fresh({SymbolOrigin::Kind::relu, node, static_cast<std::size_t>(i)}));
    }

    if (mode == Rounding::sound) {
        VectorXd partial(d);
        for (Index i = 0; i < d; ++i)
            partial[i] = (scale[i] == 0.0 || scale[i] == 1.0) ? 0.0 : 1.0;
        VectorXd err = scaling_error(scale, z.generators(), z.center());
        for (Index i = 0; i < d; ++i) {
            if (partial[i] != 0.0) {
                error[i] = rounding::up(error[i] * (1.0 + std::numeric_limits<double>::epsilon()));
                error[i] = rounding::up(error[i] + err[i]);
                error[i] = rounding::up(error[i] + rounding::up(std::abs(center[i]) *
                                                                std::numeric_limits<double>::epsilon()));
            }
        }
    }
    return {center, gens, ids, error};
}

Zonotope sigmoid(const Zonotope& z, const IntervalTensor& bounds, SymbolPool& pool, Rounding mode,
                 std::size_t node)
{
    if (bounds.size() != z.dim())
        throw ShapeError("zonotope sigmoid: bounds dimension differs");
    const Index d = static_cast<Index>(z.dim());
    const Index m = static_cast<Index>(z.noise_count());
    VectorXd scale = VectorXd::Zero(d);
    VectorXd shift = VectorXd::Zero(d);
    VectorXd extra_error = VectorXd::Zero(d);
    std::vector<std::pair<Index, double>> fresh;
    for (Index i = 0; i < d; ++i) {
        const double l = bounds.lower()[i];
        const double u = bounds.upper()[i];
        if (l == u) {
            const SoundScalar y = box::apply_monotone(Monotone::sigmoid, SoundScalar{l, u}, mode);
            shift[i] = y.mid();
            extra_error[i] = mode == Rounding::sound ? rounding::up(0.5 * y.width()) : 0.0;
            continue;
        }
        const SigmoidRelaxation r = sigmoid_relaxation(l, u, mode);
        scale[i] = r.slope;
        shift[i] = r.offset;
        fresh.emplace_back(i, r.radius);
    }

    MatrixXd gens(d, m + static_cast<Index>(fresh.size()));
    gens.leftCols(m) = scale.asDiagonal() * z.generators();
    gens.rightCols(static_cast<Index>(fresh.size())).setZero();
    VectorXd center = scale.cwiseProduct(z.center()) + shift;
    VectorXd error = scale.cwiseProduct(z.error()) + extra_error;
    std::vector<SymbolId> ids = z.symbols();
    for (std::size_t k = 0; k < fresh.size(); ++k) {
        const auto [i, radius] = fresh[k];
        gens(i, m + static_cast<Index>(k)) = radius;
        ids.push_back(pool.fresh({SymbolOrigin::Kind::sigmoid, node, static_cast<std::size_t>(i)}));
    }
    if (mode == Rounding::sound) {
        const VectorXd err = scaling_error(scale, z.generators(), z.center());
        const double u = std::numeric_limits<double>::epsilon();
        for (Index i = 0; i < d; ++i) {
            error[i] = rounding::up(rounding::up(error[i] * (1.0 + u)) + err[i]);
            error[i] = rounding::up(error[i] + rounding::up(std::abs(center[i]) * u));
        }
    }
    return {center, gens, ids, error};
}

Zonotope tanh(const Zonotope& z, const IntervalTensor& bounds, SymbolPool& pool, Rounding mode,
              std::size_t node)
{
    const Index d = static_cast<Index>(z.dim());
    const MatrixXd twice = MatrixXd::Identity(d, d) * 2.0;
    const Zonotope doubled = affine(z, twice, VectorXd::Zero(d), mode);
    const IntervalTensor doubled_bounds = box::scale(2.0, bounds, mode);
    const Zonotope s = sigmoid(doubled, doubled_bounds, pool, mode, node);
    return affine(s, twice, VectorXd::Constant(d, -1.0), mode);
}

Zonotope cast(const Zonotope& z, const IntervalTensor& bounds, CastMode cast_mode, SymbolPool& pool,
              Rounding mode, std::size_t node)
{
    if (bounds.size() != z.dim())
        throw ShapeError("zonotope cast: bounds dimension differs");
    const Index d = static_cast<Index>(z.dim());
    const Index m = static_cast<Index>(z.noise_count());
    const Monotone f = cast_mode == CastMode::floor  ? Monotone::floor
                       : cast_mode == CastMode::ceil ? Monotone::ceil
                                                     : Monotone::round;
    // floor(x) in x - 0.5 + [-0.5, 0.5]; ceil(x) in x + 0.5 + [-0.5, 0.5]; round(x) in x + [-0.5, 0.5].
    const double shift_value = cast_mode == CastMode::floor ? -0.5 : cast_mode == CastMode::ceil ? 0.5 : 0.0;

    VectorXd scale = VectorXd::Zero(d);
    VectorXd shift = VectorXd::Zero(d);
    std::vector<Index> fresh;
    for (Index i = 0; i < d; ++i) {
        const double l = bounds.lower()[i];
        const double u = bounds.upper()[i];
        const double fl = apply(f, l);
        if (fl == apply(f, u)) {
            shift[i] = fl;
        } else {
            scale[i] = 1.0;
            shift[i] = shift_value;
            fresh.push_back(i);
        }
    }
    MatrixXd gens(d, m + static_cast<Index>(fresh.size()));
    gens.leftCols(m) = scale.asDiagonal() * z.generators();
    gens.rightCols(static_cast<Index>(fresh.size())).setZero();
    VectorXd center = scale.cwiseProduct(z.center()) + shift;
    VectorXd error = scale.cwiseProduct(z.error());
    std::vector<SymbolId> ids = z.symbols();
    for (std::size_t k = 0; k < fresh.size(); ++k) {
        gens(fresh[k], m + static_cast<Index>(k)) = 0.5;
        ids.push_back(pool.fresh({SymbolOrigin::Kind::cast, node, static_cast<std::size_t>(fresh[k])}));
    }
    if (mode == Rounding::sound) {
        const double u = std::numeric_limits<double>::epsilon();
        for (Index i = 0; i < d; ++i)
            if (scale[i] != 0.0 && shift[i] != 0.0)
                error[i] = rounding::up(error[i] + rounding::up(std::abs(center[i]) * u));
    }
    return {center, gens, ids, error};
}

Zonotope reduce(const Zonotope& z, std::size_t max_symbols, SymbolPool& pool, Rounding mode)
{
    const std::size_t m = z.noise_count();
    const std::size_t d = z.dim();
    if (m <= max_symbols)
        return z;
    if (max_symbols < d)
        throw Error("zonotope reduce: max_symbols must be at least the dimension");

    const std::size_t keep = max_symbols - d;
    const VectorXd importance = z.generators().cwiseAbs().colwise().sum().transpose();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return importance[static_cast<Index>(a)] > importance[static_cast<Index>(b)];
    });
    std::vector<std::size_t> kept(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
    std::vector<std::size_t> merged(order.begin() + static_cast<std::ptrdiff_t>(keep), order.end());
    std::sort(kept.begin(), kept.end());

    const auto di = static_cast<Index>(d);
    MatrixXd gens(di, static_cast<Index>(keep + d));
    gens.setZero();
    std::vector<SymbolId> ids;
    for (std::size_t k = 0; k < kept.size(); ++k) {
        gens.col(static_cast<Index>(k)) = z.generators().col(static_cast<Index>(kept[k]));
        ids.push_back(z.symbols()[kept[k]]);
    }
    for (Index i = 0; i < di; ++i) {
        double mass = 0.0;
        for (std::size_t j : merged)
            mass = rounding::add_up(mass, std::abs(z.generators()(i, static_cast<Index>(j))), mode);
        gens(i, static_cast<Index>(keep) + i) = mass;
    }
    for (std::size_t i = 0; i < d; ++i)
        ids.push_back(pool.fresh({SymbolOrigin::Kind::reduction, 0, i}));
    return {z.center(), gens, ids, z.error()};
}

} // namespace zono

} // namespace zonoreach

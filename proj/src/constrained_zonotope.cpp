#include "zonoreach/constrained_zonotope.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "zonoreach/error.hpp"
#include "zonoreach/lp.hpp"

namespace zonoreach
{

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace
{

constexpr double machine_eps = std::numeric_limits<double>::epsilon();

// Offset that keeps row.eps + offset >= 0 implied after the row and offset
// were rounded: adds the rounding slack of both plus the absorbed error terms.
double relaxed_offset(const VectorXd& row, double offset, double absorbed, Rounding mode)
{
    if (mode == Rounding::fast)
        return offset + absorbed;
    const double mass = rounding::up(row.cwiseAbs().sum() * (1.0 + 1e-12));
    double slack = rounding::up(rounding::up(mass + std::abs(offset)) * 2.0 * machine_eps);
    slack = rounding::up(slack + rounding::underflow_slack(static_cast<std::size_t>(row.size())));
    return rounding::up(rounding::up(offset + absorbed) + slack);
}

// Re-lays rows over `to`, a sorted superset of `from`.
MatrixXd relayout(const MatrixXd& rows, std::span<const SymbolId> from, std::span<const SymbolId> to)
{
    if (rows.rows() == 0)
        return MatrixXd::Zero(0, static_cast<Index>(to.size()));
    return expand_columns(rows, from, to);
}

} // namespace

ConstrainedZonotope::ConstrainedZonotope(Zonotope body)
    : body_(std::move(body)), a_(MatrixXd::Zero(0, static_cast<Index>(body_.noise_count()))), b_(VectorXd::Zero(0))
{
}

ConstrainedZonotope::ConstrainedZonotope(Zonotope body, MatrixXd a, VectorXd b, std::vector<std::size_t> ids,
                                         bool empty)
    : body_(std::move(body)), a_(std::move(a)), b_(std::move(b)), ids_(std::move(ids)), empty_(empty)
{
    if (a_.rows() != b_.size() || static_cast<std::size_t>(a_.rows()) != ids_.size())
        throw ShapeError("constrained zonotope: constraint rows, offsets and ids disagree");
    if (static_cast<std::size_t>(a_.cols()) != body_.noise_count())
        throw ShapeError("constrained zonotope: constraint columns differ from noise count");
}

ConstrainedZonotope ConstrainedZonotope::with_body(Zonotope body) const
{
    const auto ids = merge_symbols(body.symbols(), symbols());
    Zonotope laid = body.over_symbols(ids);
    return {std::move(laid), relayout(a_, symbols(), ids), b_, ids_, empty_};
}

ConstrainedZonotope ConstrainedZonotope::with_constraints(const MatrixXd& a, const VectorXd& b,
                                                          std::span<const SymbolId> syms,
                                                          std::span<const std::size_t> ids) const
{
    const auto all = merge_symbols(symbols(), syms);
    MatrixXd old_rows = relayout(a_, symbols(), all);
    MatrixXd new_rows = relayout(a, syms, all);
    MatrixXd rows(old_rows.rows() + new_rows.rows(), static_cast<Index>(all.size()));
    rows << old_rows, new_rows;
    VectorXd offsets(b_.size() + b.size());
    offsets << b_, b;
    std::vector<std::size_t> all_ids = ids_;
    all_ids.insert(all_ids.end(), ids.begin(), ids.end());
    return {body_.over_symbols(all), rows, offsets, all_ids, empty_};
}

ConstrainedZonotope ConstrainedZonotope::select(std::span<const std::size_t> rows) const
{
    return {body_.select(rows), a_, b_, ids_, empty_};
}

ConstrainedZonotope ConstrainedZonotope::marked_empty() const
{
    return {body_, a_, b_, ids_, true};
}

bool ConstrainedZonotope::feasible(const VectorXd& eps, double tolerance) const
{
    if (eps.size() != static_cast<Index>(symbols().size()))
        return false;
    if ((eps.array().abs() > 1.0 + tolerance).any())
        return false;
    if (a_.rows() == 0)
        return true;
    return ((a_ * eps + b_).array() >= -tolerance).all();
}

double dual_value(const VectorXd& alpha, double beta, const MatrixXd& a, const VectorXd& b, const VectorXd& lambda)
{
    if (a.rows() == 0)
        return beta - alpha.cwiseAbs().sum();
    const VectorXd r = alpha - a.transpose() * lambda;
    return beta - r.cwiseAbs().sum() - lambda.dot(b);
}

double dual_value_lower(const VectorXd& alpha, double beta, const MatrixXd& a, const VectorXd& b,
                        const VectorXd& lambda_in, Rounding mode)
{
    const VectorXd lambda = lambda_in.cwiseMax(0.0);
    if (mode == Rounding::fast)
        return dual_value(alpha, beta, a, b, lambda);
    SoundScalar total = SoundScalar::point(beta);
    for (Index j = 0; j < alpha.size(); ++j) {
        SoundScalar r = SoundScalar::point(alpha[j]);
        for (Index k = 0; k < a.rows(); ++k)
            if (lambda[k] != 0.0 && a(k, j) != 0.0)
                r = sub(r, scale(lambda[k], SoundScalar::point(a(k, j)), mode), mode);
        total = sub(total, abs(r), mode);
    }
    for (Index k = 0; k < a.rows(); ++k)
        if (lambda[k] != 0.0)
            total = sub(total, scale(lambda[k], SoundScalar::point(b[k]), mode), mode);
    return total.lo;
}

namespace
{

VectorXd adam_ascent(const VectorXd& alpha, double beta, const MatrixXd& a, const VectorXd& b,
                     const DualOptions& options)
{
    const Index k = a.rows();
    VectorXd lambda = VectorXd::Zero(k);
    VectorXd best = lambda;
    double best_value = dual_value(alpha, beta, a, b, lambda);
    VectorXd m1 = VectorXd::Zero(k);
    VectorXd m2 = VectorXd::Zero(k);
    const double b1 = 0.9;
    const double b2 = 0.999;
    double p1 = 1.0;
    double p2 = 1.0;
    for (std::size_t t = 1; t <= options.iterations; ++t) {
        const VectorXd r = alpha - a.transpose() * lambda;
        VectorXd sign(r.size());
        for (Index j = 0; j < r.size(); ++j)
            sign[j] = r[j] > 0.0 ? 1.0 : (r[j] < 0.0 ? -1.0 : 0.0);
        const VectorXd grad = a * sign - b;
        m1 = b1 * m1 + (1.0 - b1) * grad;
        m2 = b2 * m2 + (1.0 - b2) * grad.cwiseAbs2();
        p1 *= b1;
        p2 *= b2;
        for (Index i = 0; i < k; ++i) {
            const double mh = m1[i] / (1.0 - p1);
            const double vh = m2[i] / (1.0 - p2);
            lambda[i] = std::max(0.0, lambda[i] + options.step * mh / (std::sqrt(vh) + 1e-12));
        }
        const double value = dual_value(alpha, beta, a, b, lambda);
        if (value > best_value) {
            best_value = value;
            best = lambda;
        }
    }
    return best;
}

// max_{lambda >= 0} D(lambda) as an LP in (lambda, t): minimize t.1 + b.lambda
// subject to |alpha - A^T lambda| <= t.
std::optional<VectorXd> simplex_multipliers(const VectorXd& alpha, const MatrixXd& a, const VectorXd& b,
                                            bool& unbounded)
{
    const Index k = a.rows();
    const Index m = alpha.size();
    lp::Problem p;
    p.cost = VectorXd::Zero(k + m);
    p.cost.head(k) = b;
    p.cost.tail(m).setOnes();
    p.ub = MatrixXd::Zero(2 * m, k + m);
    p.ub_rhs = VectorXd::Zero(2 * m);
    const MatrixXd at = a.transpose();
    for (Index j = 0; j < m; ++j) {
        p.ub.row(j).head(k) = -at.row(j);
        p.ub(j, k + j) = -1.0;
        p.ub_rhs[j] = -alpha[j];
        p.ub.row(m + j).head(k) = at.row(j);
        p.ub(m + j, k + j) = -1.0;
        p.ub_rhs[m + j] = alpha[j];
    }
    const lp::Solution s = lp::minimize(p);
    unbounded = s.status == lp::Status::unbounded;
    if (s.status != lp::Status::optimal)
        return std::nullopt;
    return VectorXd(s.x.head(k));
}

} // namespace

DualBound dual_lower_bound(const VectorXd& alpha, double beta, const MatrixXd& a, const VectorXd& b,
                           const DualOptions& options, Rounding mode)
{
    DualBound out;
    if (a.rows() == 0) {
        out.lambda = VectorXd::Zero(0);
        out.value = dual_value_lower(alpha, beta, a, b, out.lambda, mode);
        return out;
    }
    if (options.solver == DualOptions::Solver::simplex) {
        bool unbounded = false;
        if (auto lambda = simplex_multipliers(alpha, a, b, unbounded)) {
            out.lambda = *lambda;
            out.value = dual_value_lower(alpha, beta, a, b, out.lambda, mode);
            return out;
        }
        if (unbounded && certify_infeasible(a, b)) {
            out.lambda = VectorXd::Zero(a.rows());
            out.value = std::numeric_limits<double>::infinity();
            return out;
        }
    }
    out.lambda = options.iterations == 0 ? VectorXd::Zero(a.rows()) : adam_ascent(alpha, beta, a, b, options);
    out.value = dual_value_lower(alpha, beta, a, b, out.lambda, mode);
    return out;
}

std::optional<VectorXd> primal_minimizer(const VectorXd& alpha, const MatrixXd& a, const VectorXd& b)
{
    // eps = 2 z - 1 with z in [0, 1].
    const Index m = alpha.size();
    const Index k = a.rows();
    lp::Problem p;
    p.cost = 2.0 * alpha;
    p.ub = MatrixXd::Zero(m + k, m);
    p.ub_rhs = VectorXd::Zero(m + k);
    p.ub.topRows(m).setIdentity();
    p.ub_rhs.head(m).setOnes();
    if (k > 0) {
        p.ub.bottomRows(k) = -2.0 * a;
        p.ub_rhs.tail(k) = b - a.rowwise().sum();
    }
    const lp::Solution s = lp::minimize(p);
    if (s.status != lp::Status::optimal)
        return std::nullopt;
    return VectorXd((2.0 * s.x.array() - 1.0).cwiseMax(-1.0).cwiseMin(1.0));
}

bool certify_infeasible(const MatrixXd& a, const VectorXd& b)
{
    const Index k = a.rows();
    const Index m = a.cols();
    if (k == 0)
        return false;
    // minimize t.1 + b.lambda s.t. |A^T lambda| <= t, sum lambda = 1.
    lp::Problem p;
    p.cost = VectorXd::Zero(k + m);
    p.cost.head(k) = b;
    p.cost.tail(m).setOnes();
    p.ub = MatrixXd::Zero(2 * m, k + m);
    p.ub_rhs = VectorXd::Zero(2 * m);
    const MatrixXd at = a.transpose();
    for (Index j = 0; j < m; ++j) {
        p.ub.row(j).head(k) = -at.row(j);
        p.ub(j, k + j) = -1.0;
        p.ub.row(m + j).head(k) = at.row(j);
        p.ub(m + j, k + j) = -1.0;
    }
    p.eq = MatrixXd::Zero(1, k + m);
    p.eq.row(0).head(k).setOnes();
    p.eq_rhs = VectorXd::Ones(1);
    const lp::Solution s = lp::minimize(p);
    if (s.status != lp::Status::optimal || s.objective >= 0.0)
        return false;
    // max over the box of lambda.(A eps + b) must be < 0 under outward rounding.
    const VectorXd lambda = s.x.head(k).cwiseMax(0.0);
    const VectorXd zero = VectorXd::Zero(m);
    const double upper = -dual_value_lower(zero, 0.0, a, b, lambda, Rounding::sound);
    return upper < 0.0;
}

namespace czono
{

ConstrainedZonotope affine(const ConstrainedZonotope& z, const MatrixXd& weights, const VectorXd& bias,
                           Rounding mode)
{
    return z.with_body(zono::affine(z.body(), weights, bias, mode));
}

ConstrainedZonotope add(const ConstrainedZonotope& a, const ConstrainedZonotope& b, Rounding mode)
{
    const Zonotope sum = zono::add(a.body(), b.body(), mode);
    ConstrainedZonotope out = a.with_body(sum);
    // Constraints of both operands describe the same execution; keep each id once.
    std::vector<Index> fresh_rows;
    for (std::size_t k = 0; k < b.constraint_ids().size(); ++k)
        if (std::find(a.constraint_ids().begin(), a.constraint_ids().end(), b.constraint_ids()[k]) ==
            a.constraint_ids().end())
            fresh_rows.push_back(static_cast<Index>(k));
    MatrixXd rows(static_cast<Index>(fresh_rows.size()), b.constraint_matrix().cols());
    VectorXd offsets(static_cast<Index>(fresh_rows.size()));
    std::vector<std::size_t> ids;
    for (std::size_t k = 0; k < fresh_rows.size(); ++k) {
        rows.row(static_cast<Index>(k)) = b.constraint_matrix().row(fresh_rows[k]);
        offsets[static_cast<Index>(k)] = b.constraint_offset()[fresh_rows[k]];
        ids.push_back(b.constraint_ids()[static_cast<std::size_t>(fresh_rows[k])]);
    }
    out = out.with_constraints(rows, offsets, b.symbols(), ids);
    return a.known_empty() || b.known_empty() ? out.marked_empty() : out;
}

ConstrainedZonotope add_constant(const ConstrainedZonotope& a, const VectorXd& c, Rounding mode)
{
    return a.with_body(zono::add_constant(a.body(), c, mode));
}

ConstrainedZonotope stack(std::span<const ConstrainedZonotope> parts)
{
    if (parts.empty())
        throw ShapeError("constrained zonotope stack: no parts");
    std::vector<Zonotope> bodies;
    for (const auto& p : parts)
        bodies.push_back(p.body());
    ConstrainedZonotope out = parts.front().with_body(zono::stack(bodies));
    for (std::size_t i = 1; i < parts.size(); ++i) {
        const auto& p = parts[i];
        std::vector<Index> rows_idx;
        for (std::size_t k = 0; k < p.constraint_ids().size(); ++k)
            if (std::find(out.constraint_ids().begin(), out.constraint_ids().end(), p.constraint_ids()[k]) ==
                out.constraint_ids().end())
                rows_idx.push_back(static_cast<Index>(k));
        MatrixXd rows(static_cast<Index>(rows_idx.size()), p.constraint_matrix().cols());
        VectorXd offsets(static_cast<Index>(rows_idx.size()));
        std::vector<std::size_t> ids;
        for (std::size_t k = 0; k < rows_idx.size(); ++k) {
            rows.row(static_cast<Index>(k)) = p.constraint_matrix().row(rows_idx[k]);
            offsets[static_cast<Index>(k)] = p.constraint_offset()[rows_idx[k]];
            ids.push_back(p.constraint_ids()[static_cast<std::size_t>(rows_idx[k])]);
        }
        out = out.with_constraints(rows, offsets, p.symbols(), ids);
        if (p.known_empty())
            out = out.marked_empty();
    }
    return out;
}

ConstrainedZonotope add_split_constraint(const ConstrainedZonotope& post, const ConstrainedZonotope& pre,
                                         std::size_t neuron, Phase sign, ConstraintCounter& counter,
                                         Rounding mode)
{
    if (neuron >= pre.dim() || neuron >= post.dim())
        throw Error("split constraint: unknown neuron " + std::to_string(neuron));
    if (sign == Phase::free)
        return post;

    const auto ids = merge_symbols(post.symbols(), pre.symbols());
    const Zonotope pre_body = pre.body().over_symbols(ids);
    Zonotope body = post.body().over_symbols(ids);
    const auto i = static_cast<Index>(neuron);

    VectorXd center = body.center();
    MatrixXd gens = body.generators();
    VectorXd error = body.error();
    const VectorXd x_row = pre_body.generators().row(i).transpose();
    const double x_center = pre_body.center()[i];
    const double x_error = pre_body.error()[i];

    VectorXd row;
    double offset = 0.0;
    if (sign == Phase::inactive) {
        gens.row(i).setZero();
        center[i] = 0.0;
        error[i] = 0.0;
        row = -x_row;
        offset = -x_center;
    } else {
        gens.row(i) = x_row.transpose();
        center[i] = x_center;
        error[i] = x_error;
        row = x_row;
        offset = x_center;
    }
    offset = relaxed_offset(row, offset, x_error, mode);

    ConstrainedZonotope out =
        ConstrainedZonotope(post.body(), post.constraint_matrix(), post.constraint_offset(), post.constraint_ids(),
                            post.known_empty())
            .with_body(Zonotope(center, gens, ids, error));
    const std::size_t id = counter.next();
    return out.with_constraints(row.transpose(), VectorXd::Constant(1, offset), ids,
                                std::span<const std::size_t>(&id, 1));
}

ConstrainedZonotope relu(const ConstrainedZonotope& z, const IntervalTensor& bounds, SymbolPool& pool,
                         ConstraintCounter& counter, Rounding mode, std::size_t node, std::span<const Phase> phases)
{
    const std::size_t before = pool.size();
    const Zonotope body = zono::relu(z.body(), bounds, pool, mode, node, phases);
    ConstrainedZonotope out = z.with_body(body);

    // Pre-activation laid over the output's symbols.
    const Zonotope pre = z.body().over_symbols(out.symbols());
    const Zonotope& post = out.body();
    std::vector<VectorXd> rows;
    std::vector<double> offsets;
    for (SymbolId s = before; s < pool.size(); ++s) {
        const auto i = static_cast<Index>(pool.origin(s).index);
        const VectorXd y_row = post.generators().row(i).transpose();
        const VectorXd x_row = pre.generators().row(i).transpose();
        // y >= 0
        rows.push_back(y_row);
        offsets.push_back(relaxed_offset(y_row, post.center()[i], post.error()[i], mode));
        // y - x >= 0
        const VectorXd diff = y_row - x_row;
        const double c = post.center()[i] - pre.center()[i];
        const double absorbed = rounding::add_up(post.error()[i], pre.error()[i], mode);
        rows.push_back(diff);
        offsets.push_back(relaxed_offset(diff, c, absorbed, mode));
    }
    if (!rows.empty()) {
        MatrixXd a(static_cast<Index>(rows.size()), static_cast<Index>(out.symbols().size()));
        VectorXd b(static_cast<Index>(rows.size()));
        std::vector<std::size_t> ids;
        for (std::size_t k = 0; k < rows.size(); ++k) {
            a.row(static_cast<Index>(k)) = rows[k].transpose();
            b[static_cast<Index>(k)] = offsets[k];
            ids.push_back(counter.next());
        }
        out = out.with_constraints(a, b, out.symbols(), ids);
    }

    for (std::size_t i = 0; i < phases.size(); ++i)
        if (phases[i] != Phase::free)
            out = add_split_constraint(out, z, i, phases[i], counter, mode);
    return out;
}

Concretization concretize(const ConstrainedZonotope& z, const DualOptions& options, Rounding mode)
{
    std::vector<std::size_t> all(z.dim());
    std::iota(all.begin(), all.end(), 0);
    return concretize(z, options, mode, all);
}

Concretization concretize(const ConstrainedZonotope& z, const DualOptions& options, Rounding mode,
                          std::span<const std::size_t> dims)
{
    Concretization out{z.body().concretize(mode), z.known_empty()};
    if (z.constraint_count() == 0 || out.empty)
        return out;
    const MatrixXd& a = z.constraint_matrix();
    const VectorXd& b = z.constraint_offset();
    const Zonotope& body = z.body();
    for (std::size_t i : dims) {
        const auto r = static_cast<Index>(i);
        const VectorXd alpha = body.generators().row(r).transpose();
        const double beta = body.center()[r];
        const double err = body.error()[r];
        const DualBound lo = dual_lower_bound(alpha, beta, a, b, options, mode);
        const DualBound hi = dual_lower_bound(-alpha, -beta, a, b, options, mode);
        const double lower = rounding::sub_down(lo.value, err, mode);
        const double upper = rounding::add_up(-hi.value, err, mode);
        out.bounds.set(i, {std::max(out.bounds.lower(i), lower), std::min(out.bounds.upper(i), upper)});
        if (out.bounds.lower(i) > out.bounds.upper(i))
            out.empty = true;
    }
    return out;
}

} // namespace czono

} // namespace zonoreach

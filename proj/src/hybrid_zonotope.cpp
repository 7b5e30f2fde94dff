#include "zonoreach/hybrid_zonotope.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "zonoreach/error.hpp"

namespace zonoreach
{

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace
{

constexpr double machine_eps = std::numeric_limits<double>::epsilon();

bool contains_id(std::span<const SymbolId> ids, SymbolId id)
{
    return std::binary_search(ids.begin(), ids.end(), id);
}

MatrixXd relayout(const MatrixXd& rows, std::span<const SymbolId> from, std::span<const SymbolId> to)
{
    if (rows.rows() == 0)
        return MatrixXd::Zero(0, static_cast<Index>(to.size()));
    return expand_columns(rows, from, to);
}

// Rows of `other` whose ids `h` does not already carry.
HybridZonotope merge_constraints(const HybridZonotope& h, const HybridZonotope& other)
{
    std::vector<Index> keep;
    for (std::size_t k = 0; k < other.constraint_ids().size(); ++k)
        if (std::find(h.constraint_ids().begin(), h.constraint_ids().end(), other.constraint_ids()[k]) ==
            h.constraint_ids().end())
            keep.push_back(static_cast<Index>(k));
    const auto n = static_cast<Index>(keep.size());
    MatrixXd eq(n, other.eq_matrix().cols());
    VectorXd offset(n), tol(n);
    std::vector<std::size_t> ids;
    for (Index k = 0; k < n; ++k) {
        eq.row(k) = other.eq_matrix().row(keep[static_cast<std::size_t>(k)]);
        offset[k] = other.eq_offset()[keep[static_cast<std::size_t>(k)]];
        tol[k] = other.eq_tolerance()[keep[static_cast<std::size_t>(k)]];
        ids.push_back(other.constraint_ids()[static_cast<std::size_t>(keep[static_cast<std::size_t>(k)])]);
    }
    return h.with_constraints(eq, offset, tol, other.symbols(), other.binary(), ids);
}

} // namespace

HybridZonotope::HybridZonotope(Zonotope body)
    : body_(std::move(body)), eq_(MatrixXd::Zero(0, static_cast<Index>(body_.noise_count()))),
      eq_offset_(VectorXd::Zero(0)), eq_tol_(VectorXd::Zero(0))
{
}

HybridZonotope::HybridZonotope(Zonotope body, std::vector<SymbolId> binary, MatrixXd eq, VectorXd eq_offset,
                               VectorXd eq_tolerance, std::vector<std::size_t> ids)
    : body_(std::move(body)), binary_(std::move(binary)), eq_(std::move(eq)), eq_offset_(std::move(eq_offset)),
      eq_tol_(std::move(eq_tolerance)), ids_(std::move(ids))
{
    if (eq_.rows() != eq_offset_.size() || eq_tol_.size() != eq_offset_.size() ||
        static_cast<std::size_t>(eq_.rows()) != ids_.size())
        throw ShapeError("hybrid zonotope: constraint rows, offsets, tolerances and ids disagree");
    if (static_cast<std::size_t>(eq_.cols()) != body_.noise_count())
        throw ShapeError("hybrid zonotope: constraint columns differ from noise count");
    for (SymbolId b : binary_)
        if (!contains_id(body_.symbols(), b))
            throw ShapeError("hybrid zonotope: binary symbol missing from the body");
}

MatrixXd HybridZonotope::continuous_generators() const
{
    MatrixXd out(static_cast<Index>(dim()), static_cast<Index>(continuous_count()));
    Index k = 0;
    for (std::size_t j = 0; j < symbols().size(); ++j)
        if (!contains_id(binary_, symbols()[j]))
            out.col(k++) = body_.generators().col(static_cast<Index>(j));
    return out;
}

MatrixXd HybridZonotope::binary_generators() const
{
    MatrixXd out(static_cast<Index>(dim()), static_cast<Index>(binary_count()));
    Index k = 0;
    for (std::size_t j = 0; j < symbols().size(); ++j)
        if (contains_id(binary_, symbols()[j]))
            out.col(k++) = body_.generators().col(static_cast<Index>(j));
    return out;
}

HybridZonotope HybridZonotope::with_body(Zonotope body) const
{
    const auto ids = merge_symbols(body.symbols(), symbols());
    Zonotope laid = body.over_symbols(ids);
    return {std::move(laid), binary_, relayout(eq_, symbols(), ids), eq_offset_, eq_tol_, ids_};
}

HybridZonotope HybridZonotope::with_constraints(const MatrixXd& eq, const VectorXd& offset, const VectorXd& tolerance,
                                                std::span<const SymbolId> syms, std::span<const SymbolId> new_binary,
                                                std::span<const std::size_t> ids) const
{
    const auto all = merge_symbols(symbols(), syms);
    MatrixXd old_rows = relayout(eq_, symbols(), all);
    MatrixXd new_rows = relayout(eq, syms, all);
    MatrixXd rows(old_rows.rows() + new_rows.rows(), static_cast<Index>(all.size()));
    rows << old_rows, new_rows;
    VectorXd offsets(eq_offset_.size() + offset.size());
    offsets << eq_offset_, offset;
    VectorXd tol(eq_tol_.size() + tolerance.size());
    tol << eq_tol_, tolerance;
    std::vector<std::size_t> all_ids = ids_;
    all_ids.insert(all_ids.end(), ids.begin(), ids.end());
    return {body_.over_symbols(all), merge_symbols(binary_, new_binary), rows, offsets, tol, all_ids};
}

HybridZonotope HybridZonotope::select(std::span<const std::size_t> rows) const
{
    return {body_.select(rows), binary_, eq_, eq_offset_, eq_tol_, ids_};
}

ConstrainedZonotope HybridZonotope::branch(std::span<const double> values, Rounding mode) const
{
    if (values.size() != binary_.size())
        throw ShapeError("hybrid zonotope branch: expected " + std::to_string(binary_.size()) + " binary values");
    std::vector<SymbolId> cont;
    std::vector<Index> cont_cols;
    std::vector<std::pair<Index, double>> bin_cols;
    for (std::size_t j = 0, b = 0; j < symbols().size(); ++j) {
        if (b < binary_.size() && binary_[b] == symbols()[j]) {
            bin_cols.emplace_back(static_cast<Index>(j), values[b]);
            ++b;
        } else {
            cont.push_back(symbols()[j]);
            cont_cols.push_back(static_cast<Index>(j));
        }
    }

    // Substitutes the binary values into a row: returns an enclosure of offset + sum_b row_b v_b.
    const auto substitute = [&](auto&& entry, double offset) {
        SoundScalar s = SoundScalar::point(offset);
        for (const auto& [col, v] : bin_cols)
            s = add(s, SoundScalar::point(v * entry(col)), mode);
        return s;
    };

    const Index d = static_cast<Index>(dim());
    const auto mc = static_cast<Index>(cont.size());
    VectorXd center(d), error(d);
    MatrixXd gens(d, mc);
    for (Index i = 0; i < d; ++i) {
        for (Index k = 0; k < mc; ++k)
            gens(i, k) = body_.generators()(i, cont_cols[static_cast<std::size_t>(k)]);
        const SoundScalar c =
            substitute([&](Index col) { return body_.generators()(i, col); }, body_.center()[i]);
        center[i] = c.mid();
        const double spread = std::max(rounding::up(c.hi - center[i]), rounding::up(center[i] - c.lo));
        error[i] = mode == Rounding::sound ? rounding::up(body_.error()[i] + spread) : body_.error()[i];
    }

    const Index k_eq = eq_.rows();
    MatrixXd a(2 * k_eq, mc);
    VectorXd b(2 * k_eq);
    for (Index k = 0; k < k_eq; ++k) {
        for (Index j = 0; j < mc; ++j)
            a(k, j) = eq_(k, cont_cols[static_cast<std::size_t>(j)]);
        a.row(k_eq + k) = -a.row(k);
        const SoundScalar s = substitute([&](Index col) { return eq_(k, col); }, eq_offset_[k]);
        b[k] = rounding::add_up(s.hi, eq_tol_[k], mode);
        b[k_eq + k] = rounding::add_up(-s.lo, eq_tol_[k], mode);
    }
    std::vector<std::size_t> ids(static_cast<std::size_t>(2 * k_eq));
    std::iota(ids.begin(), ids.end(), 0);
    return {Zonotope(center, gens, cont, error), a, b, ids};
}

namespace hzono
{

HybridZonotope affine(const HybridZonotope& h, const MatrixXd& weights, const VectorXd& bias, Rounding mode)
{
    return h.with_body(zono::affine(h.body(), weights, bias, mode));
}

HybridZonotope add(const HybridZonotope& a, const HybridZonotope& b, Rounding mode)
{
    return merge_constraints(a.with_body(zono::add(a.body(), b.body(), mode)), b);
}

HybridZonotope add_constant(const HybridZonotope& h, const VectorXd& c, Rounding mode)
{
    return h.with_body(zono::add_constant(h.body(), c, mode));
}

HybridZonotope stack(std::span<const HybridZonotope> parts)
{
    if (parts.empty())
        throw ShapeError("hybrid zonotope stack: no parts");
    std::vector<Zonotope> bodies;
    for (const auto& p : parts)
        bodies.push_back(p.body());
    HybridZonotope out = parts.front().with_body(zono::stack(bodies));
    for (std::size_t i = 1; i < parts.size(); ++i)
        out = merge_constraints(out, parts[i]);
    return out;
}

HybridZonotope relu_exact(const HybridZonotope& h, const IntervalTensor& bounds, SymbolPool& pool,
                          ConstraintCounter& counter, Rounding mode, std::size_t node, std::size_t binary_limit,
                          HybridBudget* budget)
{
    if (bounds.size() != h.dim())
        throw ShapeError("hybrid zonotope relu: bounds dimension differs");
    if (!bounds.is_finite())
        throw Error("hybrid zonotope relu: bounds must be finite");

    const Index d = static_cast<Index>(h.dim());
    std::vector<Index> unstable;
    for (Index i = 0; i < d; ++i)
        if (bounds.lower()[i] < 0.0 && bounds.upper()[i] > 0.0)
            unstable.push_back(i);
    if (h.binary_count() + unstable.size() > binary_limit)
        throw CapacityError("hybrid zonotope: " + std::to_string(h.binary_count() + unstable.size()) +
                            " binary symbols exceed the enumeration limit " + std::to_string(binary_limit));

    const Zonotope& x = h.body();
    const auto m = static_cast<Index>(x.noise_count());
    const auto fresh = static_cast<Index>(5 * unstable.size());

    std::vector<SymbolId> ids = x.symbols();
    std::vector<SymbolId> binary;
    for (Index i : unstable)
        for (int s = 0; s < 5; ++s) {
            ids.push_back(pool.fresh({SymbolOrigin::Kind::hybrid, node, static_cast<std::size_t>(i)}));
            if (s == 4)
                binary.push_back(ids.back());
        }

    VectorXd center = x.center();
    MatrixXd gens = MatrixXd::Zero(d, m + fresh);
    gens.leftCols(m) = x.generators();
    VectorXd error = x.error();
    for (Index i = 0; i < d; ++i)
        if (bounds.upper()[i] <= 0.0) {
            center[i] = 0.0;
            gens.row(i).setZero();
            error[i] = 0.0;
        }

    const auto rows = static_cast<Index>(3 * unstable.size());
    MatrixXd eq = MatrixXd::Zero(rows, m + fresh);
    VectorXd offset = VectorXd::Zero(rows);
    VectorXd tol = VectorXd::Zero(rows);
    std::vector<std::size_t> cids;
    for (std::size_t n = 0; n < unstable.size(); ++n) {
        const Index i = unstable[n];
        const double l = bounds.lower()[i];
        const double u = bounds.upper()[i];
        const double hl = 0.5 * l;
        const double hu = 0.5 * u;
        const Index e1 = m + static_cast<Index>(5 * n);
        const Index e2 = e1 + 1, e3 = e1 + 2, e4 = e1 + 3, eb = e1 + 4;
        const auto r = static_cast<Index>(3 * n);

        // b = -1 selects x = l/2 (1 + e1) in [l, 0], y = 0 (e2 = e4 = -1);
        // b = +1 selects x = u/2 (1 + e2) in [0, u], y = x (e1 = e3 = -1).
        eq(r, e1) = 1.0;
        eq(r, e3) = 1.0;
        eq(r, eb) = 1.0;
        offset[r] = 1.0;
        eq(r + 1, e2) = 1.0;
        eq(r + 1, e4) = 1.0;
        eq(r + 1, eb) = -1.0;
        offset[r + 1] = 1.0;
        // The incoming form equals the encoded input: X_i(eps) - l/2 (1 + e1) - u/2 (1 + e2) = 0.
        eq.row(r + 2).head(m) = x.generators().row(i);
        eq(r + 2, e1) = -hl;
        eq(r + 2, e2) = -hu;
        offset[r + 2] = x.center()[i] - hl - hu;
        if (mode == Rounding::sound) {
            const double scale = rounding::up(std::abs(x.center()[i]) + rounding::up(std::abs(hl) + std::abs(hu)));
            tol[r + 2] = rounding::up(x.error()[i] + rounding::up(scale * 2.0 * machine_eps)) +
                         rounding::underflow_slack(4);
        }
        for (int c = 0; c < 3; ++c)
            cids.push_back(counter.next());

        center[i] = hu;
        gens.row(i).setZero();
        gens(i, e2) = hu;
        error[i] = mode == Rounding::sound ? rounding::underflow_slack(2) : 0.0;
    }

    if (budget)
        *budget = {4 * unstable.size(), unstable.size(), 3 * unstable.size()};
    HybridZonotope out(Zonotope(center, gens, ids, error), h.binary(), relayout(h.eq_matrix(), x.symbols(), ids),
                       h.eq_offset(), h.eq_tolerance(), h.constraint_ids());
    return out.with_constraints(eq, offset, tol, ids, binary, cids);
}

Concretization concretize(const HybridZonotope& h, Rounding mode, std::size_t binary_limit)
{
    std::vector<std::size_t> all(h.dim());
    std::iota(all.begin(), all.end(), 0);
    return concretize(h, mode, all, binary_limit);
}

Concretization concretize(const HybridZonotope& h, Rounding mode, std::span<const std::size_t> dims,
                          std::size_t binary_limit)
{
    const std::size_t mb = h.binary_count();
    if (mb > binary_limit)
        throw CapacityError("hybrid zonotope: " + std::to_string(mb) + " binary symbols exceed the enumeration limit " +
                            std::to_string(binary_limit));
    const IntervalTensor body = h.body().concretize(mode);
    if (h.constraint_count() == 0 && mb == 0)
        return {body, false};

    DualOptions options;
    options.solver = DualOptions::Solver::simplex;
    VectorXd lo = VectorXd::Constant(static_cast<Index>(h.dim()), rounding::inf);
    VectorXd hi = VectorXd::Constant(static_cast<Index>(h.dim()), -rounding::inf);
    bool any = false;
    std::vector<double> values(mb);
    for (std::size_t mask = 0; mask < (std::size_t{1} << mb); ++mask) {
        for (std::size_t b = 0; b < mb; ++b)
            values[b] = (mask >> b) & 1U ? 1.0 : -1.0;
        const ConstrainedZonotope cz = h.branch(values, mode);
        if (cz.constraint_count() > 0 && certify_infeasible(cz.constraint_matrix(), cz.constraint_offset()))
            continue;
        const Concretization c = czono::concretize(cz, options, mode, dims);
        if (c.empty)
            continue;
        any = true;
        for (std::size_t i : dims) {
            const auto r = static_cast<Index>(i);
            lo[r] = std::min(lo[r], c.bounds.lower(i));
            hi[r] = std::max(hi[r], c.bounds.upper(i));
        }
    }
    Concretization out{body, !any};
    if (any)
        for (std::size_t i : dims)
            out.bounds.set(i, {std::max(body.lower(i), lo[static_cast<Index>(i)]),
                               std::min(body.upper(i), hi[static_cast<Index>(i)])});
    return out;
}

} // namespace hzono

} // namespace zonoreach

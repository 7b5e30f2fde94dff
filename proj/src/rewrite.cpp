#include "zonoreach/rewrite.hpp"

#include <algorithm>
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

constexpr std::size_t unmapped = std::numeric_limits<std::size_t>::max();

/// Copies nodes of `src` into a fresh graph, remapping input indices.
struct Rebuild
{
    const NetworkGraph& src;
    NetworkGraph out;
    std::vector<std::size_t> map;

    explicit Rebuild(const NetworkGraph& g) : src(g), out(g.input_shape(), g.layer(0).name), map(g.size(), unmapped)
    {
        map[0] = 0;
    }

    Layer copy(std::size_t i) const
    {
        Layer l = src.layer(i);
        for (auto& j : l.inputs)
            j = map.at(j);
        return l;
    }

    std::size_t add(Layer l) { return out.add(std::move(l)); }

    std::size_t affine(std::size_t input, MatrixXd w, VectorXd b, const std::string& name)
    {
        Layer l;
        l.kind = LayerKind::affine;
        l.name = name;
        l.inputs = {input};
        l.weights = std::move(w);
        l.bias = std::move(b);
        return out.add(std::move(l));
    }

    std::size_t unary(LayerKind kind, std::size_t input, const std::string& name)
    {
        Layer l;
        l.kind = kind;
        l.name = name;
        l.inputs = {input};
        return out.add(std::move(l));
    }

    std::size_t reshape(std::size_t input, Shape target, const std::string& name)
    {
        Layer l;
        l.kind = LayerKind::reshape;
        l.name = name;
        l.inputs = {input};
        l.target = std::move(target);
        return out.add(std::move(l));
    }

    NetworkGraph finish()
    {
        out.set_output(map.at(src.output()));
        out.normalization = src.normalization;
        return std::move(out);
    }
};

bool is_reshape_like(LayerKind k)
{
    return k == LayerKind::reshape || k == LayerKind::flatten;
}

} // namespace

NetworkGraph prune(const NetworkGraph& g)
{
    const std::vector<bool> live = g.live();
    Rebuild r(g);
    for (std::size_t i = 1; i < g.size(); ++i)
        if (live[i])
            r.map[i] = r.add(r.copy(i));
    return r.finish();
}

namespace
{

/// One simplification sweep; returns true if anything changed.
bool simplify_pass(const NetworkGraph& g, const NormalizedProperty* property, NetworkGraph& result)
{
    Rebuild r(g);
    bool changed = false;
    const bool order_only = property && is_order_only(property->prove_form());
    for (std::size_t i = 1; i < g.size(); ++i) {
        const Layer& l = g.layer(i);
        const std::size_t first = l.inputs.empty() ? 0 : l.inputs.front();
        const Layer& producer = g.layer(first);
        const bool sole_consumer = first != 0 && g.consumers(first).size() == 1 && first != g.output();

        if (l.kind == LayerKind::bias_add && sole_consumer &&
            (producer.kind == LayerKind::matmul || producer.kind == LayerKind::affine)) {
            const std::size_t source = producer.inputs.front();
            auto [w, b] = linear_map(producer, g.layer(source).shape);
            const auto [eye, bias] = linear_map(l, producer.shape);
            (void)eye;
            b += bias;
            std::size_t node = r.affine(r.map[source], std::move(w), std::move(b), l.name);
            if (l.shape.size() != 1)
                node = r.reshape(node, l.shape, l.name + "_shape");
            r.map[i] = node;
            changed = true;
            continue;
        }
        if (l.kind == LayerKind::matmul && g.layer(first).shape.size() == 1) {
            auto [w, b] = linear_map(l, g.layer(first).shape);
            r.map[i] = r.affine(r.map[first], std::move(w), std::move(b), l.name);
            changed = true;
            continue;
        }
        if (l.kind == LayerKind::transpose && producer.kind == LayerKind::transpose) {
            std::vector<std::size_t> perm(l.perm.size());
            for (std::size_t k = 0; k < perm.size(); ++k)
                perm[k] = producer.perm[l.perm[k]];
            std::vector<std::size_t> iota(perm.size());
            std::iota(iota.begin(), iota.end(), 0);
            const std::size_t source = producer.inputs.front();
            if (perm == iota) {
                r.map[i] = r.map[source];
            } else {
                Layer t = l;
                t.inputs = {r.map[source]};
                t.perm = perm;
                r.map[i] = r.add(std::move(t));
            }
            changed = true;
            continue;
        }
        if (is_reshape_like(l.kind) && g.layer(first).shape == l.shape) {
            r.map[i] = r.map[first];
            changed = true;
            continue;
        }
        if (is_reshape_like(l.kind) && is_reshape_like(producer.kind) && first != 0) {
            r.map[i] = r.reshape(r.map[producer.inputs.front()], l.shape, l.name);
            changed = true;
            continue;
        }
        if (l.kind == LayerKind::softmax && i == g.output() && order_only) {
            r.map[i] = r.map[first];
            changed = true;
            continue;
        }
        r.map[i] = r.add(r.copy(i));
    }
    result = prune(r.finish());
    return changed;
}

} // namespace

NetworkGraph simplify(const NetworkGraph& g, const NormalizedProperty* property)
{
    NetworkGraph current = prune(g);
    for (;;) {
        NetworkGraph next;
        if (!simplify_pass(current, property, next))
            return next;
        current = std::move(next);
    }
}

NetworkGraph rewrite_maxpool(const NetworkGraph& g)
{
    Rebuild r(g);
    for (std::size_t i = 1; i < g.size(); ++i) {
        const Layer& l = g.layer(i);
        if (l.kind != LayerKind::maxpool) {
            r.map[i] = r.add(r.copy(i));
            continue;
        }
        const Shape& in_shape = g.layer(l.inputs.front()).shape;
        const auto windows = pool_windows(l.pool, in_shape);
        std::vector<std::vector<std::size_t>> pos = windows;
        std::size_t cur = r.map[l.inputs.front()];
        auto width = static_cast<Index>(shape_size(in_shape));
        std::size_t stage = 0;
        const auto longest = [&] {
            std::size_t m = 0;
            for (const auto& p : pos)
                m = std::max(m, p.size());
            return m;
        };
        while (longest() > 1) {
            // Each output keeps ceil(n/2) operands: pairs become relu(a - b) + b,
            // an odd one out passes through (zero row in the difference).
            Index rows = 0;
            for (const auto& p : pos)
                rows += static_cast<Index>((p.size() + 1) / 2);
            MatrixXd diff = MatrixXd::Zero(rows, width);
            MatrixXd base = MatrixXd::Zero(rows, width);
            Index row = 0;
            for (auto& p : pos) {
                std::vector<std::size_t> next;
                for (std::size_t k = 0; k < p.size(); k += 2, ++row) {
                    if (k + 1 < p.size()) {
                        diff(row, static_cast<Index>(p[k])) += 1.0;
                        diff(row, static_cast<Index>(p[k + 1])) -= 1.0;
                        base(row, static_cast<Index>(p[k + 1])) = 1.0;
                    } else {
                        base(row, static_cast<Index>(p[k])) = 1.0;
                    }
                    next.push_back(static_cast<std::size_t>(row));
                }
                p = std::move(next);
            }
            const std::string tag = l.name + "_max" + std::to_string(stage++);
            const std::size_t d = r.affine(cur, std::move(diff), VectorXd::Zero(rows), tag + "_diff");
            const std::size_t relu = r.unary(LayerKind::relu, d, tag + "_relu");
            const std::size_t b = r.affine(cur, std::move(base), VectorXd::Zero(rows), tag + "_base");
            Layer add;
            add.kind = LayerKind::add;
            add.name = tag + "_add";
            add.inputs = {relu, b};
            cur = r.add(std::move(add));
            width = rows;
        }
        if (stage == 0) {
            MatrixXd pick = MatrixXd::Zero(static_cast<Index>(pos.size()), width);
            for (std::size_t o = 0; o < pos.size(); ++o)
                pick(static_cast<Index>(o), static_cast<Index>(pos[o].front())) = 1.0;
            cur = r.affine(cur, std::move(pick), VectorXd::Zero(static_cast<Index>(pos.size())), l.name + "_pick");
        }
        r.map[i] = r.reshape(cur, l.shape, l.name);
    }
    return r.finish();
}

namespace
{

void collect_atoms(const Predicate& p, std::vector<const Atom*>& out)
{
    if (p.kind == Predicate::Kind::atom)
        out.push_back(&p.atom);
    for (const auto& c : p.children)
        collect_atoms(c, out);
}

VectorXd atom_row(const Atom& a, std::size_t outputs, std::size_t inputs)
{
    VectorXd row = VectorXd::Zero(static_cast<Index>(outputs + inputs));
    row.head(a.out.size()) = a.out;
    if (a.uses_inputs())
        row.segment(static_cast<Index>(outputs), a.in.size()) = a.in;
    return row;
}

Predicate relabel(const Predicate& p, const std::vector<std::pair<std::size_t, double>>& slots,
                  std::size_t& next, std::size_t rows)
{
    Predicate q = p;
    if (p.kind == Predicate::Kind::atom) {
        const auto [k, sign] = slots[next++];
        q.atom.out = VectorXd::Zero(static_cast<Index>(rows));
        q.atom.out[static_cast<Index>(k)] = sign;
        q.atom.in = VectorXd();
        return q;
    }
    for (auto& c : q.children)
        c = relabel(c, slots, next, rows);
    return q;
}

} // namespace

std::pair<NetworkGraph, NormalizedProperty> append_property_layer(const NetworkGraph& g, const NormalizedProperty& p)
{
    std::vector<const Atom*> atoms;
    collect_atoms(p.predicate, atoms);
    if (atoms.empty())
        return {g, p};
    const bool with_inputs = p.uses_inputs();
    const std::size_t ny = g.output_size();
    const std::size_t nx = with_inputs ? g.input_size() : 0;

    // Rows of C; an atom whose row is the negation of an earlier one reuses it.
    std::vector<VectorXd> rows;
    std::vector<std::pair<std::size_t, double>> slots;
    for (const Atom* a : atoms) {
        if (static_cast<std::size_t>(a->out.size()) > ny)
            throw ShapeError("property refers to " + std::to_string(a->out.size()) + " outputs, the network has " +
                             std::to_string(ny));
        const VectorXd row = atom_row(*a, ny, nx);
        std::optional<std::pair<std::size_t, double>> slot;
        for (std::size_t k = 0; k < rows.size() && !slot; ++k) {
            if (rows[k] == row)
                slot = {k, 1.0};
            else if (rows[k] == -row)
                slot = {k, -1.0};
        }
        if (!slot) {
            slot = {rows.size(), 1.0};
            rows.push_back(row);
        }
        slots.push_back(*slot);
    }

    MatrixXd c(static_cast<Index>(rows.size()), static_cast<Index>(ny + nx));
    for (std::size_t k = 0; k < rows.size(); ++k)
        c.row(static_cast<Index>(k)) = rows[k].transpose();

    Rebuild r(g);
    for (std::size_t i = 1; i < g.size(); ++i)
        r.map[i] = r.add(r.copy(i));
    std::size_t source = r.map[g.output()];
    if (g.output_shape().size() != 1)
        source = r.unary(LayerKind::flatten, source, "property_flat_y");
    if (with_inputs) {
        std::size_t x = 0;
        if (g.input_shape().size() != 1)
            x = r.unary(LayerKind::flatten, x, "property_flat_x");
        Layer cat;
        cat.kind = LayerKind::concat;
        cat.name = "property_concat";
        cat.inputs = {source, x};
        cat.axis = 0;
        source = r.add(std::move(cat));
    }
    r.affine(source, c, VectorXd::Zero(c.rows()), "property");
    NetworkGraph out = std::move(r.out);
    out.normalization = g.normalization;

    NormalizedProperty q = p;
    std::size_t next = 0;
    q.predicate = relabel(p.predicate, slots, next, rows.size());
    q.output_size = rows.size();
    return {std::move(out), std::move(q)};
}

} // namespace zonoreach

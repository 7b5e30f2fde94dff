#include "zonoreach/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "zonoreach/error.hpp"
#include "zonoreach/rewrite.hpp"

namespace zonoreach
{

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Deadline deadline_after(double seconds)
{
    if (!std::isfinite(seconds) || seconds > 1e9)
        return no_deadline();
    if (seconds <= 0.0)
        return Clock::now();
    return Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(seconds));
}

std::string to_string(Status s)
{
    switch (s) {
    case Status::verified:
        return "true";
    case Status::falsified:
        return "false";
    case Status::timeout:
        return "timeout";
    default:
        return "unknown";
    }
}

namespace
{

bool is_nonlinear(LayerKind k)
{
    switch (k) {
    case LayerKind::relu:
    case LayerKind::sigmoid:
    case LayerKind::tanh:
    case LayerKind::maxpool:
    case LayerKind::softmax:
    case LayerKind::cast:
    case LayerKind::floor:
    case LayerKind::ceil:
        return true;
    default:
        return false;
    }
}

bool is_dense(LayerKind k)
{
    return k == LayerKind::affine || k == LayerKind::conv2d || k == LayerKind::matmul || k == LayerKind::bias_add;
}

CastMode cast_mode_of(const Layer& l)
{
    if (l.kind == LayerKind::floor)
        return CastMode::floor;
    if (l.kind == LayerKind::ceil)
        return CastMode::ceil;
    return l.cast_mode;
}

Monotone monotone_of(const Layer& l)
{
    switch (l.kind) {
    case LayerKind::relu:
        return Monotone::relu;
    case LayerKind::sigmoid:
        return Monotone::sigmoid;
    case LayerKind::tanh:
        return Monotone::tanh;
    default:
        switch (cast_mode_of(l)) {
        case CastMode::floor:
            return Monotone::floor;
        case CastMode::ceil:
            return Monotone::ceil;
        default:
            return Monotone::round;
        }
    }
}

double seconds_since(Clock::time_point t)
{
    return std::chrono::duration<double>(Clock::now() - t).count();
}

} // namespace

Analyzer::Analyzer(NetworkGraph graph, NormalizedProperty property, AnalysisConfig config)
    : original_(std::move(graph)), property_(std::move(property)), config_(config)
{
    if (property_.input_box.size() != original_.input_size())
        throw ShapeError("property constrains " + std::to_string(property_.input_box.size()) +
                         " inputs but the network has " + std::to_string(original_.input_size()));
    if (!property_.input_box.is_finite())
        throw Error("the input box must be bounded in every dimension");
    if (property_.output_size > original_.output_size())
        throw ShapeError("property refers to " + std::to_string(property_.output_size) +
                         " outputs but the network has " + std::to_string(original_.output_size()));
    if (property_.uses_inputs() && !config_.zonotope && !config_.constrained && !config_.hybrid)
        throw Error("property atoms over inputs need a relational domain (zono, czono or hzono)");
    if (config_.hybrid && config_.binary_limit == 0)
        throw Error("the hybrid zonotope domain needs a binary symbol limit");

    prove_ = property_.prove_form();
    analysed_ = rewrite_maxpool(simplify(original_, &property_));
    const std::size_t y_node = analysed_.output();
    if (config_.property_layer)
        std::tie(analysed_, analysed_property_) = append_property_layer(analysed_, property_);
    else
        analysed_property_ = property_;
    analysed_prove_ = analysed_property_.prove_form();

    const std::size_t n = analysed_.size();
    maps_.resize(n);
    gathers_.resize(n);
    windows_.resize(n);
    live_ = analysed_.live();
    feeds_nonlinear_.assign(n, false);
    for (std::size_t i = 1; i < n; ++i) {
        const Layer& l = analysed_.layer(i);
        std::vector<Shape> in;
        for (std::size_t j : l.inputs)
            in.push_back(analysed_.layer(j).shape);
        if (is_dense(l.kind))
            maps_[i] = linear_map(l, in.at(0));
        else if (l.kind == LayerKind::transpose || l.kind == LayerKind::concat)
            gathers_[i] = gather_map(l, in);
        else if (l.kind == LayerKind::maxpool)
            windows_[i] = pool_windows(l.pool, in.at(0));
        if (is_nonlinear(l.kind))
            for (std::size_t j : l.inputs)
                feeds_nonlinear_[j] = true;
    }
    feeds_nonlinear_[analysed_.output()] = true;
    feeds_nonlinear_[y_node] = true;
    y_node_ = y_node;
}

ForwardResult Analyzer::forward(const IntervalTensor& box, Deadline deadline, const SplitMap& splits) const
{
    const auto started = Clock::now();
    const Rounding mode = config_.rounding;
    const std::size_t n = analysed_.size();
    ForwardResult r;
    r.bounds.resize(n);
    std::vector<std::optional<Zonotope>> zs(n);
    std::vector<std::optional<ConstrainedZonotope>> cs(n);
    std::vector<std::optional<HybridZonotope>> hs(n);
    bool use_z = config_.zonotope, use_c = config_.constrained, use_h = config_.hybrid;
    ConstraintCounter counter;

    r.bounds[0] = box.reshaped(analysed_.input_shape());
    if (use_z || use_c || use_h) {
        const Zonotope z0 = Zonotope::from_box(box, r.pool, SymbolOrigin::Kind::input, 0, mode);
        if (use_z)
            zs[0] = z0;
        if (use_c)
            cs[0] = ConstrainedZonotope(z0);
        if (use_h)
            hs[0] = HybridZonotope(z0);
    }

    const auto drop = [&](const char* domain, bool& flag, std::size_t node, const std::exception& e) {
        flag = false;
        r.warnings.push_back(std::string(domain) + " dropped at node '" + analysed_.layer(node).name + "': " + e.what());
    };

    for (std::size_t i = 1; i < n; ++i) {
        if (!live_[i])
            continue;
        if (Clock::now() >= deadline) {
            r.timed_out = true;
            return r;
        }
        const auto layer_start = Clock::now();
        const Layer& l = analysed_.layer(i);
        const std::vector<std::size_t>& ins = l.inputs;
        const std::size_t first = ins.empty() ? 0 : ins.front();

        // Forced ReLU signs of this node.
        std::vector<Phase> phases;
        if (l.kind == LayerKind::relu)
            for (auto it = splits.lower_bound({i, 0}); it != splits.end() && it->first.first == i; ++it) {
                if (phases.empty())
                    phases.assign(shape_size(l.shape), Phase::free);
                phases.at(it->first.second) = it->second;
            }

        // Box.
        IntervalTensor b;
        IntervalTensor pre;
        switch (l.kind) {
        case LayerKind::affine:
        case LayerKind::conv2d:
        case LayerKind::matmul:
        case LayerKind::bias_add:
            b = box::affine(maps_[i].first, maps_[i].second, r.bounds[first], mode);
            break;
        case LayerKind::flatten:
        case LayerKind::reshape:
            b = r.bounds[first];
            break;
        case LayerKind::transpose:
        case LayerKind::concat: {
            VectorXd lo(static_cast<Index>(gathers_[i].size())), hi(lo.size());
            for (std::size_t o = 0; o < gathers_[i].size(); ++o) {
                const auto [part, idx] = gathers_[i][o];
                lo[static_cast<Index>(o)] = r.bounds[ins[part]].lower(idx);
                hi[static_cast<Index>(o)] = r.bounds[ins[part]].upper(idx);
            }
            b = IntervalTensor(lo, hi);
            break;
        }
        case LayerKind::relu: {
            pre = r.bounds[first];
            for (std::size_t k = 0; k < phases.size(); ++k) {
                if (phases[k] == Phase::inactive)
                    pre.set(k, {pre.lower(k), std::min(pre.upper(k), 0.0)});
                else if (phases[k] == Phase::active)
                    pre.set(k, {std::max(pre.lower(k), 0.0), pre.upper(k)});
            }
            if (pre.is_empty()) {
                r.empty = true;
                r.output = pre;
                return r;
            }
            b = box::apply_monotone(Monotone::relu, pre, mode);
            break;
        }
        case LayerKind::sigmoid:
        case LayerKind::tanh:
        case LayerKind::cast:
        case LayerKind::floor:
        case LayerKind::ceil:
            pre = r.bounds[first];
            b = box::apply_monotone(monotone_of(l), pre, mode);
            break;
        case LayerKind::maxpool: {
            const auto& win = windows_[i];
            VectorXd lo(static_cast<Index>(win.size())), hi(lo.size());
            for (std::size_t o = 0; o < win.size(); ++o) {
                lo[static_cast<Index>(o)] = -rounding::inf;
                hi[static_cast<Index>(o)] = -rounding::inf;
                for (std::size_t k : win[o]) {
                    lo[static_cast<Index>(o)] = std::max(lo[static_cast<Index>(o)], r.bounds[first].lower(k));
                    hi[static_cast<Index>(o)] = std::max(hi[static_cast<Index>(o)], r.bounds[first].upper(k));
                }
            }
            b = IntervalTensor(lo, hi);
            break;
        }
        case LayerKind::add:
            b = box::add(r.bounds[ins[0]], r.bounds[ins[1]], mode);
            break;
        case LayerKind::softmax:
            b = box::softmax(r.bounds[first], mode);
            break;
        case LayerKind::constant:
            b = IntervalTensor::point(l.bias);
            break;
        case LayerKind::input:
            throw Error("input layer after node 0");
        }
        b = b.reshaped(l.shape);

        // Relational domains.
        std::vector<std::size_t> gather_rows;
        if (l.kind == LayerKind::transpose || l.kind == LayerKind::concat) {
            std::vector<std::size_t> offset(ins.size(), 0);
            for (std::size_t k = 1; k < ins.size(); ++k)
                offset[k] = offset[k - 1] + shape_size(analysed_.layer(ins[k - 1]).shape);
            for (const auto& [part, idx] : gathers_[i])
                gather_rows.push_back(offset[part] + idx);
        }
        const bool fallback = l.kind == LayerKind::maxpool || l.kind == LayerKind::softmax;

        if (use_z) {
            try {
                Zonotope z;
                if (fallback) {
                    z = Zonotope::from_box(b, r.pool, SymbolOrigin::Kind::fallback, i, mode);
                } else {
                    switch (l.kind) {
                    case LayerKind::affine:
                    case LayerKind::conv2d:
                    case LayerKind::matmul:
                    case LayerKind::bias_add:
                        z = zono::affine(*zs[first], maps_[i].first, maps_[i].second, mode);
                        break;
                    case LayerKind::flatten:
                    case LayerKind::reshape:
                        z = *zs[first];
                        break;
                    case LayerKind::transpose:
                    case LayerKind::concat: {
                        std::vector<Zonotope> parts;
                        for (std::size_t j : ins)
                            parts.push_back(*zs[j]);
                        z = zono::stack(parts).select(gather_rows);
                        break;
                    }
                    case LayerKind::relu:
                        z = zono::relu(*zs[first], pre, r.pool, mode, i, phases);
                        break;
                    case LayerKind::sigmoid:
                        z = zono::sigmoid(*zs[first], pre, r.pool, mode, i);
                        break;
                    case LayerKind::tanh:
                        z = zono::tanh(*zs[first], pre, r.pool, mode, i);
                        break;
                    case LayerKind::cast:
                    case LayerKind::floor:
                    case LayerKind::ceil:
                        z = zono::cast(*zs[first], pre, cast_mode_of(l), r.pool, mode, i);
                        break;
                    case LayerKind::add:
                        z = zono::add(*zs[ins[0]], *zs[ins[1]], mode);
                        break;
                    case LayerKind::constant:
                        z = Zonotope::constant(l.bias);
                        break;
                    default:
                        throw UnsupportedError(to_string(l.kind));
                    }
                }
                if (config_.max_symbols > 0 && z.noise_count() > config_.max_symbols) {
                    if (config_.max_symbols >= z.dim())
                        z = zono::reduce(z, config_.max_symbols, r.pool, mode);
                    else if (r.warnings.empty() || r.warnings.back().find("symbol cap") == std::string::npos)
                        r.warnings.push_back("symbol cap " + std::to_string(config_.max_symbols) +
                                             " is below layer width " + std::to_string(z.dim()) + "; not reducing");
                }
                zs[i] = std::move(z);
            } catch (const Error& e) {
                drop("zonotope", use_z, i, e);
            }
        }

        if (use_c) {
            try {
                ConstrainedZonotope c;
                if (fallback) {
                    c = ConstrainedZonotope(Zonotope::from_box(b, r.pool, SymbolOrigin::Kind::fallback, i, mode));
                } else {
                    switch (l.kind) {
                    case LayerKind::affine:
                    case LayerKind::conv2d:
                    case LayerKind::matmul:
                    case LayerKind::bias_add:
                        c = czono::affine(*cs[first], maps_[i].first, maps_[i].second, mode);
                        break;
                    case LayerKind::flatten:
                    case LayerKind::reshape:
                        c = *cs[first];
                        break;
                    case LayerKind::transpose:
                    case LayerKind::concat: {
                        std::vector<ConstrainedZonotope> parts;
                        for (std::size_t j : ins)
                            parts.push_back(*cs[j]);
                        c = czono::stack(parts).select(gather_rows);
                        break;
                    }
                    case LayerKind::relu:
                        c = czono::relu(*cs[first], pre, r.pool, counter, mode, i, phases);
                        break;
                    case LayerKind::sigmoid:
                        c = cs[first]->with_body(zono::sigmoid(cs[first]->body(), pre, r.pool, mode, i));
                        break;
                    case LayerKind::tanh:
                        c = cs[first]->with_body(zono::tanh(cs[first]->body(), pre, r.pool, mode, i));
                        break;
                    case LayerKind::cast:
                    case LayerKind::floor:
                    case LayerKind::ceil:
                        c = cs[first]->with_body(zono::cast(cs[first]->body(), pre, cast_mode_of(l), r.pool, mode, i));
                        break;
                    case LayerKind::add:
                        c = czono::add(*cs[ins[0]], *cs[ins[1]], mode);
                        break;
                    case LayerKind::constant:
                        c = ConstrainedZonotope(Zonotope::constant(l.bias));
                        break;
                    default:
                        throw UnsupportedError(to_string(l.kind));
                    }
                }
                if (!phases.empty() && c.constraint_count() > 0 &&
                    certify_infeasible(c.constraint_matrix(), c.constraint_offset()))
                    c = c.marked_empty();
                cs[i] = std::move(c);
            } catch (const Error& e) {
                drop("constrained zonotope", use_c, i, e);
            }
        }

        if (use_h) {
            try {
                HybridZonotope h;
                if (fallback) {
                    h = HybridZonotope(Zonotope::from_box(b, r.pool, SymbolOrigin::Kind::fallback, i, mode));
                } else {
                    switch (l.kind) {
                    case LayerKind::affine:
                    case LayerKind::conv2d:
                    case LayerKind::matmul:
                    case LayerKind::bias_add:
                        h = hzono::affine(*hs[first], maps_[i].first, maps_[i].second, mode);
                        break;
                    case LayerKind::flatten:
                    case LayerKind::reshape:
                        h = *hs[first];
                        break;
                    case LayerKind::transpose:
                    case LayerKind::concat: {
                        std::vector<HybridZonotope> parts;
                        for (std::size_t j : ins)
                            parts.push_back(*hs[j]);
                        h = hzono::stack(parts).select(gather_rows);
                        break;
                    }
                    case LayerKind::relu:
                        if (!phases.empty())
                            throw UnsupportedError("sign splits in the hybrid zonotope domain");
                        h = hzono::relu_exact(*hs[first], pre, r.pool, counter, mode, i, config_.binary_limit);
                        break;
                    case LayerKind::sigmoid:
                        h = hs[first]->with_body(zono::sigmoid(hs[first]->body(), pre, r.pool, mode, i));
                        break;
                    case LayerKind::tanh:
                        h = hs[first]->with_body(zono::tanh(hs[first]->body(), pre, r.pool, mode, i));
                        break;
                    case LayerKind::cast:
                    case LayerKind::floor:
                    case LayerKind::ceil:
                        h = hs[first]->with_body(zono::cast(hs[first]->body(), pre, cast_mode_of(l), r.pool, mode, i));
                        break;
                    case LayerKind::add:
                        h = hzono::add(*hs[ins[0]], *hs[ins[1]], mode);
                        break;
                    case LayerKind::constant:
                        h = HybridZonotope(Zonotope::constant(l.bias));
                        break;
                    default:
                        throw UnsupportedError(to_string(l.kind));
                    }
                }
                hs[i] = std::move(h);
            } catch (const Error& e) {
                drop("hybrid zonotope", use_h, i, e);
            }
        }

        // Box intersection where bounds matter.
        if (feeds_nonlinear_[i] && config_.intersect) {
            std::vector<std::size_t> dims;
            bool only_relu = i != analysed_.output() && i != y_node_;
            for (std::size_t c : analysed_.consumers(i))
                only_relu = only_relu && analysed_.layer(c).kind == LayerKind::relu;
            for (std::size_t k = 0; k < b.size(); ++k)
                if (!only_relu || (b.lower(k) < 0.0 && b.upper(k) > 0.0))
                    dims.push_back(k);
            const auto meet = [&](const IntervalTensor& other) { b = b.intersect(other.reshaped(l.shape)); };
            if (use_z)
                meet(zs[i]->concretize(mode));
            if (use_c) {
                const Concretization cc = czono::concretize(*cs[i], config_.dual, mode, dims);
                if (cc.empty)
                    r.empty = true;
                else
                    meet(cc.bounds);
            }
            if (use_h) {
                try {
                    const Concretization hc = hzono::concretize(*hs[i], mode, dims, config_.binary_limit);
                    if (hc.empty)
                        r.empty = true;
                    else
                        meet(hc.bounds);
                } catch (const Error& e) {
                    drop("hybrid zonotope", use_h, i, e);
                }
            }
            if (b.is_empty())
                r.empty = true;
            if (r.empty) {
                r.output = b;
                return r;
            }
        } else if (feeds_nonlinear_[i]) {
            if (use_z)
                b = b.intersect(zs[i]->concretize(mode).reshaped(l.shape));
        }
        if (use_c && cs[i]->known_empty()) {
            r.empty = true;
            r.output = b;
            return r;
        }
        r.bounds[i] = std::move(b);

        if (l.kind == LayerKind::relu)
            for (std::size_t k = 0; k < pre.size(); ++k) {
                const bool split = !phases.empty() && phases[k] != Phase::free;
                if (!split && pre.lower(k) < 0.0 && pre.upper(k) > 0.0)
                    r.unstable.push_back({i, k, pre.lower(k), pre.upper(k), 0.0});
            }

        LayerStat st;
        st.node = i;
        st.name = l.name;
        st.kind = to_string(l.kind);
        st.seconds = seconds_since(layer_start);
        st.symbols = r.pool.size();
        r.stats.per_layer.push_back(std::move(st));
        ++r.stats.layers;
    }

    const std::size_t out = analysed_.output();
    r.output = r.bounds[out];
    if (use_z)
        r.zonotope = zs[out];
    if (use_c)
        r.constrained = cs[out];
    if (use_h)
        r.hybrid = hs[out];

    // Relations for branching heuristics.
    const Zonotope* rel = use_c ? &r.constrained->body() : use_z ? &*r.zonotope : use_h ? &r.hybrid->body() : nullptr;
    const VectorXd width = box.width();
    r.input_relation = VectorXd::Zero(width.size());
    if (rel) {
        std::map<std::pair<std::size_t, std::size_t>, double> relu_mass;
        for (SymbolId s = 0; s < r.pool.size(); ++s) {
            const SymbolOrigin& o = r.pool.origin(s);
            if (o.kind == SymbolOrigin::Kind::input) {
                const auto k = static_cast<Index>(o.index);
                r.input_relation[k] += rel->symbol_mass(s);
            } else if (o.kind == SymbolOrigin::Kind::relu) {
                relu_mass[{o.node, o.index}] = rel->symbol_mass(s);
            }
        }
        for (auto& u : r.unstable) {
            const auto it = relu_mass.find({u.node, u.index});
            u.mass = it == relu_mass.end() ? 0.0 : it->second;
        }
    } else {
        // Finite differences at the midpoint.
        const VectorXd mid = box.midpoint();
        for (Index k = 0; k < width.size(); ++k) {
            if (width[k] <= 0.0)
                continue;
            const double h = 1e-4 * width[k];
            VectorXd a = mid, c = mid;
            a[k] -= h;
            c[k] += h;
            // Same units as a generator coefficient: slope times half-width.
            r.input_relation[k] = (analysed_.evaluate(c) - analysed_.evaluate(a)).cwiseAbs().sum() / (2.0 * h) *
                                  (0.5 * width[k]);
        }
    }

    r.stats.symbols = r.pool.size();
    r.stats.constraints = use_c ? r.constrained->constraint_count() : 0;
    r.stats.seconds = seconds_since(started);
    return r;
}

Truth Analyzer::evaluate(const ForwardResult& r) const
{
    if (r.empty)
        return Truth::yes;
    const IntervalTensor flat = r.output.reshaped({r.output.size()});
    IntervalTensor inputs = r.bounds.front().reshaped({r.bounds.front().size()});
    return evaluate_predicate(analysed_prove_, flat, &inputs);
}

std::optional<Counterexample> Analyzer::confirm(const VectorXd& x) const
{
    if (!property_.input_box.contains(x))
        return std::nullopt;
    const VectorXd y = original_.evaluate(x);
    if (!y.allFinite())
        return std::nullopt;
    if (evaluate_point(prove_, y, x))
        return std::nullopt;
    return Counterexample{x, y};
}

VectorXd Analyzer::input_point(const ForwardResult& r, const IntervalTensor& box, const VectorXd& eps) const
{
    const Zonotope* body = r.constrained ? &r.constrained->body() : r.zonotope ? &*r.zonotope
                           : r.hybrid    ? &r.hybrid->body()
                                         : nullptr;
    VectorXd x = box.midpoint();
    if (!body)
        return x;
    const VectorXd lo = box.lower(), hi = box.upper();
    for (std::size_t k = 0; k < body->symbols().size() && k < static_cast<std::size_t>(eps.size()); ++k) {
        const SymbolOrigin& o = r.pool.origin(body->symbols()[k]);
        if (o.kind != SymbolOrigin::Kind::input)
            continue;
        const auto d = static_cast<Index>(o.index);
        const double e = std::clamp(eps[static_cast<Index>(k)], -1.0, 1.0);
        x[d] = std::clamp(x[d] + e * 0.5 * (hi[d] - lo[d]), lo[d], hi[d]);
    }
    return x;
}

std::optional<Counterexample> Analyzer::witness(const ForwardResult& r, const IntervalTensor& box) const
{
    if (auto c = confirm(box.midpoint()))
        return c;
    const Zonotope* body = r.constrained ? &r.constrained->body() : r.zonotope ? &*r.zonotope : nullptr;
    if (!body)
        return std::nullopt;
    for (Index row = 0; row < static_cast<Index>(body->dim()); ++row) {
        for (const double sign : {1.0, -1.0}) {
            const VectorXd alpha = sign * body->generators().row(row).transpose();
            std::optional<VectorXd> eps;
            if (r.constrained && r.constrained->constraint_count() > 0)
                eps = primal_minimizer(alpha, r.constrained->constraint_matrix(), r.constrained->constraint_offset());
            else
                eps = VectorXd(-alpha.array().sign());
            if (!eps)
                continue;
            if (auto c = confirm(input_point(r, box, *eps)))
                return c;
        }
    }
    return std::nullopt;
}

std::optional<Counterexample> Analyzer::search_counterexample(const IntervalTensor& box, Deadline deadline,
                                                              std::uint64_t seed) const
{
    const AttackConfig& a = config_.attack;
    std::mt19937_64 rng(seed);
    const VectorXd lo = box.lower(), hi = box.upper();
    const auto dim = static_cast<std::size_t>(lo.size());
    const auto sample = [&] {
        VectorXd x(lo.size());
        for (Index k = 0; k < lo.size(); ++k)
            x[k] = lo[k] == hi[k] ? lo[k] : std::uniform_real_distribution<double>(lo[k], hi[k])(rng);
        return x;
    };
    const auto score = [&](const VectorXd& x) { return violation(prove_, original_.evaluate(x), x); };

    VectorXd best = box.midpoint();
    if (auto c = confirm(best))
        return c;
    double best_score = score(best);
    const auto consider = [&](const VectorXd& x) -> std::optional<Counterexample> {
        if (auto c = confirm(x))
            return c;
        const double s = score(x);
        if (s > best_score) {
            best_score = s;
            best = x;
        }
        return std::nullopt;
    };

    for (std::size_t s = 0; s < a.random_samples; ++s) {
        if ((s & 63U) == 0 && Clock::now() >= deadline)
            return std::nullopt;
        if (auto c = consider(sample()))
            return c;
    }

    // Corners: all of them when few, else random ones.
    const bool all_corners = dim < 63 && (std::size_t{1} << dim) <= a.corner_budget;
    const std::size_t corners = all_corners ? (std::size_t{1} << dim) : a.corner_budget;
    for (std::size_t m = 0; m < corners; ++m) {
        VectorXd x(lo.size());
        for (std::size_t k = 0; k < dim; ++k) {
            const bool up = all_corners ? ((m >> k) & 1U) : std::bernoulli_distribution(0.5)(rng);
            x[static_cast<Index>(k)] = up ? hi[static_cast<Index>(k)] : lo[static_cast<Index>(k)];
        }
        if (auto c = consider(x))
            return c;
    }

    // Sign-gradient ascent on the violation, central finite differences.
    const VectorXd width = hi - lo;
    for (std::size_t restart = 0; restart < a.restarts && a.iterations > 0; ++restart) {
        VectorXd x = restart == 0 ? best : sample();
        double fx = score(x);
        double step = a.step_fraction;
        for (std::size_t it = 0; it < a.iterations; ++it) {
            if (Clock::now() >= deadline)
                return std::nullopt;
            VectorXd grad(lo.size());
            for (Index k = 0; k < lo.size(); ++k) {
                if (width[k] <= 0.0) {
                    grad[k] = 0.0;
                    continue;
                }
                const double h = 1e-6 * width[k];
                VectorXd p = x, q = x;
                p[k] = std::min(hi[k], x[k] + h);
                q[k] = std::max(lo[k], x[k] - h);
                grad[k] = p[k] > q[k] ? (score(p) - score(q)) / (p[k] - q[k]) : 0.0;
            }
            VectorXd next = x + step * width.cwiseProduct(VectorXd(grad.array().sign()));
            next = next.cwiseMax(lo).cwiseMin(hi);
            if (auto c = confirm(next))
                return c;
            const double fn = score(next);
            if (fn > fx) {
                x = next;
                fx = fn;
            } else {
                step *= 0.5;
                if (step < 1e-6)
                    break;
            }
        }
    }
    return std::nullopt;
}

Verdict Analyzer::analyse(const IntervalTensor& box, Deadline deadline, bool attack) const
{
    const auto started = Clock::now();
    Verdict v;
    const auto finish = [&](Status s) {
        v.status = s;
        v.stats.seconds = seconds_since(started);
        return v;
    };
    if (Clock::now() >= deadline)
        return finish(Status::timeout);

    if (attack) {
        if (auto c = search_counterexample(box, deadline, config_.seed)) {
            v.counterexample = std::move(c);
            return finish(Status::falsified);
        }
        if (Clock::now() >= deadline)
            return finish(Status::timeout);
    }

    ForwardResult r = forward(box, deadline);
    v.stats = r.stats;
    v.warnings = r.warnings;
    v.input_relation = r.input_relation;
    if (r.timed_out)
        return finish(Status::timeout);
    if (!r.empty && r.bounds[y_node_].size())
        v.output_bounds = r.bounds[y_node_].reshaped({r.bounds[y_node_].size()});

    const Truth t = evaluate(r);
    if (t == Truth::yes)
        return finish(Status::verified);
    if (auto c = witness(r, box)) {
        v.counterexample = std::move(c);
        return finish(Status::falsified);
    }
    return finish(Status::unknown);
}

std::string verdict_json(const Verdict& v, bool timing)
{
    using nlohmann::json;
    json doc;
    doc["schema"] = "zonoreach-report";
    doc["version"] = 1;
    doc["status"] = to_string(v.status);
    const auto vec = [](const VectorXd& x) {
        json a = json::array();
        for (Index i = 0; i < x.size(); ++i)
            a.push_back(x[i]);
        return a;
    };
    if (v.counterexample)
        doc["counterexample"] = {{"input", vec(v.counterexample->input)}, {"output", vec(v.counterexample->output)}};
    else
        doc["counterexample"] = nullptr;
    if (v.output_bounds.size())
        doc["bounds"] = {{"lower", vec(v.output_bounds.lower())}, {"upper", vec(v.output_bounds.upper())}};
    else
        doc["bounds"] = nullptr;
    json stats;
    stats["layers"] = v.stats.layers;
    stats["symbols"] = v.stats.symbols;
    stats["constraints"] = v.stats.constraints;
    stats["subproblems"] = v.stats.subproblems;
    stats["splits"] = v.stats.splits;
    stats["max_worklist"] = v.stats.max_worklist;
    if (timing) {
        stats["seconds"] = v.stats.seconds;
        json layers = json::array();
        for (const auto& l : v.stats.per_layer)
            layers.push_back({{"node", l.node}, {"name", l.name}, {"kind", l.kind}, {"seconds", l.seconds},
                              {"symbols", l.symbols}});
        stats["per_layer"] = layers;
    }
    doc["stats"] = stats;
    doc["warnings"] = v.warnings;
    return doc.dump(2) + "\n";
}

} // namespace zonoreach

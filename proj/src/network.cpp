#include "zonoreach/network.hpp"

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

constexpr std::pair<LayerKind, const char*> kind_names[] = {
    {LayerKind::input, "input"},         {LayerKind::affine, "affine"},       {LayerKind::conv2d, "conv2d"},
    {LayerKind::relu, "relu"},           {LayerKind::sigmoid, "sigmoid"},     {LayerKind::tanh, "tanh"},
    {LayerKind::maxpool, "maxpool"},     {LayerKind::add, "add"},             {LayerKind::matmul, "matmul"},
    {LayerKind::bias_add, "bias_add"},   {LayerKind::flatten, "flatten"},     {LayerKind::reshape, "reshape"},
    {LayerKind::transpose, "transpose"}, {LayerKind::concat, "concat"},       {LayerKind::softmax, "softmax"},
    {LayerKind::cast, "cast"},           {LayerKind::floor, "floor"},         {LayerKind::ceil, "ceil"},
    {LayerKind::constant, "constant"},
};

std::vector<std::size_t> strides_of(const Shape& shape)
{
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;)
        s[i - 1] = s[i] * shape[i];
    return s;
}

std::size_t conv_extent(std::size_t in, std::size_t pad_a, std::size_t pad_b, std::size_t kernel, std::size_t stride,
                        std::size_t dilation, const std::string& what)
{
    const std::size_t span = dilation * (kernel - 1) + 1;
    if (in + pad_a + pad_b < span || stride == 0)
        throw ShapeError(what + ": kernel does not fit the padded input");
    return (in + pad_a + pad_b - span) / stride + 1;
}

std::string node_label(const Layer& layer)
{
    return to_string(layer.kind) + " '" + layer.name + "'";
}

} // namespace

std::string to_string(LayerKind kind)
{
    for (const auto& [k, n] : kind_names)
        if (k == kind)
            return n;
    return "unknown";
}

std::optional<LayerKind> layer_kind_from_string(const std::string& name)
{
    for (const auto& [k, n] : kind_names)
        if (name == n)
            return k;
    return std::nullopt;
}

bool is_linear(LayerKind kind)
{
    switch (kind) {
    case LayerKind::affine:
    case LayerKind::conv2d:
    case LayerKind::matmul:
    case LayerKind::bias_add:
    case LayerKind::flatten:
    case LayerKind::reshape:
    case LayerKind::transpose:
        return true;
    default:
        return false;
    }
}

NetworkGraph::NetworkGraph(Shape input_shape, std::string input_name)
{
    Layer in;
    in.name = std::move(input_name);
    in.kind = LayerKind::input;
    in.shape = std::move(input_shape);
    layers_.push_back(std::move(in));
}

void NetworkGraph::set_output(std::size_t node)
{
    if (node >= layers_.size())
        throw ShapeError("output node " + std::to_string(node) + " does not exist");
    output_ = node;
}

std::optional<std::size_t> NetworkGraph::find(const std::string& name) const
{
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i].name == name)
            return i;
    return std::nullopt;
}

std::vector<std::size_t> NetworkGraph::consumers(std::size_t node) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (std::find(layers_[i].inputs.begin(), layers_[i].inputs.end(), node) != layers_[i].inputs.end())
            out.push_back(i);
    return out;
}

std::vector<bool> NetworkGraph::live() const
{
    std::vector<bool> keep(layers_.size(), false);
    keep[output_] = true;
    for (std::size_t i = layers_.size(); i-- > 0;)
        if (keep[i])
            for (std::size_t j : layers_[i].inputs)
                keep[j] = true;
    keep[0] = true;
    return keep;
}

std::size_t NetworkGraph::add(Layer layer)
{
    const std::string label = node_label(layer);
    // Unary layers default to the current output.
    if (layer.inputs.empty() && layer.kind != LayerKind::constant && layer.kind != LayerKind::add &&
        layer.kind != LayerKind::concat && !layers_.empty())
        layer.inputs.push_back(output_);
    for (std::size_t j : layer.inputs)
        if (j >= layers_.size())
            throw ShapeError(label + ": input node " + std::to_string(j) + " is not defined before it");
    std::vector<Shape> in;
    for (std::size_t j : layer.inputs)
        in.push_back(layers_[j].shape);

    const auto arity = [&](std::size_t n) {
        if (in.size() != n)
            throw ShapeError(label + ": expected " + std::to_string(n) + " input(s), got " + std::to_string(in.size()));
    };

    switch (layer.kind) {
    case LayerKind::input:
        throw ShapeError(label + ": only node 0 may be an input");
    case LayerKind::affine: {
        arity(1);
        const std::size_t n = shape_size(in[0]);
        if (static_cast<std::size_t>(layer.weights.cols()) != n)
            throw ShapeError(label + ": weights have " + std::to_string(layer.weights.cols()) +
                             " columns but the input has " + std::to_string(n) + " elements");
        if (layer.bias.size() == 0)
            layer.bias = VectorXd::Zero(layer.weights.rows());
        if (layer.bias.size() != layer.weights.rows())
            throw ShapeError(label + ": bias length differs from weight rows");
        layer.shape = {static_cast<std::size_t>(layer.weights.rows())};
        break;
    }
    case LayerKind::conv2d: {
        arity(1);
        if (in[0].size() != 3)
            throw ShapeError(label + ": expects a (C, H, W) input, got " + shape_string(in[0]));
        const auto& c = layer.conv;
        const std::size_t expected = c.out_channels * in[0][0] * c.kernel_h * c.kernel_w;
        if (static_cast<std::size_t>(layer.conv.kernel.size()) != expected || expected == 0)
            throw ShapeError(label + ": kernel holds " + std::to_string(layer.conv.kernel.size()) +
                             " values, expected " + std::to_string(expected));
        if (layer.bias.size() == 0)
            layer.bias = VectorXd::Zero(static_cast<Index>(c.out_channels));
        if (static_cast<std::size_t>(layer.bias.size()) != c.out_channels)
            throw ShapeError(label + ": bias length differs from output channels");
        layer.shape = {c.out_channels,
                       conv_extent(in[0][1], c.pads[0], c.pads[2], c.kernel_h, c.stride_h, c.dilation_h, label),
                       conv_extent(in[0][2], c.pads[1], c.pads[3], c.kernel_w, c.stride_w, c.dilation_w, label)};
        break;
    }
    case LayerKind::maxpool: {
        arity(1);
        if (in[0].size() != 3)
            throw ShapeError(label + ": expects a (C, H, W) input, got " + shape_string(in[0]));
        const auto& p = layer.pool;
        if (p.kernel_h == 0 || p.kernel_w == 0)
            throw ShapeError(label + ": empty kernel");
        layer.shape = {in[0][0], conv_extent(in[0][1], p.pads[0], p.pads[2], p.kernel_h, p.stride_h, 1, label),
                       conv_extent(in[0][2], p.pads[1], p.pads[3], p.kernel_w, p.stride_w, 1, label)};
        break;
    }
    case LayerKind::relu:
    case LayerKind::sigmoid:
    case LayerKind::tanh:
    case LayerKind::softmax:
    case LayerKind::cast:
    case LayerKind::floor:
    case LayerKind::ceil:
        arity(1);
        layer.shape = in[0];
        break;
    case LayerKind::add:
        arity(2);
        if (shape_size(in[0]) != shape_size(in[1]))
            throw ShapeError(label + ": operand shapes " + shape_string(in[0]) + " and " + shape_string(in[1]) +
                             " differ");
        layer.shape = in[0];
        break;
    case LayerKind::matmul: {
        arity(1);
        if (in[0].empty() || in[0].back() != static_cast<std::size_t>(layer.weights.cols()))
            throw ShapeError(label + ": last axis of " + shape_string(in[0]) + " does not match " +
                             std::to_string(layer.weights.cols()) + " weight columns");
        layer.shape = in[0];
        layer.shape.back() = static_cast<std::size_t>(layer.weights.rows());
        break;
    }
    case LayerKind::bias_add: {
        arity(1);
        const auto n = static_cast<std::size_t>(layer.bias.size());
        if (n != shape_size(in[0]) && (in[0].empty() || n != in[0].back()))
            throw ShapeError(label + ": bias of length " + std::to_string(n) + " does not broadcast to " +
                             shape_string(in[0]));
        layer.shape = in[0];
        break;
    }
    case LayerKind::flatten:
        arity(1);
        layer.shape = {shape_size(in[0])};
        break;
    case LayerKind::reshape:
        arity(1);
        if (shape_size(layer.target) != shape_size(in[0]))
            throw ShapeError(label + ": cannot reshape " + shape_string(in[0]) + " to " + shape_string(layer.target));
        layer.shape = layer.target;
        break;
    case LayerKind::transpose: {
        arity(1);
        std::vector<std::size_t> sorted = layer.perm;
        std::sort(sorted.begin(), sorted.end());
        std::vector<std::size_t> iota(in[0].size());
        std::iota(iota.begin(), iota.end(), 0);
        if (sorted != iota)
            throw ShapeError(label + ": perm is not a permutation of the input axes");
        layer.shape.clear();
        for (std::size_t a : layer.perm)
            layer.shape.push_back(in[0][a]);
        break;
    }
    case LayerKind::concat: {
        if (in.empty())
            throw ShapeError(label + ": needs at least one input");
        Shape out = in[0];
        if (layer.axis >= out.size())
            throw ShapeError(label + ": axis out of range");
        for (std::size_t k = 1; k < in.size(); ++k) {
            if (in[k].size() != out.size())
                throw ShapeError(label + ": inputs differ in rank");
            for (std::size_t a = 0; a < out.size(); ++a)
                if (a != layer.axis && in[k][a] != out[a])
                    throw ShapeError(label + ": inputs differ outside the concat axis");
            out[layer.axis] += in[k][layer.axis];
        }
        layer.shape = out;
        break;
    }
    case LayerKind::constant:
        arity(0);
        if (layer.target.empty())
            layer.target = {static_cast<std::size_t>(layer.bias.size())};
        if (shape_size(layer.target) != static_cast<std::size_t>(layer.bias.size()))
            throw ShapeError(label + ": value does not fill its shape");
        layer.shape = layer.target;
        break;
    }
    if (layer.name.empty())
        layer.name = to_string(layer.kind) + "_" + std::to_string(layers_.size());
    layers_.push_back(std::move(layer));
    output_ = layers_.size() - 1;
    return output_;
}

std::pair<MatrixXd, VectorXd> linear_map(const Layer& layer, const Shape& input_shape)
{
    const auto n = static_cast<Index>(shape_size(input_shape));
    switch (layer.kind) {
    case LayerKind::affine:
        return {layer.weights, layer.bias};
    case LayerKind::flatten:
    case LayerKind::reshape:
        return {MatrixXd::Identity(n, n), VectorXd::Zero(n)};
    case LayerKind::transpose: {
        MatrixXd p = MatrixXd::Zero(n, n);
        const auto map = gather_map(layer, {input_shape});
        for (std::size_t o = 0; o < map.size(); ++o)
            p(static_cast<Index>(o), static_cast<Index>(map[o].second)) = 1.0;
        return {p, VectorXd::Zero(n)};
    }
    case LayerKind::matmul: {
        const Index cols = layer.weights.cols();
        const Index rows = layer.weights.rows();
        const Index outer = n / cols;
        MatrixXd w = MatrixXd::Zero(outer * rows, n);
        for (Index k = 0; k < outer; ++k)
            w.block(k * rows, k * cols, rows, cols) = layer.weights;
        return {w, VectorXd::Zero(outer * rows)};
    }
    case LayerKind::bias_add: {
        VectorXd b(n);
        const Index m = layer.bias.size();
        for (Index i = 0; i < n; ++i)
            b[i] = layer.bias[i % m];
        return {MatrixXd::Identity(n, n), b};
    }
    case LayerKind::conv2d: {
        const auto& c = layer.conv;
        const std::size_t ic = input_shape[0], ih = input_shape[1], iw = input_shape[2];
        const Shape out = layer.shape;
        const std::size_t oh = out[1], ow = out[2];
        MatrixXd w = MatrixXd::Zero(static_cast<Index>(shape_size(out)), n);
        VectorXd b(static_cast<Index>(shape_size(out)));
        for (std::size_t o = 0; o < c.out_channels; ++o)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t x = 0; x < ow; ++x) {
                    const auto row = static_cast<Index>((o * oh + y) * ow + x);
                    b[row] = layer.bias[static_cast<Index>(o)];
                    for (std::size_t ch = 0; ch < ic; ++ch)
                        for (std::size_t ky = 0; ky < c.kernel_h; ++ky)
                            for (std::size_t kx = 0; kx < c.kernel_w; ++kx) {
                                const long iy = static_cast<long>(y * c.stride_h + ky * c.dilation_h) -
                                                static_cast<long>(c.pads[0]);
                                const long ix = static_cast<long>(x * c.stride_w + kx * c.dilation_w) -
                                                static_cast<long>(c.pads[1]);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(ih) || ix >= static_cast<long>(iw))
                                    continue;
                                const auto col = static_cast<Index>((ch * ih + static_cast<std::size_t>(iy)) * iw +
                                                                    static_cast<std::size_t>(ix));
                                w(row, col) += c.kernel[static_cast<Index>(((o * ic + ch) * c.kernel_h + ky) *
                                                                               c.kernel_w +
                                                                           kx)];
                            }
                }
        return {w, b};
    }
    default:
        throw Error(to_string(layer.kind) + " is not a linear layer");
    }
}

std::vector<std::pair<std::size_t, std::size_t>> gather_map(const Layer& layer, const std::vector<Shape>& input_shapes)
{
    std::vector<std::pair<std::size_t, std::size_t>> map;
    const Shape& out = layer.shape;
    const auto out_strides = strides_of(out);
    const std::size_t total = shape_size(out);
    map.reserve(total);
    if (layer.kind == LayerKind::transpose) {
        const auto in_strides = strides_of(input_shapes.at(0));
        for (std::size_t o = 0; o < total; ++o) {
            std::size_t src = 0;
            for (std::size_t k = 0; k < out.size(); ++k) {
                const std::size_t coord = (o / out_strides[k]) % out[k];
                src += coord * in_strides[layer.perm[k]];
            }
            map.emplace_back(0, src);
        }
        return map;
    }
    if (layer.kind == LayerKind::concat) {
        for (std::size_t o = 0; o < total; ++o) {
            std::size_t coord_axis = (o / out_strides[layer.axis]) % out[layer.axis];
            std::size_t part = 0;
            while (coord_axis >= input_shapes[part][layer.axis]) {
                coord_axis -= input_shapes[part][layer.axis];
                ++part;
            }
            const Shape& ps = input_shapes[part];
            const auto in_strides = strides_of(ps);
            std::size_t src = 0;
            for (std::size_t k = 0; k < out.size(); ++k) {
                const std::size_t coord = k == layer.axis ? coord_axis : (o / out_strides[k]) % out[k];
                src += coord * in_strides[k];
            }
            map.emplace_back(part, src);
        }
        return map;
    }
    throw Error("gather_map: " + to_string(layer.kind) + " is not a gather layer");
}

std::vector<std::vector<std::size_t>> pool_windows(const PoolParams& p, const Shape& in)
{
    const std::size_t c = in[0], h = in[1], w = in[2];
    const std::size_t oh = (h + p.pads[0] + p.pads[2] - p.kernel_h) / p.stride_h + 1;
    const std::size_t ow = (w + p.pads[1] + p.pads[3] - p.kernel_w) / p.stride_w + 1;
    std::vector<std::vector<std::size_t>> windows;
    windows.reserve(c * oh * ow);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t x = 0; x < ow; ++x) {
                std::vector<std::size_t> win;
                for (std::size_t ky = 0; ky < p.kernel_h; ++ky)
                    for (std::size_t kx = 0; kx < p.kernel_w; ++kx) {
                        const long iy = static_cast<long>(y * p.stride_h + ky) - static_cast<long>(p.pads[0]);
                        const long ix = static_cast<long>(x * p.stride_w + kx) - static_cast<long>(p.pads[1]);
                        if (iy >= 0 && ix >= 0 && iy < static_cast<long>(h) && ix < static_cast<long>(w))
                            win.push_back((ch * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix));
                    }
                if (win.empty())
                    throw ShapeError("maxpool: a window lies entirely in the padding");
                windows.push_back(std::move(win));
            }
    return windows;
}

VectorXd evaluate_layer(const Layer& layer, const std::vector<const VectorXd*>& inputs,
                        const std::vector<Shape>& input_shapes)
{
    const auto unary = [&](auto&& f) {
        VectorXd y = *inputs.at(0);
        for (Index i = 0; i < y.size(); ++i)
            y[i] = f(y[i]);
        return y;
    };
    switch (layer.kind) {
    case LayerKind::input:
        return *inputs.at(0);
    case LayerKind::affine:
        return layer.weights * *inputs[0] + layer.bias;
    case LayerKind::conv2d:
    case LayerKind::matmul:
    case LayerKind::bias_add:
    case LayerKind::flatten:
    case LayerKind::reshape:
    case LayerKind::transpose: {
        if (layer.kind == LayerKind::flatten || layer.kind == LayerKind::reshape)
            return *inputs[0];
        if (layer.kind == LayerKind::bias_add) {
            VectorXd y = *inputs[0];
            const Index m = layer.bias.size();
            for (Index i = 0; i < y.size(); ++i)
                y[i] += layer.bias[i % m];
            return y;
        }
        if (layer.kind == LayerKind::matmul) {
            const Index cols = layer.weights.cols();
            const Index outer = inputs[0]->size() / cols;
            VectorXd y(outer * layer.weights.rows());
            for (Index k = 0; k < outer; ++k)
                y.segment(k * layer.weights.rows(), layer.weights.rows()) =
                    layer.weights * inputs[0]->segment(k * cols, cols);
            return y;
        }
        if (layer.kind == LayerKind::transpose) {
            const auto map = gather_map(layer, input_shapes);
            VectorXd y(static_cast<Index>(map.size()));
            for (std::size_t o = 0; o < map.size(); ++o)
                y[static_cast<Index>(o)] = (*inputs[0])[static_cast<Index>(map[o].second)];
            return y;
        }
        const auto [w, b] = linear_map(layer, input_shapes[0]);
        return w * *inputs[0] + b;
    }
    case LayerKind::relu:
        return unary([](double v) { return std::max(0.0, v); });
    case LayerKind::sigmoid:
        return unary([](double v) { return sigmoid(v); });
    case LayerKind::tanh:
        return unary([](double v) { return std::tanh(v); });
    case LayerKind::floor:
        return unary([](double v) { return std::floor(v); });
    case LayerKind::ceil:
        return unary([](double v) { return std::ceil(v); });
    case LayerKind::cast: {
        const Monotone f = layer.cast_mode == CastMode::floor  ? Monotone::floor
                           : layer.cast_mode == CastMode::ceil ? Monotone::ceil
                                                               : Monotone::round;
        return unary([&](double v) { return apply(f, v); });
    }
    case LayerKind::softmax: {
        const VectorXd& x = *inputs[0];
        const double m = x.maxCoeff();
        VectorXd e = (x.array() - m).exp();
        return e / e.sum();
    }
    case LayerKind::maxpool: {
        const auto windows = pool_windows(layer.pool, input_shapes[0]);
        VectorXd y(static_cast<Index>(windows.size()));
        for (std::size_t o = 0; o < windows.size(); ++o) {
            double best = -rounding::inf;
            for (std::size_t i : windows[o])
                best = std::max(best, (*inputs[0])[static_cast<Index>(i)]);
            y[static_cast<Index>(o)] = best;
        }
        return y;
    }
    case LayerKind::add:
        return *inputs[0] + *inputs[1];
    case LayerKind::concat: {
        const auto map = gather_map(layer, input_shapes);
        VectorXd y(static_cast<Index>(map.size()));
        for (std::size_t o = 0; o < map.size(); ++o)
            y[static_cast<Index>(o)] = (*inputs[map[o].first])[static_cast<Index>(map[o].second)];
        return y;
    }
    case LayerKind::constant:
        return layer.bias;
    }
    throw Error("evaluate: unknown layer kind");
}

std::vector<VectorXd> NetworkGraph::evaluate_all(const VectorXd& x) const
{
    if (static_cast<std::size_t>(x.size()) != input_size())
        throw ShapeError("evaluate: input has " + std::to_string(x.size()) + " elements, expected " +
                         std::to_string(input_size()));
    const std::vector<bool> keep = live();
    std::vector<VectorXd> values(layers_.size());
    values[0] = x;
    for (std::size_t i = 1; i < layers_.size(); ++i) {
        if (!keep[i])
            continue;
        const Layer& l = layers_[i];
        std::vector<const VectorXd*> in;
        std::vector<Shape> shapes;
        for (std::size_t j : l.inputs) {
            in.push_back(&values[j]);
            shapes.push_back(layers_[j].shape);
        }
        values[i] = evaluate_layer(l, in, shapes);
    }
    return values;
}

VectorXd NetworkGraph::evaluate(const VectorXd& x) const
{
    return evaluate_all(x)[output_];
}

} // namespace zonoreach

#include <cstring>
#include <map>
#include <set>

#include "onnx_subset.pb.h"
#include "zonoreach/error.hpp"
#include "zonoreach/formats.hpp"

namespace zonoreach
{

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace
{

struct ConstTensor
{
    std::vector<long long> dims;
    VectorXd values;
};

template <class T>
VectorXd from_raw(const std::string& raw)
{
    const std::size_t n = raw.size() / sizeof(T);
    VectorXd v(static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        T x;
        std::memcpy(&x, raw.data() + i * sizeof(T), sizeof(T));
        v[static_cast<Index>(i)] = static_cast<double>(x);
    }
    return v;
}

ConstTensor read_tensor(const onnx::TensorProto& t)
{
    if (t.data_location() == onnx::TensorProto::EXTERNAL)
        throw ParseError("tensor '" + t.name() + "' uses external data, which is not supported");
    ConstTensor out;
    std::size_t count = 1;
    for (const auto d : t.dims()) {
        out.dims.push_back(d);
        count *= static_cast<std::size_t>(d);
    }
    const bool raw = t.has_raw_data();
    switch (t.data_type()) {
    case onnx::TensorProto::FLOAT:
        if (raw)
            out.values = from_raw<float>(t.raw_data());
        else {
            out.values.resize(t.float_data_size());
            for (int i = 0; i < t.float_data_size(); ++i)
                out.values[i] = t.float_data(i);
        }
        break;
    case onnx::TensorProto::DOUBLE:
        if (raw)
            out.values = from_raw<double>(t.raw_data());
        else {
            out.values.resize(t.double_data_size());
            for (int i = 0; i < t.double_data_size(); ++i)
                out.values[i] = t.double_data(i);
        }
        break;
    case onnx::TensorProto::INT64:
        if (raw)
            out.values = from_raw<std::int64_t>(t.raw_data());
        else {
            out.values.resize(t.int64_data_size());
            for (int i = 0; i < t.int64_data_size(); ++i)
                out.values[i] = static_cast<double>(t.int64_data(i));
        }
        break;
    case onnx::TensorProto::INT32:
        if (raw)
            out.values = from_raw<std::int32_t>(t.raw_data());
        else {
            out.values.resize(t.int32_data_size());
            for (int i = 0; i < t.int32_data_size(); ++i)
                out.values[i] = t.int32_data(i);
        }
        break;
    default:
        throw ParseError("tensor '" + t.name() + "' has unsupported element type " + std::to_string(t.data_type()));
    }
    if (static_cast<std::size_t>(out.values.size()) != count)
        throw ParseError("tensor '" + t.name() + "' holds " + std::to_string(out.values.size()) +
                         " values for a shape of " + std::to_string(count));
    return out;
}

bool is_integer_type(long long t)
{
    return t == onnx::TensorProto::INT8 || t == onnx::TensorProto::INT16 || t == onnx::TensorProto::INT32 ||
           t == onnx::TensorProto::INT64 || t == onnx::TensorProto::UINT8 || t == onnx::TensorProto::UINT16 ||
           t == onnx::TensorProto::UINT32 || t == onnx::TensorProto::UINT64;
}

class OnnxImporter
{
public:
    explicit OnnxImporter(const onnx::GraphProto& graph) : graph_(graph) {}

    NetworkGraph run()
    {
        for (const auto& t : graph_.initializer())
            constants_[t.name()] = read_tensor(t);

        const onnx::ValueInfoProto* input = nullptr;
        for (const auto& v : graph_.input()) {
            if (constants_.count(v.name()))
                continue;
            if (input)
                throw ParseError("model has more than one graph input ('" + input->name() + "', '" + v.name() + "')");
            input = &v;
        }
        if (!input)
            throw ParseError("model has no graph input");
        g_ = NetworkGraph(input_shape(*input), input->name());
        nodes_[input->name()] = 0;

        for (const auto& n : graph_.node())
            import(n);

        if (graph_.output_size() != 1)
            throw ParseError("model must have exactly one output, found " + std::to_string(graph_.output_size()));
        const auto it = nodes_.find(graph_.output(0).name());
        if (it == nodes_.end())
            throw ParseError("graph output '" + graph_.output(0).name() + "' is not computed from the input");
        g_.set_output(it->second);
        return std::move(g_);
    }

private:
    const onnx::GraphProto& graph_;
    NetworkGraph g_;
    std::map<std::string, std::size_t> nodes_;
    std::map<std::string, ConstTensor> constants_;
    bool batched_ = false;

    Shape input_shape(const onnx::ValueInfoProto& v)
    {
        if (!v.has_type() || !v.type().has_tensor_type() || !v.type().tensor_type().has_shape())
            throw ParseError("graph input '" + v.name() + "' has no static shape");
        const auto& dims = v.type().tensor_type().shape().dim();
        Shape shape;
        for (int i = 0; i < dims.size(); ++i) {
            const auto& d = dims[i];
            const bool dynamic = !d.has_dim_value() || d.dim_value() <= 0;
            if (i == 0 && dims.size() > 1 && (dynamic || d.dim_value() == 1)) {
                batched_ = true;
                continue;
            }
            if (dynamic)
                throw ParseError("graph input '" + v.name() + "' has a dynamic dimension " + std::to_string(i));
            shape.push_back(static_cast<std::size_t>(d.dim_value()));
        }
        if (shape.empty())
            shape = {1};
        return shape;
    }

    static const onnx::AttributeProto* attribute(const onnx::NodeProto& n, const std::string& name)
    {
        for (const auto& a : n.attribute())
            if (a.name() == name)
                return &a;
        return nullptr;
    }

    static long long int_attr(const onnx::NodeProto& n, const std::string& name, long long fallback)
    {
        const auto* a = attribute(n, name);
        return a ? a->i() : fallback;
    }

    static double float_attr(const onnx::NodeProto& n, const std::string& name, double fallback)
    {
        const auto* a = attribute(n, name);
        return a ? a->f() : fallback;
    }

    static std::vector<long long> ints_attr(const onnx::NodeProto& n, const std::string& name)
    {
        std::vector<long long> out;
        if (const auto* a = attribute(n, name))
            out.assign(a->ints().begin(), a->ints().end());
        return out;
    }

    std::string where(const onnx::NodeProto& n) const
    {
        return n.op_type() + " node '" + (n.name().empty() ? n.output(0) : n.name()) + "'";
    }

    bool is_constant(const std::string& name) const { return constants_.count(name) > 0; }

    const ConstTensor& constant(const onnx::NodeProto& n, int i) const
    {
        if (i >= n.input_size())
            throw ParseError(where(n) + ": missing input " + std::to_string(i));
        const auto it = constants_.find(n.input(i));
        if (it == constants_.end())
            throw UnsupportedError(n.op_type() + " with a computed input '" + n.input(i) + "' where a constant is required");
        return it->second;
    }

    std::size_t dynamic(const onnx::NodeProto& n, int i) const
    {
        if (i >= n.input_size())
            throw ParseError(where(n) + ": missing input " + std::to_string(i));
        const auto it = nodes_.find(n.input(i));
        if (it == nodes_.end())
            throw ParseError(where(n) + ": input '" + n.input(i) + "' is not defined before use");
        return it->second;
    }

    std::size_t emit(const onnx::NodeProto& n, Layer l)
    {
        if (l.name.empty())
            l.name = n.output(0);
        try {
            return g_.add(std::move(l));
        } catch (const ShapeError& e) {
            throw ParseError(where(n) + ": " + e.what());
        }
    }

    std::size_t layer(const onnx::NodeProto& n, LayerKind kind, std::vector<std::size_t> inputs, std::string name = {})
    {
        Layer l;
        l.kind = kind;
        l.inputs = std::move(inputs);
        l.name = std::move(name);
        return emit(n, std::move(l));
    }

    /// Shapes in ONNX include the batch axis; ours do not.
    long long axis_of(const onnx::NodeProto& n, long long axis, std::size_t rank) const
    {
        const long long full = static_cast<long long>(rank) + (batched_ ? 1 : 0);
        if (axis < 0)
            axis += full;
        if (batched_)
            --axis;
        if (axis < 0 || axis >= static_cast<long long>(rank))
            throw UnsupportedError(where(n) + " along the batch axis");
        return axis;
    }

    /// Elementwise x * s + c with constant, broadcastable s and c.
    std::size_t scale_shift(const onnx::NodeProto& n, std::size_t x, const VectorXd& s, const VectorXd& c,
                            const std::string& name = {})
    {
        const Shape shape = g_.layer(x).shape;
        const auto size = static_cast<Index>(shape_size(shape));
        const auto broadcast = [&](const VectorXd& v) {
            if (v.size() == 1)
                return VectorXd(VectorXd::Constant(size, v[0]));
            if (v.size() == size)
                return v;
            if (!shape.empty() && v.size() == static_cast<Index>(shape.back())) {
                VectorXd out(size);
                for (Index i = 0; i < size; ++i)
                    out[i] = v[i % v.size()];
                return out;
            }
            throw UnsupportedError(where(n) + " with a constant of " + std::to_string(v.size()) +
                                   " elements that does not broadcast to " + shape_string(shape));
        };
        Layer l;
        l.kind = LayerKind::affine;
        l.inputs = {x};
        l.weights = broadcast(s).asDiagonal();
        l.bias = broadcast(c);
        const std::string base = name.empty() ? n.output(0) : name;
        l.name = base;
        if (shape.size() == 1)
            return emit(n, std::move(l));
        l.name = base + "_affine";
        const std::size_t a = emit(n, std::move(l));
        Layer r;
        r.kind = LayerKind::reshape;
        r.inputs = {a};
        r.target = shape;
        r.name = base;
        return emit(n, std::move(r));
    }

    void import(const onnx::NodeProto& n)
    {
        if (!n.domain().empty() && n.domain() != "ai.onnx")
            throw UnsupportedError(n.domain() + "." + n.op_type());
        if (n.output_size() < 1)
            throw ParseError(where(n) + ": no output");
        const std::string& op = n.op_type();
        const std::string& out = n.output(0);

        if (op == "Constant") {
            const auto* v = attribute(n, "value");
            if (!v || !v->has_t())
                throw UnsupportedError("Constant without a tensor value");
            constants_[out] = read_tensor(v->t());
            return;
        }

        // Operators whose inputs are all constants would need folding.
        bool any_dynamic = false;
        for (const auto& in : n.input())
            any_dynamic = any_dynamic || nodes_.count(in) > 0;
        if (!any_dynamic && op != "Constant")
            throw UnsupportedError(op + " on constant inputs only");

        std::size_t node = 0;
        if (op == "Relu" || op == "Sigmoid" || op == "Tanh" || op == "Floor" || op == "Ceil" || op == "Softmax") {
            const LayerKind kind = op == "Relu"      ? LayerKind::relu
                                   : op == "Sigmoid" ? LayerKind::sigmoid
                                   : op == "Tanh"    ? LayerKind::tanh
                                   : op == "Floor"   ? LayerKind::floor
                                   : op == "Ceil"    ? LayerKind::ceil
                                                     : LayerKind::softmax;
            const std::size_t x = dynamic(n, 0);
            if (kind == LayerKind::softmax) {
                const Shape& s = g_.layer(x).shape;
                const long long axis = axis_of(n, int_attr(n, "axis", -1), s.size());
                if (axis != static_cast<long long>(s.size()) - 1 || shape_size(s) != s.back())
                    throw UnsupportedError("Softmax over part of a tensor");
            }
            node = layer(n, kind, {x});
        } else if (op == "Identity" || op == "Dropout") {
            node = dynamic(n, 0);
        } else if (op == "Gemm") {
            if (int_attr(n, "transA", 0) != 0)
                throw UnsupportedError("Gemm with transA");
            const std::size_t x = dynamic(n, 0);
            const ConstTensor& b = constant(n, 1);
            if (b.dims.size() != 2)
                throw ParseError(where(n) + ": B must be a matrix");
            const double alpha = float_attr(n, "alpha", 1.0);
            const double beta = float_attr(n, "beta", 1.0);
            const auto rows = static_cast<Index>(b.dims[0]), cols = static_cast<Index>(b.dims[1]);
            const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> bm(
                b.values.data(), rows, cols);
            Layer l;
            l.kind = LayerKind::affine;
            l.inputs = {x};
            l.weights = int_attr(n, "transB", 0) ? MatrixXd(bm) : MatrixXd(bm.transpose());
            l.weights *= alpha;
            l.bias = VectorXd::Zero(l.weights.rows());
            if (n.input_size() > 2 && !n.input(2).empty()) {
                const VectorXd c = constant(n, 2).values;
                if (c.size() == 1)
                    l.bias.setConstant(beta * c[0]);
                else if (c.size() == l.bias.size())
                    l.bias = beta * c;
                else
                    throw ParseError(where(n) + ": C does not broadcast to the output");
            }
            node = emit(n, std::move(l));
        } else if (op == "MatMul") {
            const std::size_t x = dynamic(n, 0);
            const ConstTensor& b = constant(n, 1);
            if (b.dims.size() != 2)
                throw UnsupportedError("MatMul with a batched right operand");
            const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> bm(
                b.values.data(), static_cast<Index>(b.dims[0]), static_cast<Index>(b.dims[1]));
            Layer l;
            l.kind = LayerKind::matmul;
            l.inputs = {x};
            l.weights = bm.transpose();
            node = emit(n, std::move(l));
        } else if (op == "Add" || op == "Sub") {
            const bool sub = op == "Sub";
            const bool c0 = is_constant(n.input(0)), c1 = is_constant(n.input(1));
            if (!c0 && !c1) {
                std::size_t rhs = dynamic(n, 1);
                if (sub) {
                    const VectorXd minus = VectorXd::Constant(1, -1.0);
                    rhs = scale_shift(n, rhs, minus, VectorXd::Zero(1), out + "_neg");
                }
                node = layer(n, LayerKind::add, {dynamic(n, 0), rhs});
            } else {
                const std::size_t x = dynamic(n, c0 ? 1 : 0);
                VectorXd c = constant(n, c0 ? 0 : 1).values;
                const Shape& s = g_.layer(x).shape;
                if (sub && c0) {
                    // c - x
                    node = scale_shift(n, x, VectorXd::Constant(1, -1.0), c);
                } else {
                    if (sub)
                        c = -c;
                    if (c.size() == 1 && shape_size(s) != 1)
                        c = VectorXd::Constant(static_cast<Index>(s.back()), c[0]);
                    Layer l;
                    l.kind = LayerKind::bias_add;
                    l.inputs = {x};
                    l.bias = c;
                    node = emit(n, std::move(l));
                }
            }
        } else if (op == "Mul" || op == "Div") {
            const bool c0 = is_constant(n.input(0)), c1 = is_constant(n.input(1));
            if (c0 == c1 || (op == "Div" && c0))
                throw UnsupportedError(op + " of two computed tensors");
            VectorXd s = constant(n, c0 ? 0 : 1).values;
            if (op == "Div")
                s = s.cwiseInverse();
            node = scale_shift(n, dynamic(n, c0 ? 1 : 0), s, VectorXd::Zero(1));
        } else if (op == "Conv") {
            if (int_attr(n, "group", 1) != 1)
                throw UnsupportedError("grouped Conv");
            if (const auto* a = attribute(n, "auto_pad"); a && a->s() != "NOTSET")
                throw UnsupportedError("Conv with auto_pad");
            const std::size_t x = dynamic(n, 0);
            const ConstTensor& w = constant(n, 1);
            if (w.dims.size() != 4)
                throw UnsupportedError("Conv that is not 2-D");
            Layer l;
            l.kind = LayerKind::conv2d;
            l.inputs = {x};
            l.conv.out_channels = static_cast<std::size_t>(w.dims[0]);
            l.conv.kernel_h = static_cast<std::size_t>(w.dims[2]);
            l.conv.kernel_w = static_cast<std::size_t>(w.dims[3]);
            if (const auto s = ints_attr(n, "strides"); s.size() == 2) {
                l.conv.stride_h = static_cast<std::size_t>(s[0]);
                l.conv.stride_w = static_cast<std::size_t>(s[1]);
            }
            if (const auto d = ints_attr(n, "dilations"); d.size() == 2) {
                l.conv.dilation_h = static_cast<std::size_t>(d[0]);
                l.conv.dilation_w = static_cast<std::size_t>(d[1]);
            }
            if (const auto p = ints_attr(n, "pads"); p.size() == 4)
                for (int k = 0; k < 4; ++k)
                    l.conv.pads[k] = static_cast<std::size_t>(p[static_cast<std::size_t>(k)]);
            l.conv.kernel = w.values;
            if (n.input_size() > 2 && !n.input(2).empty())
                l.bias = constant(n, 2).values;
            node = emit(n, std::move(l));
        } else if (op == "MaxPool") {
            if (int_attr(n, "ceil_mode", 0) != 0)
                throw UnsupportedError("MaxPool with ceil_mode");
            if (const auto* a = attribute(n, "auto_pad"); a && a->s() != "NOTSET")
                throw UnsupportedError("MaxPool with auto_pad");
            if (n.output_size() > 1 && !n.output(1).empty())
                throw UnsupportedError("MaxPool with indices");
            const auto k = ints_attr(n, "kernel_shape");
            if (k.size() != 2)
                throw UnsupportedError("MaxPool that is not 2-D");
            Layer l;
            l.kind = LayerKind::maxpool;
            l.inputs = {dynamic(n, 0)};
            l.pool.kernel_h = static_cast<std::size_t>(k[0]);
            l.pool.kernel_w = static_cast<std::size_t>(k[1]);
            if (const auto s = ints_attr(n, "strides"); s.size() == 2) {
                l.pool.stride_h = static_cast<std::size_t>(s[0]);
                l.pool.stride_w = static_cast<std::size_t>(s[1]);
            }
            if (const auto p = ints_attr(n, "pads"); p.size() == 4)
                for (int j = 0; j < 4; ++j)
                    l.pool.pads[j] = static_cast<std::size_t>(p[static_cast<std::size_t>(j)]);
            node = emit(n, std::move(l));
        } else if (op == "Flatten") {
            const std::size_t x = dynamic(n, 0);
            const long long axis = int_attr(n, "axis", 1);
            if (axis != (batched_ ? 1 : 0) && !(batched_ && axis == 0))
                throw UnsupportedError("Flatten with axis " + std::to_string(axis));
            node = layer(n, LayerKind::flatten, {x});
        } else if (op == "Reshape") {
            const std::size_t x = dynamic(n, 0);
            const ConstTensor& target = constant(n, 1);
            const Shape& in = g_.layer(x).shape;
            std::vector<long long> dims(target.values.data(), target.values.data() + target.values.size());
            std::vector<long long> full;
            if (batched_) {
                if (dims.empty() || (dims[0] != 1 && dims[0] != -1 && dims[0] != 0))
                    throw UnsupportedError("Reshape that changes the batch axis");
                dims.erase(dims.begin());
            }
            Shape shape;
            long long unknown = -1;
            std::size_t known = 1;
            for (std::size_t k = 0; k < dims.size(); ++k) {
                long long d = dims[k];
                if (d == 0) {
                    if (k >= in.size())
                        throw ParseError(where(n) + ": 0 refers to a missing input axis");
                    d = static_cast<long long>(in[k]);
                }
                if (d == -1) {
                    if (unknown >= 0)
                        throw ParseError(where(n) + ": more than one -1");
                    unknown = static_cast<long long>(k);
                    shape.push_back(1);
                    continue;
                }
                shape.push_back(static_cast<std::size_t>(d));
                known *= static_cast<std::size_t>(d);
            }
            if (unknown >= 0)
                shape[static_cast<std::size_t>(unknown)] = known ? shape_size(in) / known : 0;
            if (shape.empty())
                shape = {1};
            Layer l;
            l.kind = LayerKind::reshape;
            l.inputs = {x};
            l.target = shape;
            node = emit(n, std::move(l));
        } else if (op == "Transpose") {
            const std::size_t x = dynamic(n, 0);
            const Shape& in = g_.layer(x).shape;
            auto perm = ints_attr(n, "perm");
            if (perm.empty())
                for (long long k = static_cast<long long>(in.size() + (batched_ ? 1 : 0)); k-- > 0;)
                    perm.push_back(k);
            Layer l;
            l.kind = LayerKind::transpose;
            l.inputs = {x};
            std::size_t start = 0;
            if (batched_) {
                if (perm.front() != 0)
                    throw UnsupportedError("Transpose that moves the batch axis");
                start = 1;
            }
            for (std::size_t k = start; k < perm.size(); ++k)
                l.perm.push_back(static_cast<std::size_t>(perm[k] - static_cast<long long>(start)));
            node = emit(n, std::move(l));
        } else if (op == "Concat") {
            Layer l;
            l.kind = LayerKind::concat;
            for (int i = 0; i < n.input_size(); ++i) {
                if (is_constant(n.input(i))) {
                    const ConstTensor& c = constants_.at(n.input(i));
                    Layer k;
                    k.kind = LayerKind::constant;
                    k.name = n.input(i) + "_const";
                    k.bias = c.values;
                    for (std::size_t d = batched_ ? 1 : 0; d < c.dims.size(); ++d)
                        k.target.push_back(static_cast<std::size_t>(c.dims[d]));
                    l.inputs.push_back(emit(n, std::move(k)));
                } else {
                    l.inputs.push_back(dynamic(n, i));
                }
            }
            const Shape& s = g_.layer(l.inputs.front()).shape;
            l.axis = static_cast<std::size_t>(axis_of(n, int_attr(n, "axis", 0), s.size()));
            node = emit(n, std::move(l));
        } else if (op == "Cast") {
            const std::size_t x = dynamic(n, 0);
            if (is_integer_type(int_attr(n, "to", onnx::TensorProto::FLOAT))) {
                Layer l;
                l.kind = LayerKind::cast;
                l.inputs = {x};
                l.cast_mode = CastMode::round;
                node = emit(n, std::move(l));
            } else {
                node = x;
            }
        } else {
            throw UnsupportedError(op);
        }
        nodes_[out] = node;
    }
};

} // namespace

NetworkGraph parse_onnx(const std::string& bytes)
{
    GOOGLE_PROTOBUF_VERIFY_VERSION;
    onnx::ModelProto model;
    if (!model.ParseFromString(bytes))
        throw ParseError("malformed protobuf: not an ONNX model");
    if (!model.has_graph())
        throw ParseError("ONNX model has no graph");
    return OnnxImporter(model.graph()).run();
}

} // namespace zonoreach

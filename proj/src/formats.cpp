#include "zonoreach/formats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "zonoreach/error.hpp"

namespace zonoreach
{

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

// ---------------------------------------------------------------------------
// NNet

namespace
{

/// Numeric rows of an NNet file, comments stripped, with source line numbers.
struct NnetRows
{
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> lines;
    std::size_t next = 0;

    const std::vector<double>& take(const std::string& section, std::size_t at_least)
    {
        if (next >= rows.size())
            throw ParseError("file ends before the " + section, lines.empty() ? 0 : lines.back() + 1);
        const auto& r = rows[next];
        if (r.size() < at_least)
            throw ParseError(section + ": expected " + std::to_string(at_least) + " values, found " +
                                 std::to_string(r.size()),
                             lines[next]);
        ++next;
        return r;
    }

    std::size_t line() const { return next < lines.size() ? lines[next] : (lines.empty() ? 0 : lines.back() + 1); }
};

NnetRows nnet_rows(const std::string& text)
{
    NnetRows out;
    std::istringstream in(text);
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (line.rfind("//", 0) == 0)
            continue;
        std::vector<double> values;
        std::string cell;
        std::istringstream cells(line);
        while (std::getline(cells, cell, ',')) {
            const auto first = cell.find_first_not_of(" \t\r");
            if (first == std::string::npos)
                continue;
            const auto last = cell.find_last_not_of(" \t\r");
            const std::string token = cell.substr(first, last - first + 1);
            try {
                std::size_t used = 0;
                values.push_back(std::stod(token, &used));
                if (used != token.size())
                    throw std::invalid_argument(token);
            } catch (const std::exception&) {
                throw ParseError("malformed number '" + token + "'", number);
            }
        }
        if (values.empty())
            continue;
        out.rows.push_back(std::move(values));
        out.lines.push_back(number);
    }
    return out;
}

std::size_t as_count(double v, const std::string& what, std::size_t line)
{
    if (v < 1 || v != std::floor(v))
        throw ParseError(what + " must be a positive integer", line);
    return static_cast<std::size_t>(v);
}

} // namespace

NetworkGraph parse_nnet(const std::string& text, bool fold_normalization)
{
    NnetRows rows = nnet_rows(text);
    std::size_t line = rows.line();
    const auto& header = rows.take("header", 4);
    const std::size_t layers = as_count(header[0], "layer count", line);
    const std::size_t inputs = as_count(header[1], "input size", line);
    const std::size_t outputs = as_count(header[2], "output size", line);

    line = rows.line();
    const auto sizes_row = rows.take("layer sizes", layers + 1);
    std::vector<std::size_t> sizes;
    for (std::size_t i = 0; i <= layers; ++i)
        sizes.push_back(as_count(sizes_row[i], "layer size", line));
    if (sizes.front() != inputs || sizes.back() != outputs)
        throw ParseError("layer sizes disagree with the header", line);

    rows.take("symmetric flag", 1);
    Normalization norm;
    const auto vec = [](const std::vector<double>& r, std::size_t n) {
        VectorXd v(static_cast<Index>(n));
        for (std::size_t i = 0; i < n; ++i)
            v[static_cast<Index>(i)] = r[i];
        return v;
    };
    norm.input_min = vec(rows.take("input minimums", inputs), inputs);
    norm.input_max = vec(rows.take("input maximums", inputs), inputs);
    const auto& means = rows.take("means", inputs + 1);
    const auto& ranges = rows.take("ranges", inputs + 1);
    norm.input_mean = vec(means, inputs);
    norm.input_range = vec(ranges, inputs);
    norm.output_mean = means[inputs];
    norm.output_range = ranges[inputs];
    for (Index i = 0; i < norm.input_range.size(); ++i)
        if (norm.input_range[i] == 0.0)
            throw ParseError("input range " + std::to_string(i) + " is zero");

    NetworkGraph g({inputs}, "input");
    std::size_t node = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string section = "layer " + std::to_string(l + 1);
        MatrixXd w(static_cast<Index>(sizes[l + 1]), static_cast<Index>(sizes[l]));
        for (std::size_t r = 0; r < sizes[l + 1]; ++r) {
            const auto& row = rows.take(section + " weights", sizes[l]);
            for (std::size_t c = 0; c < sizes[l]; ++c)
                w(static_cast<Index>(r), static_cast<Index>(c)) = row[c];
        }
        VectorXd b(static_cast<Index>(sizes[l + 1]));
        for (std::size_t r = 0; r < sizes[l + 1]; ++r)
            b[static_cast<Index>(r)] = rows.take(section + " biases", 1)[0];

        if (fold_normalization && l == 0) {
            // W ((x - mean) / range) + b
            const VectorXd inv = norm.input_range.cwiseInverse();
            b -= w * norm.input_mean.cwiseProduct(inv);
            w = w * inv.asDiagonal();
        }
        if (fold_normalization && l + 1 == layers) {
            w *= norm.output_range;
            b = b * norm.output_range + VectorXd::Constant(b.size(), norm.output_mean);
        }
        Layer affine;
        affine.kind = LayerKind::affine;
        affine.name = "fc" + std::to_string(l + 1);
        affine.inputs = {node};
        affine.weights = std::move(w);
        affine.bias = std::move(b);
        node = g.add(std::move(affine));
        if (l + 1 < layers) {
            Layer relu;
            relu.kind = LayerKind::relu;
            relu.name = "relu" + std::to_string(l + 1);
            relu.inputs = {node};
            node = g.add(std::move(relu));
        }
    }
    if (rows.next != rows.rows.size())
        throw ParseError("unexpected data after the last layer", rows.line());
    if (!fold_normalization)
        g.normalization = norm;
    return g;
}

// ---------------------------------------------------------------------------
// JSON graph

namespace
{

[[noreturn]] void schema_error(const std::string& path, const std::string& what)
{
    throw ParseError(path + ": " + what);
}

const json& field(const json& obj, const std::string& key, const std::string& path)
{
    if (!obj.is_object())
        schema_error(path, "expected an object");
    const auto it = obj.find(key);
    if (it == obj.end())
        schema_error(path, "missing field '" + key + "'");
    return *it;
}

double number_at(const json& v, const std::string& path)
{
    if (!v.is_number())
        schema_error(path, "expected a number");
    return v.get<double>();
}

std::size_t count_at(const json& v, const std::string& path)
{
    if (!v.is_number_integer() || v.get<long long>() < 0)
        schema_error(path, "expected a nonnegative integer");
    return v.get<std::size_t>();
}

std::string string_at(const json& v, const std::string& path)
{
    if (!v.is_string())
        schema_error(path, "expected a string");
    return v.get<std::string>();
}

std::vector<std::size_t> counts_at(const json& v, const std::string& path)
{
    if (!v.is_array())
        schema_error(path, "expected an array");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(count_at(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

VectorXd vector_at(const json& v, const std::string& path)
{
    if (!v.is_array())
        schema_error(path, "expected an array of numbers");
    VectorXd out(static_cast<Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i)
        out[static_cast<Index>(i)] = number_at(v[i], path + "[" + std::to_string(i) + "]");
    return out;
}

MatrixXd matrix_at(const json& v, const std::string& path)
{
    if (!v.is_array() || v.empty())
        schema_error(path, "expected a non-empty array of rows");
    const std::size_t cols = v[0].is_array() ? v[0].size() : 0;
    MatrixXd m(static_cast<Index>(v.size()), static_cast<Index>(cols));
    for (std::size_t r = 0; r < v.size(); ++r) {
        const std::string rp = path + "[" + std::to_string(r) + "]";
        if (!v[r].is_array() || v[r].size() != cols)
            schema_error(rp, "expected a row of " + std::to_string(cols) + " numbers");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Index>(r), static_cast<Index>(c)) = number_at(v[r][c], rp + "[" + std::to_string(c) + "]");
    }
    return m;
}

json matrix_json(const MatrixXd& m)
{
    json rows = json::array();
    for (Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Index c = 0; c < m.cols(); ++c)
            row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

json vector_json(const VectorXd& v)
{
    json out = json::array();
    for (Index i = 0; i < v.size(); ++i)
        out.push_back(v[i]);
    return out;
}

void pair_field(const json& obj, const char* key, std::size_t& a, std::size_t& b, const std::string& path)
{
    if (!obj.contains(key))
        return;
    const auto v = counts_at(obj.at(key), path + "." + key);
    if (v.size() != 2)
        schema_error(path + "." + key, "expected two values");
    a = v[0];
    b = v[1];
}

void pads_field(const json& obj, std::size_t (&pads)[4], const std::string& path)
{
    if (!obj.contains("pads"))
        return;
    const auto v = counts_at(obj.at("pads"), path + ".pads");
    if (v.size() != 4)
        schema_error(path + ".pads", "expected [top, left, bottom, right]");
    std::copy(v.begin(), v.end(), pads);
}

const char* cast_name(CastMode m)
{
    switch (m) {
    case CastMode::floor:
        return "floor";
    case CastMode::ceil:
        return "ceil";
    default:
        return "round";
    }
}

} // namespace

NetworkGraph parse_json_graph(const std::string& text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        // e.byte is 1-based and points just past the offending character.
        const std::size_t end = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
        std::size_t line = 1, column = 1;
        for (std::size_t i = 0; i < end; ++i) {
            if (text[i] == '\n') {
                ++line;
                column = 1;
            } else {
                ++column;
            }
        }
        throw ParseError("invalid JSON", line, column);
    }
    if (string_at(field(doc, "format", "$"), "$.format") != "zonoreach-graph")
        schema_error("$.format", "expected \"zonoreach-graph\"");
    if (count_at(field(doc, "version", "$"), "$.version") != 1)
        schema_error("$.version", "only version 1 is supported");
    const json& input = field(doc, "input", "$");
    const std::string input_name = string_at(field(input, "name", "$.input"), "$.input.name");
    NetworkGraph g(counts_at(field(input, "shape", "$.input"), "$.input.shape"), input_name);

    const json& layers = field(doc, "layers", "$");
    if (!layers.is_array())
        schema_error("$.layers", "expected an array");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string path = "$.layers[" + std::to_string(i) + "]";
        const json& obj = layers[i];
        Layer l;
        l.name = string_at(field(obj, "name", path), path + ".name");
        if (g.find(l.name))
            schema_error(path + ".name", "duplicate node name '" + l.name + "'");
        const std::string kind = string_at(field(obj, "kind", path), path + ".kind");
        const auto k = layer_kind_from_string(kind);
        if (!k || *k == LayerKind::input)
            schema_error(path + ".kind", "unknown layer kind '" + kind + "'");
        l.kind = *k;
        if (obj.contains("inputs")) {
            const json& ins = obj.at("inputs");
            if (!ins.is_array())
                schema_error(path + ".inputs", "expected an array of node names");
            for (std::size_t j = 0; j < ins.size(); ++j) {
                const std::string jp = path + ".inputs[" + std::to_string(j) + "]";
                const auto src = g.find(string_at(ins[j], jp));
                if (!src)
                    schema_error(jp, "unknown node '" + ins[j].get<std::string>() + "'");
                l.inputs.push_back(*src);
            }
        } else if (l.kind != LayerKind::constant) {
            l.inputs.push_back(g.size() - 1);
        }

        switch (l.kind) {
        case LayerKind::affine:
            l.weights = matrix_at(field(obj, "weights", path), path + ".weights");
            if (obj.contains("bias"))
                l.bias = vector_at(obj.at("bias"), path + ".bias");
            break;
        case LayerKind::matmul:
            // Stored as in y = x W, i.e. (n x m).
            l.weights = matrix_at(field(obj, "weights", path), path + ".weights").transpose();
            break;
        case LayerKind::bias_add:
            l.bias = vector_at(field(obj, "bias", path), path + ".bias");
            break;
        case LayerKind::conv2d: {
            l.conv.out_channels = count_at(field(obj, "out_channels", path), path + ".out_channels");
            pair_field(obj, "kernel_shape", l.conv.kernel_h, l.conv.kernel_w, path);
            pair_field(obj, "strides", l.conv.stride_h, l.conv.stride_w, path);
            pair_field(obj, "dilations", l.conv.dilation_h, l.conv.dilation_w, path);
            pads_field(obj, l.conv.pads, path);
            l.conv.kernel = vector_at(field(obj, "kernel", path), path + ".kernel");
            if (obj.contains("bias"))
                l.bias = vector_at(obj.at("bias"), path + ".bias");
            break;
        }
        case LayerKind::maxpool:
            pair_field(obj, "kernel_shape", l.pool.kernel_h, l.pool.kernel_w, path);
            l.pool.stride_h = l.pool.kernel_h;
            l.pool.stride_w = l.pool.kernel_w;
            pair_field(obj, "strides", l.pool.stride_h, l.pool.stride_w, path);
            pads_field(obj, l.pool.pads, path);
            break;
        case LayerKind::reshape:
            l.target = counts_at(field(obj, "shape", path), path + ".shape");
            break;
        case LayerKind::transpose:
            l.perm = counts_at(field(obj, "perm", path), path + ".perm");
            break;
        case LayerKind::concat:
            l.axis = count_at(field(obj, "axis", path), path + ".axis");
            break;
        case LayerKind::constant:
            l.bias = vector_at(field(obj, "value", path), path + ".value");
            if (obj.contains("shape"))
                l.target = counts_at(obj.at("shape"), path + ".shape");
            break;
        case LayerKind::cast: {
            const std::string mode = obj.contains("mode") ? string_at(obj.at("mode"), path + ".mode") : "round";
            if (mode == "round")
                l.cast_mode = CastMode::round;
            else if (mode == "floor")
                l.cast_mode = CastMode::floor;
            else if (mode == "ceil")
                l.cast_mode = CastMode::ceil;
            else
                schema_error(path + ".mode", "expected round, floor or ceil");
            break;
        }
        default:
            break;
        }
        try {
            g.add(std::move(l));
        } catch (const ShapeError& e) {
            schema_error(path, e.what());
        }
    }
    if (doc.contains("output")) {
        const auto out = g.find(string_at(doc.at("output"), "$.output"));
        if (!out)
            schema_error("$.output", "unknown node");
        g.set_output(*out);
    }
    return g;
}

std::string write_json_graph(const NetworkGraph& g)
{
    json doc;
    doc["format"] = "zonoreach-graph";
    doc["version"] = 1;
    doc["input"] = {{"name", g.layer(0).name}, {"shape", g.input_shape()}};
    json layers = json::array();
    for (std::size_t i = 1; i < g.size(); ++i) {
        const Layer& l = g.layer(i);
        json obj;
        obj["name"] = l.name;
        obj["kind"] = to_string(l.kind);
        json ins = json::array();
        for (std::size_t j : l.inputs)
            ins.push_back(g.layer(j).name);
        obj["inputs"] = ins;
        switch (l.kind) {
        case LayerKind::affine:
            obj["weights"] = matrix_json(l.weights);
            obj["bias"] = vector_json(l.bias);
            break;
        case LayerKind::matmul:
            obj["weights"] = matrix_json(l.weights.transpose());
            break;
        case LayerKind::bias_add:
            obj["bias"] = vector_json(l.bias);
            break;
        case LayerKind::conv2d:
            obj["out_channels"] = l.conv.out_channels;
            obj["kernel_shape"] = {l.conv.kernel_h, l.conv.kernel_w};
            obj["strides"] = {l.conv.stride_h, l.conv.stride_w};
            obj["dilations"] = {l.conv.dilation_h, l.conv.dilation_w};
            obj["pads"] = {l.conv.pads[0], l.conv.pads[1], l.conv.pads[2], l.conv.pads[3]};
            obj["kernel"] = vector_json(l.conv.kernel);
            obj["bias"] = vector_json(l.bias);
            break;
        case LayerKind::maxpool:
            obj["kernel_shape"] = {l.pool.kernel_h, l.pool.kernel_w};
            obj["strides"] = {l.pool.stride_h, l.pool.stride_w};
            obj["pads"] = {l.pool.pads[0], l.pool.pads[1], l.pool.pads[2], l.pool.pads[3]};
            break;
        case LayerKind::reshape:
            obj["shape"] = l.target;
            break;
        case LayerKind::transpose:
            obj["perm"] = l.perm;
            break;
        case LayerKind::concat:
            obj["axis"] = l.axis;
            break;
        case LayerKind::constant:
            obj["value"] = vector_json(l.bias);
            obj["shape"] = l.target;
            break;
        case LayerKind::cast:
            obj["mode"] = cast_name(l.cast_mode);
            break;
        default:
            break;
        }
        layers.push_back(std::move(obj));
    }
    doc["layers"] = layers;
    doc["output"] = g.layer(g.output()).name;
    return doc.dump(2) + "\n";
}

// ---------------------------------------------------------------------------

std::optional<NetworkFormat> network_format_from_string(const std::string& name)
{
    if (name == "nnet")
        return NetworkFormat::nnet;
    if (name == "onnx")
        return NetworkFormat::onnx;
    if (name == "json")
        return NetworkFormat::json;
    return std::nullopt;
}

NetworkGraph load_network(const std::filesystem::path& path, std::optional<NetworkFormat> format,
                          bool fold_normalization)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error("cannot open network file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    if (!format) {
        const std::string ext = path.extension().string();
        format = network_format_from_string(ext.empty() ? "" : ext.substr(1));
        if (!format)
            throw ParseError("cannot tell the format of " + path.string() + " (use .nnet, .onnx or .json)");
    }
    try {
        switch (*format) {
        case NetworkFormat::nnet:
            return parse_nnet(ss.str(), fold_normalization);
        case NetworkFormat::onnx:
            return parse_onnx(ss.str());
        case NetworkFormat::json:
            return parse_json_graph(ss.str());
        }
    } catch (const ParseError& e) {
        throw ParseError(path.filename().string() + ": " + e.what());
    }
    throw Error("unknown network format");
}

} // namespace zonoreach

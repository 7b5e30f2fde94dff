#include "doctest.h"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "zonoreach/error.hpp"
#include "zonoreach/formats.hpp"

using namespace zonoreach;
using Eigen::VectorXd;

namespace
{

const std::string data = ZONOREACH_TEST_DATA;

std::string slurp(const std::string& name)
{
    std::ifstream in(data + "/" + name, std::ios::binary);
    REQUIRE(in);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

nlohmann::json expected()
{
    return nlohmann::json::parse(slurp("expected.json"));
}

VectorXd to_vec(const nlohmann::json& a)
{
    const auto v = a.get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Max relative deviation from the reference outputs recorded by the generator.
double deviation(const NetworkGraph& g, const nlohmann::json& runs)
{
    double worst = 0.0;
    REQUIRE(runs.size() > 0);
    for (const auto& r : runs) {
        const VectorXd y = g.evaluate(to_vec(r["input"]));
        const VectorXd want = to_vec(r["output"]);
        REQUIRE(y.size() == want.size());
        for (Eigen::Index i = 0; i < y.size(); ++i)
            worst = std::max(worst, std::abs(y[i] - want[i]) / (1.0 + std::abs(want[i])));
    }
    return worst;
}

template <class F>
std::string error_of(F&& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_CASE("nnet fixtures reproduce the reference outputs")
{
    const auto ex = expected();
    CHECK(deviation(load_network(data + "/small.nnet"), ex["small.nnet"]) < 1e-12);
    const NetworkGraph acas = load_network(data + "/acas_surrogate.nnet");
    CHECK(acas.input_size() == 5);
    CHECK(acas.output_size() == 5);
    CHECK(deviation(acas, ex["acas_surrogate.nnet"]) < 1e-12);
}

TEST_CASE("nnet normalization kept separately")
{
    const NetworkGraph g = parse_nnet(slurp("small.nnet"), false);
    REQUIRE(g.normalization);
    CHECK(g.normalization->input_mean.size() == 2);
    CHECK(g.normalization->output_range == 3.0);
    // Folded and unfolded graphs agree after applying the scaling by hand.
    const NetworkGraph folded = parse_nnet(slurp("small.nnet"));
    const VectorXd x = (VectorXd(2) << 0.3, 1.7).finished();
    const auto& n = *g.normalization;
    const VectorXd xn = (x - n.input_mean).cwiseQuotient(n.input_range);
    const VectorXd y = g.evaluate(xn) * n.output_range + VectorXd::Constant(2, n.output_mean);
    CHECK((y - folded.evaluate(x)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("nnet errors carry line numbers")
{
    std::string text = slurp("small.nnet");
    SUBCASE("bad number")
    {
        // Line 6 (1-based, after one comment line) is the minimums row.
        std::istringstream in(text);
        std::string line, out;
        int n = 0;
        while (std::getline(in, line)) {
            if (++n == 6)
                line = "-2.0,abc,";
            out += line + "\n";
        }
        try {
            parse_nnet(out);
            FAIL("no error");
        } catch (const ParseError& e) {
            CHECK(e.line() == 6);
        }
    }
    SUBCASE("truncated")
    {
        CHECK_THROWS_AS(parse_nnet(text.substr(0, text.size() / 2)), ParseError);
    }
    SUBCASE("empty")
    {
        CHECK_THROWS_AS(parse_nnet(""), ParseError);
    }
}

TEST_CASE("onnx fixtures reproduce onnx reference outputs")
{
    const auto ex = expected();
    for (const char* name : {"mlp.onnx", "conv.onnx", "ops.onnx", "residual.onnx"}) {
        CAPTURE(name);
        const NetworkGraph g = load_network(data + "/" + name);
        // float32 weights and reference arithmetic
        CHECK(deviation(g, ex[name]) < 1e-5);
    }
}

TEST_CASE("onnx model structure")
{
    const NetworkGraph conv = load_network(data + "/conv.onnx");
    CHECK(conv.input_shape() == Shape{1, 6, 6});
    CHECK(conv.output_size() == 3);
    bool pool = false;
    for (const auto& l : conv.layers())
        pool = pool || l.kind == LayerKind::maxpool;
    CHECK(pool);

    const NetworkGraph res = load_network(data + "/residual.onnx");
    bool add = false;
    for (const auto& l : res.layers())
        add = add || (l.kind == LayerKind::add && l.inputs.size() == 2);
    CHECK(add);
}

TEST_CASE("onnx errors")
{
    try {
        load_network(data + "/unsupported.onnx");
        FAIL("no error");
    } catch (const UnsupportedError& e) {
        CHECK(e.op() == "Erf");
        CHECK(std::string(e.what()) == "unsupported: Erf");
    }
    CHECK_THROWS_AS(parse_onnx("not a protobuf \x01\x02\x03"), ParseError);
}

TEST_CASE("json graph")
{
    const auto ex = expected();
    const NetworkGraph g = load_network(data + "/residual.json");
    CHECK(deviation(g, ex["residual.json"]) < 1e-12);
    CHECK(g.output_size() == 6);

    SUBCASE("round trip")
    {
        const NetworkGraph back = parse_json_graph(write_json_graph(g));
        CHECK(back.size() == g.size());
        CHECK(deviation(back, ex["residual.json"]) < 1e-12);
        CHECK(write_json_graph(back) == write_json_graph(g));
    }
    SUBCASE("onnx and nnet graphs round trip")
    {
        for (const char* name : {"conv.onnx", "ops.onnx", "small.nnet"}) {
            CAPTURE(name);
            const NetworkGraph a = load_network(data + "/" + name);
            const NetworkGraph b = parse_json_graph(write_json_graph(a));
            const VectorXd x = VectorXd::LinSpaced(static_cast<Eigen::Index>(a.input_size()), -0.7, 0.9);
            CHECK((a.evaluate(x) - b.evaluate(x)).cwiseAbs().maxCoeff() == 0.0);
        }
    }
    SUBCASE("schema errors name the offending path")
    {
        auto doc = nlohmann::json::parse(slurp("residual.json"));
        doc["layers"][0]["weights"][1] = "x";
        CHECK(error_of([&] { parse_json_graph(doc.dump()); }).find("$.layers[0].weights") != std::string::npos);

        doc = nlohmann::json::parse(slurp("residual.json"));
        doc["layers"][1]["kind"] = "gelu";
        CHECK(error_of([&] { parse_json_graph(doc.dump()); }).find("$.layers[1]") != std::string::npos);

        doc = nlohmann::json::parse(slurp("residual.json"));
        doc["version"] = 2;
        CHECK_THROWS_AS(parse_json_graph(doc.dump()), ParseError);

        doc = nlohmann::json::parse(slurp("residual.json"));
        doc["layers"][3]["inputs"][0] = "nowhere";
        CHECK_THROWS_AS(parse_json_graph(doc.dump()), Error);
    }
    SUBCASE("syntax errors carry a line")
    {
        try {
            parse_json_graph("{\n  \"format\": \"zonoreach-graph\",\n  \"version\": 1,\n  oops\n}");
            FAIL("no error");
        } catch (const ParseError& e) {
            CHECK(e.line() == 4);
        }
    }
    SUBCASE("shape mismatch")
    {
        auto doc = nlohmann::json::parse(slurp("residual.json"));
        doc["layers"][2]["weights"] = {{1.0, 2.0}};
        CHECK_THROWS_AS(parse_json_graph(doc.dump()), Error);
    }
}

TEST_CASE("format selection")
{
    CHECK(network_format_from_string("nnet") == NetworkFormat::nnet);
    CHECK_FALSE(network_format_from_string("h5"));
    // Explicit format overrides the extension.
    CHECK_THROWS_AS(load_network(data + "/small.nnet", NetworkFormat::json), ParseError);
    CHECK_THROWS(load_network(data + "/missing.nnet"));
}

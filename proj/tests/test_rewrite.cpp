#include "doctest.h"

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "zonoreach/analysis.hpp"
#include "zonoreach/formats.hpp"
#include "zonoreach/rewrite.hpp"

using namespace zonoreach;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace
{

const std::string data = ZONOREACH_TEST_DATA;

VectorXd vec(std::initializer_list<double> v)
{
    VectorXd x(static_cast<Index>(v.size()));
    Index i = 0;
    for (double d : v)
        x[i++] = d;
    return x;
}

double relu(double v)
{
    return v > 0 ? v : 0.0;
}

// Largest |a(x) - b(x)| over n uniform inputs in [-1, 1].
double max_gap(const NetworkGraph& a, const NetworkGraph& b, std::mt19937_64& rng, int n = 1000)
{
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < n; ++t) {
        VectorXd x(static_cast<Index>(a.input_size()));
        for (Index i = 0; i < x.size(); ++i)
            x[i] = u(rng);
        const VectorXd ya = a.evaluate(x), yb = b.evaluate(x);
        REQUIRE(ya.size() == yb.size());
        worst = std::max(worst, (ya - yb).cwiseAbs().maxCoeff());
    }
    return worst;
}

std::size_t count(const NetworkGraph& g, LayerKind k)
{
    std::size_t n = 0;
    for (const auto& l : g.layers())
        n += l.kind == k ? 1 : 0;
    return n;
}

NetworkGraph pool_net(std::size_t c, std::size_t h, std::size_t w, const PoolParams& p)
{
    NetworkGraph g({c, h, w});
    Layer l;
    l.name = "pool";
    l.kind = LayerKind::maxpool;
    l.pool = p;
    g.add(l);
    return g;
}

PoolParams pool(std::size_t k, std::size_t s, std::size_t pad = 0)
{
    PoolParams p;
    p.kernel_h = p.kernel_w = k;
    p.stride_h = p.stride_w = s;
    for (auto& q : p.pads)
        q = pad;
    return p;
}

} // namespace

TEST_CASE("max identities")
{
    // max(a, b) = relu(a - b) + b
    CHECK(relu(3 - 1) + 1 == 3);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-100, 100);
    for (int t = 0; t < 100000; ++t) {
        const double a = u(rng), b = u(rng);
        const double two = relu(a - b) + b;
        const double three = relu(a - b) + relu(b) - relu(-b);
        CHECK(two == three);
        CHECK(std::abs(two - std::max(a, b)) <= 1e-12 * (1 + std::abs(a) + std::abs(b)));
    }
}

TEST_CASE("maxpool rewrite preserves inference")
{
    std::mt19937_64 rng(2);
    SUBCASE("single pair")
    {
        const NetworkGraph g = pool_net(1, 1, 2, pool(1, 1));
        Layer l;
        l.kind = LayerKind::maxpool;
        l.pool.kernel_h = 1;
        l.pool.kernel_w = 2;
        NetworkGraph p({1, 1, 2});
        p.add(l);
        const NetworkGraph r = rewrite_maxpool(p);
        CHECK(count(r, LayerKind::maxpool) == 0);
        CHECK(count(r, LayerKind::relu) == 1);
        CHECK(r.evaluate(vec({3, 1}))[0] == 3);
        CHECK(r.evaluate(vec({1, 3}))[0] == 3);
        CHECK(g.size() == 2);
    }
    SUBCASE("pool shapes")
    {
        struct Case
        {
            std::size_t c, h, w;
            PoolParams p;
            std::size_t stages;
        };
        for (const Case& k : {Case{1, 4, 4, pool(2, 2), 2}, Case{2, 5, 5, pool(3, 1), 4}, Case{1, 5, 5, pool(3, 2, 1), 4},
                              Case{3, 6, 6, pool(2, 2), 2}}) {
            const NetworkGraph g = pool_net(k.c, k.h, k.w, k.p);
            const NetworkGraph r = rewrite_maxpool(g);
            CHECK(count(r, LayerKind::maxpool) == 0);
            // ceil(log2(window)) relu stages
            CHECK(count(r, LayerKind::relu) == k.stages);
            CHECK(r.output_shape() == g.output_shape());
            CHECK(max_gap(g, r, rng) <= 1e-6);
        }
    }
    SUBCASE("onnx conv net")
    {
        const NetworkGraph g = load_network(data + "/conv.onnx");
        const NetworkGraph r = rewrite_maxpool(g);
        CHECK(count(r, LayerKind::maxpool) == 0);
        CHECK(max_gap(g, r, rng) <= 1e-6);
    }
}

TEST_CASE("simplify fuses and removes")
{
    std::mt19937_64 rng(3);
    SUBCASE("matmul + bias -> affine")
    {
        NetworkGraph g({4});
        Layer m;
        m.kind = LayerKind::matmul;
        m.weights = oracle::random_matrix(rng, 3, 4, 1.0);
        g.add(m);
        Layer b;
        b.kind = LayerKind::bias_add;
        b.bias = oracle::random_vector(rng, 3, 1.0);
        g.add(b);
        g.add(fixture::unary("relu", LayerKind::relu));
        const NetworkGraph s = simplify(g);
        CHECK(count(s, LayerKind::affine) == 1);
        CHECK(count(s, LayerKind::matmul) == 0);
        CHECK(count(s, LayerKind::bias_add) == 0);
        CHECK(max_gap(g, s, rng) <= 1e-6);
    }
    SUBCASE("inverse transposes")
    {
        NetworkGraph g({2, 3});
        Layer t;
        t.kind = LayerKind::transpose;
        t.perm = {1, 0};
        g.add(t);
        g.add(t);
        g.add(fixture::unary("sig", LayerKind::sigmoid));
        const NetworkGraph s = simplify(g);
        CHECK(count(s, LayerKind::transpose) == 0);
        CHECK(max_gap(g, s, rng) == 0.0);
    }
    SUBCASE("onnx fixtures")
    {
        for (const char* name : {"mlp.onnx", "ops.onnx", "residual.onnx", "conv.onnx"}) {
            CAPTURE(name);
            const NetworkGraph g = load_network(data + "/" + name);
            const NetworkGraph s = simplify(g);
            CHECK(s.size() <= g.size());
            CHECK(max_gap(g, s, rng) <= 1e-6);
        }
    }
    SUBCASE("trailing softmax")
    {
        const auto m = fixture::random_mlp(rng, {3, 5, 4}, {LayerKind::relu});
        NetworkGraph g = m.graph();
        g.add(fixture::unary("softmax", LayerKind::softmax));
        NormalizedProperty argmax = parse_textual("x[0] in [-1,1]\nx[1] in [-1,1]\nx[2] in [-1,1]\nprove argmax == 2\n", {}, 4);
        const NetworkGraph s = simplify(g, &argmax);
        CHECK(count(s, LayerKind::softmax) == 0);
        std::uniform_real_distribution<double> u(-1, 1);
        for (int t = 0; t < 1000; ++t) {
            const VectorXd x = vec({u(rng), u(rng), u(rng)});
            Index a = 0, b = 0;
            g.evaluate(x).maxCoeff(&a);
            s.evaluate(x).maxCoeff(&b);
            CHECK(a == b);
        }
        // A threshold on a probability needs the softmax.
        NormalizedProperty thr = parse_textual("x[0] in [-1,1]\nx[1] in [-1,1]\nx[2] in [-1,1]\nprove y[0] <= 0.9\n", {}, 4);
        CHECK(count(simplify(g, &thr), LayerKind::softmax) == 1);
        CHECK(count(simplify(g), LayerKind::softmax) == 1);
    }
}

TEST_CASE("prune drops dead nodes")
{
    NetworkGraph g({2});
    Layer dead = fixture::affine("dead", MatrixXd::Ones(3, 2), vec({0, 0, 0}));
    g.add(dead);
    Layer live = fixture::affine("live", MatrixXd::Identity(2, 2), vec({1, 1}));
    live.inputs = {0};
    g.add(live);
    const NetworkGraph p = prune(g);
    CHECK(p.size() == 2);
    CHECK(p.evaluate(vec({1, 2})) == vec({2, 3}));
}

TEST_CASE("property layer")
{
    std::mt19937_64 rng(4);
    SUBCASE("y0 <= y1 becomes z0 = y0 - y1 <= 0")
    {
        NetworkGraph g({2});
        g.add(fixture::affine("id", MatrixXd::Identity(2, 2), vec({0, 0})));
        const NormalizedProperty p = parse_textual("x[0] in [0,1]\nx[1] in [0,1]\nprove y[0] <= y[1]\n");
        const auto [h, q] = append_property_layer(g, p);
        CHECK(h.output_size() == 1);
        const Layer& last = h.layer(h.output());
        CHECK(last.weights == (MatrixXd(1, 2) << 1, -1).finished());
        CHECK(last.bias == vec({0}));
        const Predicate f = q.prove_form();
        REQUIRE(f.kind == Predicate::Kind::atom);
        CHECK(f.atom.out == vec({1}));
        CHECK(f.atom.threshold == 0.0);
    }
    SUBCASE("argmax over five outputs gives four rows")
    {
        const auto m = fixture::random_mlp(rng, {3, 6, 5}, {LayerKind::relu});
        const NetworkGraph g = m.graph();
        const NormalizedProperty p =
            parse_textual("x[0] in [-1,1]\nx[1] in [-1,1]\nx[2] in [-1,1]\nprove argmax == 3\n", {}, 5);
        const auto [h, q] = append_property_layer(g, p);
        CHECK(h.output_size() == 4);
        std::uniform_real_distribution<double> u(-1, 1);
        for (int t = 0; t < 1000; ++t) {
            const VectorXd x = vec({u(rng), u(rng), u(rng)});
            CHECK(evaluate_point(p.prove_form(), g.evaluate(x), x) == evaluate_point(q.prove_form(), h.evaluate(x), x));
        }
    }
    SUBCASE("atoms over inputs go through a concat")
    {
        NetworkGraph g({1});
        g.add(fixture::affine("sq", vec({2}), vec({0})));
        const NormalizedProperty p = parse_textual("x[0] in [0,1]\noutputs 1\nprove y[0] - 2 * x[0] <= 0.5 or y[0] >= 3\n");
        const auto [h, q] = append_property_layer(g, p);
        CHECK(count(h, LayerKind::concat) == 1);
        CHECK(h.output_size() == 2);
        for (double x : {0.0, 0.3, 1.0}) {
            const VectorXd xv = vec({x});
            CHECK(evaluate_point(p.prove_form(), g.evaluate(xv), xv) ==
                  evaluate_point(q.prove_form(), h.evaluate(xv), xv));
        }
    }
    SUBCASE("single threshold")
    {
        NetworkGraph g({1});
        g.add(fixture::affine("a", vec({1}), vec({0})));
        const NormalizedProperty p = parse_textual("x[0] in [0,1]\nprove y[0] <= 1500\n");
        const auto [h, q] = append_property_layer(g, p);
        CHECK(h.layer(h.output()).weights == MatrixXd::Ones(1, 1));
    }
}

TEST_CASE("onnx model and its json twin give the same verdicts")
{
    const NetworkGraph onnx = load_network(data + "/mlp.onnx");
    const NetworkGraph twin = parse_json_graph(write_json_graph(onnx));
    const NormalizedProperty p = load_property(data + "/robust.prop", onnx.output_size());
    for (double eps : {0.01, 0.1, 0.5, 2.0}) {
        NormalizedProperty q = p;
        const VectorXd c = p.input_box.midpoint();
        q.input_box = IntervalTensor(c.array() - eps, c.array() + eps);
        AnalysisConfig cfg;
        cfg.attack.enabled = false;
        const Verdict a = Analyzer(onnx, q, cfg).analyse(no_deadline());
        const Verdict b = Analyzer(twin, q, cfg).analyse(no_deadline());
        CHECK(a.status == b.status);
    }
}

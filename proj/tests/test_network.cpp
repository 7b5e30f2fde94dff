#include "doctest.h"

#include <random>

#include "fixtures.hpp"
#include "zonoreach/error.hpp"
#include "zonoreach/network.hpp"

using namespace zonoreach;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace
{

VectorXd vec(std::initializer_list<double> v)
{
    VectorXd x(static_cast<Index>(v.size()));
    Index i = 0;
    for (double d : v)
        x[i++] = d;
    return x;
}

Layer conv_layer(std::size_t oc, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad, VectorXd kernel,
                 VectorXd bias)
{
    Layer l;
    l.name = "conv";
    l.kind = LayerKind::conv2d;
    l.conv.out_channels = oc;
    l.conv.kernel_h = kh;
    l.conv.kernel_w = kw;
    l.conv.stride_h = l.conv.stride_w = stride;
    for (auto& p : l.conv.pads)
        p = pad;
    l.conv.kernel = std::move(kernel);
    l.bias = std::move(bias);
    return l;
}

// Direct loop cross-correlation, zero padding.
VectorXd naive_conv(const VectorXd& x, std::size_t c, std::size_t h, std::size_t w, const Layer& l)
{
    const auto& p = l.conv;
    const std::size_t oh = (h + p.pads[0] + p.pads[2] - p.kernel_h) / p.stride_h + 1;
    const std::size_t ow = (w + p.pads[1] + p.pads[3] - p.kernel_w) / p.stride_w + 1;
    VectorXd y(static_cast<Index>(p.out_channels * oh * ow));
    for (std::size_t o = 0; o < p.out_channels; ++o)
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                double s = l.bias.size() ? l.bias[static_cast<Index>(o)] : 0.0;
                for (std::size_t ci = 0; ci < c; ++ci)
                    for (std::size_t a = 0; a < p.kernel_h; ++a)
                        for (std::size_t b = 0; b < p.kernel_w; ++b) {
                            const long r = static_cast<long>(i * p.stride_h + a) - static_cast<long>(p.pads[0]);
                            const long q = static_cast<long>(j * p.stride_w + b) - static_cast<long>(p.pads[1]);
                            if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(w))
                                continue;
                            const auto k = ((o * c + ci) * p.kernel_h + a) * p.kernel_w + b;
                            s += p.kernel[static_cast<Index>(k)] *
                                 x[static_cast<Index>((ci * h + static_cast<std::size_t>(r)) * w +
                                                      static_cast<std::size_t>(q))];
                        }
                y[static_cast<Index>((o * oh + i) * ow + j)] = s;
            }
    return y;
}

} // namespace

TEST_CASE("affine and activations")
{
    NetworkGraph g({2});
    g.add(fixture::affine("fc", (MatrixXd(2, 2) << 1, 2, -1, 1).finished(), vec({0.5, -1})));
    g.add(fixture::unary("relu", LayerKind::relu));
    CHECK(g.evaluate(vec({1, 1})) == vec({3.5, 0}));
    CHECK(g.output_shape() == Shape{2});

    NetworkGraph s({3});
    s.add(fixture::unary("sm", LayerKind::softmax));
    const VectorXd y = s.evaluate(vec({0, 0, std::log(2.0)}));
    CHECK(y[0] == doctest::Approx(0.25));
    CHECK(y[2] == doctest::Approx(0.5));

    NetworkGraph f({3});
    f.add(fixture::unary("floor", LayerKind::floor));
    CHECK(f.evaluate(vec({-0.5, 1.5, 2})) == vec({-1, 1, 2}));

    Layer c;
    c.kind = LayerKind::cast;
    c.cast_mode = CastMode::round;
    NetworkGraph r({2});
    r.add(c);
    CHECK(r.evaluate(vec({1.4, -2.6})) == vec({1, -3}));
}

TEST_CASE("conv2d matches a direct loop")
{
    std::mt19937_64 rng(5);
    for (std::size_t stride : {1U, 2U})
        for (std::size_t pad : {0U, 1U}) {
            const Layer l = conv_layer(2, 3, 3, stride, pad, oracle::random_vector(rng, 2 * 2 * 9, 1.0),
                                       oracle::random_vector(rng, 2, 1.0));
            NetworkGraph g({2, 5, 5});
            g.add(l);
            const VectorXd x = oracle::random_vector(rng, 50, 1.0);
            const VectorXd want = naive_conv(x, 2, 5, 5, l);
            REQUIRE(g.evaluate(x).size() == want.size());
            CHECK((g.evaluate(x) - want).cwiseAbs().maxCoeff() < 1e-12);
            const auto [w, b] = linear_map(g.layer(1), {2, 5, 5});
            CHECK((w * x + b - want).cwiseAbs().maxCoeff() < 1e-12);
        }
}

TEST_CASE("maxpool windows")
{
    Layer p;
    p.kind = LayerKind::maxpool;
    p.pool.kernel_h = p.pool.kernel_w = 2;
    p.pool.stride_h = p.pool.stride_w = 2;
    NetworkGraph g({1, 4, 4});
    g.add(p);
    CHECK(g.output_shape() == Shape{1, 2, 2});
    VectorXd x = VectorXd::LinSpaced(16, 0, 15);
    x[0] = 100;
    CHECK(g.evaluate(x) == vec({100, 7, 13, 15}));

    PoolParams padded = p.pool;
    padded.pads[0] = padded.pads[1] = 1;
    const auto w = pool_windows(padded, {1, 3, 3});
    REQUIRE(w.size() == 4);
    CHECK(w[0] == std::vector<std::size_t>{0});
    CHECK(w[3] == std::vector<std::size_t>{4, 5, 7, 8});
}

TEST_CASE("transpose, reshape, concat, matmul, bias_add")
{
    NetworkGraph g({2, 3});
    Layer t;
    t.kind = LayerKind::transpose;
    t.perm = {1, 0};
    const std::size_t tn = g.add(t);
    CHECK(g.output_shape() == Shape{3, 2});
    CHECK(g.evaluate(vec({1, 2, 3, 4, 5, 6})) == vec({1, 4, 2, 5, 3, 6}));

    Layer m;
    m.kind = LayerKind::matmul;
    m.weights = (MatrixXd(1, 2) << 1, 10).finished();
    g.add(m);
    CHECK(g.output_shape() == Shape{3, 1});
    CHECK(g.evaluate(vec({1, 2, 3, 4, 5, 6})) == vec({41, 52, 63}));

    Layer b;
    b.kind = LayerKind::bias_add;
    b.bias = vec({-1});
    g.add(b);
    CHECK(g.evaluate(vec({1, 2, 3, 4, 5, 6})) == vec({40, 51, 62}));

    Layer r;
    r.kind = LayerKind::reshape;
    r.target = {3};
    g.add(r);
    Layer k;
    k.kind = LayerKind::constant;
    k.bias = vec({7, 8});
    const std::size_t kn = g.add(k);
    Layer cat;
    cat.kind = LayerKind::concat;
    cat.axis = 0;
    cat.inputs = {kn - 1, kn};
    g.add(cat);
    CHECK(g.evaluate(vec({1, 2, 3, 4, 5, 6})) == vec({40, 51, 62, 7, 8}));
    CHECK(g.consumers(tn).size() == 1);

    // Every linear layer's dense map reproduces its evaluation.
    const auto vals = g.evaluate_all(vec({1, 2, 3, 4, 5, 6}));
    for (std::size_t i = 1; i < g.size(); ++i) {
        const Layer& l = g.layer(i);
        if (!is_linear(l.kind))
            continue;
        CAPTURE(to_string(l.kind));
        const auto [w, bb] = linear_map(l, g.layer(l.inputs[0]).shape);
        CHECK((w * vals[l.inputs[0]] + bb - vals[i]).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("residual DAG and liveness")
{
    NetworkGraph g({2});
    const std::size_t a = g.add(fixture::affine("a", MatrixXd::Identity(2, 2) * 2, vec({0, 0})));
    Layer dead = fixture::affine("dead", MatrixXd::Ones(1, 2), vec({0}));
    dead.inputs = {0};
    const std::size_t d = g.add(dead);
    Layer sum;
    sum.kind = LayerKind::add;
    sum.inputs = {0, a};
    g.add(sum);
    CHECK(g.evaluate(vec({1, -1})) == vec({3, -3}));
    CHECK(g.consumers(0).size() == 3);
    const auto live = g.live();
    CHECK_FALSE(live[d]);
    CHECK(live[a]);
    CHECK(g.find("dead") == d);
    CHECK_FALSE(g.find("nope"));
}

TEST_CASE("shape validation")
{
    NetworkGraph g({3});
    CHECK_THROWS_AS(g.add(fixture::affine("w", MatrixXd::Ones(2, 2), vec({0, 0}))), ShapeError);
    CHECK_THROWS_AS(g.add(fixture::affine("b", MatrixXd::Ones(2, 3), vec({0}))), ShapeError);
    Layer c = conv_layer(1, 3, 3, 1, 0, VectorXd::Ones(9), vec({0}));
    CHECK_THROWS_AS(g.add(c), ShapeError);
    Layer r;
    r.kind = LayerKind::reshape;
    r.target = {2, 2};
    CHECK_THROWS_AS(g.add(r), ShapeError);
    Layer t;
    t.kind = LayerKind::transpose;
    t.perm = {0, 0};
    CHECK_THROWS_AS(g.add(t), ShapeError);
    Layer s;
    s.kind = LayerKind::add;
    s.inputs = {0, 7};
    CHECK_THROWS_AS(g.add(s), ShapeError);
    Layer in;
    in.kind = LayerKind::input;
    CHECK_THROWS_AS(g.add(in), ShapeError);
    CHECK_THROWS_AS(g.evaluate(vec({1, 2})), ShapeError);
    CHECK_THROWS_AS(g.set_output(9), ShapeError);
    // Failed adds leave the graph untouched.
    CHECK(g.size() == 1);
}

TEST_CASE("layer kind names")
{
    for (LayerKind k : {LayerKind::affine, LayerKind::conv2d, LayerKind::maxpool, LayerKind::softmax, LayerKind::cast})
        CHECK(layer_kind_from_string(to_string(k)) == k);
    CHECK_FALSE(layer_kind_from_string("lstm"));
}

#include "doctest.h"

#include <random>

#include <json.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "zonoreach/analysis.hpp"
#include "zonoreach/error.hpp"

using namespace zonoreach;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace
{

VectorXd vec(std::initializer_list<double> v)
{
    VectorXd x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double d : v)
        x[i++] = d;
    return x;
}

// y0 = 3 x0 + 2 x1 - 2, y1 = x0 + 2 x1 over [-1, 1]^2.
NetworkGraph two_symbol_net()
{
    MatrixXd w(2, 2);
    w << 3, 2, 1, 2;
    NetworkGraph g({2});
    g.add(fixture::affine("fc", w, vec({-2, 0})));
    return g;
}

NormalizedProperty y0_le_y1()
{
    return fixture::atom_property(fixture::box(vec({-1, -1}), vec({1, 1})), vec({1, -1}), 0.0);
}

AnalysisConfig quiet()
{
    AnalysisConfig c;
    c.attack.enabled = false;
    return c;
}

} // namespace

TEST_CASE("worked example: property layer decides y0 <= y1")
{
    AnalysisConfig cfg = quiet();
    const Analyzer with(two_symbol_net(), y0_le_y1(), cfg);
    const Verdict v = with.analyse(no_deadline());
    CHECK(v.status == Status::verified);
    CHECK(v.output_bounds.lower(0) == doctest::Approx(-7));
    CHECK(v.output_bounds.upper(0) == doctest::Approx(3));
    CHECK(v.output_bounds.lower(1) == doctest::Approx(-3));
    CHECK(v.output_bounds.upper(1) == doctest::Approx(3));

    const ForwardResult r = with.forward(with.property().input_box, no_deadline());
    CHECK(r.output.lower(0) == doctest::Approx(-4));
    CHECK(r.output.upper(0) == doctest::Approx(0));

    cfg.property_layer = false;
    const Analyzer without(two_symbol_net(), y0_le_y1(), cfg);
    CHECK(without.analyse(no_deadline()).status == Status::unknown);
}

TEST_CASE("deadline in the past gives timeout")
{
    const Analyzer a(two_symbol_net(), y0_le_y1(), quiet());
    CHECK(a.analyse(Clock::now()).status == Status::timeout);
    CHECK(a.analyse(deadline_after(0.0)).status == Status::timeout);
}

TEST_CASE("input relation is the generator mass of each input symbol")
{
    const Analyzer a(two_symbol_net(), y0_le_y1(), quiet());
    const ForwardResult r = a.forward(a.property().input_box, no_deadline());
    // Output of the analysed graph is z = y0 - y1 = 2 e0 - 2.
    CHECK(r.input_relation[0] == doctest::Approx(2));
    CHECK(r.input_relation[1] == doctest::Approx(0).epsilon(1e-12));

    AnalysisConfig cfg = quiet();
    cfg.property_layer = false;
    const Analyzer b(two_symbol_net(), y0_le_y1(), cfg);
    const ForwardResult s = b.forward(b.property().input_box, no_deadline());
    CHECK(s.input_relation[0] == doctest::Approx(4));
    CHECK(s.input_relation[1] == doctest::Approx(4));
}

TEST_CASE("box-only analysis rejects atoms over inputs")
{
    NormalizedProperty p = y0_le_y1();
    p.predicate = Predicate::make_atom({vec({1, 0}), vec({1, 0}), 5.0, false});
    AnalysisConfig cfg = quiet();
    cfg.zonotope = false;
    CHECK_THROWS_AS(Analyzer(two_symbol_net(), p, cfg), Error);
    cfg.zonotope = true;
    const Analyzer a(two_symbol_net(), p, cfg);
    // y0 + x0 = 4 x0 + 2 x1 - 2 <= 4.
    CHECK(a.analyse(no_deadline()).status == Status::verified);
}

TEST_CASE("mismatched box size is a shape error")
{
    NormalizedProperty p = fixture::atom_property(fixture::box(vec({0}), vec({1})), vec({1, 0}), 0.0);
    CHECK_THROWS_AS(Analyzer(two_symbol_net(), p, quiet()), ShapeError);
}

TEST_CASE("counterexample search")
{
    NetworkGraph id({1});
    id.add(fixture::affine("id", MatrixXd::Identity(1, 1), VectorXd::Zero(1)));
    const IntervalTensor unit = fixture::box(vec({0}), vec({1}));

    SUBCASE("y <= -1 on y = x is violated everywhere")
    {
        const Analyzer a(id, fixture::atom_property(unit, vec({1}), -1.0), AnalysisConfig{});
        const auto c = a.search_counterexample(unit, no_deadline(), 7);
        REQUIRE(c);
        CHECK(c->output[0] > -1.0);
        CHECK(a.analyse(no_deadline()).status == Status::falsified);
    }
    SUBCASE("true property yields nothing")
    {
        const Analyzer a(id, fixture::atom_property(unit, vec({1}), 2.0), AnalysisConfig{});
        CHECK_FALSE(a.search_counterexample(unit, no_deadline(), 7));
    }
    SUBCASE("grid-oracle margin properties on 2-D nets")
    {
        std::mt19937_64 rng(11);
        int found = 0;
        for (int t = 0; t < 20; ++t) {
            const auto m = fixture::random_mlp(rng, {2, 8, 2}, {LayerKind::relu, LayerKind::sigmoid});
            const NetworkGraph g = m.graph();
            const VectorXd lo = vec({-1, -1}), hi = vec({1, 1});
            double best = -1e300;
            oracle::for_each_grid_point(lo, hi, 200, [&](const VectorXd& x) {
                const VectorXd y = g.evaluate(x);
                best = std::max(best, y[1] - y[0]);
            });
            const double delta = 0.05 + 0.1 * (t % 3);
            const Analyzer a(g, fixture::atom_property(fixture::box(lo, hi), vec({-1, 1}), best - delta),
                             AnalysisConfig{});
            const auto c = a.search_counterexample(a.property().input_box, no_deadline(), static_cast<std::uint64_t>(t));
            if (c && c->output[1] - c->output[0] > best - delta)
                ++found;
        }
        CHECK(found == 20);
    }
}

TEST_CASE("sound bounds enclose samples for every domain")
{
    std::mt19937_64 rng(3);
    for (int t = 0; t < 30; ++t) {
        const auto m = fixture::random_mlp(rng, {3, 6, 5, 2}, {LayerKind::relu, LayerKind::sigmoid, LayerKind::tanh});
        const NetworkGraph g = m.graph();
        const VectorXd lo = oracle::random_vector(rng, 3) , hi = lo + VectorXd::Constant(3, 0.8);
        const auto p = fixture::atom_property(fixture::box(lo, hi), vec({1, 0}), 100.0);
        for (int d = 0; d < 4; ++d) {
            AnalysisConfig cfg = quiet();
            cfg.zonotope = d == 1 || d == 2;
            cfg.constrained = d == 2;
            cfg.hybrid = d == 3;
            const Analyzer a(g, p, cfg);
            const Verdict v = a.analyse(no_deadline());
            REQUIRE(v.output_bounds.size() == 2);
            for (int s = 0; s < 300; ++s) {
                const VectorXd y = g.evaluate(oracle::random_point(rng, lo, hi));
                CHECK(v.output_bounds.contains(y));
            }
        }
    }
}

TEST_CASE("constrained zonotope never widens the zonotope bounds")
{
    std::mt19937_64 rng(5);
    for (int t = 0; t < 30; ++t) {
        const auto m = fixture::random_mlp(rng, {2, 8, 2}, {LayerKind::relu});
        const NetworkGraph g = m.graph();
        const auto p = fixture::atom_property(fixture::box(vec({-1, -1}), vec({1, 1})), vec({1, 0}), 100.0);
        AnalysisConfig z = quiet();
        AnalysisConfig c = quiet();
        c.constrained = true;
        const Verdict vz = Analyzer(g, p, z).analyse(no_deadline());
        const Verdict vc = Analyzer(g, p, c).analyse(no_deadline());
        CHECK(vz.output_bounds.contains(vc.output_bounds));
    }
}

TEST_CASE("verified fixtures admit no sampled counterexample; falsified ones carry a confirmed one")
{
    std::mt19937_64 rng(9);
    int verified = 0, falsified = 0;
    for (int t = 0; t < 40; ++t) {
        const auto m = fixture::random_mlp(rng, {2, 6, 1}, {LayerKind::relu});
        const NetworkGraph g = m.graph();
        const VectorXd lo = vec({-1, -1}), hi = vec({1, 1});
        const double top = fixture::relu_mlp_max(m, vec({1}), lo, hi);
        const double threshold = top + (t % 2 ? 0.3 : -0.3);
        AnalysisConfig cfg;
        cfg.constrained = true;
        const Analyzer a(g, fixture::atom_property(fixture::box(lo, hi), vec({1}), threshold), cfg);
        const Verdict v = a.analyse(no_deadline());
        if (v.status == Status::verified) {
            ++verified;
            for (int s = 0; s < 2000; ++s)
                CHECK(g.evaluate(oracle::random_point(rng, lo, hi))[0] <= threshold);
        } else if (v.status == Status::falsified) {
            ++falsified;
            REQUIRE(v.counterexample);
            CHECK(g.evaluate(v.counterexample->input)[0] > threshold);
            CHECK(a.property().input_box.contains(v.counterexample->input));
        }
        CHECK_FALSE((v.status == Status::verified && threshold < top));
        CHECK_FALSE((v.status == Status::falsified && threshold > top));
    }
    CHECK(verified > 0);
    CHECK(falsified > 0);
}

TEST_CASE("maxpool and softmax graphs fall back soundly")
{
    NetworkGraph g({1, 2, 2});
    Layer pool;
    pool.name = "pool";
    pool.kind = LayerKind::maxpool;
    pool.pool.kernel_h = pool.pool.kernel_w = 2;
    pool.pool.stride_h = pool.pool.stride_w = 2;
    g.add(pool);
    Layer flat;
    flat.name = "flat";
    flat.kind = LayerKind::flatten;
    g.add(flat);
    g.add(fixture::affine("fc", (MatrixXd(2, 1) << 1, -1).finished(), vec({0, 0})));
    g.add(fixture::unary("soft", LayerKind::softmax));
    const VectorXd lo = VectorXd::Constant(4, -1), hi = VectorXd::Constant(4, 1);
    // Softmax is removed for an order-only property; y0 - y1 = 2 max <= 2.
    const auto p = fixture::atom_property(fixture::box(lo, hi), vec({-1, 1}), 2.5);
    const Analyzer a(g, p, quiet());
    CHECK(a.analyse(no_deadline()).status == Status::verified);
    std::mt19937_64 rng(1);
    AnalysisConfig cfg = quiet();
    cfg.property_layer = false;
    const Analyzer b(g, fixture::atom_property(fixture::box(lo, hi), vec({1, 0}), 1.0), cfg);
    const Verdict v = b.analyse(no_deadline());
    for (int s = 0; s < 500; ++s)
        CHECK(v.output_bounds.contains(g.evaluate(oracle::random_point(rng, lo, hi))));
}

TEST_CASE("report JSON")
{
    const Analyzer a(two_symbol_net(), y0_le_y1(), quiet());
    const Verdict v = a.analyse(no_deadline());
    const auto doc = nlohmann::json::parse(verdict_json(v));
    CHECK(doc["schema"] == "zonoreach-report");
    CHECK(doc["version"] == 1);
    CHECK(doc["status"] == "true");
    CHECK(doc["counterexample"].is_null());
    CHECK(doc["bounds"]["lower"].size() == 2);
    CHECK(doc["stats"].contains("seconds"));
    CHECK(doc["stats"]["per_layer"].size() >= 1);
    const auto quiet_doc = nlohmann::json::parse(verdict_json(v, false));
    CHECK_FALSE(quiet_doc["stats"].contains("seconds"));
    CHECK_FALSE(quiet_doc["stats"].contains("per_layer"));
}

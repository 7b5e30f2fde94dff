// Small networks and exhaustive references for the analysis tests.
#ifndef ZONOREACH_TESTS_FIXTURES_HPP
#define ZONOREACH_TESTS_FIXTURES_HPP

#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "oracles.hpp"
#include "zonoreach/network.hpp"
#include "zonoreach/property.hpp"

namespace fixture
{

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace zonoreach;

inline Layer affine(std::string name, MatrixXd w, VectorXd b)
{
    Layer l;
    l.name = std::move(name);
    l.kind = LayerKind::affine;
    l.weights = std::move(w);
    l.bias = std::move(b);
    return l;
}

inline Layer unary(std::string name, LayerKind kind)
{
    Layer l;
    l.name = std::move(name);
    l.kind = kind;
    return l;
}

struct Mlp
{
    std::vector<MatrixXd> w;
    std::vector<VectorXd> b;
    /// Activation after each hidden layer.
    std::vector<LayerKind> act;

    NetworkGraph graph() const
    {
        NetworkGraph g({static_cast<std::size_t>(w.front().cols())});
        for (std::size_t i = 0; i < w.size(); ++i) {
            g.add(affine("fc" + std::to_string(i), w[i], b[i]));
            if (i + 1 < w.size())
                g.add(unary("act" + std::to_string(i), act[i]));
        }
        return g;
    }
};

/// Random MLP: sizes = {inputs, hidden..., outputs}.
inline Mlp random_mlp(std::mt19937_64& rng, const std::vector<Index>& sizes, const std::vector<LayerKind>& kinds,
                      double scale = 1.0)
{
    Mlp m;
    std::uniform_int_distribution<std::size_t> pick(0, kinds.size() - 1);
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        m.w.push_back(oracle::random_matrix(rng, sizes[i + 1], sizes[i], scale));
        m.b.push_back(oracle::random_vector(rng, sizes[i + 1], 0.5 * scale));
        if (i + 2 < sizes.size())
            m.act.push_back(kinds[pick(rng)]);
    }
    return m;
}

inline IntervalTensor box(const VectorXd& lo, const VectorXd& hi)
{
    return {lo, hi};
}

inline NormalizedProperty atom_property(const IntervalTensor& input_box, const VectorXd& c, double t,
                                        bool strict = false)
{
    NormalizedProperty p;
    p.input_box = input_box;
    p.output_size = static_cast<std::size_t>(c.size());
    p.predicate = Predicate::make_atom({c, VectorXd(), t, strict});
    return p;
}

/// Exact max of c.y over the box for a ReLU MLP, by enumerating every
/// activation pattern of every hidden neuron and solving each linear piece.
inline double relu_mlp_max(const Mlp& m, const VectorXd& c, const VectorXd& lo, const VectorXd& hi)
{
    std::size_t hidden = 0;
    for (std::size_t i = 0; i + 1 < m.w.size(); ++i)
        hidden += static_cast<std::size_t>(m.w[i].rows());
    const Index n = m.w.front().cols();
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t pattern = 0; pattern < (std::size_t{1} << hidden); ++pattern) {
        // Current layer value as lin * x + off; constraints a x + b >= 0.
        MatrixXd lin = MatrixXd::Identity(n, n);
        VectorXd off = VectorXd::Zero(n);
        MatrixXd a(0, n);
        VectorXd b(0);
        std::size_t bit = 0;
        for (std::size_t i = 0; i + 1 < m.w.size(); ++i) {
            const MatrixXd pl = m.w[i] * lin;
            const VectorXd po = m.w[i] * off + m.b[i];
            MatrixXd a2(a.rows() + pl.rows(), n);
            VectorXd b2(a.rows() + pl.rows());
            a2.topRows(a.rows()) = a;
            b2.head(a.rows()) = b;
            VectorXd s(pl.rows());
            for (Index r = 0; r < pl.rows(); ++r, ++bit) {
                const double sign = (pattern >> bit) & 1U ? 1.0 : -1.0;
                s[r] = sign > 0 ? 1.0 : 0.0;
                a2.row(a.rows() + r) = sign * pl.row(r);
                b2[a.rows() + r] = sign * po[r];
            }
            a = a2;
            b = b2;
            lin = s.asDiagonal() * pl;
            off = s.asDiagonal() * po;
        }
        const VectorXd cl = (c.transpose() * m.w.back() * lin).transpose();
        const double co = c.dot(m.w.back() * off + m.b.back());
        const auto mn = oracle::box_lp_min(-cl, a, b, lo, hi);
        if (mn)
            best = std::max(best, co - *mn);
    }
    return best;
}

/// Upper bound on the unstable neurons of an instance.
inline std::size_t hidden_count(const Mlp& m)
{
    std::size_t h = 0;
    for (std::size_t i = 0; i + 1 < m.w.size(); ++i)
        h += static_cast<std::size_t>(m.w[i].rows());
    return h;
}

} // namespace fixture

#endif

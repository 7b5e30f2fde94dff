#include "zonoreach/interval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "zonoreach/error.hpp"

namespace zonoreach
{

using rounding::inf;

SoundScalar operator-(SoundScalar a)
{
    return {-a.hi, -a.lo};
}

SoundScalar add(SoundScalar a, SoundScalar b, Rounding mode)
{
    return {rounding::add_down(a.lo, b.lo, mode), rounding::add_up(a.hi, b.hi, mode)};
}

SoundScalar sub(SoundScalar a, SoundScalar b, Rounding mode)
{
    return add(a, -b, mode);
}

SoundScalar mul(SoundScalar a, SoundScalar b, Rounding mode)
{
    const double p[4] = {rounding::xmul(a.lo, b.lo), rounding::xmul(a.lo, b.hi),
                         rounding::xmul(a.hi, b.lo), rounding::xmul(a.hi, b.hi)};
    const auto [mn, mx] = std::minmax_element(std::begin(p), std::end(p));
    return {rounding::down(*mn, mode), rounding::up(*mx, mode)};
}

SoundScalar scale(double s, SoundScalar a, Rounding mode)
{
    if (s >= 0.0)
        return {rounding::mul_down(s, a.lo, mode), rounding::mul_up(s, a.hi, mode)};
    return {rounding::mul_down(s, a.hi, mode), rounding::mul_up(s, a.lo, mode)};
}

SoundScalar inv(SoundScalar a, Rounding mode)
{
    if (a.lo <= 0.0 && 0.0 <= a.hi)
        return {-inf, inf};
    return {rounding::down(1.0 / a.hi, mode), rounding::up(1.0 / a.lo, mode)};
}

SoundScalar abs(SoundScalar a)
{
    if (a.lo >= 0.0)
        return a;
    if (a.hi <= 0.0)
        return -a;
    return {0.0, std::max(-a.lo, a.hi)};
}

std::size_t shape_size(const Shape& shape)
{
    std::size_t n = 1;
    for (std::size_t d : shape)
        n *= d;
    return n;
}

std::string shape_string(const Shape& shape)
{
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i)
        out << (i ? ", " : "") << shape[i];
    out << ')';
    return out.str();
}

IntervalTensor::IntervalTensor(Shape shape, Eigen::VectorXd lower, Eigen::VectorXd upper)
    : shape_(std::move(shape)), lower_(std::move(lower)), upper_(std::move(upper))
{
    if (lower_.size() != upper_.size())
        throw ShapeError("interval tensor: lower and upper sizes differ");
    if (shape_size(shape_) != static_cast<std::size_t>(lower_.size()))
        throw ShapeError("interval tensor: shape " + shape_string(shape_) + " does not hold " +
                         std::to_string(lower_.size()) + " elements");
}

IntervalTensor::IntervalTensor(Eigen::VectorXd lower, Eigen::VectorXd upper)
    : shape_{static_cast<std::size_t>(lower.size())}, lower_(std::move(lower)), upper_(std::move(upper))
{
    if (lower_.size() != upper_.size())
        throw ShapeError("interval tensor: lower and upper sizes differ");
}

IntervalTensor IntervalTensor::point(const Eigen::VectorXd& x)
{
    return {x, x};
}

IntervalTensor IntervalTensor::point(Shape shape, const Eigen::VectorXd& x)
{
    return {std::move(shape), x, x};
}

IntervalTensor IntervalTensor::top(Shape shape)
{
    const auto n = static_cast<Eigen::Index>(shape_size(shape));
    return {std::move(shape), Eigen::VectorXd::Constant(n, -inf), Eigen::VectorXd::Constant(n, inf)};
}

Eigen::VectorXd IntervalTensor::midpoint() const
{
    Eigen::VectorXd mid(lower_.size());
    for (Eigen::Index i = 0; i < lower_.size(); ++i)
        mid[i] = lower_[i] + 0.5 * (upper_[i] - lower_[i]);
    return mid;
}

void IntervalTensor::set(std::size_t i, SoundScalar v)
{
    lower_[static_cast<Eigen::Index>(i)] = v.lo;
    upper_[static_cast<Eigen::Index>(i)] = v.hi;
}

IntervalTensor IntervalTensor::reshaped(Shape shape) const
{
    return {std::move(shape), lower_, upper_};
}

bool IntervalTensor::is_finite() const
{
    return lower_.allFinite() && upper_.allFinite();
}

bool IntervalTensor::is_empty() const
{
    for (Eigen::Index i = 0; i < lower_.size(); ++i)
        if (lower_[i] > upper_[i])
            return true;
    return false;
}

bool IntervalTensor::contains(const Eigen::VectorXd& x, double tolerance) const
{
    if (x.size() != lower_.size())
        return false;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double slack = tolerance * std::max(1.0, std::abs(x[i]));
        if (!(lower_[i] - slack <= x[i] && x[i] <= upper_[i] + slack))
            return false;
    }
    return true;
}

bool IntervalTensor::contains(const IntervalTensor& other) const
{
    if (other.size() != size())
        return false;
    return (lower_.array() <= other.lower_.array()).all() && (other.upper_.array() <= upper_.array()).all();
}

IntervalTensor IntervalTensor::intersect(const IntervalTensor& other) const
{
    if (other.size() != size())
        throw ShapeError("intersect: size mismatch");
    return {shape_, lower_.cwiseMax(other.lower_), upper_.cwiseMin(other.upper_)};
}

IntervalTensor IntervalTensor::hull(const IntervalTensor& other) const
{
    if (other.size() != size())
        throw ShapeError("hull: size mismatch");
    return {shape_, lower_.cwiseMin(other.lower_), upper_.cwiseMax(other.upper_)};
}

double sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double apply(Monotone f, double x)
{
    switch (f) {
    case Monotone::relu:
        return x > 0.0 ? x : 0.0;
    case Monotone::sigmoid:
        return sigmoid(x);
    case Monotone::tanh:
        return std::tanh(x);
    case Monotone::exp:
        return std::exp(x);
    case Monotone::floor:
        return std::floor(x);
    case Monotone::ceil:
        return std::ceil(x);
    case Monotone::round:
        return std::nearbyint(x);
    }
    return x;
}

namespace box
{

namespace
{

// Elementwise binary op with scalar broadcasting.
template <typename Op>
IntervalTensor zip(const IntervalTensor& a, const IntervalTensor& b, const char* name, Op op)
{
    if (a.size() != b.size() && a.size() != 1 && b.size() != 1)
        throw ShapeError(std::string(name) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " are not broadcast-compatible");
    const IntervalTensor& big = a.size() >= b.size() ? a : b;
    IntervalTensor out = big;
    for (std::size_t i = 0; i < big.size(); ++i) {
        const SoundScalar x = a.at(a.size() == 1 ? 0 : i);
        const SoundScalar y = b.at(b.size() == 1 ? 0 : i);
        out.set(i, op(x, y));
    }
    return out;
}

bool is_exact(Monotone f)
{
    return f == Monotone::relu || f == Monotone::floor || f == Monotone::ceil || f == Monotone::round;
}

double eval_down(Monotone f, double x, Rounding mode)
{
    if (std::isinf(x))
        return apply(f, x);
    const double y = apply(f, x);
    if (is_exact(f) || mode == Rounding::fast)
        return y;
    double lo = rounding::down(y, rounding::transcendental_ulps);
    if (f == Monotone::sigmoid || f == Monotone::exp)
        lo = std::max(lo, 0.0);
    if (f == Monotone::tanh)
        lo = std::max(lo, -1.0);
    return lo;
}

double eval_up(Monotone f, double x, Rounding mode)
{
    if (std::isinf(x))
        return apply(f, x);
    const double y = apply(f, x);
    if (is_exact(f) || mode == Rounding::fast)
        return y;
    double hi = rounding::up(y, rounding::transcendental_ulps);
    if (f == Monotone::sigmoid || f == Monotone::tanh)
        hi = std::min(hi, 1.0);
    return hi;
}

} // namespace

IntervalTensor add(const IntervalTensor& a, const IntervalTensor& b, Rounding mode)
{
    return zip(a, b, "add", [mode](SoundScalar x, SoundScalar y) { return zonoreach::add(x, y, mode); });
}

IntervalTensor sub(const IntervalTensor& a, const IntervalTensor& b, Rounding mode)
{
    return zip(a, b, "sub", [mode](SoundScalar x, SoundScalar y) { return zonoreach::sub(x, y, mode); });
}

IntervalTensor neg(const IntervalTensor& a)
{
    return {a.shape(), -a.upper(), -a.lower()};
}

IntervalTensor scale(double s, const IntervalTensor& a, Rounding mode)
{
    IntervalTensor out = a;
    for (std::size_t i = 0; i < a.size(); ++i)
        out.set(i, zonoreach::scale(s, a.at(i), mode));
    return out;
}

IntervalTensor mul(const IntervalTensor& a, const IntervalTensor& b, Rounding mode)
{
    return zip(a, b, "mul", [mode](SoundScalar x, SoundScalar y) { return zonoreach::mul(x, y, mode); });
}

IntervalTensor inv(const IntervalTensor& a, Rounding mode)
{
    IntervalTensor out = a;
    for (std::size_t i = 0; i < a.size(); ++i)
        out.set(i, zonoreach::inv(a.at(i), mode));
    return out;
}

IntervalTensor matmul(const Eigen::MatrixXd& weights, const IntervalTensor& x, Rounding mode)
{
    return affine(weights, Eigen::VectorXd::Zero(weights.rows()), x, mode);
}

IntervalTensor affine(const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias,
                      const IntervalTensor& x, Rounding mode)
{
    if (static_cast<std::size_t>(weights.cols()) != x.size())
        throw ShapeError("matmul: weight matrix has " + std::to_string(weights.cols()) +
                         " columns but input has " + std::to_string(x.size()) + " elements");
    if (bias.size() != weights.rows())
        throw ShapeError("affine: bias length differs from weight rows");

    const Eigen::Index rows = weights.rows();
    Eigen::VectorXd lo(rows), hi(rows);
    const Eigen::VectorXd& xl = x.lower();
    const Eigen::VectorXd& xu = x.upper();
    for (Eigen::Index i = 0; i < rows; ++i) {
        double l = bias[i];
        double u = bias[i];
        for (Eigen::Index k = 0; k < weights.cols(); ++k) {
            const double w = weights(i, k);
            if (w > 0.0) {
                l = rounding::add_down(l, rounding::mul_down(w, xl[k], mode), mode);
                u = rounding::add_up(u, rounding::mul_up(w, xu[k], mode), mode);
            } else if (w < 0.0) {
                l = rounding::add_down(l, rounding::mul_down(w, xu[k], mode), mode);
                u = rounding::add_up(u, rounding::mul_up(w, xl[k], mode), mode);
            }
        }
        lo[i] = l;
        hi[i] = u;
    }
    return {Shape{static_cast<std::size_t>(rows)}, lo, hi};
}

SoundScalar apply_monotone(Monotone f, SoundScalar a, Rounding mode)
{
    return {eval_down(f, a.lo, mode), eval_up(f, a.hi, mode)};
}

IntervalTensor apply_monotone(Monotone f, const IntervalTensor& a, Rounding mode)
{
    IntervalTensor out = a;
    for (std::size_t i = 0; i < a.size(); ++i)
        out.set(i, apply_monotone(f, a.at(i), mode));
    return out;
}

IntervalTensor softmax(const IntervalTensor& a, Rounding mode)
{
    // s_i = 1 / (1 + sum_{j != i} exp(x_j - x_i)), decreasing in every x_j, increasing in x_i.
    IntervalTensor out = a;
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) {
        double sum_hi = 0.0;
        double sum_lo = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i)
                continue;
            const double d_hi = rounding::sub_up(a.upper(j), a.lower(i), mode);
            const double d_lo = rounding::sub_down(a.lower(j), a.upper(i), mode);
            sum_hi = rounding::add_up(sum_hi, eval_up(Monotone::exp, d_hi, mode), mode);
            sum_lo = rounding::add_down(sum_lo, eval_down(Monotone::exp, d_lo, mode), mode);
        }
        double lo = std::isinf(sum_hi) ? 0.0 : rounding::down(1.0 / rounding::add_up(1.0, sum_hi, mode), mode);
        double hi = rounding::up(1.0 / rounding::add_down(1.0, sum_lo, mode), mode);
        out.set(i, {std::max(lo, 0.0), std::min(hi, 1.0)});
    }
    return out;
}

} // namespace box

} // namespace zonoreach

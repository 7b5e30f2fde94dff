#ifndef ZONOREACH_INTERVAL_HPP
#define ZONOREACH_INTERVAL_HPP

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "zonoreach/rounding.hpp"

namespace zonoreach
{

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Per-element lower/upper bounds over a flattened row-major tensor. This is
/// the Box domain. Elements may be unbounded (+-inf); an element with
/// lower > upper marks an empty set, produced only by intersect().
class IntervalTensor
{
public:
    IntervalTensor() = default;
    IntervalTensor(Shape shape, Eigen::VectorXd lower, Eigen::VectorXd upper);
    IntervalTensor(Eigen::VectorXd lower, Eigen::VectorXd upper);

    static IntervalTensor point(const Eigen::VectorXd& x);
    static IntervalTensor point(Shape shape, const Eigen::VectorXd& x);
    static IntervalTensor top(Shape shape);

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return static_cast<std::size_t>(lower_.size()); }
    const Eigen::VectorXd& lower() const { return lower_; }
    const Eigen::VectorXd& upper() const { return upper_; }
    double lower(std::size_t i) const { return lower_[static_cast<Eigen::Index>(i)]; }
    double upper(std::size_t i) const { return upper_[static_cast<Eigen::Index>(i)]; }
    SoundScalar at(std::size_t i) const { return {lower(i), upper(i)}; }
    Eigen::VectorXd width() const { return upper_ - lower_; }
    Eigen::VectorXd midpoint() const;

    void set(std::size_t i, SoundScalar v);
    IntervalTensor reshaped(Shape shape) const;

    bool is_finite() const;
    bool is_empty() const;
    bool contains(const Eigen::VectorXd& x, double tolerance = 0.0) const;
    bool contains(const IntervalTensor& other) const;

    /// Elementwise intersection; may be empty.
    IntervalTensor intersect(const IntervalTensor& other) const;
    /// Smallest box containing both.
    IntervalTensor hull(const IntervalTensor& other) const;

private:
    Shape shape_;
    Eigen::VectorXd lower_;
    Eigen::VectorXd upper_;
};

/// Monotone scalar functions with an endpoint abstraction.
enum class Monotone
{
    relu,
    sigmoid,
    tanh,
    exp,
    floor,
    ceil,
    round
};

double apply(Monotone f, double x);
double sigmoid(double x);

namespace box
{

IntervalTensor add(const IntervalTensor& a, const IntervalTensor& b, Rounding mode);
IntervalTensor sub(const IntervalTensor& a, const IntervalTensor& b, Rounding mode);
IntervalTensor neg(const IntervalTensor& a);
IntervalTensor scale(double s, const IntervalTensor& a, Rounding mode);
IntervalTensor mul(const IntervalTensor& a, const IntervalTensor& b, Rounding mode);
/// 1/[c,d]; an element with c <= 0 <= d becomes [-inf, inf].
IntervalTensor inv(const IntervalTensor& a, Rounding mode);

/// W x computed as W+ x + W- x.
IntervalTensor matmul(const Eigen::MatrixXd& weights, const IntervalTensor& x, Rounding mode);
IntervalTensor affine(const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias,
                      const IntervalTensor& x, Rounding mode);

IntervalTensor apply_monotone(Monotone f, const IntervalTensor& a, Rounding mode);
SoundScalar apply_monotone(Monotone f, SoundScalar a, Rounding mode);

/// Interval enclosure of softmax over the whole (flattened) tensor.
IntervalTensor softmax(const IntervalTensor& a, Rounding mode);

} // namespace box

} // namespace zonoreach

#endif

#ifndef ZONOREACH_ROUNDING_HPP
#define ZONOREACH_ROUNDING_HPP

#include <cmath>
#include <cstddef>
#include <limits>

namespace zonoreach
{

/// Sound mode encloses the exact real result of every primitive; fast mode
/// keeps the round-to-nearest value.
enum class Rounding
{
    sound,
    fast
};

namespace rounding
{

inline constexpr double inf = std::numeric_limits<double>::infinity();

/// libm transcendentals are faithful to a few ulps; bounds through them are
/// widened by this many steps.
inline constexpr int transcendental_ulps = 4;

inline double down(double x)
{
    return std::nextafter(x, -inf);
}

inline double up(double x)
{
    return std::nextafter(x, inf);
}

inline double down(double x, int steps)
{
    for (int i = 0; i < steps; ++i)
        x = down(x);
    return x;
}

inline double up(double x, int steps)
{
    for (int i = 0; i < steps; ++i)
        x = up(x);
    return x;
}

inline double down(double x, Rounding mode)
{
    return mode == Rounding::sound ? down(x) : x;
}

inline double up(double x, Rounding mode)
{
    return mode == Rounding::sound ? up(x) : x;
}

/// Product under the extended-real convention 0 * inf = 0.
inline double xmul(double a, double b)
{
    if (a == 0.0 || b == 0.0)
        return 0.0;
    return a * b;
}

/// Exact a + b = s + e (Knuth's TwoSum); e is meaningful when s is finite.
inline void two_sum(double a, double b, double& s, double& e)
{
    s = a + b;
    const double bb = s - a;
    e = (a - (s - bb)) + (b - bb);
}

/// Exact a * b = p + e via fma, valid unless the product is near underflow.
inline bool two_product(double a, double b, double& p, double& e)
{
    p = xmul(a, b);
    if (p == 0.0 || !std::isfinite(p) || std::abs(p) < 0x1p-969) {
        e = 0.0;
        return p == 0.0 && (a == 0.0 || b == 0.0);
    }
    e = std::fma(a, b, -p);
    return true;
}

// Round-to-nearest result moved one step only when the exact value lies on
// that side.
inline double directed_sum(double a, double b, bool upward)
{
    double s, e;
    two_sum(a, b, s, e);
    if (!std::isfinite(s) || !std::isfinite(e))
        return upward ? up(s) : down(s);
    if (upward)
        return e > 0.0 ? up(s) : s;
    return e < 0.0 ? down(s) : s;
}

inline double directed_product(double a, double b, bool upward)
{
    if (!std::isfinite(a) || !std::isfinite(b))
        return xmul(a, b);
    double p, e;
    if (!two_product(a, b, p, e))
        return upward ? up(p) : down(p);
    if (upward)
        return e > 0.0 ? up(p) : p;
    return e < 0.0 ? down(p) : p;
}

inline double add_down(double a, double b, Rounding mode) { return mode == Rounding::sound ? directed_sum(a, b, false) : a + b; }
inline double add_up(double a, double b, Rounding mode) { return mode == Rounding::sound ? directed_sum(a, b, true) : a + b; }
inline double sub_down(double a, double b, Rounding mode) { return add_down(a, -b, mode); }
inline double sub_up(double a, double b, Rounding mode) { return add_up(a, -b, mode); }
inline double mul_down(double a, double b, Rounding mode)
{
    return mode == Rounding::sound ? directed_product(a, b, false) : xmul(a, b);
}
inline double mul_up(double a, double b, Rounding mode)
{
    return mode == Rounding::sound ? directed_product(a, b, true) : xmul(a, b);
}

/// Higham's gamma_n = n u / (1 - n u): relative error bound of an n-term
/// floating dot product evaluated in any order.
inline double gamma(std::size_t n)
{
    const double u = std::numeric_limits<double>::epsilon() / 2.0;
    const double nu = static_cast<double>(n) * u;
    return up(nu / (1.0 - nu), 2);
}

/// Slack for gradual underflow in n products.
inline double underflow_slack(std::size_t n)
{
    return static_cast<double>(n + 1) * std::numeric_limits<double>::denorm_min();
}

} // namespace rounding

/// A closed real interval [lo, hi] stored as doubles.
struct SoundScalar
{
    double lo = 0.0;
    double hi = 0.0;

    static SoundScalar point(double x) { return {x, x}; }
    bool contains(double x) const { return lo <= x && x <= hi; }
    double width() const { return hi - lo; }
    double mid() const { return lo + 0.5 * (hi - lo); }
};

SoundScalar operator-(SoundScalar a);
SoundScalar add(SoundScalar a, SoundScalar b, Rounding mode);
SoundScalar sub(SoundScalar a, SoundScalar b, Rounding mode);
SoundScalar mul(SoundScalar a, SoundScalar b, Rounding mode);
SoundScalar scale(double s, SoundScalar a, Rounding mode);
SoundScalar inv(SoundScalar a, Rounding mode);
SoundScalar abs(SoundScalar a);

} // namespace zonoreach

#endif

#ifndef ZONOREACH_ZONOTOPE_HPP
#define ZONOREACH_ZONOTOPE_HPP

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "zonoreach/interval.hpp"

namespace zonoreach
{

using SymbolId = std::size_t;

/// Where a noise symbol was introduced. Branch-and-bound heuristics read this
/// to map generator mass back to input dimensions and ReLU neurons.
struct SymbolOrigin
{
    enum class Kind
    {
        input,
        relu,
        sigmoid,
        cast,
        reduction,
        fallback,
        hybrid
    };

    Kind kind = Kind::input;
    std::size_t node = 0;
    std::size_t index = 0;
};

/// Per-analysis allocator of globally indexed noise symbols. Ids increase
/// monotonically, so appending fresh symbols keeps a zonotope's id list sorted.
class SymbolPool
{
public:
    SymbolId fresh(SymbolOrigin origin);
    std::size_t size() const { return origins_.size(); }
    const SymbolOrigin& origin(SymbolId id) const { return origins_.at(id); }

private:
    std::vector<SymbolOrigin> origins_;
};

/// Sorted union of two sorted symbol lists.
std::vector<SymbolId> merge_symbols(std::span<const SymbolId> a, std::span<const SymbolId> b);

/// Columns of a generator matrix laid out over `from`, re-laid over `to`
/// (a sorted superset of `from`); missing columns are zero.
Eigen::MatrixXd expand_columns(const Eigen::MatrixXd& m, std::span<const SymbolId> from,
                               std::span<const SymbolId> to);

/// x_i = center_i + sum_j generators_ij eps_j + e_i with eps in [-1,1]^m and
/// |e_i| <= error_i. The error term absorbs floating-point rounding in sound
/// mode and stays zero in fast mode.
class Zonotope
{
public:
    Zonotope() = default;
    Zonotope(Eigen::VectorXd center, Eigen::MatrixXd generators, std::vector<SymbolId> symbols);
    Zonotope(Eigen::VectorXd center, Eigen::MatrixXd generators, std::vector<SymbolId> symbols,
             Eigen::VectorXd error);

    /// One fresh symbol per dimension: x_i = (u_i - l_i)/2 eps_i + (u_i + l_i)/2.
    static Zonotope from_box(const IntervalTensor& box, SymbolPool& pool,
                             SymbolOrigin::Kind kind = SymbolOrigin::Kind::input, std::size_t node = 0,
                             Rounding mode = Rounding::sound);
    static Zonotope constant(const Eigen::VectorXd& value);

    std::size_t dim() const { return static_cast<std::size_t>(center_.size()); }
    std::size_t noise_count() const { return symbols_.size(); }
    const Eigen::VectorXd& center() const { return center_; }
    const Eigen::MatrixXd& generators() const { return generators_; }
    const std::vector<SymbolId>& symbols() const { return symbols_; }
    const Eigen::VectorXd& error() const { return error_; }

    IntervalTensor concretize(Rounding mode) const;

    /// center + G eps, ignoring the error term.
    Eigen::VectorXd evaluate(const Eigen::VectorXd& eps) const;

    /// Same set, generators laid out over a sorted superset of symbols().
    Zonotope over_symbols(std::span<const SymbolId> symbols) const;
    Zonotope select(std::span<const std::size_t> rows) const;

    /// Column L1 norm of the generator attached to `id` (0 if absent).
    double symbol_mass(SymbolId id) const;
    /// Drops generator columns that are identically zero.
    Zonotope pruned() const;

private:
    Eigen::VectorXd center_;
    Eigen::MatrixXd generators_;
    std::vector<SymbolId> symbols_;
    Eigen::VectorXd error_;
};

/// Forced ReLU phase for branch-and-bound sign splits.
enum class Phase
{
    free,
    inactive,
    active
};

enum class CastMode
{
    round,
    floor,
    ceil
};

/// Linear relaxation y in slope*x + offset + [-radius, radius] of sigmoid on [l, u].
struct SigmoidRelaxation
{
    double slope = 0.0;
    double offset = 0.0;
    double radius = 0.0;
    double x_plus = 0.0;
    double x_minus = 0.0;
};

SigmoidRelaxation sigmoid_relaxation(double l, double u, Rounding mode);

/// DeepZ relaxation of ReLU on an unstable [l, u]: y in slope*x + [0, offset].
struct ReluRelaxation
{
    double slope = 0.0;
    double offset = 0.0;
};

ReluRelaxation relu_relaxation(double l, double u, Rounding mode);

namespace zono
{

Zonotope affine(const Zonotope& z, const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias,
                Rounding mode);
Zonotope add(const Zonotope& a, const Zonotope& b, Rounding mode);
Zonotope add_constant(const Zonotope& a, const Eigen::VectorXd& c, Rounding mode);
Zonotope stack(std::span<const Zonotope> parts);

/// `bounds` must enclose concretize(z). Adds one symbol per free unstable
/// dimension; forced phases are applied as given.
Zonotope relu(const Zonotope& z, const IntervalTensor& bounds, SymbolPool& pool, Rounding mode,
              std::size_t node = 0, std::span<const Phase> phases = {});
Zonotope sigmoid(const Zonotope& z, const IntervalTensor& bounds, SymbolPool& pool, Rounding mode,
                 std::size_t node = 0);
/// tanh(x) = 2 sigmoid(2x) - 1.
Zonotope tanh(const Zonotope& z, const IntervalTensor& bounds, SymbolPool& pool, Rounding mode,
              std::size_t node = 0);
Zonotope cast(const Zonotope& z, const IntervalTensor& bounds, CastMode cast_mode, SymbolPool& pool,
              Rounding mode, std::size_t node = 0);

/// Merges the lowest-L1 generators into one fresh box symbol per dimension
/// so that at most max_symbols columns remain. Requires max_symbols >= dim.
Zonotope reduce(const Zonotope& z, std::size_t max_symbols, SymbolPool& pool, Rounding mode);

} // namespace zono

} // namespace zonoreach

#endif

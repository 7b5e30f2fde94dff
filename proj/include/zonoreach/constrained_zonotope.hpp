#ifndef ZONOREACH_CONSTRAINED_ZONOTOPE_HPP
#define ZONOREACH_CONSTRAINED_ZONOTOPE_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "zonoreach/zonotope.hpp"

namespace zonoreach
{

/// How the Lagrangian dual max_{lambda >= 0} D(lambda) is optimized. Any
/// lambda >= 0 gives a valid bound; the solver only affects tightness.
struct DualOptions
{
    enum class Solver
    {
        /// Projected supergradient ascent with Adam step adaptation.
        gradient,
        /// Dual LP solved by simplex; the multipliers are then re-evaluated soundly.
        simplex
    };

    Solver solver = Solver::gradient;
    std::size_t iterations = 100;
    double step = 0.1;
};

/// A zonotope whose noise symbols also satisfy A eps + b >= 0. A and b are
/// shared across all dimensions and laid out over body().symbols().
class ConstrainedZonotope
{
public:
    ConstrainedZonotope() = default;
    explicit ConstrainedZonotope(Zonotope body);
    ConstrainedZonotope(Zonotope body, Eigen::MatrixXd a, Eigen::VectorXd b, std::vector<std::size_t> ids,
                        bool empty = false);

    const Zonotope& body() const { return body_; }
    std::size_t dim() const { return body_.dim(); }
    const std::vector<SymbolId>& symbols() const { return body_.symbols(); }
    const Eigen::MatrixXd& constraint_matrix() const { return a_; }
    const Eigen::VectorXd& constraint_offset() const { return b_; }
    /// Per-analysis identity of each constraint row, used to merge branches.
    const std::vector<std::size_t>& constraint_ids() const { return ids_; }
    std::size_t constraint_count() const { return static_cast<std::size_t>(b_.size()); }
    /// Set when emptiness was established (e.g. contradictory splits).
    bool known_empty() const { return empty_; }

    /// Replaces the body; constraints are re-laid over the union of symbols.
    ConstrainedZonotope with_body(Zonotope body) const;
    /// Appends rows a eps + b >= 0 laid out over `symbols` (a subset of the
    /// union with the current symbols).
    ConstrainedZonotope with_constraints(const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                                         std::span<const SymbolId> symbols, std::span<const std::size_t> ids) const;
    ConstrainedZonotope select(std::span<const std::size_t> rows) const;
    ConstrainedZonotope marked_empty() const;

    bool feasible(const Eigen::VectorXd& eps, double tolerance = 0.0) const;

private:
    Zonotope body_;
    Eigen::MatrixXd a_;
    Eigen::VectorXd b_;
    std::vector<std::size_t> ids_;
    bool empty_ = false;
};

/// Hands out constraint ids; one per analysis, like SymbolPool.
class ConstraintCounter
{
public:
    std::size_t next() { return next_++; }

private:
    std::size_t next_ = 0;
};

struct Concretization
{
    IntervalTensor bounds;
    bool empty = false;
};

/// Dual value D(lambda) = -sum_j |alpha_j - (A^T lambda)_j| - lambda.b + beta.
double dual_value(const Eigen::VectorXd& alpha, double beta, const Eigen::MatrixXd& a, const Eigen::VectorXd& b,
                  const Eigen::VectorXd& lambda);
/// Lower bound on D(lambda) under outward rounding; lambda is clamped to >= 0.
double dual_value_lower(const Eigen::VectorXd& alpha, double beta, const Eigen::MatrixXd& a,
                        const Eigen::VectorXd& b, const Eigen::VectorXd& lambda, Rounding mode);

/// Lower bound of alpha.eps + beta over the feasible noise region, and the
/// multipliers that produced it.
struct DualBound
{
    double value = 0.0;
    Eigen::VectorXd lambda;
};

DualBound dual_lower_bound(const Eigen::VectorXd& alpha, double beta, const Eigen::MatrixXd& a,
                           const Eigen::VectorXd& b, const DualOptions& options, Rounding mode);

/// Exact optimum over the feasible region (simplex on the primal): the
/// minimizing noise vector, or nullopt if the region is empty.
std::optional<Eigen::VectorXd> primal_minimizer(const Eigen::VectorXd& alpha, const Eigen::MatrixXd& a,
                                                const Eigen::VectorXd& b);

/// True when a Farkas certificate shows {eps in [-1,1]^m : A eps + b >= 0} is
/// empty; the certificate is checked under outward rounding.
bool certify_infeasible(const Eigen::MatrixXd& a, const Eigen::VectorXd& b);

namespace czono
{

ConstrainedZonotope affine(const ConstrainedZonotope& z, const Eigen::MatrixXd& weights,
                           const Eigen::VectorXd& bias, Rounding mode);
ConstrainedZonotope add(const ConstrainedZonotope& a, const ConstrainedZonotope& b, Rounding mode);
ConstrainedZonotope add_constant(const ConstrainedZonotope& a, const Eigen::VectorXd& c, Rounding mode);
ConstrainedZonotope stack(std::span<const ConstrainedZonotope> parts);

/// ReLU with the zonotope relaxation plus y >= x and y >= 0 for every free
/// unstable neuron (2p constraints); forced phases become split constraints.
ConstrainedZonotope relu(const ConstrainedZonotope& z, const IntervalTensor& bounds, SymbolPool& pool,
                         ConstraintCounter& counter, Rounding mode, std::size_t node = 0,
                         std::span<const Phase> phases = {});

/// Fixes the sign of `neuron` in `post` (the layer output computed from
/// `pre`): inactive -> output 0 and pre <= 0; active -> output = pre and pre >= 0.
ConstrainedZonotope add_split_constraint(const ConstrainedZonotope& post, const ConstrainedZonotope& pre,
                                         std::size_t neuron, Phase sign, ConstraintCounter& counter,
                                         Rounding mode);

/// Per-dimension bounds via the Lagrangian dual, intersected with the
/// unconstrained concretization. Emptiness is flagged when a lower bound
/// exceeds its upper bound.
Concretization concretize(const ConstrainedZonotope& z, const DualOptions& options, Rounding mode);

/// Bounds of a subset of dimensions (others are left at the unconstrained bounds).
Concretization concretize(const ConstrainedZonotope& z, const DualOptions& options, Rounding mode,
                          std::span<const std::size_t> dims);

} // namespace czono

} // namespace zonoreach

#endif

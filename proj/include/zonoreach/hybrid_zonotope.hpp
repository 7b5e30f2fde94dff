#ifndef ZONOREACH_HYBRID_ZONOTOPE_HPP
#define ZONOREACH_HYBRID_ZONOTOPE_HPP

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "zonoreach/constrained_zonotope.hpp"

namespace zonoreach
{

/// Union over binary symbols eps_b in {-1,1}^{m_b} of the sets
/// {center + G_c eps_c + G_b eps_b : eps_c in [-1,1]^{m_c}, |E [eps_c; eps_b] + c| <= tol}.
///
/// Continuous and binary symbols share one generator matrix (the body) and
/// one id space; binary() lists the ids that range over {-1,1}. The equality
/// tolerance absorbs rounding of the incoming affine forms in sound mode and
/// is zero in fast mode.
class HybridZonotope
{
public:
    HybridZonotope() = default;
    explicit HybridZonotope(Zonotope body);
    HybridZonotope(Zonotope body, std::vector<SymbolId> binary, Eigen::MatrixXd eq, Eigen::VectorXd eq_offset,
                   Eigen::VectorXd eq_tolerance, std::vector<std::size_t> ids);

    const Zonotope& body() const { return body_; }
    std::size_t dim() const { return body_.dim(); }
    const std::vector<SymbolId>& symbols() const { return body_.symbols(); }
    const std::vector<SymbolId>& binary() const { return binary_; }
    const Eigen::MatrixXd& eq_matrix() const { return eq_; }
    const Eigen::VectorXd& eq_offset() const { return eq_offset_; }
    const Eigen::VectorXd& eq_tolerance() const { return eq_tol_; }
    const std::vector<std::size_t>& constraint_ids() const { return ids_; }

    std::size_t continuous_count() const { return symbols().size() - binary_.size(); }
    std::size_t binary_count() const { return binary_.size(); }
    std::size_t constraint_count() const { return static_cast<std::size_t>(eq_offset_.size()); }

    /// Generator columns of the continuous (resp. binary) symbols.
    Eigen::MatrixXd continuous_generators() const;
    Eigen::MatrixXd binary_generators() const;

    HybridZonotope with_body(Zonotope body) const;
    /// Appends equality rows laid out over `symbols`.
    HybridZonotope with_constraints(const Eigen::MatrixXd& eq, const Eigen::VectorXd& offset,
                                    const Eigen::VectorXd& tolerance, std::span<const SymbolId> symbols,
                                    std::span<const SymbolId> new_binary, std::span<const std::size_t> ids) const;
    HybridZonotope select(std::span<const std::size_t> rows) const;

    /// Fixes every binary symbol (values in {-1,1}, ordered like binary())
    /// and returns the corresponding constrained zonotope, with each equality
    /// turned into two inequalities.
    ConstrainedZonotope branch(std::span<const double> values, Rounding mode) const;

private:
    Zonotope body_;
    std::vector<SymbolId> binary_;
    Eigen::MatrixXd eq_;
    Eigen::VectorXd eq_offset_;
    Eigen::VectorXd eq_tol_;
    std::vector<std::size_t> ids_;
};

/// Symbols and constraints introduced by one exact ReLU layer.
struct HybridBudget
{
    std::size_t continuous = 0;
    std::size_t binary = 0;
    std::size_t constraints = 0;
};

namespace hzono
{

inline constexpr std::size_t default_binary_limit = 16;

HybridZonotope affine(const HybridZonotope& h, const Eigen::MatrixXd& weights, const Eigen::VectorXd& bias,
                      Rounding mode);
HybridZonotope add(const HybridZonotope& a, const HybridZonotope& b, Rounding mode);
HybridZonotope add_constant(const HybridZonotope& h, const Eigen::VectorXd& c, Rounding mode);
HybridZonotope stack(std::span<const HybridZonotope> parts);

/// Exact ReLU image. Each unstable dimension gets four continuous symbols,
/// one binary symbol and three equality constraints. Throws CapacityError if
/// the binary count would exceed `binary_limit`.
HybridZonotope relu_exact(const HybridZonotope& h, const IntervalTensor& bounds, SymbolPool& pool,
                          ConstraintCounter& counter, Rounding mode, std::size_t node = 0,
                          std::size_t binary_limit = default_binary_limit, HybridBudget* budget = nullptr);

/// Bounds as the union over all binary assignments of the constrained
/// zonotope bounds (simplex dual). Infeasible assignments are skipped; the
/// result is flagged empty when every assignment is infeasible.
Concretization concretize(const HybridZonotope& h, Rounding mode, std::size_t binary_limit = default_binary_limit);
Concretization concretize(const HybridZonotope& h, Rounding mode, std::span<const std::size_t> dims,
                          std::size_t binary_limit = default_binary_limit);

} // namespace hzono

} // namespace zonoreach

#endif

#ifndef ZONOREACH_BAB_HPP
#define ZONOREACH_BAB_HPP

#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "zonoreach/analysis.hpp"

namespace zonoreach
{

struct BabConfig
{
    /// Parts per input split.
    std::size_t k = 2;
    /// Worker threads; 1 keeps the exact depth-first order.
    std::size_t jobs = 1;
    /// Input boxes narrower than this fraction of the original width are not split again.
    double min_width_fraction = 1e-9;
    /// 0 means no limit.
    std::size_t max_subproblems = 0;
};

/// Dimension with the largest alpha_i * width_i (bab_input passes widths as
/// fractions of the root box); ties go to the lowest
/// index, zero-width dimensions are never chosen.
std::optional<std::size_t> choose_dim(const Eigen::VectorXd& alpha, const Eigen::VectorXd& widths);

/// Area of the relaxation triangle removed by fixing one sign: |l| u / (2 (u - l)).
double relu_fix_area(double lower, double upper);

/// Unstable neuron with the largest (delta+ + delta-) * mass; ties go to the
/// first in (node, index) order.
std::optional<std::size_t> choose_relu(const std::vector<ReluNeuron>& candidates);

/// Input bisection: depth-first worklist of boxes, each analysed and split
/// into k equal parts along choose_dim when undecided.
Verdict bab_input(const Analyzer& analyzer, const BabConfig& config, Deadline deadline);
Verdict bab_input(const Analyzer& analyzer, const IntervalTensor& box, const BabConfig& config, Deadline deadline);

/// ReLU sign splitting over the constrained zonotope domain. Subproblems
/// without unsplit unstable neurons are decided exactly (LP witness or a
/// Farkas certificate per violation case).
Verdict bab_relu(const Analyzer& analyzer, const BabConfig& config, Deadline deadline);
Verdict bab_relu(const Analyzer& analyzer, const IntervalTensor& box, const BabConfig& config, Deadline deadline);

} // namespace zonoreach

#endif

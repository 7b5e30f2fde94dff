#ifndef ZONOREACH_LP_HPP
#define ZONOREACH_LP_HPP

#include <Eigen/Dense>

namespace zonoreach::lp
{

enum class Status
{
    optimal,
    infeasible,
    unbounded
};

/// minimize cost . x  s.t.  ub x <= ub_rhs,  eq x = eq_rhs,  x >= 0.
/// Empty matrices mean "no constraints of that kind".
struct Problem
{
    Eigen::VectorXd cost;
    Eigen::MatrixXd ub;
    Eigen::VectorXd ub_rhs;
    Eigen::MatrixXd eq;
    Eigen::VectorXd eq_rhs;
};

struct Solution
{
    Status status = Status::infeasible;
    Eigen::VectorXd x;
    double objective = 0.0;
};

/// Dense two-phase tableau simplex with Bland's rule. Floating point, not
/// rigorous: callers that need guarantees re-check the returned point.
Solution minimize(const Problem& problem);

} // namespace zonoreach::lp

#endif

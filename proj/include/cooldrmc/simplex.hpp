// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#ifndef COOLDRMC_SIMPLEX_HPP_
#define COOLDRMC_SIMPLEX_HPP_

#include "cooldrmc/linalg.hpp"

namespace cooldrmc {

/**
 * @brief Exact solver for small dense linear programs.
 *
 * Two-phase tableau simplex with Bland's rule, intended for the tiny programs
 * that appear inside support-function evaluation and weight-ratio bounds
 * (a handful of variables and rows). Deterministic and cycling-free.
 */
class SmallLp {
public:
  enum class Status { Optimal, Infeasible, Unbounded };

  struct Result {
    Status status = Status::Infeasible;
    double value = 0.0;  ///< optimal objective (maximization)
    Vec x;               ///< maximizer, valid when status == Optimal
  };

  /**
   * Maximizes cᵀx subject to A_ub·x ≤ b_ub and A_eq·x = b_eq over free x.
   * Either constraint block may be empty (0 rows).
   */
  static Result maximize(const Vec& c, const Mat& a_ub, const Vec& b_ub,
                         const Mat& a_eq, const Vec& b_eq);

  /// Convenience overload without equality rows.
  static Result maximize(const Vec& c, const Mat& a_ub, const Vec& b_ub) {
    return maximize(c, a_ub, b_ub, Mat(0, c.size()), Vec(0));
  }
};

}  // namespace cooldrmc

#endif  // COOLDRMC_SIMPLEX_HPP_

// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#ifndef COOLDRMC_CONIC_HPP_
#define COOLDRMC_CONIC_HPP_

#include <string>
#include <utility>
#include <vector>

#include "cooldrmc/linalg.hpp"

namespace cooldrmc::conic {

/// Raised when a program's pieces disagree on dimensions.
class MalformedProgram : public Error {
public:
  using Error::Error;
};

/**
 * @brief Symmetric-matrix-valued affine map constrained to the PSD cone.
 *
 * The block value is constant + sum_j x_{terms[j].first} * terms[j].second,
 * and the constraint is that this matrix is positive semidefinite.
 */
struct PsdBlock {
  int dim = 0;
  Mat constant;
  std::vector<std::pair<int, Mat>> terms;
};

/**
 * @brief Conic program over one decision vector x.
 *
 *   minimize    objective.x  (+ 0.5 x' quadratic x when present)
 *   subject to  eq_lhs x = eq_rhs
 *               ineq_lhs x <= ineq_rhs
 *               x_j >= 0 for j in nonneg
 *               every PsdBlock value is PSD
 *
 * Programs are immutable once assembled; solves never mutate them.
 */
struct ConicProgram {
  int num_vars = 0;
  Vec objective;
  /// Optional quadratic objective term (0x0 when absent).
  Mat quadratic;
  Mat eq_lhs;
  Vec eq_rhs;
  Mat ineq_lhs;
  Vec ineq_rhs;
  std::vector<int> nonneg;
  std::vector<PsdBlock> psd;
  /// Optional strictly feasible starting point (size 0 when absent);
  /// lets the solver skip its feasibility phase.
  Vec interior_hint;

  /// Throws MalformedProgram when dimensions are inconsistent.
  void validate() const;
};

enum class SolveStatus { Optimal, Infeasible, MaxIter, NumericalFailure };

/// Outcome of one solve; when Optimal the max violation is within tolerance.
struct SolveReport {
  SolveStatus status = SolveStatus::NumericalFailure;
  double objective = 0.0;
  Vec x;
  double max_violation = 0.0;
  int iterations = 0;
  double wall_ms = 0.0;
};

/**
 * @brief Solves the program to relative gap <= tol.
 *
 * Programs without PSD blocks route to a dense predictor-corrector
 * interior-point method; programs with PSD blocks use a log-det barrier
 * path-following method with a feasibility phase (skipped when a valid
 * interior hint is supplied). Deterministic for fixed inputs; never throws
 * for solvable/unsolvable instances, only for malformed programs.
 */
SolveReport solve(const ConicProgram& prog, double tol = 1e-8);

// ---------------------------------------------------------------------------
// Horizon tracking QP
// ---------------------------------------------------------------------------

/// One separating-plane row: normal' y(step) + rhs <= 0, where y is the
/// plant output and rhs already folds the plane bias, the body support
/// value, and the safety margin.
struct MpcHyperplaneRow {
  int step = 0;
  Vec normal;
  double rhs = 0.0;
};

/// One terminal-set row: normal' x(K) <= bound.
struct MpcTerminalRow {
  Vec normal;
  double bound = 0.0;
};

/**
 * @brief Inputs of the finite-horizon tracking problem.
 *
 * Dynamics x(k+1) = A x(k) + B u(k) with output y(k) = C x(k). The cost is
 * sum_{k=0}^{K-1} (|x(k)-x_ref[k]|_Q^2 + |u(k)-u_ref[k]|_R^2) plus the
 * terminal |x(K)-x_ref[K]|_P^2. Box entries may be infinite to drop a side.
 */
struct MpcQpInputs {
  Mat a;            ///< State transition, n x n.
  Mat b;            ///< Input map, n x m.
  Mat c;            ///< Output map, p x n.
  Vec x0;           ///< Measured state the horizon starts from.
  int horizon = 0;  ///< Step count K >= 1; decisions are u(0..K-1).
  std::vector<Vec> x_ref;  ///< State references, K + 1 entries.
  std::vector<Vec> u_ref;  ///< Input references, K entries.
  Mat q;  ///< Stage state weight, PSD n x n.
  Mat r;  ///< Stage input weight, PSD m x m.
  Mat p;  ///< Terminal state weight, PSD n x n.
  Vec x_lo;  ///< State box lower corner, applied at k = 1..K.
  Vec x_hi;  ///< State box upper corner, applied at k = 1..K.
  Vec u_lo;  ///< Input box lower corner, applied at k = 0..K-1.
  Vec u_hi;  ///< Input box upper corner, applied at k = 0..K-1.
  std::vector<MpcHyperplaneRow> hyperplanes;  ///< Steps within 1..K.
  std::vector<MpcTerminalRow> terminal;       ///< Rows on x(K).
};

/**
 * @brief Condenses the tracking problem into a dense QP over the inputs.
 *
 * States are eliminated through the dynamics, so the decision vector is the
 * stacked input sequence u(0..K-1) and every box, separating-plane, and
 * terminal row becomes an inequality row on it. The program objective drops
 * the input-independent part of the cost; when constant_cost is non-null it
 * receives that remainder, so the full cost of a solution x is
 * report.objective + *constant_cost. Throws MalformedProgram on dimension
 * mismatches or indefinite weights.
 */
ConicProgram assemble_mpc_qp(const MpcQpInputs& qp,
                             double* constant_cost = nullptr);

/// Rolls the dynamics forward under a stacked input sequence; returns
/// x(0..K), horizon + 1 states.
std::vector<Vec> rollout_states(const MpcQpInputs& qp, const Vec& inputs);

/// Largest constraint violation of x across all constraint families.
double max_violation(const ConicProgram& prog, const Vec& x);

/// Serializes the full program losslessly to JSON text.
std::string to_json(const ConicProgram& prog);

/// Parses a program serialized by to_json; exact round trip.
ConicProgram program_from_json(const std::string& text);

const char* status_name(SolveStatus status);

}  // namespace cooldrmc::conic

#endif  // COOLDRMC_CONIC_HPP_

// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#include "cooldrmc/simplex.hpp"

#include <limits>
#include <vector>

namespace cooldrmc {

namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kFeasTol = 1e-9;

/**
 * Dense tableau for min c̃ᵀz s.t. Tz = d, z ≥ 0, with d ≥ 0 maintained by
 * the pivoting. Rows carry the current basis; Bland's rule picks entering
 * and leaving indices so the iteration cannot cycle.
 */
struct Tableau {
  Mat t;                   // m x n constraint body
  Vec d;                   // m rhs, kept nonnegative
  std::vector<int> basis;  // basis[r] = column basic in row r

  bool pivot(int row, int col) {
    const double p = t(row, col);
    if (std::abs(p) < kPivotTol) return false;
    t.row(row) /= p;
    d(row) /= p;
    for (int r = 0; r < t.rows(); ++r) {
      if (r == row) continue;
      const double factor = t(r, col);
      if (factor == 0.0) continue;
      t.row(r) -= factor * t.row(row);
      d(r) -= factor * d(row);
    }
    basis[row] = col;
    return true;
  }

  /// Runs simplex on objective cost; returns false when unbounded.
  bool iterate(Vec& cost, double& value) {
    const int m = static_cast<int>(t.rows());
    const int n = static_cast<int>(t.cols());
    for (int iter = 0; iter < 20000; ++iter) {
      // Reduced costs: cost was kept reduced w.r.t. the basis by pivoting on
      // the full row including the cost row, emulated here by eliminating
      // basic columns explicitly.
      int enter = -1;
      for (int j = 0; j < n; ++j) {
        if (cost(j) < -kPivotTol) {
          enter = j;  // Bland: first improving column
          break;
        }
      }
      if (enter < 0) return true;  // optimal
      int leave = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (int r = 0; r < m; ++r) {
        if (t(r, enter) > kPivotTol) {
          const double ratio = d(r) / t(r, enter);
          if (ratio < best_ratio - kPivotTol ||
              (ratio < best_ratio + kPivotTol &&
               (leave < 0 || basis[r] < basis[leave]))) {
            best_ratio = ratio;
            leave = r;
          }
        }
      }
      if (leave < 0) return false;  // unbounded
      const double cost_factor = cost(enter);
      pivot(leave, enter);
      cost -= cost_factor * t.row(leave).transpose();
      value -= cost_factor * d(leave);
    }
    return true;  // iteration cap: treat as converged at current vertex
  }
};

}  // namespace

SmallLp::Result SmallLp::maximize(const Vec& c, const Mat& a_ub,
                                  const Vec& b_ub, const Mat& a_eq,
                                  const Vec& b_eq) {
  const int n = static_cast<int>(c.size());
  const int m_ub = static_cast<int>(a_ub.rows());
  const int m_eq = static_cast<int>(a_eq.rows());
  const int m = m_ub + m_eq;

  // Standard form: free x split into x = u - v, slacks on inequality rows,
  // artificials on every row for the phase-1 start.
  const int n_uv = 2 * n;
  const int n_slack = m_ub;
  const int n_total = n_uv + n_slack + m;  // artificials last

  Tableau tab;
  tab.t = Mat::Zero(m, n_total);
  tab.d = Vec::Zero(m);
  tab.basis.assign(m, 0);

  for (int r = 0; r < m; ++r) {
    const bool eq_row = r >= m_ub;
    const Vec row = eq_row ? Vec(a_eq.row(r - m_ub)) : Vec(a_ub.row(r));
    double rhs = eq_row ? b_eq(r - m_ub) : b_ub(r);
    double sign = 1.0;
    if (rhs < 0.0) {
      sign = -1.0;
      rhs = -rhs;
    }
    for (int j = 0; j < n; ++j) {
      tab.t(r, j) = sign * row(j);
      tab.t(r, n + j) = -sign * row(j);
    }
    if (!eq_row) tab.t(r, n_uv + r) = sign;  // slack
    tab.t(r, n_uv + n_slack + r) = 1.0;      // artificial
    tab.d(r) = rhs;
    tab.basis[r] = n_uv + n_slack + r;
  }

  // Phase 1: minimize the artificial sum.
  Vec cost1 = Vec::Zero(n_total);
  cost1.tail(m).setOnes();
  double value1 = 0.0;
  for (int r = 0; r < m; ++r) {  // reduce w.r.t. initial artificial basis
    cost1 -= tab.t.row(r).transpose();
    value1 -= tab.d(r);
  }
  // value1 tracks -(artificial sum); feasible iff it returns to ~0.
  if (!tab.iterate(cost1, value1)) return {Status::Infeasible, 0.0, Vec()};
  if (-value1 > kFeasTol) return {Status::Infeasible, 0.0, Vec()};

  // Drive any artificial still basic out of the basis (degenerate rows).
  for (int r = 0; r < m; ++r) {
    if (tab.basis[r] >= n_uv + n_slack) {
      int col = -1;
      for (int j = 0; j < n_uv + n_slack; ++j) {
        if (std::abs(tab.t(r, j)) > kPivotTol) {
          col = j;
          break;
        }
      }
      if (col >= 0) tab.pivot(r, col);
    }
  }

  // Phase 2 on the original objective (min -cᵀx form), artificials frozen.
  Vec cost2 = Vec::Zero(n_total);
  for (int j = 0; j < n; ++j) {
    cost2(j) = -c(j);
    cost2(n + j) = c(j);
  }
  cost2.tail(m).setConstant(1e30);  // keep artificials out
  double value2 = 0.0;
  for (int r = 0; r < m; ++r) {  // reduce w.r.t. current basis
    const double cb = cost2(tab.basis[r]);
    if (cb != 0.0) {
      cost2 -= cb * tab.t.row(r).transpose();
      value2 -= cb * tab.d(r);
    }
  }
  if (!tab.iterate(cost2, value2)) return {Status::Unbounded, 0.0, Vec()};

  Vec z = Vec::Zero(n_total);
  for (int r = 0; r < m; ++r) z(tab.basis[r]) = tab.d(r);
  Result res;
  res.status = Status::Optimal;
  res.x = z.head(n) - z.segment(n, n);
  res.value = c.dot(res.x);
  return res;
}

}  // namespace cooldrmc

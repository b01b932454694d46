// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#include <cmath>
#include <utility>
#include <vector>

#include "cooldrmc/conic.hpp"

namespace cooldrmc::conic {

namespace {

constexpr double kSymTol = 1e-9;
constexpr double kPsdTol = 1e-9;

void require(bool ok, const char* msg) {
  if (!ok) throw MalformedProgram(msg);
}

/// Checks size, finiteness, symmetry, and positive semidefiniteness, and
/// returns the exactly symmetric copy used in assembly.
Mat checked_weight(const Mat& w, int dim, const char* msg) {
  require(w.rows() == dim && w.cols() == dim && w.allFinite(), msg);
  require((w - w.transpose()).cwiseAbs().maxCoeff() <=
              kSymTol * (1.0 + w.cwiseAbs().maxCoeff()),
          msg);
  Mat sym = 0.5 * (w + w.transpose());
  require(linalg::min_eigenvalue(sym) >= -kPsdTol, msg);
  return sym;
}

/// Box corners may carry infinities to drop a side, but never NaNs.
void check_box(const Vec& lo, const Vec& hi, int dim, const char* msg) {
  require(lo.size() == dim && hi.size() == dim, msg);
  for (int i = 0; i < dim; ++i) {
    require(!std::isnan(lo[i]) && !std::isnan(hi[i]), msg);
  }
}

struct Row {
  Vec lhs;
  double rhs = 0.0;
};

}  // namespace

ConicProgram assemble_mpc_qp(const MpcQpInputs& qp, double* constant_cost) {
  const int n = static_cast<int>(qp.a.rows());
  const int m = static_cast<int>(qp.b.cols());
  const int p = static_cast<int>(qp.c.rows());
  const int horizon = qp.horizon;

  require(horizon >= 1, "mpc qp: horizon must be at least 1");
  require(n >= 1 && qp.a.cols() == n && qp.a.allFinite(),
          "mpc qp: state transition must be square and finite");
  require(m >= 1 && qp.b.rows() == n && qp.b.allFinite(),
          "mpc qp: input map rows must match the state dimension");
  require(p >= 1 && qp.c.cols() == n && qp.c.allFinite(),
          "mpc qp: output map columns must match the state dimension");
  require(qp.x0.size() == n && qp.x0.allFinite(),
          "mpc qp: initial state size mismatch");
  require(static_cast<int>(qp.x_ref.size()) == horizon + 1,
          "mpc qp: state reference must cover steps 0..K");
  require(static_cast<int>(qp.u_ref.size()) == horizon,
          "mpc qp: input reference must cover steps 0..K-1");
  for (const Vec& v : qp.x_ref) {
    require(v.size() == n && v.allFinite(),
            "mpc qp: state reference entry size mismatch");
  }
  for (const Vec& v : qp.u_ref) {
    require(v.size() == m && v.allFinite(),
            "mpc qp: input reference entry size mismatch");
  }
  const Mat q = checked_weight(qp.q, n, "mpc qp: stage state weight invalid");
  const Mat r = checked_weight(qp.r, m, "mpc qp: stage input weight invalid");
  const Mat pw = checked_weight(qp.p, n, "mpc qp: terminal weight invalid");
  check_box(qp.x_lo, qp.x_hi, n, "mpc qp: state box invalid");
  check_box(qp.u_lo, qp.u_hi, m, "mpc qp: input box invalid");
  for (const MpcHyperplaneRow& hp : qp.hyperplanes) {
    require(hp.step >= 1 && hp.step <= horizon,
            "mpc qp: hyperplane step outside 1..K");
    require(hp.normal.size() == p && hp.normal.allFinite() &&
                std::isfinite(hp.rhs),
            "mpc qp: hyperplane row size mismatch");
  }
  for (const MpcTerminalRow& row : qp.terminal) {
    require(row.normal.size() == n && row.normal.allFinite() &&
                std::isfinite(row.bound),
            "mpc qp: terminal row size mismatch");
  }

  // Prediction operators: x(k) = apow[k] x0 + sum_j gmat(k,j) u(j).
  std::vector<Mat> apow(horizon + 1);
  apow[0] = Mat::Identity(n, n);
  for (int k = 1; k <= horizon; ++k) apow[k] = qp.a * apow[k - 1];
  Mat gmat = Mat::Zero(horizon * n, horizon * m);
  for (int k = 1; k <= horizon; ++k) {
    for (int j = 0; j < k; ++j) {
      gmat.block((k - 1) * n, j * m, n, m) = apow[k - 1 - j] * qp.b;
    }
  }

  // Stacked tracking error of the input-free response, and the block
  // diagonal state weight (stage weight up to K-1, terminal weight at K).
  Vec err(horizon * n);
  Mat qbar = Mat::Zero(horizon * n, horizon * n);
  for (int k = 1; k <= horizon; ++k) {
    err.segment((k - 1) * n, n) = apow[k] * qp.x0 - qp.x_ref[k];
    qbar.block((k - 1) * n, (k - 1) * n, n, n) = k < horizon ? q : pw;
  }

  ConicProgram prog;
  prog.num_vars = horizon * m;
  const Mat half = gmat.transpose() * qbar * gmat;
  prog.quadratic = half + half.transpose();
  for (int j = 0; j < horizon; ++j) {
    prog.quadratic.block(j * m, j * m, m, m) += 2.0 * r;
  }
  prog.objective = 2.0 * (gmat.transpose() * (qbar * err));
  for (int j = 0; j < horizon; ++j) {
    prog.objective.segment(j * m, m) -= 2.0 * (r * qp.u_ref[j]);
  }
  if (constant_cost != nullptr) {
    const Vec e0 = qp.x0 - qp.x_ref[0];
    double offset = e0.dot(q * e0) + err.dot(qbar * err);
    for (int j = 0; j < horizon; ++j) {
      offset += qp.u_ref[j].dot(r * qp.u_ref[j]);
    }
    *constant_cost = offset;
  }

  std::vector<Row> rows;
  for (int k = 0; k < horizon; ++k) {
    for (int i = 0; i < m; ++i) {
      if (std::isfinite(qp.u_hi[i])) {
        Row row{Vec::Zero(prog.num_vars), qp.u_hi[i]};
        row.lhs[k * m + i] = 1.0;
        rows.push_back(std::move(row));
      }
      if (std::isfinite(qp.u_lo[i])) {
        Row row{Vec::Zero(prog.num_vars), -qp.u_lo[i]};
        row.lhs[k * m + i] = -1.0;
        rows.push_back(std::move(row));
      }
    }
  }
  for (int k = 1; k <= horizon; ++k) {
    const Vec free_resp = apow[k] * qp.x0;
    for (int i = 0; i < n; ++i) {
      const Vec coeff = gmat.row((k - 1) * n + i).transpose();
      if (std::isfinite(qp.x_hi[i])) {
        rows.push_back({coeff, qp.x_hi[i] - free_resp[i]});
      }
      if (std::isfinite(qp.x_lo[i])) {
        rows.push_back({-coeff, free_resp[i] - qp.x_lo[i]});
      }
    }
  }
  for (const MpcHyperplaneRow& hp : qp.hyperplanes) {
    const Vec chn = qp.c.transpose() * hp.normal;
    const Vec coeff =
        gmat.middleRows((hp.step - 1) * n, n).transpose() * chn;
    rows.push_back({coeff, -hp.rhs - chn.dot(apow[hp.step] * qp.x0)});
  }
  for (const MpcTerminalRow& row : qp.terminal) {
    const Vec coeff =
        gmat.middleRows((horizon - 1) * n, n).transpose() * row.normal;
    rows.push_back({coeff, row.bound - row.normal.dot(apow[horizon] * qp.x0)});
  }

  prog.ineq_lhs = Mat::Zero(static_cast<int>(rows.size()), prog.num_vars);
  prog.ineq_rhs = Vec::Zero(static_cast<int>(rows.size()));
  for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
    prog.ineq_lhs.row(i) = rows[i].lhs.transpose();
    prog.ineq_rhs[i] = rows[i].rhs;
  }
  prog.eq_lhs = Mat::Zero(0, prog.num_vars);
  prog.eq_rhs = Vec::Zero(0);
  prog.validate();
  return prog;
}

std::vector<Vec> rollout_states(const MpcQpInputs& qp, const Vec& inputs) {
  const int n = static_cast<int>(qp.a.rows());
  const int m = static_cast<int>(qp.b.cols());
  require(inputs.size() == static_cast<Eigen::Index>(qp.horizon) * m,
          "mpc rollout: stacked input size mismatch");
  require(qp.x0.size() == n, "mpc rollout: initial state size mismatch");
  std::vector<Vec> states(qp.horizon + 1);
  states[0] = qp.x0;
  for (int k = 0; k < qp.horizon; ++k) {
    states[k + 1] = qp.a * states[k] + qp.b * inputs.segment(k * m, m);
  }
  return states;
}

}  // namespace cooldrmc::conic

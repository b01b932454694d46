// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cooldrmc/conic.hpp"
#include "cooldrmc/rng.hpp"

using namespace cooldrmc;
using namespace cooldrmc::conic;

namespace {

Vec vec4(double a, double b, double c, double d) {
  Vec v(4);
  v << a, b, c, d;
  return v;
}

/// Planar double integrator sampled at ts: state (px, py, vx, vy),
/// input (ax, ay), output (px, py).
MpcQpInputs double_integrator(double ts, int horizon) {
  MpcQpInputs qp;
  qp.a = Mat::Identity(4, 4);
  qp.a(0, 2) = ts;
  qp.a(1, 3) = ts;
  qp.b = Mat::Zero(4, 2);
  qp.b(0, 0) = 0.5 * ts * ts;
  qp.b(1, 1) = 0.5 * ts * ts;
  qp.b(2, 0) = ts;
  qp.b(3, 1) = ts;
  qp.c = Mat::Zero(2, 4);
  qp.c(0, 0) = 1.0;
  qp.c(1, 1) = 1.0;
  qp.horizon = horizon;
  qp.q = Mat::Zero(4, 4);
  qp.q(0, 0) = 1.0;
  qp.q(1, 1) = 1.0;
  qp.r = 0.1 * Mat::Identity(2, 2);
  qp.p = qp.q;
  qp.x_lo = vec4(-1e6, -1e6, -1e6, -1e6);
  qp.x_hi = vec4(1e6, 1e6, 1e6, 1e6);
  qp.u_lo = Vec::Constant(2, -1e6);
  qp.u_hi = Vec::Constant(2, 1e6);
  qp.x_ref.assign(horizon + 1, Vec::Zero(4));
  qp.u_ref.assign(horizon, Vec::Zero(2));
  return qp;
}

void hold_reference(MpcQpInputs& qp, const Vec& state) {
  qp.x_ref.assign(qp.horizon + 1, state);
  qp.u_ref.assign(qp.horizon, Vec::Zero(qp.b.cols()));
}

/// Full tracking cost of a stacked input sequence, evaluated by direct
/// simulation; the independent oracle for the condensed objective.
double direct_cost(const MpcQpInputs& qp, const Vec& inputs) {
  const std::vector<Vec> xs = rollout_states(qp, inputs);
  const int m = static_cast<int>(qp.b.cols());
  double j = 0.0;
  for (int k = 0; k < qp.horizon; ++k) {
    const Vec ex = xs[k] - qp.x_ref[k];
    const Vec eu = inputs.segment(k * m, m) - qp.u_ref[k];
    j += ex.dot(qp.q * ex) + eu.dot(qp.r * eu);
  }
  const Vec ef = xs[qp.horizon] - qp.x_ref[qp.horizon];
  j += ef.dot(qp.p * ef);
  return j;
}

/// Every constraint value of the horizon problem at a candidate input
/// sequence, by direct simulation, in no particular order.
std::vector<double> direct_row_values(const MpcQpInputs& qp,
                                      const Vec& inputs) {
  const std::vector<Vec> xs = rollout_states(qp, inputs);
  const int n = static_cast<int>(qp.a.rows());
  const int m = static_cast<int>(qp.b.cols());
  std::vector<double> vals;
  for (int k = 0; k < qp.horizon; ++k) {
    for (int i = 0; i < m; ++i) {
      const double u = inputs[k * m + i];
      if (std::isfinite(qp.u_hi[i])) vals.push_back(u - qp.u_hi[i]);
      if (std::isfinite(qp.u_lo[i])) vals.push_back(qp.u_lo[i] - u);
    }
  }
  for (int k = 1; k <= qp.horizon; ++k) {
    for (int i = 0; i < n; ++i) {
      if (std::isfinite(qp.x_hi[i])) vals.push_back(xs[k][i] - qp.x_hi[i]);
      if (std::isfinite(qp.x_lo[i])) vals.push_back(qp.x_lo[i] - xs[k][i]);
    }
  }
  for (const MpcHyperplaneRow& hp : qp.hyperplanes) {
    vals.push_back(hp.normal.dot(qp.c * xs[hp.step]) + hp.rhs);
  }
  for (const MpcTerminalRow& row : qp.terminal) {
    vals.push_back(row.normal.dot(xs[qp.horizon]) - row.bound);
  }
  return vals;
}

Mat random_psd(Rng& rng, int dim, double ridge) {
  Mat l = Mat::Zero(dim, dim);
  for (int i = 0; i < dim; ++i) {
    for (int j = 0; j <= i; ++j) l(i, j) = rng.normal();
  }
  return l * l.transpose() + ridge * Mat::Identity(dim, dim);
}

/// Random bounded-horizon tracking instance with generic dynamics.
MpcQpInputs random_instance(Rng& rng) {
  const int n = 2 + static_cast<int>(rng.uniform_index(3));
  const int m = 1 + static_cast<int>(rng.uniform_index(2));
  const int p = 1 + static_cast<int>(rng.uniform_index(n));
  MpcQpInputs qp;
  qp.horizon = 1 + static_cast<int>(rng.uniform_index(5));
  qp.a = Mat::Identity(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) qp.a(i, j) += 0.3 * rng.normal();
  }
  qp.b = Mat::Zero(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) qp.b(i, j) = rng.normal();
  }
  qp.c = Mat::Zero(p, n);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < n; ++j) qp.c(i, j) = rng.normal();
  }
  qp.q = random_psd(rng, n, 0.0);
  qp.r = random_psd(rng, m, 0.1);
  qp.p = random_psd(rng, n, 0.0);
  qp.x_lo = Vec::Constant(n, -1e4);
  qp.x_hi = Vec::Constant(n, 1e4);
  qp.u_lo = Vec::Constant(m, -50.0);
  qp.u_hi = Vec::Constant(m, 50.0);
  qp.x_ref.resize(qp.horizon + 1);
  for (Vec& v : qp.x_ref) {
    v = Vec::Zero(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal();
  }
  qp.u_ref.resize(qp.horizon);
  for (Vec& v : qp.u_ref) {
    v = Vec::Zero(m);
    for (int i = 0; i < m; ++i) v[i] = 0.2 * rng.normal();
  }
  qp.x0 = Vec::Zero(n);
  for (int i = 0; i < n; ++i) qp.x0[i] = rng.normal();
  return qp;
}

}  // namespace

TEST_CASE("an equilibrium start on the reference is already optimal") {
  MpcQpInputs qp = double_integrator(0.1, 5);
  qp.x0 = vec4(1.0, 2.0, 0.0, 0.0);
  hold_reference(qp, qp.x0);

  double offset = -1.0;
  const ConicProgram prog = assemble_mpc_qp(qp, &offset);
  CHECK(prog.num_vars == 10);
  CHECK(offset == 0.0);

  const SolveReport report = solve(prog);
  REQUIRE(report.status == SolveStatus::Optimal);
  CHECK(report.x.cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(std::abs(report.objective + offset) <= 1e-8);
  CHECK(max_violation(prog, report.x) <= 1e-8);
}

TEST_CASE("a one-step horizon reproduces the closed-form regulator") {
  MpcQpInputs qp = double_integrator(0.1, 1);
  qp.p = Mat::Identity(4, 4);
  qp.x0 = vec4(1.0, -1.0, 0.5, 0.0);
  const Vec target = vec4(1.2, -0.8, 0.0, 0.0);
  qp.x_ref = {qp.x0, target};
  qp.u_ref = {Vec::Zero(2)};

  const ConicProgram prog = assemble_mpc_qp(qp);
  const SolveReport report = solve(prog);
  REQUIRE(report.status == SolveStatus::Optimal);

  // argmin_u (A x0 + B u - target)' P (.) + u' R u.
  const Mat lhs = qp.r + qp.b.transpose() * qp.p * qp.b;
  const Vec rhs = qp.b.transpose() * (qp.p * (target - qp.a * qp.x0));
  const Vec expected = lhs.ldlt().solve(rhs);
  CHECK((report.x - expected).cwiseAbs().maxCoeff() <= 1e-7);
}

TEST_CASE("a violated separating plane becomes active") {
  MpcQpInputs qp = double_integrator(0.1, 3);
  qp.x0 = Vec::Zero(4);
  hold_reference(qp, qp.x0);
  qp.u_lo = Vec::Constant(2, -200.0);
  qp.u_hi = Vec::Constant(2, 200.0);
  Vec h(2);
  h << 1.0, 0.0;
  qp.hyperplanes.push_back({1, h, 0.5});

  const ConicProgram prog = assemble_mpc_qp(qp);
  const SolveReport report = solve(prog);
  REQUIRE(report.status == SolveStatus::Optimal);

  // The plane requires the first-step x position at or below -0.5, which
  // the unconstrained optimum (stay at the origin) violates.
  const std::vector<Vec> xs = rollout_states(qp, report.x);
  CHECK(xs[1][0] == doctest::Approx(-0.5).epsilon(1e-6));
  CHECK(report.objective > 1.0);

  // Stationarity with the single active row recovers a positive multiplier.
  const Vec grad = prog.quadratic * report.x + prog.objective;
  int active = -1;
  for (int i = 0; i < prog.ineq_lhs.rows(); ++i) {
    const double slack = prog.ineq_rhs[i] - prog.ineq_lhs.row(i) * report.x;
    if (slack <= 1e-6 * (1.0 + std::abs(prog.ineq_rhs[i]))) {
      REQUIRE(active == -1);
      active = i;
    }
  }
  REQUIRE(active >= 0);
  const Vec row = prog.ineq_lhs.row(active).transpose();
  const double lambda = -row.dot(grad) / row.squaredNorm();
  CHECK(lambda > 1e-3);
  CHECK((grad + lambda * row).cwiseAbs().maxCoeff() <=
        1e-5 * (1.0 + grad.cwiseAbs().maxCoeff()));
}

TEST_CASE("the input box saturates when the target is far away") {
  MpcQpInputs qp = double_integrator(0.1, 5);
  qp.x0 = Vec::Zero(4);
  hold_reference(qp, vec4(10.0, 0.0, 0.0, 0.0));
  qp.u_lo = Vec::Constant(2, -1.0);
  qp.u_hi = Vec::Constant(2, 1.0);

  const ConicProgram prog = assemble_mpc_qp(qp);
  const SolveReport report = solve(prog);
  REQUIRE(report.status == SolveStatus::Optimal);
  CHECK(report.x[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(max_violation(prog, report.x) <= 1e-8);
}

TEST_CASE("terminal rows steer the endpoint") {
  MpcQpInputs qp = double_integrator(0.1, 5);
  qp.x0 = Vec::Zero(4);
  hold_reference(qp, qp.x0);
  // Require the final x position to be at least 1 while the cost pulls
  // the trajectory toward the origin.
  qp.terminal.push_back({vec4(-1.0, 0.0, 0.0, 0.0), -1.0});

  const ConicProgram prog = assemble_mpc_qp(qp);
  const SolveReport report = solve(prog);
  REQUIRE(report.status == SolveStatus::Optimal);
  const std::vector<Vec> xs = rollout_states(qp, report.x);
  CHECK(xs[5][0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("condensed cost and rows agree with direct simulation") {
  for (int run = 0; run < 25; ++run) {
    Rng rng = Rng::derive(901, {"mpc-direct", static_cast<std::uint64_t>(run)});
    MpcQpInputs qp = random_instance(rng);
    const int p = static_cast<int>(qp.c.rows());
    for (int extra = 0; extra < 2; ++extra) {
      Vec h(p);
      for (int i = 0; i < p; ++i) h[i] = rng.normal();
      qp.hyperplanes.push_back(
          {1 + static_cast<int>(rng.uniform_index(qp.horizon)), h,
           rng.normal()});
    }
    Vec a(static_cast<int>(qp.a.rows()));
    for (int i = 0; i < a.size(); ++i) a[i] = rng.normal();
    qp.terminal.push_back({a, rng.normal()});

    double offset = 0.0;
    const ConicProgram prog = assemble_mpc_qp(qp, &offset);
    Vec u(prog.num_vars);
    for (int i = 0; i < u.size(); ++i) u[i] = rng.normal();

    const double condensed =
        0.5 * u.dot(prog.quadratic * u) + prog.objective.dot(u) + offset;
    const double direct = direct_cost(qp, u);
    CHECK(std::abs(condensed - direct) <= 1e-9 * (1.0 + std::abs(direct)));

    std::vector<double> got;
    for (int i = 0; i < prog.ineq_lhs.rows(); ++i) {
      got.push_back(prog.ineq_lhs.row(i) * u - prog.ineq_rhs[i]);
    }
    std::vector<double> want = direct_row_values(qp, u);
    REQUIRE(got.size() == want.size());
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    double scale = 1.0;
    for (double v : want) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(std::abs(got[i] - want[i]) <= 1e-9 * scale);
    }
  }
}

TEST_CASE("kkt conditions hold on random feasible instances") {
  int checked = 0;
  for (int run = 0; run < 100; ++run) {
    Rng rng = Rng::derive(902, {"mpc-kkt", static_cast<std::uint64_t>(run)});
    MpcQpInputs qp = random_instance(rng);

    // Plane rows are made tight at a perturbed witness sequence, so the
    // instance stays feasible while the rows cut off the free optimum.
    const SolveReport free_report = solve(assemble_mpc_qp(qp));
    REQUIRE(free_report.status == SolveStatus::Optimal);
    const std::vector<Vec> xs = rollout_states(qp, free_report.x);
    Vec witness = free_report.x;
    for (int i = 0; i < witness.size(); ++i) {
      witness[i] = std::clamp(witness[i] + rng.normal(), -50.0, 50.0);
    }
    const std::vector<Vec> xw = rollout_states(qp, witness);
    const int p = static_cast<int>(qp.c.rows());
    const int rows = static_cast<int>(rng.uniform_index(3));
    for (int extra = 0; extra < rows; ++extra) {
      const int k = 1 + static_cast<int>(rng.uniform_index(qp.horizon));
      Vec h(p);
      for (int i = 0; i < p; ++i) h[i] = rng.normal();
      if (h.cwiseAbs().maxCoeff() < 1e-9) continue;
      h /= h.norm();
      // Keep the row only when it actually cuts off the free optimum.
      if (h.dot(qp.c * (xs[k] - xw[k])) < 0.05) continue;
      qp.hyperplanes.push_back({k, h, -h.dot(qp.c * xw[k])});
    }

    const ConicProgram prog = assemble_mpc_qp(qp);
    const SolveReport report = solve(prog);
    REQUIRE(report.status == SolveStatus::Optimal);
    CHECK(max_violation(prog, report.x) <= 1e-6);

    const Vec grad = prog.quadratic * report.x + prog.objective;
    std::vector<int> active;
    for (int i = 0; i < prog.ineq_lhs.rows(); ++i) {
      const double slack = prog.ineq_rhs[i] - prog.ineq_lhs.row(i) * report.x;
      if (slack <= 1e-6 * (1.0 + std::abs(prog.ineq_rhs[i]))) {
        active.push_back(i);
      }
    }
    const double gscale = 1.0 + grad.cwiseAbs().maxCoeff();
    if (active.empty()) {
      CHECK(grad.cwiseAbs().maxCoeff() <= 1e-6 * gscale);
    } else {
      Mat at(prog.num_vars, static_cast<int>(active.size()));
      for (std::size_t j = 0; j < active.size(); ++j) {
        at.col(static_cast<int>(j)) = prog.ineq_lhs.row(active[j]).transpose();
      }
      const Vec lambda = at.colPivHouseholderQr().solve(-grad);
      CHECK((at * lambda + grad).cwiseAbs().maxCoeff() <= 1e-6 * gscale);
      CHECK(lambda.minCoeff() >= -1e-6 * (1.0 + lambda.cwiseAbs().maxCoeff()));
    }
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("assembly is deterministic and serializes exactly") {
  Rng rng = Rng::derive(903, {"mpc-serial"});
  const MpcQpInputs qp = random_instance(rng);
  const ConicProgram first = assemble_mpc_qp(qp);
  const ConicProgram second = assemble_mpc_qp(qp);
  const std::string text = to_json(first);
  CHECK(text == to_json(second));
  CHECK(text == to_json(program_from_json(text)));
}

TEST_CASE("malformed horizon problems are rejected") {
  MpcQpInputs good = double_integrator(0.1, 3);
  good.x0 = Vec::Zero(4);
  assemble_mpc_qp(good);  // the baseline itself must be well formed

  MpcQpInputs bad = good;
  bad.horizon = 0;
  CHECK_THROWS_AS(assemble_mpc_qp(bad), MalformedProgram);

  bad = good;
  bad.x_ref.pop_back();
  CHECK_THROWS_AS(assemble_mpc_qp(bad), MalformedProgram);

  bad = good;
  bad.u_ref[0] = Vec::Zero(3);
  CHECK_THROWS_AS(assemble_mpc_qp(bad), MalformedProgram);

  bad = good;
  bad.x0 = Vec::Zero(3);
  CHECK_THROWS_AS(assemble_mpc_qp(bad), MalformedProgram);

  bad = good;
  bad.q(0, 1) = 5.0;  // asymmetric weight
  CHECK_THROWS_AS(assemble_mpc_qp(bad), MalformedProgram);

  bad = good;
  bad.q = -Mat::Identity(4, 4);
  CHECK_THROWS_AS(assemble_mpc_qp(bad), MalformedProgram);

  bad = good;
  bad.hyperplanes.push_back({4, Vec::Ones(2), 0.0});  // step past horizon
  CHECK_THROWS_AS(assemble_mpc_qp(bad), MalformedProgram);

  bad = good;
  bad.hyperplanes.push_back({1, Vec::Ones(3), 0.0});  // wrong output size
  CHECK_THROWS_AS(assemble_mpc_qp(bad), MalformedProgram);

  bad = good;
  bad.terminal.push_back({Vec::Ones(2), 0.0});  // wrong state size
  CHECK_THROWS_AS(assemble_mpc_qp(bad), MalformedProgram);
}

// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "cooldrmc/conic.hpp"

namespace cooldrmc::conic {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;
using Clock = std::chrono::steady_clock;

constexpr double kInf = std::numeric_limits<double>::infinity();

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

struct SparseRow {
  std::vector<int> idx;
  std::vector<double> val;
  double rhs = 0.0;

  double dot(const Vec& x) const {
    double s = 0.0;
    for (std::size_t k = 0; k < idx.size(); ++k) s += val[k] * x(idx[k]);
    return s;
  }
};

std::vector<SparseRow> sparsify(const Mat& lhs, const Vec& rhs) {
  std::vector<SparseRow> rows(static_cast<std::size_t>(lhs.rows()));
  for (int i = 0; i < lhs.rows(); ++i) {
    SparseRow& r = rows[static_cast<std::size_t>(i)];
    r.rhs = rhs(i);
    for (int j = 0; j < lhs.cols(); ++j) {
      if (lhs(i, j) != 0.0) {
        r.idx.push_back(j);
        r.val.push_back(lhs(i, j));
      }
    }
  }
  return rows;
}

// Minimum-norm correction of x onto the affine set eq_lhs x = eq_rhs.
bool project_onto_equalities(const Mat& a, const Vec& b, Vec* x) {
  if (a.rows() == 0) return true;
  const Vec r = b - a * (*x);
  Mat gram = a * a.transpose();
  gram.diagonal().array() += 1e-12;
  Eigen::LDLT<Mat> ldlt(gram);
  if (ldlt.info() != Eigen::Success) return false;
  *x += a.transpose() * ldlt.solve(r);
  return ((a * (*x) - b).lpNorm<Eigen::Infinity>() <
          1e-7 * (1.0 + b.lpNorm<Eigen::Infinity>()));
}

// ---------------------------------------------------------------------------
// Log-det barrier path-following solver (programs with PSD blocks)
// ---------------------------------------------------------------------------

// Internal cone description; phase I augments the original program with one
// relaxation variable, so the solver core works on this form.
struct BarrierCones {
  int n = 0;
  std::vector<SparseRow> ineq;
  std::vector<int> nonneg;
  std::vector<PsdBlock> blocks;
  Mat eq_lhs;
  Vec eq_rhs;
  // Total barrier degree: one per scalar cone, dim per PSD block.
  double degree() const {
    double nu = static_cast<double>(ineq.size() + nonneg.size());
    for (const auto& b : blocks) nu += b.dim;
    return nu;
  }
};

Mat block_value(const PsdBlock& block, const Vec& x) {
  Mat f = block.constant;
  for (const auto& [j, coeff] : block.terms) f += x(j) * coeff;
  return f;
}

// Positive-definiteness probe with optional log-determinant and inverse.
// Cholesky first; near-singular blocks that trip Cholesky's pivot test get
// a second chance through an eigen-decomposition, so the central path can
// be followed all the way into ill-conditioned corners.
bool spd_probe(const Mat& s, double* logdet, Mat* inv) {
  Eigen::LLT<Mat> llt(s);
  if (llt.info() == Eigen::Success) {
    const Mat& l = llt.matrixLLT();
    bool ok = true;
    double ld = 0.0;
    for (int i = 0; i < s.rows(); ++i) {
      if (l(i, i) <= 0.0) {
        ok = false;
        break;
      }
      ld += 2.0 * std::log(l(i, i));
    }
    if (ok) {
      if (logdet != nullptr) *logdet = ld;
      if (inv != nullptr) {
        *inv = llt.solve(Mat::Identity(s.rows(), s.cols()));
      }
      return true;
    }
  }
  Eigen::SelfAdjointEigenSolver<Mat> eig(s);
  if (eig.info() != Eigen::Success) return false;
  const Vec& vals = eig.eigenvalues();
  if (vals.minCoeff() <= 0.0) return false;
  if (logdet != nullptr) *logdet = vals.array().log().sum();
  if (inv != nullptr) {
    *inv = eig.eigenvectors() * vals.cwiseInverse().asDiagonal() *
           eig.eigenvectors().transpose();
  }
  return true;
}

bool strictly_feasible(const BarrierCones& cones, const Vec& x) {
  for (const auto& row : cones.ineq) {
    if (row.rhs - row.dot(x) <= 0.0) return false;
  }
  for (int j : cones.nonneg) {
    if (x(j) <= 0.0) return false;
  }
  for (const auto& block : cones.blocks) {
    if (!spd_probe(block_value(block, x), nullptr, nullptr)) return false;
  }
  return true;
}

// Barrier value at x, or false when x is outside the cone interiors.
bool barrier_value(const BarrierCones& cones, const Vec& x, double* val) {
  double v = 0.0;
  for (const auto& row : cones.ineq) {
    const double s = row.rhs - row.dot(x);
    if (s <= 0.0) return false;
    v -= std::log(s);
  }
  for (int j : cones.nonneg) {
    if (x(j) <= 0.0) return false;
    v -= std::log(x(j));
  }
  for (const auto& block : cones.blocks) {
    double ld = 0.0;
    if (!spd_probe(block_value(block, x), &ld, nullptr)) return false;
    v -= ld;
  }
  *val = v;
  return true;
}

// Barrier gradient and Hessian (sparse lower-triangle triplets).
bool barrier_derivs(const BarrierCones& cones, const Vec& x, Vec* grad,
                    std::vector<Triplet>* hess) {
  grad->setZero(cones.n);
  hess->clear();
  for (const auto& row : cones.ineq) {
    const double s = row.rhs - row.dot(x);
    if (s <= 0.0) return false;
    const double inv = 1.0 / s;
    const double inv2 = inv * inv;
    for (std::size_t a = 0; a < row.idx.size(); ++a) {
      (*grad)(row.idx[a]) += row.val[a] * inv;
      for (std::size_t b = 0; b <= a; ++b) {
        const int ja = row.idx[a];
        const int jb = row.idx[b];
        hess->emplace_back(std::max(ja, jb), std::min(ja, jb),
                           row.val[a] * row.val[b] * inv2);
      }
    }
  }
  for (int j : cones.nonneg) {
    if (x(j) <= 0.0) return false;
    (*grad)(j) -= 1.0 / x(j);
    hess->emplace_back(j, j, 1.0 / (x(j) * x(j)));
  }
  std::vector<Mat> scaled;
  for (const auto& block : cones.blocks) {
    Mat inv;
    if (!spd_probe(block_value(block, x), nullptr, &inv)) return false;
    scaled.clear();
    scaled.reserve(block.terms.size());
    for (const auto& [j, coeff] : block.terms) {
      scaled.push_back(inv * coeff);
      (*grad)(j) -= scaled.back().trace();
    }
    for (std::size_t a = 0; a < block.terms.size(); ++a) {
      const int ja = block.terms[a].first;
      for (std::size_t b = 0; b <= a; ++b) {
        const int jb = block.terms[b].first;
        const double h =
            scaled[a].cwiseProduct(scaled[b].transpose()).sum();
        if (ja == jb && a != b) {
          // Two terms on the same variable inside one block: fold both
          // cross orders into the single diagonal entry.
          hess->emplace_back(ja, jb, 2.0 * h);
        } else {
          hess->emplace_back(std::max(ja, jb), std::min(ja, jb), h);
        }
      }
    }
  }
  return true;
}

struct BarrierOutcome {
  Vec x;
  SolveStatus status = SolveStatus::NumericalFailure;
  int newton_steps = 0;
  double gap = kInf;
};

// Minimizes c.x (+0.5 x'Qx) over the cone intersection by following the
// central path; x0 must be strictly feasible and satisfy the equalities.
// When stop_when_feasible is non-null, iteration ends as soon as the
// leading coordinates of x are strictly feasible for *stop_when_feasible
// (phase-I early exit).
BarrierOutcome barrier_minimize(const BarrierCones& cones, const Vec& c,
                                const Mat* quad, Vec x0, double tol,
                                const BarrierCones* stop_when_feasible) {
  BarrierOutcome out;
  out.x = std::move(x0);
  const int n = cones.n;
  const int me = static_cast<int>(cones.eq_lhs.rows());
  const double nu = std::max(1.0, cones.degree());

  auto objective = [&](const Vec& x) {
    double f = c.dot(x);
    if (quad != nullptr && quad->size() > 0) {
      f += 0.5 * x.dot((*quad) * x);
    }
    return f;
  };

  double t = 1.0;
  Eigen::SimplicialLDLT<SpMat> hfact;
  bool pattern_ready = false;

  for (int outer = 0; outer < 60; ++outer) {
    for (int inner = 0; inner < 60; ++inner) {
      Vec bgrad;
      std::vector<Triplet> trip;
      if (!barrier_derivs(cones, out.x, &bgrad, &trip)) {
        // A feasible iterate whose derivatives are no longer computable
        // means the path ran into the numerical boundary; the point itself
        // is still valid, so report exhaustion rather than failure.
        out.status = out.newton_steps > 0 ? SolveStatus::MaxIter
                                          : SolveStatus::NumericalFailure;
        return out;
      }
      Vec g = t * c + bgrad;
      if (quad != nullptr && quad->size() > 0) {
        g += t * ((*quad) * out.x);
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j <= i; ++j) {
            if ((*quad)(i, j) != 0.0) {
              trip.emplace_back(i, j, t * (*quad)(i, j));
            }
          }
        }
      }
      // Newton step with the equalities handled by block elimination:
      //   H dx + A' w = -g,  A dx = r_p
      // where H is the (positive definite) barrier Hessian. A tiny diagonal
      // floor keeps the factorization well posed; one refinement pass
      // against the unregularized system removes its bias.
      std::vector<Triplet> reg = trip;
      double floor_delta = 1e-12;
      for (int attempt = 0; attempt < 13; ++attempt) {
        reg.resize(trip.size());
        for (int i = 0; i < n; ++i) reg.emplace_back(i, i, floor_delta);
        SpMat hreg(n, n);
        hreg.setFromTriplets(reg.begin(), reg.end());
        if (!pattern_ready) {
          hfact.analyzePattern(hreg);
          pattern_ready = true;
        }
        hfact.factorize(hreg);
        if (hfact.info() == Eigen::Success &&
            hfact.vectorD().minCoeff() > 0.0) {
          break;
        }
        floor_delta *= 100.0;
      }
      if (hfact.info() != Eigen::Success) {
        out.status = SolveStatus::NumericalFailure;
        return out;
      }
      SpMat htrue(n, n);
      htrue.setFromTriplets(trip.begin(), trip.end());
      const Vec r_p =
          me > 0 ? Vec(cones.eq_rhs - cones.eq_lhs * out.x) : Vec();

      Mat w_cols;
      Eigen::LDLT<Mat> schur;
      if (me > 0) {
        w_cols = hfact.solve(Mat(cones.eq_lhs.transpose()));
        Mat s = cones.eq_lhs * w_cols;
        const double sscale =
            std::max(s.diagonal().cwiseAbs().maxCoeff(), 1e-300);
        s.diagonal().array() += 1e-13 * sscale;
        schur = Eigen::LDLT<Mat>(s);
      }
      Vec dx = Vec::Zero(n);
      Vec w = Vec::Zero(me);
      Vec res1 = -g;
      Vec res2 = r_p;
      for (int pass = 0; pass < 3; ++pass) {
        Vec dx_c;
        Vec w_c = Vec::Zero(me);
        const Vec h_res1 = hfact.solve(res1);
        if (me > 0) {
          w_c = schur.solve(cones.eq_lhs * h_res1 - res2);
          dx_c = h_res1 - w_cols * w_c;
        } else {
          dx_c = h_res1;
        }
        dx += dx_c;
        w += w_c;
        res1 = -g - htrue.selfadjointView<Eigen::Lower>() * dx;
        if (me > 0) {
          res1 -= cones.eq_lhs.transpose() * w;
          res2 = r_p - cones.eq_lhs * dx;
        }
      }
      ++out.newton_steps;

      const double decrement = std::max(0.0, -g.dot(dx));
      // Backtracking line search: first into the cone interior, then a
      // sufficient-decrease condition on the merit t*f + barrier.
      double merit0 = 0.0;
      barrier_value(cones, out.x, &merit0);
      merit0 += t * objective(out.x);
      double alpha = 1.0;
      bool accepted = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Vec cand = out.x + alpha * dx;
        double bval = 0.0;
        if (barrier_value(cones, cand, &bval)) {
          const double merit = t * objective(cand) + bval;
          if (merit <= merit0 + 0.25 * alpha * g.dot(dx) + 1e-12) {
            out.x = cand;
            accepted = true;
            break;
          }
        }
        alpha *= 0.5;
      }
      if (!accepted || out.newton_steps > 4000) break;
      if (stop_when_feasible != nullptr &&
          strictly_feasible(*stop_when_feasible, out.x.head(stop_when_feasible->n))) {
        out.status = SolveStatus::Optimal;
        out.gap = nu / t;
        return out;
      }
      if (decrement * 0.5 < 1e-9) break;
    }
    out.gap = nu / t;
    if (out.gap <= tol * std::max(1.0, std::abs(objective(out.x)))) {
      out.status = SolveStatus::Optimal;
      return out;
    }
    if (out.newton_steps > 4000) {
      out.status = SolveStatus::MaxIter;
      return out;
    }
    t *= 10.0;
  }
  out.status = SolveStatus::MaxIter;
  return out;
}

BarrierCones cones_of_program(const ConicProgram& prog) {
  BarrierCones cones;
  cones.n = prog.num_vars;
  cones.ineq = sparsify(prog.ineq_lhs, prog.ineq_rhs);
  cones.nonneg = prog.nonneg;
  cones.blocks = prog.psd;
  cones.eq_lhs = prog.eq_lhs;
  cones.eq_rhs = prog.eq_rhs;
  return cones;
}

// Phase I: minimize the relaxation s with every cone widened by s until the
// original cones are strictly satisfied.
bool barrier_phase1(const BarrierCones& cones, Vec* x0, SolveStatus* fail) {
  const int n = cones.n;
  BarrierCones ph;
  ph.n = n + 1;
  ph.ineq = cones.ineq;
  for (auto& row : ph.ineq) {
    row.idx.push_back(n);
    row.val.push_back(-1.0);
  }
  for (int j : cones.nonneg) {
    SparseRow row;
    row.idx = {j, n};
    row.val = {-1.0, -1.0};
    row.rhs = 0.0;
    ph.ineq.push_back(row);
  }
  ph.blocks = cones.blocks;
  for (auto& block : ph.blocks) {
    block.terms.emplace_back(n, Mat::Identity(block.dim, block.dim));
  }
  ph.eq_lhs = Mat::Zero(cones.eq_lhs.rows(), n + 1);
  if (cones.eq_lhs.rows() > 0) {
    ph.eq_lhs.leftCols(n) = cones.eq_lhs;
  }
  ph.eq_rhs = cones.eq_rhs;

  Vec start = Vec::Zero(n + 1);
  Vec xeq = x0->size() == n ? *x0 : Vec::Zero(n);
  if (!project_onto_equalities(cones.eq_lhs, cones.eq_rhs, &xeq)) {
    *fail = SolveStatus::Infeasible;
    return false;
  }
  start.head(n) = xeq;
  double viol = 0.0;
  for (const auto& row : cones.ineq) {
    viol = std::max(viol, row.dot(xeq) - row.rhs);
  }
  for (int j : cones.nonneg) viol = std::max(viol, -xeq(j));
  for (const auto& block : cones.blocks) {
    viol = std::max(viol,
                    -linalg::min_eigenvalue(block_value(block, xeq)));
  }
  start(n) = viol + 1.0;

  Vec c = Vec::Unit(n + 1, n);
  const auto out =
      barrier_minimize(ph, c, nullptr, start, 1e-9, &cones);
  if (out.status == SolveStatus::Optimal &&
      strictly_feasible(cones, out.x.head(n))) {
    *x0 = out.x.head(n);
    return true;
  }
  // Converged without reaching the cone interiors: no strictly feasible
  // point exists (or only boundary points do).
  *fail = (out.status == SolveStatus::Optimal || out.x(n) > -1e-10)
              ? SolveStatus::Infeasible
              : out.status;
  return false;
}

SolveReport solve_barrier(const ConicProgram& prog, double tol,
                          Clock::time_point start) {
  SolveReport report;
  BarrierCones cones = cones_of_program(prog);

  Vec x0;
  bool have_start = false;
  if (prog.interior_hint.size() == prog.num_vars) {
    x0 = prog.interior_hint;
    if (project_onto_equalities(prog.eq_lhs, prog.eq_rhs, &x0) &&
        strictly_feasible(cones, x0)) {
      have_start = true;
    }
  }
  if (!have_start) {
    x0 = Vec::Zero(prog.num_vars);
    SolveStatus fail = SolveStatus::NumericalFailure;
    if (!barrier_phase1(cones, &x0, &fail)) {
      report.status = fail;
      report.x = Vec::Zero(prog.num_vars);
      report.wall_ms = elapsed_ms(start);
      return report;
    }
  }

  const Mat* quad = prog.quadratic.size() > 0 ? &prog.quadratic : nullptr;
  auto out = barrier_minimize(cones, prog.objective, quad, x0, tol, nullptr);
  report.status = out.status;
  report.x = out.x;
  report.iterations = out.newton_steps;
  report.objective = prog.objective.dot(out.x);
  if (quad != nullptr) report.objective += 0.5 * out.x.dot((*quad) * out.x);
  report.max_violation = max_violation(prog, out.x);
  report.wall_ms = elapsed_ms(start);
  return report;
}

// ---------------------------------------------------------------------------
// Dense predictor-corrector interior-point method (LP/QP path)
// ---------------------------------------------------------------------------

struct QpData {
  int n = 0;
  Mat p;      // n x n (zero when LP)
  Vec c;
  Mat a_eq;   // me x n
  Vec b_eq;
  Mat a_in;   // mi x n (includes sign constraints as -x_j <= 0)
  Vec b_in;
};

QpData qp_of_program(const ConicProgram& prog) {
  QpData qp;
  qp.n = prog.num_vars;
  qp.p = prog.quadratic.size() > 0 ? prog.quadratic
                                   : Mat::Zero(prog.num_vars, prog.num_vars);
  qp.c = prog.objective;
  qp.a_eq = prog.eq_lhs;
  qp.b_eq = prog.eq_rhs;
  const int mi = static_cast<int>(prog.ineq_lhs.rows());
  const int ms = static_cast<int>(prog.nonneg.size());
  qp.a_in = Mat::Zero(mi + ms, prog.num_vars);
  qp.b_in = Vec::Zero(mi + ms);
  if (mi > 0) {
    qp.a_in.topRows(mi) = prog.ineq_lhs;
    qp.b_in.head(mi) = prog.ineq_rhs;
  }
  for (int k = 0; k < ms; ++k) {
    qp.a_in(mi + k, prog.nonneg[static_cast<std::size_t>(k)]) = -1.0;
  }
  return qp;
}

struct QpOutcome {
  SolveStatus status = SolveStatus::MaxIter;
  Vec x;
  int iterations = 0;
};

// Crossover step: re-solves the KKT system on the identified active set so
// inactive multipliers are exactly zero. Falls back to the interior-point
// iterate when the candidate fails verification.
void polish_qp(const QpData& qp, const Vec& s, Vec* x) {
  const int n = qp.n;
  const int me = static_cast<int>(qp.a_eq.rows());
  std::vector<int> active;
  for (int i = 0; i < s.size(); ++i) {
    if (s(i) <= 1e-5 * (1.0 + std::abs(qp.b_in(i)))) active.push_back(i);
  }
  const int ma = static_cast<int>(active.size());
  const int dim = n + me + ma;
  Mat kkt = Mat::Zero(dim, dim);
  kkt.topLeftCorner(n, n) = qp.p;
  kkt.topLeftCorner(n, n).diagonal().array() += 1e-13;
  Vec rhs(dim);
  rhs.head(n) = -qp.c;
  for (int r = 0; r < me; ++r) {
    kkt.block(n + r, 0, 1, n) = qp.a_eq.row(r);
    kkt.block(0, n + r, n, 1) = qp.a_eq.row(r).transpose();
    rhs(n + r) = qp.b_eq(r);
  }
  for (int k = 0; k < ma; ++k) {
    kkt.block(n + me + k, 0, 1, n) = qp.a_in.row(active[k]);
    kkt.block(0, n + me + k, n, 1) = qp.a_in.row(active[k]).transpose();
    rhs(n + me + k) = qp.b_in(active[k]);
  }
  Eigen::FullPivLU<Mat> lu(kkt);
  if (!lu.isInvertible()) return;
  const Vec sol = lu.solve(rhs);
  if (!sol.allFinite()) return;
  const Vec cand = sol.head(n);
  for (int k = 0; k < ma; ++k) {
    if (sol(n + me + k) < -1e-9) return;
  }
  const Vec gap = qp.b_in - qp.a_in * cand;
  for (int i = 0; i < gap.size(); ++i) {
    if (gap(i) < -1e-9 * (1.0 + std::abs(qp.b_in(i)))) return;
  }
  if ((cand - *x).lpNorm<Eigen::Infinity>() > 1e-4 * (1.0 + x->lpNorm<Eigen::Infinity>())) {
    return;
  }
  *x = cand;
}

QpOutcome mehrotra(const QpData& qp, double tol) {
  QpOutcome out;
  const int n = qp.n;
  const int me = static_cast<int>(qp.a_eq.rows());
  const int mi = static_cast<int>(qp.a_in.rows());

  Vec x = Vec::Zero(n);
  if (me > 0 && !project_onto_equalities(qp.a_eq, qp.b_eq, &x)) {
    out.status = SolveStatus::Infeasible;
    out.x = x;
    return out;
  }
  if (mi == 0) {
    // Equality-constrained QP: one saddle-point solve.
    Mat kkt = Mat::Zero(n + me, n + me);
    kkt.topLeftCorner(n, n) = qp.p + 1e-12 * Mat::Identity(n, n);
    if (me > 0) {
      kkt.topRightCorner(n, me) = qp.a_eq.transpose();
      kkt.bottomLeftCorner(me, n) = qp.a_eq;
    }
    Vec rhs(n + me);
    rhs.head(n) = -qp.c;
    if (me > 0) rhs.tail(me) = qp.b_eq;
    Eigen::PartialPivLU<Mat> lu(kkt);
    const Vec sol = lu.solve(rhs);
    out.x = sol.head(n);
    out.iterations = 1;
    out.status = sol.allFinite() ? SolveStatus::Optimal
                                 : SolveStatus::NumericalFailure;
    return out;
  }

  Vec s = Vec::Ones(mi);
  Vec z = Vec::Ones(mi);
  Vec y = Vec::Zero(me);
  // Start slacks near the initial constraint gaps when helpful.
  const Vec gap0 = qp.b_in - qp.a_in * x;
  for (int i = 0; i < mi; ++i) s(i) = std::max(1.0, gap0(i));

  const double cscale = 1.0 + qp.c.lpNorm<Eigen::Infinity>();
  const double bscale =
      1.0 + std::max(qp.b_in.size() > 0 ? qp.b_in.lpNorm<Eigen::Infinity>() : 0.0,
                     qp.b_eq.size() > 0 ? qp.b_eq.lpNorm<Eigen::Infinity>() : 0.0);

  for (int iter = 0; iter < 200; ++iter) {
    const Vec r_d = qp.p * x + qp.c +
                    (me > 0 ? Vec(qp.a_eq.transpose() * y) : Vec::Zero(n)) +
                    qp.a_in.transpose() * z;
    const Vec r_p1 = me > 0 ? Vec(qp.a_eq * x - qp.b_eq) : Vec();
    const Vec r_p2 = qp.a_in * x + s - qp.b_in;
    const double mu = s.dot(z) / mi;
    const double rd_norm = r_d.lpNorm<Eigen::Infinity>();
    const double rp_norm =
        std::max(me > 0 ? r_p1.lpNorm<Eigen::Infinity>() : 0.0,
                 r_p2.lpNorm<Eigen::Infinity>());
    out.iterations = iter;
    if (rd_norm <= tol * cscale && rp_norm <= tol * bscale && mu <= tol &&
        s.cwiseProduct(z).maxCoeff() <= 10.0 * tol) {
      out.status = SolveStatus::Optimal;
      out.x = x;
      polish_qp(qp, s, &out.x);
      return out;
    }
    if (!x.allFinite() || x.lpNorm<Eigen::Infinity>() > 1e13) break;

    const Vec d = z.cwiseQuotient(s);
    Mat kkt = Mat::Zero(n + me, n + me);
    kkt.topLeftCorner(n, n) =
        qp.p + qp.a_in.transpose() * d.asDiagonal() * qp.a_in;
    kkt.topLeftCorner(n, n).diagonal().array() += 1e-13;
    if (me > 0) {
      kkt.topRightCorner(n, me) = qp.a_eq.transpose();
      kkt.bottomLeftCorner(me, n) = qp.a_eq;
      kkt.bottomRightCorner(me, me).diagonal().array() -= 1e-13;
    }
    Eigen::PartialPivLU<Mat> lu(kkt);

    auto solve_direction = [&](const Vec& r_sz, Vec* dx, Vec* dy, Vec* dz,
                               Vec* ds) {
      Vec rhs(n + me);
      rhs.head(n) = -r_d - qp.a_in.transpose() *
                               (d.cwiseProduct(r_p2) - r_sz.cwiseQuotient(s));
      if (me > 0) rhs.tail(me) = -r_p1;
      const Vec sol = lu.solve(rhs);
      *dx = sol.head(n);
      *dy = me > 0 ? Vec(sol.tail(me)) : Vec();
      *dz = d.cwiseProduct(qp.a_in * (*dx) + r_p2) - r_sz.cwiseQuotient(s);
      *ds = -(r_sz + s.cwiseProduct(*dz)).cwiseQuotient(z);
    };

    auto max_step = [](const Vec& v, const Vec& dv) {
      double a = 1.0;
      for (int i = 0; i < v.size(); ++i) {
        if (dv(i) < 0.0) a = std::min(a, -v(i) / dv(i));
      }
      return a;
    };

    Vec dx_a, dy_a, dz_a, ds_a;
    solve_direction(s.cwiseProduct(z), &dx_a, &dy_a, &dz_a, &ds_a);
    const double ap = max_step(s, ds_a);
    const double ad = max_step(z, dz_a);
    const double mu_aff =
        (s + ap * ds_a).dot(z + ad * dz_a) / mi;
    const double sigma = std::pow(mu_aff / mu, 3.0);

    const Vec r_sz = s.cwiseProduct(z) + ds_a.cwiseProduct(dz_a) -
                     Vec::Constant(mi, sigma * mu);
    Vec dx, dy, dz, ds;
    solve_direction(r_sz, &dx, &dy, &dz, &ds);
    const double alpha =
        std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(z, dz)));
    if (!dx.allFinite() || alpha <= 1e-14) break;
    x += alpha * dx;
    if (me > 0) y += alpha * dy;
    s += alpha * ds;
    z += alpha * dz;
  }
  out.x = x;
  out.status = SolveStatus::MaxIter;
  return out;
}

// Feasibility probe: min s with all inequalities widened by s, s >= -1.
bool qp_strictly_feasible_exists(const QpData& qp, double* best) {
  QpData ph;
  ph.n = qp.n + 1;
  ph.p = Mat::Zero(ph.n, ph.n);
  ph.c = Vec::Unit(ph.n, qp.n);
  ph.a_eq = Mat::Zero(qp.a_eq.rows(), ph.n);
  if (qp.a_eq.rows() > 0) ph.a_eq.leftCols(qp.n) = qp.a_eq;
  ph.b_eq = qp.b_eq;
  const int mi = static_cast<int>(qp.a_in.rows());
  ph.a_in = Mat::Zero(mi + 1, ph.n);
  ph.a_in.topLeftCorner(mi, qp.n) = qp.a_in;
  ph.a_in.col(qp.n).head(mi).setConstant(-1.0);
  ph.a_in(mi, qp.n) = -1.0;
  ph.b_in = Vec::Zero(mi + 1);
  ph.b_in.head(mi) = qp.b_in;
  ph.b_in(mi) = 1.0;
  const auto out = mehrotra(ph, 1e-9);
  if (out.status != SolveStatus::Optimal) return false;
  *best = out.x(qp.n);
  return true;
}

SolveReport solve_qp_path(const ConicProgram& prog, double tol,
                          Clock::time_point start) {
  SolveReport report;
  const QpData qp = qp_of_program(prog);
  auto out = mehrotra(qp, tol);
  if (out.status != SolveStatus::Optimal) {
    double best = 0.0;
    if (qp_strictly_feasible_exists(qp, &best)) {
      if (best > 1e-7) out.status = SolveStatus::Infeasible;
    } else {
      out.status = SolveStatus::NumericalFailure;
    }
  }
  report.status = out.status;
  report.x = out.x;
  report.iterations = out.iterations;
  report.objective = prog.objective.dot(out.x);
  if (prog.quadratic.size() > 0) {
    report.objective += 0.5 * out.x.dot(prog.quadratic * out.x);
  }
  report.max_violation = max_violation(prog, out.x);
  report.wall_ms = elapsed_ms(start);
  return report;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public interface
// ---------------------------------------------------------------------------

void ConicProgram::validate() const {
  const int n = num_vars;
  auto fail = [](const std::string& what) { throw MalformedProgram(what); };
  if (n <= 0) fail("program has no decision variables");
  if (objective.size() != n) fail("objective length mismatch");
  if (quadratic.size() > 0 &&
      (quadratic.rows() != n || quadratic.cols() != n)) {
    fail("quadratic term dimension mismatch");
  }
  if (eq_lhs.rows() != eq_rhs.size() ||
      (eq_lhs.rows() > 0 && eq_lhs.cols() != n)) {
    fail("equality block dimension mismatch");
  }
  if (ineq_lhs.rows() != ineq_rhs.size() ||
      (ineq_lhs.rows() > 0 && ineq_lhs.cols() != n)) {
    fail("inequality block dimension mismatch");
  }
  for (int j : nonneg) {
    if (j < 0 || j >= n) fail("nonnegative index out of range");
  }
  for (const auto& block : psd) {
    if (block.dim <= 0 || block.constant.rows() != block.dim ||
        block.constant.cols() != block.dim) {
      fail("PSD block constant dimension mismatch");
    }
    for (const auto& [j, coeff] : block.terms) {
      if (j < 0 || j >= n) fail("PSD block variable index out of range");
      if (coeff.rows() != block.dim || coeff.cols() != block.dim) {
        fail("PSD block coefficient dimension mismatch");
      }
    }
  }
  if (interior_hint.size() != 0 && interior_hint.size() != n) {
    fail("interior hint length mismatch");
  }
}

double max_violation(const ConicProgram& prog, const Vec& x) {
  if (x.size() != prog.num_vars) return kInf;
  double v = 0.0;
  if (prog.eq_lhs.rows() > 0) {
    v = std::max(v,
                 (prog.eq_lhs * x - prog.eq_rhs).lpNorm<Eigen::Infinity>());
  }
  if (prog.ineq_lhs.rows() > 0) {
    v = std::max(v, (prog.ineq_lhs * x - prog.ineq_rhs).maxCoeff());
  }
  for (int j : prog.nonneg) v = std::max(v, -x(j));
  for (const auto& block : prog.psd) {
    Mat f = block.constant;
    for (const auto& [j, coeff] : block.terms) f += x(j) * coeff;
    v = std::max(v, -linalg::min_eigenvalue(f));
  }
  return v;
}

SolveReport solve(const ConicProgram& prog, double tol) {
  prog.validate();
  const auto start = Clock::now();
  if (prog.psd.empty()) return solve_qp_path(prog, tol, start);
  return solve_barrier(prog, tol, start);
}

const char* status_name(SolveStatus status) {
  switch (status) {
    case SolveStatus::Optimal:
      return "optimal";
    case SolveStatus::Infeasible:
      return "infeasible";
    case SolveStatus::MaxIter:
      return "max_iterations";
    case SolveStatus::NumericalFailure:
      return "numerical_failure";
  }
  return "unknown";
}

}  // namespace cooldrmc::conic

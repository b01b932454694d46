// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#include "cooldrmc/drcvar.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

namespace cooldrmc::drcvar {

namespace {

// ============================================================================
// Assembly helpers
// ============================================================================

/// Ridge added to component covariances before assembly.
constexpr double kCovRidge = 1e-6;

Mat symmetrized(const Mat& m) { return 0.5 * (m + m.transpose()); }

/// Second-moment dominance bound carried by one component.
Mat dominance_bound(const ambiguity::BasicAmbiguitySet& comp) {
  if (comp.form == ambiguity::MomentForm::Explicit) {
    return symmetrized(comp.second_moment);
  }
  return comp.eps * symmetrized(comp.cov);
}

/// Per-component data gathered once before emitting rows and blocks.
struct ComponentData {
  geometry::Polytope faces;
  Vec mean;
  Mat cov;     // ridged, symmetric
  Mat bound;   // second-moment dominance matrix
  double beta = 0.0;
};

}  // namespace

geometry::Polytope face_rows(const geometry::ConvexBody& body) {
  const int d = geometry::dimension(body);
  if (const auto* box = std::get_if<geometry::Box>(&body)) {
    geometry::Polytope poly;
    poly.e = Mat::Zero(2 * d, d);
    poly.f = Vec::Zero(2 * d);
    for (int a = 0; a < d; ++a) {
      poly.e(a, a) = 1.0;
      poly.f(a) = box->hi(a);
      poly.e(d + a, a) = -1.0;
      poly.f(d + a) = -box->lo(a);
    }
    return poly;
  }
  if (const auto* poly = std::get_if<geometry::Polytope>(&body)) {
    if (poly->e.rows() != poly->f.size() || poly->e.cols() != d ||
        poly->e.rows() < 1) {
      throw MalformedSet("support polytope rows and offsets disagree");
    }
    return *poly;
  }
  throw MalformedSet("component support must be a box or a polytope");
}

BiasLayout bias_layout(const ambiguity::MixtureAmbiguitySet& set) {
  if (set.components.empty()) {
    throw MalformedSet("ambiguity set has no components");
  }
  BiasLayout lay;
  lay.dim = set.dim();
  int at = 4;
  for (const auto& comp : set.components) {
    const geometry::Polytope faces = face_rows(comp.support);
    lay.rows.push_back(static_cast<int>(faces.e.rows()));
    lay.start.push_back(at);
    at += lay.slab(lay.components() - 1);
  }
  lay.num_vars = at;
  return lay;
}

conic::ConicProgram assemble_drcvar_sdp(
    const ambiguity::MixtureAmbiguitySet& set, const Vec& h,
    const geometry::ConvexBody& obstacle, double alpha_u) {
  try {
    set.validate();
  } catch (const Error& err) {
    throw MalformedSet(std::string("ambiguity set rejected: ") + err.what());
  }
  const int d = set.dim();
  if (static_cast<int>(h.size()) != d) {
    throw MalformedSet("direction dimension mismatch");
  }
  if (std::abs(h.norm() - 1.0) > 1e-6) {
    throw MalformedSet("direction must have unit length");
  }
  if (geometry::dimension(obstacle) != d) {
    throw MalformedSet("obstacle dimension mismatch");
  }
  if (!(alpha_u > 0.0 && alpha_u < 1.0)) {
    throw MalformedSet("risk level must lie in (0, 1)");
  }

  const BiasLayout lay = bias_layout(set);
  const int m = lay.components();
  const double tail = 1.0 / (1.0 - alpha_u);
  const double s_obs = geometry::support_function(obstacle, -h);

  std::vector<ComponentData> comps;
  comps.reserve(static_cast<std::size_t>(m));
  for (const auto& comp : set.components) {
    ComponentData data;
    data.faces = face_rows(comp.support);
    data.mean = comp.mean;
    data.cov = symmetrized(comp.cov) + kCovRidge * Mat::Identity(d, d);
    data.bound = dominance_bound(comp);
    if (data.bound.rows() != d || data.bound.cols() != d) {
      throw MalformedSet("second-moment bound dimension mismatch");
    }
    data.beta = comp.beta;
    comps.push_back(std::move(data));
  }

  conic::ConicProgram prog;
  prog.num_vars = lay.num_vars;
  prog.objective = Vec::Zero(lay.num_vars);
  prog.objective(lay.g()) = 1.0;
  prog.eq_lhs = Mat::Zero(m, lay.num_vars);
  prog.eq_rhs = Vec::Zero(m);
  prog.ineq_lhs = Mat::Zero(1 + m, lay.num_vars);
  prog.ineq_rhs = Vec::Zero(1 + m);

  // Epigraph row: z + tail * (radius * zeta + sum_n w_n (pos - neg)
  // + vartheta) <= 0.
  prog.ineq_lhs(0, lay.z()) = 1.0;
  prog.ineq_lhs(0, lay.vartheta()) = tail;
  prog.ineq_lhs(0, lay.zeta()) = tail * set.tv_radius;

  prog.nonneg.push_back(lay.zeta());

  for (int n = 0; n < m; ++n) {
    const ComponentData& data = comps[static_cast<std::size_t>(n)];
    const int q = lay.rows[static_cast<std::size_t>(n)];
    const Vec& mu = data.mean;

    prog.ineq_lhs(0, lay.weight_pos(n)) = tail * set.weights(n);
    prog.ineq_lhs(0, lay.weight_neg(n)) = -tail * set.weights(n);

    // Weight-dual split: zeta - pos - neg = 0.
    prog.eq_lhs(n, lay.zeta()) = 1.0;
    prog.eq_lhs(n, lay.weight_pos(n)) = -1.0;
    prog.eq_lhs(n, lay.weight_neg(n)) = -1.0;

    // Moment-dual row, rearranged to <= 0.
    const int row = 1 + n;
    prog.ineq_lhs(row, lay.mean_scalar(n)) = data.beta;
    for (int a = 0; a < d; ++a) {
      prog.ineq_lhs(row, lay.mean_vec(n, a)) = -2.0 * mu(a);
    }
    for (int a = 0; a < d; ++a) {
      for (int b = a; b < d; ++b) {
        const double count = (a == b) ? 1.0 : 2.0;
        prog.ineq_lhs(row, lay.mean_mat(n, a, b)) = count * data.cov(a, b);
        prog.ineq_lhs(row, lay.quad(n, a, b)) =
            count * (data.bound(a, b) - mu(a) * mu(b));
      }
    }
    prog.ineq_lhs(row, lay.slack(n)) = 1.0;
    prog.ineq_lhs(row, lay.weight_pos(n)) = -1.0;
    prog.ineq_lhs(row, lay.weight_neg(n)) = 1.0;
    prog.ineq_lhs(row, lay.vartheta()) = -1.0;

    prog.nonneg.push_back(lay.weight_pos(n));
    prog.nonneg.push_back(lay.weight_neg(n));
    for (int j = 0; j < q; ++j) {
      prog.nonneg.push_back(lay.face_excess(n, j));
      prog.nonneg.push_back(lay.face_zero(n, j));
    }

    // Pointwise bounds over the support, as (d+1) x (d+1) blocks. The top
    // left carries the second-moment multiplier, the border its coupling
    // with the face duals and the mean-ellipsoid vector, and the corner
    // the scalar offsets.
    auto pointwise_block = [&](bool excess_branch) {
      conic::PsdBlock block;
      block.dim = d + 1;
      block.constant = Mat::Zero(d + 1, d + 1);
      if (excess_branch) {
        for (int a = 0; a < d; ++a) {
          block.constant(a, d) = 0.5 * h(a);
          block.constant(d, a) = 0.5 * h(a);
        }
        block.constant(d, d) = -s_obs;
      }
      Mat t;
      if (excess_branch) {
        t = Mat::Zero(d + 1, d + 1);
        t(d, d) = 1.0;
        block.terms.emplace_back(lay.g(), t);
        t = Mat::Zero(d + 1, d + 1);
        t(d, d) = 1.0;
        block.terms.emplace_back(lay.z(), t);
      }
      t = Mat::Zero(d + 1, d + 1);
      t(d, d) = 1.0;
      block.terms.emplace_back(lay.slack(n), t);
      for (int j = 0; j < q; ++j) {
        t = Mat::Zero(d + 1, d + 1);
        for (int a = 0; a < d; ++a) {
          t(a, d) = 0.5 * data.faces.e(j, a);
          t(d, a) = 0.5 * data.faces.e(j, a);
        }
        t(d, d) = -data.faces.f(j);
        block.terms.emplace_back(
            excess_branch ? lay.face_excess(n, j) : lay.face_zero(n, j), t);
      }
      for (int a = 0; a < d; ++a) {
        t = Mat::Zero(d + 1, d + 1);
        t(a, d) = -1.0;
        t(d, a) = -1.0;
        block.terms.emplace_back(lay.mean_vec(n, a), t);
      }
      for (int a = 0; a < d; ++a) {
        for (int b = a; b < d; ++b) {
          t = Mat::Zero(d + 1, d + 1);
          t(a, b) = 1.0;
          t(b, a) = 1.0;
          t(a, d) += -mu(b);
          t(d, a) += -mu(b);
          if (b != a) {
            t(b, d) += -mu(a);
            t(d, b) += -mu(a);
          }
          block.terms.emplace_back(lay.quad(n, a, b), t);
        }
      }
      return block;
    };
    prog.psd.push_back(pointwise_block(true));
    prog.psd.push_back(pointwise_block(false));

    // Mean-ellipsoid multiplier block [[M, v], [v', s]] >= 0.
    conic::PsdBlock meanb;
    meanb.dim = d + 1;
    meanb.constant = Mat::Zero(d + 1, d + 1);
    for (int a = 0; a < d; ++a) {
      for (int b = a; b < d; ++b) {
        Mat t = Mat::Zero(d + 1, d + 1);
        t(a, b) = 1.0;
        t(b, a) = 1.0;
        meanb.terms.emplace_back(lay.mean_mat(n, a, b), t);
      }
    }
    for (int a = 0; a < d; ++a) {
      Mat t = Mat::Zero(d + 1, d + 1);
      t(a, d) = 1.0;
      t(d, a) = 1.0;
      meanb.terms.emplace_back(lay.mean_vec(n, a), t);
    }
    {
      Mat t = Mat::Zero(d + 1, d + 1);
      t(d, d) = 1.0;
      meanb.terms.emplace_back(lay.mean_scalar(n), t);
    }
    prog.psd.push_back(std::move(meanb));

    // Second-moment multiplier block.
    conic::PsdBlock quadb;
    quadb.dim = d;
    quadb.constant = Mat::Zero(d, d);
    for (int a = 0; a < d; ++a) {
      for (int b = a; b < d; ++b) {
        Mat t = Mat::Zero(d, d);
        t(a, b) = 1.0;
        t(b, a) = 1.0;
        quadb.terms.emplace_back(lay.quad(n, a, b), t);
      }
    }
    prog.psd.push_back(std::move(quadb));
  }

  // Strictly feasible interior point: identity multipliers, unit face
  // duals, balanced weight split, then offsets chosen with margin 10.
  Vec hint = Vec::Zero(lay.num_vars);
  hint(lay.zeta()) = 2.0;
  double vartheta_floor = -std::numeric_limits<double>::infinity();
  std::vector<double> pointwise_norm(static_cast<std::size_t>(m), 0.0);
  for (int n = 0; n < m; ++n) {
    const ComponentData& data = comps[static_cast<std::size_t>(n)];
    const int q = lay.rows[static_cast<std::size_t>(n)];
    hint(lay.weight_pos(n)) = 1.0;
    hint(lay.weight_neg(n)) = 1.0;
    hint(lay.mean_scalar(n)) = 1.0;
    for (int a = 0; a < d; ++a) {
      hint(lay.mean_mat(n, a, a)) = 1.0;
      hint(lay.quad(n, a, a)) = 1.0;
    }
    for (int j = 0; j < q; ++j) {
      hint(lay.face_excess(n, j)) = 1.0;
      hint(lay.face_zero(n, j)) = 1.0;
    }
    const Vec v =
        0.5 * data.faces.e.transpose() * Vec::Ones(q) - data.mean;
    const double s_n = v.squaredNorm() + data.faces.f.sum() + 10.0;
    hint(lay.slack(n)) = s_n;
    pointwise_norm[static_cast<std::size_t>(n)] = s_n;
    const double dual_row = data.beta - data.mean.squaredNorm() +
                            data.cov.trace() + data.bound.trace() + s_n;
    vartheta_floor = std::max(vartheta_floor, dual_row);
  }
  hint(lay.vartheta()) = vartheta_floor + 10.0;
  hint(lay.z()) =
      -tail * (2.0 * set.tv_radius + hint(lay.vartheta())) - 10.0;
  double g_floor = -std::numeric_limits<double>::infinity();
  for (int n = 0; n < m; ++n) {
    const ComponentData& data = comps[static_cast<std::size_t>(n)];
    const int q = lay.rows[static_cast<std::size_t>(n)];
    const Vec w = 0.5 * (data.faces.e.transpose() * Vec::Ones(q) + h) -
                  data.mean;
    const double s_n = pointwise_norm[static_cast<std::size_t>(n)];
    g_floor = std::max(g_floor, s_obs - hint(lay.z()) - s_n +
                                    data.faces.f.sum() + w.squaredNorm());
  }
  hint(lay.g()) = g_floor + 10.0;
  prog.interior_hint = hint;

  prog.validate();
  return prog;
}

std::pair<double, conic::SolveReport> min_bias(
    const ambiguity::MixtureAmbiguitySet& set, const Vec& h,
    const geometry::ConvexBody& obstacle, double alpha_u, double tol) {
  const conic::ConicProgram prog =
      assemble_drcvar_sdp(set, h, obstacle, alpha_u);
  conic::SolveReport report = conic::solve(prog, tol);
  double bias = std::numeric_limits<double>::quiet_NaN();
  if (report.status == conic::SolveStatus::Optimal) {
    bias = report.objective;
  }
  return {bias, report};
}

}  // namespace cooldrmc::drcvar

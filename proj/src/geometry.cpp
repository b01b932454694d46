// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#include "cooldrmc/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cooldrmc/simplex.hpp"

namespace cooldrmc::geometry {

namespace {

constexpr double kUnitTol = 1e-9;
constexpr double kZeroTol = 1e-12;
constexpr int kSegmentSamples = 64;

// Unit directions used by boundary sampling and support sweeps:
// equally spaced angles in 2D, a Fibonacci sphere in 3D.
std::vector<Vec> unit_directions(int dim, int n) {
  std::vector<Vec> dirs;
  dirs.reserve(static_cast<std::size_t>(n));
  if (dim == 2) {
    for (int k = 0; k < n; ++k) {
      const double ang = 2.0 * M_PI * static_cast<double>(k) / n;
      Vec u(2);
      u << std::cos(ang), std::sin(ang);
      dirs.push_back(u);
    }
    return dirs;
  }
  if (dim == 3) {
    const double golden = 0.6180339887498949;
    for (int k = 0; k < n; ++k) {
      const double z = 1.0 - 2.0 * (k + 0.5) / n;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double ang = 2.0 * M_PI * golden * k;
      Vec u(3);
      u << r * std::cos(ang), r * std::sin(ang), z;
      dirs.push_back(u);
    }
    return dirs;
  }
  throw Error("unit_directions: only dimensions 2 and 3 are supported");
}

// Interior anchor used as the origin of boundary ray casts.
Vec interior_anchor(const ConvexBody& body) {
  if (const auto* ball = std::get_if<Ball>(&body)) return ball->center;
  if (const auto* box = std::get_if<Box>(&body)) {
    return 0.5 * (box->lo + box->hi);
  }
  const auto& poly = std::get<Polytope>(body);
  // Chebyshev center: maximize r subject to e_j.x + r|e_j| <= f_j.
  const int d = static_cast<int>(poly.e.cols());
  const int rows = static_cast<int>(poly.e.rows());
  Vec c = Vec::Zero(d + 1);
  c(d) = 1.0;
  Mat a_ub(rows, d + 1);
  for (int j = 0; j < rows; ++j) {
    a_ub.block(j, 0, 1, d) = poly.e.row(j);
    a_ub(j, d) = poly.e.row(j).norm();
  }
  const auto res = SmallLp::maximize(c, a_ub, poly.f);
  if (res.status != SmallLp::Status::Optimal) {
    throw UnboundedBody("interior_anchor: polytope has no bounded center");
  }
  return res.x.head(d);
}

// Largest t >= 0 with anchor + t*u inside the body; exact per body type.
double boundary_ray(const ConvexBody& body, const Vec& anchor, const Vec& u) {
  if (const auto* ball = std::get_if<Ball>(&body)) {
    // |anchor + t u - c|^2 = r^2, anchor interior: take the positive root.
    const Vec w = anchor - ball->center;
    const double b = w.dot(u);
    const double c = w.squaredNorm() - ball->radius * ball->radius;
    const double disc = std::max(0.0, b * b - c);
    return -b + std::sqrt(disc);
  }
  double t = std::numeric_limits<double>::infinity();
  if (const auto* box = std::get_if<Box>(&body)) {
    for (int i = 0; i < box->lo.size(); ++i) {
      if (u(i) > kZeroTol) {
        t = std::min(t, (box->hi(i) - anchor(i)) / u(i));
      } else if (u(i) < -kZeroTol) {
        t = std::min(t, (box->lo(i) - anchor(i)) / u(i));
      }
    }
  } else {
    const auto& poly = std::get<Polytope>(body);
    for (int j = 0; j < poly.e.rows(); ++j) {
      const double du = poly.e.row(j).dot(u);
      if (du > kZeroTol) {
        t = std::min(t, (poly.f(j) - poly.e.row(j).dot(anchor)) / du);
      }
    }
  }
  if (!std::isfinite(t)) {
    throw UnboundedBody("boundary_ray: body is unbounded along the ray");
  }
  return std::max(0.0, t);
}

// Distance from point p to the closed segment [a, b], with the argmin
// parameter written to t_min.
double point_segment_distance(const Vec& p, const Vec& a, const Vec& b,
                              double* t_min = nullptr) {
  const Vec d = b - a;
  const double dd = d.squaredNorm();
  double t = 0.0;
  if (dd > kZeroTol) t = std::clamp((p - a).dot(d) / dd, 0.0, 1.0);
  if (t_min != nullptr) *t_min = t;
  return (a + t * d - p).norm();
}

// Open-segment/ball interior intersection (tangency does not block).
bool segment_hits_ball(const Vec& a, const Vec& b, const Ball& ball) {
  return point_segment_distance(ball.center, a, b) < ball.radius - kZeroTol;
}

// Open-segment/box interior intersection via slab clipping.
bool segment_hits_box(const Vec& a, const Vec& b, const Box& box) {
  const Vec d = b - a;
  double t0 = 0.0;
  double t1 = 1.0;
  for (int i = 0; i < a.size(); ++i) {
    if (std::abs(d(i)) <= kZeroTol) {
      if (a(i) <= box.lo(i) + kZeroTol || a(i) >= box.hi(i) - kZeroTol) {
        return false;
      }
      continue;
    }
    double ti0 = (box.lo(i) - a(i)) / d(i);
    double ti1 = (box.hi(i) - a(i)) / d(i);
    if (ti0 > ti1) std::swap(ti0, ti1);
    t0 = std::max(t0, ti0);
    t1 = std::min(t1, ti1);
    if (t0 >= t1 - kZeroTol) return false;
  }
  return t0 < 1.0 - kZeroTol && t1 > kZeroTol;
}

// Sampled open-segment test for general polytopes: 64 interior points.
bool segment_hits_polytope(const Vec& a, const Vec& b, const Polytope& poly) {
  const ConvexBody body = poly;
  for (int k = 1; k <= kSegmentSamples; ++k) {
    const double t = static_cast<double>(k) / (kSegmentSamples + 1);
    if (contains(body, a + t * (b - a), -1e-9)) return true;
  }
  return false;
}

double sweep_distance(const ConvexBody& a, const ConvexBody& b) {
  const int d = dimension(a);
  const int n = (d == 2) ? 256 : 512;
  double best = -std::numeric_limits<double>::infinity();
  for (const Vec& u : unit_directions(d, n)) {
    const double gap = -support_function(a, -u) - support_function(b, u);
    best = std::max(best, gap);
  }
  return best;
}

}  // namespace

Hyperplane::Hyperplane(Vec normal, double offset) : h(std::move(normal)), g(offset) {
  const double n = h.norm();
  if (n < kUnitTol) throw Error("Hyperplane: normal must be nonzero");
  h /= n;
  g /= n;
}

int dimension(const ConvexBody& body) {
  if (const auto* ball = std::get_if<Ball>(&body)) {
    return static_cast<int>(ball->center.size());
  }
  if (const auto* box = std::get_if<Box>(&body)) {
    return static_cast<int>(box->lo.size());
  }
  return static_cast<int>(std::get<Polytope>(body).e.cols());
}

ConvexBody translate(const ConvexBody& body, const Vec& a) {
  if (const auto* ball = std::get_if<Ball>(&body)) {
    return Ball{ball->center + a, ball->radius};
  }
  if (const auto* box = std::get_if<Box>(&body)) {
    return Box{box->lo + a, box->hi + a};
  }
  const auto& poly = std::get<Polytope>(body);
  return Polytope{poly.e, poly.f + poly.e * a};
}

ConvexBody scale(const ConvexBody& body, double s) {
  if (s <= 0.0) throw Error("scale: factor must be positive");
  if (const auto* ball = std::get_if<Ball>(&body)) {
    return Ball{s * ball->center, s * ball->radius};
  }
  if (const auto* box = std::get_if<Box>(&body)) {
    return Box{s * box->lo, s * box->hi};
  }
  const auto& poly = std::get<Polytope>(body);
  return Polytope{poly.e, s * poly.f};
}

double support_function(const ConvexBody& body, const Vec& h) {
  if (const auto* ball = std::get_if<Ball>(&body)) {
    return ball->center.dot(h) + ball->radius * h.norm();
  }
  if (const auto* box = std::get_if<Box>(&body)) {
    double v = 0.0;
    for (int i = 0; i < h.size(); ++i) {
      v += std::max(box->lo(i) * h(i), box->hi(i) * h(i));
    }
    return v;
  }
  const auto& poly = std::get<Polytope>(body);
  const auto res = SmallLp::maximize(h, poly.e, poly.f);
  if (res.status == SmallLp::Status::Unbounded) {
    throw UnboundedBody("support_function: polytope unbounded along direction");
  }
  if (res.status != SmallLp::Status::Optimal) {
    throw Error("support_function: empty polytope");
  }
  return res.value;
}

Vec support_point(const ConvexBody& body, const Vec& h) {
  if (h.norm() < kUnitTol) {
    throw Error("support_point: direction must be nonzero");
  }
  if (const auto* ball = std::get_if<Ball>(&body)) {
    return ball->center + ball->radius * h / h.norm();
  }
  if (const auto* box = std::get_if<Box>(&body)) {
    Vec p(box->lo.size());
    for (int i = 0; i < p.size(); ++i) {
      // Zero components are ties; the low corner keeps the result
      // lexicographically smallest.
      p(i) = (h(i) > kZeroTol) ? box->hi(i) : box->lo(i);
    }
    return p;
  }
  // Polytope: maximize h.x, then settle ties by minimizing coordinates in
  // lexicographic order subject to staying on the optimal face.
  const auto& poly = std::get<Polytope>(body);
  const int d = static_cast<int>(poly.e.cols());
  auto base = SmallLp::maximize(h, poly.e, poly.f);
  if (base.status == SmallLp::Status::Unbounded) {
    throw UnboundedBody("support_point: polytope unbounded along direction");
  }
  if (base.status != SmallLp::Status::Optimal) {
    throw Error("support_point: empty polytope");
  }
  Vec fixed(d);
  for (int i = 0; i < d; ++i) {
    Mat a_eq(1 + i, d);
    Vec b_eq(1 + i);
    a_eq.row(0) = h.transpose();
    b_eq(0) = base.value;
    for (int j = 0; j < i; ++j) {
      a_eq.row(1 + j) = Vec::Unit(d, j).transpose();
      b_eq(1 + j) = fixed(j);
    }
    Vec c = -Vec::Unit(d, i);
    const auto res = SmallLp::maximize(c, poly.e, poly.f, a_eq, b_eq);
    if (res.status == SmallLp::Status::Unbounded) {
      throw UnboundedBody("support_point: optimal face is unbounded");
    }
    if (res.status != SmallLp::Status::Optimal) {
      throw Error("support_point: tie-break subproblem infeasible");
    }
    fixed(i) = -res.value;
  }
  return fixed;
}

bool contains(const ConvexBody& body, const Vec& p, double tol) {
  if (const auto* ball = std::get_if<Ball>(&body)) {
    return (p - ball->center).norm() <= ball->radius + tol;
  }
  if (const auto* box = std::get_if<Box>(&body)) {
    for (int i = 0; i < p.size(); ++i) {
      if (p(i) < box->lo(i) - tol || p(i) > box->hi(i) + tol) return false;
    }
    return true;
  }
  const auto& poly = std::get<Polytope>(body);
  const Vec slack = poly.f - poly.e * p;
  return slack.minCoeff() >= -tol;
}

Vec closest_point(const ConvexBody& body, const Vec& p) {
  if (const auto* ball = std::get_if<Ball>(&body)) {
    const Vec w = p - ball->center;
    const double n = w.norm();
    if (n <= ball->radius) return p;
    return ball->center + (ball->radius / n) * w;
  }
  if (const auto* box = std::get_if<Box>(&body)) {
    Vec q(p.size());
    for (int i = 0; i < p.size(); ++i) {
      q(i) = std::clamp(p(i), box->lo(i), box->hi(i));
    }
    return q;
  }
  // Polytope: Dykstra's alternating projections over the half-spaces,
  // which converges to the exact Euclidean projection.
  const auto& poly = std::get<Polytope>(body);
  if (contains(body, p, 0.0)) return p;
  const int rows = static_cast<int>(poly.e.rows());
  Vec x = p;
  Mat z = Mat::Zero(rows, p.size());
  for (int sweep = 0; sweep < 500; ++sweep) {
    double shift = 0.0;
    for (int j = 0; j < rows; ++j) {
      const Vec y = x + z.row(j).transpose();
      const double nn = poly.e.row(j).squaredNorm();
      Vec xn = y;
      if (nn > kZeroTol) {
        const double viol = poly.e.row(j).dot(y) - poly.f(j);
        if (viol > 0.0) xn = y - (viol / nn) * poly.e.row(j).transpose();
      }
      z.row(j) = (y - xn).transpose();
      shift = std::max(shift, (xn - x).norm());
      x = xn;
    }
    if (shift < 1e-12) break;
  }
  return x;
}

double distance_to_point(const ConvexBody& body, const Vec& p) {
  return (p - closest_point(body, p)).norm();
}

bool segment_blocked(const Vec& a, const Vec& b, const ConvexBody& blocker) {
  if (const auto* ball = std::get_if<Ball>(&blocker)) {
    return segment_hits_ball(a, b, *ball);
  }
  if (const auto* box = std::get_if<Box>(&blocker)) {
    return segment_hits_box(a, b, *box);
  }
  return segment_hits_polytope(a, b, std::get<Polytope>(blocker));
}

bool segment_blocked(const Vec& a, const Vec& b,
                     const std::vector<std::pair<Vec, ConvexBody>>& blockers) {
  for (const auto& [pos, body] : blockers) {
    if (segment_blocked(a, b, translate(body, pos))) return true;
  }
  return false;
}

std::vector<Vec> boundary_points(const ConvexBody& body, int n) {
  if (n <= 0) throw Error("boundary_points: n must be positive");
  const Vec anchor = interior_anchor(body);
  std::vector<Vec> pts;
  pts.reserve(static_cast<std::size_t>(n));
  for (const Vec& u : unit_directions(dimension(body), n)) {
    pts.push_back(anchor + boundary_ray(body, anchor, u) * u);
  }
  return pts;
}

double body_distance(const ConvexBody& a, const ConvexBody& b) {
  const auto* ball_a = std::get_if<Ball>(&a);
  const auto* ball_b = std::get_if<Ball>(&b);
  const auto* box_a = std::get_if<Box>(&a);
  const auto* box_b = std::get_if<Box>(&b);
  if (ball_a != nullptr && ball_b != nullptr) {
    return (ball_a->center - ball_b->center).norm() - ball_a->radius -
           ball_b->radius;
  }
  if (ball_a != nullptr && box_b != nullptr) {
    const Vec& c = ball_a->center;
    bool inside = true;
    for (int i = 0; i < c.size(); ++i) {
      inside = inside && c(i) >= box_b->lo(i) && c(i) <= box_b->hi(i);
    }
    if (!inside) return distance_to_point(b, c) - ball_a->radius;
    double depth = std::numeric_limits<double>::infinity();
    for (int i = 0; i < c.size(); ++i) {
      depth = std::min(depth, std::min(c(i) - box_b->lo(i), box_b->hi(i) - c(i)));
    }
    return -(ball_a->radius + depth);
  }
  if (box_a != nullptr && ball_b != nullptr) return body_distance(b, a);
  if (box_a != nullptr && box_b != nullptr) {
    double sep_sq = 0.0;
    double overlap = -std::numeric_limits<double>::infinity();
    bool separated = false;
    for (int i = 0; i < box_a->lo.size(); ++i) {
      const double gap =
          std::max(box_a->lo(i) - box_b->hi(i), box_b->lo(i) - box_a->hi(i));
      if (gap > 0.0) {
        separated = true;
        sep_sq += gap * gap;
      }
      overlap = std::max(overlap, gap);
    }
    return separated ? std::sqrt(sep_sq) : overlap;
  }
  return sweep_distance(a, b);
}

}  // namespace cooldrmc::geometry

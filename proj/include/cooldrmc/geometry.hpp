// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#ifndef COOLDRMC_GEOMETRY_HPP_
#define COOLDRMC_GEOMETRY_HPP_

#include <variant>
#include <vector>

#include "cooldrmc/linalg.hpp"

namespace cooldrmc::geometry {

/// Raised when a support query hits an unbounded polytope direction.
class UnboundedBody : public Error {
public:
  using Error::Error;
};

/// Solid ball { x : |x - center| <= radius }.
struct Ball {
  Vec center;
  double radius = 0.0;
};

/// Axis-aligned box { x : lo <= x <= hi } (componentwise).
struct Box {
  Vec lo;
  Vec hi;
};

/// H-polytope { x : E x <= f }.
struct Polytope {
  Mat e;
  Vec f;
};

/// Convex rigid body in R^d, d in {2, 3}.
using ConvexBody = std::variant<Ball, Box, Polytope>;

/**
 * @brief Separating hyperplane { x : h.x + g = 0 } with unit normal h.
 *
 * The constructor normalizes h; a zero normal is rejected.
 */
struct Hyperplane {
  Vec h;
  double g = 0.0;

  Hyperplane() = default;
  Hyperplane(Vec normal, double offset);

  /// Signed evaluation h.p + g.
  double side(const Vec& p) const { return h.dot(p) + g; }
};

/// Ambient dimension of the body.
int dimension(const ConvexBody& body);

/// Returns the body shifted by a: { a + x : x in body }.
ConvexBody translate(const ConvexBody& body, const Vec& a);

/// Returns the body scaled about the origin by s > 0: { s x : x in body }.
ConvexBody scale(const ConvexBody& body, double s);

/**
 * @brief Support function max_{y in body} y.h.
 *
 * Polytopes are solved with an exact small LP; directions along which the
 * polytope is unbounded raise UnboundedBody.
 */
double support_function(const ConvexBody& body, const Vec& h);

/**
 * @brief A maximizer of y.h over the body.
 *
 * Ties (flat faces) resolve to the lexicographically smallest maximizer.
 */
Vec support_point(const ConvexBody& body, const Vec& h);

/// Membership test with tolerance.
bool contains(const ConvexBody& body, const Vec& p, double tol = 1e-9);

/// Closest point of the body to p (p itself when inside). Exact for balls
/// and boxes; polytopes project via an active-set sweep over support
/// directions and may be slightly conservative.
Vec closest_point(const ConvexBody& body, const Vec& p);

/// Euclidean distance from p to the body (0 when inside).
double distance_to_point(const ConvexBody& body, const Vec& p);

/**
 * @brief True iff the open segment (a, b) intersects any translated blocker.
 *
 * Ball and box blockers use exact quadratic/slab tests; general polytopes
 * are sampled at 64 uniform interior points (documented approximation).
 */
bool segment_blocked(const Vec& a, const Vec& b,
                     const std::vector<std::pair<Vec, ConvexBody>>& blockers);

/// Single-blocker convenience form; the body is used where it stands.
bool segment_blocked(const Vec& a, const Vec& b, const ConvexBody& blocker);

/**
 * @brief n boundary sample points, deterministic order.
 *
 * Points are ray casts from an interior anchor (center, box midpoint, or
 * Chebyshev center) along equally spaced angles in 2D or a Fibonacci
 * sphere in 3D; for balls this reduces to uniform circle/sphere samples.
 */
std::vector<Vec> boundary_points(const ConvexBody& body, int n = 16);

/**
 * @brief Signed clearance between two bodies.
 *
 * Positive when separated, negative when overlapping. Exact for
 * ball/ball, ball/box, and box/box pairs; other pairs fall back to a
 * support-direction sweep and are conservative (may under-report clearance).
 */
double body_distance(const ConvexBody& a, const ConvexBody& b);

}  // namespace cooldrmc::geometry

#endif  // COOLDRMC_GEOMETRY_HPP_

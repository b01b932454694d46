// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cooldrmc/geometry.hpp"
#include "cooldrmc/rng.hpp"

using namespace cooldrmc;
using namespace cooldrmc::geometry;

namespace {

Vec v2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

ConvexBody random_body(Rng& rng) {
  const int kind = static_cast<int>(rng.uniform_index(3));
  if (kind == 0) {
    return Ball{v2(rng.uniform(-5, 5), rng.uniform(-5, 5)),
                rng.uniform(0.1, 2.0)};
  }
  if (kind == 1) {
    const Vec c = v2(rng.uniform(-5, 5), rng.uniform(-5, 5));
    const Vec half = v2(rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0));
    return Box{c - half, c + half};
  }
  // Random bounded polytope: a box section plus a few sampled cuts.
  const Vec c = v2(rng.uniform(-5, 5), rng.uniform(-5, 5));
  const int extra = 3 + static_cast<int>(rng.uniform_index(4));
  Mat e(4 + extra, 2);
  Vec f(4 + extra);
  e.row(0) << 1, 0;
  e.row(1) << -1, 0;
  e.row(2) << 0, 1;
  e.row(3) << 0, -1;
  const double half = rng.uniform(0.5, 2.0);
  f(0) = c(0) + half;
  f(1) = -c(0) + half;
  f(2) = c(1) + half;
  f(3) = -c(1) + half;
  for (int j = 0; j < extra; ++j) {
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    e.row(4 + j) << std::cos(ang), std::sin(ang);
    f(4 + j) = e.row(4 + j).dot(c) + rng.uniform(0.3, half);
  }
  return Polytope{e, f};
}

Vec random_unit(Rng& rng) {
  const double ang = rng.uniform(0.0, 2.0 * M_PI);
  return v2(std::cos(ang), std::sin(ang));
}

}  // namespace

TEST_CASE("support function of a unit ball is 1 in any unit direction") {
  const ConvexBody ball = Ball{v2(0, 0), 1.0};
  Rng rng = Rng::derive(7, {"geom", "ball"});
  for (int i = 0; i < 50; ++i) {
    CHECK(support_function(ball, random_unit(rng)) == doctest::Approx(1.0));
  }
}

TEST_CASE("support function of a box mixes corner coordinates") {
  const ConvexBody box = Box{v2(-1, -1), v2(1, 1)};
  CHECK(support_function(box, v2(0.6, 0.8)) == doctest::Approx(1.4));
}

TEST_CASE("support function of a shifted ball adds the center term") {
  const ConvexBody ball = Ball{v2(2, 0), 1.0};
  CHECK(support_function(ball, v2(1, 0)) == doctest::Approx(3.0));
}

TEST_CASE("support point ties resolve to the lexicographically smallest") {
  const ConvexBody box = Box{v2(-1, -1), v2(1, 1)};
  const Vec p = support_point(box, v2(1, 0));
  CHECK(p(0) == doctest::Approx(1.0));
  CHECK(p(1) == doctest::Approx(-1.0));
}

TEST_CASE("polytope support matches the box formula on a box polytope") {
  Mat e(4, 2);
  Vec f(4);
  e << 1, 0, -1, 0, 0, 1, 0, -1;
  f << 1, 1, 1, 1;
  const ConvexBody poly = Polytope{e, f};
  CHECK(support_function(poly, v2(0.6, 0.8)) == doctest::Approx(1.4));
  const Vec p = support_point(poly, v2(1, 0));
  CHECK(p(0) == doctest::Approx(1.0));
  CHECK(p(1) == doctest::Approx(-1.0));
}

TEST_CASE("unbounded polytope directions raise UnboundedBody") {
  Mat e(1, 2);
  Vec f(1);
  e << 1, 0;
  f << 1;
  const ConvexBody poly = Polytope{e, f};
  CHECK_THROWS_AS((void)support_function(poly, v2(-1, 0)), UnboundedBody);
}

TEST_CASE("segment blocking matches worked cases") {
  const Vec a = v2(0, 0);
  const Vec b = v2(10, 0);
  SUBCASE("slab across the path blocks") {
    const ConvexBody slab = Box{v2(4, -2), v2(5, 2)};
    std::vector<std::pair<Vec, ConvexBody>> blockers;
    blockers.emplace_back(v2(0, 0), slab);
    CHECK(segment_blocked(a, b, blockers));
  }
  SUBCASE("no blockers means clear") {
    const std::vector<std::pair<Vec, ConvexBody>> none;
    CHECK_FALSE(segment_blocked(a, b, none));
  }
  SUBCASE("offset ball misses the path") {
    const ConvexBody ball = Ball{v2(5, 3), 1.0};
    std::vector<std::pair<Vec, ConvexBody>> blockers;
    blockers.emplace_back(v2(0, 0), ball);
    CHECK_FALSE(segment_blocked(a, b, blockers));
  }
}

TEST_CASE("segment blocking is symmetric in the endpoints") {
  Rng rng = Rng::derive(11, {"geom", "sym"});
  for (int i = 0; i < 200; ++i) {
    const Vec a = v2(rng.uniform(-8, 8), rng.uniform(-8, 8));
    const Vec b = v2(rng.uniform(-8, 8), rng.uniform(-8, 8));
    std::vector<std::pair<Vec, ConvexBody>> blockers;
    const int nb = 1 + static_cast<int>(rng.uniform_index(3));
    for (int j = 0; j < nb; ++j) {
      blockers.emplace_back(v2(rng.uniform(-2, 2), rng.uniform(-2, 2)),
                            random_body(rng));
    }
    CHECK(segment_blocked(a, b, blockers) == segment_blocked(b, a, blockers));
  }
}

TEST_CASE("translation shifts the support function by the offset term") {
  Rng rng = Rng::derive(3, {"geom", "translate"});
  for (int i = 0; i < 1000; ++i) {
    const ConvexBody body = random_body(rng);
    const Vec a = v2(rng.uniform(-4, 4), rng.uniform(-4, 4));
    const Vec h = random_unit(rng);
    const double lhs = support_function(translate(body, a), h);
    const double rhs = support_function(body, h) + a.dot(h);
    CHECK(std::abs(lhs - rhs) < 1e-9);
  }
}

TEST_CASE("support points achieve the support value and stay inside") {
  Rng rng = Rng::derive(5, {"geom", "witness"});
  for (int i = 0; i < 1000; ++i) {
    const ConvexBody body = random_body(rng);
    const Vec h = random_unit(rng);
    const Vec p = support_point(body, h);
    CHECK(contains(body, p, 1e-7));
    CHECK(std::abs(p.dot(h) - support_function(body, h)) < 1e-9);
  }
}

TEST_CASE("boundary points lie on the boundary") {
  Rng rng = Rng::derive(9, {"geom", "boundary"});
  for (int i = 0; i < 100; ++i) {
    const ConvexBody body = random_body(rng);
    for (const Vec& p : boundary_points(body, 16)) {
      CHECK(contains(body, p, 1e-7));
      CHECK(distance_to_point(body, p) <= 1e-7);
    }
  }
  const auto pts = boundary_points(Ball{v2(1, 1), 2.0}, 16);
  REQUIRE(pts.size() == 16);
  for (const Vec& p : pts) {
    CHECK((p - v2(1, 1)).norm() == doctest::Approx(2.0));
  }
}

TEST_CASE("closest point and membership agree") {
  Rng rng = Rng::derive(13, {"geom", "closest"});
  for (int i = 0; i < 300; ++i) {
    const ConvexBody body = random_body(rng);
    const Vec p = v2(rng.uniform(-10, 10), rng.uniform(-10, 10));
    const Vec q = closest_point(body, p);
    CHECK(contains(body, q, 1e-6));
    if (contains(body, p, 0.0)) {
      CHECK((p - q).norm() <= 1e-9);
    } else {
      CHECK(distance_to_point(body, p) > 0.0);
    }
  }
}

TEST_CASE("pairwise body distance is exact for ball and box pairs") {
  CHECK(body_distance(Ball{v2(0, 0), 1.0}, Ball{v2(4, 0), 1.0}) ==
        doctest::Approx(2.0));
  CHECK(body_distance(Ball{v2(0, 0), 1.0}, Ball{v2(1, 0), 1.0}) ==
        doctest::Approx(-1.0));
  CHECK(body_distance(Box{v2(0, 0), v2(1, 1)}, Box{v2(3, 0), v2(4, 1)}) ==
        doctest::Approx(2.0));
  CHECK(body_distance(Ball{v2(0, 0), 0.5}, Box{v2(2, -1), v2(3, 1)}) ==
        doctest::Approx(1.5));
  const double d = body_distance(Ball{v2(2.5, 0.0), 0.5},
                                 Box{v2(2, -1), v2(3, 1)});
  CHECK(d < 0.0);
}

TEST_CASE("hyperplane construction normalizes and rejects zero normals") {
  const Hyperplane plane(v2(0, 2), -4.0);
  CHECK(plane.h(1) == doctest::Approx(1.0));
  CHECK(plane.g == doctest::Approx(-2.0));
  CHECK(plane.side(v2(0, 2)) == doctest::Approx(0.0));
  CHECK_THROWS_AS(Hyperplane(v2(0, 0), 1.0), Error);
}

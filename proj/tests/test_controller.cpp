// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "cooldrmc/ambiguity.hpp"
#include "cooldrmc/controller.hpp"
#include "cooldrmc/dpmm.hpp"
#include "cooldrmc/geometry.hpp"
#include "cooldrmc/rng.hpp"

using namespace cooldrmc;
using namespace cooldrmc::controller;

namespace {

Vec vec2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

Vec vec4(double a, double b, double c, double d) {
  Vec v(4);
  v << a, b, c, d;
  return v;
}

// Planar double integrator with position output and a straight-line
// constant-velocity reference from `start` at `vel`.
RobotSpec integrator_robot(int id, int horizon, const Vec& start,
                           const Vec& vel, double body_radius) {
  const double ts = 0.1;
  RobotSpec spec;
  spec.id = id;
  spec.body = geometry::Ball{vec2(0.0, 0.0), body_radius};
  spec.a = Mat::Identity(4, 4);
  spec.a(0, 2) = ts;
  spec.a(1, 3) = ts;
  spec.b = Mat::Zero(4, 2);
  spec.b(0, 0) = ts * ts / 2.0;
  spec.b(1, 1) = ts * ts / 2.0;
  spec.b(2, 0) = ts;
  spec.b(3, 1) = ts;
  spec.c = Mat::Zero(2, 4);
  spec.c(0, 0) = 1.0;
  spec.c(1, 1) = 1.0;
  spec.x_lo = vec4(-1e3, -1e3, -5.0, -5.0);
  spec.x_hi = vec4(1e3, 1e3, 5.0, 5.0);
  spec.u_lo = vec2(-4.0, -4.0);
  spec.u_hi = vec2(4.0, 4.0);
  spec.horizon = horizon;
  spec.q = Vec(vec4(1.0, 1.0, 0.0, 0.0)).asDiagonal();
  spec.r = 0.1 * Mat::Identity(2, 2);
  spec.p = spec.q;
  spec.safety_margin = 0.1;
  for (int t = 0; t <= 300; ++t) {
    spec.reference.states.push_back(
        vec4(start(0) + ts * t * vel(0), start(1) + ts * t * vel(1), vel(0),
             vel(1)));
  }
  spec.reference.inputs.push_back(vec2(0.0, 0.0));
  return spec;
}

ObstacleSpec ball_obstacle(double radius, double motion_halfwidth) {
  ObstacleSpec o;
  o.body = geometry::Ball{vec2(0.0, 0.0), radius};
  o.motion_support =
      geometry::Box{vec2(-motion_halfwidth, -motion_halfwidth),
                    vec2(motion_halfwidth, motion_halfwidth)};
  return o;
}

ControllerConfig base_config() {
  ControllerConfig cfg;
  cfg.compression_cap = 10;
  cfg.confidence.chi = 0.95;
  cfg.confidence.alpha_comp = 0.95;
  cfg.confidence.alpha_cvar = 0.95;
  cfg.learning.budget = 48;
  cfg.learning.truncation = 8;
  cfg.learning.seed = 11;
  return cfg;
}

CommittedTrajectory constant_committed(const Vec& point, int horizon) {
  CommittedTrajectory c;
  c.outputs.assign(static_cast<std::size_t>(horizon) + 1, point);
  return c;
}

// Near-point ambiguity set: one tight component about `mean` with a small
// box support; the certified bias approaches the deterministic value.
ambiguity::MixtureAmbiguitySet tight_set(const Vec& mean, double scale) {
  ambiguity::MixtureAmbiguitySet set;
  set.weights = Vec::Ones(1);
  set.tv_radius = 0.0;
  ambiguity::BasicAmbiguitySet comp;
  comp.support = geometry::Box{(mean.array() - 1e-4).matrix(),
                               (mean.array() + 1e-4).matrix()};
  comp.mean = mean;
  comp.cov = scale * Mat::Identity(2, 2);
  comp.beta = scale;
  comp.form = ambiguity::MomentForm::Explicit;
  comp.second_moment = 1.3 * scale * Mat::Identity(2, 2);
  set.components.push_back(std::move(comp));
  return set;
}

int count_matches(const std::vector<std::string>& notes,
                  const std::string& needle) {
  int hits = 0;
  for (const std::string& s : notes) {
    if (s.find(needle) != std::string::npos) ++hits;
  }
  return hits;
}

}  // namespace

// ---------------------------------------------------------------------------
// Committed trajectories
// ---------------------------------------------------------------------------

TEST_CASE("the first committed trajectory is the reference") {
  const RobotSpec spec =
      integrator_robot(0, 5, vec2(1.0, -2.0), vec2(0.5, 0.25), 0.3);
  const ControllerState st = initial_state(spec, 0, base_config());
  REQUIRE(st.committed.outputs.size() == 6);
  for (int k = 0; k <= 5; ++k) {
    const Vec expect = spec.c * spec.reference.state_at(k);
    CHECK((st.committed.outputs[static_cast<std::size_t>(k)] - expect)
              .norm() == doctest::Approx(0.0).epsilon(1e-15));
  }
}

TEST_CASE("committing shifts the previous solution forward one step") {
  const RobotSpec spec =
      integrator_robot(0, 4, vec2(0.0, 0.0), vec2(0.0, 0.0), 0.3);
  std::vector<Vec> prev;
  for (int k = 0; k <= 4; ++k) {
    prev.push_back(vec4(k, 2.0 * k, 0.5 * k, -k));
  }
  const CommittedTrajectory c = commit(spec, prev, 3);
  REQUIRE(c.outputs.size() == 5);
  for (int k = 0; k < 4; ++k) {
    const Vec expect = spec.c * prev[static_cast<std::size_t>(k) + 1];
    CHECK((c.outputs[static_cast<std::size_t>(k)] - expect).norm() <= 1e-15);
  }
}

TEST_CASE("the terminal extension holds a resting robot in place") {
  const RobotSpec spec =
      integrator_robot(0, 4, vec2(0.0, 0.0), vec2(0.0, 0.0), 0.3);
  std::vector<Vec> prev;
  for (int k = 0; k < 4; ++k) {
    prev.push_back(vec4(0.1 * k, -0.2 * k, 1.0, 0.5));
  }
  prev.push_back(vec4(3.0, 4.0, 0.0, 0.0));
  const CommittedTrajectory c = commit(spec, prev, 1);
  REQUIRE(c.outputs.size() == 5);
  CHECK((c.outputs[3] - vec2(3.0, 4.0)).norm() <= 1e-15);
  CHECK((c.outputs[4] - c.outputs[3]).norm() <= 1e-12);
}

TEST_CASE("malformed specs and inputs are rejected") {
  RobotSpec spec = integrator_robot(0, 4, vec2(0.0, 0.0), vec2(0.0, 0.0), 0.3);
  SUBCASE("zero safety margin") {
    spec.safety_margin = 0.0;
    CHECK_THROWS_AS(spec.validate(), MalformedInputs);
  }
  SUBCASE("body away from the origin") {
    spec.body = geometry::Ball{vec2(5.0, 0.0), 0.2};
    CHECK_THROWS_AS(spec.validate(), MalformedInputs);
  }
  SUBCASE("wrong previous-solution length") {
    CHECK_THROWS_AS(commit(spec, {vec4(0, 0, 0, 0)}, 1), MalformedInputs);
  }
  SUBCASE("nonpositive component cap") {
    ControllerConfig cfg = base_config();
    cfg.compression_cap = 0;
    CHECK_THROWS_AS(initial_state(spec, 1, cfg), MalformedInputs);
  }
  SUBCASE("duplicate observations") {
    const ControllerState st = initial_state(spec, 1, base_config());
    ControllerInputs in;
    in.state = vec4(0, 0, 0, 0);
    in.observations.push_back({0, vec2(1.0, 1.0), std::nullopt});
    in.observations.push_back({0, vec2(1.0, 1.0), std::nullopt});
    CHECK_THROWS_AS(step(spec, {ball_obstacle(0.5, 0.1)}, st, in),
                    MalformedInputs);
  }
  SUBCASE("peer sharing the robot id") {
    const ControllerState st = initial_state(spec, 0, base_config());
    ControllerInputs in;
    in.state = vec4(0, 0, 0, 0);
    PeerInfo peer;
    peer.id = spec.id;
    peer.body = spec.body;
    peer.committed = constant_committed(vec2(4.0, 0.0), spec.horizon);
    CHECK_THROWS_AS(step(spec, {}, st, in), MalformedInputs);
    in.peers.push_back(peer);
    CHECK_THROWS_AS(step(spec, {}, st, in), MalformedInputs);
  }
}

// ---------------------------------------------------------------------------
// Inter-robot planes
// ---------------------------------------------------------------------------

TEST_CASE("facing unit discs split the midline") {
  const geometry::ConvexBody ball = geometry::Ball{vec2(0.0, 0.0), 1.0};
  const CommittedTrajectory mine = constant_committed(vec2(0.0, 0.0), 4);
  const CommittedTrajectory theirs = constant_committed(vec2(4.0, 0.0), 4);
  const PlaneResult res =
      inter_robot_hyperplane(mine, theirs, ball, ball, 1, 0.2, nullptr);
  CHECK(res.source == PlaneSource::Fresh);
  CHECK(res.valid);
  CHECK(res.plane.h(0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(res.plane.h(1) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(res.plane.g == doctest::Approx(-2.0).epsilon(1e-14));
  CHECK(res.plane.side(vec2(2.0, 0.0)) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("swapping robots mirrors the separating plane") {
  const geometry::ConvexBody small = geometry::Ball{vec2(0.0, 0.0), 0.4};
  const geometry::ConvexBody large = geometry::Ball{vec2(0.0, 0.0), 0.7};
  const CommittedTrajectory a = constant_committed(vec2(-1.0, 2.0), 3);
  const CommittedTrajectory b = constant_committed(vec2(3.0, -0.5), 3);
  const PlaneResult ab =
      inter_robot_hyperplane(a, b, small, large, 2, 0.1, nullptr);
  const PlaneResult ba =
      inter_robot_hyperplane(b, a, large, small, 2, 0.1, nullptr);
  CHECK((ab.plane.h + ba.plane.h).norm() <= 1e-15);
  CHECK(ab.plane.g == doctest::Approx(-ba.plane.g).epsilon(1e-14));
}

TEST_CASE("overlapping bodies reuse the cached plane") {
  const geometry::ConvexBody ball = geometry::Ball{vec2(0.0, 0.0), 1.0};
  const CommittedTrajectory mine = constant_committed(vec2(0.0, 0.0), 4);
  const CommittedTrajectory theirs = constant_committed(vec2(0.5, 0.0), 4);
  const geometry::Hyperplane cached(vec2(0.0, 1.0), 7.0);
  const PlaneResult res =
      inter_robot_hyperplane(mine, theirs, ball, ball, 1, 0.2, &cached);
  CHECK(res.source == PlaneSource::Cached);
  CHECK_FALSE(res.valid);
  CHECK(res.plane.h(1) == doctest::Approx(1.0));
  CHECK(res.plane.g == doctest::Approx(7.0));

  // Without a cache the direct sweep still reports the best direction.
  const PlaneResult direct =
      inter_robot_hyperplane(mine, theirs, ball, ball, 1, 0.2, nullptr);
  CHECK(direct.source == PlaneSource::Direct);
  CHECK_FALSE(direct.valid);
  CHECK(std::abs(direct.plane.h(0)) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("coincident committed points fall back to cache then an axis") {
  const geometry::ConvexBody ball = geometry::Ball{vec2(0.0, 0.0), 0.5};
  const CommittedTrajectory both = constant_committed(vec2(1.0, 1.0), 3);
  const geometry::Hyperplane cached(vec2(0.0, 1.0), -3.0);
  const PlaneResult hit =
      inter_robot_hyperplane(both, both, ball, ball, 1, 0.2, &cached);
  CHECK(hit.source == PlaneSource::Cached);
  CHECK(hit.plane.g == doctest::Approx(-3.0));
  const PlaneResult axis =
      inter_robot_hyperplane(both, both, ball, ball, 1, 0.2, nullptr);
  CHECK(axis.source == PlaneSource::Default);
  CHECK_FALSE(axis.valid);
  CHECK(axis.plane.h(0) == doctest::Approx(1.0));
}

TEST_CASE("paired planes keep both robots apart at every offset") {
  const geometry::ConvexBody body_a = geometry::Ball{vec2(0.0, 0.0), 0.3};
  const geometry::ConvexBody body_b = geometry::Ball{vec2(0.0, 0.0), 0.45};
  const double margin = 0.15;
  int valid_pairs = 0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Rng rng = Rng::derive(seed, {"pair-traj"});
    CommittedTrajectory a, b;
    for (int k = 0; k <= 6; ++k) {
      a.outputs.push_back(vec2(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)));
      b.outputs.push_back(vec2(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)));
    }
    for (int k = 1; k <= 5; ++k) {
      const Vec diff = b.outputs[static_cast<std::size_t>(k)] -
                       a.outputs[static_cast<std::size_t>(k)];
      if (diff.norm() < 1e-9) continue;
      const PlaneResult ab =
          inter_robot_hyperplane(a, b, body_a, body_b, k, margin, nullptr);
      const PlaneResult ba =
          inter_robot_hyperplane(b, a, body_b, body_a, k, margin, nullptr);
      CHECK((ab.plane.h + ba.plane.h).norm() <= 1e-12);
      CHECK(std::abs(ab.plane.g + ba.plane.g) <= 1e-12);
      if (ab.valid) {
        ++valid_pairs;
        CHECK(ba.valid);
        const auto placed_a = geometry::translate(
            body_a, a.outputs[static_cast<std::size_t>(k)]);
        const auto placed_b = geometry::translate(
            body_b, b.outputs[static_cast<std::size_t>(k)]);
        CHECK(geometry::body_distance(placed_a, placed_b) >= margin - 1e-6);
      }
    }
  }
  // The random stream must exercise the separated branch, not only overlaps.
  CHECK(valid_pairs >= 50);
}

// ---------------------------------------------------------------------------
// Robot-obstacle planes
// ---------------------------------------------------------------------------

TEST_CASE("a point-support obstacle yields the touching plane") {
  const RobotSpec spec =
      integrator_robot(0, 5, vec2(0.0, 0.0), vec2(0.0, 0.0), 0.1);
  ObstacleSpec obst = ball_obstacle(0.5, 0.05);
  ControllerState st = initial_state(spec, 1, base_config());
  ObstacleBook& book = st.obstacles[0];
  book.last_seen = 0;
  book.last_position = vec2(2.0, 0.0);
  book.sets_time = 0;
  for (int k = 1; k <= 4; ++k) {
    book.sets.push_back(tight_set(vec2(2.0, 0.0), 1e-4));
    book.supports.push_back(geometry::Box{vec2(1.9, -0.1), vec2(2.1, 0.1)});
  }
  const PlaneResult res =
      robot_obstacle_hyperplane(spec, obst, st, 0, 1, st.committed, 0.95);
  CHECK(res.source == PlaneSource::Fresh);
  CHECK(res.valid);
  CHECK(res.plane.h(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.plane.h(1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(res.plane.g == doctest::Approx(-1.5).epsilon(2e-2));
  CHECK(res.plane.side(vec2(1.5, 0.0)) == doctest::Approx(0.0).epsilon(2e-2));
  CHECK(res.solve_ms > 0.0);
}

TEST_CASE("a stale obstacle reads the set shifted by its age") {
  const RobotSpec spec =
      integrator_robot(0, 6, vec2(0.0, 0.0), vec2(0.0, 0.0), 0.1);
  ObstacleSpec obst = ball_obstacle(0.5, 0.1);
  ControllerState st = initial_state(spec, 1, base_config());
  ObstacleBook& book = st.obstacles[0];
  // Sets built two steps ago with distinguishable per-offset anchors.
  st.t = 4;
  book.last_seen = 2;
  book.last_position = vec2(13.0, 0.0);
  book.sets_time = 2;
  for (int k = 1; k <= 5; ++k) {
    book.sets.push_back(tight_set(vec2(10.0 + k, 0.0), 1e-4));
    book.supports.push_back(
        geometry::Box{vec2(10.0 + k - 0.1, -0.1), vec2(10.0 + k + 0.1, 0.1)});
  }
  // Offset 1 two steps later reads the stored offset 3 (anchor 13).
  const PlaneResult res =
      robot_obstacle_hyperplane(spec, obst, st, 0, 1, st.committed, 0.95);
  CHECK(res.source == PlaneSource::Stale);
  CHECK(res.valid);
  CHECK(res.plane.g == doctest::Approx(-12.5).epsilon(2e-2));

  // Offset 4 reaches past the stored horizon and separates against the
  // motion tube grown six steps from the last sighting: 13 - 6*0.1 - 0.5.
  const PlaneResult far =
      robot_obstacle_hyperplane(spec, obst, st, 0, 4, st.committed, 0.95);
  CHECK(far.source == PlaneSource::Direct);
  CHECK(far.valid);
  CHECK(far.plane.h(0) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(far.plane.g == doctest::Approx(-11.9).epsilon(5e-3));
}

TEST_CASE("an unseen obstacle separates against its position support") {
  const RobotSpec spec =
      integrator_robot(0, 5, vec2(0.0, 0.0), vec2(0.0, 0.0), 0.1);
  ObstacleSpec obst = ball_obstacle(0.5, 0.1);
  SUBCASE("with a static bound the tail produces a plane") {
    obst.position_support = geometry::Box{vec2(5.0, -1.0), vec2(6.0, 1.0)};
    const ControllerState st = initial_state(spec, 1, base_config());
    const PlaneResult res =
        robot_obstacle_hyperplane(spec, obst, st, 0, 2, st.committed, 0.95);
    CHECK(res.source == PlaneSource::Direct);
    CHECK(res.valid);
    CHECK(res.plane.h(0) >= 0.99);
    // Every corner of the bound stays at least the body radius beyond.
    for (double cx : {5.0, 6.0}) {
      for (double cy : {-1.0, 1.0}) {
        CHECK(res.plane.side(vec2(cx, cy)) >= 0.5 - 2e-2);
      }
    }
  }
  SUBCASE("with no information at all the chain reports a conflict") {
    const ControllerState st = initial_state(spec, 1, base_config());
    CHECK_THROWS_AS(robot_obstacle_hyperplane(spec, obst, st, 0, 2,
                                              st.committed, 0.95),
                    ConstraintConflict);
  }
}

TEST_CASE("vanishing uncertainty recovers the deterministic plane") {
  const RobotSpec spec =
      integrator_robot(0, 5, vec2(0.0, 0.0), vec2(0.0, 0.0), 0.1);
  ObstacleSpec obst = ball_obstacle(0.4, 0.05);
  ControllerState st = initial_state(spec, 1, base_config());
  ObstacleBook& book = st.obstacles[0];
  const Vec mean = vec2(3.0, 1.0);
  book.last_seen = 0;
  book.last_position = mean;
  book.sets_time = 0;
  for (int k = 1; k <= 4; ++k) {
    book.sets.push_back(tight_set(mean, 1e-6));
    book.supports.push_back(geometry::Box{(mean.array() - 1e-4).matrix(),
                                          (mean.array() + 1e-4).matrix()});
  }
  const PlaneResult res =
      robot_obstacle_hyperplane(spec, obst, st, 0, 1, st.committed, 0.95);
  CHECK(res.source == PlaneSource::Fresh);
  const Vec h = mean.normalized();
  CHECK((res.plane.h - h).norm() <= 1e-9);
  // Deterministic separation of the predicted body: touching bias.
  const double expected = -mean.norm() + 0.4;
  CHECK(std::abs(res.plane.g - expected) <= 1e-3);
}

// ---------------------------------------------------------------------------
// Full steps
// ---------------------------------------------------------------------------

TEST_CASE("a clear path tracks the reference at zero cost") {
  const RobotSpec spec =
      integrator_robot(0, 6, vec2(0.0, 0.0), vec2(1.0, 0.0), 0.3);
  const ControllerState st = initial_state(spec, 0, base_config());
  ControllerInputs in;
  in.state = vec4(0.0, 0.0, 1.0, 0.0);
  const StepResult res = step(spec, {}, st, in);
  CHECK(res.trace.feasible);
  CHECK(res.input.cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(std::abs(res.trace.cost) <= 1e-7);
  CHECK(res.trace.fallbacks.empty());
  CHECK(res.state.t == 1);
  REQUIRE(res.state.committed.outputs.size() == 7);
  // The new committed trajectory continues down the reference line.
  const Vec expect = spec.c * spec.reference.state_at(2);
  CHECK((res.state.committed.outputs[1] - expect).norm() <= 1e-5);
}

TEST_CASE("an occluded obstacle leaves the learning record unchanged") {
  const RobotSpec spec =
      integrator_robot(0, 5, vec2(0.0, 0.0), vec2(0.0, 0.0), 0.3);
  ObstacleSpec obst = ball_obstacle(0.5, 0.05);
  obst.position_support = geometry::Box{vec2(4.0, -1.0), vec2(6.0, 1.0)};
  const ControllerState st0 = initial_state(spec, 1, base_config());

  ControllerInputs in0;
  in0.state = vec4(0.0, 0.0, 0.0, 0.0);
  in0.observations.push_back({0, vec2(5.0, 0.0), std::nullopt});
  const StepResult r0 = step(spec, {obst}, st0, in0);
  CHECK(r0.trace.ndat[0] == 0);
  CHECK(r0.state.obstacles[0].last_seen == 0);

  ControllerInputs in1;
  in1.state = spec.a * in0.state + spec.b * r0.input;
  in1.observations.push_back({0, vec2(5.01, 0.0), vec2(0.01, 0.0)});
  const StepResult r1 = step(spec, {obst}, r0.state, in1);
  CHECK(r1.trace.ndat[0] == 1);
  const std::string before = dpmm::to_json(r1.state.obstacles[0].structure);

  // Occlusion: no observation arrives, so nothing about the obstacle moves.
  ControllerInputs in2;
  in2.state = spec.a * in1.state + spec.b * r1.input;
  const StepResult r2 = step(spec, {obst}, r1.state, in2);
  CHECK(r2.trace.ndat[0] == 1);
  CHECK(r2.state.obstacles[0].last_seen == 1);
  CHECK(dpmm::to_json(r2.state.obstacles[0].structure) == before);
  // Planes for the unseen obstacle now come from stale sets or the cache.
  CHECK(count_matches(r2.trace.plane_sources, "obs 0") == spec.horizon - 1);
}

TEST_CASE("peers with more data donate their learning structure") {
  const RobotSpec spec =
      integrator_robot(0, 4, vec2(0.0, 0.0), vec2(0.0, 0.0), 0.3);
  ObstacleSpec obst = ball_obstacle(0.5, 0.6);
  obst.position_support = geometry::Box{vec2(3.0, -2.0), vec2(7.0, 2.0)};
  const ControllerState st = initial_state(spec, 1, base_config());

  // A donor record with five observations.
  dpmm::LearningStructure donor;
  Rng rng = Rng::derive(5, {"donor"});
  for (int i = 0; i < 5; ++i) {
    donor = dpmm::update(donor,
                         vec2(0.5 + 0.01 * rng.normal(), 0.01 * rng.normal()),
                         base_config().learning);
  }

  PeerInfo peer;
  peer.id = 1;
  peer.body = geometry::Ball{vec2(0.0, 0.0), 0.3};
  peer.committed = constant_committed(vec2(0.0, 3.0), spec.horizon);
  peer.structure_counts = {donor.total_count()};
  peer.structures = {dpmm::to_json(donor)};

  ControllerInputs in;
  in.state = vec4(0.0, 0.0, 0.0, 0.0);
  in.observations.push_back({0, vec2(5.0, 0.0), vec2(0.5, 0.0)});
  in.peers.push_back(peer);
  const StepResult res = step(spec, {obst}, st, in);
  // Adopted five, then absorbed the fresh displacement.
  CHECK(res.trace.ndat[0] == 6);
  CHECK(count_matches(res.trace.fallbacks, "adopted peer 1") == 1);
  // Inter-robot planes for every offset 1..K-1 were recorded.
  CHECK(count_matches(res.trace.plane_sources, "rob 1") == spec.horizon - 1);
  CHECK(res.state.robot_planes.size() ==
        static_cast<std::size_t>(spec.horizon - 1));
}

TEST_CASE("a static obstacle on the path forces a clear detour") {
  const double robot_radius = 0.3;
  const double obstacle_radius = 0.5;
  const Vec center = vec2(5.0, 0.2);
  for (std::uint64_t seed : {3ULL, 17ULL}) {
    RobotSpec spec =
        integrator_robot(0, 8, vec2(0.0, 0.0), vec2(1.0, 0.0), robot_radius);
    spec.terminal.rest_coordinates = {2, 3};
    spec.terminal.rest_tol = 1e-3;
    ObstacleSpec obst = ball_obstacle(obstacle_radius, 0.02);
    obst.position_support = geometry::Box{(center.array() - 0.02).matrix(),
                                          (center.array() + 0.02).matrix()};
    ControllerConfig cfg = base_config();
    cfg.learning.seed = seed;
    ControllerState st = initial_state(spec, 1, cfg);

    Vec x = vec4(0.0, 0.0, 1.0, 0.0);
    double min_clearance = 1e9;
    double max_x = -1e9;
    int braking_steps = 0;
    bool seen_before = false;
    for (int t = 0; t < 110; ++t) {
      ControllerInputs in;
      in.state = x;
      ObstacleObservation ob;
      ob.obstacle = 0;
      ob.position = center;
      if (seen_before) ob.displacement = vec2(0.0, 0.0);
      seen_before = true;
      in.observations.push_back(ob);
      const StepResult res = step(spec, {obst}, st, in);
      if (!res.trace.feasible) ++braking_steps;
      st = std::move(res.state);
      x = spec.a * x + spec.b * res.input;
      const Vec pos = spec.c * x;
      min_clearance = std::min(min_clearance, (pos - center).norm());
      max_x = std::max(max_x, pos(0));
    }
    CAPTURE(seed);
    CHECK(min_clearance >= robot_radius + obstacle_radius - 1e-6);
    CHECK(max_x >= 8.5);
    CHECK(braking_steps <= 2);
  }
}

TEST_CASE("infeasible programs trigger the braking fallback") {
  RobotSpec spec =
      integrator_robot(0, 5, vec2(0.0, 0.0), vec2(0.0, 0.0), 0.3);
  spec.x_hi(0) = 0.05;  // position wall right ahead
  const ControllerState st = initial_state(spec, 0, base_config());
  ControllerInputs in;
  in.state = vec4(0.0, 0.0, 2.0, 0.0);
  const StepResult res = step(spec, {}, st, in);
  CHECK_FALSE(res.trace.feasible);
  CHECK(std::isnan(res.trace.cost));
  CHECK(res.input(0) == doctest::Approx(-4.0));
  CHECK(res.input(1) == doctest::Approx(0.0));
  CHECK(count_matches(res.trace.fallbacks, "braking fallback") == 1);
  // The committed trajectory is the braking rollout, one step shifted.
  const Vec first = res.state.committed.outputs[0];
  CHECK(first(0) == doctest::Approx(0.1 * 2.0 + 0.005 * -4.0));
  CHECK(first(1) == doctest::Approx(0.0));
}

TEST_CASE("steps are deterministic and traces carry the advertised fields") {
  const RobotSpec spec =
      integrator_robot(2, 5, vec2(0.0, 0.0), vec2(0.5, 0.0), 0.3);
  ObstacleSpec obst = ball_obstacle(0.5, 0.05);
  obst.position_support = geometry::Box{vec2(3.0, -1.0), vec2(5.0, 1.0)};
  const ControllerState st = initial_state(spec, 1, base_config());
  ControllerInputs in;
  in.state = vec4(0.0, 0.0, 0.5, 0.0);
  in.observations.push_back({0, vec2(4.0, 0.5), vec2(0.02, -0.01)});

  const StepResult a = step(spec, {obst}, st, in);
  const StepResult b = step(spec, {obst}, st, in);
  CHECK((a.input - b.input).norm() == 0.0);
  CHECK(to_json(a.trace) == to_json(b.trace));
  REQUIRE(a.state.committed.outputs.size() ==
          b.state.committed.outputs.size());
  for (std::size_t i = 0; i < a.state.committed.outputs.size(); ++i) {
    CHECK((a.state.committed.outputs[i] - b.state.committed.outputs[i])
              .norm() == 0.0);
  }

  const auto j = nlohmann::json::parse(to_json(a.trace));
  CHECK(j.at("t").get<long>() == 0);
  CHECK(j.at("robot").get<int>() == 2);
  CHECK(j.at("u").size() == 2);
  CHECK(j.at("x").size() == 4);
  CHECK(j.at("cost").is_number());
  CHECK(j.at("solve_ms").at("qp").is_number());
  CHECK(j.at("solve_ms").at("sdp_total").is_number());
  CHECK(j.at("fallbacks").is_array());
  CHECK(j.at("ndat").at("0").get<long>() == 1);
}

TEST_CASE("balanced confidence splits reconstruct the global level") {
  const auto cfg = balanced_confidence(0.95, 2, 2);
  // Two set confidences and two constraint levels multiply back to alpha.
  const double set_level = cfg.chi * cfg.alpha_comp * cfg.alpha_comp;
  CHECK(std::pow(cfg.alpha_cvar, 4) == doctest::Approx(0.95).epsilon(1e-12));
  CHECK(set_level == doctest::Approx(std::pow(0.95, 0.25)).epsilon(1e-12));
  CHECK_THROWS_AS(balanced_confidence(1.5, 2, 2), MalformedInputs);
  CHECK_THROWS_AS(balanced_confidence(0.9, 0, 2), MalformedInputs);
}

// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#include "cooldrmc/controller.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cooldrmc/conic.hpp"
#include "cooldrmc/drcvar.hpp"
#include "cooldrmc/mixture.hpp"
#include "cooldrmc/rng.hpp"

namespace cooldrmc::controller {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& what) {
  if (!ok) throw MalformedInputs("controller: " + what);
}

bool finite(const Vec& v) { return v.allFinite(); }
bool finite(const Mat& m) { return m.allFinite(); }

// ---------------------------------------------------------------------------
// Support-sum bodies
// ---------------------------------------------------------------------------

// A convex region given as a Minkowski sum of placed bodies; support values
// and witness points add across the summands.
struct Summand {
  Vec offset;
  const geometry::ConvexBody* body = nullptr;
};

double sum_support(const std::vector<Summand>& parts, const Vec& h) {
  double v = 0.0;
  for (const Summand& p : parts) {
    if (p.offset.size() > 0) v += p.offset.dot(h);
    v += geometry::support_function(*p.body, h);
  }
  return v;
}

Vec sum_witness(const std::vector<Summand>& parts, const Vec& h) {
  Vec w = Vec::Zero(h.size());
  for (const Summand& p : parts) {
    if (p.offset.size() > 0) w += p.offset;
    w += geometry::support_point(*p.body, h);
  }
  return w;
}

// Interior proxy: average of the witness points along the +-axis directions.
Vec sum_anchor(const std::vector<Summand>& parts, int d) {
  Vec a = Vec::Zero(d);
  for (int i = 0; i < d; ++i) {
    Vec e = Vec::Zero(d);
    e(i) = 1.0;
    a += sum_witness(parts, e);
    a += sum_witness(parts, -e);
  }
  return a / (2.0 * d);
}

// Margin of the plane direction h between regions a and b: the width of the
// empty slab between a's far side and b's near side along h.
double direction_gap(const std::vector<Summand>& a,
                     const std::vector<Summand>& b, const Vec& h) {
  return -sum_support(a, h) - sum_support(b, -h);
}

/**
 * Best separating direction between two convex regions: maximizes the slab
 * width by projected supergradient ascent from the anchor-difference
 * direction. The gap is concave in the direction, so the diminishing-step
 * ascent converges; the best iterate is kept. Swapping the regions mirrors
 * every iterate exactly, so the result is antisymmetric.
 */
Vec max_margin_direction(const std::vector<Summand>& a,
                         const std::vector<Summand>& b, int d) {
  Vec h = sum_anchor(b, d) - sum_anchor(a, d);
  if (h.norm() < 1e-12) {
    h = Vec::Zero(d);
    h(0) = 1.0;
  }
  h.normalize();
  Vec best = h;
  double best_gap = direction_gap(a, b, h);
  for (int i = 1; i <= 200; ++i) {
    const Vec grad = sum_witness(b, -h) - sum_witness(a, h);
    const Vec cand = h + grad / static_cast<double>(i);
    if (cand.norm() < 1e-12) break;
    h = cand.normalized();
    const double gap = direction_gap(a, b, h);
    if (gap > best_gap) {
      best_gap = gap;
      best = h;
    }
  }
  return best;
}

const char* source_name(PlaneSource s) {
  switch (s) {
    case PlaneSource::Fresh:
      return "fresh";
    case PlaneSource::Stale:
      return "stale";
    case PlaneSource::Cached:
      return "cached";
    case PlaneSource::Direct:
      return "direct";
    default:
      return "default";
  }
}

// ---------------------------------------------------------------------------
// Obstacle motion tubes
// ---------------------------------------------------------------------------

// Center-of-mass bound `steps` steps after the anchor: the anchored motion
// box intersected with the static position bound when one is given. An
// empty intersection (model drift) falls back to the static bound alone.
geometry::Box motion_tube(const ObstacleSpec& obstacle, const Vec& anchor,
                          long steps) {
  geometry::Box tube;
  tube.lo = anchor + static_cast<double>(steps) * obstacle.motion_support.lo;
  tube.hi = anchor + static_cast<double>(steps) * obstacle.motion_support.hi;
  if (obstacle.position_support) {
    Vec lo = tube.lo.cwiseMax(obstacle.position_support->lo);
    Vec hi = tube.hi.cwiseMin(obstacle.position_support->hi);
    if ((lo.array() <= hi.array()).all()) {
      tube.lo = lo;
      tube.hi = hi;
    } else {
      tube = *obstacle.position_support;
    }
  }
  return tube;
}

// ---------------------------------------------------------------------------
// Mixture estimate adaptation
// ---------------------------------------------------------------------------

// Number of k-step mode combinations of an m-mode mixture.
double composition_count(int m, int k) {
  double v = 1.0;
  for (int i = 1; i < m; ++i) {
    v *= static_cast<double>(k + i) / static_cast<double>(i);
    if (v > 1e12) return v;
  }
  return v;
}

// Pools the smallest-weight mode into its nearest neighbor until the k-step
// combination count fits the work cap. A no-op for the handful of modes the
// learner finds in practice; this only guards against pathological fits.
void pool_for_compositions(dpmm::MixtureEstimate& est, int kmax, double cap) {
  while (est.components.size() > 1 &&
         composition_count(static_cast<int>(est.components.size()), kmax) >
             cap) {
    std::size_t victim = 0;
    for (std::size_t i = 1; i < est.components.size(); ++i) {
      if (est.components[i].weight < est.components[victim].weight) victim = i;
    }
    std::size_t host = victim == 0 ? 1 : 0;
    double best = kInf;
    for (std::size_t i = 0; i < est.components.size(); ++i) {
      if (i == victim) continue;
      const double w2 = ambiguity::gaussian_w2_squared(
          est.components[i].mean, est.components[i].cov,
          est.components[victim].mean, est.components[victim].cov);
      if (w2 < best) {
        best = w2;
        host = i;
      }
    }
    dpmm::MixtureComponent& a = est.components[host];
    const dpmm::MixtureComponent& b = est.components[victim];
    const double na = static_cast<double>(a.count);
    const double nb = static_cast<double>(b.count);
    const Vec mean = (na * a.mean + nb * b.mean) / (na + nb);
    Mat second = na * (a.cov + a.mean * a.mean.transpose()) +
                 nb * (b.cov + b.mean * b.mean.transpose());
    second /= na + nb;
    Mat cov = second - mean * mean.transpose();
    a.cov = 0.5 * (cov + cov.transpose());
    a.mean = mean;
    a.count += b.count;
    a.weight += b.weight;
    est.components.erase(est.components.begin() +
                         static_cast<std::ptrdiff_t>(victim));
  }
}

cooldrmc::MixtureEstimate to_moment_estimate(const dpmm::MixtureEstimate& de) {
  cooldrmc::MixtureEstimate est;
  est.total_count = 0;
  for (const dpmm::MixtureComponent& c : de.components) {
    est.components.push_back({c.weight, c.mean, c.cov, c.count});
    est.total_count += c.count;
  }
  return est;
}

// ---------------------------------------------------------------------------
// Braking law
// ---------------------------------------------------------------------------

Vec clamp_input(const RobotSpec& spec, Vec u) {
  return u.cwiseMax(spec.u_lo).cwiseMin(spec.u_hi);
}

// Least-squares input that holds the output in place for one step; exact at
// rest states of integrator chains and a saturated deceleration elsewhere.
Vec hold_output_input(const RobotSpec& spec, const Vec& x) {
  const Mat cb = spec.c * spec.b;
  const Vec target = spec.c * x - spec.c * (spec.a * x);
  const Vec u = cb.completeOrthogonalDecomposition().solve(target);
  return clamp_input(spec, u);
}

}  // namespace

// ---------------------------------------------------------------------------
// Reference trajectory
// ---------------------------------------------------------------------------

const Vec& ReferenceTrajectory::state_at(long t) const {
  if (states.empty()) {
    throw MalformedInputs("controller: reference has no states");
  }
  const long last = static_cast<long>(states.size()) - 1;
  return states[static_cast<std::size_t>(std::clamp(t, 0L, last))];
}

const Vec& ReferenceTrajectory::input_at(long t) const {
  if (inputs.empty()) {
    throw MalformedInputs("controller: reference has no inputs");
  }
  const long last = static_cast<long>(inputs.size()) - 1;
  return inputs[static_cast<std::size_t>(std::clamp(t, 0L, last))];
}

// ---------------------------------------------------------------------------
// Spec validation
// ---------------------------------------------------------------------------

void RobotSpec::validate() const {
  const int n = static_cast<int>(a.rows());
  const int m = static_cast<int>(b.cols());
  const int d = static_cast<int>(c.rows());
  require(n >= 1 && a.cols() == n, "state matrix must be square");
  require(b.rows() == n && m >= 1, "input matrix shape mismatch");
  require(c.cols() == n && d >= 1, "output matrix shape mismatch");
  require(finite(a) && finite(b) && finite(c), "dynamics must be finite");
  require(horizon >= 2, "horizon must be at least 2");
  require(q.rows() == n && q.cols() == n, "state weight shape mismatch");
  require(r.rows() == m && r.cols() == m, "input weight shape mismatch");
  require(p.rows() == n && p.cols() == n, "terminal weight shape mismatch");
  require(finite(q) && finite(r) && finite(p), "weights must be finite");
  require(x_lo.size() == n && x_hi.size() == n, "state box shape mismatch");
  require(u_lo.size() == m && u_hi.size() == m, "input box shape mismatch");
  require(finite(u_lo) && finite(u_hi), "input box must be finite");
  require((x_lo.array() <= x_hi.array()).all(), "state box is empty");
  require((u_lo.array() <= u_hi.array()).all(), "input box is empty");
  require(safety_margin > 0.0, "safety margin must be positive");
  require(geometry::dimension(body) == d, "body dimension mismatch");
  require(geometry::contains(body, Vec::Zero(d)),
          "body must contain the origin");
  require(!reference.states.empty() && !reference.inputs.empty(),
          "reference must hold at least one state and input");
  for (const Vec& xr : reference.states) {
    require(xr.size() == n && finite(xr), "reference state shape mismatch");
  }
  for (const Vec& ur : reference.inputs) {
    require(ur.size() == m && finite(ur), "reference input shape mismatch");
  }
  require(terminal.rest_tol > 0.0, "terminal rest tolerance must be positive");
  for (int idx : terminal.rest_coordinates) {
    require(idx >= 0 && idx < n, "terminal rest coordinate out of range");
  }
  if (terminal.safe_region) {
    require(terminal.safe_region->e.cols() == d &&
                terminal.safe_region->e.rows() ==
                    terminal.safe_region->f.size(),
            "terminal safe region shape mismatch");
  }
}

void ObstacleSpec::validate(int dim) const {
  require(geometry::dimension(body) == dim, "obstacle body dimension mismatch");
  require(geometry::contains(body, Vec::Zero(dim)),
          "obstacle body must contain the origin");
  require(motion_support.lo.size() == dim && motion_support.hi.size() == dim,
          "motion support shape mismatch");
  require(finite(motion_support.lo) && finite(motion_support.hi),
          "motion support must be finite");
  require((motion_support.lo.array() <= motion_support.hi.array()).all(),
          "motion support is empty");
  if (position_support) {
    require(position_support->lo.size() == dim &&
                position_support->hi.size() == dim,
            "position support shape mismatch");
    require((position_support->lo.array() <= position_support->hi.array())
                .all(),
            "position support is empty");
  }
}

// ---------------------------------------------------------------------------
// Confidence split
// ---------------------------------------------------------------------------

ambiguity::ConfidenceConfig balanced_confidence(double alpha,
                                                int num_obstacles,
                                                int component_budget) {
  require(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  require(num_obstacles >= 1, "need at least one obstacle to split over");
  require(component_budget >= 1, "component budget must be positive");
  const double level = std::pow(alpha, 1.0 / (2.0 * num_obstacles));
  const double moment = std::pow(level, 1.0 / (component_budget + 1.0));
  ambiguity::ConfidenceConfig cfg;
  cfg.chi = moment;
  cfg.alpha_comp = moment;
  cfg.alpha_cvar = level;
  return cfg;
}

// ---------------------------------------------------------------------------
// Committed trajectories
// ---------------------------------------------------------------------------

CommittedTrajectory commit(const RobotSpec& spec,
                           const std::vector<Vec>& prev_states, long t,
                           const TerminalLaw& law) {
  const int K = spec.horizon;
  CommittedTrajectory out;
  out.outputs.reserve(static_cast<std::size_t>(K) + 1);
  if (prev_states.empty()) {
    for (int k = 0; k <= K; ++k) {
      out.outputs.push_back(spec.c * spec.reference.state_at(t + k));
    }
    return out;
  }
  require(static_cast<int>(prev_states.size()) == K + 1,
          "previous solution must hold horizon + 1 states");
  for (int k = 0; k < K; ++k) {
    out.outputs.push_back(spec.c * prev_states[static_cast<std::size_t>(k) + 1]);
  }
  const Vec& xk = prev_states.back();
  const Vec u = law ? law(xk) : hold_output_input(spec, xk);
  out.outputs.push_back(spec.c * (spec.a * xk + spec.b * u));
  return out;
}

ControllerState initial_state(const RobotSpec& spec, int num_obstacles,
                              const ControllerConfig& config) {
  spec.validate();
  require(num_obstacles >= 0, "obstacle count must be nonnegative");
  require(config.compression_cap >= 1, "component cap must be positive");
  ControllerState st;
  st.t = 0;
  st.committed = commit(spec, {}, 0);
  st.obstacles.resize(static_cast<std::size_t>(num_obstacles));
  st.config = config;
  return st;
}

// ---------------------------------------------------------------------------
// Inter-robot planes
// ---------------------------------------------------------------------------

PlaneResult inter_robot_hyperplane(const CommittedTrajectory& mine,
                                   const CommittedTrajectory& theirs,
                                   const geometry::ConvexBody& my_body,
                                   const geometry::ConvexBody& their_body,
                                   int k, double margin,
                                   const geometry::Hyperplane* cached) {
  require(mine.outputs.size() == theirs.outputs.size(),
          "committed trajectories must share a horizon");
  require(k >= 0 && k < static_cast<int>(mine.outputs.size()),
          "horizon offset out of range");
  const Vec& ya = mine.outputs[static_cast<std::size_t>(k)];
  const Vec& yb = theirs.outputs[static_cast<std::size_t>(k)];
  const int d = static_cast<int>(ya.size());

  const auto valid = [&](const geometry::Hyperplane& pl) {
    const double mine_side =
        pl.h.dot(ya) + geometry::support_function(my_body, pl.h) + pl.g;
    const double their_side =
        pl.h.dot(yb) - geometry::support_function(their_body, -pl.h) + pl.g;
    return mine_side <= -margin / 2.0 + 1e-9 &&
           their_side >= margin / 2.0 - 1e-9;
  };
  // The plane sits midway between the two placed bodies' support points.
  const auto midpoint_bias = [&](const Vec& h) {
    const double sb = yb.dot(-h) + geometry::support_function(their_body, -h);
    const double sa = ya.dot(h) + geometry::support_function(my_body, h);
    return (sb - sa) / 2.0;
  };

  const Vec diff = yb - ya;
  if (diff.norm() < 1e-9) {
    if (cached) {
      return {*cached, PlaneSource::Cached, valid(*cached), 0.0};
    }
    Vec axis = Vec::Zero(d);
    axis(0) = 1.0;
    geometry::Hyperplane pl(axis, midpoint_bias(axis));
    return {pl, PlaneSource::Default, valid(pl), 0.0};
  }

  const Vec h = diff.normalized();
  geometry::Hyperplane fresh(h, midpoint_bias(h));
  if (valid(fresh)) return {fresh, PlaneSource::Fresh, true, 0.0};
  if (cached) return {*cached, PlaneSource::Cached, valid(*cached), 0.0};

  const std::vector<Summand> a = {{ya, &my_body}};
  const std::vector<Summand> b = {{yb, &their_body}};
  const Vec dir = max_margin_direction(a, b, d);
  geometry::Hyperplane direct(dir, midpoint_bias(dir));
  return {direct, PlaneSource::Direct, valid(direct), 0.0};
}

// ---------------------------------------------------------------------------
// Robot-obstacle planes
// ---------------------------------------------------------------------------

PlaneResult robot_obstacle_hyperplane(const RobotSpec& robot,
                                      const ObstacleSpec& obstacle,
                                      const ControllerState& state,
                                      int obstacle_index, int k,
                                      const CommittedTrajectory& committed,
                                      double alpha_u) {
  const int K = robot.horizon;
  require(obstacle_index >= 0 &&
              obstacle_index < static_cast<int>(state.obstacles.size()),
          "obstacle index out of range");
  require(k >= 1 && k <= K - 1, "horizon offset out of range");
  require(static_cast<int>(committed.outputs.size()) == K + 1,
          "committed trajectory must hold horizon + 1 points");
  const ObstacleBook& book =
      state.obstacles[static_cast<std::size_t>(obstacle_index)];
  const Vec& yk = committed.outputs[static_cast<std::size_t>(k)];
  const double margin = robot.safety_margin;

  const auto valid = [&](const geometry::Hyperplane& pl) {
    return pl.h.dot(yk) + geometry::support_function(robot.body, pl.h) +
               pl.g + margin <=
           1e-7;
  };

  double sdp_ms = 0.0;

  // Newest usable set: built at sets_time, read at offset k + staleness.
  const ambiguity::MixtureAmbiguitySet* set = nullptr;
  bool stale = false;
  if (book.sets_time >= 0) {
    const long age = state.t - book.sets_time;
    const long offset = k + age;
    if (age >= 0 && offset <= K - 1 &&
        offset - 1 < static_cast<long>(book.sets.size())) {
      set = &book.sets[static_cast<std::size_t>(offset - 1)];
      stale = age > 0;
    }
  }
  if (set != nullptr) {
    Vec phi_hat = Vec::Zero(yk.size());
    for (std::size_t n = 0; n < set->components.size(); ++n) {
      phi_hat += set->weights(static_cast<Eigen::Index>(n)) *
                 set->components[n].mean;
    }
    const Vec diff = phi_hat - yk;
    if (diff.norm() >= 1e-9) {
      const Vec h = diff.normalized();
      auto [bias, report] = drcvar::min_bias(*set, h, obstacle.body, alpha_u);
      sdp_ms += report.wall_ms;
      if (report.status == conic::SolveStatus::Optimal &&
          std::isfinite(bias)) {
        geometry::Hyperplane pl(h, bias);
        if (valid(pl)) {
          return {pl, stale ? PlaneSource::Stale : PlaneSource::Fresh, true,
                  sdp_ms};
        }
      }
    }
  }

  const auto it = state.obstacle_planes.find({obstacle_index, k + 1});
  if (it != state.obstacle_planes.end()) {
    return {it->second, PlaneSource::Cached, valid(it->second), sdp_ms};
  }

  // Deterministic tail: separate the committed body from the motion tube.
  geometry::Box tube;
  if (book.last_seen >= 0) {
    tube = motion_tube(obstacle, book.last_position,
                       state.t + k - book.last_seen);
  } else if (obstacle.position_support) {
    tube = *obstacle.position_support;
  } else {
    std::ostringstream os;
    os << "controller: obstacle " << obstacle_index
       << " was never observed and has no position support";
    throw ConstraintConflict(os.str());
  }
  const geometry::ConvexBody tube_body = tube;
  const std::vector<Summand> a = {{yk, &robot.body}};
  const std::vector<Summand> b = {{Vec(), &tube_body}, {Vec(), &obstacle.body}};
  const Vec dir = max_margin_direction(a, b, static_cast<int>(yk.size()));
  // Smallest bias that keeps the whole tube-swept body beyond the plane.
  geometry::Hyperplane pl(dir, sum_support(b, -dir));
  return {pl, PlaneSource::Direct, valid(pl), sdp_ms};
}

// ---------------------------------------------------------------------------
// Full step
// ---------------------------------------------------------------------------

StepResult step(const RobotSpec& spec,
                const std::vector<ObstacleSpec>& obstacles,
                const ControllerState& state,
                const ControllerInputs& inputs) {
  spec.validate();
  const int n = static_cast<int>(spec.a.rows());
  const int m = static_cast<int>(spec.b.cols());
  const int d = static_cast<int>(spec.c.rows());
  const int K = spec.horizon;
  const std::size_t L = obstacles.size();
  for (const ObstacleSpec& o : obstacles) o.validate(d);
  require(state.obstacles.size() == L,
          "state tracks a different obstacle count");
  require(inputs.state.size() == n && finite(inputs.state),
          "state vector shape mismatch");
  require(static_cast<int>(state.committed.outputs.size()) == K + 1,
          "committed trajectory must hold horizon + 1 points");
  {
    std::set<int> seen;
    for (const ObstacleObservation& ob : inputs.observations) {
      require(ob.obstacle >= 0 && ob.obstacle < static_cast<int>(L),
              "observation names an unknown obstacle");
      require(seen.insert(ob.obstacle).second,
              "duplicate observation for one obstacle");
      require(ob.position.size() == d && finite(ob.position),
              "observation position shape mismatch");
      if (ob.displacement) {
        require(ob.displacement->size() == d && finite(*ob.displacement),
                "observation displacement shape mismatch");
      }
    }
    std::set<int> ids;
    for (const PeerInfo& peer : inputs.peers) {
      require(peer.id != spec.id && ids.insert(peer.id).second,
              "peer ids must be unique and differ from the robot's");
      require(static_cast<int>(peer.committed.outputs.size()) == K + 1,
              "peer committed trajectory must hold horizon + 1 points");
      for (const Vec& y : peer.committed.outputs) {
        require(y.size() == d && finite(y),
                "peer committed point shape mismatch");
      }
      require(geometry::dimension(peer.body) == d,
              "peer body dimension mismatch");
      require(peer.structure_counts.size() == L,
              "peer structure counts must cover every obstacle");
      require(peer.structures.empty() || peer.structures.size() == L,
              "peer structure payloads must cover every obstacle");
    }
  }

  const ControllerConfig& cfg = state.config;
  const double alpha_u = cfg.confidence.alpha_cvar;
  const long t = state.t;
  ControllerState next = state;

  StepTrace trace;
  trace.t = t;
  trace.robot = spec.id;
  trace.state = inputs.state;

  // Structure exchange: per observed obstacle, adopt the largest strictly
  // larger peer record.
  for (const ObstacleObservation& ob : inputs.observations) {
    ObstacleBook& book =
        next.obstacles[static_cast<std::size_t>(ob.obstacle)];
    const std::int64_t local = book.structure.total_count();
    std::vector<std::int64_t> counts;
    counts.reserve(inputs.peers.size());
    for (const PeerInfo& peer : inputs.peers) {
      counts.push_back(peer.structure_counts[static_cast<std::size_t>(
          ob.obstacle)]);
    }
    const auto pick = dpmm::merge_select(local, counts);
    if (!pick) continue;
    const PeerInfo& donor = inputs.peers[*pick];
    if (donor.structures.empty()) continue;
    const std::string& payload =
        donor.structures[static_cast<std::size_t>(ob.obstacle)];
    if (payload.empty()) continue;
    dpmm::LearningStructure adopted = dpmm::structure_from_json(payload);
    if (adopted.total_count() <= local) continue;
    book.structure = std::move(adopted);
    std::ostringstream os;
    os << "obs " << ob.obstacle << ": adopted peer " << donor.id
       << " structure (" << book.structure.total_count() << " points)";
    trace.fallbacks.push_back(os.str());
  }

  const auto note_plane = [&trace](const char* kind, int id, int k,
                                   const PlaneResult& res) {
    std::ostringstream os;
    os << kind << " " << id << " k " << k << ": " << source_name(res.source);
    trace.plane_sources.push_back(os.str());
    if (res.source == PlaneSource::Cached) ++trace.cache_hits;
    if (res.source != PlaneSource::Fresh) trace.fallbacks.push_back(os.str());
    if (!res.valid) {
      trace.fallbacks.push_back(os.str() + " (validity failed)");
    }
  };

  // Inter-robot planes at offsets 1..K-1.
  std::vector<conic::MpcHyperplaneRow> rows;
  std::map<std::pair<int, int>, geometry::Hyperplane> robot_planes;
  for (const PeerInfo& peer : inputs.peers) {
    for (int k = 1; k <= K - 1; ++k) {
      const auto cached = state.robot_planes.find({peer.id, k + 1});
      const geometry::Hyperplane* hint =
          cached == state.robot_planes.end() ? nullptr : &cached->second;
      const PlaneResult res = inter_robot_hyperplane(
          state.committed, peer.committed, spec.body, peer.body, k,
          spec.safety_margin, hint);
      robot_planes.emplace(std::make_pair(peer.id, k), res.plane);
      note_plane("rob", peer.id, k, res);
      conic::MpcHyperplaneRow row;
      row.step = k;
      row.normal = res.plane.h;
      row.rhs = res.plane.g + geometry::support_function(spec.body,
                                                         res.plane.h) +
                spec.safety_margin / 2.0;
      rows.push_back(std::move(row));
    }
  }
  next.robot_planes = std::move(robot_planes);

  // Learning and set construction per observed obstacle.
  for (const ObstacleObservation& ob : inputs.observations) {
    ObstacleBook& book =
        next.obstacles[static_cast<std::size_t>(ob.obstacle)];
    const ObstacleSpec& spec_l =
        obstacles[static_cast<std::size_t>(ob.obstacle)];
    if (ob.displacement) {
      book.structure = dpmm::update(book.structure, *ob.displacement,
                                    cfg.learning);
    }
    book.last_seen = t;
    book.last_position = ob.position;
    book.sets.clear();
    book.supports.clear();
    book.sets_time = -1;
    if (book.structure.total_count() == 0) continue;
    dpmm::MixtureEstimate de = dpmm::extract_mixture(book.structure,
                                                     cfg.learning);
    pool_for_compositions(de, K - 1, 2e4);
    const cooldrmc::MixtureEstimate est = to_moment_estimate(de);
    const geometry::ConvexBody motion_body = spec_l.motion_support;
    const ambiguity::MixtureAmbiguitySet base =
        ambiguity::build_ambiguity(est, motion_body, cfg.confidence);
    for (int k = 1; k <= K - 1; ++k) {
      const geometry::Box support_k = motion_tube(spec_l, ob.position, k);
      ambiguity::MixtureAmbiguitySet set_k =
          ambiguity::propagate(base, ob.position, k, support_k);
      if (static_cast<int>(set_k.components.size()) > cfg.compression_cap) {
        const std::uint64_t seed =
            Rng::derive(cfg.learning.seed,
                        {"compress", static_cast<std::uint64_t>(ob.obstacle),
                         static_cast<std::uint64_t>(t),
                         static_cast<std::uint64_t>(k)})
                .next_u64();
        const auto grouping = ambiguity::cluster_components(
            set_k.components, cfg.compression_cap, seed);
        set_k = ambiguity::compress(set_k, grouping);
      }
      book.sets.push_back(std::move(set_k));
      book.supports.push_back(support_k);
    }
    book.sets_time = t;
  }

  // Robot-obstacle planes at offsets 1..K-1.
  bool conflict = false;
  std::map<std::pair<int, int>, geometry::Hyperplane> obstacle_planes;
  for (std::size_t l = 0; l < L; ++l) {
    try {
      for (int k = 1; k <= K - 1; ++k) {
        const PlaneResult res = robot_obstacle_hyperplane(
            spec, obstacles[l], next, static_cast<int>(l), k,
            state.committed, alpha_u);
        trace.sdp_ms += res.solve_ms;
        obstacle_planes.emplace(std::make_pair(static_cast<int>(l), k),
                                res.plane);
        note_plane("obs", static_cast<int>(l), k, res);
        conic::MpcHyperplaneRow row;
        row.step = k;
        row.normal = res.plane.h;
        row.rhs = res.plane.g + geometry::support_function(spec.body,
                                                           res.plane.h) +
                  spec.safety_margin;
        rows.push_back(std::move(row));
      }
    } catch (const ConstraintConflict& e) {
      conflict = true;
      trace.fallbacks.push_back(e.what());
    }
  }
  next.obstacle_planes = std::move(obstacle_planes);

  // Terminal set rows: rest coordinates plus the shrunk safe region.
  std::vector<conic::MpcTerminalRow> terminal_rows;
  for (int idx : spec.terminal.rest_coordinates) {
    Vec e = Vec::Zero(n);
    e(idx) = 1.0;
    terminal_rows.push_back({e, spec.terminal.rest_tol});
    terminal_rows.push_back({-e, spec.terminal.rest_tol});
  }
  if (spec.terminal.safe_region) {
    const geometry::Polytope& region = *spec.terminal.safe_region;
    for (Eigen::Index j = 0; j < region.f.size(); ++j) {
      const Vec dir = region.e.row(j).transpose();
      conic::MpcTerminalRow row;
      row.normal = spec.c.transpose() * dir;
      row.bound = region.f(j) - geometry::support_function(spec.body, dir);
      terminal_rows.push_back(std::move(row));
    }
  }

  // Tracking program over the horizon.
  conic::MpcQpInputs qp;
  qp.a = spec.a;
  qp.b = spec.b;
  qp.c = spec.c;
  qp.x0 = inputs.state;
  qp.horizon = K;
  for (int k = 0; k <= K; ++k) {
    qp.x_ref.push_back(spec.reference.state_at(t + k));
  }
  for (int k = 0; k < K; ++k) {
    qp.u_ref.push_back(spec.reference.input_at(t + k));
  }
  qp.q = spec.q;
  qp.r = spec.r;
  qp.p = spec.p;
  qp.x_lo = spec.x_lo;
  qp.x_hi = spec.x_hi;
  qp.u_lo = spec.u_lo;
  qp.u_hi = spec.u_hi;
  qp.hyperplanes = std::move(rows);
  qp.terminal = std::move(terminal_rows);

  Vec u;
  bool solved = false;
  if (!conflict) {
    double constant_cost = 0.0;
    const conic::ConicProgram prog =
        conic::assemble_mpc_qp(qp, &constant_cost);
    const conic::SolveReport report = conic::solve(prog);
    trace.qp_ms = report.wall_ms;
    if (report.status == conic::SolveStatus::Optimal) {
      u = report.x.head(m);
      const std::vector<Vec> states = conic::rollout_states(qp, report.x);
      trace.cost = report.objective + constant_cost;
      next.committed = commit(spec, states, t + 1);
      solved = true;
    }
  }
  if (!solved) {
    trace.feasible = false;
    trace.cost = std::numeric_limits<double>::quiet_NaN();
    u = hold_output_input(spec, inputs.state);
    std::vector<Vec> states;
    states.reserve(static_cast<std::size_t>(K) + 1);
    states.push_back(inputs.state);
    for (int k = 1; k <= K; ++k) {
      const Vec uk = hold_output_input(spec, states.back());
      states.push_back(spec.a * states.back() + spec.b * uk);
    }
    next.committed = commit(spec, states, t + 1);
    trace.fallbacks.push_back(conflict
                                  ? "braking fallback engaged (plane conflict)"
                                  : "braking fallback engaged (infeasible)");
  }

  trace.input = u;
  trace.ndat.reserve(L);
  for (const ObstacleBook& book : next.obstacles) {
    trace.ndat.push_back(book.structure.total_count());
  }
  next.t = t + 1;

  return {u, std::move(next), std::move(trace)};
}

// ---------------------------------------------------------------------------
// Trace serialization
// ---------------------------------------------------------------------------

std::string to_json(const StepTrace& trace) {
  nlohmann::json j;
  j["t"] = trace.t;
  j["robot"] = trace.robot;
  j["u"] = std::vector<double>(trace.input.data(),
                               trace.input.data() + trace.input.size());
  j["x"] = std::vector<double>(trace.state.data(),
                               trace.state.data() + trace.state.size());
  j["cost"] = trace.cost;
  j["solve_ms"] = {{"qp", trace.qp_ms}, {"sdp_total", trace.sdp_ms}};
  j["fallbacks"] = trace.fallbacks;
  nlohmann::json ndat = nlohmann::json::object();
  for (std::size_t l = 0; l < trace.ndat.size(); ++l) {
    ndat[std::to_string(l)] = trace.ndat[l];
  }
  j["ndat"] = ndat;
  return j.dump();
}

}  // namespace cooldrmc::controller

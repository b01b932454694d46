// cooldrmc: distributionally robust multi-robot motion control with
// online obstacle-motion learning.
// Licensed under the MIT License. See LICENSE for details.

#ifndef COOLDRMC_CONTROLLER_HPP_
#define COOLDRMC_CONTROLLER_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cooldrmc/ambiguity.hpp"
#include "cooldrmc/dpmm.hpp"
#include "cooldrmc/geometry.hpp"
#include "cooldrmc/linalg.hpp"

namespace cooldrmc::controller {

/// Raised when step inputs are inconsistent with the robot or scene.
class MalformedInputs : public Error {
public:
  using Error::Error;
};

/// Raised when no separating plane can be derived for an obstacle because
/// the controller has neither a learned set, a cached plane, nor any
/// support information for it.
class ConstraintConflict : public Error {
public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Robot and obstacle descriptions
// ---------------------------------------------------------------------------

/// Reference signal by absolute time step; reads past the stored range
/// hold the last sample.
struct ReferenceTrajectory {
  std::vector<Vec> states;
  std::vector<Vec> inputs;

  const Vec& state_at(long t) const;
  const Vec& input_at(long t) const;
};

/// Terminal state constraints: selected state coordinates are pinned to
/// |x_i| <= rest_tol (rest rows), and the terminal output body must stay
/// inside the optional polyhedral safe region.
struct TerminalSpec {
  /// State coordinates forced to (near) zero at the end of the horizon.
  std::vector<int> rest_coordinates;
  /// Half-width of each rest row.
  double rest_tol = 1e-3;
  /// Safe-region rows E y <= f on the terminal output, shrunk by the
  /// body's support in each row direction.
  std::optional<geometry::Polytope> safe_region;
};

/**
 * @brief Static description of one robot: shape, dynamics, and objective.
 *
 * Dynamics are linear time-invariant, x+ = a x + b u with output y = c x;
 * the output is the position of the body frame, so the rigid body occupies
 * y (+) body at output y.
 */
struct RobotSpec {
  /// Identity used in caches and traces; unique within a scene.
  int id = 0;
  /// Rigid body, expressed about the output point (must contain 0).
  geometry::ConvexBody body;
  Mat a;  ///< State transition.
  Mat b;  ///< Input map.
  Mat c;  ///< Output map (position rows).
  Vec x_lo, x_hi;  ///< State box; entries may be +-inf.
  Vec u_lo, u_hi;  ///< Input box; entries must be finite.
  /// Prediction horizon K >= 2.
  int horizon = 2;
  Mat q;  ///< Stage state weight (PSD).
  Mat r;  ///< Stage input weight (PSD).
  Mat p;  ///< Terminal state weight (PSD).
  /// Safety margin between bodies: r/2 per robot pair side, r against
  /// obstacles. Strictly positive.
  double safety_margin = 0.1;
  TerminalSpec terminal;
  ReferenceTrajectory reference;

  /// Throws MalformedInputs when shapes, boxes, or the body disagree with
  /// the documented invariants.
  void validate() const;
};

/// Static description of one obstacle: shape and motion bounds.
struct ObstacleSpec {
  /// Rigid body about the center of mass (must contain 0).
  geometry::ConvexBody body;
  /// Support box of the one-step center-of-mass displacement.
  geometry::Box motion_support;
  /// Optional static bound on the center of mass; intersected with the
  /// anchored motion tube and used alone when the obstacle was never seen.
  std::optional<geometry::Box> position_support;

  void validate(int dim) const;
};

// ---------------------------------------------------------------------------
// Controller state
// ---------------------------------------------------------------------------

/// Output points the robot has committed to for offsets 0..K of the
/// current step.
struct CommittedTrajectory {
  std::vector<Vec> outputs;
};

/// Terminal control law u = law(x(K)) used to extend committed
/// trajectories by one step.
using TerminalLaw = std::function<Vec(const Vec&)>;

/// Controller-wide configuration.
struct ControllerConfig {
  /// Component cap M: a propagated set with more components than this is
  /// compressed before use (>= 1).
  int compression_cap = 10;
  /// Confidence split for ambiguity-set construction; alpha_cvar is the
  /// CVaR level of the robust obstacle constraints.
  ambiguity::ConfidenceConfig confidence;
  /// Learning configuration shared by all obstacles.
  dpmm::DpmmConfig learning;
};

/// Everything the controller has learned and cached about one obstacle.
struct ObstacleBook {
  dpmm::LearningStructure structure;
  /// Time of the last observation; -1 when never seen.
  long last_seen = -1;
  /// Center of mass at last_seen (prediction anchor).
  Vec last_position;
  /// Time the sets below were built; -1 when none exist.
  long sets_time = -1;
  /// Propagated (and, past the cap, compressed) sets for horizon offsets
  /// 1..K-1 relative to sets_time; entry k-1 covers offset k.
  std::vector<ambiguity::MixtureAmbiguitySet> sets;
  /// Center-of-mass support at the same offsets (motion tube).
  std::vector<geometry::Box> supports;
};

/// Mutable controller state threaded through step calls.
struct ControllerState {
  /// Current time index; step consumes time t and returns state at t+1.
  long t = 0;
  /// Output trajectory committed for the current step.
  CommittedTrajectory committed;
  std::vector<ObstacleBook> obstacles;
  /// Planes of the previous step keyed by (peer id, horizon offset).
  std::map<std::pair<int, int>, geometry::Hyperplane> robot_planes;
  /// Planes of the previous step keyed by (obstacle index, horizon offset).
  std::map<std::pair<int, int>, geometry::Hyperplane> obstacle_planes;
  ControllerConfig config;
};

// ---------------------------------------------------------------------------
// Step inputs and trace
// ---------------------------------------------------------------------------

/// One sighting of an obstacle at the current time.
struct ObstacleObservation {
  int obstacle = 0;
  /// Measured center of mass.
  Vec position;
  /// Measured one-step displacement; absent when the previous position was
  /// not available (first sighting or occlusion at t-1).
  std::optional<Vec> displacement;
};

/// What one peer robot broadcast this step.
struct PeerInfo {
  int id = 0;
  geometry::ConvexBody body;
  CommittedTrajectory committed;
  /// Learning data counts per obstacle.
  std::vector<std::int64_t> structure_counts;
  /// Serialized learning structures per obstacle; an empty string marks a
  /// payload the peer did not share.
  std::vector<std::string> structures;
};

/// Everything the controller consumes in one step.
struct ControllerInputs {
  Vec state;
  std::vector<ObstacleObservation> observations;
  std::vector<PeerInfo> peers;
};

/// How a hyperplane was obtained.
enum class PlaneSource {
  Fresh,    ///< Computed from current committed points / learned sets.
  Stale,    ///< Computed from the newest available out-of-date set.
  Cached,   ///< Reused from the previous step (one offset later).
  Direct,   ///< Deterministic support-function separation.
  Default,  ///< Fixed-axis plane after a degenerate normal.
};

/// A hyperplane together with its provenance and validity.
struct PlaneResult {
  geometry::Hyperplane plane;
  PlaneSource source = PlaneSource::Fresh;
  /// True when the plane passed its validity test; invalid planes still
  /// enter the program (they keep the far side excluded) but flag the step.
  bool valid = true;
  /// Wall time spent in the robust bias program, when one was solved.
  double solve_ms = 0.0;
};

/// Diagnostics of one controller step.
struct StepTrace {
  long t = 0;
  int robot = 0;
  Vec input;
  Vec state;
  /// Realized objective value; NaN when the solve failed.
  double cost = 0.0;
  double qp_ms = 0.0;
  double sdp_ms = 0.0;
  /// False when the braking fallback replaced the optimizer's input.
  bool feasible = true;
  /// Planes served from the previous step's cache.
  int cache_hits = 0;
  /// One entry per plane: "rob <id> k <k>: <source>" or
  /// "obs <index> k <k>: <source>".
  std::vector<std::string> plane_sources;
  /// Human-readable fallback events (non-fresh planes, invalid planes,
  /// adoption, braking).
  std::vector<std::string> fallbacks;
  /// Learning data count per obstacle after this step.
  std::vector<std::int64_t> ndat;
};

/// Serializes a trace to one JSON record {t, robot, u, x, cost,
/// solve_ms:{qp, sdp_total}, fallbacks:[..], ndat:{index: count}}.
std::string to_json(const StepTrace& trace);

/// Result of one controller step.
struct StepResult {
  /// Input applied at the current step.
  Vec input;
  /// State advanced to t+1 (committed trajectory, caches, learning).
  ControllerState state;
  StepTrace trace;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/**
 * @brief Balanced confidence split for a global level alpha.
 *
 * Splits alpha evenly over the per-obstacle set confidences and the robust
 * constraint levels so that (prod_l alpha_l) * alpha_u^L = alpha with all
 * factors equal, then splits each alpha_l evenly over the weight confidence
 * chi and component_budget moment confidences. Throws MalformedInputs
 * unless alpha is in (0, 1), num_obstacles >= 1, and component_budget >= 1.
 */
ambiguity::ConfidenceConfig balanced_confidence(double alpha,
                                                int num_obstacles,
                                                int component_budget);

/// Fresh state at t = 0: the committed trajectory is the reference, books
/// and caches are empty.
ControllerState initial_state(const RobotSpec& spec, int num_obstacles,
                              const ControllerConfig& config);

/**
 * @brief Commits the output trajectory for time t.
 *
 * With a previous solution (states for offsets 0..K of step t-1) the
 * committed output at offset k is the previous solution's output at k+1,
 * and the final point extends the previous terminal state by one step of
 * the terminal law. Without one (t = 0, or a failed solve with no
 * recovery rollout) the committed outputs are the reference outputs at
 * t..t+K. The default law picks the least-squares input that holds the
 * output in place (exact hold at rest states), clamped to the input box.
 */
CommittedTrajectory commit(const RobotSpec& spec,
                           const std::vector<Vec>& prev_states, long t,
                           const TerminalLaw& law = nullptr);

/**
 * @brief Separating plane between two robots at horizon offset k.
 *
 * The normal points from this robot's committed output toward the peer's;
 * the bias puts the plane midway between the two body support points, so
 * identical inputs on both robots give exactly mirrored planes. The plane
 * is valid when both bodies clear it by margin/2. On failure the cached
 * plane (previous step, offset k+1) is reused when it is itself valid; at
 * the last cacheable offset (or when the cache misses) the bodies are
 * separated directly by a max-margin support sweep. Coincident committed
 * points resolve to the cached plane, then to a fixed-axis default.
 */
PlaneResult inter_robot_hyperplane(const CommittedTrajectory& mine,
                                   const CommittedTrajectory& theirs,
                                   const geometry::ConvexBody& my_body,
                                   const geometry::ConvexBody& their_body,
                                   int k, double margin,
                                   const geometry::Hyperplane* cached);

/**
 * @brief Robust separating plane against one obstacle at offset k.
 *
 * The normal points from the committed output toward the mean center of
 * mass of the obstacle's propagated set; the bias is the certified minimum
 * over the set (worst-case CVaR at level alpha_u). When the obstacle was
 * last seen l steps ago the set built then is read at offset k+l. The
 * plane is valid when the committed point satisfies the constraint row
 * with the full safety margin. Fallback chain: cached plane from the
 * previous step (offset k+1), then deterministic separation of the
 * committed body from the motion tube grown about the last sighting (the
 * static position bound alone when the obstacle was never seen). Throws
 * ConstraintConflict only when no plane can be derived at all.
 */
PlaneResult robot_obstacle_hyperplane(const RobotSpec& robot,
                                      const ObstacleSpec& obstacle,
                                      const ControllerState& state,
                                      int obstacle_index, int k,
                                      const CommittedTrajectory& committed,
                                      double alpha_u);

/**
 * @brief One full control step at time state.t.
 *
 * Order of operations: adopt the largest-count peer learning structure for
 * each observed obstacle; compute inter-robot planes for every peer at
 * offsets 1..K-1; per obstacle, absorb the new displacement, rebuild and
 * propagate the ambiguity sets (compressing past the component cap), and
 * compute the robust planes at offsets 1..K-1; assemble the tracking
 * program with all plane rows and the terminal set and solve it. On
 * success the first input is returned and the next committed trajectory is
 * the shifted solution; on failure (infeasible, solver breakdown, or a
 * ConstraintConflict from the plane chain) a saturated braking input
 * toward zero velocity is applied instead, the braking rollout is
 * committed, and the trace is flagged.
 *
 * Pure function of its arguments: identical inputs give identical results.
 * Throws MalformedInputs on inconsistent inputs.
 */
StepResult step(const RobotSpec& spec,
                const std::vector<ObstacleSpec>& obstacles,
                const ControllerState& state, const ControllerInputs& inputs);

}  // namespace cooldrmc::controller

#endif  // COOLDRMC_CONTROLLER_HPP_

#ifndef TPRL_PLANNER_HPP_
#define TPRL_PLANNER_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tprl/geometry.hpp"
#include "tprl/world.hpp"

namespace tprl {

enum class HighLevelAction : int { kStay = 0, kChangeLeft = 1, kChangeRight = 2 };

inline constexpr int kActionCount = 3;

HighLevelAction action_from_int(int value);

// Lane changes off the edge of the road degrade to kStay.
HighLevelAction effective_action(HighLevelAction action, int lane,
                                 const TrackMap& map);

struct PlannerConfig {
  // Search lattice.
  double xy_resolution = 0.05;
  double theta_resolution = 10.0 * std::numbers::pi / 180.0;
  double primitive_arc = 0.15;
  int primitive_substeps = 5;
  int node_budget = 200000;
  double steer_change_weight = 0.1;
  double max_heading_deviation = std::numbers::pi / 3.0;
  // Goal region around the goal pose, in the goal frame.
  double goal_longitudinal_tolerance = 0.018;
  double goal_lateral_tolerance = 0.05;
  double goal_heading_tolerance = 10.0 * std::numbers::pi / 180.0;
  double goal_lookahead = 1.5;
  // Safety.
  double r_safe = 0.1;
  double search_margin = 0.03;
  double verify_dt = 0.01;
  double d_emergency = 0.25;
  double emergency_hysteresis = 0.05;
  // Speeds and control.
  double cruise_speed = 0.556;
  double follow_speed = 0.278;
  double follow_range = 3.0;
  double follow_gap = 0.5;
  double follow_gain = 0.5;
  double accel_limit = 1.0;
  double brake_decel = 3.0;
  double speed_gain = 2.0;
  double pursuit_lookahead = 0.25;
};

struct GoalPose {
  Pose2 pose;
  double v = 0.0;
  int lane = 0;
  double s = 0.0;
};

GoalPose lane_change_goal(const WorldState& world, const TrackMap& map,
                          HighLevelAction action, const PlannerConfig& cfg);

struct TrajectorySample {
  double t = 0.0;
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double v = 0.0;
  double arc = 0.0;
};

struct Trajectory {
  std::vector<TrajectorySample> samples;
  int goal_lane = 0;
  std::int64_t creation_step = 0;

  double duration() const { return samples.empty() ? 0.0 : samples.back().t; }
  double length() const { return samples.empty() ? 0.0 : samples.back().arc; }
  // Pose interpolated in time, clamped to the trajectory ends.
  Pose2 pose_at_time(double t) const;
};

// Obstacle with a constant-velocity prediction along a lane, or static.
struct Obstacle {
  enum class Motion { kStatic, kAlongLane };
  Motion motion = Motion::kStatic;
  OrientedBox box;  // pose at t = 0
  int lane = 0;
  double s0 = 0.0;
  double d0 = 0.0;
  double speed = 0.0;

  OrientedBox box_at(double t, const TrackMap& map) const;
};

std::vector<Obstacle> predict_obstacles(const WorldState& world,
                                        const TrackMap& map);

struct PlanRequest {
  Pose2 start;
  double start_speed = 0.0;
  GoalPose goal;
  std::vector<Obstacle> obstacles;
  std::int64_t creation_step = 0;
};

struct PlanResult {
  std::optional<Trajectory> trajectory;
  int nodes_created = 0;
  std::string failure;
};

PlanResult hybrid_astar_plan(const TrackMap& map, const PlanRequest& request,
                             const PlannerConfig& cfg,
                             const VehicleParams& vehicle);

// Minimum box distance between the ego following `traj` and the predicted
// obstacles, sampled every `dt` seconds.
double trajectory_clearance(const Trajectory& traj,
                            const std::vector<Obstacle>& obstacles,
                            const TrackMap& map, const VehicleParams& vehicle,
                            double dt);

struct TrackOutput {
  Control control;
  bool completed = false;
  std::size_t index = 0;
};

// Pure pursuit on the path plus proportional speed control.
TrackOutput track_trajectory(const VehicleState& state, const Trajectory& traj,
                             std::size_t hint_index, const PlannerConfig& cfg,
                             const VehicleParams& vehicle);

// Centerline-following control for `lane` with gap keeping to a lead vehicle.
Control lane_keep_control(const WorldState& world, const TrackMap& map,
                          int lane, const PlannerConfig& cfg);

// Bumper gap to the target when it is in the ego's lane and ahead.
std::optional<double> same_lane_lead_gap(const WorldState& world,
                                         const TrackMap& map);

bool emergency_check(const WorldState& world, const TrackMap& map,
                     const PlannerConfig& cfg);

enum PlannerEvent : std::uint32_t {
  kPlannerNone = 0,
  kPlannerPlanned = 1u << 0,
  kPlannerRefused = 1u << 1,
  kPlannerCompleted = 1u << 2,
  kPlannerEmergency = 1u << 3,  // supervisor activation (rising edge)
  kPlannerPlanFailed = 1u << 4,
  kPlannerEmergencyActive = 1u << 5,
  kPlannerAborted = 1u << 6,
};

std::string planner_events_to_string(std::uint32_t events);

struct PlannerState {
  std::optional<Trajectory> active_trajectory;
  std::size_t tracker_index = 0;
  bool emergency = false;
};

struct ActionRequest {
  HighLevelAction action = HighLevelAction::kStay;
  // False while a previously submitted command is merely being held.
  bool is_new = true;
};

struct PlannerStepResult {
  Control control;
  std::uint32_t events = kPlannerNone;
  PlannerState state;
};

PlannerStepResult planner_step(const PlannerState& pstate,
                               const WorldState& world, const TrackMap& map,
                               ActionRequest request, const PlannerConfig& cfg);

}  // namespace tprl

#endif  // TPRL_PLANNER_HPP_

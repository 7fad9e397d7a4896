#ifndef TPRL_WORLD_HPP_
#define TPRL_WORLD_HPP_

#include <array>
#include <cstdint>
#include <stdexcept>

#include "tprl/geometry.hpp"

namespace tprl {

// 1:10 model-car scale.
struct VehicleParams {
  double wheelbase = 0.36;
  double length = 0.4;
  double width = 0.2;
  double v_max = 1.0;
  double steer_max = std::numbers::pi / 6.0;
};

struct Control {
  double accel = 0.0;
  double steer = 0.0;
};

struct VehicleState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double v = 0.0;
  int lane = 0;
  double length = 0.4;
  double width = 0.2;

  Vec2 position() const { return {x, y}; }
};

// Kinematic bicycle update; steering is saturated at +-steer_max and speed is
// clamped to [0, v_max].
VehicleState step_vehicle(const VehicleState& state, Control control, double dt,
                          const VehicleParams& params);

struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double length = 0.0;
  double width = 0.0;

  std::array<Vec2, 4> corners() const;
};

inline OrientedBox footprint(const VehicleState& s) {
  return {{s.x, s.y}, s.theta, s.length, s.width};
}

// Strict overlap by the separating-axis test; touching boxes do not overlap.
bool boxes_overlap(const OrientedBox& a, const OrientedBox& b);
// Euclidean distance between two boxes, 0 when they overlap.
double box_distance(const OrientedBox& a, const OrientedBox& b);

enum WorldEvent : std::uint32_t {
  kEventNone = 0,
  kEventEmergencyBrake = 1u << 0,
  kEventCollision = 1u << 1,
  kEventLapCompleted = 1u << 2,
  kEventTargetLapCompleted = 1u << 3,
};

struct FrenetObservation {
  double r_s = 0.0;
  double r_d = 0.0;
  double d_l = 0.0;
  double d_r = 0.0;
  double v = 0.0;

  std::array<double, 5> to_array() const { return {r_s, r_d, d_l, d_r, v}; }
};

class ScenarioError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScenarioConfig {
  double dt = 0.02;
  double target_speed = 0.278;
  double ego_speed = 0.556;
  double ego_delay = 8.0;
  double target_spawn_s = 0.0;
  double ego_spawn_s = 0.0;
  int target_lane = -1;  // -1 selects the rightmost lane
  int ego_lane = -1;
  VehicleParams vehicle;
};

// Lead vehicle: rides its lane centerline at a constant commanded speed.
struct TargetPolicy {
  double speed = 0.278;
};

struct WorldState {
  VehicleState ego;
  VehicleState target;
  VehicleParams vehicle;
  double target_s = 0.0;
  std::int64_t step_index = 0;
  double dt = 0.02;
  std::uint32_t events = kEventNone;  // events raised by the last step
  bool halted = false;
  // Unwrapped progress along the reference (ego) and target lane.
  double ego_s = 0.0;
  double ego_progress = 0.0;
  double target_progress = 0.0;
  int ego_laps = 0;
  int target_laps = 0;
  int ego_prev_lane = 0;

  double sim_time() const { return static_cast<double>(step_index) * dt; }
};

WorldState init_scenario(const ScenarioConfig& cfg, const TrackMap& map);

// Advances only the lead vehicle; used while the ego is not yet spawned.
WorldState step_target_only(const WorldState& world, const TrackMap& map,
                            const TargetPolicy& target_policy);

WorldState world_step(const WorldState& world, const TrackMap& map,
                      Control ego_control, const TargetPolicy& target_policy);

FrenetObservation observe(const WorldState& world, const TrackMap& map);

bool check_collision(const WorldState& world);

// Longitudinal target-minus-ego offset along `lane`, wrapped on closed maps.
double longitudinal_offset(const WorldState& world, const TrackMap& map,
                           int lane);
// Bumper-to-bumper gap for a longitudinal centre offset.
inline double bumper_gap(double centre_offset, const VehicleState& a,
                         const VehicleState& b) {
  return std::abs(centre_offset) - 0.5 * (a.length + b.length);
}

}  // namespace tprl

#endif  // TPRL_WORLD_HPP_

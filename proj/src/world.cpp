#include "tprl/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tprl {

VehicleState step_vehicle(const VehicleState& state, Control control, double dt,
                          const VehicleParams& params) {
  const double steer =
      std::clamp(control.steer, -params.steer_max, params.steer_max);
  VehicleState next = state;
  next.x += state.v * std::cos(state.theta) * dt;
  next.y += state.v * std::sin(state.theta) * dt;
  next.theta += state.v * std::tan(steer) / params.wheelbase * dt;
  next.v = std::clamp(state.v + control.accel * dt, 0.0, params.v_max);
  return next;
}

std::array<Vec2, 4> OrientedBox::corners() const {
  const Vec2 f = unit_from_angle(heading);
  const Vec2 l{-f.y, f.x};
  const double hl = 0.5 * length;
  const double hw = 0.5 * width;
  return {center + hl * f + hw * l, center - hl * f + hw * l,
          center - hl * f - hw * l, center + hl * f - hw * l};
}

bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const double headings[] = {a.heading, b.heading};
  for (double h : headings) {
    const Vec2 axes[] = {unit_from_angle(h), {-std::sin(h), std::cos(h)}};
    for (const Vec2& axis : axes) {
      double a_min = std::numeric_limits<double>::infinity(), a_max = -a_min;
      double b_min = a_min, b_max = -a_min;
      for (const Vec2& c : ca) {
        a_min = std::min(a_min, dot(c, axis));
        a_max = std::max(a_max, dot(c, axis));
      }
      for (const Vec2& c : cb) {
        b_min = std::min(b_min, dot(c, axis));
        b_max = std::max(b_max, dot(c, axis));
      }
      if (a_max <= b_min || b_max <= a_min) return false;
    }
  }
  return true;
}

namespace {

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double t = std::clamp(dot(p - a, ab) / dot(ab, ab), 0.0, 1.0);
  return norm(p - (a + t * ab));
}

}  // namespace

double box_distance(const OrientedBox& a, const OrientedBox& b) {
  if (boxes_overlap(a, b)) return 0.0;
  const auto ca = a.corners();
  const auto cb = b.corners();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      best = std::min(best, point_segment_distance(ca[i], cb[j], cb[(j + 1) % 4]));
      best = std::min(best, point_segment_distance(cb[i], ca[j], ca[(j + 1) % 4]));
    }
  }
  return best;
}

namespace {

VehicleState place_on_lane(const TrackMap& map, int lane, double s, double v,
                           const VehicleParams& params) {
  const Pose2 pose = map.lane(lane).pose_at(s);
  VehicleState st;
  st.x = pose.position.x;
  st.y = pose.position.y;
  st.theta = pose.heading;
  st.v = v;
  st.lane = lane;
  st.length = params.length;
  st.width = params.width;
  return st;
}

}  // namespace

WorldState init_scenario(const ScenarioConfig& cfg, const TrackMap& map) {
  if (!(cfg.dt > 0.0)) throw ScenarioError("dt must be positive");
  if (cfg.ego_delay < 0.0) throw ScenarioError("ego delay must be >= 0");
  const int target_lane =
      cfg.target_lane < 0 ? map.rightmost_lane_index : cfg.target_lane;
  const int ego_lane = cfg.ego_lane < 0 ? map.rightmost_lane_index : cfg.ego_lane;
  if (target_lane >= map.lane_count || ego_lane >= map.lane_count) {
    throw ScenarioError("spawn lane out of range");
  }

  WorldState world;
  world.vehicle = cfg.vehicle;
  world.dt = cfg.dt;
  world.target_s = map.lane(target_lane).normalize_s(cfg.target_spawn_s);
  world.target = place_on_lane(map, target_lane, world.target_s,
                               cfg.target_speed, cfg.vehicle);

  const TargetPolicy lead{cfg.target_speed};
  const auto delay_steps =
      static_cast<std::int64_t>(std::llround(cfg.ego_delay / cfg.dt));
  for (std::int64_t k = 0; k < delay_steps; ++k) {
    world = step_target_only(world, map, lead);
  }
  world.events = kEventNone;

  world.ego =
      place_on_lane(map, ego_lane, cfg.ego_spawn_s, cfg.ego_speed, cfg.vehicle);
  world.ego_prev_lane = ego_lane;
  world.ego_s = map.reference().project(world.ego.position()).s;
  if (boxes_overlap(footprint(world.ego), footprint(world.target))) {
    throw ScenarioError("ego and target spawn footprints overlap");
  }
  return world;
}

WorldState step_target_only(const WorldState& world, const TrackMap& map,
                            const TargetPolicy& target_policy) {
  WorldState next = world;
  next.events = kEventNone;
  const ReferencePath& lane = map.lane(world.target.lane);
  const double ds = target_policy.speed * world.dt;
  next.target_s = lane.normalize_s(world.target_s + ds);
  const Pose2 pose = lane.pose_at(next.target_s);
  next.target.x = pose.position.x;
  next.target.y = pose.position.y;
  next.target.theta = pose.heading;
  next.target.v = target_policy.speed;
  next.target_progress += ds;
  const int laps =
      static_cast<int>(std::floor(next.target_progress / lane.total_length()));
  if (laps > world.target_laps) {
    next.target_laps = laps;
    next.events |= kEventTargetLapCompleted;
  }
  ++next.step_index;
  return next;
}

WorldState world_step(const WorldState& world, const TrackMap& map,
                      Control ego_control, const TargetPolicy& target_policy) {
  if (world.halted) throw ScenarioError("world is halted after a collision");
  WorldState next = step_target_only(world, map, target_policy);

  next.ego_prev_lane = world.ego.lane;
  next.ego = step_vehicle(world.ego, ego_control, world.dt, world.vehicle);
  next.ego.lane = map.nearest_lane(next.ego.position()).first;

  const ReferencePath& ref = map.reference();
  const double s_new = ref.project_near(next.ego.position(), world.ego_s, 1.0).s;
  next.ego_progress += ref.s_difference(s_new, world.ego_s);
  next.ego_s = s_new;
  const int laps =
      static_cast<int>(std::floor(next.ego_progress / ref.total_length()));
  if (laps > world.ego_laps) {
    next.ego_laps = laps;
    next.events |= kEventLapCompleted;
  }

  if (check_collision(next)) {
    next.events |= kEventCollision;
    next.halted = true;
  }
  return next;
}

double longitudinal_offset(const WorldState& world, const TrackMap& map,
                           int lane) {
  const ReferencePath& path = map.lane(lane);
  const FrenetCoord ego = path.project(world.ego.position());
  const FrenetCoord tgt = path.project(world.target.position());
  return path.s_difference(tgt.s, ego.s);
}

FrenetObservation observe(const WorldState& world, const TrackMap& map) {
  const int lane = world.ego.lane;
  const ReferencePath& path = map.lane(lane);
  const FrenetCoord ego = path.project(world.ego.position());
  const FrenetCoord tgt = path.project(world.target.position());
  const LaneDistances bounds = lane_boundary_distances(map, ego, lane);
  FrenetObservation obs;
  obs.r_s = path.s_difference(tgt.s, ego.s);
  obs.r_d = tgt.d - ego.d;
  obs.d_l = bounds.left;
  obs.d_r = bounds.right;
  obs.v = world.ego.v;
  return obs;
}

bool check_collision(const WorldState& world) {
  return boxes_overlap(footprint(world.ego), footprint(world.target));
}

}  // namespace tprl

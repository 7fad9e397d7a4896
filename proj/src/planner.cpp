#include "tprl/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <unordered_map>
#include <unordered_set>

namespace tprl {

HighLevelAction action_from_int(int value) {
  switch (value) {
    case 0: return HighLevelAction::kStay;
    case 1: return HighLevelAction::kChangeLeft;
    case 2: return HighLevelAction::kChangeRight;
    default: throw std::invalid_argument("action index out of range");
  }
}

HighLevelAction effective_action(HighLevelAction action, int lane,
                                 const TrackMap& map) {
  if (action == HighLevelAction::kChangeLeft && lane + 1 >= map.lane_count) {
    return HighLevelAction::kStay;
  }
  if (action == HighLevelAction::kChangeRight && lane <= 0) {
    return HighLevelAction::kStay;
  }
  return action;
}

std::optional<double> same_lane_lead_gap(const WorldState& world,
                                         const TrackMap& map) {
  const ReferencePath& path = map.lane(world.ego.lane);
  const FrenetCoord ego = path.project(world.ego.position());
  const FrenetCoord tgt = path.project(world.target.position());
  if (std::abs(tgt.d) >= 0.5 * map.lane_width) return std::nullopt;
  const double ds = path.s_difference(tgt.s, ego.s);
  if (ds <= 0.0) return std::nullopt;
  return bumper_gap(ds, world.ego, world.target);
}

namespace {

double follow_speed_for(const WorldState& world, const TrackMap& map,
                        const PlannerConfig& cfg) {
  const auto gap = same_lane_lead_gap(world, map);
  if (!gap || *gap > cfg.follow_range) return cfg.cruise_speed;
  const double v =
      world.target.v + cfg.follow_gain * (*gap - cfg.follow_gap);
  return std::clamp(v, 0.0, cfg.cruise_speed);
}

double pursuit_steer(const VehicleState& state, Vec2 look, double wheelbase) {
  const Vec2 rel = look - state.position();
  const double dist = norm(rel);
  if (dist < 1e-9) return 0.0;
  const double alpha = wrap_angle(std::atan2(rel.y, rel.x) - state.theta);
  return std::atan(2.0 * wheelbase * std::sin(alpha) / dist);
}

double speed_command(double v_ref, double v, const PlannerConfig& cfg) {
  return std::clamp(cfg.speed_gain * (v_ref - v), -cfg.accel_limit,
                    cfg.accel_limit);
}

}  // namespace

GoalPose lane_change_goal(const WorldState& world, const TrackMap& map,
                          HighLevelAction action, const PlannerConfig& cfg) {
  const int lane = world.ego.lane;
  const HighLevelAction eff = effective_action(action, lane, map);
  GoalPose goal;
  goal.lane = lane;
  if (eff == HighLevelAction::kChangeLeft) goal.lane = lane + 1;
  if (eff == HighLevelAction::kChangeRight) goal.lane = lane - 1;
  const ReferencePath& path = map.lane(goal.lane);
  const double s_ego = path.project(world.ego.position()).s;
  goal.s = path.normalize_s(s_ego + cfg.goal_lookahead);
  goal.pose = path.pose_at(goal.s);
  goal.v = eff == HighLevelAction::kStay ? follow_speed_for(world, map, cfg)
                                         : cfg.cruise_speed;
  return goal;
}

Pose2 Trajectory::pose_at_time(double t) const {
  if (samples.empty()) return {};
  if (t <= samples.front().t) {
    const auto& s = samples.front();
    return {{s.x, s.y}, s.theta};
  }
  if (t >= samples.back().t) {
    const auto& s = samples.back();
    return {{s.x, s.y}, s.theta};
  }
  const auto it = std::upper_bound(
      samples.begin(), samples.end(), t,
      [](double value, const TrajectorySample& s) { return value < s.t; });
  const auto& b = *it;
  const auto& a = *(it - 1);
  const double u = (t - a.t) / (b.t - a.t);
  const double dtheta = wrap_angle(b.theta - a.theta);
  return {{a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)},
          wrap_angle(a.theta + u * dtheta)};
}

OrientedBox Obstacle::box_at(double t, const TrackMap& map) const {
  if (motion == Motion::kStatic) return box;
  const ReferencePath& path = map.lane(lane);
  const Pose2 p = path.to_cartesian({path.normalize_s(s0 + speed * t), d0});
  return {p.position, p.heading, box.length, box.width};
}

std::vector<Obstacle> predict_obstacles(const WorldState& world,
                                        const TrackMap& map) {
  Obstacle o;
  o.motion = Obstacle::Motion::kAlongLane;
  o.box = footprint(world.target);
  o.lane = world.target.lane;
  o.s0 = world.target_s;
  o.d0 = 0.0;
  o.speed = world.target.v;
  (void)map;
  return {o};
}

namespace {

// Time to cover `arc` metres starting at v0 and ramping to v1 at accel a.
struct SpeedProfile {
  double v0 = 0.0;
  double v1 = 0.0;
  double a = 1.0;

  double ramp_length() const { return std::abs(v1 * v1 - v0 * v0) / (2.0 * a); }

  double speed_at(double arc) const {
    const double dr = ramp_length();
    if (arc >= dr) return v1;
    const double sign = v1 >= v0 ? 1.0 : -1.0;
    return std::sqrt(std::max(0.0, v0 * v0 + sign * 2.0 * a * arc));
  }

  double time_at(double arc) const {
    const double dr = ramp_length();
    const double sign = v1 >= v0 ? 1.0 : -1.0;
    if (arc <= dr) return sign * (speed_at(arc) - v0) / a;
    return std::abs(v1 - v0) / a + (arc - dr) / v1;
  }
};

struct Node {
  Pose2 pose;
  double g = 0.0;
  double arc = 0.0;
  double s_ref = 0.0;
  int steer_index = 0;
  int substeps = 0;
  int parent = -1;
  bool goal = false;
};

struct OpenEntry {
  double f;
  double g;
  int index;
  bool operator>(const OpenEntry& o) const {
    if (f != o.f) return f > o.f;
    if (g != o.g) return g < o.g;  // deeper first on ties
    return index > o.index;
  }
};

class ClearanceChecker {
 public:
  ClearanceChecker(const TrackMap& map, const std::vector<Obstacle>& obstacles,
                   const VehicleParams& vehicle)
      : map_(map), obstacles_(obstacles), vehicle_(vehicle) {
    ego_radius_ = 0.5 * std::hypot(vehicle.length, vehicle.width);
  }

  // Minimum box distance at time t; distances beyond `cap` may be reported
  // as any value >= cap.
  double distance(const Pose2& pose, double t, double cap) const {
    const OrientedBox ego{pose.position, pose.heading, vehicle_.length,
                          vehicle_.width};
    double best = std::numeric_limits<double>::infinity();
    for (const Obstacle& o : obstacles_) {
      const OrientedBox b = o.box_at(t, map_);
      const double bound = norm(b.center - ego.center) - ego_radius_ -
                           0.5 * std::hypot(b.length, b.width);
      if (bound > cap) {
        best = std::min(best, bound);
        continue;
      }
      best = std::min(best, box_distance(ego, b));
    }
    return best;
  }

 private:
  const TrackMap& map_;
  const std::vector<Obstacle>& obstacles_;
  VehicleParams vehicle_;
  double ego_radius_ = 0.0;
};

std::uint64_t bin_key(const Pose2& pose, const PlannerConfig& cfg) {
  const auto ix = static_cast<std::int64_t>(std::floor(pose.position.x / cfg.xy_resolution));
  const auto iy = static_cast<std::int64_t>(std::floor(pose.position.y / cfg.xy_resolution));
  const double h = wrap_angle(pose.heading) + std::numbers::pi;
  const auto it = static_cast<std::int64_t>(std::floor(h / cfg.theta_resolution));
  return (static_cast<std::uint64_t>(ix & 0xFFFFF) << 40) |
         (static_cast<std::uint64_t>(iy & 0xFFFFF) << 20) |
         static_cast<std::uint64_t>(it & 0xFFFFF);
}

Pose2 advance_arc(const Pose2& start, double curvature, double ds) {
  if (std::abs(curvature) < 1e-12) {
    return {start.position + ds * unit_from_angle(start.heading), start.heading};
  }
  const double th1 = start.heading + curvature * ds;
  const Vec2 delta{(std::sin(th1) - std::sin(start.heading)) / curvature,
                   (std::cos(start.heading) - std::cos(th1)) / curvature};
  return {start.position + delta, wrap_angle(th1)};
}

}  // namespace

double trajectory_clearance(const Trajectory& traj,
                            const std::vector<Obstacle>& obstacles,
                            const TrackMap& map, const VehicleParams& vehicle,
                            double dt) {
  const ClearanceChecker checker(map, obstacles, vehicle);
  double best = std::numeric_limits<double>::infinity();
  const double end = traj.duration();
  const auto n = static_cast<std::int64_t>(std::ceil(end / dt));
  for (std::int64_t k = 0; k <= n; ++k) {
    const double t = std::min(end, static_cast<double>(k) * dt);
    best = std::min(best, checker.distance(traj.pose_at_time(t), t, 1.0));
  }
  return best;
}

PlanResult hybrid_astar_plan(const TrackMap& map, const PlanRequest& request,
                             const PlannerConfig& cfg,
                             const VehicleParams& vehicle) {
  PlanResult result;
  const ReferencePath& ref = map.reference();
  const ClearanceChecker checker(map, request.obstacles, vehicle);
  const SpeedProfile profile{std::max(0.0, request.start_speed),
                             std::max(request.goal.v, 0.05), cfg.accel_limit};

  const double s_start = ref.project(request.start.position).s;
  const double s_goal_rel =
      ref.s_difference(ref.project(request.goal.pose.position).s, s_start);
  const double s_lo = -0.2;
  const double s_hi = std::max(s_goal_rel, 0.0) + 0.6;
  const double half = 0.5 * map.lane_width;
  const double d_lo = -half + 0.5 * vehicle.width;
  const double d_hi = (map.lane_count - 1) * map.lane_width + half -
                      0.5 * vehicle.width;
  const double search_clearance = cfg.r_safe + cfg.search_margin;

  constexpr int kSteerCount = 5;
  std::array<double, kSteerCount> curvatures{};
  for (int i = 0; i < kSteerCount; ++i) {
    const double steer = vehicle.steer_max * (i - 2) / 2.0;
    curvatures[i] = std::tan(steer) / vehicle.wheelbase;
  }

  const Pose2 goal = request.goal.pose;
  const Vec2 goal_f = unit_from_angle(goal.heading);
  const Vec2 goal_l{-goal_f.y, goal_f.x};
  auto heuristic = [&](const Pose2& p) {
    return std::max(0.0, norm(goal.position - p.position) -
                             cfg.goal_longitudinal_tolerance);
  };
  auto at_goal = [&](const Pose2& p) {
    const Vec2 e = p.position - goal.position;
    return std::abs(dot(e, goal_f)) <= cfg.goal_longitudinal_tolerance &&
           std::abs(dot(e, goal_l)) <= cfg.goal_lateral_tolerance &&
           std::abs(wrap_angle(p.heading - goal.heading)) <=
               cfg.goal_heading_tolerance;
  };

  std::vector<Node> nodes;
  nodes.reserve(4096);
  std::priority_queue<OpenEntry, std::vector<OpenEntry>, std::greater<>> open;
  std::unordered_set<std::uint64_t> closed;
  std::unordered_map<std::uint64_t, double> best_g;

  Node root;
  root.pose = request.start;
  root.s_ref = s_start;
  root.steer_index = 2;
  nodes.push_back(root);
  open.push({heuristic(root.pose), 0.0, 0});
  best_g[bin_key(root.pose, cfg)] = 0.0;

  const double sub = cfg.primitive_arc / cfg.primitive_substeps;
  int goal_index = -1;
  while (!open.empty()) {
    const OpenEntry top = open.top();
    open.pop();
    const Node cur = nodes[static_cast<std::size_t>(top.index)];
    const std::uint64_t key = bin_key(cur.pose, cfg);
    if (closed.count(key) && top.index != 0) continue;
    closed.insert(key);
    if (cur.goal) {
      goal_index = top.index;
      break;
    }
    for (int si = 0; si < kSteerCount; ++si) {
      if (static_cast<int>(nodes.size()) >= cfg.node_budget) break;
      Pose2 pose = cur.pose;
      double s_ref = cur.s_ref;
      bool ok = true;
      int steps = cfg.primitive_substeps;
      bool reached = false;
      for (int k = 1; k <= cfg.primitive_substeps && ok; ++k) {
        pose = advance_arc(cur.pose, curvatures[si], sub * k);
        const double arc = cur.arc + sub * k;
        if (k == cfg.primitive_substeps || k == (cfg.primitive_substeps + 1) / 2) {
          const FrenetCoord fc = ref.project_near(pose.position, s_ref, 0.5);
          s_ref = fc.s;
          const double s_rel = ref.s_difference(fc.s, s_start);
          if (fc.d < d_lo || fc.d > d_hi || s_rel < s_lo || s_rel > s_hi) {
            ok = false;
            break;
          }
          const double dev = wrap_angle(pose.heading - ref.pose_at(fc.s).heading);
          if (std::abs(dev) > cfg.max_heading_deviation) {
            ok = false;
            break;
          }
        }
        if (checker.distance(pose, profile.time_at(arc), search_clearance) <
            search_clearance) {
          ok = false;
          break;
        }
        // The last primitive is cut at the first sub-step inside the goal.
        if (at_goal(pose)) {
          steps = k;
          reached = true;
          break;
        }
      }
      if (!ok) continue;
      if (reached) {
        Node child;
        child.pose = pose;
        child.g = cur.g + sub * steps;
        child.arc = cur.arc + sub * steps;
        child.s_ref = s_ref;
        child.steer_index = si;
        child.substeps = steps;
        child.parent = top.index;
        child.goal = true;
        nodes.push_back(child);
        open.push({child.g, child.g, static_cast<int>(nodes.size()) - 1});
        continue;
      }
      const std::uint64_t nkey = bin_key(pose, cfg);
      if (closed.count(nkey)) continue;
      const double steer_change = std::abs(si - cur.steer_index) / 2.0;
      const double g = cur.g + cfg.primitive_arc +
                       cfg.steer_change_weight * cfg.primitive_arc * steer_change;
      const auto found = best_g.find(nkey);
      if (found != best_g.end() && found->second <= g) continue;
      best_g[nkey] = g;
      Node child;
      child.pose = pose;
      child.g = g;
      child.arc = cur.arc + cfg.primitive_arc;
      child.s_ref = s_ref;
      child.steer_index = si;
      child.substeps = steps;
      child.parent = top.index;
      nodes.push_back(child);
      open.push({g + heuristic(pose), g, static_cast<int>(nodes.size()) - 1});
    }
    if (static_cast<int>(nodes.size()) >= cfg.node_budget) {
      result.nodes_created = static_cast<int>(nodes.size());
      result.failure = "node budget exhausted";
      return result;
    }
  }
  result.nodes_created = static_cast<int>(nodes.size());
  if (goal_index < 0) {
    result.failure = "goal unreachable";
    return result;
  }

  std::vector<int> chain;
  for (int i = goal_index; i >= 0; i = nodes[static_cast<std::size_t>(i)].parent) {
    chain.push_back(i);
  }
  std::reverse(chain.begin(), chain.end());

  // Resample each primitive at its sub-step spacing.
  Trajectory traj;
  traj.goal_lane = request.goal.lane;
  traj.creation_step = request.creation_step;
  const double total = nodes[static_cast<std::size_t>(goal_index)].arc;
  const double v_goal = std::max(request.goal.v, 0.0);
  const double v_cruise = profile.v1;
  auto push = [&](const Pose2& p, double arc) {
    TrajectorySample s;
    s.x = p.position.x;
    s.y = p.position.y;
    s.theta = p.heading;
    s.arc = arc;
    traj.samples.push_back(s);
  };
  push(request.start, 0.0);
  for (std::size_t c = 1; c < chain.size(); ++c) {
    const Node& parent = nodes[static_cast<std::size_t>(chain[c - 1])];
    const Node& child = nodes[static_cast<std::size_t>(chain[c])];
    for (int k = 1; k <= child.substeps; ++k) {
      push(advance_arc(parent.pose, curvatures[child.steer_index], sub * k),
           parent.arc + sub * k);
    }
  }

  // Trapezoidal timing: ramp to cruise, then down to the goal speed.
  const double decel_len =
      v_goal < v_cruise ? (v_cruise * v_cruise - v_goal * v_goal) / (2.0 * cfg.accel_limit)
                        : 0.0;
  double t = 0.0;
  for (std::size_t i = 0; i < traj.samples.size(); ++i) {
    auto& s = traj.samples[i];
    const double v_up = profile.speed_at(s.arc);
    const double remaining = total - s.arc;
    double v = v_up;
    if (remaining < decel_len) {
      v = std::min(v, std::sqrt(v_goal * v_goal + 2.0 * cfg.accel_limit * remaining));
    }
    s.v = v;
    if (i > 0) {
      const auto& prev = traj.samples[i - 1];
      const double ds = s.arc - prev.arc;
      const double v_avg = std::max(0.5 * (prev.v + s.v), 1e-3);
      t += ds / v_avg;
    }
    s.t = t;
  }

  if (trajectory_clearance(traj, request.obstacles, map, vehicle, cfg.verify_dt) <
      cfg.r_safe) {
    result.failure = "clearance verification failed";
    return result;
  }
  result.trajectory = std::move(traj);
  return result;
}

TrackOutput track_trajectory(const VehicleState& state, const Trajectory& traj,
                             std::size_t hint_index, const PlannerConfig& cfg,
                             const VehicleParams& vehicle) {
  TrackOutput out;
  const auto& smp = traj.samples;
  if (smp.empty()) {
    out.completed = true;
    return out;
  }
  const std::size_t last = smp.size() - 1;
  std::size_t idx = std::min(hint_index, last);
  double best = std::numeric_limits<double>::infinity();
  const std::size_t stop = std::min(last, idx + 60);
  for (std::size_t i = idx; i <= stop; ++i) {
    const double d = norm(Vec2{smp[i].x, smp[i].y} - state.position());
    if (d < best) {
      best = d;
      idx = i;
    }
  }
  out.index = idx;

  const TrajectorySample& end = smp[last];
  const Vec2 end_dir = unit_from_angle(end.theta);
  if (dot(state.position() - Vec2{end.x, end.y}, end_dir) >= 0.0) {
    out.completed = true;
  }

  // Lookahead point along the path, extended past the end on the final
  // heading.
  const double target_arc = smp[idx].arc + cfg.pursuit_lookahead;
  Vec2 look;
  if (target_arc >= end.arc) {
    look = Vec2{end.x, end.y} + (target_arc - end.arc) * end_dir;
  } else {
    std::size_t j = idx;
    while (j + 1 < smp.size() && smp[j + 1].arc < target_arc) ++j;
    const auto& a = smp[j];
    const auto& b = smp[j + 1];
    const double u = (target_arc - a.arc) / (b.arc - a.arc);
    look = {a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)};
  }
  out.control.steer = std::clamp(pursuit_steer(state, look, vehicle.wheelbase),
                                 -vehicle.steer_max, vehicle.steer_max);
  // Next sample's speed, so a plan that starts from standstill gets moving.
  out.control.accel = speed_command(smp[std::min(idx + 1, last)].v, state.v, cfg);
  return out;
}

Control lane_keep_control(const WorldState& world, const TrackMap& map,
                          int lane, const PlannerConfig& cfg) {
  const ReferencePath& path = map.lane(lane);
  const FrenetCoord fc = path.project(world.ego.position());
  const Vec2 look = path.pose_at(path.normalize_s(fc.s + cfg.pursuit_lookahead)).position;
  Control c;
  c.steer = std::clamp(pursuit_steer(world.ego, look, world.vehicle.wheelbase),
                       -world.vehicle.steer_max, world.vehicle.steer_max);
  c.accel = speed_command(follow_speed_for(world, map, cfg), world.ego.v, cfg);
  return c;
}

bool emergency_check(const WorldState& world, const TrackMap& map,
                     const PlannerConfig& cfg) {
  const auto gap = same_lane_lead_gap(world, map);
  return gap && *gap < cfg.d_emergency && world.ego.v > world.target.v;
}

std::string planner_events_to_string(std::uint32_t events) {
  static const std::pair<std::uint32_t, const char*> kNames[] = {
      {kPlannerPlanned, "planned"},
      {kPlannerRefused, "refused"},
      {kPlannerCompleted, "completed"},
      {kPlannerEmergency, "emergency"},
      {kPlannerPlanFailed, "plan_failed"},
      {kPlannerEmergencyActive, "emergency_active"},
      {kPlannerAborted, "aborted"},
  };
  std::string out;
  for (const auto& [bit, name] : kNames) {
    if (events & bit) {
      if (!out.empty()) out += ',';
      out += name;
    }
  }
  return out;
}

PlannerStepResult planner_step(const PlannerState& pstate,
                               const WorldState& world, const TrackMap& map,
                               ActionRequest request, const PlannerConfig& cfg) {
  PlannerStepResult out;
  out.state = pstate;

  bool emergency;
  if (pstate.emergency) {
    const auto gap = same_lane_lead_gap(world, map);
    emergency = gap && *gap < cfg.d_emergency + cfg.emergency_hysteresis;
  } else {
    emergency = emergency_check(world, map, cfg);
  }
  if (emergency) {
    if (!pstate.emergency) out.events |= kPlannerEmergency;
    out.events |= kPlannerEmergencyActive;
    if (out.state.active_trajectory) {
      out.state.active_trajectory.reset();
      out.state.tracker_index = 0;
      out.events |= kPlannerAborted;
    }
    if (request.is_new && request.action != HighLevelAction::kStay) {
      out.events |= kPlannerRefused;
    }
    out.state.emergency = true;
    out.control = lane_keep_control(world, map, world.ego.lane, cfg);
    out.control.accel = -cfg.brake_decel;
    return out;
  }
  out.state.emergency = false;

  if (request.is_new) {
    if (out.state.active_trajectory) {
      out.events |= kPlannerRefused;
    } else if (effective_action(request.action, world.ego.lane, map) !=
               HighLevelAction::kStay) {
      PlanRequest req;
      req.start = {world.ego.position(), world.ego.theta};
      req.start_speed = world.ego.v;
      req.goal = lane_change_goal(world, map, request.action, cfg);
      req.obstacles = predict_obstacles(world, map);
      req.creation_step = world.step_index;
      PlanResult plan = hybrid_astar_plan(map, req, cfg, world.vehicle);
      if (plan.trajectory) {
        out.state.active_trajectory = std::move(plan.trajectory);
        out.state.tracker_index = 0;
        out.events |= kPlannerPlanned;
      } else {
        out.events |= kPlannerPlanFailed;
      }
    }
  }

  if (out.state.active_trajectory) {
    const TrackOutput tr =
        track_trajectory(world.ego, *out.state.active_trajectory,
                         out.state.tracker_index, cfg, world.vehicle);
    if (!tr.completed) {
      out.state.tracker_index = tr.index;
      out.control = tr.control;
      return out;
    }
    out.state.active_trajectory.reset();
    out.state.tracker_index = 0;
    out.events |= kPlannerCompleted;
  }
  out.control = lane_keep_control(world, map, world.ego.lane, cfg);
  return out;
}

}  // namespace tprl

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <limits>

#include "tprl/planner.hpp"

using namespace tprl;

namespace {

VehicleState on_lane(const TrackMap& map, int lane, double s, double v) {
  const Pose2 p = map.lane(lane).pose_at(s);
  VehicleState st;
  st.x = p.position.x;
  st.y = p.position.y;
  st.theta = p.heading;
  st.v = v;
  st.lane = lane;
  return st;
}

WorldState make_world(const TrackMap& map, int ego_lane, double ego_s,
                      double ego_v, int tgt_lane, double tgt_s, double tgt_v) {
  WorldState w;
  w.ego = on_lane(map, ego_lane, ego_s, ego_v);
  w.target = on_lane(map, tgt_lane, tgt_s, tgt_v);
  w.target_s = tgt_s;
  w.ego_prev_lane = ego_lane;
  w.ego_s = map.reference().project(w.ego.position()).s;
  return w;
}

// Independent dense sampler: walks the samples in time, predicts the lead on
// its centerline, and measures box distance.
double oracle_clearance(const Trajectory& traj, const TrackMap& map, int lane,
                        double s0, double v) {
  double best = std::numeric_limits<double>::infinity();
  const auto& smp = traj.samples;
  std::size_t j = 0;
  for (double t = 0.0; t <= smp.back().t + 1e-12; t += 0.01) {
    while (j + 1 < smp.size() && smp[j + 1].t < t) ++j;
    const auto& a = smp[j];
    const auto& b = smp[std::min(j + 1, smp.size() - 1)];
    const double u = b.t > a.t ? std::clamp((t - a.t) / (b.t - a.t), 0.0, 1.0) : 0.0;
    const OrientedBox ego{{a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)},
                          a.theta + u * wrap_angle(b.theta - a.theta), 0.4, 0.2};
    const Pose2 tp = map.lane(lane).pose_at(map.lane(lane).normalize_s(s0 + v * t));
    const OrientedBox tgt{tp.position, tp.heading, 0.4, 0.2};
    best = std::min(best, box_distance(ego, tgt));
  }
  return best;
}

// Replays each sample-to-sample step with step_vehicle under a constant
// admissible steering angle.
double feasibility_error(const Trajectory& traj, const VehicleParams& vp) {
  double worst = 0.0;
  for (std::size_t i = 0; i + 1 < traj.samples.size(); ++i) {
    const auto& a = traj.samples[i];
    const auto& b = traj.samples[i + 1];
    const double ds = b.arc - a.arc;
    const double dth = wrap_angle(b.theta - a.theta);
    const double steer = std::atan(vp.wheelbase * dth / ds);
    if (std::abs(steer) > vp.steer_max + 1e-9) return 1e9;
    VehicleState st;
    st.x = a.x;
    st.y = a.y;
    st.theta = a.theta;
    st.v = 0.5;
    constexpr int kSub = 20;
    const double dt = ds / st.v / kSub;
    for (int k = 0; k < kSub; ++k) st = step_vehicle(st, {0.0, steer}, dt, vp);
    worst = std::max(worst, norm(st.position() - Vec2{b.x, b.y}));
  }
  return worst;
}

}  // namespace

TEST_CASE("boundary actions degrade to stay") {
  const TrackMap map = build_oval_map({});
  CHECK(effective_action(HighLevelAction::kChangeRight, 0, map) == HighLevelAction::kStay);
  CHECK(effective_action(HighLevelAction::kChangeLeft, 1, map) == HighLevelAction::kStay);
  CHECK(effective_action(HighLevelAction::kChangeLeft, 0, map) ==
        HighLevelAction::kChangeLeft);
  CHECK_THROWS(action_from_int(3));
}

TEST_CASE("lane change goal selection") {
  const TrackMap map = build_oval_map({});
  const PlannerConfig cfg;
  const WorldState w = make_world(map, 0, 0.5, 0.556, 1, 3.5, 0.278);
  const GoalPose left = lane_change_goal(w, map, HighLevelAction::kChangeLeft, cfg);
  CHECK(left.lane == 1);
  CHECK(std::abs(map.lane(1).project(left.pose.position).d) < 1e-9);
  CHECK(left.s == doctest::Approx(map.lane(1).project(w.ego.position()).s + 1.5));
  CHECK(left.v == 0.556);

  const GoalPose stay = lane_change_goal(w, map, HighLevelAction::kStay, cfg);
  const GoalPose right = lane_change_goal(w, map, HighLevelAction::kChangeRight, cfg);
  CHECK(right.lane == stay.lane);
  CHECK(right.pose.position == stay.pose.position);
  CHECK(right.v == stay.v);

  // Settled behind the slow lead at the follow gap.
  const WorldState f = make_world(map, 0, 0.5, 0.278, 0, 0.5 + 0.4 + 0.5, 0.278);
  CHECK(lane_change_goal(f, map, HighLevelAction::kStay, cfg).v ==
        doctest::Approx(0.278).epsilon(1e-9));
}

TEST_CASE("empty corridor gives a near-straight trajectory") {
  const TrackMap map = build_oval_map({});
  const PlannerConfig cfg;
  PlanRequest req;
  req.start = map.lane(0).pose_at(0.5);
  req.start_speed = 0.556;
  req.goal.pose = map.lane(0).pose_at(2.5);
  req.goal.v = 0.556;
  req.goal.lane = 0;
  const PlanResult r = hybrid_astar_plan(map, req, cfg, VehicleParams{});
  REQUIRE(r.trajectory);
  CHECK(r.trajectory->length() >= 2.0 - cfg.goal_longitudinal_tolerance - 1e-9);
  CHECK(r.trajectory->length() == doctest::Approx(2.0).epsilon(0.01));
  CHECK(r.trajectory->samples.front().t == 0.0);
  for (std::size_t i = 1; i < r.trajectory->samples.size(); ++i) {
    CHECK(r.trajectory->samples[i].t > r.trajectory->samples[i - 1].t);
  }
}

TEST_CASE("walled goal lane fails") {
  const TrackMap map = build_oval_map({});
  PlanRequest req;
  req.start = map.lane(0).pose_at(0.5);
  req.start_speed = 0.556;
  req.goal.pose = map.lane(1).pose_at(2.0);
  req.goal.v = 0.556;
  req.goal.lane = 1;
  for (double s = 0.3; s < 3.8; s += 0.3) {
    Obstacle o;
    o.box = {map.lane(1).pose_at(s).position, 0.0, 0.4, 0.6};
    req.obstacles.push_back(o);
  }
  const auto start = std::chrono::steady_clock::now();
  const PlanResult r = hybrid_astar_plan(map, req, PlannerConfig{}, VehicleParams{});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  CHECK_FALSE(r.trajectory);
  CHECK_FALSE(r.failure.empty());
  MESSAGE("walled search nodes=" << r.nodes_created << " seconds=" << secs);
}

TEST_CASE("overtaking trajectory clears the slow lead") {
  const TrackMap map = build_oval_map({});
  const PlannerConfig cfg;
  const WorldState w = make_world(map, 0, 0.5, 0.556, 0, 1.5, 0.278);
  PlanRequest req;
  req.start = {w.ego.position(), w.ego.theta};
  req.start_speed = w.ego.v;
  req.goal = lane_change_goal(w, map, HighLevelAction::kChangeLeft, cfg);
  req.obstacles = predict_obstacles(w, map);
  const auto start = std::chrono::steady_clock::now();
  const PlanResult r = hybrid_astar_plan(map, req, cfg, w.vehicle);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  MESSAGE("overtake nodes=" << r.nodes_created << " seconds=" << secs);
  REQUIRE(r.trajectory);
  const Trajectory& traj = *r.trajectory;
  CHECK(oracle_clearance(traj, map, 0, 1.5, 0.278) >= cfg.r_safe);
  CHECK(feasibility_error(traj, w.vehicle) < 1e-3);
  const FrenetCoord end = map.lane(1).project({traj.samples.back().x, traj.samples.back().y});
  CHECK(std::abs(end.d) <= cfg.goal_lateral_tolerance + 1e-9);
  CHECK(traj.goal_lane == 1);
}

TEST_CASE("tracker zero error and sign") {
  Trajectory traj;
  for (int i = 0; i <= 100; ++i) {
    TrajectorySample s;
    s.x = 0.03 * i;
    s.arc = s.x;
    s.v = 0.5;
    s.t = s.x / 0.5;
    traj.samples.push_back(s);
  }
  const PlannerConfig cfg;
  const VehicleParams vp;
  VehicleState st;
  st.x = 0.3;
  st.v = 0.5;
  TrackOutput out = track_trajectory(st, traj, 0, cfg, vp);
  CHECK(std::abs(out.control.steer) < 1e-6);
  CHECK(std::abs(out.control.accel) < 1e-6);
  CHECK_FALSE(out.completed);
  st.y = -0.05;
  out = track_trajectory(st, traj, 0, cfg, vp);
  CHECK(out.control.steer > 0.0);
  st.y = 0.05;
  CHECK(track_trajectory(st, traj, 0, cfg, vp).control.steer < 0.0);
  st.y = 0.0;
  st.x = 3.05;
  CHECK(track_trajectory(st, traj, 90, cfg, vp).completed);
  // Saturation.
  st.x = 0.3;
  st.y = -2.0;
  st.v = 0.0;
  out = track_trajectory(st, traj, 0, cfg, vp);
  CHECK(std::abs(out.control.steer) <= vp.steer_max);
  CHECK(out.control.accel <= cfg.accel_limit);
}

TEST_CASE("closed-loop lane change stays near the plan") {
  const TrackMap maps[] = {build_oval_map({}), build_cross_map({})};
  for (const TrackMap& map : maps) {
    const PlannerConfig cfg;
    WorldState w = make_world(map, 0, 0.5, 0.556, 0, 1.6, 0.278);
    PlannerState ps;
    PlannerStepResult r = planner_step(ps, w, map, {HighLevelAction::kChangeLeft, true}, cfg);
    REQUIRE((r.events & kPlannerPlanned) != 0);
    const Trajectory traj = *r.state.active_trajectory;
    double worst = 0.0;
    bool completed = false;
    for (int k = 0; k < 1000 && !completed; ++k) {
      w = world_step(w, map, r.control, TargetPolicy{0.278});
      REQUIRE_FALSE(w.halted);
      double cte = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i + 1 < traj.samples.size(); ++i) {
        const Vec2 a{traj.samples[i].x, traj.samples[i].y};
        const Vec2 b{traj.samples[i + 1].x, traj.samples[i + 1].y};
        const Vec2 ab = b - a;
        const double u = std::clamp(dot(w.ego.position() - a, ab) / dot(ab, ab), 0.0, 1.0);
        cte = std::min(cte, norm(w.ego.position() - (a + u * ab)));
      }
      worst = std::max(worst, cte);
      r = planner_step(r.state, w, map, {HighLevelAction::kChangeLeft, false}, cfg);
      completed = (r.events & kPlannerCompleted) != 0;
    }
    CHECK(completed);
    CHECK(worst < 0.05);
    CHECK(w.ego.lane == 1);
    MESSAGE(map.name << " max cross-track error " << worst);
  }
}

TEST_CASE("lane change from standstill completes") {
  const TrackMap map = build_oval_map({});
  const PlannerConfig cfg;
  WorldState w = make_world(map, 0, 0.5, 0.0, 0, 3.0, 0.0);
  PlannerState ps;
  PlannerStepResult r = planner_step(ps, w, map, {HighLevelAction::kChangeLeft, true}, cfg);
  REQUIRE((r.events & kPlannerPlanned) != 0);
  bool completed = false;
  int k = 0;
  for (; k < 1000 && !completed; ++k) {
    w = world_step(w, map, r.control, TargetPolicy{0.0});
    r = planner_step(r.state, w, map, {HighLevelAction::kChangeLeft, false}, cfg);
    completed = (r.events & kPlannerCompleted) != 0;
  }
  CHECK(completed);
  CHECK(w.ego.lane == 1);
  MESSAGE("standstill lane change took " << k << " steps");
}

TEST_CASE("emergency check gating") {
  const TrackMap map = build_oval_map({});
  const PlannerConfig cfg;
  WorldState w = make_world(map, 0, 0.5, 0.556, 0, 0.5 + 0.4 + 0.15, 0.278);
  CHECK(emergency_check(w, map, cfg));
  w.ego.v = 0.2;
  CHECK_FALSE(emergency_check(w, map, cfg));
  w = make_world(map, 0, 0.5, 0.556, 1, 0.5, 0.278);
  CHECK_FALSE(emergency_check(w, map, cfg));
  w = make_world(map, 0, 1.0, 0.556, 0, 0.5, 0.278);
  CHECK_FALSE(emergency_check(w, map, cfg));
}

TEST_CASE("planner_step planning, refusal and emergency override") {
  const TrackMap map = build_oval_map({});
  const PlannerConfig cfg;
  WorldState w = make_world(map, 0, 0.5, 0.556, 0, 2.5, 0.278);
  PlannerStepResult r = planner_step({}, w, map, {HighLevelAction::kChangeLeft, true}, cfg);
  CHECK((r.events & kPlannerPlanned) != 0);
  REQUIRE(r.state.active_trajectory);
  CHECK(r.state.active_trajectory->goal_lane == 1);
  const std::size_t n = r.state.active_trajectory->samples.size();

  w = world_step(w, map, r.control, TargetPolicy{0.278});
  PlannerStepResult again =
      planner_step(r.state, w, map, {HighLevelAction::kChangeLeft, true}, cfg);
  CHECK((again.events & kPlannerRefused) != 0);
  CHECK((again.events & kPlannerPlanned) == 0);
  REQUIRE(again.state.active_trajectory);
  CHECK(again.state.active_trajectory->samples.size() == n);

  // Lead cut in just ahead while the change is in progress.
  WorldState cut = w;
  const FrenetCoord fc = map.lane(0).project(w.ego.position());
  cut.target = on_lane(map, 0, fc.s + 0.4 + 0.1, 0.1);
  cut.target_s = fc.s + 0.5;
  PlannerStepResult em =
      planner_step(again.state, cut, map, {HighLevelAction::kStay, false}, cfg);
  CHECK((em.events & kPlannerEmergency) != 0);
  CHECK(em.control.accel == -cfg.brake_decel);
  CHECK_FALSE(em.state.active_trajectory);
  CHECK(em.state.emergency);
  // Latched: the next step reports activity but no new rising edge.
  PlannerStepResult held = planner_step(em.state, cut, map, {HighLevelAction::kStay, false}, cfg);
  CHECK((held.events & kPlannerEmergency) == 0);
  CHECK((held.events & kPlannerEmergencyActive) != 0);
  CHECK(held.control.accel == -cfg.brake_decel);
}

TEST_CASE("supervised following never collides") {
  const TrackMap map = build_oval_map({});
  const PlannerConfig cfg;
  std::uint64_t seed = 7;
  auto uniform = [&seed](double lo, double hi) {
    seed = seed * 6364136223846793005ULL + 1442695040888963407ULL;
    return lo + (hi - lo) * static_cast<double>(seed >> 11) * 0x1.0p-53;
  };
  int collisions = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const double gap = uniform(cfg.d_emergency, 1.5);
    const double v_lead = uniform(0.0, 0.5);
    WorldState w = make_world(map, 0, 0.5, uniform(0.0, 1.0), 0, 0.5 + 0.4 + gap, v_lead);
    PlannerState ps;
    for (int k = 0; k < 300; ++k) {
      const PlannerStepResult r = planner_step(ps, w, map, {HighLevelAction::kStay, false}, cfg);
      ps = r.state;
      w = world_step(w, map, r.control, TargetPolicy{v_lead});
      if (w.halted) {
        ++collisions;
        break;
      }
    }
  }
  CHECK(collisions == 0);
}

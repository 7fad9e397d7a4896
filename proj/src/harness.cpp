#include "tprl/harness.hpp"

#include <cmath>

namespace tprl {

ObsVec scale_observation(const FrenetObservation& obs, const ObsScale& scale) {
  return {obs.r_s / scale.r_s, obs.r_d / scale.r_d, obs.d_l / scale.d_l,
          obs.d_r / scale.d_r, obs.v / scale.v};
}

double accumulate_period_reward(std::span<const double> rewards, double gamma) {
  double sum = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    sum += discount * r;
    discount *= gamma;
  }
  return sum;
}

double brute_force_period_reward(std::span<const double> rewards, double gamma) {
  double sum = 0.0;
  for (std::size_t n = 0; n < rewards.size(); ++n) {
    sum += std::pow(gamma, static_cast<double>(n)) * rewards[n];
  }
  return sum;
}

Environment make_environment(TrackMap map, const RunConfig& cfg, int lap_quota) {
  if (lap_quota < 1) throw HarnessError("lap quota must be >= 1");
  Environment env;
  env.map = std::move(map);
  env.scenario = cfg.scenario;
  env.planner = cfg.planner;
  env.rules = cfg.rules;
  env.scale = cfg.obs_scale;
  env.lap_quota = lap_quota;
  env.self_check = cfg.self_check;
  env.world = init_scenario(env.scenario, env.map);
  return env;
}

void reset_environment(Environment& env) {
  env.world = init_scenario(env.scenario, env.map);
  env.pstate = PlannerState{};
  ++env.episode;
  env.episode_step = 0;
  env.done = false;
}

ObsVec current_obs(const Environment& env) {
  return scale_observation(observe(env.world, env.map), env.scale);
}

namespace {

VehicleSnapshot snapshot(const VehicleState& s) {
  return {s.x, s.y, s.theta, s.v, s.lane};
}

}  // namespace

StepRecord env_step(Environment& env, ActionRequest request) {
  if (env.done || env.world.halted) {
    throw HarnessError("cannot step a finished episode; reset the environment first");
  }
  StepRecord rec;
  rec.episode = env.episode;
  rec.episode_step = env.episode_step;
  rec.obs = observe(env.world, env.map);
  rec.action = static_cast<int>(request.action);
  rec.is_new = request.is_new;

  PlannerStepResult ps = planner_step(env.pstate, env.world, env.map, request, env.planner);
  env.pstate = std::move(ps.state);
  env.world = world_step(env.world, env.map, ps.control,
                         TargetPolicy{env.scenario.target_speed});
  ++env.episode_step;

  rec.step = env.world.step_index;
  rec.sim_time = env.world.sim_time();
  rec.ego = snapshot(env.world.ego);
  rec.target = snapshot(env.world.target);
  rec.planner_events = ps.events;
  rec.world_events = env.world.events;
  rec.atoms = eval_atomics(env.world, env.map, env.rules);
  rec.verdict = eval_rules(rec.atoms);
  rec.reward = static_cast<double>(rec.verdict.step_reward);
  rec.ego_laps = env.world.ego_laps;
  rec.terminal = (env.world.events & kEventCollision) != 0;
  rec.truncated = !rec.terminal && env.world.ego_laps >= env.lap_quota;
  env.done = rec.terminal || rec.truncated;
  return rec;
}

PeriodResult run_decision_period(Environment& env, HighLevelAction action, int n,
                                 double gamma) {
  if (n < 1) throw HarnessError("decision period must be >= 1 step");
  if (env.done || env.world.halted) {
    throw HarnessError("cannot run a decision period on a finished episode");
  }
  PeriodResult out;
  out.records.reserve(static_cast<std::size_t>(n));
  std::vector<double> rewards;
  rewards.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n && !env.done; ++k) {
    out.records.push_back(env_step(env, ActionRequest{action, k == 0}));
    const StepRecord& r = out.records.back();
    rewards.push_back(r.reward);
    out.terminal = out.terminal || r.terminal;
    out.truncated = out.truncated || r.truncated;
  }
  out.reward = accumulate_period_reward(rewards, gamma);
  if (env.self_check) {
    const double check = brute_force_period_reward(rewards, gamma);
    if (std::abs(check - out.reward) > 1e-12) {
      throw HarnessError("period reward self-check failed: " + std::to_string(out.reward) +
                         " vs " + std::to_string(check));
    }
  }
  out.next_obs = current_obs(env);
  return out;
}

namespace {

struct RolloutCounter {
  Rollout& out;
  CollectorState& col;
  int period;
  double gamma;
  const RolloutSinks& sinks;

  void operator()(const StepRecord& r) {
    ++out.sim_steps;
    if (r.world_events & kEventCollision) ++out.collisions;
    if (r.planner_events & kPlannerEmergency) ++out.emergencies;
    if (r.planner_events & kPlannerRefused) ++out.refusals;

    const double d = col.window_discount;
    col.window.total += d * r.reward;
    if (r.verdict.outcomes.size() > 0 && r.verdict.outcomes[0].violated) col.window.r1 -= d;
    if (r.verdict.outcomes.size() > 1 && r.verdict.outcomes[1].violated) col.window.r2 -= d;
    col.window_discount *= gamma;
    const bool ended = r.terminal || r.truncated;
    if (ended || (r.episode_step + 1) % period == 0) {
      out.periods.push_back(col.window);
      col.window = PeriodStat{};
      col.window_discount = 1.0;
    }
    if (ended) ++out.episodes_finished;
    if (sinks.on_step) sinks.on_step(r);
  }
};

}  // namespace

Rollout collect_rollout(Variant variant, int period, double gamma, Environment& env,
                        CollectorState& col, std::int64_t budget,
                        const RolloutPolicy& policy, const RolloutSinks& sinks) {
  if (budget <= 0) throw HarnessError("rollout budget must be positive");
  if (period < 1) throw HarnessError("decision period must be >= 1 step");
  if (variant != Variant::kNoSkip && budget < period) {
    throw HarnessError("rollout budget is shorter than one decision period");
  }
  Rollout out;
  RolloutCounter count{out, col, period, gamma, sinks};

  if (variant == Variant::kTprl) {
    const std::int64_t decisions = budget / period;
    out.items.reserve(static_cast<std::size_t>(decisions));
    for (std::int64_t k = 0; k < decisions; ++k) {
      if (env.done) reset_environment(env);
      Experience e;
      e.sample.obs = current_obs(env);
      const ActionChoice c = policy.choose(e.sample.obs);
      col.held_action = c.action;
      e.sample.action = c.action;
      e.sample.logprob_old = c.logprob;
      e.sample.value_est = c.value;
      // Finish the current window if a previous rollout left it open.
      const int steps = period - static_cast<int>(env.episode_step % period);
      PeriodResult pr = run_decision_period(env, action_from_int(c.action), steps, gamma);
      for (const StepRecord& r : pr.records) count(r);
      e.sample.reward = pr.reward;
      e.next_obs = pr.next_obs;
      e.terminal = pr.terminal;
      e.segment_end = pr.terminal || pr.truncated || k + 1 == decisions;
      e.first_step = pr.records.front().step;
      e.last_step = pr.records.back().step;
      ++col.decisions;
      out.items.push_back(e);
      if (sinks.on_sample) sinks.on_sample(out.items.back());
    }
    return out;
  }

  out.items.reserve(static_cast<std::size_t>(budget));
  for (std::int64_t i = 0; i < budget; ++i) {
    if (env.done) reset_environment(env);
    Experience e;
    e.sample.obs = current_obs(env);
    const bool decide = variant == Variant::kNoSkip || env.episode_step % period == 0;
    ActionChoice c;
    if (decide) {
      c = policy.choose(e.sample.obs);
      col.held_action = c.action;
    } else {
      c = policy.evaluate(e.sample.obs, col.held_action);
      c.action = col.held_action;
    }
    const StepRecord r =
        env_step(env, ActionRequest{action_from_int(c.action), decide});
    count(r);
    e.sample.action = c.action;
    e.sample.logprob_old = c.logprob;
    e.sample.value_est = c.value;
    e.sample.reward = r.reward;
    e.next_obs = current_obs(env);
    e.terminal = r.terminal;
    e.segment_end = env.done || i + 1 == budget;
    e.first_step = r.step;
    e.last_step = r.step;
    ++col.decisions;
    out.items.push_back(e);
    if (sinks.on_sample) sinks.on_sample(out.items.back());
  }
  return out;
}

}  // namespace tprl

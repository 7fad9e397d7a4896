#include "tprl/config.hpp"

#include <fstream>
#include <sstream>

namespace tprl {

using nlohmann::json;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kNoSkip: return "noskip";
    case Variant::kPeriodSkip: return "periodskip";
    case Variant::kTprl: return "tprl";
  }
  return "?";
}

std::string to_string(Algo a) { return a == Algo::kPpo ? "ppo" : "ddqn"; }

Variant parse_variant(const std::string& s) {
  if (s == "noskip" || s == "no_skip") return Variant::kNoSkip;
  if (s == "periodskip" || s == "period_skip") return Variant::kPeriodSkip;
  if (s == "tprl") return Variant::kTprl;
  throw ConfigError("unknown variant '" + s + "' (expected noskip, periodskip or tprl)");
}

Algo parse_algo(const std::string& s) {
  if (s == "ppo") return Algo::kPpo;
  if (s == "ddqn") return Algo::kDdqn;
  throw ConfigError("unknown algo '" + s + "' (expected ppo or ddqn)");
}

void validate(const RunConfig& cfg) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid config: ") + what);
  };
  require(cfg.train_map == "oval" || cfg.train_map == "cross", "train_map must be oval or cross");
  require(cfg.test_map == "oval" || cfg.test_map == "cross", "test_map must be oval or cross");
  require(cfg.epochs >= 1, "epochs must be >= 1");
  require(cfg.period >= 1, "period must be >= 1");
  require(cfg.steps_per_epoch >= cfg.period, "steps_per_epoch must be >= period");
  require(cfg.train_laps >= 1 && cfg.test_laps >= 1, "lap quotas must be >= 1");
  require(cfg.test_step_cap >= 1, "test_step_cap must be >= 1");
  require(cfg.checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(cfg.obs_scale.r_s > 0 && cfg.obs_scale.r_d > 0 && cfg.obs_scale.d_l > 0 &&
              cfg.obs_scale.d_r > 0 && cfg.obs_scale.v > 0,
          "obs_scale entries must be positive");
  require(cfg.ddqn.batch >= 1 && cfg.ddqn.capacity >= static_cast<std::size_t>(cfg.ddqn.batch),
          "ddqn capacity must hold at least one batch");
  require(cfg.ddqn.gamma > 0 && cfg.ddqn.gamma <= 1, "ddqn gamma must be in (0,1]");
  require(cfg.ddqn.lr > 0, "ddqn lr must be positive");
  try {
    validate(cfg.ppo);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

namespace {

json hidden_json(const std::vector<int>& h) { return json(h); }

json to_json_impl(const RunConfig& c) {
  json j;
  j["train_map"] = c.train_map;
  j["test_map"] = c.test_map;
  j["algo"] = to_string(c.algo);
  j["variant"] = to_string(c.variant);
  j["seed"] = c.seed;
  j["epochs"] = c.epochs;
  j["steps_per_epoch"] = c.steps_per_epoch;
  j["period"] = c.period;
  j["train_laps"] = c.train_laps;
  j["test_laps"] = c.test_laps;
  j["test_step_cap"] = c.test_step_cap;
  j["checkpoint_every"] = c.checkpoint_every;
  j["self_check"] = c.self_check;

  const PpoConfig& p = c.ppo;
  j["ppo"] = {{"clip", p.clip},
              {"actor_lr", p.actor_lr},
              {"critic_lr", p.critic_lr},
              {"train_iters", p.train_iters},
              {"gamma", p.gamma},
              {"lambda", p.lambda},
              {"minibatch", p.minibatch},
              {"c1", p.c1},
              {"c2", p.c2},
              {"combined_loss", p.combined_loss},
              {"normalize_advantages", p.normalize_advantages},
              {"parallel_kernels", p.parallel_kernels},
              {"hidden", hidden_json(p.hidden)},
              {"activation", "tanh"}};

  const DdqnConfig& d = c.ddqn;
  j["ddqn"] = {{"capacity", d.capacity},
               {"batch", d.batch},
               {"gamma", d.gamma},
               {"lr", d.lr},
               {"eps_start", d.eps_start},
               {"eps_end", d.eps_end},
               {"eps_fraction", d.eps_fraction},
               {"sync_interval", d.sync_interval},
               {"updates_per_epoch", d.updates_per_epoch},
               {"parallel_kernels", d.parallel_kernels},
               {"hidden", hidden_json(d.hidden)}};

  const ScenarioConfig& s = c.scenario;
  j["scenario"] = {{"dt", s.dt},
                   {"target_speed", s.target_speed},
                   {"ego_speed", s.ego_speed},
                   {"ego_delay", s.ego_delay},
                   {"target_spawn_s", s.target_spawn_s},
                   {"ego_spawn_s", s.ego_spawn_s},
                   {"target_lane", s.target_lane},
                   {"ego_lane", s.ego_lane},
                   {"vehicle",
                    {{"wheelbase", s.vehicle.wheelbase},
                     {"length", s.vehicle.length},
                     {"width", s.vehicle.width},
                     {"v_max", s.vehicle.v_max},
                     {"steer_max", s.vehicle.steer_max}}}};

  const PlannerConfig& q = c.planner;
  j["planner"] = {{"xy_resolution", q.xy_resolution},
                  {"theta_resolution", q.theta_resolution},
                  {"primitive_arc", q.primitive_arc},
                  {"primitive_substeps", q.primitive_substeps},
                  {"node_budget", q.node_budget},
                  {"steer_change_weight", q.steer_change_weight},
                  {"max_heading_deviation", q.max_heading_deviation},
                  {"goal_longitudinal_tolerance", q.goal_longitudinal_tolerance},
                  {"goal_lateral_tolerance", q.goal_lateral_tolerance},
                  {"goal_heading_tolerance", q.goal_heading_tolerance},
                  {"goal_lookahead", q.goal_lookahead},
                  {"r_safe", q.r_safe},
                  {"search_margin", q.search_margin},
                  {"verify_dt", q.verify_dt},
                  {"d_emergency", q.d_emergency},
                  {"emergency_hysteresis", q.emergency_hysteresis},
                  {"cruise_speed", q.cruise_speed},
                  {"follow_speed", q.follow_speed},
                  {"follow_range", q.follow_range},
                  {"follow_gap", q.follow_gap},
                  {"follow_gain", q.follow_gain},
                  {"accel_limit", q.accel_limit},
                  {"brake_decel", q.brake_decel},
                  {"speed_gain", q.speed_gain},
                  {"pursuit_lookahead", q.pursuit_lookahead}};

  j["rules"] = {{"r_dense", c.rules.r_dense},
                {"dense_count", c.rules.dense_count},
                {"t_headway", c.rules.t_headway},
                {"d_min", c.rules.d_min}};

  j["maps"] = {{"oval",
                {{"straight_length", c.oval.straight_length},
                 {"curve_radius", c.oval.curve_radius},
                 {"lane_width", c.oval.lane_width},
                 {"lane_count", c.oval.lane_count}}},
               {"cross", {{"lane_width", c.cross_lane_width}}}};

  j["obs_scale"] = {{"r_s", c.obs_scale.r_s},
                    {"r_d", c.obs_scale.r_d},
                    {"d_l", c.obs_scale.d_l},
                    {"d_r", c.obs_scale.d_r},
                    {"v", c.obs_scale.v}};
  return j;
}

// Every key of `user` must exist in `ref` with the same nesting.
void reject_unknown(const json& user, const json& ref, const std::string& prefix) {
  if (!user.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!ref.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    const json& r = ref.at(it.key());
    if (r.is_object()) {
      if (!it.value().is_object()) throw ConfigError("config key '" + path + "' must be an object");
      reject_unknown(it.value(), r, path);
    }
  }
}

template <typename T>
void get(const json& j, const char* key, T& out) {
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

json config_to_json(const RunConfig& cfg) { return to_json_impl(cfg); }

RunConfig config_from_json(const json& user) {
  if (!user.is_object()) throw ConfigError("config root must be an object");
  const json defaults = to_json_impl(RunConfig{});
  reject_unknown(user, defaults, "");
  json j = defaults;
  j.merge_patch(user);

  RunConfig c;
  get(j, "train_map", c.train_map);
  get(j, "test_map", c.test_map);
  std::string algo, variant;
  get(j, "algo", algo);
  get(j, "variant", variant);
  c.algo = parse_algo(algo);
  c.variant = parse_variant(variant);
  get(j, "seed", c.seed);
  get(j, "epochs", c.epochs);
  get(j, "steps_per_epoch", c.steps_per_epoch);
  get(j, "period", c.period);
  get(j, "train_laps", c.train_laps);
  get(j, "test_laps", c.test_laps);
  get(j, "test_step_cap", c.test_step_cap);
  get(j, "checkpoint_every", c.checkpoint_every);
  get(j, "self_check", c.self_check);

  const json& p = j["ppo"];
  get(p, "clip", c.ppo.clip);
  get(p, "actor_lr", c.ppo.actor_lr);
  get(p, "critic_lr", c.ppo.critic_lr);
  get(p, "train_iters", c.ppo.train_iters);
  get(p, "gamma", c.ppo.gamma);
  get(p, "lambda", c.ppo.lambda);
  get(p, "minibatch", c.ppo.minibatch);
  get(p, "c1", c.ppo.c1);
  get(p, "c2", c.ppo.c2);
  get(p, "combined_loss", c.ppo.combined_loss);
  get(p, "normalize_advantages", c.ppo.normalize_advantages);
  get(p, "parallel_kernels", c.ppo.parallel_kernels);
  get(p, "hidden", c.ppo.hidden);
  std::string activation;
  get(p, "activation", activation);
  if (activation != "tanh") throw ConfigError("only tanh hidden activations are supported");

  const json& d = j["ddqn"];
  get(d, "capacity", c.ddqn.capacity);
  get(d, "batch", c.ddqn.batch);
  get(d, "gamma", c.ddqn.gamma);
  get(d, "lr", c.ddqn.lr);
  get(d, "eps_start", c.ddqn.eps_start);
  get(d, "eps_end", c.ddqn.eps_end);
  get(d, "eps_fraction", c.ddqn.eps_fraction);
  get(d, "sync_interval", c.ddqn.sync_interval);
  get(d, "updates_per_epoch", c.ddqn.updates_per_epoch);
  get(d, "parallel_kernels", c.ddqn.parallel_kernels);
  get(d, "hidden", c.ddqn.hidden);

  const json& s = j["scenario"];
  get(s, "dt", c.scenario.dt);
  get(s, "target_speed", c.scenario.target_speed);
  get(s, "ego_speed", c.scenario.ego_speed);
  get(s, "ego_delay", c.scenario.ego_delay);
  get(s, "target_spawn_s", c.scenario.target_spawn_s);
  get(s, "ego_spawn_s", c.scenario.ego_spawn_s);
  get(s, "target_lane", c.scenario.target_lane);
  get(s, "ego_lane", c.scenario.ego_lane);
  const json& v = s["vehicle"];
  get(v, "wheelbase", c.scenario.vehicle.wheelbase);
  get(v, "length", c.scenario.vehicle.length);
  get(v, "width", c.scenario.vehicle.width);
  get(v, "v_max", c.scenario.vehicle.v_max);
  get(v, "steer_max", c.scenario.vehicle.steer_max);

  const json& q = j["planner"];
  get(q, "xy_resolution", c.planner.xy_resolution);
  get(q, "theta_resolution", c.planner.theta_resolution);
  get(q, "primitive_arc", c.planner.primitive_arc);
  get(q, "primitive_substeps", c.planner.primitive_substeps);
  get(q, "node_budget", c.planner.node_budget);
  get(q, "steer_change_weight", c.planner.steer_change_weight);
  get(q, "max_heading_deviation", c.planner.max_heading_deviation);
  get(q, "goal_longitudinal_tolerance", c.planner.goal_longitudinal_tolerance);
  get(q, "goal_lateral_tolerance", c.planner.goal_lateral_tolerance);
  get(q, "goal_heading_tolerance", c.planner.goal_heading_tolerance);
  get(q, "goal_lookahead", c.planner.goal_lookahead);
  get(q, "r_safe", c.planner.r_safe);
  get(q, "search_margin", c.planner.search_margin);
  get(q, "verify_dt", c.planner.verify_dt);
  get(q, "d_emergency", c.planner.d_emergency);
  get(q, "emergency_hysteresis", c.planner.emergency_hysteresis);
  get(q, "cruise_speed", c.planner.cruise_speed);
  get(q, "follow_speed", c.planner.follow_speed);
  get(q, "follow_range", c.planner.follow_range);
  get(q, "follow_gap", c.planner.follow_gap);
  get(q, "follow_gain", c.planner.follow_gain);
  get(q, "accel_limit", c.planner.accel_limit);
  get(q, "brake_decel", c.planner.brake_decel);
  get(q, "speed_gain", c.planner.speed_gain);
  get(q, "pursuit_lookahead", c.planner.pursuit_lookahead);

  const json& r = j["rules"];
  get(r, "r_dense", c.rules.r_dense);
  get(r, "dense_count", c.rules.dense_count);
  get(r, "t_headway", c.rules.t_headway);
  get(r, "d_min", c.rules.d_min);

  const json& o = j["maps"]["oval"];
  get(o, "straight_length", c.oval.straight_length);
  get(o, "curve_radius", c.oval.curve_radius);
  get(o, "lane_width", c.oval.lane_width);
  get(o, "lane_count", c.oval.lane_count);
  get(j["maps"]["cross"], "lane_width", c.cross_lane_width);

  const json& os = j["obs_scale"];
  get(os, "r_s", c.obs_scale.r_s);
  get(os, "r_d", c.obs_scale.r_d);
  get(os, "d_l", c.obs_scale.d_l);
  get(os, "d_r", c.obs_scale.d_r);
  get(os, "v", c.obs_scale.v);

  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t config_hash(const RunConfig& cfg) {
  return fnv1a(config_to_json(cfg).dump());
}

TrackMap build_named_map(const std::string& name, const RunConfig& cfg) {
  if (name == "oval") return build_oval_map(cfg.oval);
  if (name == "cross") {
    CrossParams p;
    p.lane_width = cfg.cross_lane_width;
    return build_cross_map(p);
  }
  throw ConfigError("unknown map '" + name + "'");
}

}  // namespace tprl

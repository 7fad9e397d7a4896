#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tprl/checkpoint.hpp"
#include "tprl/config.hpp"
#include "tprl/harness.hpp"
#include "tprl/planner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tprl;

namespace {

struct CommonFlags {
  std::string config;
  std::string map;
  std::string algo;
  std::string variant;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON run config (missing keys keep defaults)")
      ->check(CLI::ExistingFile);
  app->add_option("--map", f.map, "map id")->check(CLI::IsMember({"oval", "cross"}));
  app->add_option("--algo", f.algo, "learner")->check(CLI::IsMember({"ppo", "ddqn"}));
  app->add_option("--variant", f.variant, "decision cadence")
      ->check(CLI::IsMember({"noskip", "periodskip", "tprl"}));
  app->add_option("--seed", f.seed, "RNG seed");
  app->add_option("--out", f.out, "output directory");
}

RunConfig resolve(const CommonFlags& f, bool map_is_test) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config(f.config);
  if (!f.algo.empty()) cfg.algo = parse_algo(f.algo);
  if (!f.variant.empty()) cfg.variant = parse_variant(f.variant);
  if (f.seed) cfg.seed = *f.seed;
  if (!f.map.empty()) (map_is_test ? cfg.test_map : cfg.train_map) = f.map;
  validate(cfg);
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw HarnessError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

int cmd_train(const CommonFlags& f, bool quiet) {
  const RunConfig cfg = resolve(f, false);
  const TrainResult r = train(cfg, f.out, quiet ? nullptr : &std::cerr);
  std::cout << "curves: " << (fs::path(f.out) / "curves.csv").string() << "\n"
            << "checkpoint: " << r.final_checkpoint.string() << "\n";
  return 0;
}

int cmd_test(const CommonFlags& f, const std::string& checkpoint) {
  const RunConfig cfg = resolve(f, true);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  if (ckpt.algo != to_string(cfg.algo)) {
    std::cerr << "note: checkpoint algo '" << ckpt.algo << "' overrides --algo\n";
  }
  RunConfig run = cfg;
  run.algo = parse_algo(ckpt.algo);
  const Agent agent = agent_from_checkpoint(ckpt);
  const EvalResult r = evaluate(run, agent, run.test_map, run.test_laps);
  fs::create_directories(f.out);
  write_eval_trace(fs::path(f.out) / "trace.jsonl",
                   trace_header(run, "eval", run.test_map, run.test_laps), r.trace);
  const json m = metrics_to_json(r.metrics);
  write_json(fs::path(f.out) / "metrics.json", m);
  std::cout << m.dump(2) << "\n";
  if (!r.metrics.completed) {
    std::cerr << "error: lap quota not reached within " << run.test_step_cap
              << " steps (partial metrics written)\n";
    return 3;
  }
  return 0;
}

VehicleState vehicle_from_snapshot(const json& j, const TrackMap& map,
                                   const VehicleParams& params) {
  VehicleState s;
  s.length = params.length;
  s.width = params.width;
  s.v = j.value("v", 0.0);
  if (j.contains("x")) {
    s.x = j.at("x").get<double>();
    s.y = j.at("y").get<double>();
    s.theta = j.at("theta").get<double>();
    s.lane = map.nearest_lane(s.position()).first;
  } else {
    s.lane = j.at("lane").get<int>();
    if (s.lane < 0 || s.lane >= map.lane_count) throw ConfigError("snapshot lane out of range");
    const Pose2 p = map.lane(s.lane).pose_at(j.at("s").get<double>());
    s.x = p.position.x;
    s.y = p.position.y;
    s.theta = p.heading;
  }
  return s;
}

int cmd_plan(const CommonFlags& f, const std::string& snapshot_path, int action_id) {
  const RunConfig cfg = resolve(f, false);
  std::ifstream in(snapshot_path);
  if (!in) throw ConfigError("cannot open snapshot " + snapshot_path);
  const json snap = json::parse(in);
  const TrackMap map = build_named_map(cfg.train_map, cfg);

  WorldState world;
  world.vehicle = cfg.scenario.vehicle;
  world.dt = cfg.scenario.dt;
  world.ego = vehicle_from_snapshot(snap.at("ego"), map, world.vehicle);
  world.target = vehicle_from_snapshot(snap.at("target"), map, world.vehicle);
  world.target_s = map.lane(world.target.lane).project(world.target.position()).s;
  world.ego_s = map.reference().project(world.ego.position()).s;
  world.ego_prev_lane = world.ego.lane;
  world.step_index = snap.value("step", std::int64_t{0});

  const HighLevelAction action =
      effective_action(action_from_int(action_id), world.ego.lane, map);
  if (action == HighLevelAction::kStay) {
    std::cerr << "error: action keeps the current lane; nothing to plan\n";
    return 2;
  }
  PlanRequest req;
  req.start = Pose2{world.ego.position(), world.ego.theta};
  req.start_speed = world.ego.v;
  req.goal = lane_change_goal(world, map, action, cfg.planner);
  req.obstacles = predict_obstacles(world, map);
  req.creation_step = world.step_index;
  const PlanResult plan = hybrid_astar_plan(map, req, cfg.planner, world.vehicle);
  if (!plan.trajectory) {
    std::cerr << "planning failed after " << plan.nodes_created << " nodes: " << plan.failure
              << "\n";
    return 1;
  }
  std::ostream* out = &std::cout;
  std::ofstream file;
  if (f.out != "out" && f.out != "-") {
    file.open(f.out);
    if (!file) throw HarnessError("cannot write " + f.out);
    out = &file;
  }
  for (const TrajectorySample& s : plan.trajectory->samples) {
    *out << json{{"t", s.t}, {"x", s.x}, {"y", s.y}, {"theta", s.theta}, {"v", s.v}}.dump()
         << "\n";
  }
  return 0;
}

int cmd_replay(const std::string& trace_path, const std::string& metrics_path) {
  const TraceFile t = read_trace(trace_path);
  const Metrics m = metrics_from_trace(t.steps, t.header.at("lap_quota").get<int>(),
                                       t.header.at("config_hash").get<std::uint64_t>());
  const json mj = metrics_to_json(m);
  std::cout << mj.dump(2) << "\n";
  fs::path ref = metrics_path.empty() ? fs::path(trace_path).parent_path() / "metrics.json"
                                      : fs::path(metrics_path);
  if (!fs::exists(ref)) {
    if (!metrics_path.empty()) throw HarnessError("cannot open " + ref.string());
    return 0;
  }
  std::ifstream in(ref);
  const json recorded = json::parse(in);
  if (recorded != mj) {
    std::cerr << "replayed metrics differ from " << ref.string() << "\n";
    return 1;
  }
  std::cerr << "replayed metrics match " << ref.string() << "\n";
  return 0;
}

int cmd_check_trace(const std::string& trace_path) {
  const TraceFile t = read_trace(trace_path);
  const auto problems = check_trace(t);
  for (const auto& p : problems) std::cerr << p << "\n";
  std::cout << t.steps.size() << " steps, " << t.samples.size() << " samples, "
            << problems.size() << " problems\n";
  return problems.empty() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Time-period RL lane-change agent with a hybrid A* planner"};
  app.require_subcommand(1);

  CommonFlags train_f, test_f, plan_f;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "train an agent on the training map");
  add_common(train_cmd, train_f);
  train_cmd->add_flag("--quiet", quiet, "suppress per-epoch progress");

  std::string checkpoint;
  auto* test_cmd = app.add_subcommand("test", "evaluate a checkpoint greedily on the test map");
  add_common(test_cmd, test_f);
  test_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")
      ->required()
      ->check(CLI::ExistingFile);

  std::string snapshot;
  int action = 1;
  auto* plan_cmd = app.add_subcommand("plan", "plan one lane change from a scenario snapshot");
  add_common(plan_cmd, plan_f);
  plan_cmd->add_option("--snapshot", snapshot, "scenario snapshot JSON")
      ->required()
      ->check(CLI::ExistingFile);
  plan_cmd->add_option("--action", action, "0 stay, 1 change left, 2 change right")
      ->check(CLI::Range(0, 2));

  std::string trace, metrics;
  auto* replay_cmd = app.add_subcommand("replay", "recompute metrics from a trace");
  replay_cmd->add_option("trace", trace, "trace JSONL")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--metrics", metrics, "metrics file to compare against");

  std::string check_path;
  auto* check_cmd = app.add_subcommand("check-trace", "re-derive verdicts and invariants");
  check_cmd->add_option("trace", check_path, "trace JSONL")
      ->required()
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return cmd_train(train_f, quiet);
    if (*test_cmd) return cmd_test(test_f, checkpoint);
    if (*plan_cmd) return cmd_plan(plan_f, snapshot, action);
    if (*replay_cmd) return cmd_replay(trace, metrics);
    if (*check_cmd) return cmd_check_trace(check_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

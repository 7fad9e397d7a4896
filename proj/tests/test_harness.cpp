#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <vector>

#include "tprl/harness.hpp"

using namespace tprl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tprl_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

RolloutPolicy fixed_policy(int action) {
  RolloutPolicy p;
  p.choose = [action](const ObsVec&) { return ActionChoice{action, 0.0, 0.0}; };
  p.evaluate = [](const ObsVec&, int a) { return ActionChoice{a, 0.0, 0.0}; };
  return p;
}

RolloutPolicy random_policy(std::mt19937_64& rng) {
  RolloutPolicy p;
  p.choose = [&rng](const ObsVec&) {
    std::uniform_int_distribution<int> pick(0, kActionCount - 1);
    return ActionChoice{pick(rng), std::log(1.0 / 3.0), 0.0};
  };
  p.evaluate = [](const ObsVec&, int a) { return ActionChoice{a, std::log(1.0 / 3.0), 0.0}; };
  return p;
}

RunConfig small_config() {
  RunConfig cfg;
  cfg.epochs = 2;
  cfg.steps_per_epoch = 1200;
  cfg.checkpoint_every = 1;
  cfg.self_check = true;
  return cfg;
}

}  // namespace

TEST_CASE("period reward examples") {
  const std::vector<double> a{-1, -1, 0};
  CHECK(accumulate_period_reward(a, 0.99) == doctest::Approx(-1.99).epsilon(1e-15));
  const std::vector<double> zeros(300, 0.0);
  CHECK(accumulate_period_reward(zeros, 0.99) == 0.0);
  const std::vector<double> twos(300, -2.0);
  const double closed = -2.0 * (1.0 - std::pow(0.99, 300)) / (1.0 - 0.99);
  CHECK(std::abs(accumulate_period_reward(twos, 0.99) - closed) < 1e-9);
  CHECK(std::abs(closed - (-190.19)) < 0.01);
  CHECK(accumulate_period_reward({}, 0.99) == 0.0);
}

TEST_CASE("run_decision_period matches the per-step trace") {
  RunConfig cfg = small_config();
  Environment env = make_environment(build_oval_map(cfg.oval), cfg, 5);
  for (double gamma : {0.9, 0.99, 1.0}) {
    const PeriodResult pr = run_decision_period(env, HighLevelAction::kChangeLeft, 300, gamma);
    REQUIRE(pr.records.size() == 300);
    CHECK(pr.records.front().is_new);
    for (std::size_t k = 1; k < pr.records.size(); ++k) CHECK_FALSE(pr.records[k].is_new);
    std::vector<double> r;
    for (const auto& rec : pr.records) r.push_back(rec.reward);
    CHECK(std::abs(pr.reward - brute_force_period_reward(r, gamma)) < 1e-12);
  }
  CHECK_THROWS_AS(run_decision_period(env, HighLevelAction::kStay, 0, 0.99), HarnessError);
}

TEST_CASE("finished episodes refuse further steps") {
  RunConfig cfg = small_config();
  Environment env = make_environment(build_oval_map(cfg.oval), cfg, 1);
  while (!env.done) env_step(env, {HighLevelAction::kStay, false});
  CHECK_THROWS_AS(env_step(env, {HighLevelAction::kStay, false}), HarnessError);
  CHECK_THROWS_AS(run_decision_period(env, HighLevelAction::kStay, 3, 0.99), HarnessError);
  reset_environment(env);
  CHECK_FALSE(env.done);
  CHECK(env.episode == 1);
  CHECK(env.episode_step == 0);
}

TEST_CASE("sample-count law and action constancy") {
  RunConfig cfg = small_config();
  std::mt19937_64 rng(7);
  const RolloutPolicy policy = random_policy(rng);

  SUBCASE("tprl") {
    Environment env = make_environment(build_oval_map(cfg.oval), cfg, 5);
    CollectorState col;
    const Rollout ro = collect_rollout(Variant::kTprl, 300, 0.99, env, col, 900, policy);
    CHECK(ro.items.size() == 3);
    CHECK(ro.sim_steps == 900);
    CHECK(ro.items.back().segment_end);
    const Rollout ro2 = collect_rollout(Variant::kTprl, 300, 0.99, env, col, 1000, policy);
    CHECK(ro2.items.size() == 3);
  }
  SUBCASE("period skip") {
    Environment env = make_environment(build_oval_map(cfg.oval), cfg, 5);
    CollectorState col;
    std::vector<StepRecord> steps;
    RolloutSinks sinks;
    sinks.on_step = [&](const StepRecord& r) { steps.push_back(r); };
    const Rollout ro =
        collect_rollout(Variant::kPeriodSkip, 300, 0.99, env, col, 900, policy, sinks);
    CHECK(ro.items.size() == 900);
    for (std::size_t i = 0; i < ro.items.size(); ++i) {
      CHECK(ro.items[i].sample.action == ro.items[i / 300 * 300].sample.action);
      CHECK(steps[i].is_new == (i % 300 == 0));
    }
  }
  SUBCASE("no skip records refusals while a trajectory is active") {
    Environment env = make_environment(build_oval_map(cfg.oval), cfg, 5);
    CollectorState col;
    int refused = 0, planned = 0;
    RolloutSinks sinks;
    sinks.on_step = [&](const StepRecord& r) {
      refused += (r.planner_events & kPlannerRefused) != 0;
      planned += (r.planner_events & kPlannerPlanned) != 0;
      CHECK(r.is_new);
    };
    const Rollout ro = collect_rollout(Variant::kNoSkip, 300, 0.99, env, col, 200,
                                       fixed_policy(1), sinks);
    CHECK(ro.items.size() == 200);
    CHECK(planned >= 1);
    CHECK(refused > 0);
    CHECK(ro.refusals == refused);
  }
  SUBCASE("budget validation") {
    Environment env = make_environment(build_oval_map(cfg.oval), cfg, 5);
    CollectorState col;
    CHECK_THROWS_AS(collect_rollout(Variant::kTprl, 300, 0.99, env, col, 0, policy),
                    HarnessError);
    CHECK_THROWS_AS(collect_rollout(Variant::kPeriodSkip, 300, 0.99, env, col, 299, policy),
                    HarnessError);
  }
}

TEST_CASE("rollout traces pass check_trace for every variant") {
  RunConfig cfg = small_config();
  std::mt19937_64 rng(11);
  const RolloutPolicy policy = random_policy(rng);
  for (Variant v : {Variant::kTprl, Variant::kPeriodSkip, Variant::kNoSkip}) {
    cfg.variant = v;
    const fs::path dir = scratch("rollout_" + to_string(v));
    {
      Environment env = make_environment(build_oval_map(cfg.oval), cfg, 5);
      CollectorState col;
      TraceWriter w(dir / "trace.jsonl", trace_header(cfg, "rollout", "oval", 5));
      RolloutSinks sinks;
      sinks.on_step = [&](const StepRecord& r) { w.step(r); };
      sinks.on_sample = [&](const Experience& e) { w.sample(e); };
      collect_rollout(v, cfg.period, cfg.ppo.gamma, env, col, 1200, policy, sinks);
    }
    TraceFile t = read_trace(dir / "trace.jsonl");
    CHECK(t.steps.size() == 1200);
    CHECK(t.samples.size() == (v == Variant::kTprl ? 4u : 1200u));
    CHECK(check_trace(t).empty());

    // Tampering is detected.
    t.steps[5].reward -= 1.0;
    CHECK_FALSE(check_trace(t).empty());
  }
}

TEST_CASE("collisions terminate with a truncated period") {
  RunConfig cfg = small_config();
  cfg.planner.d_emergency = -1.0;  // supervisor off
  cfg.planner.follow_range = 0.0;  // no gap keeping
  cfg.scenario.ego_delay = 2.0;
  Environment env = make_environment(build_oval_map(cfg.oval), cfg, 5);
  const PeriodResult pr = run_decision_period(env, HighLevelAction::kStay, 3000, 0.99);
  CHECK(pr.terminal);
  CHECK(pr.records.size() < 3000);
  CHECK(pr.records.back().terminal);
  CHECK(env.done);
}

TEST_CASE("scripted always-stay policy is vacuously R2 compliant") {
  RunConfig cfg = small_config();
  Environment env = make_environment(build_cross_map({}), cfg, 1);
  std::vector<StepRecord> trace;
  while (!env.done) trace.push_back(env_step(env, {HighLevelAction::kStay, false}));
  const Metrics m = metrics_from_trace(trace, 1, 0);
  REQUIRE(m.compliance.per_rule.size() == 2);
  CHECK(m.compliance.per_rule[1] == 1.0);
  CHECK(m.compliance.per_rule[0] == 1.0);
  CHECK(m.completed);
  CHECK(m.collisions == 0);
  CHECK(m.time_cost == doctest::Approx(trace.back().sim_time));
  CHECK(m.time_cost > cfg.scenario.ego_delay);
}

TEST_CASE("scripted lane change with a huge gap: oracle on R1 and R2") {
  RunConfig cfg = small_config();
  const TrackMap map = build_oval_map(cfg.oval);
  cfg.scenario.ego_delay = 0.0;
  cfg.scenario.target_spawn_s = 0.5 * map.lane(0).total_length();
  Environment env = make_environment(map, cfg, 5);
  std::vector<StepRecord> trace;
  trace.push_back(env_step(env, {HighLevelAction::kChangeLeft, true}));
  for (int k = 0; k < 1500; ++k) trace.push_back(env_step(env, {HighLevelAction::kStay, false}));

  const double half_width = 0.5 * map.lane_width;
  int expected_r1 = 0, r1 = 0, r2 = 0;
  for (const StepRecord& r : trace) {
    const double d = map.reference().project({r.ego.x, r.ego.y}).d;
    VehicleState e, t;
    e.x = r.ego.x; e.y = r.ego.y; e.theta = r.ego.theta;
    t.x = r.target.x; t.y = r.target.y; t.theta = r.target.theta;
    const bool dense = box_distance(footprint(e), footprint(t)) < cfg.rules.r_dense;
    expected_r1 += (d > half_width && !dense) ? 1 : 0;
    r1 += r.verdict.outcomes[0].violated;
    r2 += r.verdict.outcomes[1].violated;
  }
  CHECK(r2 == 0);
  CHECK(expected_r1 > 500);
  CHECK(r1 == expected_r1);
}

TEST_CASE("config defaults reproduce the hyperparameter table") {
  const RunConfig cfg = load_config(fs::path(TPRL_SOURCE_DIR) / "configs" / "default.json");
  CHECK(cfg.ppo.actor_lr == 1e-3);
  CHECK(cfg.ppo.critic_lr == 3e-4);
  CHECK(cfg.ppo.train_iters == 80);
  CHECK(cfg.ppo.clip == 0.2);
  CHECK(cfg.ppo.gamma == 0.99);
  CHECK(cfg.ppo.minibatch == 46);
  CHECK(cfg.steps_per_epoch == 20000);
  CHECK(cfg.period == 300);
  CHECK(cfg.ppo.lambda == 0.97);
  CHECK(cfg.ppo.hidden == std::vector<int>{64, 32});
  CHECK(config_hash(cfg) == config_hash(config_from_json(config_to_json(cfg))));

  const RunConfig desk = load_config(fs::path(TPRL_SOURCE_DIR) / "configs" / "desk.json");
  CHECK(desk.epochs == 50);
  CHECK(desk.steps_per_epoch == 6000);
  CHECK(desk.ppo.minibatch == 46);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"ppo", {{"bogus", 1}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"variant", "sometimes"}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"period", 0}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"ppo", {{"clip", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"epochs", "many"}}), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
  const RunConfig c = config_from_json(nlohmann::json{{"ppo", {{"clip", 0.3}}}, {"seed", 9}});
  CHECK(c.ppo.clip == 0.3);
  CHECK(c.ppo.gamma == 0.99);
  CHECK(c.seed == 9);
  CHECK(config_hash(c) != config_hash(RunConfig{}));
}

TEST_CASE("smoke training is deterministic and writes a loadable checkpoint") {
  for (Algo algo : {Algo::kPpo, Algo::kDdqn}) {
    RunConfig cfg = small_config();
    cfg.algo = algo;
    cfg.ddqn.batch = 2;
    const fs::path a = scratch("train_a_" + to_string(algo));
    const fs::path b = scratch("train_b_" + to_string(algo));
    const TrainResult ra = train(cfg, a);
    train(cfg, b);
    CHECK(ra.curves.size() == 2);
    CHECK(slurp(a / "curves.csv") == slurp(b / "curves.csv"));
    CHECK(slurp(a / "checkpoint_final.bin") == slurp(b / "checkpoint_final.bin"));
    CHECK(fs::exists(a / "checkpoint_epoch_0001.bin"));
    CHECK(fs::exists(a / "config.json"));

    const Checkpoint ck = load_checkpoint(a / "checkpoint_final.bin");
    CHECK(ck.config_hash == config_hash(cfg));
    CHECK(ck.epoch == 2);
    const Agent loaded = agent_from_checkpoint(ck);
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int k = 0; k < 20; ++k) {
      const ObsVec o{n(rng), n(rng), n(rng), n(rng), n(rng)};
      CHECK(agent_greedy(loaded, o).action == agent_greedy(ra.agent, o).action);
      CHECK(agent_value(loaded, o) == agent_value(ra.agent, o));
    }
  }
}

TEST_CASE("different seeds give different curves") {
  RunConfig cfg = small_config();
  const fs::path a = scratch("seed_a");
  const fs::path b = scratch("seed_b");
  train(cfg, a);
  cfg.seed = 2;
  train(cfg, b);
  CHECK(slurp(a / "curves.csv") != slurp(b / "curves.csv"));
}

TEST_CASE("metrics replay bit-exactly from a written trace") {
  RunConfig cfg = small_config();
  cfg.test_laps = 1;
  std::mt19937_64 rng(5);
  const Agent agent = make_agent(cfg, rng);
  for (Variant v : {Variant::kTprl, Variant::kNoSkip}) {
    cfg.variant = v;
    const EvalResult r = evaluate(cfg, agent, "cross", 1);
    CHECK(r.metrics.completed);
    const fs::path dir = scratch("replay_" + to_string(v));
    write_eval_trace(dir / "trace.jsonl", trace_header(cfg, "eval", "cross", 1), r.trace);
    const TraceFile t = read_trace(dir / "trace.jsonl");
    REQUIRE(t.steps.size() == r.trace.size());
    const Metrics m = metrics_from_trace(t.steps, t.header.at("lap_quota").get<int>(),
                                         t.header.at("config_hash").get<std::uint64_t>());
    CHECK(metrics_to_json(m).dump() == metrics_to_json(r.metrics).dump());
    CHECK(m.time_cost == r.metrics.time_cost);
    CHECK(check_trace(t).empty());
  }
}

TEST_CASE("step cap yields partial metrics") {
  RunConfig cfg = small_config();
  cfg.test_step_cap = 500;
  std::mt19937_64 rng(5);
  const Agent agent = make_agent(cfg, rng);
  const EvalResult r = evaluate(cfg, agent, "cross", 10);
  CHECK_FALSE(r.metrics.completed);
  CHECK(r.metrics.steps == 500);
}

TEST_CASE("compliance overall never exceeds any per-rule compliance") {
  RunConfig cfg = small_config();
  std::mt19937_64 rng(21);
  const RolloutPolicy policy = random_policy(rng);
  Environment env = make_environment(build_oval_map(cfg.oval), cfg, 5);
  CollectorState col;
  std::vector<StepRecord> steps;
  RolloutSinks sinks;
  sinks.on_step = [&](const StepRecord& r) { steps.push_back(r); };
  collect_rollout(Variant::kNoSkip, 300, 0.99, env, col, 3000, policy, sinks);
  const Metrics m = metrics_from_trace(steps, 5, 0);
  for (double p : m.compliance.per_rule) CHECK(m.compliance.overall <= p);
}

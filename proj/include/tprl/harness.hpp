#ifndef TPRL_HARNESS_HPP_
#define TPRL_HARNESS_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tprl/checkpoint.hpp"
#include "tprl/config.hpp"
#include "tprl/ddqn.hpp"
#include "tprl/planner.hpp"
#include "tprl/ppo.hpp"
#include "tprl/rules.hpp"
#include "tprl/world.hpp"

namespace tprl {

class HarnessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ObsVec scale_observation(const FrenetObservation& obs, const ObsScale& scale);

// sum_n gamma^n r_n, accumulated front to back.
double accumulate_period_reward(std::span<const double> rewards, double gamma);
// Same sum with an explicit pow per term; used as a cross-check.
double brute_force_period_reward(std::span<const double> rewards, double gamma);

struct VehicleSnapshot {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  double v = 0.0;
  int lane = 0;
};

struct StepRecord {
  std::int64_t step = 0;  // world step index after the step
  std::int64_t episode = 0;
  std::int64_t episode_step = 0;  // ego steps taken before this one
  double sim_time = 0.0;
  VehicleSnapshot ego;
  VehicleSnapshot target;
  FrenetObservation obs;  // raw, before the step
  int action = 0;
  bool is_new = false;
  std::uint32_t planner_events = 0;
  std::uint32_t world_events = 0;
  AtomicValuation atoms;
  RuleVerdict verdict;
  double reward = 0.0;
  int ego_laps = 0;
  bool terminal = false;   // collision
  bool truncated = false;  // lap quota reached
};

struct Environment {
  TrackMap map;
  ScenarioConfig scenario;
  PlannerConfig planner;
  RuleThresholds rules;
  ObsScale scale;
  int lap_quota = 5;
  bool self_check = false;

  WorldState world;
  PlannerState pstate;
  std::int64_t episode = 0;
  std::int64_t episode_step = 0;
  bool done = false;
};

Environment make_environment(TrackMap map, const RunConfig& cfg, int lap_quota);
void reset_environment(Environment& env);
ObsVec current_obs(const Environment& env);

// One simulation step. Throws HarnessError once the episode is over.
StepRecord env_step(Environment& env, ActionRequest request);

struct PeriodResult {
  double reward = 0.0;
  ObsVec next_obs{};
  bool terminal = false;
  bool truncated = false;
  std::vector<StepRecord> records;
};

// Holds `action` for up to n steps; stops early when the episode ends.
PeriodResult run_decision_period(Environment& env, HighLevelAction action, int n,
                                 double gamma);

struct ActionChoice {
  int action = 0;
  double logprob = 0.0;
  double value = 0.0;
};

struct RolloutPolicy {
  std::function<ActionChoice(const ObsVec&)> choose;
  // Log-probability and value of a given action; used when an action is held.
  std::function<ActionChoice(const ObsVec&, int)> evaluate;
};

struct Experience {
  DecisionSample sample;
  ObsVec next_obs{};
  bool terminal = false;
  bool segment_end = false;
  std::int64_t first_step = 0;
  std::int64_t last_step = 0;
};

// Discounted per-window sums of the overall and per-rule rewards.
struct PeriodStat {
  double total = 0.0;
  double r1 = 0.0;
  double r2 = 0.0;
};

// State that outlives a single rollout so epochs continue one environment.
struct CollectorState {
  int held_action = 0;
  PeriodStat window;
  double window_discount = 1.0;
  std::int64_t decisions = 0;
};

struct Rollout {
  std::vector<Experience> items;
  std::vector<PeriodStat> periods;
  std::int64_t sim_steps = 0;
  int episodes_finished = 0;
  int collisions = 0;
  int emergencies = 0;
  int refusals = 0;
};

struct RolloutSinks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(const Experience&)> on_sample;
};

Rollout collect_rollout(Variant variant, int period, double gamma, Environment& env,
                        CollectorState& collector, std::int64_t budget,
                        const RolloutPolicy& policy, const RolloutSinks& sinks = {});

// Learner wrapper over either algorithm.
struct Agent {
  Algo algo = Algo::kPpo;
  std::optional<ActorCritic> ac;
  std::optional<DdqnAgent> dq;
};

Agent make_agent(const RunConfig& cfg, std::mt19937_64& rng);
ActionChoice agent_sample(const Agent& agent, const ObsVec& obs, double epsilon,
                          std::mt19937_64& rng);
ActionChoice agent_greedy(const Agent& agent, const ObsVec& obs);
ActionChoice agent_evaluate(const Agent& agent, const ObsVec& obs, int action);
double agent_value(const Agent& agent, const ObsVec& obs);

Checkpoint agent_to_checkpoint(const Agent& agent, std::uint64_t config_hash,
                               std::int64_t epoch, const std::mt19937_64& rng);
Agent agent_from_checkpoint(const Checkpoint& ckpt);

struct EpochCurve {
  int epoch = 0;
  double mean_period_reward = 0.0;
  double r1_mean = 0.0;
  double r2_mean = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double q_loss = 0.0;
  std::int64_t samples = 0;
  int episodes = 0;
  int collisions = 0;
  int emergencies = 0;
};

std::string curves_csv_header();
std::string curves_csv_row(const EpochCurve& c);

struct TrainResult {
  std::vector<EpochCurve> curves;
  Agent agent;
  std::filesystem::path final_checkpoint;
};

// Writes config.json, curves.csv and checkpoints into out_dir.
TrainResult train(const RunConfig& cfg, const std::filesystem::path& out_dir,
                  std::ostream* log = nullptr);

struct Metrics {
  Compliance compliance;
  int emergency_brakes = 0;
  double emergency_per_lap = 0.0;
  double time_cost = 0.0;
  bool completed = false;
  int laps = 0;
  int collisions = 0;
  std::int64_t steps = 0;
  std::uint64_t config_hash = 0;
};

// Pure function of the recorded steps.
Metrics metrics_from_trace(std::span<const StepRecord> steps, int lap_quota,
                           std::uint64_t config_hash);
nlohmann::json metrics_to_json(const Metrics& m);

struct EvalResult {
  Metrics metrics;
  std::vector<StepRecord> trace;
};

// Greedy policy on `map_name` at the configured variant's decision cadence.
EvalResult evaluate(const RunConfig& cfg, const Agent& agent,
                    const std::string& map_name, int laps);

// Line-delimited trace: one header object, then step and sample records.
nlohmann::json step_record_to_json(const StepRecord& r);
StepRecord step_record_from_json(const nlohmann::json& j);
nlohmann::json experience_to_json(const Experience& e);

nlohmann::json trace_header(const RunConfig& cfg, const std::string& kind,
                            const std::string& map_name, int lap_quota);

class TraceWriter {
 public:
  TraceWriter(const std::filesystem::path& path, const nlohmann::json& header);
  void step(const StepRecord& r);
  void sample(const Experience& e);

 private:
  std::unique_ptr<std::ostream> out_;
};

struct TraceFile {
  nlohmann::json header;
  std::vector<StepRecord> steps;
  std::vector<nlohmann::json> samples;
};

TraceFile read_trace(const std::filesystem::path& path);
void write_eval_trace(const std::filesystem::path& path, const nlohmann::json& header,
                      std::span<const StepRecord> steps);

// Re-derives verdicts and rewards from recorded atoms and checks the
// per-variant invariants. Returns human-readable problems; empty means clean.
std::vector<std::string> check_trace(const TraceFile& trace);

}  // namespace tprl

#endif  // TPRL_HARNESS_HPP_

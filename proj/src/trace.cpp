#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "tprl/harness.hpp"

namespace tprl {

using nlohmann::json;

Metrics metrics_from_trace(std::span<const StepRecord> steps, int lap_quota,
                           std::uint64_t config_hash) {
  Metrics m;
  m.config_hash = config_hash;
  m.steps = static_cast<std::int64_t>(steps.size());
  if (steps.empty()) return m;
  std::vector<RuleVerdict> verdicts;
  verdicts.reserve(steps.size());
  for (const StepRecord& r : steps) {
    verdicts.push_back(r.verdict);
    if (r.planner_events & kPlannerEmergency) ++m.emergency_brakes;
    if (r.world_events & kEventCollision) ++m.collisions;
    m.laps = std::max(m.laps, r.ego_laps);
    if (!m.completed && r.ego_laps >= lap_quota) {
      m.completed = true;
      m.time_cost = r.sim_time;
    }
  }
  if (!m.completed) m.time_cost = steps.back().sim_time;
  m.compliance = trace_compliance(verdicts);
  m.emergency_per_lap =
      static_cast<double>(m.emergency_brakes) / static_cast<double>(std::max(1, m.laps));
  return m;
}

json metrics_to_json(const Metrics& m) {
  return {{"rule_compliance",
           {{"per_rule", m.compliance.per_rule}, {"overall", m.compliance.overall}}},
          {"emergency_brake_count", m.emergency_brakes},
          {"emergency_brakes_per_lap", m.emergency_per_lap},
          {"time_cost", m.time_cost},
          {"completed", m.completed},
          {"laps", m.laps},
          {"collisions", m.collisions},
          {"steps", m.steps},
          {"config_hash", m.config_hash}};
}

EvalResult evaluate(const RunConfig& cfg, const Agent& agent, const std::string& map_name,
                    int laps) {
  Environment env = make_environment(build_named_map(map_name, cfg), cfg, laps);
  EvalResult out;
  int held = 0;
  while (!env.done && static_cast<std::int64_t>(out.trace.size()) < cfg.test_step_cap) {
    const bool decide =
        cfg.variant == Variant::kNoSkip || env.episode_step % cfg.period == 0;
    if (decide) held = agent_greedy(agent, current_obs(env)).action;
    out.trace.push_back(env_step(env, ActionRequest{action_from_int(held), decide}));
  }
  out.metrics = metrics_from_trace(out.trace, laps, config_hash(cfg));
  return out;
}

namespace {

json vehicle_json(const VehicleSnapshot& v) { return {v.x, v.y, v.theta, v.v, v.lane}; }

VehicleSnapshot vehicle_from(const json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
          j.at(3).get<double>(), j.at(4).get<int>()};
}

}  // namespace

json step_record_to_json(const StepRecord& r) {
  json atoms = json::object();
  for (int a = 0; a < kAtomCount; ++a) {
    atoms[atom_name(static_cast<Atom>(a))] = r.atoms.get(static_cast<Atom>(a));
  }
  json verdicts = json::array();
  for (const RuleOutcome& o : r.verdict.outcomes) {
    verdicts.push_back({o.premise_active, o.violated});
  }
  return {{"type", "step"},
          {"step", r.step},
          {"episode", r.episode},
          {"episode_step", r.episode_step},
          {"t", r.sim_time},
          {"ego", vehicle_json(r.ego)},
          {"target", vehicle_json(r.target)},
          {"obs", r.obs.to_array()},
          {"action", r.action},
          {"is_new", r.is_new},
          {"planner_events", r.planner_events},
          {"planner", planner_events_to_string(r.planner_events)},
          {"world_events", r.world_events},
          {"atoms", atoms},
          {"verdicts", verdicts},
          {"reward", r.reward},
          {"laps", r.ego_laps},
          {"terminal", r.terminal},
          {"truncated", r.truncated}};
}

StepRecord step_record_from_json(const json& j) {
  StepRecord r;
  r.step = j.at("step").get<std::int64_t>();
  r.episode = j.at("episode").get<std::int64_t>();
  r.episode_step = j.at("episode_step").get<std::int64_t>();
  r.sim_time = j.at("t").get<double>();
  r.ego = vehicle_from(j.at("ego"));
  r.target = vehicle_from(j.at("target"));
  const auto obs = j.at("obs").get<std::array<double, 5>>();
  r.obs = {obs[0], obs[1], obs[2], obs[3], obs[4]};
  r.action = j.at("action").get<int>();
  r.is_new = j.at("is_new").get<bool>();
  r.planner_events = j.at("planner_events").get<std::uint32_t>();
  r.world_events = j.at("world_events").get<std::uint32_t>();
  const json& atoms = j.at("atoms");
  for (int a = 0; a < kAtomCount; ++a) {
    r.atoms.set(static_cast<Atom>(a), atoms.at(atom_name(static_cast<Atom>(a))).get<bool>());
  }
  for (const json& v : j.at("verdicts")) {
    r.verdict.outcomes.push_back({v.at(0).get<bool>(), v.at(1).get<bool>()});
  }
  r.reward = j.at("reward").get<double>();
  r.verdict.step_reward = static_cast<int>(r.reward);
  r.ego_laps = j.at("laps").get<int>();
  r.terminal = j.at("terminal").get<bool>();
  r.truncated = j.at("truncated").get<bool>();
  return r;
}

json experience_to_json(const Experience& e) {
  return {{"type", "sample"},
          {"first_step", e.first_step},
          {"last_step", e.last_step},
          {"obs", e.sample.obs},
          {"action", e.sample.action},
          {"logprob", e.sample.logprob_old},
          {"value", e.sample.value_est},
          {"reward", e.sample.reward},
          {"next_obs", e.next_obs},
          {"terminal", e.terminal},
          {"segment_end", e.segment_end}};
}

json trace_header(const RunConfig& cfg, const std::string& kind, const std::string& map_name,
                  int lap_quota) {
  return {{"type", "header"},
          {"kind", kind},
          {"map", map_name},
          {"lap_quota", lap_quota},
          {"variant", to_string(cfg.variant)},
          {"algo", to_string(cfg.algo)},
          {"period", cfg.period},
          {"gamma", cfg.algo == Algo::kPpo ? cfg.ppo.gamma : cfg.ddqn.gamma},
          {"config_hash", config_hash(cfg)},
          {"config", config_to_json(cfg)}};
}

TraceWriter::TraceWriter(const std::filesystem::path& path, const json& header)
    : out_(std::make_unique<std::ofstream>(path)) {
  if (!*out_) throw HarnessError("cannot open trace " + path.string() + " for writing");
  *out_ << header.dump() << "\n";
}

void TraceWriter::step(const StepRecord& r) { *out_ << step_record_to_json(r).dump() << "\n"; }

void TraceWriter::sample(const Experience& e) {
  *out_ << experience_to_json(e).dump() << "\n";
}

void write_eval_trace(const std::filesystem::path& path, const json& header,
                      std::span<const StepRecord> steps) {
  TraceWriter w(path, header);
  for (const StepRecord& r : steps) w.step(r);
}

TraceFile read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw HarnessError("cannot open trace " + path.string());
  TraceFile t;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (lineno == 1) {
        if (type != "header") throw HarnessError("first line is not a header");
        t.header = std::move(j);
      } else if (type == "step") {
        t.steps.push_back(step_record_from_json(j));
      } else if (type == "sample") {
        t.samples.push_back(std::move(j));
      } else {
        throw HarnessError("unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      throw HarnessError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const HarnessError& e) {
      throw HarnessError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (t.header.is_null()) throw HarnessError("trace " + path.string() + " is empty");
  return t;
}

std::vector<std::string> check_trace(const TraceFile& trace) {
  std::vector<std::string> problems;
  auto fail = [&](std::string msg) {
    if (problems.size() < 50) problems.push_back(std::move(msg));
  };

  for (const StepRecord& r : trace.steps) {
    const RuleVerdict v = eval_rules(r.atoms);
    bool same = v.outcomes.size() == r.verdict.outcomes.size();
    for (std::size_t i = 0; same && i < v.outcomes.size(); ++i) {
      same = v.outcomes[i].premise_active == r.verdict.outcomes[i].premise_active &&
             v.outcomes[i].violated == r.verdict.outcomes[i].violated;
    }
    if (!same) fail("step " + std::to_string(r.step) + ": verdicts disagree with atoms");
    if (static_cast<double>(v.step_reward) != r.reward) {
      fail("step " + std::to_string(r.step) + ": reward disagrees with verdicts");
    }
  }

  const Variant variant = parse_variant(trace.header.at("variant").get<std::string>());
  const int period = trace.header.at("period").get<int>();
  if (variant != Variant::kNoSkip) {
    // Action must be constant within every aligned window of each episode.
    std::map<std::pair<std::int64_t, std::int64_t>, int> window_action;
    for (const StepRecord& r : trace.steps) {
      const auto key = std::make_pair(r.episode, r.episode_step / period);
      const bool first = r.episode_step % period == 0;
      auto [it, inserted] = window_action.emplace(key, r.action);
      if (!inserted && it->second != r.action) {
        fail("step " + std::to_string(r.step) + ": action changed inside a decision period");
      }
      if (first != r.is_new) {
        fail("step " + std::to_string(r.step) + ": is_new set off the period boundary");
      }
    }
  } else {
    for (const StepRecord& r : trace.steps) {
      if (!r.is_new) fail("step " + std::to_string(r.step) + ": no-skip step not a new request");
    }
  }

  if (!trace.samples.empty()) {
    const double gamma = trace.header.at("gamma").get<double>();
    std::map<std::int64_t, double> reward_at;
    for (const StepRecord& r : trace.steps) reward_at[r.step] = r.reward;
    for (const json& s : trace.samples) {
      const auto a = s.at("first_step").get<std::int64_t>();
      const auto b = s.at("last_step").get<std::int64_t>();
      std::vector<double> rewards;
      for (std::int64_t k = a; k <= b; ++k) {
        auto it = reward_at.find(k);
        if (it == reward_at.end()) {
          fail("sample covers step " + std::to_string(k) + " missing from the trace");
          break;
        }
        rewards.push_back(it->second);
      }
      const double recorded = s.at("reward").get<double>();
      const double brute = brute_force_period_reward(rewards, gamma);
      if (std::abs(recorded - brute) > 1e-12) {
        fail("sample at step " + std::to_string(a) + ": reward " + std::to_string(recorded) +
             " != discounted sum " + std::to_string(brute));
      }
      if (variant != Variant::kTprl && a != b) fail("per-step sample spans several steps");
    }
    const std::size_t expected =
        variant == Variant::kTprl
            ? static_cast<std::size_t>(std::count_if(
                  trace.steps.begin(), trace.steps.end(),
                  [&](const StepRecord& r) { return r.is_new; }))
            : trace.steps.size();
    if (trace.samples.size() != expected) {
      fail("sample count " + std::to_string(trace.samples.size()) + " != expected " +
           std::to_string(expected));
    }
  }
  return problems;
}

}  // namespace tprl

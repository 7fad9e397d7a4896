#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "tprl/harness.hpp"
#include "tprl/policy.hpp"

namespace tprl {

Agent make_agent(const RunConfig& cfg, std::mt19937_64& rng) {
  Agent agent;
  agent.algo = cfg.algo;
  if (cfg.algo == Algo::kPpo) {
    agent.ac = make_actor_critic(cfg.ppo, kActionCount, rng);
  } else {
    agent.dq = make_ddqn_agent(cfg.ddqn, kActionCount, rng);
  }
  return agent;
}

namespace {

double critic_value(const ActorCritic& ac, const ObsVec& obs) {
  return mlp_forward(ac.critic, obs)[0];
}

}  // namespace

ActionChoice agent_sample(const Agent& agent, const ObsVec& obs, double epsilon,
                          std::mt19937_64& rng) {
  if (agent.ac) {
    const auto logits = mlp_forward(agent.ac->actor, obs);
    const SampledAction s = policy_logprob_and_sample(logits, rng);
    return {s.action, s.logprob, critic_value(*agent.ac, obs)};
  }
  const auto q = mlp_forward(agent.dq->online, obs);
  const int a = epsilon_greedy(q, epsilon, rng);
  return {a, 0.0, q[static_cast<std::size_t>(a)]};
}

ActionChoice agent_greedy(const Agent& agent, const ObsVec& obs) {
  if (agent.ac) {
    const auto logits = mlp_forward(agent.ac->actor, obs);
    const int a = argmax(logits);
    return {a, log_softmax(logits)[static_cast<std::size_t>(a)],
            critic_value(*agent.ac, obs)};
  }
  const auto q = mlp_forward(agent.dq->online, obs);
  const int a = argmax(q);
  return {a, 0.0, q[static_cast<std::size_t>(a)]};
}

ActionChoice agent_evaluate(const Agent& agent, const ObsVec& obs, int action) {
  if (agent.ac) {
    const auto logits = mlp_forward(agent.ac->actor, obs);
    return {action, log_softmax(logits)[static_cast<std::size_t>(action)],
            critic_value(*agent.ac, obs)};
  }
  const auto q = mlp_forward(agent.dq->online, obs);
  return {action, 0.0, q[static_cast<std::size_t>(action)]};
}

double agent_value(const Agent& agent, const ObsVec& obs) {
  if (agent.ac) return critic_value(*agent.ac, obs);
  const auto q = mlp_forward(agent.dq->online, obs);
  return q[static_cast<std::size_t>(argmax(q))];
}

Checkpoint agent_to_checkpoint(const Agent& agent, std::uint64_t config_hash,
                               std::int64_t epoch, const std::mt19937_64& rng) {
  Checkpoint ckpt;
  ckpt.algo = to_string(agent.algo);
  ckpt.config_hash = config_hash;
  ckpt.epoch = epoch;
  if (agent.ac) {
    ckpt.nets.push_back({"actor", agent.ac->actor, agent.ac->actor_opt});
    ckpt.nets.push_back({"critic", agent.ac->critic, agent.ac->critic_opt});
  } else {
    ckpt.nets.push_back({"online", agent.dq->online, agent.dq->opt});
    Adam frozen(agent.dq->target.param_count(), agent.dq->opt.lr);
    ckpt.nets.push_back({"target", agent.dq->target, frozen});
  }
  std::ostringstream rs;
  rs << rng;
  ckpt.rng_state = rs.str();
  return ckpt;
}

Agent agent_from_checkpoint(const Checkpoint& ckpt) {
  Agent agent;
  try {
    agent.algo = parse_algo(ckpt.algo);
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  auto check_io = [](const Mlp& net) {
    if (net.input_size() != kObsSize || net.output_size() < 1) {
      throw CheckpointError("network shape does not match the observation size");
    }
  };
  if (agent.algo == Algo::kPpo) {
    const CheckpointNet& a = ckpt.find("actor");
    const CheckpointNet& c = ckpt.find("critic");
    check_io(a.net);
    check_io(c.net);
    if (a.net.output_size() != kActionCount || c.net.output_size() != 1) {
      throw CheckpointError("actor/critic output sizes are wrong");
    }
    agent.ac = ActorCritic{a.net, c.net, a.opt, c.opt};
  } else {
    const CheckpointNet& o = ckpt.find("online");
    const CheckpointNet& t = ckpt.find("target");
    check_io(o.net);
    if (o.net.output_size() != kActionCount || t.net.sizes != o.net.sizes) {
      throw CheckpointError("Q-network shapes are wrong");
    }
    DdqnAgent dq{o.net, t.net, o.opt, ReplayBuffer(1), 0};
    agent.dq = std::move(dq);
  }
  return agent;
}

std::string curves_csv_header() {
  return "epoch,mean_period_reward,r1_mean,r2_mean,policy_loss,value_loss,q_loss,"
         "samples,episodes,collisions,emergency_brakes";
}

std::string curves_csv_row(const EpochCurve& c) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%lld,%d,%d,%d",
                c.epoch, c.mean_period_reward, c.r1_mean, c.r2_mean, c.policy_loss,
                c.value_loss, c.q_loss, static_cast<long long>(c.samples), c.episodes,
                c.collisions, c.emergencies);
  return buf;
}

namespace {

void fill_reward_stats(const Rollout& ro, EpochCurve& c) {
  if (ro.periods.empty()) return;
  for (const PeriodStat& p : ro.periods) {
    c.mean_period_reward += p.total;
    c.r1_mean += p.r1;
    c.r2_mean += p.r2;
  }
  const double n = static_cast<double>(ro.periods.size());
  c.mean_period_reward /= n;
  c.r1_mean /= n;
  c.r2_mean /= n;
}

void ppo_epoch(Agent& agent, const Rollout& ro, const PpoConfig& cfg, std::mt19937_64& rng,
               EpochCurve& c) {
  std::vector<DecisionSample> data;
  data.reserve(ro.items.size());
  std::size_t start = 0;
  for (std::size_t i = 0; i < ro.items.size(); ++i) {
    data.push_back(ro.items[i].sample);
    if (!ro.items[i].segment_end) continue;
    const double bootstrap =
        ro.items[i].terminal ? 0.0 : agent_value(agent, ro.items[i].next_obs);
    compute_segment_targets(std::span(data).subspan(start, i + 1 - start), bootstrap,
                            cfg.gamma, cfg.lambda);
    start = i + 1;
  }
  if (cfg.normalize_advantages && data.size() > 1) normalize_advantages(data);
  const PpoStats stats = ppo_update(*agent.ac, data, cfg, rng);
  c.policy_loss = stats.policy_loss_last;
  c.value_loss = stats.value_loss_last;
}

void write_diagnostic(const std::filesystem::path& out_dir, const EpochCurve& c,
                      const std::string& what) {
  nlohmann::json j = {{"epoch", c.epoch},
                      {"error", what},
                      {"mean_period_reward", c.mean_period_reward},
                      {"samples", c.samples}};
  std::ofstream(out_dir / "diagnostic.json") << j.dump(2) << "\n";
}

}  // namespace

TrainResult train(const RunConfig& cfg, const std::filesystem::path& out_dir,
                  std::ostream* log) {
  validate(cfg);
  std::filesystem::create_directories(out_dir);
  const std::uint64_t hash = config_hash(cfg);
  {
    std::ofstream cf(out_dir / "config.json");
    if (!cf) throw HarnessError("cannot write to " + out_dir.string());
    cf << config_to_json(cfg).dump(2) << "\n";
  }

  std::mt19937_64 rng(cfg.seed);
  Agent agent = make_agent(cfg, rng);
  Environment env = make_environment(build_named_map(cfg.train_map, cfg), cfg, cfg.train_laps);
  CollectorState col;

  const bool ppo = cfg.algo == Algo::kPpo;
  const double gamma = ppo ? cfg.ppo.gamma : cfg.ddqn.gamma;
  const std::int64_t per_epoch = cfg.variant == Variant::kTprl
                                     ? cfg.steps_per_epoch / cfg.period
                                     : cfg.steps_per_epoch;
  const std::int64_t total_decisions = per_epoch * cfg.epochs;
  DdqnConfig dcfg = cfg.ddqn;
  dcfg.sync_interval = 0;  // synced here on decision count instead
  std::int64_t syncs = 0;

  RolloutPolicy policy;
  policy.choose = [&](const ObsVec& obs) {
    const double eps = ppo ? 0.0 : epsilon_schedule(col.decisions, total_decisions, cfg.ddqn);
    return agent_sample(agent, obs, eps, rng);
  };
  policy.evaluate = [&](const ObsVec& obs, int a) { return agent_evaluate(agent, obs, a); };

  std::ofstream csv(out_dir / "curves.csv");
  if (!csv) throw HarnessError("cannot write curves.csv in " + out_dir.string());
  csv << curves_csv_header() << "\n";

  TrainResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const Rollout ro = collect_rollout(cfg.variant, cfg.period, gamma, env, col,
                                       cfg.steps_per_epoch, policy);
    EpochCurve c;
    c.epoch = epoch;
    c.samples = static_cast<std::int64_t>(ro.items.size());
    c.episodes = ro.episodes_finished;
    c.collisions = ro.collisions;
    c.emergencies = ro.emergencies;
    fill_reward_stats(ro, c);

    try {
      if (ppo) {
        ppo_epoch(agent, ro, cfg.ppo, rng, c);
      } else {
        DdqnAgent& dq = *agent.dq;
        for (const Experience& e : ro.items) {
          dq.buffer.push({e.sample.obs, e.sample.action, e.sample.reward, e.next_obs,
                          e.terminal});
        }
        int updates = 0;
        for (int u = 0; u < cfg.ddqn.updates_per_epoch; ++u) {
          if (dq.buffer.size() < static_cast<std::size_t>(cfg.ddqn.batch)) break;
          c.q_loss += ddqn_update(dq, dcfg, rng);
          ++updates;
        }
        if (updates > 0) c.q_loss /= updates;
        if (cfg.ddqn.sync_interval > 0 && col.decisions / cfg.ddqn.sync_interval > syncs) {
          syncs = col.decisions / cfg.ddqn.sync_interval;
          dq.target = dq.online;
        }
      }
    } catch (const NumericsError& e) {
      write_diagnostic(out_dir, c, e.what());
      throw HarnessError(std::string("training diverged at epoch ") + std::to_string(epoch) +
                         ": " + e.what());
    }

    csv << curves_csv_row(c) << "\n";
    csv.flush();
    result.curves.push_back(c);
    if (log) {
      *log << "epoch " << epoch << " reward " << c.mean_period_reward << " r1 " << c.r1_mean
           << " r2 " << c.r2_mean << " samples " << c.samples << "\n";
    }
    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 && epoch != cfg.epochs) {
      char name[64];
      std::snprintf(name, sizeof(name), "checkpoint_epoch_%04d.bin", epoch);
      save_checkpoint(out_dir / name, agent_to_checkpoint(agent, hash, epoch, rng));
    }
  }
  result.final_checkpoint = out_dir / "checkpoint_final.bin";
  save_checkpoint(result.final_checkpoint, agent_to_checkpoint(agent, hash, cfg.epochs, rng));
  result.agent = std::move(agent);
  return result;
}

}  // namespace tprl

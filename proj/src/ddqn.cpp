#include "tprl/ddqn.hpp"

#include <algorithm>
#include <stdexcept>

#include "tprl/policy.hpp"

namespace tprl {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
}

void ReplayBuffer::push(const Transition& t) {
  if (items_.size() < capacity_) {
    items_.push_back(t);
  } else {
    items_[head_] = t;
  }
  head_ = (head_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample(std::size_t batch,
                                              std::mt19937_64& rng) const {
  if (items_.size() < batch || batch == 0) {
    throw std::invalid_argument("replay buffer holds fewer samples than the batch");
  }
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> out(batch);
  for (auto& i : out) i = pick(rng);
  return out;
}

double ddqn_target(const Mlp& online, const Mlp& target, const Transition& t,
                   double gamma) {
  if (t.done) return t.reward;
  const auto q_online = mlp_forward(online, t.next_obs);
  const auto q_target = mlp_forward(target, t.next_obs);
  const auto best = static_cast<std::size_t>(argmax(q_online));
  return t.reward + gamma * q_target[best];
}

LossAndGrad q_loss(const Mlp& online, const Mlp& target,
                   std::span<const Transition> batch, double gamma, bool parallel) {
  if (batch.empty()) throw std::invalid_argument("q_loss: empty batch");
  const std::size_t n = batch.size();
  const auto k = static_cast<std::size_t>(online.output_size());
  std::vector<double> x;
  x.reserve(n * kObsSize);
  for (const auto& t : batch) x.insert(x.end(), t.obs.begin(), t.obs.end());
  std::vector<double> q(n * k);
  if (parallel) {
    forward_batch_parallel(online, x, n, q);
  } else {
    forward_batch_serial(online, x, n, q);
  }
  LossAndGrad out;
  std::vector<double> gy(n * k, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    const double y = ddqn_target(online, target, batch[b], gamma);
    const auto a = static_cast<std::size_t>(batch[b].action);
    const double err = q[b * k + a] - y;
    out.loss += err * err * inv_n;
    gy[b * k + a] = 2.0 * err * inv_n;
  }
  out.grad.assign(online.param_count(), 0.0);
  if (parallel) {
    backward_batch_parallel(online, x, n, gy, out.grad);
  } else {
    backward_batch_serial(online, x, n, gy, out.grad);
  }
  return out;
}

DdqnAgent make_ddqn_agent(const DdqnConfig& cfg, int num_actions,
                          std::mt19937_64& rng) {
  std::vector<int> sizes{kObsSize};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(num_actions);
  DdqnAgent agent{make_mlp(sizes), {}, {}, ReplayBuffer(cfg.capacity), 0};
  init_xavier(agent.online, rng, 1.0);
  agent.target = agent.online;
  agent.opt = Adam(agent.online.param_count(), cfg.lr);
  return agent;
}

double ddqn_update(DdqnAgent& agent, const DdqnConfig& cfg, std::mt19937_64& rng) {
  const auto idx = agent.buffer.sample(static_cast<std::size_t>(cfg.batch), rng);
  std::vector<Transition> batch;
  batch.reserve(idx.size());
  for (std::size_t i : idx) batch.push_back(agent.buffer.at(i));
  LossAndGrad lg = q_loss(agent.online, agent.target, batch, cfg.gamma,
                          cfg.parallel_kernels);
  agent.opt.step(agent.online.params, lg.grad);
  if (!all_finite(agent.online.params)) {
    throw NumericsError("non-finite Q parameters after update");
  }
  ++agent.updates;
  if (cfg.sync_interval > 0 && agent.updates % cfg.sync_interval == 0) {
    agent.target = agent.online;
  }
  return lg.loss;
}

double epsilon_schedule(std::int64_t step, std::int64_t total_steps,
                        const DdqnConfig& cfg) {
  const double horizon = cfg.eps_fraction * static_cast<double>(total_steps);
  if (horizon <= 0.0) return cfg.eps_end;
  const double frac = std::min(1.0, static_cast<double>(step) / horizon);
  return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start);
}

int epsilon_greedy(std::span<const double> q_values, double epsilon,
                   std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < epsilon) {
    std::uniform_int_distribution<int> pick(0, static_cast<int>(q_values.size()) - 1);
    return pick(rng);
  }
  return argmax(q_values);
}

}  // namespace tprl

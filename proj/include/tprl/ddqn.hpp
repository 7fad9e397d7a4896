#ifndef TPRL_DDQN_HPP_
#define TPRL_DDQN_HPP_

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "tprl/mlp.hpp"
#include "tprl/optim.hpp"
#include "tprl/ppo.hpp"

namespace tprl {

struct DdqnConfig {
  std::size_t capacity = 100000;
  int batch = 64;
  double gamma = 0.99;
  double lr = 1e-3;
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_fraction = 0.3;
  std::int64_t sync_interval = 1000;
  int updates_per_epoch = 80;
  bool parallel_kernels = true;
  std::vector<int> hidden = {64, 32};
};

struct Transition {
  ObsVec obs{};
  int action = 0;
  double reward = 0.0;
  ObsVec next_obs{};
  bool done = false;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000);

  void push(const Transition& t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return items_[i]; }
  // Uniform indices with replacement; throws if size() < batch.
  std::vector<std::size_t> sample(std::size_t batch, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> items_;
};

// y = r for terminal transitions, else
// y = r + gamma * Q_target(s', argmax_a Q_online(s', a)).
double ddqn_target(const Mlp& online, const Mlp& target, const Transition& t,
                   double gamma);

// Mean squared TD error against fixed targets, gradient w.r.t. online params.
LossAndGrad q_loss(const Mlp& online, const Mlp& target,
                   std::span<const Transition> batch, double gamma, bool parallel);

struct DdqnAgent {
  Mlp online;
  Mlp target;
  Adam opt;
  ReplayBuffer buffer;
  std::int64_t updates = 0;
};

DdqnAgent make_ddqn_agent(const DdqnConfig& cfg, int num_actions,
                          std::mt19937_64& rng);

// One gradient step; hard-syncs the target every sync_interval updates.
double ddqn_update(DdqnAgent& agent, const DdqnConfig& cfg, std::mt19937_64& rng);

// Linear decay from eps_start to eps_end over eps_fraction of total_steps.
double epsilon_schedule(std::int64_t step, std::int64_t total_steps,
                        const DdqnConfig& cfg);

int epsilon_greedy(std::span<const double> q_values, double epsilon,
                   std::mt19937_64& rng);

}  // namespace tprl

#endif  // TPRL_DDQN_HPP_

#ifndef TPRL_PPO_HPP_
#define TPRL_PPO_HPP_

#include <array>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tprl/mlp.hpp"
#include "tprl/optim.hpp"

namespace tprl {

inline constexpr int kObsSize = 5;
using ObsVec = std::array<double, kObsSize>;

class NumericsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PpoConfig {
  double clip = 0.2;
  double actor_lr = 1e-3;
  double critic_lr = 3e-4;
  int train_iters = 80;
  double gamma = 0.99;
  double lambda = 0.97;
  int minibatch = 46;
  // Only used with combined_loss.
  double c1 = 0.5;
  double c2 = 0.0;
  bool combined_loss = false;
  bool normalize_advantages = true;
  bool parallel_kernels = true;
  std::vector<int> hidden = {64, 32};
};

void validate(const PpoConfig& cfg);

struct DecisionSample {
  ObsVec obs{};
  int action = 0;
  double logprob_old = 0.0;
  double reward = 0.0;
  double value_est = 0.0;
  double advantage = 0.0;
  double reward_to_go = 0.0;
};

// delta_t = r_t + gamma V_{t+1} - V_t with V_T = bootstrap;
// A_t = sum_k (gamma lambda)^k delta_{t+k}.
std::vector<double> gae_advantages(std::span<const double> rewards,
                                   std::span<const double> values,
                                   double bootstrap_value, double gamma,
                                   double lambda);

// R_t = sum_{t' >= t} gamma^(t'-t) r_t' + gamma^(T-t) bootstrap.
std::vector<double> rewards_to_go(std::span<const double> rewards, double gamma,
                                  double bootstrap_value = 0.0);

// Fills advantage and reward_to_go for one trajectory segment.
void compute_segment_targets(std::span<DecisionSample> segment,
                             double bootstrap_value, double gamma, double lambda);

// Zero mean, unit variance over the whole sample set.
void normalize_advantages(std::span<DecisionSample> samples);

// min(ratio A, clip(ratio, 1-eps, 1+eps) A).
double ppo_clip_term(double ratio, double advantage, double eps);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
  // Policy diagnostics.
  double clip_objective = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

// loss = -(mean clip term) - c2 * mean entropy.
LossAndGrad policy_loss(const Mlp& actor, std::span<const DecisionSample> data,
                        std::span<const std::size_t> indices, double clip,
                        double c2, bool parallel);

// loss = mean (V(s) - R)^2.
LossAndGrad value_loss(const Mlp& critic, std::span<const DecisionSample> data,
                       std::span<const std::size_t> indices, bool parallel);

struct ActorCritic {
  Mlp actor;
  Mlp critic;
  Adam actor_opt;
  Adam critic_opt;
};

ActorCritic make_actor_critic(const PpoConfig& cfg, int num_actions,
                              std::mt19937_64& rng);

struct PpoStats {
  double policy_loss_first = 0.0;
  double policy_loss_last = 0.0;
  double value_loss_first = 0.0;
  double value_loss_last = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

// Runs train_iters actor steps and train_iters critic steps on shuffled
// minibatches. Advantages and rewards-to-go must already be set.
PpoStats ppo_update(ActorCritic& ac, std::span<const DecisionSample> data,
                    const PpoConfig& cfg, std::mt19937_64& rng);

}  // namespace tprl

#endif  // TPRL_PPO_HPP_

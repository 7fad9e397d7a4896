#include "tprl/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tprl/policy.hpp"

namespace tprl {

void validate(const PpoConfig& cfg) {
  if (!(cfg.clip > 0.0 && cfg.clip < 1.0)) throw std::invalid_argument("clip must be in (0,1)");
  if (!(cfg.gamma > 0.0 && cfg.gamma <= 1.0)) throw std::invalid_argument("gamma must be in (0,1]");
  if (!(cfg.lambda > 0.0 && cfg.lambda <= 1.0)) throw std::invalid_argument("lambda must be in (0,1]");
  if (!(cfg.actor_lr > 0.0) || !(cfg.critic_lr > 0.0)) {
    throw std::invalid_argument("learning rates must be positive");
  }
  if (cfg.train_iters <= 0 || cfg.minibatch <= 0) {
    throw std::invalid_argument("train_iters and minibatch must be positive");
  }
}

std::vector<double> gae_advantages(std::span<const double> rewards,
                                   std::span<const double> values,
                                   double bootstrap_value, double gamma,
                                   double lambda) {
  if (rewards.size() != values.size()) {
    throw std::invalid_argument("gae: rewards and values differ in length");
  }
  const std::size_t n = rewards.size();
  std::vector<double> adv(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_v = (i + 1 < n) ? values[i + 1] : bootstrap_value;
    const double delta = rewards[i] + gamma * next_v - values[i];
    running = delta + gamma * lambda * running;
    adv[i] = running;
  }
  return adv;
}

std::vector<double> rewards_to_go(std::span<const double> rewards, double gamma,
                                  double bootstrap_value) {
  std::vector<double> out(rewards.size());
  double running = bootstrap_value;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    running = rewards[i] + gamma * running;
    out[i] = running;
  }
  return out;
}

void compute_segment_targets(std::span<DecisionSample> segment,
                             double bootstrap_value, double gamma, double lambda) {
  std::vector<double> r, v;
  r.reserve(segment.size());
  v.reserve(segment.size());
  for (const auto& s : segment) {
    r.push_back(s.reward);
    v.push_back(s.value_est);
  }
  const auto adv = gae_advantages(r, v, bootstrap_value, gamma, lambda);
  const auto rtg = rewards_to_go(r, gamma, bootstrap_value);
  for (std::size_t i = 0; i < segment.size(); ++i) {
    segment[i].advantage = adv[i];
    segment[i].reward_to_go = rtg[i];
  }
}

void normalize_advantages(std::span<DecisionSample> samples) {
  if (samples.empty()) return;
  double mean = 0.0;
  for (const auto& s : samples) mean += s.advantage;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (const auto& s : samples) var += (s.advantage - mean) * (s.advantage - mean);
  var /= static_cast<double>(samples.size());
  const double sd = std::sqrt(var) + 1e-8;
  for (auto& s : samples) s.advantage = (s.advantage - mean) / sd;
}

double ppo_clip_term(double ratio, double advantage, double eps) {
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

namespace {

std::vector<double> gather_inputs(std::span<const DecisionSample> data,
                                  std::span<const std::size_t> indices) {
  std::vector<double> x;
  x.reserve(indices.size() * kObsSize);
  for (std::size_t idx : indices) {
    x.insert(x.end(), data[idx].obs.begin(), data[idx].obs.end());
  }
  return x;
}

void forward(const Mlp& net, std::span<const double> x, std::size_t n,
             std::span<double> y, bool parallel) {
  if (parallel) {
    forward_batch_parallel(net, x, n, y);
  } else {
    forward_batch_serial(net, x, n, y);
  }
}

void backward(const Mlp& net, std::span<const double> x, std::size_t n,
              std::span<const double> gy, std::span<double> grad, bool parallel) {
  if (parallel) {
    backward_batch_parallel(net, x, n, gy, grad);
  } else {
    backward_batch_serial(net, x, n, gy, grad);
  }
}

void require_finite(double value, const char* what, std::size_t sample) {
  if (!std::isfinite(value)) {
    std::ostringstream os;
    os << "non-finite " << what << " at minibatch sample " << sample;
    throw NumericsError(os.str());
  }
}

}  // namespace

LossAndGrad policy_loss(const Mlp& actor, std::span<const DecisionSample> data,
                        std::span<const std::size_t> indices, double clip,
                        double c2, bool parallel) {
  if (indices.empty()) throw std::invalid_argument("policy_loss: empty batch");
  const std::size_t n = indices.size();
  const auto k = static_cast<std::size_t>(actor.output_size());
  const std::vector<double> x = gather_inputs(data, indices);
  std::vector<double> logits(n * k);
  forward(actor, x, n, logits, parallel);

  LossAndGrad out;
  std::vector<double> gy(n * k, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    const DecisionSample& s = data[indices[b]];
    const std::span<const double> z(logits.data() + b * k, k);
    const std::vector<double> lp = log_softmax(z);
    const auto a = static_cast<std::size_t>(s.action);
    const double logp = lp[a];
    const double ratio = std::exp(logp - s.logprob_old);
    require_finite(ratio, "probability ratio", b);
    const double term = ppo_clip_term(ratio, s.advantage, clip);
    double entropy = 0.0;
    for (double l : lp) entropy -= std::exp(l) * l;
    out.clip_objective += term * inv_n;
    out.entropy += entropy * inv_n;
    out.approx_kl += (s.logprob_old - logp) * inv_n;
    if (std::abs(ratio - 1.0) > clip) out.clip_fraction += inv_n;

    // The unclipped branch carries the gradient; on the clipped branch the
    // term is constant in theta.
    const bool active = ratio * s.advantage <= term;
    double* g = gy.data() + b * k;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(lp[j]);
      double d = 0.0;
      if (active) d -= s.advantage * ratio * ((j == a ? 1.0 : 0.0) - p);
      d -= c2 * (-p * (lp[j] + entropy));
      g[j] = d * inv_n;
    }
  }
  out.loss = -out.clip_objective - c2 * out.entropy;
  out.grad.assign(actor.param_count(), 0.0);
  backward(actor, x, n, gy, out.grad, parallel);
  return out;
}

LossAndGrad value_loss(const Mlp& critic, std::span<const DecisionSample> data,
                       std::span<const std::size_t> indices, bool parallel) {
  if (indices.empty()) throw std::invalid_argument("value_loss: empty batch");
  if (critic.output_size() != 1) throw ShapeError("critic must have one output");
  const std::size_t n = indices.size();
  const std::vector<double> x = gather_inputs(data, indices);
  std::vector<double> v(n);
  forward(critic, x, n, v, parallel);
  LossAndGrad out;
  std::vector<double> gy(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < n; ++b) {
    const double err = v[b] - data[indices[b]].reward_to_go;
    require_finite(err, "value error", b);
    out.loss += err * err * inv_n;
    gy[b] = 2.0 * err * inv_n;
  }
  out.grad.assign(critic.param_count(), 0.0);
  backward(critic, x, n, gy, out.grad, parallel);
  return out;
}

ActorCritic make_actor_critic(const PpoConfig& cfg, int num_actions,
                              std::mt19937_64& rng) {
  std::vector<int> actor_sizes{kObsSize};
  actor_sizes.insert(actor_sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  std::vector<int> critic_sizes = actor_sizes;
  actor_sizes.push_back(num_actions);
  critic_sizes.push_back(1);
  ActorCritic ac;
  ac.actor = make_mlp(actor_sizes);
  ac.critic = make_mlp(critic_sizes);
  init_xavier(ac.actor, rng, 0.01);
  init_xavier(ac.critic, rng, 1.0);
  ac.actor_opt = Adam(ac.actor.param_count(), cfg.actor_lr);
  ac.critic_opt = Adam(ac.critic.param_count(), cfg.critic_lr);
  return ac;
}

namespace {

// Hands out minibatches from a permutation that is reshuffled per pass.
class MinibatchSampler {
 public:
  MinibatchSampler(std::size_t n, std::size_t batch, std::mt19937_64& rng)
      : order_(n), batch_(std::min(batch, n)), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    cursor_ = n;
  }

  std::vector<std::size_t> next() {
    if (cursor_ + batch_ > order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
    cursor_ += batch_;
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::mt19937_64& rng_;
  std::size_t cursor_ = 0;
};

void check_step(const std::vector<double>& params, const char* net) {
  if (!all_finite(params)) {
    throw NumericsError(std::string("non-finite parameters after ") + net + " step");
  }
}

}  // namespace

PpoStats ppo_update(ActorCritic& ac, std::span<const DecisionSample> data,
                    const PpoConfig& cfg, std::mt19937_64& rng) {
  if (data.empty()) throw std::invalid_argument("ppo_update: empty sample set");
  validate(cfg);
  PpoStats stats;
  MinibatchSampler sampler(data.size(), static_cast<std::size_t>(cfg.minibatch), rng);
  const double c2 = cfg.combined_loss ? cfg.c2 : 0.0;

  auto actor_step = [&](const std::vector<std::size_t>& mb, int it) {
    LossAndGrad pl = policy_loss(ac.actor, data, mb, cfg.clip, c2, cfg.parallel_kernels);
    if (it == 0) stats.policy_loss_first = pl.loss;
    stats.policy_loss_last = pl.loss;
    stats.entropy = pl.entropy;
    stats.approx_kl = pl.approx_kl;
    stats.clip_fraction = pl.clip_fraction;
    ac.actor_opt.step(ac.actor.params, pl.grad);
    check_step(ac.actor.params, "actor");
  };
  auto critic_step = [&](const std::vector<std::size_t>& mb, int it, double scale) {
    LossAndGrad vl = value_loss(ac.critic, data, mb, cfg.parallel_kernels);
    if (it == 0) stats.value_loss_first = vl.loss;
    stats.value_loss_last = vl.loss;
    if (scale != 1.0) {
      for (double& g : vl.grad) g *= scale;
    }
    ac.critic_opt.step(ac.critic.params, vl.grad);
    check_step(ac.critic.params, "critic");
  };

  if (cfg.combined_loss) {
    for (int it = 0; it < cfg.train_iters; ++it) {
      const auto mb = sampler.next();
      actor_step(mb, it);
      critic_step(mb, it, cfg.c1);
    }
  } else {
    for (int it = 0; it < cfg.train_iters; ++it) actor_step(sampler.next(), it);
    for (int it = 0; it < cfg.train_iters; ++it) critic_step(sampler.next(), it, 1.0);
  }
  return stats;
}

}  // namespace tprl

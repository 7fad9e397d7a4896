#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>
#include <random>

#include "tprl/checkpoint.hpp"
#include "tprl/ddqn.hpp"
#include "tprl/policy.hpp"
#include "tprl/ppo.hpp"

using namespace tprl;

namespace {

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

std::vector<DecisionSample> random_batch(std::mt19937_64& rng, const Mlp& actor,
                                         std::size_t n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ratio_pick(0.0, 1.0);
  std::vector<DecisionSample> out(n);
  for (auto& s : out) {
    for (double& x : s.obs) x = nd(rng);
    s.action = static_cast<int>(rng() % 3);
    const auto lp = log_softmax(mlp_forward(actor, s.obs));
    // Ratios kept away from the clip kinks at 0.8 and 1.2.
    const double bands[][2] = {{0.5, 0.75}, {0.85, 1.15}, {1.25, 1.6}};
    const auto& band = bands[rng() % 3];
    const double r = band[0] + (band[1] - band[0]) * ratio_pick(rng);
    s.logprob_old = lp[static_cast<std::size_t>(s.action)] - std::log(r);
    s.advantage = nd(rng);
    s.reward_to_go = nd(rng);
  }
  return out;
}

template <typename LossFn>
double max_fd_error(Mlp& net, const std::vector<double>& grad, LossFn loss,
                    std::mt19937_64& rng, std::size_t coords) {
  const double h = 1e-5;
  double worst = 0.0;
  std::vector<std::size_t> idx(net.params.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (coords < idx.size()) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(coords);
  }
  for (std::size_t j : idx) {
    const double saved = net.params[j];
    net.params[j] = saved + h;
    const double up = loss(net);
    net.params[j] = saved - h;
    const double down = loss(net);
    net.params[j] = saved;
    worst = std::max(worst, rel_error(grad[j], (up - down) / (2.0 * h)));
  }
  return worst;
}

}  // namespace

TEST_CASE("mlp forward examples") {
  Mlp zero = make_mlp({5, 64, 32, 3});
  const std::vector<double> x{0.3, -1.0, 2.0, 0.1, 0.5};
  for (double y : mlp_forward(zero, x)) CHECK(y == 0.0);

  Mlp unit = make_mlp({1, 1, 1, 1});
  unit.params = {1.0, 0.0, 1.0, 0.0, 1.0, 0.0};
  const std::vector<double> half{0.5};
  CHECK(mlp_forward(unit, half)[0] == doctest::Approx(std::tanh(std::tanh(0.5))).epsilon(1e-15));

  CHECK_THROWS_AS(mlp_forward(zero, half), ShapeError);
  CHECK_THROWS_AS(make_mlp({5}), ShapeError);
  CHECK(zero.param_count() == 5 * 64 + 64 + 64 * 32 + 32 + 32 * 3 + 3);
}

TEST_CASE("mlp matches an explicit matrix oracle") {
  std::mt19937_64 rng(4);
  Mlp net = make_mlp({3, 4, 2});
  init_xavier(net, rng, 1.0);
  std::normal_distribution<double> nd;
  for (double& p : net.params) p = nd(rng);
  const std::vector<double> x{0.2, -0.7, 1.1};
  double h[4];
  for (int o = 0; o < 4; ++o) {
    double acc = net.params[12 + o];
    for (int i = 0; i < 3; ++i) acc += net.params[o * 3 + i] * x[i];
    h[o] = std::tanh(acc);
  }
  const auto y = mlp_forward(net, x);
  for (int o = 0; o < 2; ++o) {
    double acc = net.params[16 + 8 + o];
    for (int i = 0; i < 4; ++i) acc += net.params[16 + o * 4 + i] * h[i];
    CHECK(y[static_cast<std::size_t>(o)] == doctest::Approx(acc).epsilon(1e-14));
  }
}

TEST_CASE("batched and single evaluation agree; kernels are bit-identical") {
  std::mt19937_64 rng(8);
  Mlp net = make_mlp({5, 64, 32, 3});
  init_xavier(net, rng, 1.0);
  const std::size_t n = 37;
  std::normal_distribution<double> nd;
  std::vector<double> x(n * 5), gy(n * 3);
  for (double& v : x) v = nd(rng);
  for (double& v : gy) v = nd(rng);
  std::vector<double> ys(n * 3), yp(n * 3);
  forward_batch_serial(net, x, n, ys);
  forward_batch_parallel(net, x, n, yp);
  for (std::size_t k = 0; k < n; ++k) {
    const auto single = mlp_forward(net, std::span<const double>(x).subspan(k * 5, 5));
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::abs(single[j] - ys[k * 3 + j]) < 1e-12);
    }
  }
  CHECK(std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(double)) == 0);

  std::vector<double> gs(net.param_count(), 0.5), gp(net.param_count(), 0.5);
  backward_batch_serial(net, x, n, gy, gs);
  backward_batch_parallel(net, x, n, gy, gp);
  CHECK(std::memcmp(gs.data(), gp.data(), gs.size() * sizeof(double)) == 0);
}

TEST_CASE("mlp backward matches finite differences on every coordinate") {
  std::mt19937_64 rng(12);
  Mlp net = make_mlp({5, 64, 32, 3});
  init_xavier(net, rng, 1.0);
  const std::vector<double> x{0.4, -0.2, 0.9, -1.3, 0.05};
  const std::vector<double> c{0.7, -1.1, 0.3};
  auto loss = [&](const Mlp& m) {
    const auto y = mlp_forward(m, x);
    return c[0] * y[0] + c[1] * y[1] + c[2] * y[2];
  };
  MlpCache cache;
  mlp_forward_cached(net, x, cache);
  std::vector<double> grad(net.param_count(), 0.0), gin(5);
  mlp_backward(net, cache, c, grad, gin);
  CHECK(max_fd_error(net, grad, loss, rng, net.param_count()) < 1e-4);
  // Input gradient.
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> xp = x, xm = x;
    xp[i] += 1e-5;
    xm[i] -= 1e-5;
    const auto yp = mlp_forward(net, xp), ym = mlp_forward(net, xm);
    double fd = 0.0;
    for (std::size_t j = 0; j < 3; ++j) fd += c[j] * (yp[j] - ym[j]) / 2e-5;
    CHECK(rel_error(gin[i], fd) < 1e-4);
  }
}

TEST_CASE("categorical policy") {
  std::mt19937_64 rng(1);
  const std::vector<double> flat{0.0, 0.0, 0.0};
  const SampledAction s = policy_logprob_and_sample(flat, rng);
  CHECK(s.logprob == doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-12));
  CHECK(s.logprob == doctest::Approx(-1.098612).epsilon(1e-6));

  const std::vector<double> dominant{10.0, 0.0, 0.0};
  CHECK(softmax(dominant)[0] > 0.9999);

  const std::vector<double> huge{1000.0, -1000.0, 999.0};
  const auto p = softmax(huge);
  CHECK(std::isfinite(logsumexp(huge)));
  CHECK(std::abs(p[0] + p[1] + p[2] - 1.0) < 1e-12);

  const std::vector<double> logits{0.5, -0.3, 1.2};
  const auto probs = softmax(logits);
  const int n = 100000;
  int counts[3] = {0, 0, 0};
  for (int k = 0; k < n; ++k) ++counts[policy_logprob_and_sample(logits, rng).action];
  for (int a = 0; a < 3; ++a) {
    const double sigma = std::sqrt(n * probs[static_cast<std::size_t>(a)] *
                                   (1.0 - probs[static_cast<std::size_t>(a)]));
    CHECK(std::abs(counts[a] - n * probs[static_cast<std::size_t>(a)]) <= 3.0 * sigma);
  }
  CHECK(categorical_entropy(flat) == doctest::Approx(std::log(3.0)));
}

TEST_CASE("GAE and rewards-to-go examples") {
  const std::vector<double> r{1.0, 1.0}, v{0.5, 0.5};
  const auto adv = gae_advantages(r, v, 0.0, 1.0, 1.0);
  CHECK(adv[0] == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(adv[1] == doctest::Approx(0.5).epsilon(1e-15));
  const std::vector<double> z(4, 0.0);
  for (double a : gae_advantages(z, z, 0.0, 0.99, 0.97)) CHECK(a == 0.0);
  CHECK_THROWS_AS(gae_advantages(r, z, 0.0, 1.0, 1.0), std::invalid_argument);

  const std::vector<double> rr{1.0, 2.0, 3.0};
  CHECK(rewards_to_go(rr, 1.0) == std::vector<double>{6.0, 5.0, 3.0});
  CHECK(rewards_to_go(rr, 0.5) == std::vector<double>{2.75, 3.5, 3.0});
  CHECK(rewards_to_go(std::vector<double>{-2.0}, 0.9) == std::vector<double>{-2.0});
}

TEST_CASE("GAE recursion equals the double-sum definition") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0.5, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 50;
    std::vector<double> r(n), v(n);
    for (auto& x : r) x = nd(rng);
    for (auto& x : v) x = nd(rng);
    const double boot = nd(rng), g = u(rng), l = u(rng);
    const auto adv = gae_advantages(r, v, boot, g, l);
    for (std::size_t t = 0; t < n; ++t) {
      double direct = 0.0;
      for (std::size_t k = t; k < n; ++k) {
        const double next_v = k + 1 < n ? v[k + 1] : boot;
        direct += std::pow(g * l, static_cast<double>(k - t)) * (r[k] + g * next_v - v[k]);
      }
      REQUIRE(std::abs(direct - adv[t]) < 1e-10);
    }
  }
}

TEST_CASE("clip term examples and lower bound") {
  CHECK(ppo_clip_term(1.5, 2.0, 0.2) == doctest::Approx(2.4).epsilon(1e-15));
  CHECK(ppo_clip_term(0.5, -1.0, 0.2) == doctest::Approx(-0.8).epsilon(1e-15));
  CHECK(ppo_clip_term(1.0, 0.37, 0.2) == 0.37);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ur(0.0, 3.0), ua(-5.0, 5.0);
  for (int k = 0; k < 10000; ++k) {
    const double ratio = ur(rng), a = ua(rng);
    REQUIRE(ppo_clip_term(ratio, a, 0.2) <= ratio * a + 1e-15);
  }
}

TEST_CASE("policy and value gradients match finite differences") {
  std::mt19937_64 rng(21);
  PpoConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    ActorCritic ac = make_actor_critic(cfg, 3, rng);
    init_xavier(ac.actor, rng, 1.0);
    const auto batch = random_batch(rng, ac.actor, 8);
    std::vector<std::size_t> idx(batch.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const LossAndGrad pl = policy_loss(ac.actor, batch, idx, 0.2, 0.05, false);
    CHECK(max_fd_error(ac.actor, pl.grad,
                       [&](const Mlp& m) { return policy_loss(m, batch, idx, 0.2, 0.05, false).loss; },
                       rng, 400) < 1e-4);
    const LossAndGrad vl = value_loss(ac.critic, batch, idx, false);
    CHECK(max_fd_error(ac.critic, vl.grad,
                       [&](const Mlp& m) { return value_loss(m, batch, idx, false).loss; },
                       rng, 400) < 1e-4);
  }
}

TEST_CASE("first step after collection has unit ratios") {
  std::mt19937_64 rng(2);
  PpoConfig cfg;
  ActorCritic ac = make_actor_critic(cfg, 3, rng);
  auto batch = random_batch(rng, ac.actor, 20);
  double mean_adv = 0.0;
  for (auto& s : batch) {
    s.logprob_old = log_softmax(mlp_forward(ac.actor, s.obs))[static_cast<std::size_t>(s.action)];
    mean_adv += s.advantage / 20.0;
  }
  std::vector<std::size_t> idx(20);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const LossAndGrad pl = policy_loss(ac.actor, batch, idx, 0.2, 0.0, true);
  CHECK(pl.clip_objective == doctest::Approx(mean_adv).epsilon(1e-12));
  CHECK(std::abs(pl.approx_kl) < 1e-12);
}

TEST_CASE("ppo update raises the probability of advantaged actions") {
  std::mt19937_64 rng(6);
  PpoConfig cfg;
  ActorCritic ac = make_actor_critic(cfg, 3, rng);
  std::vector<DecisionSample> data(60);
  std::normal_distribution<double> nd(0.0, 0.5);
  for (auto& s : data) {
    for (double& x : s.obs) x = nd(rng);
    s.action = 0;
    s.advantage = 1.0;
    s.logprob_old = log_softmax(mlp_forward(ac.actor, s.obs))[0];
    s.reward_to_go = 2.0;
  }
  const double before = softmax(mlp_forward(ac.actor, data[0].obs))[0];
  ActorCritic copy = ac;
  std::mt19937_64 r1(9), r2(9);
  ppo_update(ac, data, cfg, r1);
  ppo_update(copy, data, cfg, r2);
  CHECK(softmax(mlp_forward(ac.actor, data[0].obs))[0] > before);
  CHECK(std::memcmp(ac.actor.params.data(), copy.actor.params.data(),
                    ac.actor.params.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(ac.critic.params.data(), copy.critic.params.data(),
                    ac.critic.params.size() * sizeof(double)) == 0);
  CHECK_THROWS_AS(ppo_update(ac, std::vector<DecisionSample>{}, cfg, r1),
                  std::invalid_argument);
}

TEST_CASE("value regression converges toward a constant") {
  std::mt19937_64 rng(13);
  PpoConfig cfg;
  ActorCritic ac = make_actor_critic(cfg, 3, rng);
  std::vector<DecisionSample> data(46);
  std::normal_distribution<double> nd(0.0, 0.5);
  for (auto& s : data) {
    for (double& x : s.obs) x = nd(rng);
    s.reward_to_go = -1.5;
  }
  std::vector<std::size_t> idx(46);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  double prev = value_loss(ac.critic, data, idx, true).loss;
  const double first = prev;
  for (int k = 0; k < 10; ++k) {
    const LossAndGrad vl = value_loss(ac.critic, data, idx, true);
    ac.critic_opt.step(ac.critic.params, vl.grad);
    const double now = value_loss(ac.critic, data, idx, true).loss;
    CHECK(now < prev);
    prev = now;
  }
  for (int k = 0; k < 2000; ++k) {
    const LossAndGrad vl = value_loss(ac.critic, data, idx, true);
    ac.critic_opt.step(ac.critic.params, vl.grad);
  }
  CHECK(value_loss(ac.critic, data, idx, true).loss < 0.01 * first);
}

TEST_CASE("ddqn targets") {
  Mlp online = make_mlp({5, 3});
  Mlp target = make_mlp({5, 3});
  // Zero weights, biases as hand-set Q values.
  online.params[15] = 1.0;
  online.params[16] = 3.0;
  online.params[17] = 2.0;
  target.params[15] = 0.5;
  target.params[16] = 0.1;
  target.params[17] = 0.9;
  Transition t;
  t.reward = 0.0;
  CHECK(ddqn_target(online, target, t, 0.99) == doctest::Approx(0.099).epsilon(1e-15));
  t.done = true;
  t.reward = -1.0;
  CHECK(ddqn_target(online, target, t, 0.99) == -1.0);
}

TEST_CASE("q loss gradient matches finite differences") {
  std::mt19937_64 rng(31);
  DdqnConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    DdqnAgent agent = make_ddqn_agent(cfg, 3, rng);
    init_xavier(agent.target, rng, 1.0);
    std::normal_distribution<double> nd;
    std::vector<Transition> batch(8);
    for (auto& t : batch) {
      for (double& x : t.obs) x = nd(rng);
      for (double& x : t.next_obs) x = nd(rng);
      t.action = static_cast<int>(rng() % 3);
      t.reward = nd(rng);
      t.done = rng() % 4 == 0;
    }
    const LossAndGrad lg = q_loss(agent.online, agent.target, batch, 0.99, false);
    // Targets are held fixed at the unperturbed online argmax.
    std::vector<double> y;
    for (const auto& t : batch) y.push_back(ddqn_target(agent.online, agent.target, t, 0.99));
    auto loss = [&](const Mlp& m) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const double q = mlp_forward(m, batch[b].obs)[static_cast<std::size_t>(batch[b].action)];
        acc += (q - y[b]) * (q - y[b]) / static_cast<double>(batch.size());
      }
      return acc;
    };
    CHECK(max_fd_error(agent.online, lg.grad, loss, rng, 400) < 1e-4);
  }
}

TEST_CASE("replay buffer, epsilon schedule and greedy selection") {
  ReplayBuffer buf(3);
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(buf.sample(1, rng), std::invalid_argument);
  for (int i = 0; i < 5; ++i) {
    Transition t;
    t.reward = i;
    buf.push(t);
  }
  CHECK(buf.size() == 3);
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) sum += buf.at(i).reward;
  CHECK(sum == 2.0 + 3.0 + 4.0);

  DdqnConfig cfg;
  CHECK(epsilon_schedule(0, 1000, cfg) == 1.0);
  CHECK(epsilon_schedule(150, 1000, cfg) == doctest::Approx(0.525));
  CHECK(epsilon_schedule(300, 1000, cfg) == doctest::Approx(0.05));
  CHECK(epsilon_schedule(900, 1000, cfg) == doctest::Approx(0.05));

  const std::vector<double> q{0.1, 0.9, 0.3};
  CHECK(epsilon_greedy(q, 0.0, rng) == 1);
  int counts[3] = {0, 0, 0};
  const int n = 30000;
  for (int k = 0; k < n; ++k) ++counts[epsilon_greedy(q, 1.0, rng)];
  const double sigma = std::sqrt(n * (1.0 / 3.0) * (2.0 / 3.0));
  for (int c : counts) CHECK(std::abs(c - n / 3.0) <= 3.0 * sigma);
}

TEST_CASE("ddqn update syncs the target network on schedule") {
  std::mt19937_64 rng(2);
  DdqnConfig cfg;
  cfg.batch = 4;
  cfg.sync_interval = 3;
  DdqnAgent agent = make_ddqn_agent(cfg, 3, rng);
  CHECK_THROWS_AS(ddqn_update(agent, cfg, rng), std::invalid_argument);
  for (int i = 0; i < 10; ++i) {
    Transition t;
    t.obs[0] = i * 0.1;
    t.next_obs[0] = i * 0.1 + 0.1;
    t.reward = -1.0;
    t.action = i % 3;
    agent.buffer.push(t);
  }
  const Mlp initial = agent.target;
  ddqn_update(agent, cfg, rng);
  ddqn_update(agent, cfg, rng);
  CHECK(agent.target.params == initial.params);
  CHECK(agent.online.params != initial.params);
  ddqn_update(agent, cfg, rng);
  CHECK(agent.target.params == agent.online.params);
}

TEST_CASE("checkpoint round trip and corruption") {
  std::mt19937_64 rng(77);
  PpoConfig cfg;
  ActorCritic ac = make_actor_critic(cfg, 3, rng);
  ac.actor_opt.t = 12;
  ac.actor_opt.m[3] = 0.25;
  Checkpoint ck;
  ck.algo = "ppo";
  ck.config_hash = 0xDEADBEEFCAFEull;
  ck.epoch = 4;
  ck.nets.push_back({"actor", ac.actor, ac.actor_opt});
  ck.nets.push_back({"critic", ac.critic, ac.critic_opt});
  std::ostringstream os;
  os << rng;
  ck.rng_state = os.str();

  const auto path = std::filesystem::temp_directory_path() / "tprl_ckpt_test.bin";
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.algo == "ppo");
  CHECK(back.config_hash == ck.config_hash);
  CHECK(back.epoch == 4);
  CHECK(back.find("actor").net.params == ac.actor.params);
  CHECK(back.find("actor").opt.m == ac.actor_opt.m);
  CHECK(back.find("actor").opt.t == 12);
  CHECK(back.find("critic").net.sizes == ac.critic.sizes);
  CHECK(back.rng_state == ck.rng_state);
  CHECK_THROWS_AS(back.find("q"), CheckpointError);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(ck));

  auto bytes = serialize_checkpoint(ck);
  bytes[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), CheckpointError);
  bytes = serialize_checkpoint(ck);
  bytes.resize(bytes.size() / 2);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), CheckpointError);
  bytes = serialize_checkpoint(ck);
  bytes[8] = 9;
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), CheckpointError);
  std::filesystem::remove(path);
}

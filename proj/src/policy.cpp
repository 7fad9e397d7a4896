#include "tprl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "tprl/optim.hpp"

namespace tprl {

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size() || params.size() != m.size()) {
    throw std::invalid_argument("adam: size mismatch");
  }
  ++t;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

double logsumexp(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("logsumexp of empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double acc = 0.0;
  for (double z : logits) acc += std::exp(z - mx);
  return mx + std::log(acc);
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = logsumexp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p = log_softmax(logits);
  for (double& x : p) x = std::exp(x);
  return p;
}

double categorical_entropy(std::span<const double> logits) {
  const std::vector<double> lp = log_softmax(logits);
  double s = 0.0;
  for (double l : lp) s -= std::exp(l) * l;
  return s;
}

SampledAction policy_logprob_and_sample(std::span<const double> logits,
                                        std::mt19937_64& rng) {
  const std::vector<double> lp = log_softmax(logits);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double cum = 0.0;
  int action = static_cast<int>(lp.size()) - 1;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    cum += std::exp(lp[i]);
    if (x < cum) {
      action = static_cast<int>(i);
      break;
    }
  }
  return {action, lp[static_cast<std::size_t>(action)]};
}

int argmax(std::span<const double> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) -
                          values.begin());
}

}  // namespace tprl

#ifndef TPRL_POLICY_HPP_
#define TPRL_POLICY_HPP_

#include <random>
#include <span>
#include <vector>

namespace tprl {

// Overflow-safe log(sum(exp(x))).
double logsumexp(std::span<const double> logits);
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);
double categorical_entropy(std::span<const double> logits);

struct SampledAction {
  int action = 0;
  double logprob = 0.0;
};

SampledAction policy_logprob_and_sample(std::span<const double> logits,
                                        std::mt19937_64& rng);

int argmax(std::span<const double> values);

}  // namespace tprl

#endif  // TPRL_POLICY_HPP_

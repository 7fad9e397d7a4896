#ifndef TPRL_OPTIM_HPP_
#define TPRL_OPTIM_HPP_

#include <cstdint>
#include <span>
#include <vector>

namespace tprl {

// Adam for minimization.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;

  Adam() = default;
  Adam(std::size_t n, double learning_rate) : lr(learning_rate), m(n, 0.0), v(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad);
};

}  // namespace tprl

#endif  // TPRL_OPTIM_HPP_

#ifndef TPRL_MLP_HPP_
#define TPRL_MLP_HPP_

#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace tprl {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Fully connected net with tanh hidden layers and a linear output layer.
// Parameters are stored flat, per layer: W (out x in, row-major) then b.
struct Mlp {
  std::vector<int> sizes;
  std::vector<double> params;

  int num_layers() const { return static_cast<int>(sizes.size()) - 1; }
  int input_size() const { return sizes.front(); }
  int output_size() const { return sizes.back(); }
  std::size_t weight_offset(int layer) const;
  std::size_t bias_offset(int layer) const;
  std::size_t param_count() const { return params.size(); }
  std::size_t max_width() const;
};

std::size_t mlp_param_count(std::span<const int> sizes);

// Zero-initialized network; throws ShapeError for fewer than two sizes or
// non-positive widths.
Mlp make_mlp(std::vector<int> sizes);

// Xavier-uniform weights, zero biases; the output layer is scaled by
// `output_scale`.
void init_xavier(Mlp& net, std::mt19937_64& rng, double output_scale = 1.0);

bool all_finite(std::span<const double> values);

std::vector<double> mlp_forward(const Mlp& net, std::span<const double> input);

// Per-layer post-activation values; activations[0] is the input.
struct MlpCache {
  std::vector<std::vector<double>> activations;
};

void mlp_forward_cached(const Mlp& net, std::span<const double> input,
                        MlpCache& cache);

// Adds d(loss)/d(params) to `grad` given d(loss)/d(output) for the sample in
// `cache`. Optionally writes d(loss)/d(input).
void mlp_backward(const Mlp& net, const MlpCache& cache,
                  std::span<const double> grad_output, std::span<double> grad,
                  std::span<double> grad_input = {});

// Batched kernels. Inputs and outputs are row-major (batch x width).
// The parallel variants produce bit-identical results to the serial ones:
// per-sample gradients are summed in sample order.
void forward_batch_serial(const Mlp& net, std::span<const double> inputs,
                          std::size_t batch, std::span<double> outputs);
void forward_batch_parallel(const Mlp& net, std::span<const double> inputs,
                            std::size_t batch, std::span<double> outputs);

// grad += sum over samples of d(loss_k)/d(params).
void backward_batch_serial(const Mlp& net, std::span<const double> inputs,
                           std::size_t batch,
                           std::span<const double> grad_outputs,
                           std::span<double> grad);
void backward_batch_parallel(const Mlp& net, std::span<const double> inputs,
                             std::size_t batch,
                             std::span<const double> grad_outputs,
                             std::span<double> grad);

}  // namespace tprl

#endif  // TPRL_MLP_HPP_

#include "tprl/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tprl {

std::size_t mlp_param_count(std::span<const int> sizes) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    n += static_cast<std::size_t>(sizes[l + 1]) * (static_cast<std::size_t>(sizes[l]) + 1);
  }
  return n;
}

std::size_t Mlp::weight_offset(int layer) const {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l) {
    off += static_cast<std::size_t>(sizes[l + 1]) * (static_cast<std::size_t>(sizes[l]) + 1);
  }
  return off;
}

std::size_t Mlp::bias_offset(int layer) const {
  return weight_offset(layer) +
         static_cast<std::size_t>(sizes[layer + 1]) * static_cast<std::size_t>(sizes[layer]);
}

std::size_t Mlp::max_width() const {
  return static_cast<std::size_t>(*std::max_element(sizes.begin(), sizes.end()));
}

Mlp make_mlp(std::vector<int> sizes) {
  if (sizes.size() < 2) throw ShapeError("mlp needs at least input and output sizes");
  for (int s : sizes) {
    if (s <= 0) throw ShapeError("mlp layer width must be positive");
  }
  Mlp net;
  net.params.assign(mlp_param_count(sizes), 0.0);
  net.sizes = std::move(sizes);
  return net;
}

void init_xavier(Mlp& net, std::mt19937_64& rng, double output_scale) {
  for (int l = 0; l < net.num_layers(); ++l) {
    const int in = net.sizes[l];
    const int out = net.sizes[l + 1];
    const double limit = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const double scale = (l + 1 == net.num_layers()) ? output_scale : 1.0;
    const std::size_t w = net.weight_offset(l);
    for (std::size_t i = 0; i < static_cast<std::size_t>(in * out); ++i) {
      net.params[w + i] = scale * dist(rng);
    }
    const std::size_t b = net.bias_offset(l);
    std::fill(net.params.begin() + static_cast<std::ptrdiff_t>(b),
              net.params.begin() + static_cast<std::ptrdiff_t>(b + out), 0.0);
  }
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

namespace {

void check_input(const Mlp& net, std::span<const double> input) {
  if (net.params.size() != mlp_param_count(net.sizes)) {
    throw ShapeError("parameter vector does not match architecture");
  }
  if (input.size() != static_cast<std::size_t>(net.input_size())) {
    throw ShapeError("input width " + std::to_string(input.size()) +
                     " != " + std::to_string(net.input_size()));
  }
}

// y = W x + b, then tanh unless this is the last layer.
void layer_forward(const Mlp& net, int l, const double* x, double* y) {
  const int in = net.sizes[l];
  const int out = net.sizes[l + 1];
  const double* W = net.params.data() + net.weight_offset(l);
  const double* b = net.params.data() + net.bias_offset(l);
  const bool hidden = l + 1 < net.num_layers();
  for (int o = 0; o < out; ++o) {
    double acc = b[o];
    const double* row = W + static_cast<std::ptrdiff_t>(o) * in;
    for (int i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = hidden ? std::tanh(acc) : acc;
  }
}

void forward_one(const Mlp& net, const double* x, double* out,
                 std::vector<double>& a, std::vector<double>& b) {
  const double* cur = x;
  for (int l = 0; l < net.num_layers(); ++l) {
    double* dst = (l + 1 == net.num_layers()) ? out : (l % 2 == 0 ? a.data() : b.data());
    layer_forward(net, l, cur, dst);
    cur = dst;
  }
}

}  // namespace

std::vector<double> mlp_forward(const Mlp& net, std::span<const double> input) {
  check_input(net, input);
  std::vector<double> out(static_cast<std::size_t>(net.output_size()));
  std::vector<double> a(net.max_width()), b(net.max_width());
  forward_one(net, input.data(), out.data(), a, b);
  return out;
}

void mlp_forward_cached(const Mlp& net, std::span<const double> input,
                        MlpCache& cache) {
  check_input(net, input);
  cache.activations.resize(net.sizes.size());
  cache.activations[0].assign(input.begin(), input.end());
  for (int l = 0; l < net.num_layers(); ++l) {
    auto& y = cache.activations[static_cast<std::size_t>(l + 1)];
    y.resize(static_cast<std::size_t>(net.sizes[l + 1]));
    layer_forward(net, l, cache.activations[static_cast<std::size_t>(l)].data(), y.data());
  }
}

void mlp_backward(const Mlp& net, const MlpCache& cache,
                  std::span<const double> grad_output, std::span<double> grad,
                  std::span<double> grad_input) {
  if (grad.size() != net.params.size()) throw ShapeError("gradient size mismatch");
  if (grad_output.size() != static_cast<std::size_t>(net.output_size())) {
    throw ShapeError("output gradient size mismatch");
  }
  std::vector<double> delta(grad_output.begin(), grad_output.end());
  std::vector<double> prev;
  for (int l = net.num_layers() - 1; l >= 0; --l) {
    const int in = net.sizes[l];
    const int out = net.sizes[l + 1];
    const auto& x = cache.activations[static_cast<std::size_t>(l)];
    const std::size_t w = net.weight_offset(l);
    const std::size_t bo = net.bias_offset(l);
    for (int o = 0; o < out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      double* gw = grad.data() + w + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) gw[i] += d * x[static_cast<std::size_t>(i)];
      grad[bo + static_cast<std::size_t>(o)] += d;
    }
    if (l == 0 && grad_input.empty()) break;
    prev.assign(static_cast<std::size_t>(in), 0.0);
    const double* W = net.params.data() + w;
    for (int o = 0; o < out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      const double* row = W + static_cast<std::ptrdiff_t>(o) * in;
      for (int i = 0; i < in; ++i) prev[static_cast<std::size_t>(i)] += row[i] * d;
    }
    if (l > 0) {
      // x holds tanh outputs of the previous layer.
      for (int i = 0; i < in; ++i) {
        const double t = x[static_cast<std::size_t>(i)];
        prev[static_cast<std::size_t>(i)] *= 1.0 - t * t;
      }
    } else {
      std::copy(prev.begin(), prev.end(), grad_input.begin());
    }
    delta.swap(prev);
  }
}

namespace {

void check_batch(const Mlp& net, std::span<const double> inputs, std::size_t batch,
                 std::size_t out_size, std::size_t expected_out) {
  if (net.params.size() != mlp_param_count(net.sizes)) {
    throw ShapeError("parameter vector does not match architecture");
  }
  if (inputs.size() != batch * static_cast<std::size_t>(net.input_size())) {
    throw ShapeError("batch input size mismatch");
  }
  if (out_size != expected_out) throw ShapeError("batch output size mismatch");
}

}  // namespace

void forward_batch_serial(const Mlp& net, std::span<const double> inputs,
                          std::size_t batch, std::span<double> outputs) {
  const auto in = static_cast<std::size_t>(net.input_size());
  const auto out = static_cast<std::size_t>(net.output_size());
  check_batch(net, inputs, batch, outputs.size(), batch * out);
  std::vector<double> a(net.max_width()), b(net.max_width());
  for (std::size_t k = 0; k < batch; ++k) {
    forward_one(net, inputs.data() + k * in, outputs.data() + k * out, a, b);
  }
}

void forward_batch_parallel(const Mlp& net, std::span<const double> inputs,
                            std::size_t batch, std::span<double> outputs) {
  const auto in = static_cast<std::size_t>(net.input_size());
  const auto out = static_cast<std::size_t>(net.output_size());
  check_batch(net, inputs, batch, outputs.size(), batch * out);
  const auto n = static_cast<std::ptrdiff_t>(batch);
#pragma omp parallel
  {
    std::vector<double> a(net.max_width()), b(net.max_width());
#pragma omp for schedule(static)
    for (std::ptrdiff_t k = 0; k < n; ++k) {
      const auto u = static_cast<std::size_t>(k);
      forward_one(net, inputs.data() + u * in, outputs.data() + u * out, a, b);
    }
  }
}

void backward_batch_serial(const Mlp& net, std::span<const double> inputs,
                           std::size_t batch,
                           std::span<const double> grad_outputs,
                           std::span<double> grad) {
  const auto in = static_cast<std::size_t>(net.input_size());
  const auto out = static_cast<std::size_t>(net.output_size());
  check_batch(net, inputs, batch, grad_outputs.size(), batch * out);
  if (grad.size() != net.params.size()) throw ShapeError("gradient size mismatch");
  MlpCache cache;
  std::vector<double> sample(net.params.size());
  for (std::size_t k = 0; k < batch; ++k) {
    std::fill(sample.begin(), sample.end(), 0.0);
    mlp_forward_cached(net, inputs.subspan(k * in, in), cache);
    mlp_backward(net, cache, grad_outputs.subspan(k * out, out), sample);
    for (std::size_t j = 0; j < sample.size(); ++j) grad[j] += sample[j];
  }
}

void backward_batch_parallel(const Mlp& net, std::span<const double> inputs,
                             std::size_t batch,
                             std::span<const double> grad_outputs,
                             std::span<double> grad) {
  const auto in = static_cast<std::size_t>(net.input_size());
  const auto out = static_cast<std::size_t>(net.output_size());
  check_batch(net, inputs, batch, grad_outputs.size(), batch * out);
  const std::size_t p = net.params.size();
  if (grad.size() != p) throw ShapeError("gradient size mismatch");
  // Samples are processed in fixed blocks to bound the scratch memory.
  constexpr std::size_t kBlock = 128;
  std::vector<double> per_sample(std::min(batch, kBlock) * p);
  const auto np = static_cast<std::ptrdiff_t>(p);
  for (std::size_t b0 = 0; b0 < batch; b0 += kBlock) {
    const std::size_t nb = std::min(kBlock, batch - b0);
    std::fill(per_sample.begin(), per_sample.begin() + static_cast<std::ptrdiff_t>(nb * p), 0.0);
    const auto n = static_cast<std::ptrdiff_t>(nb);
#pragma omp parallel
    {
      MlpCache cache;
#pragma omp for schedule(static)
      for (std::ptrdiff_t k = 0; k < n; ++k) {
        const auto u = b0 + static_cast<std::size_t>(k);
        mlp_forward_cached(net, inputs.subspan(u * in, in), cache);
        mlp_backward(net, cache, grad_outputs.subspan(u * out, out),
                     std::span<double>(per_sample).subspan(static_cast<std::size_t>(k) * p, p));
      }
    }
    // Each parameter is reduced over samples in index order.
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t j = 0; j < np; ++j) {
      const auto u = static_cast<std::size_t>(j);
      double acc = grad[u];
      for (std::size_t k = 0; k < nb; ++k) acc += per_sample[k * p + u];
      grad[u] = acc;
    }
  }
}

}  // namespace tprl

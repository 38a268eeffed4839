// SPDX-License-Identifier: Apache-2.0
//
// Per-view encoders and the cosine/temperature critic.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cmc/error.hpp"
#include "cmc/rng.hpp"
#include "cmc/tensor.hpp"

namespace cmc {

/// Dense relu network. weights[l] is [in x out], biases[l] is [out].
struct Mlp {
  std::vector<std::size_t> layer_sizes;
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      out.push_back(weights[l]);
      out.push_back(biases[l]);
    }
    return out;
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline Mlp make_mlp(std::vector<std::size_t> layer_sizes, Rng& rng) {
  if (layer_sizes.size() < 2) throw ParameterError("mlp needs at least an input and an output size");
  for (std::size_t s : layer_sizes) {
    if (s == 0) throw ParameterError("mlp layer sizes must be positive");
  }
  Mlp net;
  net.layer_sizes = std::move(layer_sizes);
  for (std::size_t l = 0; l + 1 < net.layer_sizes.size(); ++l) {
    std::size_t in = net.layer_sizes[l], out = net.layer_sizes[l + 1];
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::vector<double> w(in * out), b(out);
    for (auto& x : w) x = rng.uniform(-bound, bound);
    for (auto& x : b) x = rng.uniform(-bound, bound);
    net.weights.emplace_back(Shape{in, out}, std::move(w), true);
    net.biases.emplace_back(Shape{out}, std::move(b), true);
  }
  return net;
}

/// Affine layers with relu between them; the last layer stays linear.
inline Tensor forward(const Mlp& net, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != net.input_dim()) {
    throw DimensionError("mlp expects [n x " + std::to_string(net.input_dim()) + "], got " + format_shape(x.shape()));
  }
  Tensor h = x;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    h = add_row_bias(matmul(h, net.weights[l]), net.biases[l]);
    if (l + 1 < net.weights.size()) h = relu(h);
  }
  return h;
}

/// Encoder for one view: an MLP whose output rows are projected to the unit sphere.
struct EncoderParams {
  std::string view_name;
  Mlp net;

  std::size_t embed_dim() const { return net.output_dim(); }
  const std::vector<std::size_t>& layer_sizes() const { return net.layer_sizes; }
  std::vector<Tensor> parameters() const { return net.parameters(); }
};

inline EncoderParams make_encoder(std::string view_name, std::vector<std::size_t> layer_sizes, Rng& rng) {
  return {std::move(view_name), make_mlp(std::move(layer_sizes), rng)};
}

/// Unit-norm embeddings z = f(v) for flattened views v [n x input_dim].
inline Tensor encode(const EncoderParams& enc, const Tensor& v) { return l2_normalize(forward(enc.net, v)); }

/// Sum of squared parameter values, for logging.
inline double parameter_norm(const EncoderParams& enc) {
  double ss = 0.0;
  for (const auto& p : enc.parameters())
    for (double v : p.data()) ss += v * v;
  return std::sqrt(ss);
}

class Temperature {
 public:
  explicit Temperature(double tau = 0.07) : tau_(tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw ParameterError("temperature must be positive, got " + std::to_string(tau));
  }
  double value() const { return tau_; }

 private:
  double tau_;
};

/// Logits z1 z2^T / tau. These are the exponents of the critic, not the
/// critic itself; the softmax in the loss applies the exponential.
inline Tensor score(const Tensor& z1, const Tensor& z2, Temperature tau) {
  if (z1.rank() != 2 || z2.rank() != 2 || z1.cols() != z2.cols()) {
    throw DimensionError("score: embedding shapes " + format_shape(z1.shape()) + " and " + format_shape(z2.shape()) +
                         " do not share a dimension");
  }
  return scale(matmul(z1, transpose(z2)), 1.0 / tau.value());
}

/// exp(score), the unnormalized density-ratio estimate.
inline Tensor critic_h(const Tensor& z1, const Tensor& z2, Temperature tau) { return exp(score(z1, z2, tau)); }

}  // namespace cmc

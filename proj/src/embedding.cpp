#include "shotfree/embedding.hpp"

#include <cmath>
#include <string>

#include "shotfree/errors.hpp"

namespace shotfree {

std::vector<Tensor> EmbeddingParams::trainable() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i]);
    out.push_back(biases[i]);
  }
  out.push_back(scale_s);
  return out;
}

void EmbeddingParams::validate() const {
  if (layer_sizes.size() < 2) {
    throw ConfigError("embedding needs at least input and output sizes");
  }
  if (layer_sizes.back() < 2) {
    throw ConfigError("embedding output dimension must be >= 2, got " +
                      std::to_string(layer_sizes.back()));
  }
  if (weights.size() != layer_sizes.size() - 1 || biases.size() != weights.size()) {
    throw ConfigError("embedding parameter count does not match layer_sizes");
  }
  if (!scale_s.defined() || scale_s.size() != 1 || !(scale_s.at(0) > 0.0)) {
    throw ConfigError("embedding scale_s must be a positive scalar");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ConfigError("dropout_rate must lie in [0,1), got " + std::to_string(dropout_rate));
  }
}

Tensor embed(const EmbeddingParams& params, const Tensor& x, EmbedMode mode, Rng& rng) {
  params.validate();
  if (x.ndim() != 2 || x.cols() != params.input_dim()) {
    throw ShapeError("embed: input " + detail::shape_str(x.shape()) + " does not match input_dim " +
                     std::to_string(params.input_dim()));
  }
  Tensor h = x;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    h = linear(h, params.weights[i], params.biases[i]);
    if (i + 1 < params.weights.size()) h = relu(h);
  }
  h = l2_normalize_rows(h);
  if (mode == EmbedMode::kTrain) {
    h = dropout(h, params.dropout_rate, rng);
    h = mul_scalar(h, params.scale_s);
  }
  return h;
}

EmbeddingParams init_embedding(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed,
                               double dropout_rate) {
  if (layer_sizes.size() < 2) {
    throw ConfigError("init_embedding: need at least input and output sizes");
  }
  EmbeddingParams params;
  params.layer_sizes = layer_sizes;
  params.dropout_rate = dropout_rate;
  Rng rng = make_rng(seed, /*stream_id=*/1);
  for (std::size_t i = 0; i + 1 < layer_sizes.size(); ++i) {
    const std::size_t fan_in = layer_sizes[i], fan_out = layer_sizes[i + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> w(fan_out * fan_in);
    for (double& v : w) v = uniform(rng, -bound, bound);
    params.weights.push_back(Tensor(Shape{fan_out, fan_in}, std::move(w)));
    params.biases.push_back(Tensor::zeros(Shape{fan_out}));
  }
  params.scale_s = Tensor::scalar(10.0);
  params.validate();
  return params;
}

}  // namespace shotfree

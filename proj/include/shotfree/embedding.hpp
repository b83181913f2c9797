#pragma once

#include <vector>

#include "shotfree/ops.hpp"
#include "shotfree/rng.hpp"
#include "shotfree/tensor.hpp"

namespace shotfree {

/// MLP producing unit-sphere embeddings. The last linear layer feeds a row
/// normalization; training adds inverted dropout and a learnable scale.
struct EmbeddingParams {
  std::vector<std::size_t> layer_sizes;  // input_dim, hidden..., d
  std::vector<Tensor> weights;           // per layer, out×in
  std::vector<Tensor> biases;            // per layer, {out}
  Tensor scale_s;                        // positive scalar, learned
  double dropout_rate = 0.1;

  std::size_t input_dim() const { return layer_sizes.front(); }
  std::size_t output_dim() const { return layer_sizes.back(); }
  /// All tensors the optimizer should touch, weights/biases then scale_s.
  std::vector<Tensor> trainable() const;
  void validate() const;
};

enum class EmbedMode {
  kTrain,  // normalize -> dropout -> scale
  kEval,   // normalize only
};

/// Runs the MLP and the output head. `x` is n×input_dim; the result is n×d
/// with unit rows in EVAL mode. TRAIN mode consumes `rng` for the dropout
/// mask (pass any stream when dropout_rate is 0).
Tensor embed(const EmbeddingParams& params, const Tensor& x, EmbedMode mode, Rng& rng);

/// He-style fan-in init: weights uniform on [-sqrt(6/fan_in), sqrt(6/fan_in)],
/// biases zero, scale_s = 10.
EmbeddingParams init_embedding(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed,
                               double dropout_rate = 0.1);

}  // namespace shotfree

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shotfree/class_model.hpp"
#include "shotfree/embedding.hpp"
#include "shotfree/optim.hpp"

namespace shotfree {

struct TrainConfig {
  OptimizerRecipe optimizer = OptimizerRecipe::kAdam;
  std::size_t ways = 5;
  std::size_t per_class = 16;  // N_e; the 15-queries convention makes this shots+15
  std::size_t episodes_per_iteration = 8;
  std::size_t max_iterations = 2000;
  double lambda = 1.0;
  std::size_t mu_factor = 2;
  double dropout_rate = 0.1;
  std::uint64_t seed = 0;
  std::size_t validation_interval = 100;
  std::size_t patience = 1000;       // SGD recipe plateau window
  std::size_t decay_every = 2000;    // Adam recipe lr halving period
  double initial_lr = 0.0;           // 0 = recipe default (1e-3 adam, 0.1 sgd)
  std::vector<std::size_t> hidden_sizes = {64, 64};
  std::size_t embed_dim = 16;
  std::size_t val_episodes = 100;    // validation few-shot episodes per check
  std::size_t val_shots = 1;
  std::size_t val_queries = 15;
  // Baseline only: support size per class during training. 0 means unsplit
  // episodes (the shot-free sampler), which is the whole point of the method.
  std::size_t train_shots = 0;

  double resolved_lr() const {
    if (initial_lr > 0.0) return initial_lr;
    return optimizer == OptimizerRecipe::kAdam ? 1e-3 : 0.1;
  }
  void validate() const;
};

/// Frozen model state: everything evaluation needs, plus bookkeeping.
struct Checkpoint {
  EmbeddingParams embedding;
  MetricMap map;
  PrototypeTable prototypes;  // base classes; empty for the baseline
  TrainConfig config;
  std::size_t iteration = 0;
  double validation_score = 0.0;
  std::string model_kind = "shotfree";  // or "protonet"
};

}  // namespace shotfree

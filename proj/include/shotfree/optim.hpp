#pragma once

#include <cstdint>
#include <utility>
#include <string>
#include <vector>

#include "shotfree/tensor.hpp"

namespace shotfree {

enum class OptimizerRecipe { kAdam, kSgd };

const char* recipe_name(OptimizerRecipe r);
OptimizerRecipe parse_recipe(const std::string& name);

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::vector<std::uint64_t> t;  // per-tensor step counters
  void ensure(const std::vector<Tensor>& params);
};

/// One Adam update over all params that hold a gradient. Params without a
/// gradient this step are left untouched (state included).
void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamHyper& hyper);

/// Sparse row-wise variant for the prototype table: only `rows` advance.
void adam_step_rows(const Tensor& table, const std::vector<std::size_t>& rows,
                    std::vector<std::vector<double>>& m, std::vector<std::vector<double>>& v,
                    std::vector<std::uint64_t>& t, const AdamHyper& hyper);

struct SgdHyper {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  bool nesterov = true;
};

struct SgdState {
  std::vector<std::vector<double>> velocity;
  void ensure(const std::vector<Tensor>& params);
};

/// Nesterov momentum step: g ← grad + wd·p; v ← μv + g; p ← p − lr(g + μv).
void sgd_nesterov_step(std::vector<Tensor>& params, SgdState& state, const SgdHyper& hyper);

/// Row-wise variant mirroring adam_step_rows.
void sgd_step_rows(const Tensor& table, const std::vector<std::size_t>& rows,
                   std::vector<std::vector<double>>& velocity, const SgdHyper& hyper);

struct LrScheduleConfig {
  OptimizerRecipe recipe = OptimizerRecipe::kAdam;
  double initial_lr = 1e-3;
  std::size_t decay_every = 2000;  // Adam recipe: halve on this iteration period
  std::size_t patience = 1000;     // SGD recipe: halve after this long without improvement
};

/// Piecewise-constant learning rate. The Adam recipe halves every
/// `decay_every` iterations; the SGD recipe halves each time the validation
/// score fails to improve for `patience` iterations. `val_history` holds
/// (iteration, score) pairs in iteration order; entries after `iteration`
/// are ignored so the function can replay any prefix deterministically.
double lr_schedule(const LrScheduleConfig& cfg, std::size_t iteration,
                   const std::vector<std::pair<std::size_t, double>>& val_history = {});

}  // namespace shotfree

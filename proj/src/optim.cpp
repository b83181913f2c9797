#include "shotfree/optim.hpp"

#include <cmath>
#include <limits>

#include "shotfree/errors.hpp"

namespace shotfree {

const char* recipe_name(OptimizerRecipe r) {
  return r == OptimizerRecipe::kAdam ? "adam" : "sgd";
}

OptimizerRecipe parse_recipe(const std::string& name) {
  if (name == "adam") return OptimizerRecipe::kAdam;
  if (name == "sgd") return OptimizerRecipe::kSgd;
  throw ConfigError("unknown optimizer recipe '" + name + "' (want adam or sgd)");
}

void AdamState::ensure(const std::vector<Tensor>& params) {
  if (m.size() == params.size()) return;
  if (!m.empty()) throw ContractError("adam state bound to a different parameter list");
  m.resize(params.size());
  v.resize(params.size());
  t.assign(params.size(), 0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i].assign(params[i].size(), 0.0);
    v[i].assign(params[i].size(), 0.0);
  }
}

namespace {

void adam_update(std::span<double> p, std::span<const double> g, std::vector<double>& m,
                 std::vector<double>& v, std::uint64_t t, const AdamHyper& h) {
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < p.size(); ++i) {
    m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
    v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
  }
}

}  // namespace

void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamHyper& hyper) {
  state.ensure(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (p.size() != state.m[i].size()) {
      throw ContractError("adam state shape does not match parameter " + std::to_string(i));
    }
    if (!p.has_grad()) continue;
    ++state.t[i];
    adam_update(p.values_mut(), p.grad(), state.m[i], state.v[i], state.t[i], hyper);
  }
}

void adam_step_rows(const Tensor& table, const std::vector<std::size_t>& rows,
                    std::vector<std::vector<double>>& m, std::vector<std::vector<double>>& v,
                    std::vector<std::uint64_t>& t, const AdamHyper& hyper) {
  const std::size_t n = table.rows(), d = table.cols();
  if (m.size() != n) {
    m.assign(n, std::vector<double>(d, 0.0));
    v.assign(n, std::vector<double>(d, 0.0));
    t.assign(n, 0);
  }
  if (!table.has_grad()) return;
  auto p = table.values_mut();
  auto g = table.grad();
  for (std::size_t r : rows) {
    if (r >= n) throw ContractError("adam_step_rows: row out of range");
    ++t[r];
    adam_update(p.subspan(r * d, d), g.subspan(r * d, d), m[r], v[r], t[r], hyper);
  }
}

void SgdState::ensure(const std::vector<Tensor>& params) {
  if (velocity.size() == params.size()) return;
  if (!velocity.empty()) throw ContractError("sgd state bound to a different parameter list");
  velocity.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) velocity[i].assign(params[i].size(), 0.0);
}

namespace {

void sgd_update(std::span<double> p, std::span<const double> grad, std::vector<double>& vel,
                const SgdHyper& h) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double g = grad[i] + h.weight_decay * p[i];
    vel[i] = h.momentum * vel[i] + g;
    p[i] -= h.lr * (h.nesterov ? g + h.momentum * vel[i] : vel[i]);
  }
}

}  // namespace

void sgd_nesterov_step(std::vector<Tensor>& params, SgdState& state, const SgdHyper& hyper) {
  state.ensure(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (p.size() != state.velocity[i].size()) {
      throw ContractError("sgd state shape does not match parameter " + std::to_string(i));
    }
    if (!p.has_grad()) continue;
    sgd_update(p.values_mut(), p.grad(), state.velocity[i], hyper);
  }
}

void sgd_step_rows(const Tensor& table, const std::vector<std::size_t>& rows,
                   std::vector<std::vector<double>>& velocity, const SgdHyper& hyper) {
  const std::size_t n = table.rows(), d = table.cols();
  if (velocity.size() != n) velocity.assign(n, std::vector<double>(d, 0.0));
  if (!table.has_grad()) return;
  auto p = table.values_mut();
  auto g = table.grad();
  for (std::size_t r : rows) {
    if (r >= n) throw ContractError("sgd_step_rows: row out of range");
    sgd_update(p.subspan(r * d, d), g.subspan(r * d, d), velocity[r], hyper);
  }
}

double lr_schedule(const LrScheduleConfig& cfg, std::size_t iteration,
                   const std::vector<std::pair<std::size_t, double>>& val_history) {
  if (cfg.recipe == OptimizerRecipe::kAdam) {
    if (cfg.decay_every == 0) return cfg.initial_lr;
    return cfg.initial_lr * std::pow(0.5, static_cast<double>(iteration / cfg.decay_every));
  }
  // SGD plateau rule, replayed from the history prefix.
  double lr = cfg.initial_lr;
  double best = -std::numeric_limits<double>::infinity();
  std::size_t anchor = 0;
  for (const auto& [it, score] : val_history) {
    if (it > iteration) break;
    if (score > best) {
      best = score;
      anchor = it;
    } else if (cfg.patience > 0 && it - anchor >= cfg.patience) {
      lr *= 0.5;
      anchor = it;
    }
  }
  return lr;
}

}  // namespace shotfree

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "shotfree/checkpoint.hpp"
#include "shotfree/dataset.hpp"

namespace shotfree {

/// One few-shot problem: labeled support rows per novel class (shots may
/// differ between classes) and query rows whose labels are only used for
/// scoring.
struct FewShotTask {
  std::vector<std::int64_t> class_ids;
  std::vector<Tensor> support;  // per class, shots_k × input_dim
  Tensor query;                 // q × input_dim
  std::vector<std::int64_t> query_labels;

  void validate() const;
};

/// Builds a task from a support/query episode.
FewShotTask make_task(const SplitDataset& ds, const Episode& ep);

struct EvalReport {
  std::string scenario;  // e.g. "5-way 1-shot"
  std::size_t episodes = 0;
  double mean_accuracy = 0.0;
  double ci95 = 0.0;  // 1.96·stddev/sqrt(episodes); NaN when episodes == 1
  std::uint64_t seed = 0;
  std::string method;
};

struct FewShotOptConfig {
  std::size_t max_steps = 500;
  double grad_tol = 1e-6;  // tangential gradient norm threshold
  double init_step = 1.0;  // backtracking line search start
  double lambda = 0.0;     // entropy weight at few-shot time
};

/// Implicit prototypes: per novel class, free unit vectors minimizing the
/// episode cross-entropy over the task's support samples, solved by
/// projected gradient descent (backtracking line search) from the normalized
/// class-mean initialization. Non-convergence logs a warning and returns the
/// best iterate. A single-way task returns the mean init (flat objective).
PrototypeTable prototypes_implicit(const Checkpoint& ckpt, const FewShotTask& task,
                                   const FewShotOptConfig& opt = {});

/// Fixed-mean path: c_k = normalize(mean_j normalize(W ẑ_j)).
PrototypeTable prototypes_mean(const Checkpoint& ckpt, const FewShotTask& task);

struct BackfillResult {
  MetricMap map;
  PrototypeTable prototypes;  // base rows carried over + novel rows
  bool converged = false;
  std::size_t steps = 0;
};

/// Joint refinement of the metric map and the novel prototypes over the
/// aggregate support data of `tasks`, embedding frozen. Base prototype rows
/// are carried into the result unchanged; the new map applies to the
/// embedding side.
BackfillResult backfill_metric(const Checkpoint& ckpt, const std::vector<FewShotTask>& tasks,
                               const FewShotOptConfig& opt = {});

/// Nearest-prototype prediction under chi; ties break to the lowest class id.
std::vector<std::int64_t> classify(const Checkpoint& ckpt, const PrototypeTable& protos,
                                   const Tensor& query_rows);

enum class FewShotMethod { kImplicit, kMean, kBackfill };
const char* method_name(FewShotMethod m);
FewShotMethod parse_method(const std::string& name);

struct EvalScenario {
  std::size_t ways = 5;
  std::size_t shots = 1;
  std::size_t queries = 30;
  std::size_t episodes = 2000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  Split split = Split::kNovel;
};

/// Episode-averaged accuracy of a frozen checkpoint under the scenario's
/// support/query protocol. Deterministic for fixed seed regardless of worker
/// count (per-episode substreams, index-ordered reduction).
EvalReport evaluate(const Checkpoint& ckpt, const SplitDataset& ds, const EvalScenario& scenario,
                    FewShotMethod method, const FewShotOptConfig& opt = {});

/// Prototypical-networks baseline: unnormalized MLP embeddings, per-episode
/// support means, squared Euclidean metric, CE on the queries. The training
/// shot is fixed per model (cfg.train_shots ≥ 1; cfg.per_class = shots +
/// queries).
Checkpoint protonet_train(const SplitDataset& ds, const TrainConfig& cfg);
EvalReport protonet_eval(const Checkpoint& ckpt, const SplitDataset& ds,
                         const EvalScenario& scenario);

/// Raw MLP forward pass (no normalization head) — the baseline's embedding.
Tensor mlp_forward(const EmbeddingParams& params, const Tensor& x);

/// Lifelong extension mechanism: append novel rows to an existing table.
/// Duplicate ids are rejected.
PrototypeTable merge_tables(const PrototypeTable& base, const PrototypeTable& extra);

}  // namespace shotfree

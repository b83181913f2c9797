#include "shotfree/fewshot.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <thread>
#include <unordered_set>

#include "shotfree/errors.hpp"
#include "shotfree/log.hpp"
#include "shotfree/losses.hpp"
#include "shotfree/optim.hpp"

namespace shotfree {

void FewShotTask::validate() const {
  if (class_ids.empty() || support.size() != class_ids.size()) {
    throw ContractError("task needs one support block per class");
  }
  std::unordered_set<std::int64_t> ids(class_ids.begin(), class_ids.end());
  if (ids.size() != class_ids.size()) throw ContractError("task has duplicate class ids");
  for (const Tensor& s : support) {
    if (!s.defined() || s.ndim() != 2 || s.rows() == 0) {
      throw ContractError("every class needs at least one support row");
    }
  }
  if (query.defined()) {
    if (query_labels.size() != query.rows()) {
      throw ContractError("query labels do not match query rows");
    }
    for (std::int64_t l : query_labels) {
      if (!ids.contains(l)) {
        throw ContractError("query label " + std::to_string(l) + " not among task classes");
      }
    }
  }
}

FewShotTask make_task(const SplitDataset& ds, const Episode& ep) {
  if (!ep.support_count.has_value()) {
    throw ContractError("make_task needs a support/query episode");
  }
  const std::size_t shots = *ep.support_count;
  FewShotTask task;
  task.class_ids = ep.class_ids;
  std::vector<std::size_t> query_rows;
  for (std::size_t k = 0; k < ep.class_ids.size(); ++k) {
    const auto& idx = ep.sample_indices[k];
    if (idx.size() <= shots) throw ContractError("episode too small for its support count");
    task.support.push_back(
        gather_feature_rows(ds, {idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(shots)}));
    for (std::size_t j = shots; j < idx.size(); ++j) {
      query_rows.push_back(idx[j]);
      task.query_labels.push_back(ep.class_ids[k]);
    }
  }
  task.query = gather_feature_rows(ds, query_rows);
  task.validate();
  return task;
}

namespace {

Rng dummy_rng() { return make_rng(0, 0); }

// EVAL embedding of arbitrary feature rows: unit rows in R^d.
Tensor embed_eval(const Checkpoint& ckpt, const Tensor& rows) {
  Rng rng = dummy_rng();
  return embed(ckpt.embedding, rows, EmbedMode::kEval, rng);
}

// normalize(W z) rows for non-graph work.
std::vector<double> mapped_units(const Checkpoint& ckpt, const Tensor& rows) {
  Tensor z = embed_eval(ckpt, rows);
  Tensor m = matmul(z, transpose(ckpt.map.W));
  Tensor u = l2_normalize_rows(m);
  auto v = u.values();
  return {v.begin(), v.end()};
}

// Support blocks flattened to one matrix plus per-row class positions.
struct FlatSupport {
  Tensor rows;  // total × input_dim
  std::vector<std::size_t> positions;
};

FlatSupport flatten_support(const FewShotTask& task) {
  FlatSupport flat;
  std::vector<Tensor> parts;
  for (std::size_t k = 0; k < task.support.size(); ++k) {
    parts.push_back(task.support[k]);
    for (std::size_t j = 0; j < task.support[k].rows(); ++j) flat.positions.push_back(k);
  }
  flat.rows = concat_rows(parts);
  return flat;
}

// Class-mean unit prototypes per eq the mean path: normalize(mean(normalize(W ẑ))).
PrototypeTable mean_table(const Checkpoint& ckpt, const FewShotTask& task) {
  const std::size_t mu = ckpt.map.mu;
  std::vector<double> proto(task.class_ids.size() * mu, 0.0);
  for (std::size_t k = 0; k < task.class_ids.size(); ++k) {
    const std::vector<double> units = mapped_units(ckpt, task.support[k]);
    const std::size_t n = task.support[k].rows();
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < mu; ++c) proto[k * mu + c] += units[j * mu + c];
    }
    double sq = 0.0;
    for (std::size_t c = 0; c < mu; ++c) {
      proto[k * mu + c] /= static_cast<double>(n);
      sq += proto[k * mu + c] * proto[k * mu + c];
    }
    if (!(std::sqrt(sq) > 1e-12)) {
      throw DegenerateInputError("class " + std::to_string(task.class_ids[k]) +
                                 ": support directions cancel, mean prototype undefined");
    }
  }
  PrototypeTable table;
  table.class_ids = task.class_ids;
  table.vectors = Tensor(Shape{task.class_ids.size(), mu}, std::move(proto));
  table.renormalize_rows();
  table.validate();
  return table;
}

double tangential_grad_norm(const Tensor& table) {
  if (!table.has_grad()) return 0.0;
  auto v = table.values();
  auto g = table.grad();
  const std::size_t n = table.rows(), d = table.cols();
  double sq = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * v[r * d + c];
    for (std::size_t c = 0; c < d; ++c) {
      const double t = g[r * d + c] - dot * v[r * d + c];
      sq += t * t;
    }
  }
  return std::sqrt(sq);
}

}  // namespace

PrototypeTable prototypes_mean(const Checkpoint& ckpt, const FewShotTask& task) {
  task.validate();
  ckpt.map.validate();
  return mean_table(ckpt, task);
}

PrototypeTable prototypes_implicit(const Checkpoint& ckpt, const FewShotTask& task,
                                   const FewShotOptConfig& opt) {
  task.validate();
  ckpt.map.validate();
  PrototypeTable table = mean_table(ckpt, task);
  if (task.class_ids.size() < 2) {
    // Single-way posterior is identically 1: the objective is flat, the
    // mean init is as good as any point.
    return table;
  }

  FlatSupport flat = flatten_support(task);
  Tensor z = embed_eval(ckpt, flat.rows);  // frozen; graph rebuilt per step below
  const double s = ckpt.embedding.scale_s.at(0);
  Tensor s_t = Tensor::scalar(s);

  table.vectors.set_requires_grad(true);
  auto objective = [&](const Tensor& protos) {
    EpisodeLossReport rep;
    episode_loss_graph(z, flat.positions, protos, ckpt.map, s_t, opt.lambda, &rep);
    return rep.total;
  };

  double loss = 0.0;
  {
    table.vectors.zero_grad();
    Tape tape;
    Tensor l =
        episode_loss_graph(z, flat.positions, table.vectors, ckpt.map, s_t, opt.lambda, nullptr);
    loss = l.at(0);
    tape.backward(l);
  }

  bool converged = false;
  std::size_t step_count = 0;
  const std::size_t n = table.vectors.rows(), mu = table.vectors.cols();
  for (; step_count < opt.max_steps; ++step_count) {
    if (tangential_grad_norm(table.vectors) < opt.grad_tol) {
      converged = true;
      break;
    }
    auto g = table.vectors.grad();
    auto cur = table.vectors.values();
    const std::vector<double> saved(cur.begin(), cur.end());
    double eta = opt.init_step;
    bool accepted = false;
    while (eta > 1e-14) {
      std::vector<double> cand(n * mu);
      for (std::size_t i = 0; i < cand.size(); ++i) cand[i] = saved[i] - eta * g[i];
      // project back onto the sphere
      bool degenerate = false;
      for (std::size_t r = 0; r < n && !degenerate; ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < mu; ++c) sq += cand[r * mu + c] * cand[r * mu + c];
        const double norm = std::sqrt(sq);
        if (!(norm > 1e-12)) {
          degenerate = true;
          break;
        }
        for (std::size_t c = 0; c < mu; ++c) cand[r * mu + c] /= norm;
      }
      if (!degenerate) {
        std::copy(cand.begin(), cand.end(), table.vectors.values_mut().begin());
        const double cand_loss = objective(table.vectors);
        if (cand_loss <= loss) {
          loss = cand_loss;
          accepted = true;
          break;
        }
        std::copy(saved.begin(), saved.end(), table.vectors.values_mut().begin());
      }
      eta *= 0.5;
    }
    if (!accepted) break;  // no descent direction left at any step size
    table.vectors.zero_grad();
    Tape tape;
    Tensor l =
        episode_loss_graph(z, flat.positions, table.vectors, ckpt.map, s_t, opt.lambda, nullptr);
    tape.backward(l);
  }
  if (!converged && step_count == opt.max_steps) {
    log_warn("prototypes_implicit: no convergence after " + std::to_string(opt.max_steps) +
             " steps; returning best iterate");
  }
  table.vectors.set_requires_grad(false);
  table.renormalize_rows();
  table.validate();
  return table;
}

BackfillResult backfill_metric(const Checkpoint& ckpt, const std::vector<FewShotTask>& tasks,
                               const FewShotOptConfig& opt) {
  if (tasks.empty()) throw ContractError("backfill_metric: no tasks");
  for (const FewShotTask& t : tasks) t.validate();

  // Aggregate novel classes across tasks; duplicate ids must agree on data.
  std::vector<std::int64_t> novel_ids;
  std::vector<Tensor> novel_support;
  for (const FewShotTask& t : tasks) {
    for (std::size_t k = 0; k < t.class_ids.size(); ++k) {
      if (std::find(novel_ids.begin(), novel_ids.end(), t.class_ids[k]) != novel_ids.end()) {
        throw ContractError("backfill_metric: class " + std::to_string(t.class_ids[k]) +
                            " appears in two tasks");
      }
      novel_ids.push_back(t.class_ids[k]);
      novel_support.push_back(t.support[k]);
    }
  }
  FewShotTask merged;
  merged.class_ids = novel_ids;
  merged.support = novel_support;
  merged.validate();

  BackfillResult out;
  // Novel prototypes start at the mean path under the ORIGINAL map.
  PrototypeTable novel = mean_table(ckpt, merged);
  out.map.mu = ckpt.map.mu;
  out.map.d = ckpt.map.d;
  {
    auto wv = ckpt.map.W.values();
    out.map.W = Tensor(ckpt.map.W.shape(), {wv.begin(), wv.end()});
  }

  FlatSupport flat = flatten_support(merged);
  Tensor z = embed_eval(ckpt, flat.rows);
  Tensor s_t = Tensor::scalar(ckpt.embedding.scale_s.at(0));

  novel.vectors.set_requires_grad(true);
  out.map.W.set_requires_grad(true);

  auto eval_loss = [&]() {
    EpisodeLossReport rep;
    episode_loss_graph(z, flat.positions, novel.vectors, out.map, s_t, opt.lambda, &rep);
    return rep.total;
  };
  auto backward_pass = [&]() {
    novel.vectors.zero_grad();
    out.map.W.zero_grad();
    Tape tape;
    Tensor l = episode_loss_graph(z, flat.positions, novel.vectors, out.map, s_t, opt.lambda,
                                  nullptr);
    tape.backward(l);
    return l.at(0);
  };

  double loss = backward_pass();
  const std::size_t n = novel.vectors.rows(), mu = novel.vectors.cols();
  for (out.steps = 0; out.steps < opt.max_steps; ++out.steps) {
    double grad_sq = 0.0;
    if (out.map.W.has_grad()) {
      for (double g : out.map.W.grad()) grad_sq += g * g;
    }
    const double tan = tangential_grad_norm(novel.vectors);
    if (std::sqrt(grad_sq + tan * tan) < opt.grad_tol) {
      out.converged = true;
      break;
    }
    auto gc = novel.vectors.grad();
    auto gw = out.map.W.grad();
    auto cv = novel.vectors.values();
    auto wv = out.map.W.values();
    const std::vector<double> saved_c(cv.begin(), cv.end());
    const std::vector<double> saved_w(wv.begin(), wv.end());
    double eta = opt.init_step;
    bool accepted = false;
    while (eta > 1e-14) {
      auto cm = novel.vectors.values_mut();
      auto wm = out.map.W.values_mut();
      bool degenerate = false;
      for (std::size_t i = 0; i < cm.size(); ++i) cm[i] = saved_c[i] - eta * gc[i];
      for (std::size_t i = 0; i < wm.size(); ++i) wm[i] = saved_w[i] - eta * gw[i];
      for (std::size_t r = 0; r < n && !degenerate; ++r) {
        double sq = 0.0;
        for (std::size_t c = 0; c < mu; ++c) sq += cm[r * mu + c] * cm[r * mu + c];
        const double norm = std::sqrt(sq);
        if (!(norm > 1e-12)) degenerate = true;
        else
          for (std::size_t c = 0; c < mu; ++c) cm[r * mu + c] /= norm;
      }
      if (!degenerate) {
        double cand_loss = std::numeric_limits<double>::infinity();
        try {
          cand_loss = eval_loss();
        } catch (const DegenerateInputError&) {
          // a too-aggressive W step can zero out W z; shrink and retry
        }
        if (cand_loss <= loss) {
          loss = cand_loss;
          accepted = true;
          break;
        }
      }
      std::copy(saved_c.begin(), saved_c.end(), novel.vectors.values_mut().begin());
      std::copy(saved_w.begin(), saved_w.end(), out.map.W.values_mut().begin());
      eta *= 0.5;
    }
    if (!accepted) break;
    backward_pass();
  }
  if (!out.converged && out.steps == opt.max_steps) {
    log_warn("backfill_metric: no convergence after " + std::to_string(opt.max_steps) + " steps");
  }
  novel.vectors.set_requires_grad(false);
  out.map.W.set_requires_grad(false);
  novel.renormalize_rows();

  // Base prototypes ride along unchanged; they already live in R^mu.
  out.prototypes = merge_tables(ckpt.prototypes, novel);
  out.map.validate();
  return out;
}

std::vector<std::int64_t> classify(const Checkpoint& ckpt, const PrototypeTable& protos,
                                   const Tensor& query_rows) {
  protos.validate();
  if (protos.num_classes() == 0) throw ContractError("classify: empty prototype table");
  const std::size_t q = query_rows.rows(), mu = ckpt.map.mu, k = protos.num_classes();
  const std::vector<double> units = mapped_units(ckpt, query_rows);
  auto pv = protos.vectors.values();
  std::vector<std::int64_t> out(q);
  for (std::size_t i = 0; i < q; ++i) {
    // argmin chi == argmax cosine; ties to the lowest class id
    double best_cos = -std::numeric_limits<double>::infinity();
    std::int64_t best_id = 0;
    bool first = true;
    for (std::size_t r = 0; r < k; ++r) {
      double cosv = 0.0;
      for (std::size_t c = 0; c < mu; ++c) cosv += units[i * mu + c] * pv[r * mu + c];
      const std::int64_t cid = protos.class_ids[r];
      if (first || cosv > best_cos || (cosv == best_cos && cid < best_id)) {
        best_cos = cosv;
        best_id = cid;
        first = false;
      }
    }
    out[i] = best_id;
  }
  return out;
}

const char* method_name(FewShotMethod m) {
  switch (m) {
    case FewShotMethod::kImplicit: return "implicit";
    case FewShotMethod::kMean: return "mean";
    case FewShotMethod::kBackfill: return "backfill";
  }
  throw ContractError("unknown method");
}

FewShotMethod parse_method(const std::string& name) {
  if (name == "implicit") return FewShotMethod::kImplicit;
  if (name == "mean") return FewShotMethod::kMean;
  if (name == "backfill") return FewShotMethod::kBackfill;
  throw ConfigError("unknown few-shot method '" + name + "' (want implicit, mean, or backfill)");
}

namespace {

std::string scenario_label(const EvalScenario& sc) {
  return std::to_string(sc.ways) + "-way " + std::to_string(sc.shots) + "-shot";
}

EvalReport reduce_accuracies(const std::vector<double>& acc, const EvalScenario& sc,
                             const std::string& method) {
  EvalReport rep;
  rep.scenario = scenario_label(sc);
  rep.episodes = acc.size();
  rep.seed = sc.seed;
  rep.method = method;
  double mean = 0.0;
  for (double a : acc) mean += a;
  mean /= static_cast<double>(acc.size());
  rep.mean_accuracy = mean;
  if (acc.size() < 2) {
    rep.ci95 = std::numeric_limits<double>::quiet_NaN();  // not applicable
    return rep;
  }
  double var = 0.0;
  for (double a : acc) var += (a - mean) * (a - mean);
  var /= static_cast<double>(acc.size() - 1);
  rep.ci95 = 1.96 * std::sqrt(var) / std::sqrt(static_cast<double>(acc.size()));
  return rep;
}

template <typename PerEpisode>
std::vector<double> run_episodes(const EvalScenario& sc, PerEpisode&& body) {
  std::vector<double> acc(sc.episodes, 0.0);
  const std::size_t workers = std::max<std::size_t>(1, sc.workers);
  if (workers == 1) {
    for (std::size_t e = 0; e < sc.episodes; ++e) acc[e] = body(e);
    return acc;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t e = next.fetch_add(1); e < sc.episodes; e = next.fetch_add(1)) {
          acc[e] = body(e);
        }
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  for (const std::exception_ptr& err : errors) {
    if (err) std::rethrow_exception(err);
  }
  return acc;
}

double task_accuracy(const std::vector<std::int64_t>& predictions,
                     const std::vector<std::int64_t>& truth) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += predictions[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

}  // namespace

EvalReport evaluate(const Checkpoint& ckpt, const SplitDataset& ds, const EvalScenario& scenario,
                    FewShotMethod method, const FewShotOptConfig& opt) {
  if (ckpt.model_kind != "shotfree") {
    throw ContractError("evaluate: checkpoint is a '" + ckpt.model_kind +
                        "' model; use its own eval path");
  }
  if (ds.dim() != ckpt.embedding.input_dim()) {
    throw ConfigError("checkpoint expects input_dim " +
                      std::to_string(ckpt.embedding.input_dim()) + " but dataset rows have " +
                      std::to_string(ds.dim()) + " features");
  }
  if (scenario.episodes == 0) throw ConfigError("evaluate: episodes must be >= 1");
  std::vector<double> acc = run_episodes(scenario, [&](std::size_t e) {
    Rng rng = make_rng(scenario.seed, /*stream_id=*/1000 + e);
    Episode ep = sample_episode_support_query(ds, scenario.split, scenario.ways, scenario.shots,
                                              scenario.queries, rng);
    FewShotTask task = make_task(ds, ep);
    PrototypeTable protos;
    switch (method) {
      case FewShotMethod::kImplicit: protos = prototypes_implicit(ckpt, task, opt); break;
      case FewShotMethod::kMean: protos = prototypes_mean(ckpt, task); break;
      case FewShotMethod::kBackfill: {
        BackfillResult bf = backfill_metric(ckpt, {task}, opt);
        Checkpoint shifted = ckpt;
        shifted.map = bf.map;
        PrototypeTable novel_only;
        novel_only.class_ids = task.class_ids;
        std::vector<double> rows(task.class_ids.size() * bf.prototypes.mu());
        for (std::size_t k = 0; k < task.class_ids.size(); ++k) {
          const std::size_t src = bf.prototypes.index_of(task.class_ids[k]);
          auto pv = bf.prototypes.vectors.values();
          std::copy_n(pv.data() + src * bf.prototypes.mu(), bf.prototypes.mu(),
                      rows.data() + k * bf.prototypes.mu());
        }
        novel_only.vectors =
            Tensor(Shape{task.class_ids.size(), bf.prototypes.mu()}, std::move(rows));
        novel_only.normalized = true;
        const std::vector<std::int64_t> preds = classify(shifted, novel_only, task.query);
        return task_accuracy(preds, task.query_labels);
      }
    }
    const std::vector<std::int64_t> preds = classify(ckpt, protos, task.query);
    return task_accuracy(preds, task.query_labels);
  });
  return reduce_accuracies(acc, scenario, method_name(method));
}

Tensor mlp_forward(const EmbeddingParams& params, const Tensor& x) {
  Tensor h = x;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    h = linear(h, params.weights[i], params.biases[i]);
    if (i + 1 < params.weights.size()) h = relu(h);
  }
  return h;
}

namespace {

// Squared Euclidean distances between rows of q and rows of c.
Tensor pairwise_sqdist(const Tensor& q, const Tensor& c) {
  Tensor qc = matmul(q, transpose(c));                    // n × k
  Tensor qsq = sum_rows(mul(q, q));                       // n × 1
  Tensor csq = sum_rows(mul(c, c));                       // k × 1
  return add_rowvec(add_colvec(scale(qc, -2.0), qsq), transpose(csq));
}

}  // namespace

Checkpoint protonet_train(const SplitDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.train_shots == 0) {
    throw ConfigError("protonet_train: train_shots must be >= 1 (the baseline has a fixed shot)");
  }
  if (cfg.per_class <= cfg.train_shots) {
    throw ConfigError("protonet_train: per_class must exceed train_shots");
  }
  const std::size_t queries = cfg.per_class - cfg.train_shots;

  std::vector<std::size_t> layer_sizes;
  layer_sizes.push_back(ds.dim());
  layer_sizes.insert(layer_sizes.end(), cfg.hidden_sizes.begin(), cfg.hidden_sizes.end());
  layer_sizes.push_back(cfg.embed_dim);
  Checkpoint ckpt;
  ckpt.model_kind = "protonet";
  ckpt.config = cfg;
  ckpt.embedding = init_embedding(layer_sizes, cfg.seed, /*dropout_rate=*/cfg.dropout_rate);
  ckpt.embedding.scale_s = Tensor::scalar(1.0);  // unused by the baseline
  ckpt.map = lift_dimension(1, cfg.embed_dim);   // identity; keeps the blob well-formed

  std::vector<Tensor> params;
  for (std::size_t i = 0; i < ckpt.embedding.weights.size(); ++i) {
    params.push_back(ckpt.embedding.weights[i]);
    params.push_back(ckpt.embedding.biases[i]);
  }
  for (Tensor& p : params) p.set_requires_grad(true);
  AdamState state;
  AdamHyper hyper;
  LrScheduleConfig sched{OptimizerRecipe::kAdam, cfg.resolved_lr(), cfg.decay_every, cfg.patience};

  for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
    hyper.lr = lr_schedule(sched, iter);
    Rng rng = make_rng(cfg.seed, /*stream_id=*/40000 + iter);
    for (Tensor& p : params) p.zero_grad();
    double loss_val = 0.0;
    {
      Tape tape;
      std::vector<Tensor> episode_losses;
      for (std::size_t e = 0; e < cfg.episodes_per_iteration; ++e) {
        Episode ep = sample_episode_support_query(ds, Split::kBase, cfg.ways, cfg.train_shots,
                                                  queries, rng);
        std::vector<Tensor> protos;
        std::vector<Tensor> query_parts;
        std::vector<std::size_t> positions;
        for (std::size_t k = 0; k < ep.class_ids.size(); ++k) {
          const auto& idx = ep.sample_indices[k];
          const std::vector<std::size_t> sup(idx.begin(),
                                             idx.begin() + static_cast<std::ptrdiff_t>(
                                                               cfg.train_shots));
          const std::vector<std::size_t> qry(idx.begin() + static_cast<std::ptrdiff_t>(
                                                               cfg.train_shots),
                                             idx.end());
          Tensor zs = mlp_forward(ckpt.embedding, gather_feature_rows(ds, sup));
          std::vector<double> avg(cfg.train_shots, 1.0 / static_cast<double>(cfg.train_shots));
          protos.push_back(matmul(Tensor(Shape{1, cfg.train_shots}, std::move(avg)), zs));
          query_parts.push_back(gather_feature_rows(ds, qry));
          for (std::size_t j = 0; j < qry.size(); ++j) positions.push_back(k);
        }
        Tensor zq = mlp_forward(ckpt.embedding, concat_rows(query_parts));
        Tensor logits = neg(pairwise_sqdist(zq, concat_rows(protos)));
        Tensor lse = log_sum_exp_rows(logits);
        Tensor picked = gather_rows(logits, positions);
        episode_losses.push_back(mean(sub(lse, picked)));
      }
      Tensor total = episode_losses[0];
      for (std::size_t e = 1; e < episode_losses.size(); ++e) {
        total = add(total, episode_losses[e]);
      }
      total = scale(total, 1.0 / static_cast<double>(episode_losses.size()));
      loss_val = total.at(0);
      tape.backward(total);
    }
    if (!std::isfinite(loss_val)) {
      throw NumericError("protonet_train: loss became non-finite at iteration " +
                         std::to_string(iter) + " (lr " + std::to_string(hyper.lr) + ")");
    }
    adam_step(params, state, hyper);
  }
  ckpt.iteration = cfg.max_iterations;
  return ckpt;
}

EvalReport protonet_eval(const Checkpoint& ckpt, const SplitDataset& ds,
                         const EvalScenario& scenario) {
  if (ckpt.model_kind != "protonet") {
    throw ContractError("protonet_eval: checkpoint is a '" + ckpt.model_kind + "' model");
  }
  if (scenario.episodes == 0) throw ConfigError("protonet_eval: episodes must be >= 1");
  const std::size_t d = ckpt.embedding.output_dim();
  std::vector<double> acc = run_episodes(scenario, [&](std::size_t e) {
    Rng rng = make_rng(scenario.seed, /*stream_id=*/1000 + e);
    Episode ep = sample_episode_support_query(ds, scenario.split, scenario.ways, scenario.shots,
                                              scenario.queries, rng);
    FewShotTask task = make_task(ds, ep);
    // mean support embedding per class, raw space
    std::vector<double> protos(task.class_ids.size() * d, 0.0);
    for (std::size_t k = 0; k < task.class_ids.size(); ++k) {
      Tensor zs = mlp_forward(ckpt.embedding, task.support[k]);
      auto zv = zs.values();
      for (std::size_t j = 0; j < zs.rows(); ++j) {
        for (std::size_t c = 0; c < d; ++c) protos[k * d + c] += zv[j * d + c];
      }
      for (std::size_t c = 0; c < d; ++c) protos[k * d + c] /= static_cast<double>(zs.rows());
    }
    Tensor zq = mlp_forward(ckpt.embedding, task.query);
    auto qv = zq.values();
    std::size_t hits = 0;
    for (std::size_t i = 0; i < zq.rows(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::int64_t best_id = 0;
      bool first = true;
      for (std::size_t k = 0; k < task.class_ids.size(); ++k) {
        double sq = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = qv[i * d + c] - protos[k * d + c];
          sq += diff * diff;
        }
        const std::int64_t cid = task.class_ids[k];
        if (first || sq < best || (sq == best && cid < best_id)) {
          best = sq;
          best_id = cid;
          first = false;
        }
      }
      hits += best_id == task.query_labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(zq.rows());
  });
  EvalReport rep = reduce_accuracies(acc, scenario, "protonet");
  return rep;
}

PrototypeTable merge_tables(const PrototypeTable& base, const PrototypeTable& extra) {
  base.validate();
  extra.validate();
  if (base.num_classes() == 0) return extra;
  if (extra.num_classes() == 0) return base;
  if (base.mu() != extra.mu()) throw ContractError("merge_tables: dimension mismatch");
  PrototypeTable out;
  out.class_ids = base.class_ids;
  for (std::int64_t cid : extra.class_ids) {
    if (std::find(base.class_ids.begin(), base.class_ids.end(), cid) != base.class_ids.end()) {
      throw ContractError("merge_tables: class " + std::to_string(cid) + " already present");
    }
    out.class_ids.push_back(cid);
  }
  auto bv = base.vectors.values();
  auto ev = extra.vectors.values();
  std::vector<double> rows;
  rows.reserve((bv.size() + ev.size()));
  rows.insert(rows.end(), bv.begin(), bv.end());
  rows.insert(rows.end(), ev.begin(), ev.end());
  out.vectors = Tensor(Shape{out.class_ids.size(), base.mu()}, std::move(rows));
  out.normalized = base.normalized && extra.normalized;
  out.validate();
  return out;
}

}  // namespace shotfree

#include "shotfree/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "shotfree/errors.hpp"
#include "shotfree/fewshot.hpp"
#include "shotfree/log.hpp"
#include "shotfree/losses.hpp"

namespace shotfree {

void TrainConfig::validate() const {
  std::vector<std::string> problems;
  if (ways < 2) problems.push_back("ways must be >= 2");
  if (per_class < 1) problems.push_back("per_class must be >= 1");
  if (episodes_per_iteration < 1) problems.push_back("episodes_per_iteration must be >= 1");
  if (lambda < 0.0) problems.push_back("lambda must be >= 0");
  if (mu_factor < 1) problems.push_back("mu_factor must be >= 1");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) problems.push_back("dropout_rate must be in [0,1)");
  if (embed_dim < 2) problems.push_back("embed_dim must be >= 2");
  if (validation_interval < 1) problems.push_back("validation_interval must be >= 1");
  if (initial_lr < 0.0) problems.push_back("initial_lr must be >= 0 (0 = recipe default)");
  for (std::size_t h : hidden_sizes) {
    if (h == 0) {
      problems.push_back("hidden layer sizes must be positive");
      break;
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid training config:";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw ConfigError(msg);
  }
}

void TrainingLog::save_csv(const std::string& path,
                           const std::vector<std::string>& comment_lines) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log: " + path);
  for (const std::string& c : comment_lines) out << "# " << c << "\n";
  out << "iteration,loss,cross_entropy,entropy,lr,validation_accuracy\n";
  char buf[40];
  auto put = [&](double v) {
    out << ',';
    if (std::isnan(v)) return;  // empty field = no measurement
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  };
  for (const TrainLogRow& r : rows) {
    out << r.iteration;
    put(r.loss);
    put(r.cross_entropy);
    put(r.entropy);
    put(r.lr);
    put(r.validation_accuracy);
    out << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

namespace {

Tensor clone_tensor(const Tensor& t) {
  auto v = t.values();
  return Tensor(t.shape(), {v.begin(), v.end()});
}

}  // namespace

Checkpoint clone_checkpoint(const Checkpoint& ckpt) {
  Checkpoint out;
  out.embedding.layer_sizes = ckpt.embedding.layer_sizes;
  for (const Tensor& w : ckpt.embedding.weights) out.embedding.weights.push_back(clone_tensor(w));
  for (const Tensor& b : ckpt.embedding.biases) out.embedding.biases.push_back(clone_tensor(b));
  out.embedding.scale_s = clone_tensor(ckpt.embedding.scale_s);
  out.embedding.dropout_rate = ckpt.embedding.dropout_rate;
  out.map.mu = ckpt.map.mu;
  out.map.d = ckpt.map.d;
  out.map.W = clone_tensor(ckpt.map.W);
  out.prototypes.class_ids = ckpt.prototypes.class_ids;
  if (ckpt.prototypes.vectors.defined()) {
    out.prototypes.vectors = clone_tensor(ckpt.prototypes.vectors);
  }
  out.prototypes.normalized = ckpt.prototypes.normalized;
  out.config = ckpt.config;
  out.iteration = ckpt.iteration;
  out.validation_score = ckpt.validation_score;
  out.model_kind = ckpt.model_kind;
  return out;
}

namespace {

double run_validation(const Checkpoint& ckpt, const SplitDataset& ds, const TrainConfig& cfg,
                      std::size_t iteration) {
  const std::size_t val_classes = ds.classes_in_split(Split::kVal).size();
  EvalScenario sc;
  sc.ways = std::min<std::size_t>(5, val_classes);
  sc.shots = cfg.val_shots;
  sc.queries = cfg.val_queries;
  sc.episodes = cfg.val_episodes;
  sc.seed = mix64(cfg.seed) ^ mix64(iteration + 0x5eedULL);
  sc.split = Split::kVal;
  EvalReport rep = evaluate(ckpt, ds, sc, FewShotMethod::kMean);
  return rep.mean_accuracy;
}

}  // namespace

TrainResult meta_train(const SplitDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  ds.validate();
  const std::vector<std::int64_t> base_classes = ds.classes_in_split(Split::kBase);
  if (base_classes.empty()) throw ProtocolError("meta_train: BASE split is empty");
  if (base_classes.size() < cfg.ways) {
    throw ProtocolError("meta_train: BASE split has " + std::to_string(base_classes.size()) +
                        " classes but episodes want " + std::to_string(cfg.ways));
  }

  Checkpoint state;
  state.config = cfg;
  std::vector<std::size_t> layer_sizes;
  layer_sizes.push_back(ds.dim());
  layer_sizes.insert(layer_sizes.end(), cfg.hidden_sizes.begin(), cfg.hidden_sizes.end());
  layer_sizes.push_back(cfg.embed_dim);
  state.embedding = init_embedding(layer_sizes, cfg.seed, cfg.dropout_rate);
  state.map = lift_dimension(cfg.mu_factor, cfg.embed_dim, cfg.seed);
  state.prototypes = init_prototypes(base_classes.size(), state.map.mu, cfg.seed);
  state.prototypes.class_ids = base_classes;

  std::vector<Tensor> dense = state.embedding.trainable();
  dense.push_back(state.map.W);
  for (Tensor& p : dense) p.set_requires_grad(true);
  state.prototypes.vectors.set_requires_grad(true);

  AdamState adam_dense;
  SgdState sgd_dense;
  std::vector<std::vector<double>> proto_m, proto_v;  // row-wise optimizer state
  std::vector<std::uint64_t> proto_t;
  std::vector<std::vector<double>> proto_velocity;

  LrScheduleConfig sched;
  sched.recipe = cfg.optimizer;
  sched.initial_lr = cfg.resolved_lr();
  sched.decay_every = cfg.decay_every;
  sched.patience = cfg.patience;
  std::vector<std::pair<std::size_t, double>> val_history;

  TrainResult result;
  result.best.validation_score = -1.0;
  Tensor s_t = state.embedding.scale_s;

  for (std::size_t iter = 0; iter < cfg.max_iterations; ++iter) {
    const double lr = lr_schedule(sched, iter, val_history);
    Rng rng = make_rng(cfg.seed, /*stream_id=*/20000 + iter);

    for (Tensor& p : dense) p.zero_grad();
    state.prototypes.vectors.zero_grad();

    double loss_sum = 0.0, ce_sum = 0.0, ent_sum = 0.0;
    std::vector<std::size_t> touched_rows;
    {
      Tape tape;
      std::vector<Tensor> episode_losses;
      for (std::size_t e = 0; e < cfg.episodes_per_iteration; ++e) {
        Episode ep = sample_episode_unsplit(ds, Split::kBase, cfg.ways, cfg.per_class, rng);
        std::vector<std::size_t> rows;
        std::vector<std::size_t> positions;
        std::vector<std::size_t> class_rows;
        for (std::size_t k = 0; k < ep.class_ids.size(); ++k) {
          class_rows.push_back(state.prototypes.index_of(ep.class_ids[k]));
          for (std::size_t idx : ep.sample_indices[k]) {
            rows.push_back(idx);
            positions.push_back(k);
          }
        }
        touched_rows.insert(touched_rows.end(), class_rows.begin(), class_rows.end());
        Tensor x = gather_feature_rows(ds, rows);
        Tensor z = embed(state.embedding, x, EmbedMode::kTrain, rng);
        Tensor episode_protos = select_rows(state.prototypes.vectors, class_rows);
        EpisodeLossReport rep;
        episode_losses.push_back(
            episode_loss_graph(z, positions, episode_protos, state.map, s_t, cfg.lambda, &rep));
        ce_sum += rep.cross_entropy;
        ent_sum += rep.entropy_term;
        loss_sum += rep.total;
      }
      Tensor total = episode_losses[0];
      for (std::size_t e = 1; e < episode_losses.size(); ++e) total = add(total, episode_losses[e]);
      total = scale(total, 1.0 / static_cast<double>(cfg.episodes_per_iteration));
      tape.backward(total);
    }
    const double denom = static_cast<double>(cfg.episodes_per_iteration);
    const double loss_avg = loss_sum / denom;
    if (!std::isfinite(loss_avg)) {
      throw NumericError("meta_train: loss became non-finite at iteration " +
                         std::to_string(iter) + " (lr " + std::to_string(lr) +
                         "); lower the learning rate or raise lambda");
    }

    // dedupe touched prototype rows for the sparse step
    std::sort(touched_rows.begin(), touched_rows.end());
    touched_rows.erase(std::unique(touched_rows.begin(), touched_rows.end()),
                       touched_rows.end());

    if (cfg.optimizer == OptimizerRecipe::kAdam) {
      AdamHyper hyper;
      hyper.lr = lr;
      adam_step(dense, adam_dense, hyper);
      adam_step_rows(state.prototypes.vectors, touched_rows, proto_m, proto_v, proto_t, hyper);
    } else {
      SgdHyper hyper;
      hyper.lr = lr;
      sgd_nesterov_step(dense, sgd_dense, hyper);
      sgd_step_rows(state.prototypes.vectors, touched_rows, proto_velocity, hyper);
    }
    // keep s positive: the metric contract requires it
    {
      auto sv = state.embedding.scale_s.values_mut();
      if (sv[0] < 1e-3) sv[0] = 1e-3;
    }
    state.prototypes.renormalize_rows(touched_rows);

    TrainLogRow row;
    row.iteration = iter;
    row.loss = loss_avg;
    row.cross_entropy = ce_sum / denom;
    row.entropy = ent_sum / denom;
    row.lr = lr;
    row.validation_accuracy = std::numeric_limits<double>::quiet_NaN();

    const bool last = iter + 1 == cfg.max_iterations;
    if ((iter + 1) % cfg.validation_interval == 0 || last) {
      state.iteration = iter + 1;
      const double acc = run_validation(state, ds, cfg, iter);
      row.validation_accuracy = acc;
      val_history.emplace_back(iter, acc);
      if (acc > result.best.validation_score) {
        result.best = clone_checkpoint(state);
        result.best.validation_score = acc;
      }
      log_debug("iteration " + std::to_string(iter) + ": loss " + std::to_string(loss_avg) +
                ", validation " + std::to_string(acc));
    }
    result.log.rows.push_back(row);
  }

  state.iteration = cfg.max_iterations;
  state.prototypes.vectors.set_requires_grad(false);
  for (Tensor& p : dense) p.set_requires_grad(false);
  result.final_state = clone_checkpoint(state);
  if (result.best.validation_score < 0.0) result.best = result.final_state;
  return result;
}

}  // namespace shotfree

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "shotfree/fewshot.hpp"
#include "shotfree/losses.hpp"
#include "shotfree/serialize.hpp"
#include "shotfree/training.hpp"

using namespace shotfree;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Checkpoint whose embedding is plain row normalization and whose metric map
// is the identity: everything about the few-shot phase becomes analytic.
Checkpoint identity_checkpoint(std::size_t d) {
  Checkpoint c;
  c.embedding.layer_sizes = {d, d};
  std::vector<double> eye(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) eye[i * d + i] = 1.0;
  c.embedding.weights = {Tensor(Shape{d, d}, eye)};
  c.embedding.biases = {Tensor::zeros(Shape{d})};
  c.embedding.scale_s = Tensor::scalar(10.0);
  c.embedding.dropout_rate = 0.0;
  c.map = MetricMap{Tensor(Shape{d, d}, eye), d, d};
  c.config.embed_dim = d;
  c.config.hidden_sizes = {};
  c.iteration = 1;
  return c;
}

Tensor rows(std::initializer_list<std::initializer_list<double>> data) {
  return Tensor::matrix(data);
}

std::vector<double> unit(std::vector<double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
  return v;
}

double support_objective(const Checkpoint& ckpt, const FewShotTask& task,
                         const PrototypeTable& protos) {
  // cross-entropy of the support samples under the candidate prototypes
  std::vector<Tensor> blocks;
  std::vector<std::int64_t> labels;
  for (std::size_t k = 0; k < task.class_ids.size(); ++k) {
    blocks.push_back(task.support[k]);
    for (std::size_t j = 0; j < task.support[k].rows(); ++j) labels.push_back(task.class_ids[k]);
  }
  Tensor x = concat_rows(blocks);
  Rng rng = make_rng(0);
  Tensor z = embed(ckpt.embedding, x, EmbedMode::kEval, rng);
  return episode_loss(z, labels, protos, ckpt.map, ckpt.embedding.scale_s.item(), 0.0)
      .cross_entropy;
}

}  // namespace

TEST_CASE("a single support point pins the prototype to its mapped embedding") {
  Checkpoint ckpt = identity_checkpoint(3);
  FewShotTask task;
  task.class_ids = {4};
  task.support = {rows({{3.0, 0.0, 4.0}})};
  task.query = rows({{3.0, 0.0, 4.0}});
  task.query_labels = {4};

  PrototypeTable mean = prototypes_mean(ckpt, task);
  REQUIRE(mean.num_classes() == 1);
  const std::vector<double> expect = unit({3.0, 0.0, 4.0});
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(mean.vectors.at(0, c) == doctest::Approx(expect[c]).epsilon(1e-12));
  }

  // the single-way objective is flat; the solver returns the mean init
  PrototypeTable implicit = prototypes_implicit(ckpt, task);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(implicit.vectors.at(0, c) == mean.vectors.at(0, c));
  }
}

TEST_CASE("antipodal classes produce antipodal implicit prototypes") {
  Checkpoint ckpt = identity_checkpoint(2);
  ckpt.embedding.scale_s = Tensor::scalar(1.5);  // unsaturated: the solver has to work
  FewShotTask task;
  task.class_ids = {0, 1};
  task.support = {rows({{1.0, 0.0}, {0.9, 0.1}, {0.9, -0.1}}),
                  rows({{-1.0, 0.0}, {-0.9, -0.1}, {-0.9, 0.1}})};
  task.query = rows({{1.0, 0.05}});
  task.query_labels = {0};

  PrototypeTable implicit = prototypes_implicit(ckpt, task);
  double sum_norm = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    const double s = implicit.vectors.at(0, c) + implicit.vectors.at(1, c);
    sum_norm += s * s;
  }
  CHECK(std::sqrt(sum_norm) < 1e-6);
}

TEST_CASE("the implicit solve never loses to its mean initialization") {
  Rng rng = make_rng(314);
  Checkpoint ckpt = identity_checkpoint(4);
  ckpt.embedding.scale_s = Tensor::scalar(2.0);
  for (int trial = 0; trial < 25; ++trial) {
    FewShotTask task;
    task.class_ids = {0, 1, 2};
    for (std::int64_t k = 0; k < 3; ++k) {
      std::vector<double> center(4);
      for (double& x : center) x = gaussian(rng);
      std::vector<double> sup;
      const std::size_t shots = 1 + static_cast<std::size_t>(uniform(rng, 0, 4));
      for (std::size_t j = 0; j < shots; ++j) {
        for (double c : center) sup.push_back(c + gaussian(rng, 0.0, 0.3));
      }
      task.support.push_back(Tensor(Shape{shots, 4}, std::move(sup)));
    }
    task.query = rows({{1.0, 0.0, 0.0, 0.0}});
    task.query_labels = {0};

    PrototypeTable mean = prototypes_mean(ckpt, task);
    PrototypeTable implicit = prototypes_implicit(ckpt, task);
    const double before = support_objective(ckpt, task, mean);
    const double after = support_objective(ckpt, task, implicit);
    CHECK(after <= before + 1e-12);
  }
}

TEST_CASE("gradient descent matches a dense angular grid on 2d tasks") {
  // mu = d = 2: prototypes live on the circle, so a zoomed joint grid search
  // is an independent oracle for the two-class solve. A moderate scale keeps
  // the objective away from its exp(-2s^2) saturation plateau, where every
  // table would tie at CE = 0 and the comparison would be vacuous.
  Checkpoint ckpt = identity_checkpoint(2);
  ckpt.embedding.scale_s = Tensor::scalar(1.5);
  Rng rng = make_rng(2718);
  for (int trial = 0; trial < 3; ++trial) {
    const double a0 = uniform(rng, 0, 2 * kPi);
    const double a1 = a0 + kPi * uniform(rng, 0.45, 0.75);
    FewShotTask task;
    task.class_ids = {0, 1};
    for (double base : {a0, a1}) {
      std::vector<double> sup;
      for (int j = 0; j < 4; ++j) {
        const double ang = base + gaussian(rng, 0.0, 0.15);
        sup.push_back(std::cos(ang));
        sup.push_back(std::sin(ang));
      }
      task.support.push_back(Tensor(Shape{4, 2}, std::move(sup)));
    }
    task.query = rows({{std::cos(a0), std::sin(a0)}});
    task.query_labels = {0};

    FewShotOptConfig opt;
    opt.max_steps = 2000;
    opt.grad_tol = 1e-10;
    PrototypeTable implicit = prototypes_implicit(ckpt, task, opt);
    const double obj_gd = support_objective(ckpt, task, implicit);

    auto table_at = [&](double t0, double t1) {
      PrototypeTable t;
      t.class_ids = {0, 1};
      t.vectors = Tensor(Shape{2, 2}, {std::cos(t0), std::sin(t0), std::cos(t1), std::sin(t1)});
      t.normalized = true;
      return t;
    };

    // coarse joint grid over the whole circle (so the oracle does not assume
    // the solver landed in the right basin), then two zooms to 2e-4 resolution
    double best0 = 0, best1 = 0, best_obj = 1e300;
    double span = kPi, step = 0.02;
    for (int zoom = 0; zoom < 3; ++zoom) {
      const double lo0 = zoom == 0 ? 0.0 : best0 - span;
      const double hi0 = zoom == 0 ? 2 * kPi : best0 + span;
      const double lo1 = zoom == 0 ? 0.0 : best1 - span;
      const double hi1 = zoom == 0 ? 2 * kPi : best1 + span;
      best_obj = 1e300;
      for (double t0 = lo0; t0 < hi0; t0 += step) {
        for (double t1 = lo1; t1 < hi1; t1 += step) {
          const double obj = support_objective(ckpt, task, table_at(t0, t1));
          if (obj < best_obj) {
            best_obj = obj;
            best0 = t0;
            best1 = t1;
          }
        }
      }
      span = 3 * step;
      step = zoom == 0 ? 2e-3 : 2e-4;
    }

    // Two-sided agreement on the objective value. Positions are not
    // comparable: the cross-entropy only sees logit differences, which
    // leaves a machine-flat valley direction both searchers drift along.
    CHECK(obj_gd <= best_obj + 1e-4);
    CHECK(best_obj <= obj_gd + 1e-4);
  }
}

TEST_CASE("mean prototypes with symmetric supports land on the symmetry axis") {
  Checkpoint ckpt = identity_checkpoint(2);
  const double cv = std::cos(0.7);
  const double sv = std::sin(0.7);
  FewShotTask task;
  task.class_ids = {0};
  // mirror pair: the y parts cancel exactly, so the prototype sits on the axis
  task.support = {Tensor(Shape{2, 2}, {cv, sv, cv, -sv})};
  task.query = rows({{1.0, 0.0}});
  task.query_labels = {0};
  PrototypeTable mean = prototypes_mean(ckpt, task);
  CHECK(mean.vectors.at(0, 0) == doctest::Approx(1.0));
  CHECK(mean.vectors.at(0, 1) == 0.0);
}

TEST_CASE("antipodal supports make the mean degenerate, loudly") {
  Checkpoint ckpt = identity_checkpoint(2);
  FewShotTask task;
  task.class_ids = {0};
  task.support = {rows({{1.0, 0.0}, {-1.0, 0.0}})};
  task.query = rows({{1.0, 0.0}});
  task.query_labels = {0};
  CHECK_THROWS_AS(prototypes_mean(ckpt, task), DegenerateInputError);
}

TEST_CASE("zero backfill steps reproduce the mean path under the original metric") {
  Checkpoint ckpt = identity_checkpoint(3);
  ckpt.embedding.scale_s = Tensor::scalar(1.0);  // keep the objective off its flat plateau
  ckpt.prototypes.class_ids = {100};
  ckpt.prototypes.vectors = Tensor(Shape{1, 3}, unit({1, 1, 1}));
  ckpt.prototypes.normalized = true;

  FewShotTask task;
  task.class_ids = {0, 1};
  task.support = {rows({{1.0, 0.2, 0.0}, {1.0, -0.2, 0.0}}), rows({{0.0, 1.0, 0.3}})};
  task.query = rows({{1.0, 0.0, 0.0}});
  task.query_labels = {0};

  FewShotOptConfig opt;
  opt.max_steps = 0;
  BackfillResult result = backfill_metric(ckpt, {task}, opt);
  for (std::size_t i = 0; i < ckpt.map.W.size(); ++i) {
    CHECK(result.map.W.values()[i] == ckpt.map.W.values()[i]);
  }
  // base rows carried over, novel rows at the mean init
  REQUIRE(result.prototypes.num_classes() == 3);
  PrototypeTable mean = prototypes_mean(ckpt, task);
  const std::size_t base_row = result.prototypes.index_of(100);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(result.prototypes.vectors.at(base_row, c) == ckpt.prototypes.vectors.at(0, c));
  }
  for (std::int64_t cid : {0, 1}) {
    const std::size_t rr = result.prototypes.index_of(cid);
    const std::size_t mr = mean.index_of(cid);
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(result.prototypes.vectors.at(rr, c) ==
            doctest::Approx(mean.vectors.at(mr, c)).epsilon(1e-12));
    }
  }

  // with steps the metric does move: the gradient has data behind it
  opt.max_steps = 50;
  BackfillResult moved = backfill_metric(ckpt, {task}, opt);
  bool any_diff = false;
  for (std::size_t i = 0; i < ckpt.map.W.size(); ++i) {
    any_diff |= moved.map.W.values()[i] != ckpt.map.W.values()[i];
  }
  CHECK(any_diff);
  CHECK(moved.steps > 0);

  CHECK_THROWS_AS(backfill_metric(ckpt, {}, opt), ContractError);
}

TEST_CASE("classification breaks exact ties toward the lowest class id") {
  Checkpoint ckpt = identity_checkpoint(2);
  PrototypeTable protos;
  protos.class_ids = {7, 3};
  protos.vectors = Tensor(Shape{2, 2}, {1, 0, 0, 1});
  protos.normalized = true;
  Tensor query = rows({{1.0, 1.0}});  // equidistant from both prototypes
  std::vector<std::int64_t> pred = classify(ckpt, protos, query);
  REQUIRE(pred.size() == 1);
  CHECK(pred[0] == 3);
}

TEST_CASE("classify agrees with the posterior argmax everywhere") {
  Checkpoint ckpt;
  ckpt.embedding = init_embedding({6, 16, 4}, 2025, 0.0);
  ckpt.map = lift_dimension(2, 4, 2025);
  ckpt.config.embed_dim = 4;
  PrototypeTable protos = init_prototypes(5, 8, 77);
  Rng rng = make_rng(9);
  std::vector<double> qv(40 * 6);
  for (double& x : qv) x = gaussian(rng);
  Tensor queries(Shape{40, 6}, qv);

  std::vector<std::int64_t> pred = classify(ckpt, protos, queries);
  Rng er = make_rng(0);
  Tensor z = embed(ckpt.embedding, queries, EmbedMode::kEval, er);
  for (std::size_t i = 0; i < 40; ++i) {
    std::vector<double> zi(4);
    for (std::size_t c = 0; c < 4; ++c) zi[c] = z.at(i, c);
    std::vector<double> p =
        posterior(Tensor(Shape{4}, zi), protos, ckpt.map, ckpt.embedding.scale_s.item());
    const std::size_t am = std::max_element(p.begin(), p.end()) - p.begin();
    CHECK(pred[i] == protos.class_ids[am]);
  }
}

TEST_CASE("predictions are invariant to the scale parameter") {
  Checkpoint a;
  a.embedding = init_embedding({5, 12, 3}, 404, 0.0);
  a.map = lift_dimension(2, 3, 404);
  a.config.embed_dim = 3;
  Checkpoint b = clone_checkpoint(a);
  b.embedding.scale_s.values_mut()[0] = 0.37;

  PrototypeTable protos = init_prototypes(4, 6, 5);
  Rng rng = make_rng(3);
  std::vector<double> qv(25 * 5);
  for (double& x : qv) x = gaussian(rng);
  Tensor queries(Shape{25, 5}, qv);
  CHECK(classify(a, protos, queries) == classify(b, protos, queries));
}

TEST_CASE("variable shots per class run end to end") {
  Checkpoint ckpt = identity_checkpoint(3);
  FewShotTask task;
  task.class_ids = {0, 1};
  task.support = {rows({{1.0, 0.1, 0.0}}),  // 1 shot
                  rows({{0.0, 1.0, 0.1},    // 7 shots
                        {0.1, 1.0, 0.0},
                        {0.0, 0.9, 0.1},
                        {-0.1, 1.0, 0.0},
                        {0.0, 1.1, 0.0},
                        {0.0, 1.0, -0.1},
                        {0.1, 0.9, 0.0}})};
  task.query = rows({{0.9, 0.0, 0.0}, {0.0, 0.95, 0.0}});
  task.query_labels = {0, 1};
  task.validate();

  for (PrototypeTable protos : {prototypes_mean(ckpt, task), prototypes_implicit(ckpt, task)}) {
    std::vector<std::int64_t> pred = classify(ckpt, protos, task.query);
    CHECK(pred == task.query_labels);
  }
}

TEST_CASE("make_task splits an episode into supports and labeled queries") {
  SplitDataset ds = gen_synthetic(25, 6, 20, 0.1, 31);
  Rng rng = make_rng(8);
  Episode ep = sample_episode_support_query(ds, Split::kNovel, 4, 3, 5, rng);
  FewShotTask task = make_task(ds, ep);
  task.validate();
  REQUIRE(task.class_ids.size() == 4);
  for (const Tensor& s : task.support) CHECK(s.rows() == 3);
  CHECK(task.query.rows() == 4 * 5);
  CHECK(task.query_labels.size() == 20);
  for (std::int64_t l : task.query_labels) {
    CHECK(std::find(task.class_ids.begin(), task.class_ids.end(), l) != task.class_ids.end());
  }
}

TEST_CASE("evaluation on separable data is accurate with tight intervals") {
  SplitDataset ds = gen_synthetic(30, 8, 40, 0.05, 51);
  Checkpoint ckpt = identity_checkpoint(8);

  EvalScenario sc;
  sc.ways = 5;
  sc.shots = 1;
  sc.queries = 15;
  sc.episodes = 400;
  sc.seed = 4;
  EvalReport one = evaluate(ckpt, ds, sc, FewShotMethod::kMean);
  CHECK(one.mean_accuracy > 0.9);
  CHECK(one.ci95 < 0.01);
  CHECK(one.episodes == 400);
  CHECK(one.scenario == "5-way 1-shot");

  // more shots can only help on this geometry
  sc.shots = 5;
  EvalReport five = evaluate(ckpt, ds, sc, FewShotMethod::kMean);
  CHECK(five.mean_accuracy >= one.mean_accuracy);

  // the same checkpoint serves every scenario: no retraining in between
  sc.shots = 3;
  sc.ways = 3;
  EvalReport three = evaluate(ckpt, ds, sc, FewShotMethod::kMean);
  CHECK(three.mean_accuracy > 0.9);
}

TEST_CASE("single-episode reports have no confidence interval") {
  SplitDataset ds = gen_synthetic(25, 6, 20, 0.1, 31);
  Checkpoint ckpt = identity_checkpoint(6);
  EvalScenario sc;
  sc.ways = 3;
  sc.shots = 1;
  sc.queries = 5;
  sc.episodes = 1;
  EvalReport rep = evaluate(ckpt, ds, sc, FewShotMethod::kMean);
  CHECK(std::isnan(rep.ci95));
  CHECK(rep.episodes == 1);
}

TEST_CASE("evaluation does not depend on the worker count") {
  SplitDataset ds = gen_synthetic(30, 8, 40, 0.1, 51);
  Checkpoint ckpt = identity_checkpoint(8);
  EvalScenario sc;
  sc.ways = 5;
  sc.shots = 2;
  sc.queries = 10;
  sc.episodes = 64;
  sc.seed = 12;
  sc.workers = 1;
  EvalReport serial = evaluate(ckpt, ds, sc, FewShotMethod::kMean);
  sc.workers = 4;
  EvalReport parallel = evaluate(ckpt, ds, sc, FewShotMethod::kMean);
  CHECK(serial.mean_accuracy == parallel.mean_accuracy);
  CHECK(serial.ci95 == parallel.ci95);
}

TEST_CASE("mean and implicit paths agree on homoscedastic tasks") {
  SplitDataset ds = gen_synthetic(30, 8, 40, 0.08, 61);
  Checkpoint ckpt = identity_checkpoint(8);
  EvalScenario sc;
  sc.ways = 5;
  sc.shots = 3;
  sc.queries = 10;
  sc.episodes = 2000;
  sc.seed = 21;
  EvalReport mean = evaluate(ckpt, ds, sc, FewShotMethod::kMean);
  EvalReport implicit = evaluate(ckpt, ds, sc, FewShotMethod::kImplicit);
  CHECK(std::abs(mean.mean_accuracy - implicit.mean_accuracy) <= 0.02);
}

TEST_CASE("the reported interval matches a bootstrap estimate") {
  SplitDataset ds = gen_synthetic(30, 8, 40, 0.35, 71);
  Checkpoint ckpt = identity_checkpoint(8);
  EvalScenario sc;
  sc.ways = 5;
  sc.shots = 1;
  sc.queries = 10;
  sc.episodes = 800;
  sc.seed = 33;
  EvalReport rep = evaluate(ckpt, ds, sc, FewShotMethod::kMean);
  REQUIRE(rep.ci95 > 0.0);

  // independent sample of per-episode accuracies from fresh single-episode
  // runs, bootstrapped into a ci of the same population
  std::vector<double> accs;
  for (std::size_t e = 0; e < 800; ++e) {
    EvalScenario one = sc;
    one.episodes = 1;
    one.seed = 10000 + e;
    accs.push_back(evaluate(ckpt, ds, one, FewShotMethod::kMean).mean_accuracy);
  }
  Rng rng = make_rng(55);
  std::vector<double> boot_means;
  for (int b = 0; b < 400; ++b) {
    double m = 0.0;
    for (std::size_t i = 0; i < accs.size(); ++i) {
      m += accs[static_cast<std::size_t>(uniform(rng, 0, static_cast<double>(accs.size()))) %
                accs.size()];
    }
    boot_means.push_back(m / static_cast<double>(accs.size()));
  }
  double bm = 0.0;
  for (double m : boot_means) bm += m;
  bm /= static_cast<double>(boot_means.size());
  double bv = 0.0;
  for (double m : boot_means) bv += (m - bm) * (m - bm);
  bv /= static_cast<double>(boot_means.size() - 1);
  const double boot_ci = 1.96 * std::sqrt(bv);
  CHECK(rep.ci95 == doctest::Approx(boot_ci).epsilon(0.20));
}

TEST_CASE("merging prototype tables extends the class set") {
  PrototypeTable base = init_prototypes(3, 6, 1);
  base.class_ids = {10, 11, 12};
  PrototypeTable extra = init_prototypes(2, 6, 2);
  extra.class_ids = {20, 21};
  PrototypeTable merged = merge_tables(base, extra);
  CHECK(merged.num_classes() == 5);
  CHECK(merged.index_of(12) == 2);
  CHECK(merged.index_of(21) == 4);
  for (std::size_t c = 0; c < 6; ++c) {
    CHECK(merged.vectors.at(3, c) == extra.vectors.at(0, c));
  }

  PrototypeTable dup = init_prototypes(1, 6, 3);
  dup.class_ids = {11};
  CHECK_THROWS_AS(merge_tables(base, dup), ContractError);

  PrototypeTable narrow = init_prototypes(1, 4, 3);
  narrow.class_ids = {30};
  CHECK_THROWS_AS(merge_tables(base, narrow), ContractError);
}

TEST_CASE("the baseline trains, evaluates, and stays in its lane") {
  SplitDataset ds = gen_synthetic(30, 8, 12, 0.05, 41);
  TrainConfig cfg;
  cfg.ways = 5;
  cfg.per_class = 12;
  cfg.train_shots = 1;
  cfg.episodes_per_iteration = 4;
  cfg.max_iterations = 80;
  cfg.validation_interval = 40;
  cfg.val_queries = 8;
  cfg.hidden_sizes = {32};
  cfg.embed_dim = 4;
  cfg.seed = 41;
  Checkpoint base = protonet_train(ds, cfg);
  CHECK(base.model_kind == "protonet");

  EvalScenario sc;
  sc.ways = 5;
  sc.shots = 1;
  sc.queries = 7;
  sc.episodes = 200;
  sc.seed = 3;
  EvalReport rep = protonet_eval(base, ds, sc);
  CHECK(rep.mean_accuracy > 0.5);  // separable toy: easily above 0.2 chance

  // the shot-free evaluator refuses a baseline checkpoint and vice versa
  CHECK_THROWS_AS(evaluate(base, ds, sc, FewShotMethod::kMean), ContractError);

  // training without a declared shot is a config error for the baseline
  TrainConfig bad = cfg;
  bad.train_shots = 0;
  CHECK_THROWS_AS(protonet_train(ds, bad), ConfigError);
}

TEST_CASE("untrained models sit at chance on structureless data") {
  // spread far above the inter-class distance: nothing to learn, nothing
  // learned, every method lands at 1/ways
  SplitDataset ds = gen_synthetic(20, 8, 24, 50.0, 43);
  TrainConfig cfg;
  cfg.ways = 4;
  cfg.per_class = 12;
  cfg.episodes_per_iteration = 1;
  cfg.max_iterations = 0;
  cfg.val_queries = 8;
  cfg.hidden_sizes = {16};
  cfg.embed_dim = 4;
  cfg.seed = 43;
  TrainResult untrained = meta_train(ds, cfg);

  EvalScenario sc;
  sc.ways = 4;
  sc.shots = 1;
  sc.queries = 10;
  sc.episodes = 500;
  sc.seed = 9;
  EvalReport ours = evaluate(untrained.final_state, ds, sc, FewShotMethod::kMean);
  CHECK(std::abs(ours.mean_accuracy - 0.25) < 0.05);

  TrainConfig pcfg = cfg;
  pcfg.train_shots = 1;
  pcfg.max_iterations = 0;
  Checkpoint pn = protonet_train(ds, pcfg);
  EvalReport theirs = protonet_eval(pn, ds, sc);
  CHECK(std::abs(theirs.mean_accuracy - 0.25) < 0.05);
}

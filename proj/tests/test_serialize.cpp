#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "shotfree/class_model.hpp"
#include "shotfree/embedding.hpp"
#include "shotfree/serialize.hpp"

using namespace shotfree;

namespace {

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.embedding = init_embedding({6, 12, 4}, 31, 0.1);
  c.map = lift_dimension(2, 4, 31);
  c.prototypes = init_prototypes(5, 8, 31);
  c.config.seed = 31;
  c.config.embed_dim = 4;
  c.config.hidden_sizes = {12};
  c.iteration = 42;
  c.validation_score = 0.875;
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoint save, load, save is byte identical") {
  Checkpoint c = sample_checkpoint();
  const std::string p1 = "/tmp/shotfree_ser1.json";
  const std::string p2 = "/tmp/shotfree_ser2.json";
  save_checkpoint(c, p1);
  Checkpoint back = load_checkpoint(p1);
  save_checkpoint(back, p2);
  CHECK(slurp(p1) == slurp(p2));

  CHECK(back.iteration == c.iteration);
  CHECK(back.validation_score == c.validation_score);
  CHECK(back.model_kind == c.model_kind);
  CHECK(back.prototypes.class_ids == c.prototypes.class_ids);
  REQUIRE(back.embedding.weights.size() == c.embedding.weights.size());
  for (std::size_t l = 0; l < c.embedding.weights.size(); ++l) {
    for (std::size_t i = 0; i < c.embedding.weights[l].size(); ++i) {
      CHECK(back.embedding.weights[l].values()[i] == c.embedding.weights[l].values()[i]);
    }
  }
  for (std::size_t i = 0; i < c.map.W.size(); ++i) {
    CHECK(back.map.W.values()[i] == c.map.W.values()[i]);
  }
  CHECK(back.embedding.scale_s.item() == c.embedding.scale_s.item());
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("checkpoint ids are stable across a round trip") {
  Checkpoint c = sample_checkpoint();
  const std::string id = checkpoint_id(c);
  CHECK(id.size() == 16);  // fnv-1a hex digest
  CHECK(checkpoint_id(c) == id);

  const std::string p = "/tmp/shotfree_ser_id.json";
  save_checkpoint(c, p);
  Checkpoint back = load_checkpoint(p);
  CHECK(checkpoint_id(back) == id);

  // any parameter change moves the id
  back.embedding.scale_s.values_mut()[0] += 1e-9;
  CHECK(checkpoint_id(back) != id);
  std::remove(p.c_str());
}

TEST_CASE("a manifest reference rides along without affecting the model") {
  Checkpoint c = sample_checkpoint();
  const std::string p = "/tmp/shotfree_ser_manifest.json";
  const std::string canonical = "/tmp/shotfree_ser_canonical.json";
  save_checkpoint(c, p, "meta-train_manifest.json");
  CHECK(slurp(p).find("meta-train_manifest.json") != std::string::npos);

  Checkpoint back = load_checkpoint(p);
  CHECK(checkpoint_id(back) == checkpoint_id(c));

  // resaving without the reference produces the canonical bytes
  save_checkpoint(back, canonical);
  const std::string direct = "/tmp/shotfree_ser_direct.json";
  save_checkpoint(c, direct);
  CHECK(slurp(canonical) == slurp(direct));
  std::remove(p.c_str());
  std::remove(canonical.c_str());
  std::remove(direct.c_str());
}

TEST_CASE("train config json round trips every field") {
  TrainConfig cfg;
  cfg.optimizer = OptimizerRecipe::kSgd;
  cfg.ways = 7;
  cfg.per_class = 9;
  cfg.episodes_per_iteration = 3;
  cfg.max_iterations = 123;
  cfg.lambda = 0.5;
  cfg.mu_factor = 5;
  cfg.dropout_rate = 0.25;
  cfg.seed = 99;
  cfg.validation_interval = 17;
  cfg.patience = 250;
  cfg.decay_every = 400;
  cfg.initial_lr = 0.05;
  cfg.hidden_sizes = {32, 16, 8};
  cfg.embed_dim = 6;
  cfg.val_episodes = 55;
  cfg.val_shots = 2;
  cfg.val_queries = 11;
  cfg.train_shots = 4;

  TrainConfig back = config_from_json(config_to_json(cfg));
  CHECK(back.optimizer == cfg.optimizer);
  CHECK(back.ways == cfg.ways);
  CHECK(back.per_class == cfg.per_class);
  CHECK(back.episodes_per_iteration == cfg.episodes_per_iteration);
  CHECK(back.max_iterations == cfg.max_iterations);
  CHECK(back.lambda == cfg.lambda);
  CHECK(back.mu_factor == cfg.mu_factor);
  CHECK(back.dropout_rate == cfg.dropout_rate);
  CHECK(back.seed == cfg.seed);
  CHECK(back.validation_interval == cfg.validation_interval);
  CHECK(back.patience == cfg.patience);
  CHECK(back.decay_every == cfg.decay_every);
  CHECK(back.initial_lr == cfg.initial_lr);
  CHECK(back.hidden_sizes == cfg.hidden_sizes);
  CHECK(back.embed_dim == cfg.embed_dim);
  CHECK(back.val_episodes == cfg.val_episodes);
  CHECK(back.val_shots == cfg.val_shots);
  CHECK(back.val_queries == cfg.val_queries);
  CHECK(back.train_shots == cfg.train_shots);
}

TEST_CASE("broken checkpoint files are rejected with context") {
  const std::string p = "/tmp/shotfree_ser_bad.json";
  std::ofstream(p) << "{ not json";
  CHECK_THROWS_AS(load_checkpoint(p), ProtocolError);
  std::ofstream(p) << "{\"note\": \"json but not a checkpoint\"}";
  CHECK_THROWS_AS(load_checkpoint(p), ProtocolError);
  CHECK_THROWS_AS(load_checkpoint("/tmp/shotfree_does_not_exist.json"), IoError);
  std::remove(p.c_str());
}

TEST_CASE("file_hash separates contents and ignores names") {
  const std::string p1 = "/tmp/shotfree_hash1.bin";
  const std::string p2 = "/tmp/shotfree_hash2.bin";
  std::ofstream(p1) << "identical payload";
  std::ofstream(p2) << "identical payload";
  CHECK(file_hash(p1) == file_hash(p2));
  std::ofstream(p2) << "different payload";
  CHECK(file_hash(p1) != file_hash(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

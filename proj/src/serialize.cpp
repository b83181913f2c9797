#include "shotfree/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "shotfree/errors.hpp"

namespace shotfree {

using json = nlohmann::ordered_json;

namespace {

json tensor_to_json(const Tensor& t) {
  json j;
  j["shape"] = t.shape();
  auto v = t.values();
  j["values"] = std::vector<double>(v.begin(), v.end());
  return j;
}

Tensor tensor_from_json(const json& j) {
  Shape shape = j.at("shape").get<Shape>();
  std::vector<double> values = j.at("values").get<std::vector<double>>();
  return Tensor(std::move(shape), std::move(values));
}

json config_to_json_obj(const TrainConfig& c) {
  json j;
  j["optimizer"] = recipe_name(c.optimizer);
  j["ways"] = c.ways;
  j["per_class"] = c.per_class;
  j["episodes_per_iteration"] = c.episodes_per_iteration;
  j["max_iterations"] = c.max_iterations;
  j["lambda"] = c.lambda;
  j["mu_factor"] = c.mu_factor;
  j["dropout_rate"] = c.dropout_rate;
  j["seed"] = c.seed;
  j["validation_interval"] = c.validation_interval;
  j["patience"] = c.patience;
  j["decay_every"] = c.decay_every;
  j["initial_lr"] = c.initial_lr;
  j["hidden_sizes"] = c.hidden_sizes;
  j["embed_dim"] = c.embed_dim;
  j["val_episodes"] = c.val_episodes;
  j["val_shots"] = c.val_shots;
  j["val_queries"] = c.val_queries;
  j["train_shots"] = c.train_shots;
  return j;
}

TrainConfig config_from_json_obj(const json& j) {
  TrainConfig c;
  try {
    if (j.contains("optimizer")) c.optimizer = parse_recipe(j.at("optimizer").get<std::string>());
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("ways", c.ways);
    take("per_class", c.per_class);
    take("episodes_per_iteration", c.episodes_per_iteration);
    take("max_iterations", c.max_iterations);
    take("lambda", c.lambda);
    take("mu_factor", c.mu_factor);
    take("dropout_rate", c.dropout_rate);
    take("seed", c.seed);
    take("validation_interval", c.validation_interval);
    take("patience", c.patience);
    take("decay_every", c.decay_every);
    take("initial_lr", c.initial_lr);
    take("hidden_sizes", c.hidden_sizes);
    take("embed_dim", c.embed_dim);
    take("val_episodes", c.val_episodes);
    take("val_shots", c.val_shots);
    take("val_queries", c.val_queries);
    take("train_shots", c.train_shots);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config: ") + e.what());
  }
  return c;
}

json checkpoint_to_json(const Checkpoint& ckpt) {
  json j;
  j["format"] = "shotfree-checkpoint";
  j["version"] = 1;
  json emb;
  emb["layer_sizes"] = ckpt.embedding.layer_sizes;
  emb["weights"] = json::array();
  emb["biases"] = json::array();
  for (std::size_t i = 0; i < ckpt.embedding.weights.size(); ++i) {
    emb["weights"].push_back(tensor_to_json(ckpt.embedding.weights[i]));
    emb["biases"].push_back(tensor_to_json(ckpt.embedding.biases[i]));
  }
  emb["scale_s"] = ckpt.embedding.scale_s.at(0);
  emb["dropout_rate"] = ckpt.embedding.dropout_rate;
  j["embedding"] = emb;
  json map;
  map["mu"] = ckpt.map.mu;
  map["d"] = ckpt.map.d;
  map["W"] = tensor_to_json(ckpt.map.W);
  j["metric_map"] = map;
  json protos;
  protos["class_ids"] = ckpt.prototypes.class_ids;
  if (!ckpt.prototypes.class_ids.empty()) {
    protos["vectors"] = tensor_to_json(ckpt.prototypes.vectors);
  }
  protos["normalized"] = ckpt.prototypes.normalized;
  j["prototypes"] = protos;
  j["config"] = config_to_json_obj(ckpt.config);
  j["iteration"] = ckpt.iteration;
  j["validation_score"] = ckpt.validation_score;
  j["model_kind"] = ckpt.model_kind;
  return j;
}

Checkpoint checkpoint_from_json(const json& j) {
  if (j.value("format", "") != "shotfree-checkpoint") {
    throw ProtocolError("not a checkpoint file (missing format marker)");
  }
  Checkpoint ckpt;
  const json& emb = j.at("embedding");
  ckpt.embedding.layer_sizes = emb.at("layer_sizes").get<std::vector<std::size_t>>();
  for (const json& w : emb.at("weights")) ckpt.embedding.weights.push_back(tensor_from_json(w));
  for (const json& b : emb.at("biases")) ckpt.embedding.biases.push_back(tensor_from_json(b));
  ckpt.embedding.scale_s = Tensor::scalar(emb.at("scale_s").get<double>());
  ckpt.embedding.dropout_rate = emb.at("dropout_rate").get<double>();
  const json& map = j.at("metric_map");
  ckpt.map.mu = map.at("mu").get<std::size_t>();
  ckpt.map.d = map.at("d").get<std::size_t>();
  ckpt.map.W = tensor_from_json(map.at("W"));
  const json& protos = j.at("prototypes");
  ckpt.prototypes.class_ids = protos.at("class_ids").get<std::vector<std::int64_t>>();
  if (!ckpt.prototypes.class_ids.empty()) {
    ckpt.prototypes.vectors = tensor_from_json(protos.at("vectors"));
  }
  ckpt.prototypes.normalized = protos.at("normalized").get<bool>();
  ckpt.config = config_from_json_obj(j.at("config"));
  ckpt.iteration = j.at("iteration").get<std::size_t>();
  ckpt.validation_score = j.at("validation_score").get<double>();
  ckpt.model_kind = j.value("model_kind", "shotfree");
  ckpt.embedding.validate();
  ckpt.map.validate();
  ckpt.prototypes.validate();
  return ckpt;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path,
                     const std::string& manifest_ref) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  json j = checkpoint_to_json(ckpt);
  if (!manifest_ref.empty()) j["manifest"] = manifest_ref;
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ProtocolError(path + ": invalid checkpoint JSON: " + e.what());
  }
  try {
    return checkpoint_from_json(j);
  } catch (const json::exception& e) {
    throw ProtocolError(path + ": malformed checkpoint: " + e.what());
  }
}

std::string checkpoint_id(const Checkpoint& ckpt) {
  return hex64(fnv1a(checkpoint_to_json(ckpt).dump()));
}

std::string file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file for hashing: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a(ss.str()));
}

std::string config_to_json(const TrainConfig& cfg) { return config_to_json_obj(cfg).dump(2); }

TrainConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config JSON: ") + e.what());
  }
  return config_from_json_obj(j);
}

}  // namespace shotfree

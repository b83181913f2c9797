// Command-line front end: dataset generation, meta-training, evaluation
// matrices, ablations, the collapse demo, and the gradient-check suite.
//
// Exit codes: 0 success, 1 numerical/assertion failure, 2 usage error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "shotfree/dataset.hpp"
#include "shotfree/errors.hpp"
#include "shotfree/fewshot.hpp"
#include "shotfree/gradcheck.hpp"
#include "shotfree/log.hpp"
#include "shotfree/losses.hpp"
#include "shotfree/serialize.hpp"
#include "shotfree/training.hpp"
#include "shotfree/version.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace shotfree;

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename T>
void take(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ordered_json parse_config_file(const std::string& path) {
  try {
    return ordered_json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad config file " + path + ": " + e.what());
  }
}

// Per-run bookkeeping; the manifest is written last (it carries the wall
// clock) but its path is fixed up front so outputs can reference it. Output
// files name the manifest by basename — both land in --out-dir, and relative
// references keep reruns byte-identical across directories.
struct RunContext {
  std::string command;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::string config_path;
  std::size_t workers = 1;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
  ordered_json resolved = ordered_json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

  void add_common(CLI::App* cmd) {
    seed_opt = cmd->add_option("--seed", seed, "RNG seed");
    cmd->add_option("--out-dir", out_dir, "directory for outputs")->capture_default_str();
    cmd->add_option("--config", config_path, "JSON config file (flags override its keys)");
    workers_opt = cmd->add_option("--workers", workers, "parallel evaluation workers");
  }

  std::string manifest_name() const { return command + "_manifest.json"; }
  std::string manifest_path() const { return (fs::path(out_dir) / manifest_name()).string(); }
  std::string out_path(const std::string& name) const {
    return (fs::path(out_dir) / name).string();
  }

  void prepare() {
    fs::create_directories(out_dir);
    if (!config_path.empty()) inputs.push_back(config_path);
  }

  void write_manifest() {
    ordered_json m;
    m["command"] = command;
    m["artifact_version"] = kArtifactVersion;
    m["seed"] = seed;
    m["config"] = resolved;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    ordered_json hashes = ordered_json::object();
    for (const std::string& p : outputs) {
      if (fs::exists(p)) hashes[p] = file_hash(p);
    }
    m["output_hashes"] = hashes;
    m["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ofstream out(manifest_path());
    if (!out) throw IoError("cannot write manifest: " + manifest_path());
    out << m.dump(2) << "\n";
  }
};

void write_report_csv(const std::string& path, const std::string& manifest_ref,
                      const std::string& header, const std::vector<std::string>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << "# manifest: " << manifest_ref << "\n" << header << "\n";
  for (const std::string& r : rows) out << r << "\n";
  if (!out) throw IoError("write failed: " + path);
}

SplitDataset load_dataset(const std::string& path) {
  if (!fs::exists(path)) throw IoError("dataset file not found: " + path);
  return load_csv(path);
}

// ---------------------------------------------------------------------------
// Shared training flag block (meta-train and ablate take the same knobs).

struct TrainFlags {
  std::string recipe;
  std::size_t ways = 0, per_class = 0, episodes_per_iter = 0, iterations = 0;
  std::size_t mu_factor = 0, embed_dim = 0, val_interval = 0, val_episodes = 0;
  std::size_t val_shots = 0, val_queries = 0, patience = 0, decay_every = 0, train_shots = 0;
  double lambda = 0.0, dropout = 0.0, lr = 0.0;
  std::vector<std::size_t> hidden;
  std::map<std::string, CLI::Option*> opt;

  void add(CLI::App* cmd) {
    opt["recipe"] = cmd->add_option("--recipe", recipe, "optimizer recipe: adam|sgd");
    opt["ways"] = cmd->add_option("--ways", ways, "classes per episode");
    opt["per-class"] = cmd->add_option("--per-class", per_class, "samples per class per episode");
    opt["episodes-per-iter"] =
        cmd->add_option("--episodes-per-iter", episodes_per_iter, "episodes per iteration");
    opt["iterations"] = cmd->add_option("--iterations", iterations, "training iterations");
    opt["lambda"] = cmd->add_option("--lambda", lambda, "entropy penalty weight");
    opt["mu-factor"] = cmd->add_option("--mu-factor", mu_factor, "prototype dim = factor * d");
    opt["dropout"] = cmd->add_option("--dropout", dropout, "embedding dropout rate");
    opt["embed-dim"] = cmd->add_option("--embed-dim", embed_dim, "embedding output dim d");
    opt["hidden"] =
        cmd->add_option("--hidden", hidden, "hidden layer sizes, e.g. 64,64")->delimiter(',');
    opt["lr"] = cmd->add_option("--lr", lr, "initial learning rate (0 = recipe default)");
    opt["val-interval"] = cmd->add_option("--val-interval", val_interval, "validate every N iters");
    opt["val-episodes"] = cmd->add_option("--val-episodes", val_episodes, "validation episodes");
    opt["val-shots"] = cmd->add_option("--val-shots", val_shots, "validation shots");
    opt["val-queries"] = cmd->add_option("--val-queries", val_queries, "validation queries");
    opt["patience"] = cmd->add_option("--patience", patience, "sgd plateau window (iterations)");
    opt["decay-every"] = cmd->add_option("--decay-every", decay_every, "adam lr halving period");
    opt["train-shots"] =
        cmd->add_option("--train-shots", train_shots, "baseline support size (protonet only)");
  }

  bool set(const char* name) const { return opt.at(name)->count() > 0; }

  void apply(TrainConfig& cfg) const {
    if (set("recipe")) cfg.optimizer = parse_recipe(recipe);
    if (set("ways")) cfg.ways = ways;
    if (set("per-class")) cfg.per_class = per_class;
    if (set("episodes-per-iter")) cfg.episodes_per_iteration = episodes_per_iter;
    if (set("iterations")) cfg.max_iterations = iterations;
    if (set("lambda")) cfg.lambda = lambda;
    if (set("mu-factor")) cfg.mu_factor = mu_factor;
    if (set("dropout")) cfg.dropout_rate = dropout;
    if (set("embed-dim")) cfg.embed_dim = embed_dim;
    if (set("hidden")) cfg.hidden_sizes = hidden;
    if (set("lr")) cfg.initial_lr = lr;
    if (set("val-interval")) cfg.validation_interval = val_interval;
    if (set("val-episodes")) cfg.val_episodes = val_episodes;
    if (set("val-shots")) cfg.val_shots = val_shots;
    if (set("val-queries")) cfg.val_queries = val_queries;
    if (set("patience")) cfg.patience = patience;
    if (set("decay-every")) cfg.decay_every = decay_every;
    if (set("train-shots")) cfg.train_shots = train_shots;
  }
};

// ---------------------------------------------------------------------------
// gen-data

struct GenDataCmd {
  RunContext ctx;
  SyntheticConfig g;
  std::string out_name = "dataset.csv";
  CLI::App* cmd = nullptr;
  std::map<std::string, CLI::Option*> opt;

  void setup(CLI::App& app) {
    ctx.command = "gen-data";
    cmd = app.add_subcommand("gen-data", "generate a synthetic split dataset CSV");
    opt["classes"] = cmd->add_option("--classes", g.num_classes, "number of classes")
                         ->capture_default_str();
    opt["dim"] = cmd->add_option("--dim", g.dim, "feature dimension")->capture_default_str();
    opt["per-class"] = cmd->add_option("--per-class", g.samples_per_class, "samples per class")
                           ->capture_default_str();
    opt["spread"] = cmd->add_option("--spread", g.intra_spread, "intra-class noise stddev")
                        ->capture_default_str();
    opt["heteroscedastic"] = cmd->add_flag("--heteroscedastic", g.heteroscedastic,
                                           "per-class sigma and axis stretch");
    opt["sigma-factor"] =
        cmd->add_option("--sigma-factor", g.sigma_factor, "log-uniform sigma range factor")
            ->capture_default_str();
    opt["axis-factor"] = cmd->add_option("--axis-factor", g.axis_factor, "axis stretch factor")
                             ->capture_default_str();
    cmd->add_option("--out", out_name, "output CSV name")->capture_default_str();
    ctx.add_common(cmd);
  }

  int run() {
    ctx.prepare();
    if (!ctx.config_path.empty()) {
      // Flags are bound at parse time, so the config file only fills in keys
      // whose flag was not passed.
      ordered_json j = parse_config_file(ctx.config_path);
      if (!opt.at("classes")->count()) take(j, "num_classes", g.num_classes);
      if (!opt.at("dim")->count()) take(j, "dim", g.dim);
      if (!opt.at("per-class")->count()) take(j, "samples_per_class", g.samples_per_class);
      if (!opt.at("spread")->count()) take(j, "intra_spread", g.intra_spread);
      if (!opt.at("heteroscedastic")->count()) take(j, "heteroscedastic", g.heteroscedastic);
      if (!opt.at("sigma-factor")->count()) take(j, "sigma_factor", g.sigma_factor);
      if (!opt.at("axis-factor")->count()) take(j, "axis_factor", g.axis_factor);
      if (ctx.seed_opt->count() == 0) take(j, "seed", ctx.seed);
    }
    g.seed = ctx.seed;

    const std::string out = ctx.out_path(out_name);
    SplitDataset ds = gen_synthetic(g);
    save_csv(ds, out,
             {"manifest: " + ctx.manifest_name(),
              "classes=" + std::to_string(g.num_classes) + " dim=" + std::to_string(g.dim) +
                  " per_class=" + std::to_string(g.samples_per_class) +
                  " spread=" + g17(g.intra_spread) + " seed=" + std::to_string(g.seed)});
    ctx.outputs.push_back(out);

    ctx.resolved = {{"num_classes", g.num_classes},
                    {"dim", g.dim},
                    {"samples_per_class", g.samples_per_class},
                    {"intra_spread", g.intra_spread},
                    {"heteroscedastic", g.heteroscedastic},
                    {"sigma_factor", g.sigma_factor},
                    {"axis_factor", g.axis_factor},
                    {"seed", g.seed},
                    {"out", out_name}};
    ctx.write_manifest();
    std::printf("dataset: %s (%zu rows, %zu classes, dim %zu)\n", out.c_str(), ds.num_rows(),
                g.num_classes, g.dim);
    std::printf("manifest: %s\n", ctx.manifest_path().c_str());
    return 0;
  }
};

// ---------------------------------------------------------------------------
// meta-train

struct MetaTrainCmd {
  RunContext ctx;
  TrainFlags flags;
  std::string data_path;
  std::string model = "shotfree";
  std::string ckpt_name = "checkpoint.json";
  std::string log_name = "train_log.csv";
  CLI::App* cmd = nullptr;

  void setup(CLI::App& app) {
    ctx.command = "meta-train";
    cmd = app.add_subcommand("meta-train", "meta-train a model on a dataset's BASE split");
    cmd->add_option("--data", data_path, "dataset CSV")->required();
    cmd->add_option("--model", model, "shotfree|protonet")->capture_default_str();
    flags.add(cmd);
    cmd->add_option("--ckpt-out", ckpt_name, "checkpoint file name")->capture_default_str();
    cmd->add_option("--log-out", log_name, "training log CSV name")->capture_default_str();
    ctx.add_common(cmd);
  }

  int run() {
    ctx.prepare();
    if (model != "shotfree" && model != "protonet") {
      throw ConfigError("unknown model '" + model + "' (expected shotfree|protonet)");
    }
    TrainConfig cfg;
    if (!ctx.config_path.empty()) cfg = config_from_json(read_file(ctx.config_path));
    flags.apply(cfg);
    if (ctx.seed_opt->count()) cfg.seed = ctx.seed;
    ctx.seed = cfg.seed;

    ctx.inputs.push_back(data_path);
    SplitDataset ds = load_dataset(data_path);

    ctx.resolved = ordered_json::parse(config_to_json(cfg));
    ctx.resolved["model"] = model;
    ctx.resolved["data"] = data_path;

    const std::string ckpt_path = ctx.out_path(ckpt_name);
    if (model == "protonet") {
      Checkpoint ckpt = protonet_train(ds, cfg);
      save_checkpoint(ckpt, ckpt_path, ctx.manifest_name());
      ctx.outputs.push_back(ckpt_path);
      ctx.write_manifest();
      std::printf("checkpoint: %s (id %s)\n", ckpt_path.c_str(), checkpoint_id(ckpt).c_str());
      std::printf("manifest: %s\n", ctx.manifest_path().c_str());
      return 0;
    }

    TrainResult result = meta_train(ds, cfg);
    save_checkpoint(result.best, ckpt_path, ctx.manifest_name());
    ctx.outputs.push_back(ckpt_path);
    const std::string log_path = ctx.out_path(log_name);
    result.log.save_csv(log_path, {"manifest: " + ctx.manifest_name()});
    ctx.outputs.push_back(log_path);
    ctx.write_manifest();

    std::printf("checkpoint: %s (id %s)\n", ckpt_path.c_str(),
                checkpoint_id(result.best).c_str());
    std::printf("log: %s (%zu rows)\n", log_path.c_str(), result.log.rows.size());
    std::printf("best validation accuracy: %.4f at iteration %zu\n",
                result.best.validation_score, result.best.iteration);
    std::printf("manifest: %s\n", ctx.manifest_path().c_str());
    return 0;
  }
};

// ---------------------------------------------------------------------------
// eval-matrix

struct EvalMatrixCmd {
  RunContext ctx;
  std::string data_path;
  std::vector<std::string> ckpt_paths;
  std::vector<std::size_t> shots = {1, 5, 10};
  std::size_t ways = 5, queries = 30, episodes = 2000;
  std::string method = "mean";
  std::string split = "NOVEL";
  std::string out_name = "eval_matrix.csv";
  CLI::App* cmd = nullptr;

  void setup(CLI::App& app) {
    ctx.command = "eval-matrix";
    cmd = app.add_subcommand("eval-matrix",
                             "evaluate checkpoints over a grid of few-shot scenarios");
    cmd->add_option("--data", data_path, "dataset CSV")->required();
    cmd->add_option("--checkpoint", ckpt_paths, "checkpoint file(s)")->required();
    cmd->add_option("--shots", shots, "test shots list")->delimiter(',')->capture_default_str();
    cmd->add_option("--ways", ways, "test ways")->capture_default_str();
    cmd->add_option("--queries", queries, "query points per class")->capture_default_str();
    cmd->add_option("--episodes", episodes, "episodes per cell")->capture_default_str();
    cmd->add_option("--method", method, "prototype path: mean|implicit|backfill")
        ->capture_default_str();
    cmd->add_option("--split", split, "BASE|VAL|NOVEL")->capture_default_str();
    cmd->add_option("--out", out_name, "report CSV name")->capture_default_str();
    ctx.add_common(cmd);
  }

  int run() {
    ctx.prepare();
    if (!ctx.config_path.empty()) {
      ordered_json j = parse_config_file(ctx.config_path);
      take(j, "shots", shots);
      take(j, "ways", ways);
      take(j, "queries", queries);
      take(j, "episodes", episodes);
      take(j, "method", method);
      take(j, "split", split);
      if (ctx.seed_opt->count() == 0) take(j, "seed", ctx.seed);
      if (ctx.workers_opt->count() == 0) take(j, "workers", ctx.workers);
    }
    const FewShotMethod fs_method = parse_method(method);
    const Split eval_split = parse_split_tag(split);

    ctx.inputs.push_back(data_path);
    SplitDataset ds = load_dataset(data_path);

    struct Cell {
      std::string id, model, train_scenario, method_used;
      std::size_t shots_used = 0;
      EvalReport rep;
    };
    std::vector<Cell> cells;
    std::vector<std::string> row_labels;
    for (const std::string& cp : ckpt_paths) {
      if (!fs::exists(cp)) throw IoError("checkpoint file not found: " + cp);
      ctx.inputs.push_back(cp);
      Checkpoint ckpt = load_checkpoint(cp);
      const std::string id = checkpoint_id(ckpt);
      const bool baseline = ckpt.model_kind == "protonet";
      const std::string train_scenario =
          baseline ? std::to_string(ckpt.config.train_shots) + "-shot" : "shot-free";
      for (std::size_t s : shots) {
        EvalScenario sc;
        sc.ways = ways;
        sc.shots = s;
        sc.queries = queries;
        sc.episodes = episodes;
        sc.seed = ctx.seed;
        sc.workers = ctx.workers;
        sc.split = eval_split;
        EvalReport rep = baseline ? protonet_eval(ckpt, ds, sc)
                                  : evaluate(ckpt, ds, sc, fs_method);
        cells.push_back({id, ckpt.model_kind, train_scenario, rep.method, s, rep});
      }
      row_labels.push_back(train_scenario + " (" + (baseline ? "protonet" : method) + ")");
    }

    // Long-format report: one metric per row.
    std::vector<std::string> rows;
    for (const Cell& c : cells) {
      const std::string prefix = c.id + "," + c.model + "," + c.train_scenario + "," +
                                 c.method_used + "," + split + "," + std::to_string(ways) + "," +
                                 std::to_string(c.rep.episodes ? c.rep.episodes : episodes);
      const std::string mid = prefix + "," + std::to_string(c.shots_used) + "," +
                              std::to_string(queries) + "," + std::to_string(ctx.seed);
      rows.push_back(mid + ",mean_accuracy," + g17(c.rep.mean_accuracy));
      rows.push_back(mid + ",ci95," + g17(c.rep.ci95));
    }
    const std::string out = ctx.out_path(out_name);
    write_report_csv(out, ctx.manifest_name(),
                     "checkpoint_id,model,train_scenario,method,split,ways,episodes,shots,queries,"
                     "seed,metric,value",
                     rows);
    ctx.outputs.push_back(out);

    ctx.resolved = {{"data", data_path}, {"checkpoints", ckpt_paths}, {"shots", shots},
                    {"ways", ways},      {"queries", queries},        {"episodes", episodes},
                    {"method", method},  {"split", split},            {"seed", ctx.seed},
                    {"workers", ctx.workers}};
    ctx.write_manifest();

    // Table mirror on stdout: rows = checkpoints, columns = test scenarios.
    std::printf("%-28s", "train \\ test");
    for (std::size_t s : shots) std::printf("  %zu-way %zu-shot       ", ways, s);
    std::printf("\n");
    std::size_t ci = 0;
    for (std::size_t r = 0; r < row_labels.size(); ++r) {
      std::printf("%-28s", row_labels[r].c_str());
      for (std::size_t k = 0; k < shots.size(); ++k, ++ci) {
        std::printf("  %.4f +/- %.4f  ", cells[ci].rep.mean_accuracy, cells[ci].rep.ci95);
      }
      std::printf("\n");
    }
    std::printf("report: %s\nmanifest: %s\n", out.c_str(), ctx.manifest_path().c_str());
    return 0;
  }
};

// ---------------------------------------------------------------------------
// ablate

struct AblateCmd {
  RunContext ctx;
  TrainFlags flags;
  std::string data_path;
  std::string axis;
  std::vector<std::string> values;  // optional subset of the axis values
  std::size_t num_seeds = 3;
  std::size_t eval_episodes = 500, eval_shots = 1, eval_queries = 30;
  std::string out_name = "ablate.csv";
  CLI::App* cmd = nullptr;

  void setup(CLI::App& app) {
    ctx.command = "ablate";
    cmd = app.add_subcommand("ablate", "sweep one training axis with paired seeds");
    cmd->add_option("--data", data_path, "dataset CSV")->required();
    cmd->add_option("--axis", axis, "mu-factor|optimizer|episodes-per-iter")->required();
    cmd->add_option("--values", values, "subset of axis values to run")->delimiter(',');
    cmd->add_option("--seeds", num_seeds, "paired seeds per value")->capture_default_str();
    cmd->add_option("--eval-episodes", eval_episodes, "episodes per evaluation")
        ->capture_default_str();
    cmd->add_option("--eval-shots", eval_shots, "test shots")->capture_default_str();
    cmd->add_option("--eval-queries", eval_queries, "query points per class")
        ->capture_default_str();
    flags.add(cmd);
    cmd->add_option("--out", out_name, "report CSV name")->capture_default_str();
    ctx.add_common(cmd);
  }

  int run() {
    ctx.prepare();
    TrainConfig base;
    if (!ctx.config_path.empty()) base = config_from_json(read_file(ctx.config_path));
    flags.apply(base);
    if (ctx.seed_opt->count()) base.seed = ctx.seed;
    ctx.seed = base.seed;

    std::vector<std::string> axis_values;
    if (axis == "mu-factor") axis_values = {"1", "2", "5", "10"};
    else if (axis == "optimizer") axis_values = {"adam", "sgd"};
    else if (axis == "episodes-per-iter") axis_values = {"8", "16"};
    else throw ConfigError("unknown ablation axis '" + axis +
                           "' (expected mu-factor|optimizer|episodes-per-iter)");
    if (!values.empty()) {
      std::vector<std::string> filtered;
      for (const std::string& v : values) {
        bool known = false;
        for (const std::string& av : axis_values) known = known || av == v;
        if (!known) throw ConfigError("value '" + v + "' is not on axis " + axis);
        filtered.push_back(v);
      }
      axis_values = filtered;
    }

    ctx.inputs.push_back(data_path);
    SplitDataset ds = load_dataset(data_path);

    std::vector<std::string> rows;
    std::printf("%-18s %-8s %-10s %s\n", "axis value", "seed", "accuracy", "ci95");
    for (const std::string& v : axis_values) {
      double acc_sum = 0.0;
      for (std::size_t i = 0; i < num_seeds; ++i) {
        TrainConfig cfg = base;
        cfg.seed = base.seed + i;  // paired across axis values
        if (axis == "mu-factor") cfg.mu_factor = std::stoul(v);
        else if (axis == "optimizer") cfg.optimizer = parse_recipe(v);
        else cfg.episodes_per_iteration = std::stoul(v);

        TrainResult result = meta_train(ds, cfg);
        EvalScenario sc;
        sc.ways = cfg.ways;
        sc.shots = eval_shots;
        sc.queries = eval_queries;
        sc.episodes = eval_episodes;
        sc.seed = cfg.seed;
        sc.workers = ctx.workers;
        EvalReport rep = evaluate(result.best, ds, sc, FewShotMethod::kMean);
        acc_sum += rep.mean_accuracy;
        rows.push_back(axis + "," + v + "," + std::to_string(cfg.seed) + "," +
                       std::to_string(sc.ways) + "," + std::to_string(sc.shots) + "," +
                       std::to_string(sc.episodes) + ",mean_accuracy," +
                       g17(rep.mean_accuracy));
        rows.push_back(axis + "," + v + "," + std::to_string(cfg.seed) + "," +
                       std::to_string(sc.ways) + "," + std::to_string(sc.shots) + "," +
                       std::to_string(sc.episodes) + ",ci95," + g17(rep.ci95));
        std::printf("%-18s %-8zu %-10.4f %.4f\n", v.c_str(), cfg.seed, rep.mean_accuracy,
                    rep.ci95);
      }
      std::printf("%-18s mean     %.4f\n", v.c_str(), acc_sum / double(num_seeds));
    }

    const std::string out = ctx.out_path(out_name);
    write_report_csv(out, ctx.manifest_name(),
                     "axis,value,seed,ways,shots,episodes,metric,value", rows);
    ctx.outputs.push_back(out);

    ctx.resolved = ordered_json::parse(config_to_json(base));
    ctx.resolved["axis"] = axis;
    ctx.resolved["axis_values"] = axis_values;
    ctx.resolved["seeds"] = num_seeds;
    ctx.resolved["eval_episodes"] = eval_episodes;
    ctx.resolved["eval_shots"] = eval_shots;
    ctx.resolved["eval_queries"] = eval_queries;
    ctx.resolved["data"] = data_path;
    ctx.write_manifest();
    std::printf("report: %s\nmanifest: %s\n", out.c_str(), ctx.manifest_path().c_str());
    return 0;
  }
};

// ---------------------------------------------------------------------------
// collapse-demo

struct CollapseCmd {
  RunContext ctx;
  std::size_t points = 10, dim = 2, steps = 2000;
  double lr = 0.1, lambda = 1.0;
  bool contrast = false;
  std::string out_name;
  CLI::App* cmd = nullptr;

  void setup(CLI::App& app) {
    ctx.command = "collapse-demo";
    cmd = app.add_subcommand("collapse-demo",
                             "joint gradient descent on the center loss (collapse) or the "
                             "episode objective (contrast)");
    cmd->add_option("--points", points, "free points")->capture_default_str();
    cmd->add_option("--dim", dim, "point dimension")->capture_default_str();
    cmd->add_option("--steps", steps, "gradient steps")->capture_default_str();
    cmd->add_option("--lr", lr, "step size")->capture_default_str();
    cmd->add_flag("--contrast", contrast, "drive the episode objective instead");
    cmd->add_option("--lambda", lambda, "entropy weight for --contrast")->capture_default_str();
    cmd->add_option("--out", out_name, "trajectory CSV name (default collapse.csv/contrast.csv)");
    ctx.add_common(cmd);
  }

  int run() {
    ctx.prepare();
    if (!ctx.config_path.empty()) {
      ordered_json j = parse_config_file(ctx.config_path);
      take(j, "points", points);
      take(j, "dim", dim);
      take(j, "steps", steps);
      take(j, "lr", lr);
      take(j, "lambda", lambda);
      take(j, "contrast", contrast);
      if (ctx.seed_opt->count() == 0) take(j, "seed", ctx.seed);
    }
    if (out_name.empty()) out_name = contrast ? "contrast.csv" : "collapse.csv";

    CollapseTrajectory traj = contrast
                                  ? episode_contrast_demo(points, dim, steps, lr, lambda, ctx.seed)
                                  : collapse_demo(points, dim, steps, lr, ctx.seed);

    std::vector<std::string> rows;
    rows.reserve(traj.steps.size());
    for (const CollapseStep& s : traj.steps) {
      rows.push_back(std::to_string(s.step) + "," + g17(s.loss) + "," + g17(s.spread));
    }
    const std::string out = ctx.out_path(out_name);
    write_report_csv(out, ctx.manifest_name(), "step,loss,spread", rows);
    ctx.outputs.push_back(out);

    ctx.resolved = {{"points", points}, {"dim", dim},       {"steps", steps},
                    {"lr", lr},         {"lambda", lambda}, {"contrast", contrast},
                    {"seed", ctx.seed}, {"out", out_name}};
    ctx.write_manifest();

    const double spread = traj.final_spread();
    bool pass;
    if (traj.diverged) {
      std::printf("collapse-demo: DIVERGED at step %zu (lr %.17g)\n", traj.diverged_at, lr);
      pass = false;
    } else if (contrast) {
      pass = spread > 0.1;  // the episode objective must hold the points apart
      std::printf("contrast: %s (final spread %.6g, target > 0.1; loss %.6g)\n",
                  pass ? "PASS" : "FAIL", spread, traj.final_loss());
    } else {
      pass = spread < 1e-3;  // the center loss must collapse everything
      std::printf("collapse: %s (final spread %.6g, target < 1e-3; loss %.6g)\n",
                  pass ? "PASS" : "FAIL", spread, traj.final_loss());
    }
    std::printf("trajectory: %s\nmanifest: %s\n", out.c_str(), ctx.manifest_path().c_str());
    return pass ? 0 : 1;
  }
};

// ---------------------------------------------------------------------------
// gradcheck

struct GradcheckCmd {
  RunContext ctx;
  double tol = 1e-4, h = 1e-5;
  std::string out_name = "gradcheck.csv";
  CLI::App* cmd = nullptr;

  void setup(CLI::App& app) {
    ctx.command = "gradcheck";
    cmd = app.add_subcommand("gradcheck", "finite-difference check of every primitive");
    cmd->add_option("--tol", tol, "max relative error allowed")->capture_default_str();
    cmd->add_option("--step", h, "finite-difference step")->capture_default_str();
    cmd->add_option("--out", out_name, "report CSV name")->capture_default_str();
    ctx.add_common(cmd);
  }

  int run() {
    ctx.prepare();
    if (!ctx.config_path.empty()) {
      ordered_json j = parse_config_file(ctx.config_path);
      take(j, "tol", tol);
      take(j, "step", h);
      if (ctx.seed_opt->count() == 0) take(j, "seed", ctx.seed);
    }
    GradCheckReport report = gradcheck_suite(ctx.seed, h);

    std::vector<std::string> rows;
    for (const GradCheckEntry& e : report.entries) {
      rows.push_back(e.name + "," + g17(e.max_rel_err) + "," + std::to_string(e.worst_index) +
                     "," + g17(e.analytic_at_worst) + "," + g17(e.numeric_at_worst));
      std::printf("  %-28s max rel err %.3g\n", e.name.c_str(), e.max_rel_err);
    }
    const std::string out = ctx.out_path(out_name);
    write_report_csv(out, ctx.manifest_name(),
                     "name,max_rel_err,worst_index,analytic_at_worst,numeric_at_worst", rows);
    ctx.outputs.push_back(out);

    ctx.resolved = {{"tol", tol}, {"step", h}, {"seed", ctx.seed}, {"out", out_name}};
    ctx.write_manifest();

    const bool pass = report.ok(tol);
    std::printf("gradcheck: %s (%zu checks, max rel err %.3g, tol %.3g)\n",
                pass ? "PASS" : "FAIL", report.entries.size(), report.max_rel_err, tol);
    std::printf("report: %s\nmanifest: %s\n", out.c_str(), ctx.manifest_path().c_str());
    return pass ? 0 : 1;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"shot-free few-shot classification artifact"};
  app.set_version_flag("--version", kArtifactVersion);
  app.require_subcommand(1);

  GenDataCmd gen;
  MetaTrainCmd train;
  EvalMatrixCmd eval;
  AblateCmd ablate;
  CollapseCmd collapse;
  GradcheckCmd gradcheck;
  gen.setup(app);
  train.setup(app);
  eval.setup(app);
  ablate.setup(app);
  collapse.setup(app);
  gradcheck.setup(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage errors are exit 2; --help/--version exit 0
  }

  try {
    if (gen.cmd->parsed()) return gen.run();
    if (train.cmd->parsed()) return train.run();
    if (eval.cmd->parsed()) return eval.run();
    if (ablate.cmd->parsed()) return ablate.run();
    if (collapse.cmd->parsed()) return collapse.run();
    if (gradcheck.cmd->parsed()) return gradcheck.run();
  } catch (const ConfigError& e) {
    log_error(std::string("config: ") + e.what());
    return 2;
  } catch (const IoError& e) {
    log_error(std::string("io: ") + e.what());
    return 2;
  } catch (const Error& e) {
    log_error(e.what());
    return 1;
  } catch (const std::exception& e) {
    log_error(std::string("unexpected: ") + e.what());
    return 1;
  }
  return 2;
}

// more_lab: corpus generation, training, evaluation, ablation and gradient checks.
//
// Exit codes: 0 success, 2 bad input/path/checkpoint, 3 failed invariant.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "morelab/errors.hpp"
#include "morelab/model.hpp"
#include "morelab/run_config.hpp"
#include "morelab/train_eval.hpp"

namespace fs = std::filesystem;
using namespace morelab;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitInvariant = 3;
constexpr double kGradTolerance = 1e-4;

// Failed invariant that is not an exception from the library.
struct InvariantFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> data;
  std::optional<std::string> features;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
  std::optional<double> dropout;
  std::optional<std::string> preset;
  std::optional<std::size_t> train, dev, test;
  std::optional<std::size_t> objects_max;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "INI config file; flags override its values");
  cmd->add_option("--seed", o.seed, "Seed for generation, initialisation and batching");
  cmd->add_option("--out", o.out, "Run directory (receives config.ini and every output)");
}

void add_training(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--features", o.features, "Feature list, e.g. p,a,d or none");
  cmd->add_option("--epochs", o.epochs, "Training epochs");
  cmd->add_option("--batch", o.batch, "Batch size in candidate pairs (default 32)");
  cmd->add_option("--lr", o.lr, "AdamW learning rate");
  cmd->add_option("--dropout", o.dropout, "Dropout on the classifier input");
  cmd->add_option("--preset", o.preset, "Model dimensions: toy, tiny or base");
}

void add_sizes(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--train", o.train, "Train instances");
  cmd->add_option("--dev", o.dev, "Dev instances");
  cmd->add_option("--test", o.test, "Test instances");
  cmd->add_option("--objects-max", o.objects_max, "Maximum objects per image (at most 10)");
}

RunConfig resolve(const Overrides& o) {
  RunConfig rc;
  if (!o.config.empty()) rc.load_ini(o.config);
  if (o.seed) {
    rc.seed = *o.seed;
    rc.model.init_seed = *o.seed;
  }
  if (o.out) rc.out_dir = *o.out;
  if (o.data) rc.data_dir = *o.data;
  if (o.preset) rc.apply_preset(*o.preset);
  if (o.features) rc.train.features = FeatureFlags::parse(*o.features);
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.batch) rc.train.batch_size = *o.batch;
  if (o.lr) rc.train.lr = *o.lr;
  if (o.dropout) rc.train.dropout = *o.dropout;
  if (o.train) rc.sizes.train = *o.train;
  if (o.dev) rc.sizes.dev = *o.dev;
  if (o.test) rc.sizes.test = *o.test;
  if (o.objects_max) rc.generator.max_objects = *o.objects_max;
  rc.train.seed = rc.seed;
  rc.validate();
  return rc;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

// Creates the run directory and echoes the resolved config into it.
fs::path open_run(const RunConfig& rc, const std::string& fallback) {
  const fs::path dir = rc.out_dir.empty() ? fs::path(fallback) : rc.out_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create run directory " + dir.string());
  write_text(dir / "config.ini", rc.to_ini());
  return dir;
}

fs::path require_data(const RunConfig& rc) {
  if (rc.data_dir.empty()) throw InputError("--data is required");
  if (!fs::is_directory(rc.data_dir)) throw IoError("no corpus directory " + rc.data_dir.string());
  return rc.data_dir;
}

RelationSchema schema_for(const fs::path& dir, const RunConfig& rc) {
  return fs::exists(dir / "schema.json") ? read_schema(dir) : rc.schema();
}

Vocabulary vocab_for(const fs::path& dir) {
  return fs::exists(dir / "vocab.txt") ? Vocabulary::load(dir / "vocab.txt") : generator_vocabulary();
}

std::vector<Instance>& split_of(Corpus& c, const std::string& name) {
  if (name == "train") return c.train;
  if (name == "dev") return c.dev;
  if (name == "test") return c.test;
  throw InputError("unknown split '" + name + "' (train, dev, test)");
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const Overrides& o) {
  const RunConfig rc = resolve(o);
  const fs::path dir = open_run(rc, "corpus");
  const std::string stats = generate_dataset(rc.seed, rc.sizes, rc.schema(), rc.generator, dir);
  std::cout << stats << '\n';
  return 0;
}

int cmd_train(const Overrides& o) {
  const RunConfig rc = resolve(o);
  const fs::path data = require_data(rc);
  const fs::path dir = open_run(rc, "run");
  const RelationSchema schema = schema_for(data, rc);
  const Vocabulary vocab = vocab_for(data);
  Corpus corpus = read_corpus(data);
  ModelConfig mc = rc.model_for(vocab.size());
  mc.num_labels = schema.size();
  const auto train_set = prepare_all(corpus.train, vocab, schema, mc);
  const auto dev_set = prepare_all(corpus.dev, vocab, schema, mc);
  MoreFormer model(mc);
  const auto start = std::chrono::steady_clock::now();
  const TrainResult result = train(model, train_set, dev_set, rc.train, dir / "model");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text(dir / "train_log.csv", result.csv());
  const auto records = predict_pairs(model, dev_set, rc.train.threads);
  const MetricsReport report = evaluate(records, schema);
  write_text(dir / "dev_metrics.json", report.to_json());
  std::cout << "best dev F1 " << result.best_dev_f1 << " at epoch " << result.best_epoch << " (" << secs << " s)\n"
            << report.to_table() << "checkpoint " << (dir / "model").string() << '\n';
  return 0;
}

int cmd_eval(const Overrides& o, const std::string& pred, const std::string& gold, const std::string& checkpoint,
             const std::string& split) {
  const RunConfig rc = resolve(o);
  std::vector<PairRecord> records;
  RelationSchema schema = rc.schema();
  std::optional<fs::path> run;
  if (!pred.empty() || !gold.empty()) {
    if (pred.empty() || gold.empty()) throw InputError("--pred and --gold go together");
    const fs::path gold_path(gold);
    schema = schema_for(gold_path.parent_path(), rc);
    const auto instances = read_split(gold_path, false);
    records = read_predictions(pred, instances, schema);
    if (o.out) run = open_run(rc, *o.out);
  } else {
    if (checkpoint.empty()) throw InputError("eval needs --pred/--gold or --checkpoint/--data");
    const fs::path data = require_data(rc);
    if (!fs::exists(fs::path(checkpoint + ".manifest.json"))) throw IoError("missing checkpoint " + checkpoint);
    schema = schema_for(data, rc);
    const Vocabulary vocab = vocab_for(data);
    Corpus corpus = read_corpus(data);
    const auto& instances = split_of(corpus, split);
    const MoreFormer model = MoreFormer::load(checkpoint);
    if (model.config().vocab_size != vocab.size()) throw InputError("checkpoint vocabulary does not match the corpus");
    const auto prepared = prepare_all(instances, vocab, schema, model.config());
    records = predict_pairs(model, prepared, rc.train.threads);
    run = open_run(rc, "eval");
    write_predictions(*run / (split + "_predictions.jsonl"), records, instances, schema);
  }
  const MetricsReport report = evaluate(records, schema);
  if (run) {
    write_text(*run / "metrics.json", report.to_json());
    write_text(*run / "metrics.txt", report.to_table());
  }
  std::cout << report.to_json() << '\n';
  return 0;
}

int cmd_ablate(const Overrides& o, const std::string& grid_spec, const std::string& seeds_spec) {
  const RunConfig rc = resolve(o);
  const fs::path dir = open_run(rc, "ablation");
  Corpus corpus;
  RelationSchema schema = rc.schema();
  Vocabulary vocab = generator_vocabulary();
  if (!rc.data_dir.empty()) {
    const fs::path data = require_data(rc);
    schema = schema_for(data, rc);
    vocab = vocab_for(data);
    corpus = read_corpus(data);
  } else {
    corpus = generate_corpus(rc.seed, rc.sizes, schema, rc.generator);
  }
  std::vector<FeatureFlags> grid;
  if (grid_spec == "full") {
    grid = ablation_grid();
  } else {
    std::stringstream ss(grid_spec);
    std::string cell;
    while (std::getline(ss, cell, ';')) grid.push_back(FeatureFlags::parse(cell));
  }
  if (grid.empty()) throw InputError("empty ablation grid");
  std::vector<std::uint64_t> seeds;
  {
    std::stringstream ss(seeds_spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        seeds.push_back(std::stoull(item));
      } catch (const std::exception&) {
        throw InputError("bad seed '" + item + "'");
      }
    }
  }
  ModelConfig mc = rc.model_for(vocab.size());
  mc.num_labels = schema.size();
  const AblationReport report = ablate(corpus, vocab, schema, mc, rc.train, grid, seeds, &std::cerr);
  write_text(dir / "ablation.json", report.to_json());
  write_text(dir / "ablation.txt", report.to_table());
  std::cout << report.to_table();
  return 0;
}

int cmd_gradcheck(const Overrides& o, const std::string& size) {
  const RunConfig rc = resolve(o);
  ModelConfig mc = ModelConfig::tiny(0);
  mc.features = rc.train.features;
  mc.head = rc.model.head;
  mc.init_seed = rc.seed;
  const auto start = std::chrono::steady_clock::now();
  const GradCheckResult r = model_grad_check(mc, gradcheck_instance(size), RelationSchema::make_default());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "max relative error " << r.max_rel_error << " over " << r.coordinates << " coordinates (" << secs
            << " s)\n";
  if (o.out) {
    const fs::path dir = open_run(rc, *o.out);
    write_text(dir / "gradcheck.json", nlohmann::json{{"instance_size", size},
                                                      {"max_rel_error", r.max_rel_error},
                                                      {"coordinates", r.coordinates},
                                                      {"tolerance", kGradTolerance}}
                                           .dump(2));
  }
  if (!(r.max_rel_error < kGradTolerance)) {
    throw InvariantFailure("gradient check failed: " + std::to_string(r.max_rel_error) + " >= 1e-4");
  }
  return 0;
}

int cmd_stats(const Overrides& o) {
  const RunConfig rc = resolve(o);
  const fs::path data = require_data(rc);
  const RelationSchema schema = schema_for(data, rc);
  const Corpus corpus = read_corpus(data, false);
  nlohmann::ordered_json j;
  std::vector<Instance> all;
  for (const auto& [name, split] : {std::pair{"train", &corpus.train}, {"dev", &corpus.dev}, {"test", &corpus.test}}) {
    j[name] = nlohmann::ordered_json::parse(corpus_stats(*split, schema));
    all.insert(all.end(), split->begin(), split->end());
  }
  j["overall"] = nlohmann::ordered_json::parse(corpus_stats(all, schema));
  const std::string text = j.dump(2);
  if (o.out) write_text(open_run(rc, *o.out) / "stats.json", text);
  std::cout << text << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-object relation extraction lab"};
  app.require_subcommand(1);
  Overrides o;
  std::string pred, gold, checkpoint, split = "test", grid = "full", seeds = "0,1,2", size = "small";

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus");
  add_common(gen, o);
  add_sizes(gen, o);

  auto* tr = app.add_subcommand("train", "Train a model and save the best-dev checkpoint");
  add_common(tr, o);
  add_training(tr, o);
  tr->add_option("--data", o.data, "Corpus directory");

  auto* ev = app.add_subcommand("eval", "Score predictions or a checkpoint");
  add_common(ev, o);
  ev->add_option("--pred", pred, "Prediction JSONL");
  ev->add_option("--gold", gold, "Gold split JSONL");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint stem (model.manifest.json + model.bin)");
  ev->add_option("--data", o.data, "Corpus directory for --checkpoint");
  ev->add_option("--split", split, "Split to evaluate with --checkpoint");

  auto* ab = app.add_subcommand("ablate", "Train the P/A/D feature grid");
  add_common(ab, o);
  add_training(ab, o);
  add_sizes(ab, o);
  ab->add_option("--data", o.data, "Corpus directory (generated in memory when absent)");
  ab->add_option("--grid", grid, "full, or cells separated by ';' such as 'none;p,a,d'");
  ab->add_option("--seeds", seeds, "Comma-separated seeds");

  auto* gc = app.add_subcommand("gradcheck", "End-to-end gradient check");
  add_common(gc, o);
  gc->add_option("--instance-size", size, "small or medium");
  gc->add_option("--features", o.features, "Feature list");

  auto* st = app.add_subcommand("stats", "Corpus statistics");
  add_common(st, o);
  st->add_option("--data", o.data, "Corpus directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o, pred, gold, checkpoint, split);
    if (*ab) return cmd_ablate(o, grid, seeds);
    if (*gc) return cmd_gradcheck(o, size);
    if (*st) return cmd_stats(o);
  } catch (const InvariantFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const EvaluationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitInput;
}

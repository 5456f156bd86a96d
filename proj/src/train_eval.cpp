#include "morelab/train_eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "morelab/errors.hpp"

namespace morelab {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------- optimizer

void adamw_step(std::span<Tensor* const> params, std::span<const std::vector<double>> grads, AdamWState& state,
                const AdamWConfig& config) {
  if (params.size() != grads.size()) throw DimensionError("adamw_step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i]->size()) {
      throw DimensionError("adamw_step: gradient " + std::to_string(i) + " has " + std::to_string(grads[i].size()) +
                           " values for " + shape_string(params[i]->shape()));
    }
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      if (!std::isfinite(grads[i][j])) {
        throw EvaluationError("adamw_step: non-finite gradient in parameter " + std::to_string(i) + " at index " +
                              std::to_string(j) + "; step rejected");
      }
    }
  }
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  } else if (state.m.size() != params.size()) {
    throw DimensionError("adamw_step: optimizer state does not match parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const double decay = config.lr * config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grads[i][j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double mhat = m[j] / c1;
      const double vhat = c2 > 0.0 ? v[j] / c2 : v[j];
      w[j] -= decay * w[j];
      w[j] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

void adamw_step(ParameterStore& store, AdamWState& state, const AdamWConfig& config) {
  std::vector<Tensor*> params = store.all();
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (Tensor* p : params) {
    if (p->grad()) {
      grads.push_back(*p->grad());
    } else {
      grads.emplace_back(p->size(), 0.0);
    }
  }
  adamw_step(params, grads, state, config);
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InputError("learning rate must be positive");
  if (batch_size < 1) throw InputError("batch size must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InputError("dropout must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw InputError("weight decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw InputError("betas must be in [0, 1)");
  if (!(eps > 0.0)) throw InputError("eps must be positive");
  if (target_train_f1 && !track_train_f1) throw InputError("target train F1 requires train F1 tracking");
}

std::string TrainResult::csv() const {
  std::ostringstream out;
  const bool with_train = std::any_of(log.begin(), log.end(), [](const EpochLog& e) { return e.train_f1.has_value(); });
  out << "epoch,loss,dev_f1" << (with_train ? ",train_f1" : "") << '\n';
  out << std::setprecision(17);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.loss << ',' << e.dev_f1;
    if (with_train) out << ',' << e.train_f1.value_or(0.0);
    out << '\n';
  }
  return out.str();
}

std::size_t worker_threads(std::size_t requested) {
  std::size_t n = requested;
  if (n == 0) {
    if (const char* env = std::getenv("MORE_LAB_THREADS")) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (end != env && v > 0) n = static_cast<std::size_t>(v);
    }
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

namespace {

struct PairRef {
  std::size_t instance;
  std::size_t pair;
};

Var batch_loss(ForwardContext& ctx, const MoreFormer& model, std::span<const PreparedInstance> data,
               std::span<const PairRef> batch) {
  std::map<std::size_t, Var> visual;
  std::vector<Var> logits;
  std::vector<std::size_t> targets;
  logits.reserve(batch.size());
  for (const auto& ref : batch) {
    auto it = visual.find(ref.instance);
    if (it == visual.end()) it = visual.emplace(ref.instance, model.visual_stream(ctx, data[ref.instance])).first;
    const auto& pair = data[ref.instance].pairs[ref.pair];
    logits.push_back(model.pair_logits(ctx, pair, it->second));
    targets.push_back(pair.label);
  }
  return ops::cross_entropy(ops::concat_rows(logits), targets);
}

double micro_f1(const MoreFormer& model, std::span<const PreparedInstance> data, std::size_t threads,
                std::size_t num_labels) {
  if (data.empty()) return 0.0;
  const auto records = predict_pairs(model, data, threads);
  PairCounts c;
  const std::size_t none = num_labels - 1;
  for (const auto& r : records) {
    if (r.predicted != none) ++c.predicted_positive;
    if (r.gold != none) ++c.gold_positive;
    if (r.predicted != none && r.predicted == r.gold) ++c.true_positive;
  }
  return prf(c.true_positive, c.predicted_positive, c.gold_positive).f1;
}

}  // namespace

TrainResult train(MoreFormer& model, std::span<const PreparedInstance> train_set,
                  std::span<const PreparedInstance> dev_set, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& checkpoint) {
  config.validate();
  if (!(config.features == model.config().features)) {
    throw InputError("train: feature flags " + config.features.to_string() + " differ from the model's " +
                     model.config().features.to_string());
  }
  std::vector<PairRef> pairs;
  for (std::size_t i = 0; i < train_set.size(); ++i)
    for (std::size_t p = 0; p < train_set[i].pairs.size(); ++p) pairs.push_back({i, p});
  if (pairs.empty()) throw InputError("train: no candidate pairs");
  std::vector<std::size_t> instance_order(train_set.size());
  for (std::size_t i = 0; i < instance_order.size(); ++i) instance_order[i] = i;

  const std::size_t threads = worker_threads(config.threads);
  const std::size_t labels = model.config().num_labels;
  ParameterStore& store = model.parameters();
  AdamWState state;
  const AdamWConfig opt = config.optimizer();
  Rng dropout_rng(mix_seed(config.seed, 0x64726f70ULL));

  TrainResult result;
  auto best = store.snapshot();
  bool have_best = false;
  result.best_dev_f1 = -1.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    // Instances are shuffled and their pairs kept adjacent, so a batch
    // re-encodes each image at most once.
    Rng order_rng(mix_seed(config.seed, epoch));
    order_rng.shuffle(std::span<std::size_t>(instance_order));
    pairs.clear();
    for (std::size_t i : instance_order) {
      const std::size_t first = pairs.size();
      for (std::size_t p = 0; p < train_set[i].pairs.size(); ++p) pairs.push_back({i, p});
      order_rng.shuffle(std::span<PairRef>(pairs).subspan(first));
    }
    const auto epoch_start = store.snapshot();
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < pairs.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, pairs.size() - start);
      Tape tape;
      ForwardContext ctx{tape, true, config.dropout, &dropout_rng};
      Var loss = batch_loss(ctx, model, train_set, std::span<const PairRef>(pairs).subspan(start, count));
      const double value = loss.value().item();
      auto diverge = [&](const std::string& why) {
        store.restore(have_best ? best : epoch_start);
        store.zero_grad();
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": " + why);
      };
      if (!std::isfinite(value)) diverge("loss is " + std::to_string(value));
      store.zero_grad();
      tape.backward(loss);
      try {
        adamw_step(store, state, opt);
      } catch (const EvaluationError& e) {
        diverge(e.what());
      }
      store.zero_grad();
      loss_sum += value * static_cast<double>(count);
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / static_cast<double>(pairs.size());
    entry.dev_f1 = micro_f1(model, dev_set, threads, labels);
    if (config.track_train_f1) entry.train_f1 = micro_f1(model, train_set, threads, labels);
    if (!have_best || entry.dev_f1 > result.best_dev_f1) {
      have_best = true;
      best = store.snapshot();
      result.best_dev_f1 = entry.dev_f1;
      result.best_epoch = epoch;
      if (checkpoint) model.save(*checkpoint);
    }
    result.log.push_back(entry);
    if (config.target_train_f1 && entry.train_f1 && *entry.train_f1 >= *config.target_train_f1) break;
  }
  if (have_best) store.restore(best);
  return result;
}

double mean_loss(const MoreFormer& model, std::span<const PreparedInstance> instances) {
  std::vector<PairRef> refs;
  for (std::size_t i = 0; i < instances.size(); ++i)
    for (std::size_t p = 0; p < instances[i].pairs.size(); ++p) refs.push_back({i, p});
  if (refs.empty()) throw InputError("mean_loss: no pairs");
  Tape tape(false);
  ForwardContext ctx{tape};
  return batch_loss(ctx, model, instances, refs).value().item();
}

// ---------------------------------------------------------------- prediction

std::vector<PairRecord> predict_pairs(const MoreFormer& model, std::span<const PreparedInstance> instances,
                                      std::size_t threads) {
  std::vector<std::vector<std::size_t>> predicted(instances.size());
  const std::size_t workers = std::min(worker_threads(threads), std::max<std::size_t>(instances.size(), 1));
  auto run = [&](std::size_t first) {
    for (std::size_t i = first; i < instances.size(); i += workers) predicted[i] = model.predict(instances[i]);
  };
  if (workers <= 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run, w);
    for (auto& t : pool) t.join();
  }
  std::vector<PairRecord> out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    for (std::size_t p = 0; p < inst.pairs.size(); ++p) {
      const auto& pair = inst.pairs[p];
      out.push_back({i, pair.entity, pair.object, pair.label, predicted[i][p], inst.cell, inst.objects.size()});
    }
  }
  return out;
}

std::vector<PairRecord> gold_records(std::span<const Instance> instances, const RelationSchema& schema) {
  std::vector<PairRecord> out;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const Instance& inst = instances[i];
    for (std::size_t e = 0; e < inst.entities.size(); ++e) {
      for (std::size_t o = 0; o < inst.objects.size(); ++o) {
        const std::size_t label = schema.index(inst.gold_relation(e, o));
        out.push_back({i, e, o, label, label, inst.cell(), inst.objects.size()});
      }
    }
  }
  return out;
}

void write_predictions(const std::filesystem::path& path, std::span<const PairRecord> records,
                       std::span<const Instance> instances, const RelationSchema& schema) {
  std::vector<Json> lines(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) lines[i] = {{"id", instances[i].id}, {"triples", Json::array()}};
  for (const auto& r : records) {
    if (r.instance >= instances.size()) throw IndexError("prediction for instance " + std::to_string(r.instance));
    lines[r.instance]["triples"].push_back(
        {{"entity_id", r.entity}, {"object_id", r.object}, {"relation", schema.labels.at(r.predicted)}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& line : lines) out << line.dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<PairRecord> read_predictions(const std::filesystem::path& path, std::span<const Instance> gold,
                                         const RelationSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < gold.size(); ++i) by_id[gold[i].id] = i;
  std::map<std::array<std::size_t, 3>, std::size_t> predicted;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(number);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw InputError(where + ": " + e.what());
    }
    try {
      const auto it = by_id.find(j.at("id").get<std::string>());
      if (it == by_id.end()) throw InputError(where + ": id " + j.at("id").dump() + " not in the gold split");
      for (const auto& t : j.at("triples")) {
        const std::array<std::size_t, 3> key{it->second, t.at("entity_id").get<std::size_t>(),
                                             t.at("object_id").get<std::size_t>()};
        const std::size_t label = schema.index(t.at("relation").get<std::string>());
        if (!predicted.emplace(key, label).second) throw InputError(where + ": duplicate prediction for a pair");
      }
    } catch (const Json::exception& e) {
      throw InputError(where + ": " + e.what());
    }
  }
  std::vector<PairRecord> records = gold_records(gold, schema);
  for (auto& r : records) {
    const auto it = predicted.find({r.instance, r.entity, r.object});
    if (it == predicted.end()) {
      throw InputError("no prediction for " + gold[r.instance].id + " entity " + std::to_string(r.entity) +
                       " object " + std::to_string(r.object));
    }
    r.predicted = it->second;
    predicted.erase(it);
  }
  if (!predicted.empty()) throw InputError(path.string() + ": predictions for pairs absent from the gold split");
  return records;
}

// ---------------------------------------------------------------- metrics

Prf prf(std::size_t tp, std::size_t predicted, std::size_t gold) {
  Prf r;
  r.precision = predicted ? static_cast<double>(tp) / static_cast<double>(predicted) : 0.0;
  r.recall = gold ? static_cast<double>(tp) / static_cast<double>(gold) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

namespace {

void check_label(std::size_t label, const RelationSchema& schema) {
  if (label >= schema.size()) {
    throw SchemaError("label index " + std::to_string(label) + " outside schema of " + std::to_string(schema.size()));
  }
}

void add_pair(PairCounts& c, std::size_t gold, std::size_t pred, std::size_t none) {
  ++c.pairs;
  if (gold == pred) ++c.correct;
  if (pred != none) ++c.predicted_positive;
  if (gold != none) ++c.gold_positive;
  if (pred != none && pred == gold) ++c.true_positive;
}

double ratio(std::size_t a, std::size_t b) { return b ? static_cast<double>(a) / static_cast<double>(b) : 0.0; }

MetricsReport core_report(std::span<const std::size_t> predicted, std::span<const std::size_t> gold,
                          const RelationSchema& schema) {
  if (predicted.size() != gold.size()) throw InputError("evaluate: one prediction per gold pair required");
  const std::size_t k = schema.size();
  const std::size_t none = schema.none_index();
  MetricsReport r;
  r.labels = schema.labels;
  r.confusion.assign(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    check_label(gold[i], schema);
    check_label(predicted[i], schema);
    add_pair(r.counts, gold[i], predicted[i], none);
    ++r.confusion[gold[i]][predicted[i]];
  }
  r.accuracy = ratio(r.counts.correct, r.counts.pairs);
  r.micro = prf(r.counts.true_positive, r.counts.predicted_positive, r.counts.gold_positive);
  for (std::size_t l = 0; l < schema.num_relations(); ++l) {
    std::size_t pred_l = 0, gold_l = 0;
    for (std::size_t j = 0; j < k; ++j) {
      pred_l += r.confusion[j][l];
      gold_l += r.confusion[l][j];
    }
    r.per_label.push_back(prf(r.confusion[l][l], pred_l, gold_l));
  }
  const double n = static_cast<double>(r.per_label.size());
  for (const auto& p : r.per_label) {
    r.macro.precision += p.precision / n;
    r.macro.recall += p.recall / n;
    r.macro.f1 += p.f1 / n;
  }
  return r;
}

}  // namespace

MetricsReport evaluate(std::span<const std::size_t> predicted, std::span<const std::size_t> gold,
                       const RelationSchema& schema) {
  return core_report(predicted, gold, schema);
}

MetricsReport evaluate(std::span<const PairRecord> records, const RelationSchema& schema) {
  std::vector<std::size_t> predicted, gold;
  std::vector<Triple> pred_triples, gold_triples;
  std::size_t instances = 0;
  for (const auto& rec : records) instances = std::max(instances, rec.instance + 1);
  std::vector<std::size_t> objects(instances, 0);
  for (const auto& rec : records) {
    predicted.push_back(rec.predicted);
    gold.push_back(rec.gold);
    pred_triples.push_back({rec.instance, rec.entity, rec.object, rec.predicted});
    gold_triples.push_back({rec.instance, rec.entity, rec.object, rec.gold});
    objects[rec.instance] = rec.num_objects;
  }
  MetricsReport r = core_report(predicted, gold, schema);
  const std::size_t none = schema.none_index();
  for (Cell cell : kAllCells) {
    CellMetrics cm;
    cm.cell = cell;
    for (const auto& rec : records) {
      if (rec.cell != cell) continue;
      add_pair(cm.counts, rec.gold, rec.predicted, none);
      if (rec.gold == none) ++cm.gold_none;
    }
    cm.none_ratio = ratio(cm.gold_none, cm.counts.pairs);
    cm.accuracy = ratio(cm.counts.correct, cm.counts.pairs);
    cm.micro = prf(cm.counts.true_positive, cm.counts.predicted_positive, cm.counts.gold_positive);
    r.cells.push_back(cm);
  }
  r.disambiguation = disambiguation_eval(pred_triples, gold_triples, objects, none);
  return r;
}

namespace {

Json prf_json(const Prf& p) { return {{"precision", p.precision}, {"recall", p.recall}, {"f1", p.f1}}; }

Json disamb_json(const DisambiguationCounts& d) {
  return {{"true_positive", d.true_positive},
          {"predicted", d.predicted},
          {"gold", d.gold},
          {"precision", d.scores.precision},
          {"recall", d.scores.recall},
          {"f1", d.scores.f1}};
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * v;
  return s.str();
}

}  // namespace

std::string MetricsReport::to_json() const {
  Json j;
  j["pairs"] = counts.pairs;
  j["accuracy"] = accuracy;
  j["precision"] = micro.precision;
  j["recall"] = micro.recall;
  j["f1"] = micro.f1;
  j["macro_precision"] = macro.precision;
  j["macro_recall"] = macro.recall;
  j["macro_f1"] = macro.f1;
  Json per = Json::object();
  for (std::size_t l = 0; l < per_label.size(); ++l) per[labels[l]] = prf_json(per_label[l]);
  j["per_label"] = per;
  Json cj = Json::object();
  for (const auto& c : cells) {
    cj[to_string(c.cell)] = {{"pairs", c.counts.pairs},    {"none_ratio", c.none_ratio}, {"accuracy", c.accuracy},
                             {"precision", c.micro.precision}, {"recall", c.micro.recall}, {"f1", c.micro.f1}};
  }
  j["cells"] = cj;
  j["disambiguation"] = {{"full", disamb_json(disambiguation.full)},
                         {"multi_object", disamb_json(disambiguation.multi_object)}};
  j["labels"] = labels;
  j["confusion"] = confusion;
  return j.dump(2);
}

std::string MetricsReport::to_table() const {
  std::ostringstream out;
  out << std::left << std::setw(12) << "Accuracy" << std::setw(12) << "Precision" << std::setw(12) << "Recall"
      << std::setw(12) << "F1" << "Macro-F1\n";
  out << std::setw(12) << pct(accuracy) << std::setw(12) << pct(micro.precision) << std::setw(12)
      << pct(micro.recall) << std::setw(12) << pct(micro.f1) << pct(macro.f1) << "\n\n";
  if (!cells.empty()) {
    out << std::setw(14) << "Cell" << std::setw(8) << "Pairs" << std::setw(12) << "None ratio" << std::setw(12)
        << "Accuracy" << "F1\n";
    for (const auto& c : cells) {
      out << std::setw(14) << to_string(c.cell) << std::setw(8) << c.counts.pairs << std::setw(12)
          << pct(c.none_ratio) << std::setw(12) << pct(c.accuracy) << pct(c.micro.f1) << '\n';
    }
    out << '\n' << std::setw(14) << "Disamb." << std::setw(12) << "Precision" << std::setw(12) << "Recall" << "F1\n";
    const std::pair<const char*, const DisambiguationCounts*> rows[] = {{"full", &disambiguation.full},
                                                                       {"obj>1", &disambiguation.multi_object}};
    for (const auto& [name, d] : rows) {
      out << std::setw(14) << name << std::setw(12) << pct(d->scores.precision) << std::setw(12)
          << pct(d->scores.recall) << pct(d->scores.f1) << '\n';
    }
  }
  return out.str();
}

DisambiguationReport disambiguation_eval(std::span<const Triple> predicted, std::span<const Triple> gold,
                                         std::span<const std::size_t> objects_per_instance, std::size_t none_index) {
  std::map<std::array<std::size_t, 3>, std::size_t> gold_map;
  for (const auto& g : gold) gold_map[{g.instance, g.entity, g.object}] = g.relation;
  auto multi = [&](std::size_t instance) {
    return instance < objects_per_instance.size() && objects_per_instance[instance] > 1;
  };
  DisambiguationReport r;
  for (const auto& g : gold) {
    if (g.relation == none_index) continue;
    ++r.full.gold;
    if (multi(g.instance)) ++r.multi_object.gold;
  }
  for (const auto& p : predicted) {
    if (p.relation == none_index) continue;
    ++r.full.predicted;
    const bool m = multi(p.instance);
    if (m) ++r.multi_object.predicted;
    const auto it = gold_map.find({p.instance, p.entity, p.object});
    if (it != gold_map.end() && it->second != none_index) {
      ++r.full.true_positive;
      if (m) ++r.multi_object.true_positive;
    }
  }
  r.full.scores = prf(r.full.true_positive, r.full.predicted, r.full.gold);
  r.multi_object.scores = prf(r.multi_object.true_positive, r.multi_object.predicted, r.multi_object.gold);
  return r;
}

double cohen_kappa_weighted(std::span<const std::size_t> a, std::span<const std::size_t> b, std::size_t num_labels,
                            KappaWeights weights) {
  if (a.size() != b.size()) throw InputError("kappa: annotation sequences differ in length");
  if (a.size() < 2) throw InputError("kappa: at least two items required");
  if (num_labels < 2) throw InputError("kappa: at least two labels required");
  const std::size_t k = num_labels;
  std::vector<double> observed(k * k, 0.0), row(k, 0.0), col(k, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] >= k || b[i] >= k) throw InputError("kappa: label outside the shared label set");
    observed[a[i] * k + b[i]] += 1.0;
    row[a[i]] += 1.0;
    col[b[i]] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  double wo = 0.0, we = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double w = weights == KappaWeights::kLinear
                           ? std::fabs(static_cast<double>(i) - static_cast<double>(j)) / static_cast<double>(k - 1)
                           : (i == j ? 0.0 : 1.0);
      wo += w * observed[i * k + j] / n;
      we += w * row[i] * col[j] / (n * n);
    }
  }
  if (we == 0.0) throw EvaluationError("kappa: expected disagreement is zero (single label class)");
  return 1.0 - wo / we;
}

// ---------------------------------------------------------------- ablation

std::string to_string(Feature feature) {
  switch (feature) {
    case Feature::kPosition:
      return "position";
    case Feature::kAttribute:
      return "attribute";
    case Feature::kDepth:
      return "depth";
  }
  return "?";
}

bool enabled(const FeatureFlags& flags, Feature feature) {
  switch (feature) {
    case Feature::kPosition:
      return flags.position;
    case Feature::kAttribute:
      return flags.attribute;
    case Feature::kDepth:
      return flags.depth;
  }
  return false;
}

PreparedInstance mutate_feature(const PreparedInstance& prepared, const Instance& instance, Feature feature,
                                const Vocabulary& vocab, const RelationSchema& schema, const ModelConfig& config,
                                Rng& rng) {
  PreparedInstance out = prepared;
  switch (feature) {
    case Feature::kPosition:
      for (auto& p : out.positions) {
        BBox box;
        box.w = static_cast<int>(rng.uniform_int(1, instance.width));
        box.h = static_cast<int>(rng.uniform_int(1, instance.height));
        box.x = static_cast<int>(rng.uniform_int(0, instance.width - box.w));
        box.y = static_cast<int>(rng.uniform_int(0, instance.height - box.h));
        p = position_feature(box, instance.width, instance.height);
      }
      break;
    case Feature::kAttribute: {
      Instance copy = instance;
      for (auto& o : copy.objects) {
        o.caption = {"a", colors()[static_cast<std::size_t>(rng.uniform_int(0, 11))],
                     shapes()[static_cast<std::size_t>(rng.uniform_int(0, 2))],
                     categories()[static_cast<std::size_t>(rng.uniform_int(0, 5))]};
      }
      out.pairs = prepare_instance(copy, vocab, schema, config).pairs;
      break;
    }
    case Feature::kDepth:
      for (auto& o : out.objects)
        for (auto& v : o.depth.pixels) v = rng.uniform();
      break;
  }
  return out;
}

std::size_t sensitive_mutations(const MoreFormer& model, const Instance& instance, Feature feature,
                                const Vocabulary& vocab, const RelationSchema& schema, std::size_t trials,
                                std::uint64_t seed) {
  const PreparedInstance base = prepare_instance(instance, vocab, schema, model.config());
  const auto reference = model.scores(base);
  Rng rng(seed);
  std::size_t changed = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const PreparedInstance mutated = mutate_feature(base, instance, feature, vocab, schema, model.config(), rng);
    if (model.scores(mutated) != reference) ++changed;
  }
  return changed;
}

std::vector<FeatureFlags> ablation_grid() {
  return {{false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
          {true, true, false},   {true, false, true},  {false, true, true},  {true, true, true}};
}

const AblationRow& AblationReport::row(const FeatureFlags& flags) const {
  for (const auto& r : rows)
    if (r.flags == flags) return r;
  throw InputError("ablation report has no row " + flags.to_string());
}

std::string AblationReport::to_table() const {
  std::ostringstream out;
  out << "P  A  D  | Accuracy  F1-Score | Dev F1 (median)\n";
  out << "---------+--------------------+----------------\n";
  auto mark = [](bool b) { return b ? "x  " : ".  "; };
  for (const auto& r : rows) {
    out << mark(r.flags.position) << mark(r.flags.attribute) << mark(r.flags.depth) << "| " << std::left
        << std::setw(10) << pct(r.test_accuracy) << std::setw(9) << pct(r.test_f1) << "| " << pct(r.median_dev_f1)
        << '\n';
  }
  return out.str();
}

std::string AblationReport::to_json() const {
  Json rows_json = Json::array();
  for (const auto& r : rows) {
    rows_json.push_back({{"features", r.flags.to_string()},
                         {"dev_f1", r.dev_f1},
                         {"median_dev_f1", r.median_dev_f1},
                         {"test_accuracy", r.test_accuracy},
                         {"test_f1", r.test_f1},
                         {"purity_verified", r.purity_verified}});
  }
  return Json{{"seeds", seeds}, {"rows", rows_json}}.dump(2);
}

AblationReport ablate(const Corpus& corpus, const Vocabulary& vocab, const RelationSchema& schema,
                      const ModelConfig& base, const TrainConfig& train_config, std::span<const FeatureFlags> grid,
                      std::span<const std::uint64_t> seeds, std::ostream* progress) {
  if (seeds.empty()) throw InputError("ablate: at least one seed required");
  if (corpus.dev.empty()) throw InputError("ablate: empty dev split");
  constexpr std::size_t kPurityInstances = 3;
  constexpr std::size_t kPurityTrials = 5;
  AblationReport report;
  report.seeds.assign(seeds.begin(), seeds.end());
  for (const auto& flags : grid) {
    ModelConfig mc = base;
    mc.features = flags;
    const auto train_set = prepare_all(corpus.train, vocab, schema, mc);
    const auto dev_set = prepare_all(corpus.dev, vocab, schema, mc);
    const auto test_set = prepare_all(corpus.test, vocab, schema, mc);
    AblationRow row;
    row.flags = flags;
    struct Outcome {
      double dev;
      double accuracy;
      double f1;
    };
    std::vector<Outcome> outcomes;
    for (std::uint64_t seed : seeds) {
      mc.init_seed = seed;
      MoreFormer model(mc);
      for (Feature f : kAllFeatures) {
        if (enabled(flags, f)) continue;
        for (std::size_t i = 0; i < std::min(kPurityInstances, corpus.dev.size()); ++i) {
          if (sensitive_mutations(model, corpus.dev[i], f, vocab, schema, kPurityTrials, mix_seed(seed, i)) != 0) {
            throw EvaluationError("ablate: disabled " + to_string(f) + " still changes logits in cell " +
                                  flags.to_string());
          }
        }
      }
      row.purity_verified = true;
      TrainConfig tc = train_config;
      tc.features = flags;
      tc.seed = seed;
      const TrainResult tr = train(model, train_set, dev_set, tc);
      const auto test_records = predict_pairs(model, test_set, tc.threads);
      const MetricsReport m = evaluate(test_records, schema);
      outcomes.push_back({tr.best_dev_f1, m.accuracy, m.micro.f1});
      row.dev_f1.push_back(tr.best_dev_f1);
      if (progress) {
        *progress << "cell " << flags.to_string() << " seed " << seed << ": dev F1 " << pct(tr.best_dev_f1)
                  << " (epoch " << tr.best_epoch << "), test F1 " << pct(m.micro.f1) << std::endl;
      }
    }
    std::vector<std::size_t> order(outcomes.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return outcomes[a].dev < outcomes[b].dev; });
    const std::size_t n = order.size();
    row.median_dev_f1 =
        n % 2 ? outcomes[order[n / 2]].dev : 0.5 * (outcomes[order[n / 2 - 1]].dev + outcomes[order[n / 2]].dev);
    const Outcome& mid = outcomes[order[(n - 1) / 2]];
    row.test_accuracy = mid.accuracy;
    row.test_f1 = mid.f1;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace morelab

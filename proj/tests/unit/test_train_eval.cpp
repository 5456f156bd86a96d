#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "morelab/errors.hpp"
#include "morelab/train_eval.hpp"
#include "test_util.hpp"

using namespace morelab;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Fixture {
  RelationSchema schema = RelationSchema::make_default();
  Vocabulary vocab = generator_vocabulary();
  Corpus corpus;
  ModelConfig config;
  std::vector<PreparedInstance> train_set, dev_set;

  Fixture() {
    corpus = generate_corpus(5, SplitSizes{8, 4, 1}, schema, GeneratorConfig{});
    config = ModelConfig::toy(vocab.size());
    train_set = prepare_all(corpus.train, vocab, schema, config);
    dev_set = prepare_all(corpus.dev, vocab, schema, config);
  }

  TrainConfig train_config(std::size_t epochs) const {
    TrainConfig tc;
    tc.epochs = epochs;
    tc.batch_size = 8;
    tc.seed = 3;
    tc.threads = 1;
    return tc;
  }
};

// Per-label brute force; micro counts are summed from the per-label tallies.
struct OracleMetrics {
  double accuracy, precision, recall, f1, macro_f1;
  std::size_t tp, predicted, gold;
  std::vector<double> label_f1;
};

double oracle_f1(double tp, double pred, double gold) {
  const double p = pred > 0 ? tp / pred : 0.0;
  const double r = gold > 0 ? tp / gold : 0.0;
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

OracleMetrics oracle_metrics(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold,
                             std::size_t labels, std::size_t none) {
  OracleMetrics o{};
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == gold[i];
  o.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  double macro = 0;
  for (std::size_t l = 0; l < labels; ++l) {
    if (l == none) continue;
    std::size_t tp = 0, p = 0, g = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == l) ++p;
      if (gold[i] == l) ++g;
      if (pred[i] == l && gold[i] == l) ++tp;
    }
    o.tp += tp;
    o.predicted += p;
    o.gold += g;
    o.label_f1.push_back(oracle_f1(tp, p, g));
    macro += o.label_f1.back();
  }
  o.macro_f1 = macro / static_cast<double>(labels - 1);
  o.precision = o.predicted ? static_cast<double>(o.tp) / static_cast<double>(o.predicted) : 0.0;
  o.recall = o.gold ? static_cast<double>(o.tp) / static_cast<double>(o.gold) : 0.0;
  o.f1 = oracle_f1(o.tp, o.predicted, o.gold);
  return o;
}

std::size_t draw_label(Rng& rng, std::size_t labels, std::size_t none) {
  return rng.bernoulli(0.5) ? none : static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(labels) - 1));
}

}  // namespace

// ---------------------------------------------------------------- AdamW

TEST_CASE("adamw decay only scales weights") {
  Tensor w = Tensor::from_values({2.0, -3.0, 0.5});
  std::vector<Tensor*> params{&w};
  std::vector<std::vector<double>> grads{{0.0, 0.0, 0.0}};
  AdamWState state;
  adamw_step(params, grads, state, {0.1, 0.9, 0.999, 1e-8, 0.01});
  CHECK(w[0] == 2.0 - 0.001 * 2.0);
  CHECK(w[1] == -3.0 - 0.001 * -3.0);
  CHECK(w[2] == doctest::Approx(0.5 * 0.999).epsilon(1e-15));
  CHECK(state.step == 1);
}

TEST_CASE("adamw first step closed form") {
  Tensor w = Tensor::from_values({1.0});
  std::vector<Tensor*> params{&w};
  std::vector<std::vector<double>> grads{{1.0}};
  AdamWState state;
  adamw_step(params, grads, state, {0.1, 0.9, 0.999, 1e-8, 0.0});
  CHECK(std::abs((w[0] - 1.0) - (-0.1)) < 1e-6);
}

TEST_CASE("adamw constant gradient step tends to lr") {
  Tensor w = Tensor::from_values({0.0});
  std::vector<Tensor*> params{&w};
  std::vector<std::vector<double>> grads{{0.37}};
  AdamWState state;
  const AdamWConfig cfg{1e-3, 0.9, 0.999, 1e-8, 0.0};
  double last = 0.0;
  for (int i = 0; i < 3000; ++i) {
    const double before = w[0];
    adamw_step(params, grads, state, cfg);
    last = w[0] - before;
  }
  CHECK(std::abs(std::abs(last) - cfg.lr) < 1e-9);
  CHECK(last < 0.0);
}

TEST_CASE("adamw without momentum or decay is sign SGD") {
  Rng rng(4);
  Tensor w = testing::random_tensor({5, 3}, rng);
  const Tensor start = w;
  std::vector<Tensor*> params{&w};
  std::vector<std::vector<double>> grads{std::vector<double>(15)};
  for (double& g : grads[0]) g = rng.normal();
  AdamWState state;
  const AdamWConfig cfg{0.05, 0.0, 0.0, 1e-8, 0.0};
  for (int step = 0; step < 3; ++step) {
    const Tensor before = w;
    adamw_step(params, grads, state, cfg);
    for (std::size_t i = 0; i < 15; ++i) {
      const double g = grads[0][i];
      CHECK(w[i] == before[i] - cfg.lr * g / (std::abs(g) + cfg.eps));
      CHECK(std::abs((w[i] - before[i]) + cfg.lr * (g > 0 ? 1.0 : -1.0)) < 1e-8);
    }
  }
  CHECK(testing::max_abs_diff(w, start) > 0.1);
}

TEST_CASE("adamw rejects non-finite gradients without touching state") {
  Tensor a = Tensor::from_values({1.0, 2.0});
  Tensor b = Tensor::from_values({3.0});
  std::vector<Tensor*> params{&a, &b};
  AdamWState state;
  const AdamWConfig cfg;
  adamw_step(params, std::vector<std::vector<double>>{{0.1, 0.2}, {0.3}}, state, cfg);
  const Tensor a0 = a, b0 = b;
  const auto m0 = state.m;
  for (double bad : {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()}) {
    CHECK_THROWS_AS(adamw_step(params, std::vector<std::vector<double>>{{0.1, 0.2}, {bad}}, state, cfg),
                    EvaluationError);
    CHECK(a.storage() == a0.storage());
    CHECK(b.storage() == b0.storage());
    CHECK(state.step == 1);
    CHECK(state.m == m0);
  }
  CHECK_THROWS_AS(adamw_step(params, std::vector<std::vector<double>>{{0.1}, {0.3}}, state, cfg), DimensionError);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = TrainConfig{};
  c.lr = -1.0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = TrainConfig{};
  CHECK(c.batch_size == 32);
  CHECK(c.dropout == 0.5);
  CHECK(c.lr == 1e-3);
}

// ---------------------------------------------------------------- metrics

TEST_CASE("evaluate matches a counting oracle on 1000 random sets") {
  const RelationSchema schema = RelationSchema::make_default();
  const std::size_t k = schema.size(), none = schema.none_index();
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 200));
    std::vector<std::size_t> pred(n), gold(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = draw_label(rng, k, none);
      pred[i] = rng.bernoulli(0.4) ? gold[i] : draw_label(rng, k, none);
    }
    const MetricsReport r = evaluate(pred, gold, schema);
    const OracleMetrics o = oracle_metrics(pred, gold, k, none);
    REQUIRE(r.counts.true_positive == o.tp);
    REQUIRE(r.counts.predicted_positive == o.predicted);
    REQUIRE(r.counts.gold_positive == o.gold);
    CHECK(std::abs(r.accuracy - o.accuracy) <= 1e-12);
    CHECK(std::abs(r.micro.precision - o.precision) <= 1e-12);
    CHECK(std::abs(r.micro.recall - o.recall) <= 1e-12);
    CHECK(std::abs(r.micro.f1 - o.f1) <= 1e-12);
    CHECK(std::abs(r.macro.f1 - o.macro_f1) <= 1e-12);
    const auto [lo, hi] = std::minmax_element(o.label_f1.begin(), o.label_f1.end());
    CHECK(r.macro.f1 <= *hi + 1e-12);
    CHECK(r.macro.f1 >= *lo - 1e-12);
    std::size_t total = 0;
    for (const auto& row : r.confusion)
      for (auto c : row) total += c;
    CHECK(total == n);
  }
}

TEST_CASE("evaluate degenerate predictors") {
  const RelationSchema schema = RelationSchema::make_default();
  const std::size_t none = schema.none_index();
  const std::vector<std::size_t> gold{0, 3, none, 7, none, 20};
  const MetricsReport perfect = evaluate(gold, gold, schema);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.micro.precision == 1.0);
  CHECK(perfect.micro.recall == 1.0);
  CHECK(perfect.micro.f1 == 1.0);

  const std::vector<std::size_t> all_none(gold.size(), none);
  const MetricsReport lazy = evaluate(all_none, gold, schema);
  CHECK(lazy.micro.recall == 0.0);
  CHECK(lazy.micro.precision == 0.0);
  CHECK(lazy.micro.f1 == 0.0);
  CHECK(lazy.accuracy == doctest::Approx(2.0 / 6.0).epsilon(1e-15));

  const std::vector<std::size_t> bad{0, 3, none, 7, none, 22};
  CHECK_THROWS_AS(evaluate(bad, gold, schema), SchemaError);
  CHECK_THROWS_AS(evaluate(std::vector<std::size_t>{0}, gold, schema), InputError);
}

TEST_CASE("record evaluation fills the cardinality table") {
  const RelationSchema schema = RelationSchema::make_default();
  const std::size_t none = schema.none_index();
  std::vector<PairRecord> recs{
      {0, 0, 0, 1, 1, Cell::kOneOne, 1},      {1, 0, 0, 2, none, Cell::kOneMany, 2},
      {1, 0, 1, none, none, Cell::kOneMany, 2}, {2, 0, 0, none, 5, Cell::kManyMany, 2},
  };
  const MetricsReport r = evaluate(recs, schema);
  REQUIRE(r.cells.size() == 4);
  CHECK(r.cells[0].counts.pairs == 1);
  CHECK(r.cells[0].micro.f1 == 1.0);
  CHECK(r.cells[1].counts.pairs == 2);
  CHECK(r.cells[1].none_ratio == 0.5);
  CHECK(r.cells[1].accuracy == 0.5);
  CHECK(r.cells[2].counts.pairs == 0);
  CHECK(r.cells[3].gold_none == 1);
  CHECK(r.disambiguation.full.true_positive == 1);
  CHECK(r.disambiguation.full.predicted == 2);
  CHECK(r.disambiguation.full.gold == 2);
  CHECK(r.disambiguation.multi_object.gold == 1);
  CHECK(r.disambiguation.multi_object.true_positive == 0);
  const std::string json = r.to_json();
  CHECK(json.find("\"macro_f1\"") != std::string::npos);
  CHECK(json.find("\"ent=1,obj>1\"") != std::string::npos);
  CHECK(r.to_table().find("obj>1") != std::string::npos);
}

TEST_CASE("disambiguation matches an exhaustive matcher") {
  const std::size_t none = 21;
  Rng rng(2024);
  auto oracle = [&](const std::vector<Triple>& pred, const std::vector<Triple>& gold,
                    const std::vector<std::size_t>& objects, bool multi_only) {
    std::array<std::size_t, 3> c{};  // tp, predicted, gold
    auto keep = [&](const Triple& t) { return !multi_only || objects[t.instance] > 1; };
    for (const auto& g : gold)
      if (g.relation != none && keep(g)) ++c[2];
    for (const auto& p : pred) {
      if (p.relation == none || !keep(p)) continue;
      ++c[1];
      bool hit = false;
      for (const auto& g : gold)
        hit |= g.instance == p.instance && g.entity == p.entity && g.object == p.object && g.relation != none;
      c[0] += hit;
    }
    return c;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t instances = 4;
    std::vector<std::size_t> objects(instances);
    std::vector<Triple> gold, pred;
    for (std::size_t i = 0; i < instances; ++i) {
      objects[i] = static_cast<std::size_t>(rng.uniform_int(1, 3));
      const auto ents = static_cast<std::size_t>(rng.uniform_int(1, 2));
      for (std::size_t e = 0; e < ents; ++e)
        for (std::size_t o = 0; o < objects[i]; ++o) {
          gold.push_back({i, e, o, draw_label(rng, 22, none)});
          if (rng.bernoulli(0.8)) pred.push_back({i, e, o, draw_label(rng, 22, none)});
        }
    }
    // Some predictions reference pairs absent from the gold set.
    if (rng.bernoulli(0.5)) pred.push_back({0, 5, 0, 3});
    const auto r = disambiguation_eval(pred, gold, objects, none);
    const auto full = oracle(pred, gold, objects, false);
    const auto multi = oracle(pred, gold, objects, true);
    CHECK(r.full.true_positive == full[0]);
    CHECK(r.full.predicted == full[1]);
    CHECK(r.full.gold == full[2]);
    CHECK(r.multi_object.true_positive == multi[0]);
    CHECK(r.multi_object.predicted == multi[1]);
    CHECK(r.multi_object.gold == multi[2]);
    const Prf expect = prf(full[0], full[1], full[2]);
    CHECK(r.full.scores.f1 == expect.f1);
  }
}

TEST_CASE("disambiguation definition cases and monotonicity") {
  const std::size_t none = 21;
  const std::vector<std::size_t> objects{2};
  const std::vector<Triple> gold{{0, 0, 0, 4}, {0, 0, 1, none}};
  // Perfect non-none predictions.
  const std::vector<Triple> perfect{{0, 0, 0, 4}};
  CHECK(disambiguation_eval(perfect, gold, objects, none).full.scores.f1 == 1.0);
  // The right pair with a gold none is not a hit.
  const std::vector<Triple> wrong{{0, 0, 1, 4}};
  CHECK(disambiguation_eval(wrong, gold, objects, none).full.true_positive == 0);
  // A wrong relation on a non-none gold pair still counts.
  const std::vector<Triple> other{{0, 0, 0, 9}};
  CHECK(disambiguation_eval(other, gold, objects, none).full.true_positive == 1);

  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Triple> g, p;
    for (std::size_t o = 0; o < 6; ++o) {
      g.push_back({0, 0, o, rng.bernoulli(0.5) ? none : o});
      if (rng.bernoulli(0.3)) p.push_back({0, 0, o, rng.bernoulli(0.5) ? none : 2});
    }
    const std::vector<std::size_t> objs{6};
    const auto before = disambiguation_eval(p, g, objs, none);
    for (const auto& t : g) {
      if (t.relation == none) continue;
      const bool present = std::any_of(p.begin(), p.end(), [&](const Triple& q) { return q.object == t.object; });
      if (present) continue;
      p.push_back(t);
      break;
    }
    const auto after = disambiguation_eval(p, g, objs, none);
    CHECK(after.full.true_positive >= before.full.true_positive);
    CHECK(after.full.true_positive - before.full.true_positive <= 1);
    CHECK(after.full.predicted - before.full.predicted == after.full.true_positive - before.full.true_positive);
  }
}

TEST_CASE("kappa oracles") {
  const std::vector<std::size_t> a{0, 0, 1, 1, 2, 2, 0, 1, 2, 2};
  const std::vector<std::size_t> b{0, 1, 1, 2, 2, 2, 0, 0, 1, 2};
  // Confusion [[2,1,0],[1,1,1],[0,1,3]], marginals 3/3/4: weighted disagreement 2/10
  // against an expected 4.5/10.
  CHECK(std::abs(cohen_kappa_weighted(a, b, 3) - 5.0 / 9.0) <= 1e-12);
  CHECK(cohen_kappa_weighted(a, a, 3) == 1.0);
  CHECK(cohen_kappa_weighted(a, a, 3, KappaWeights::kUnweighted) == 1.0);

  const std::vector<std::size_t> x{0, 0, 1, 1}, y{0, 1, 0, 1};
  CHECK(std::abs(cohen_kappa_weighted(x, y, 2)) <= 1e-12);
  CHECK(std::abs(cohen_kappa_weighted(x, y, 2, KappaWeights::kUnweighted)) <= 1e-12);

  const std::vector<std::size_t> same{1, 1, 1};
  CHECK_THROWS_AS(cohen_kappa_weighted(same, same, 3), EvaluationError);
  CHECK_THROWS_AS(cohen_kappa_weighted(std::vector<std::size_t>{0}, std::vector<std::size_t>{0}, 2), InputError);
  CHECK_THROWS_AS(cohen_kappa_weighted(x, a, 3), InputError);
  CHECK_THROWS_AS(cohen_kappa_weighted(x, y, 1), InputError);
}

TEST_CASE("kappa matches a confusion-matrix oracle, is symmetric and relabel invariant") {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const auto k = static_cast<std::size_t>(rng.uniform_int(2, 6));
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 60));
    std::vector<std::size_t> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1));
      b[i] = rng.bernoulli(0.6) ? a[i] : static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(k) - 1));
    }
    // Oracle: p_o and p_e over weighted agreement 1 - w.
    std::vector<std::vector<double>> conf(k, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < n; ++i) conf[a[i]][b[i]] += 1.0 / static_cast<double>(n);
    double po = 0, pe = 0;
    bool defined = false;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        double ri = 0, cj = 0;
        for (std::size_t t = 0; t < k; ++t) {
          ri += conf[i][t];
          cj += conf[t][j];
        }
        const double agree = 1.0 - std::abs(double(i) - double(j)) / double(k - 1);
        po += agree * conf[i][j];
        pe += agree * ri * cj;
        if (i != j && ri * cj > 0) defined = true;
      }
    if (!defined) {
      CHECK_THROWS_AS(cohen_kappa_weighted(a, b, k), EvaluationError);
      continue;
    }
    const double kappa = cohen_kappa_weighted(a, b, k);
    CHECK(std::abs(kappa - (po - pe) / (1.0 - pe)) <= 1e-12);
    CHECK(std::abs(kappa - cohen_kappa_weighted(b, a, k)) <= 1e-12);
    CHECK(kappa <= 1.0 + 1e-12);
    CHECK(kappa >= -1.0 - 1e-12);
    // Reversal preserves |i - j|; any permutation preserves nominal agreement.
    std::vector<std::size_t> ra(n), rb(n), pa(n), pb(n);
    std::vector<std::size_t> perm(k);
    for (std::size_t i = 0; i < k; ++i) perm[i] = i;
    rng.shuffle(std::span<std::size_t>(perm));
    for (std::size_t i = 0; i < n; ++i) {
      ra[i] = k - 1 - a[i];
      rb[i] = k - 1 - b[i];
      pa[i] = perm[a[i]];
      pb[i] = perm[b[i]];
    }
    CHECK(std::abs(kappa - cohen_kappa_weighted(ra, rb, k)) <= 1e-12);
    CHECK(std::abs(cohen_kappa_weighted(a, b, k, KappaWeights::kUnweighted) -
                   cohen_kappa_weighted(pa, pb, k, KappaWeights::kUnweighted)) <= 1e-12);
  }
}

// ---------------------------------------------------------------- training

TEST_CASE("fixed seed reproduces the loss curve bitwise") {
  Fixture f;
  const TrainConfig tc = f.train_config(3);
  MoreFormer a(f.config), b(f.config);
  const TrainResult ra = train(a, f.train_set, f.dev_set, tc);
  const TrainResult rb = train(b, f.train_set, f.dev_set, tc);
  REQUIRE(ra.log.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(std::memcmp(&ra.log[e].loss, &rb.log[e].loss, sizeof(double)) == 0);
    CHECK(ra.log[e].dev_f1 == rb.log[e].dev_f1);
  }
  CHECK(ra.csv() == rb.csv());
  CHECK(ra.csv().rfind("epoch,loss,dev_f1\n", 0) == 0);
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    CHECK(a.parameters().at(i).storage() == b.parameters().at(i).storage());
  CHECK(ra.log.back().loss < ra.log.front().loss);
}

TEST_CASE("training keeps the best dev snapshot and checkpoints round-trip") {
  Fixture f;
  const auto dir = testing::temp_dir("train_ckpt");
  const TrainConfig tc = f.train_config(4);
  MoreFormer model(f.config);
  const TrainResult r = train(model, f.train_set, f.dev_set, tc, dir / "best");
  double best = -1;
  for (const auto& e : r.log) best = std::max(best, e.dev_f1);
  CHECK(r.best_dev_f1 == best);
  CHECK(r.log[r.best_epoch - 1].dev_f1 == best);

  MoreFormer loaded = MoreFormer::load(dir / "best");
  for (const auto& inst : f.dev_set) CHECK(loaded.scores(inst) == model.scores(inst));
  loaded.save(dir / "again");
  CHECK(slurp(dir / "best.bin") == slurp(dir / "again.bin"));
  CHECK(slurp(dir / "best.manifest.json") == slurp(dir / "again.manifest.json"));
  CHECK_THROWS(MoreFormer::load(dir / "missing"));
}

TEST_CASE("divergence restores the last good parameters") {
  Fixture f;
  TrainConfig tc = f.train_config(2);
  tc.lr = 1e200;
  MoreFormer model(f.config);
  const auto start = model.parameters().snapshot();
  CHECK_THROWS_AS(train(model, f.train_set, f.dev_set, tc), DivergenceError);
  CHECK(model.parameters().snapshot() == start);
}

TEST_CASE("training rejects mismatched feature flags") {
  Fixture f;
  TrainConfig tc = f.train_config(1);
  tc.features = FeatureFlags::parse("p");
  MoreFormer model(f.config);
  CHECK_THROWS_AS(train(model, f.train_set, f.dev_set, tc), InputError);
}

TEST_CASE("parallel prediction matches serial prediction") {
  Fixture f;
  MoreFormer model(f.config);
  const auto serial = predict_pairs(model, f.train_set, 1);
  const auto parallel = predict_pairs(model, f.train_set, 3);
  REQUIRE(serial.size() == parallel.size());
  std::size_t pairs = 0;
  for (const auto& inst : f.train_set) pairs += inst.pairs.size();
  CHECK(serial.size() == pairs);
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].predicted == parallel[i].predicted);
    CHECK(serial[i].gold == parallel[i].gold);
    CHECK(serial[i].instance == parallel[i].instance);
  }
  CHECK(std::isfinite(mean_loss(model, f.train_set)));
}

// ---------------------------------------------------------------- ablation

TEST_CASE("ablation grid layout") {
  const auto grid = ablation_grid();
  REQUIRE(grid.size() == 8);
  std::vector<std::string> names;
  for (const auto& g : grid) names.push_back(g.to_string());
  CHECK(names == std::vector<std::string>{"none", "p", "a", "d", "p,a", "p,d", "a,d", "p,a,d"});
}

TEST_CASE("disabled features are inert and enabled ones are live") {
  Fixture f;
  for (const auto& flags : ablation_grid()) {
    ModelConfig mc = f.config;
    mc.features = flags;
    mc.init_seed = 2;
    const MoreFormer model(mc);
    for (Feature feat : kAllFeatures) {
      const std::size_t changed = sensitive_mutations(model, f.corpus.train[1], feat, f.vocab, f.schema, 10, 17);
      if (enabled(flags, feat)) {
        CHECK_MESSAGE(changed >= 1, flags.to_string() << " " << to_string(feat));
      } else {
        CHECK_MESSAGE(changed == 0, flags.to_string() << " " << to_string(feat));
      }
    }
  }
}

TEST_CASE("ablate reports one row per cell") {
  Fixture f;
  Corpus small = generate_corpus(9, SplitSizes{6, 3, 3}, f.schema, GeneratorConfig{});
  TrainConfig tc = f.train_config(1);
  const std::vector<FeatureFlags> grid{FeatureFlags::parse("none"), FeatureFlags::parse("p,a,d")};
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  std::ostringstream progress;
  const AblationReport r = ablate(small, f.vocab, f.schema, f.config, tc, grid, seeds, &progress);
  REQUIRE(r.rows.size() == 2);
  for (const auto& row : r.rows) {
    CHECK(row.purity_verified);
    REQUIRE(row.dev_f1.size() == 3);
    auto sorted = row.dev_f1;
    std::sort(sorted.begin(), sorted.end());
    CHECK(row.median_dev_f1 == sorted[1]);
  }
  CHECK(r.row(FeatureFlags::parse("none")).flags == grid[0]);
  CHECK_THROWS_AS(r.row(FeatureFlags::parse("p")), InputError);
  CHECK(r.to_table().find("P  A  D") != std::string::npos);
  CHECK(r.to_json().find("\"median_dev_f1\"") != std::string::npos);
  CHECK(progress.str().find("seed 2") != std::string::npos);
}

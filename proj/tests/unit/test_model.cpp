#include <chrono>
#include <cmath>

#include "doctest.h"
#include "morelab/errors.hpp"
#include "morelab/model.hpp"
#include "test_util.hpp"

using namespace morelab;

namespace {

ModelConfig gradcheck_config() {
  ModelConfig c = ModelConfig::tiny(0);
  c.init_seed = 5;
  return c;
}

}  // namespace

TEST_CASE("gradient-check instance has the advertised shape") {
  const RelationSchema schema = RelationSchema::make_default();
  const Instance small = gradcheck_instance("small");
  CHECK(small.objects.size() == 2);
  CHECK(small.entities.size() == 1);
  const Vocabulary vocab = generator_vocabulary();
  ModelConfig c = gradcheck_config();
  c.vocab_size = vocab.size();
  const PreparedInstance p = prepare_instance(small, vocab, schema, c);
  REQUIRE(p.pairs.size() == 2);
  for (const auto& pair : p.pairs) CHECK(pair.text.length() == 12);
  CHECK(p.pairs[0].label == schema.index("rel_01"));
  CHECK(p.pairs[1].label == schema.none_index());
  CHECK(gradcheck_instance("medium").gold.size() == 6);
  CHECK_THROWS_AS(gradcheck_instance("huge"), InputError);
}

TEST_CASE("end-to-end gradients match central differences") {
  const RelationSchema schema = RelationSchema::make_default();
  const auto start = std::chrono::steady_clock::now();
  const GradCheckResult r = model_grad_check(gradcheck_config(), gradcheck_instance("small"), schema);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  MESSAGE("max rel err " << r.max_rel_error << " over " << r.coordinates << " coordinates in " << secs << " s");
  CHECK(r.max_rel_error < 1e-4);
  CHECK(r.coordinates > 1000);
}

TEST_CASE("end-to-end gradients for every head and feature subset") {
  const RelationSchema schema = RelationSchema::make_default();
  for (const char* spec : {"none", "p", "a,d"}) {
    ModelConfig c = gradcheck_config();
    c.fusion_layers = 1;
    c.features = FeatureFlags::parse(spec);
    CHECK_MESSAGE(model_grad_check(c, gradcheck_instance("small"), schema).max_rel_error < 1e-4, spec);
  }
  ModelConfig b = gradcheck_config();
  b.head = HeadKind::kBaseline;
  CHECK(model_grad_check(b, gradcheck_instance("small"), schema).max_rel_error < 1e-4);
}

TEST_CASE("prepared pairs carry captions only with the attribute feature") {
  const RelationSchema schema = RelationSchema::make_default();
  const Vocabulary vocab = generator_vocabulary();
  const Instance inst = gradcheck_instance("medium");
  ModelConfig c = ModelConfig::toy(vocab.size());
  const PreparedInstance with = prepare_instance(inst, vocab, schema, c);
  c.features.attribute = false;
  const PreparedInstance without = prepare_instance(inst, vocab, schema, c);
  REQUIRE(with.pairs.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(with.pairs[i].text.attribute_marker_index.has_value());
    CHECK_FALSE(without.pairs[i].text.attribute_marker_index.has_value());
    CHECK(with.pairs[i].text.length() == without.pairs[i].text.length() + 6);
  }
  CHECK(with.pairs[4].entity == 1);
  CHECK(with.pairs[4].object == 1);
  CHECK(with.cell == Cell::kManyMany);
  c.max_objects = 2;
  CHECK_THROWS_AS(prepare_instance(inst, vocab, schema, c), InputError);
}

TEST_CASE("model outputs are deterministic and checkpoints round-trip") {
  const RelationSchema schema = RelationSchema::make_default();
  const Vocabulary vocab = generator_vocabulary();
  const ModelConfig c = ModelConfig::toy(vocab.size());
  const PreparedInstance p = prepare_instance(gradcheck_instance("medium"), vocab, schema, c);
  const MoreFormer a(c), b(c);
  const auto sa = a.scores(p);
  CHECK(sa == b.scores(p));
  REQUIRE(sa.size() == 6);
  for (const auto& row : sa) CHECK(row.size() == schema.size());
  CHECK(a.predict(p).size() == 6);

  const auto dir = testing::temp_dir("model_ckpt");
  a.save(dir / "m");
  const MoreFormer loaded = MoreFormer::load(dir / "m");
  CHECK(loaded.config().to_json() == c.to_json());
  CHECK(loaded.scores(p) == sa);

  ModelConfig other = c;
  other.init_seed = 9;
  CHECK(MoreFormer(other).scores(p) != sa);
}

TEST_CASE("baseline head ignores the fusion-only parameters") {
  const Vocabulary vocab = generator_vocabulary();
  ModelConfig c = ModelConfig::toy(vocab.size());
  c.head = HeadKind::kBaseline;
  MoreFormer m(c);
  CHECK(m.parameters().contains("baseline.mlp.hidden.weight"));
  CHECK_FALSE(m.parameters().contains("head.merge.weight"));
  CHECK_FALSE(m.parameters().contains("fusion.position.weight"));
}

#include "morelab/model.hpp"

#include <algorithm>
#include <tuple>

#include "json.hpp"
#include "morelab/errors.hpp"

namespace morelab {

PreparedInstance prepare_instance(const Instance& instance, const Vocabulary& vocab, const RelationSchema& schema,
                                  const ModelConfig& config) {
  if (instance.objects.empty() || instance.entities.empty())
    throw EmptySceneError("instance " + instance.id + " has no objects or no entities");
  if (instance.objects.size() > config.max_objects) {
    throw InputError("instance " + instance.id + " has " + std::to_string(instance.objects.size()) +
                     " objects, limit " + std::to_string(config.max_objects));
  }
  PreparedInstance out;
  out.id = instance.id;
  out.cell = instance.cell();
  out.num_entities = instance.entities.size();
  for (const auto& o : instance.objects) {
    out.objects.push_back(crop_and_rescale(instance.rgb, instance.depth, o.bbox, config.crop_size));
    out.positions.push_back(position_feature(o.bbox, instance.width, instance.height));
  }
  for (std::size_t e = 0; e < instance.entities.size(); ++e) {
    for (std::size_t o = 0; o < instance.objects.size(); ++o) {
      CandidatePair pair;
      pair.entity = e;
      pair.object = o;
      pair.label = schema.index(instance.gold_relation(e, o));
      std::optional<std::span<const std::string>> caption;
      if (config.features.attribute) caption = std::span<const std::string>(instance.objects[o].caption);
      pair.text = build_input(vocab, instance.title, instance.entities[e].span, caption, config.max_tokens);
      out.pairs.push_back(std::move(pair));
    }
  }
  return out;
}

std::vector<PreparedInstance> prepare_all(const std::vector<Instance>& instances, const Vocabulary& vocab,
                                          const RelationSchema& schema, const ModelConfig& config) {
  std::vector<PreparedInstance> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(prepare_instance(inst, vocab, schema, config));
  return out;
}

MoreFormer::MoreFormer(const ModelConfig& config) : config_(config), store_(std::make_unique<ParameterStore>()) {
  config_.validate();
  Rng rng(config_.init_seed);
  text_ = std::make_unique<TextEncoder>(*store_, config_, rng);
  visual_ = std::make_unique<VisualEncoder>(*store_, config_, rng);
  const std::size_t d = config_.hidden;
  if (config_.head == HeadKind::kFull) {
    fusion_ = std::make_unique<FusionEncoder>(*store_, config_, rng);
    position_ = Linear::create(*store_, "fusion.position", 5, d, rng);
    FullHead head;
    head.merge = Linear::create(*store_, "head.merge", 2 * d, d, rng);
    head.mlp = Mlp::create(*store_, "head.mlp", 2 * d, d, config_.num_labels, rng);
    head_ = head;
  } else {
    baseline_ = Mlp::create(*store_, "baseline.mlp", 2 * d, d, config_.num_labels, rng);
  }
}

Var MoreFormer::visual_stream(ForwardContext& ctx, const PreparedInstance& instance) const {
  const VisualEncoderState state = visual_->encode(ctx, instance.objects, config_.features.depth);
  if (config_.head == HeadKind::kBaseline) return state.pooled;
  return position_fuse(ctx.tape, state.pooled, instance.positions, position_, config_.features.position);
}

Var MoreFormer::pair_logits(ForwardContext& ctx, const CandidatePair& pair, Var visual) const {
  const TextEncoderState text = text_->encode(ctx, pair.text);
  if (config_.head == HeadKind::kBaseline) {
    Var entity = ops::slice_rows(text.last(), pair.text.entity_marker_index, 1);
    Var object = ops::slice_rows(visual, pair.object, 1);
    return classify_baseline(ctx, entity, object, *baseline_);
  }
  const auto& mask = pair.text.pad_mask;
  const bool padded = std::find(mask.begin(), mask.end(), false) != mask.end();
  const MultimodalState state = fusion_->encode(ctx, text.last(), visual, padded ? &mask : nullptr);
  return classify_full(ctx, state, pair.object, pair.text.entity_marker_index, pair.text.attribute_marker_index,
                       *head_);
}

std::vector<std::vector<double>> MoreFormer::scores(const PreparedInstance& instance) const {
  Tape tape(false);
  ForwardContext ctx{tape};
  Var visual = visual_stream(ctx, instance);
  std::vector<std::vector<double>> out;
  out.reserve(instance.pairs.size());
  for (const auto& pair : instance.pairs) {
    Var logits = pair_logits(ctx, pair, visual);
    const auto v = logits.value().data();
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

std::vector<std::size_t> MoreFormer::predict(const PreparedInstance& instance) const {
  std::vector<std::size_t> out;
  for (const auto& s : scores(instance)) out.push_back(argmax(s));
  return out;
}

Var MoreFormer::instance_loss(ForwardContext& ctx, const PreparedInstance& instance) const {
  if (instance.pairs.empty()) throw InputError("instance " + instance.id + " has no pairs");
  Var visual = visual_stream(ctx, instance);
  std::vector<Var> logits;
  std::vector<std::size_t> targets;
  for (const auto& pair : instance.pairs) {
    logits.push_back(pair_logits(ctx, pair, visual));
    targets.push_back(pair.label);
  }
  return ops::cross_entropy(ops::concat_rows(logits), targets);
}

void MoreFormer::save(const std::filesystem::path& stem) const {
  nlohmann::json extra;
  extra["model"] = nlohmann::json::parse(config_.to_json());
  save_checkpoint(*store_, stem, extra.dump());
}

MoreFormer MoreFormer::load(const std::filesystem::path& stem) {
  const auto extra = nlohmann::json::parse(read_checkpoint_extra(stem));
  if (!extra.contains("model")) throw SchemaError("checkpoint " + stem.string() + " has no model config");
  MoreFormer model(ModelConfig::from_json(extra["model"].dump()));
  load_checkpoint(*model.store_, stem);
  return model;
}

Instance gradcheck_instance(const std::string& size) {
  SceneSpec scene;
  std::vector<std::string> title;
  std::vector<EntityMention> mentions;
  if (size == "small") {
    scene.objects = {{{6, 8, 20, 18}, 2, "red", "round", "person"}, {{36, 34, 16, 24}, 1, "blue", "tall", "building"}};
    scene.entities = {{{"obama"}, "person"}};
    title = {"obama", "visits"};
    mentions = {{{0, 1}, 0, "person"}};
  } else if (size == "medium") {
    scene.objects = {{{4, 6, 22, 18}, 3, "red", "round", "person"},
                     {{36, 30, 18, 26}, 1, "blue", "tall", "building"},
                     {{30, 4, 14, 14}, 2, "green", "square", "vehicle"}};
    scene.entities = {{{"obama"}, "person"}, {{"louvre"}, "building"}};
    title = {"obama", "visits", "the", "louvre"};
    mentions = {{{0, 1}, 0, "person"}, {{3, 4}, 1, "building"}};
  } else {
    throw InputError("unknown gradient-check instance size '" + size + "' (small, medium)");
  }
  const RelationSchema schema = RelationSchema::make_default();
  Instance inst;
  inst.id = "gradcheck-" + size;
  inst.width = scene.width;
  inst.height = scene.height;
  inst.title = title;
  inst.entities = mentions;
  for (const auto& o : scene.objects)
    inst.objects.push_back({o.bbox, o.z_rank, caption_provider(o), o.color, o.shape, o.category});
  for (std::size_t e = 0; e < scene.entities.size(); ++e)
    for (std::size_t o = 0; o < scene.objects.size(); ++o)
      inst.gold.push_back({e, o, relation_rule(scene, e, o, schema)});
  std::tie(inst.rgb, inst.depth) = render(scene);
  return inst;
}

GradCheckResult model_grad_check(ModelConfig config, const Instance& instance, const RelationSchema& schema,
                                 double h) {
  std::vector<std::string> words = instance.title;
  for (const auto& o : instance.objects) words.insert(words.end(), o.caption.begin(), o.caption.end());
  const Vocabulary vocab = Vocabulary::from_words(words);
  config.vocab_size = vocab.size();
  config.num_labels = schema.size();
  MoreFormer model(config);
  const PreparedInstance prepared = prepare_instance(instance, vocab, schema, config);
  std::vector<Tensor*> params = model.parameters().all();
  return grad_check(
      [&](Tape& tape) {
        ForwardContext ctx{tape};
        return model.instance_loss(ctx, prepared);
      },
      params, h);
}

}  // namespace morelab

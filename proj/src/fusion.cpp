#include "morelab/fusion.hpp"

#include <algorithm>

#include "morelab/errors.hpp"

namespace morelab {

PositionFeature position_feature(const BBox& bbox, int image_width, int image_height) {
  validate_bbox(bbox, image_width, image_height);
  const double w = static_cast<double>(image_width);
  const double h = static_cast<double>(image_height);
  PositionFeature f;
  f.x_center = bbox.center_x() / w;
  f.y_center = bbox.center_y() / h;
  f.width = bbox.w / w;
  f.height = bbox.h / h;
  f.area = f.width * f.height;
  return f;
}

Var position_fuse(Tape& tape, Var pooled, std::span<const PositionFeature> features, const Linear& projection,
                  bool enabled) {
  if (!enabled) return pooled;
  if (features.size() != pooled.rows()) {
    throw DimensionError("position_fuse: " + std::to_string(features.size()) + " position features for " +
                         std::to_string(pooled.rows()) + " objects");
  }
  Tensor loc({features.size(), 5});
  for (std::size_t k = 0; k < features.size(); ++k) {
    const auto v = features[k].values();
    std::copy(v.begin(), v.end(), loc.row(k).begin());
  }
  return ops::add(pooled, projection(tape, tape.constant(std::move(loc))));
}

Var correlation_aggregate(Var text, Var visual) {
  Var sim = ops::matmul(text, ops::transpose(visual));
  return ops::matmul(ops::softmax(sim), visual);
}

FusionLayer::FusionLayer(ParameterStore& store, const std::string& prefix, const ModelConfig& config, Rng& rng)
    : heads_(config.heads) {
  const std::size_t d = config.hidden;
  const double eps = config.ln_eps;
  text_attention_ = SelfAttention::create(store, prefix + ".pgi.text", d, config.heads, rng);
  text_attention_norm_ = LayerNorm::create(store, prefix + ".pgi.text_norm", d, eps, rng);
  visual_attention_norm_ = LayerNorm::create(store, prefix + ".pgi.visual_norm", d, eps, rng);
  visual_query_ = Linear::create(store, prefix + ".pgi.visual.query", d, d, rng);
  visual_key_ = Linear::create(store, prefix + ".pgi.visual.key", d, d, rng);
  visual_value_ = Linear::create(store, prefix + ".pgi.visual.value", d, d, rng);
  visual_output_ = Linear::create(store, prefix + ".pgi.visual.output", d, d, rng);
  caf_w1_ = Linear::create(store, prefix + ".caf.w1", d, config.ffn, rng);
  caf_w3_ = Linear::create(store, prefix + ".caf.w3", d, config.ffn, rng, /*with_bias=*/false);
  caf_w2_ = Linear::create(store, prefix + ".caf.w2", config.ffn, d, rng);
  caf_norm_ = LayerNorm::create(store, prefix + ".caf.text_norm", d, eps, rng);
  visual_ffn_norm_ = LayerNorm::create(store, prefix + ".caf.visual_norm", d, eps, rng);
  visual_ffn_ = FeedForward::create(store, prefix + ".caf.visual_ffn", d, config.ffn, Activation::kGelu, rng);
}

StreamPair FusionLayer::prefix_guided(ForwardContext& ctx, Var text, Var visual,
                                      const std::vector<bool>* text_valid) const {
  Tape& t = ctx.tape;
  const std::size_t n = text.rows();
  const std::size_t m = visual.rows();
  if (text.cols() != visual.cols()) {
    throw DimensionError("prefix_guided: text width " + std::to_string(text.cols()) + " vs visual width " +
                         std::to_string(visual.cols()));
  }
  if (text_valid && text_valid->size() != n) throw DimensionError("prefix_guided: text mask length mismatch");

  StreamPair out;
  Var text_keys{}, text_values{};
  if (n > 0) {
    text_keys = text_attention_.key(t, text);
    text_values = text_attention_.value(t, text);
    Var ctx_t = multi_head_attention(ctx, text_attention_.query(t, text), text_keys, text_values, heads_, text_valid);
    out.text = ops::add(text_attention_norm_(t, text_attention_.output(t, ctx_t)), text);
  } else {
    out.text = text;
  }

  Var normed = visual_attention_norm_(t, visual);
  Var keys = visual_key_(t, normed);
  Var values = visual_value_(t, normed);
  std::vector<bool> valid(m, true);
  if (n > 0) {
    const std::array<Var, 2> kparts{keys, text_keys};
    const std::array<Var, 2> vparts{values, text_values};
    keys = ops::concat_rows(kparts);
    values = ops::concat_rows(vparts);
    if (text_valid) {
      valid.insert(valid.end(), text_valid->begin(), text_valid->end());
    } else {
      valid.resize(m + n, true);
    }
  }
  const bool any_masked = std::find(valid.begin(), valid.end(), false) != valid.end();
  Var ctx_v = multi_head_attention(ctx, visual_query_(t, normed), keys, values, heads_, any_masked ? &valid : nullptr);
  out.visual = ops::add(visual_output_(t, ctx_v), visual);
  return out;
}

StreamPair FusionLayer::correlation_fused(ForwardContext& ctx, Var text, Var visual) const {
  Tape& t = ctx.tape;
  StreamPair out;
  Var agg = correlation_aggregate(text, visual);
  Var inner = ops::relu(ops::add(caf_w1_(t, text), caf_w3_(t, agg)));
  out.text = ops::add(caf_norm_(t, caf_w2_(t, inner)), text);
  out.visual = ops::add(visual_ffn_(t, visual_ffn_norm_(t, visual)), visual);
  return out;
}

StreamPair FusionLayer::operator()(ForwardContext& ctx, Var text, Var visual,
                                   const std::vector<bool>* text_valid) const {
  StreamPair mid = prefix_guided(ctx, text, visual, text_valid);
  return correlation_fused(ctx, mid.text, mid.visual);
}

FusionEncoder::FusionEncoder(ParameterStore& store, const ModelConfig& config, Rng& rng) {
  for (std::size_t l = 0; l < config.fusion_layers; ++l) {
    layers_.emplace_back(store, "fusion.layer" + std::to_string(l), config, rng);
  }
}

MultimodalState FusionEncoder::encode(ForwardContext& ctx, Var text, Var visual,
                                      const std::vector<bool>* text_valid) const {
  MultimodalState state;
  state.text.push_back(text);
  state.visual.push_back(visual);
  for (const FusionLayer& layer : layers_) {
    StreamPair next = layer(ctx, state.text.back(), state.visual.back(), text_valid);
    state.text.push_back(next.text);
    state.visual.push_back(next.visual);
  }
  return state;
}

Mlp Mlp::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                std::size_t out, Rng& rng) {
  Mlp m;
  m.hidden = Linear::create(store, name + ".hidden", in, hidden, rng);
  m.output = Linear::create(store, name + ".output", hidden, out, rng);
  return m;
}

Var Mlp::operator()(ForwardContext& ctx, Var x) const {
  Tape& t = ctx.tape;
  if (ctx.training && ctx.dropout > 0.0 && ctx.rng) x = ops::dropout(x, ctx.dropout, *ctx.rng);
  return output(t, ops::gelu(hidden(t, x)));
}

Var classify_full(ForwardContext& ctx, const MultimodalState& state, std::size_t object,
                  std::size_t entity_marker, std::optional<std::size_t> attribute_marker, const FullHead& head) {
  Tape& t = ctx.tape;
  const Var& text = state.text.back();
  const Var& visual = state.visual.back();
  if (object >= visual.rows()) {
    throw IndexError("classify_full: object " + std::to_string(object) + " outside " +
                     std::to_string(visual.rows()) + " objects");
  }
  if (entity_marker >= text.rows() || (attribute_marker && *attribute_marker >= text.rows())) {
    throw IndexError("classify_full: marker index outside text of " + std::to_string(text.rows()) + " tokens");
  }
  Var h_object = ops::slice_rows(visual, object, 1);
  Var h_attr = attribute_marker ? ops::slice_rows(text, *attribute_marker, 1)
                                : t.constant(Tensor({1, text.cols()}, 0.0));
  const std::array<Var, 2> obj_parts{h_object, h_attr};
  Var merged = head.merge(t, ops::concat_cols(obj_parts));
  const std::array<Var, 2> parts{ops::slice_rows(text, entity_marker, 1), merged};
  return head.mlp(ctx, ops::concat_cols(parts));
}

Var classify_baseline(ForwardContext& ctx, Var entity, Var object, const Mlp& mlp) {
  const std::array<Var, 2> parts{entity, object};
  return mlp(ctx, ops::concat_cols(parts));
}

std::size_t argmax(std::span<const double> scores) {
  if (scores.empty()) throw DimensionError("argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

}  // namespace morelab

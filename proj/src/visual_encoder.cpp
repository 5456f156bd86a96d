#include "morelab/visual_encoder.hpp"

#include <algorithm>
#include <cmath>

#include "morelab/errors.hpp"

namespace morelab {

Raster resize_bilinear(const Raster& src, std::size_t out_h, std::size_t out_w) {
  Raster dst(src.channels, out_h, out_w);
  const double sy_scale = static_cast<double>(src.height) / static_cast<double>(out_h);
  const double sx_scale = static_cast<double>(src.width) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = std::clamp((y + 0.5) * sy_scale - 0.5, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = std::clamp((x + 0.5) * sx_scale - 0.5, 0.0, static_cast<double>(src.width - 1));
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double fx = sx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double top = src.at(c, y0, x0) + fx * (src.at(c, y0, x1) - src.at(c, y0, x0));
        const double bottom = src.at(c, y1, x0) + fx * (src.at(c, y1, x1) - src.at(c, y1, x0));
        dst.at(c, y, x) = top + fy * (bottom - top);
      }
    }
  }
  return dst;
}

Raster resize_nearest(const Raster& src, std::size_t out_h, std::size_t out_w) {
  Raster dst(src.channels, out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const std::size_t sy = std::min(src.height - 1, (2 * y + 1) * src.height / (2 * out_h));
    for (std::size_t x = 0; x < out_w; ++x) {
      const std::size_t sx = std::min(src.width - 1, (2 * x + 1) * src.width / (2 * out_w));
      for (std::size_t c = 0; c < src.channels; ++c) dst.at(c, y, x) = src.at(c, sy, sx);
    }
  }
  return dst;
}

namespace {

Raster crop(const Raster& src, const BBox& box) {
  Raster out(src.channels, static_cast<std::size_t>(box.h), static_cast<std::size_t>(box.w));
  for (std::size_t c = 0; c < src.channels; ++c)
    for (int y = 0; y < box.h; ++y)
      for (int x = 0; x < box.w; ++x)
        out.at(c, y, x) = src.at(c, static_cast<std::size_t>(box.y + y), static_cast<std::size_t>(box.x + x));
  return out;
}

}  // namespace

ObjectImage crop_and_rescale(const Raster& rgb, const Raster& depth, const BBox& bbox, std::size_t size) {
  if (rgb.channels != 3 || depth.channels != 1) throw DimensionError("crop_and_rescale: expected RGB and 1-channel depth");
  if (rgb.height != depth.height || rgb.width != depth.width) {
    throw DimensionError("crop_and_rescale: RGB and depth rasters differ in size");
  }
  validate_bbox(bbox, static_cast<int>(rgb.width), static_cast<int>(rgb.height));
  ObjectImage obj;
  obj.rgb = resize_bilinear(crop(rgb, bbox), size, size);
  obj.depth = resize_nearest(crop(depth, bbox), size, size);
  obj.source = bbox;
  return obj;
}

Raster depth_provider(std::span<const DepthLayer> objects, int width, int height) {
  Raster out(1, static_cast<std::size_t>(height), static_cast<std::size_t>(width), 0.0);
  if (objects.empty()) return out;
  int max_z = 0;
  for (const auto& o : objects) max_z = std::max(max_z, o.z_rank);
  if (max_z <= 0) throw GeometryError("depth_provider: z ranks must be positive");
  std::vector<DepthLayer> order(objects.begin(), objects.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.z_rank < b.z_rank; });
  for (const auto& o : order) {
    validate_bbox(o.bbox, width, height);
    const double nearness = static_cast<double>(o.z_rank) / static_cast<double>(max_z);
    for (int y = o.bbox.y; y < o.bbox.y + o.bbox.h; ++y)
      for (int x = o.bbox.x; x < o.bbox.x + o.bbox.w; ++x)
        out.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = nearness;
  }
  return out;
}

Tensor patchify(const Raster& raster, std::size_t patch) {
  if (patch == 0 || raster.height % patch != 0 || raster.width % patch != 0) {
    throw DimensionError("patchify: " + std::to_string(raster.height) + "x" + std::to_string(raster.width) +
                         " not divisible by patch " + std::to_string(patch));
  }
  const std::size_t rows = raster.height / patch;
  const std::size_t cols = raster.width / patch;
  const std::size_t feat = raster.channels * patch * patch;
  Tensor out({rows * cols, feat});
  for (std::size_t pr = 0; pr < rows; ++pr)
    for (std::size_t pc = 0; pc < cols; ++pc) {
      const std::size_t row = pr * cols + pc;
      std::size_t f = 0;
      for (std::size_t c = 0; c < raster.channels; ++c)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x) out.at(row, f++) = raster.at(c, pr * patch + y, pc * patch + x);
    }
  return out;
}

VisualEncoder::VisualEncoder(ParameterStore& store, const ModelConfig& config, Rng& rng)
    : crop_size_(config.crop_size), patch_size_(config.patch_size), max_objects_(config.max_objects) {
  const std::size_t d = config.hidden;
  const std::size_t p2 = config.patch_size * config.patch_size;
  rgb_projection_ = Linear::create(store, "visual.patch.rgb", 3 * p2, d, rng);
  depth_projection_ = Linear::create(store, "visual.patch.depth", p2, d, rng);
  position_embedding_ = &store.add("visual.patch.position", {config.patches_per_object(), d}, Init::kNormal002, rng);
  for (std::size_t l = 0; l < config.visual_layers; ++l) {
    const std::string p = "visual.layer" + std::to_string(l);
    Layer layer;
    layer.attention_norm = LayerNorm::create(store, p + ".attention_norm", d, config.ln_eps, rng);
    layer.attention = SelfAttention::create(store, p + ".attention", d, config.heads, rng);
    layer.ffn_norm = LayerNorm::create(store, p + ".ffn_norm", d, config.ln_eps, rng);
    layer.ffn = FeedForward::create(store, p + ".ffn", d, config.ffn, Activation::kGelu, rng);
    layers_.push_back(layer);
  }
}

std::pair<Var, Var> VisualEncoder::patch_embed(ForwardContext& ctx, const ObjectImage& object) const {
  Tape& t = ctx.tape;
  if (object.rgb.height != crop_size_ || object.rgb.width != crop_size_ || object.depth.height != crop_size_ ||
      object.depth.width != crop_size_) {
    throw DimensionError("patch_embed: object crops must be " + std::to_string(crop_size_) + "x" +
                         std::to_string(crop_size_));
  }
  Var pos = t.leaf(*position_embedding_);
  Var rgb = ops::add(rgb_projection_(t, t.constant(patchify(object.rgb, patch_size_))), pos);
  Var depth = ops::add(depth_projection_(t, t.constant(patchify(object.depth, patch_size_))), pos);
  return {rgb, depth};
}

VisualEncoderState VisualEncoder::encode(ForwardContext& ctx, std::span<const ObjectImage> objects,
                                         bool use_depth) const {
  Tape& t = ctx.tape;
  if (objects.empty()) throw EmptySceneError("visual encoder: scene has no objects");
  if (objects.size() > max_objects_) {
    throw InputError("visual encoder: " + std::to_string(objects.size()) + " objects exceed the limit of " +
                     std::to_string(max_objects_));
  }
  VisualEncoderState state;
  std::vector<Var> sequence;
  for (const ObjectImage& obj : objects) {
    if (use_depth) {
      auto [rgb, depth] = patch_embed(ctx, obj);
      state.rgb_embeddings.push_back(rgb);
      state.depth_embeddings.push_back(depth);
      sequence.push_back(rgb);
      sequence.push_back(depth);
    } else {
      Var rgb = ops::add(rgb_projection_(t, t.constant(patchify(obj.rgb, patch_size_))), t.leaf(*position_embedding_));
      state.rgb_embeddings.push_back(rgb);
      sequence.push_back(rgb);
    }
  }
  const std::size_t u = state.rgb_embeddings.front().rows();
  state.tokens_per_object = use_depth ? 2 * u : u;
  state.hidden.push_back(ops::concat_rows(sequence));
  for (const Layer& layer : layers_) {
    Var h = state.hidden.back();
    Var attended = ops::add(layer.attention(ctx, layer.attention_norm(t, h), nullptr), h);
    state.hidden.push_back(ops::add(layer.ffn(t, layer.ffn_norm(t, attended)), attended));
  }
  std::vector<Var> pooled;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    pooled.push_back(ops::avg_pool(ops::slice_rows(state.hidden.back(), k * state.tokens_per_object,
                                                   state.tokens_per_object)));
  }
  state.pooled = ops::concat_rows(pooled);
  return state;
}

}  // namespace morelab

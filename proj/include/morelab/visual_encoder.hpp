#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "morelab/config.hpp"
#include "morelab/geometry.hpp"
#include "morelab/layers.hpp"
#include "morelab/raster.hpp"

namespace morelab {

/// Per-object RGB and depth crops at the unified resolution.
struct ObjectImage {
  Raster rgb;    // 3 x S x S, values in [0, 1]
  Raster depth;  // 1 x S x S, 1 = nearest, 0 = background
  BBox source;
};

/// Crops `bbox` from the full-image rasters and rescales it to size x size:
/// bilinear for RGB, nearest-neighbour for depth.
ObjectImage crop_and_rescale(const Raster& rgb, const Raster& depth, const BBox& bbox, std::size_t size);

/// Bilinear resampling of a whole raster (pixel-centre aligned, edge clamped).
Raster resize_bilinear(const Raster& src, std::size_t out_h, std::size_t out_w);
Raster resize_nearest(const Raster& src, std::size_t out_h, std::size_t out_w);

struct DepthLayer {
  BBox bbox;
  int z_rank = 1;  // larger = nearer
};

/// Stand-in for a monocular depth estimator: each pixel takes the normalized
/// nearness z / max_z of the topmost covering object; background is 0.
Raster depth_provider(std::span<const DepthLayer> objects, int width, int height);

/// Non-overlapping P x P patches flattened to rows of C*P*P values
/// (channel-major inside each patch), patches in row-major order.
Tensor patchify(const Raster& raster, std::size_t patch);

struct VisualEncoderState {
  std::vector<Var> rgb_embeddings;    // per object, u x d
  std::vector<Var> depth_embeddings;  // per object, u x d (empty when depth is off)
  std::vector<Var> hidden;            // sequence per layer 0..L_V
  Var pooled;                         // m x d
  std::size_t tokens_per_object = 0;
};

/// Depth-aware ViT-style encoder. All objects of a scene share one sequence
/// [RGB_1, D_1, RGB_2, D_2, ...]; layers are pre-norm.
class VisualEncoder {
 public:
  VisualEncoder(ParameterStore& store, const ModelConfig& config, Rng& rng);

  std::pair<Var, Var> patch_embed(ForwardContext& ctx, const ObjectImage& object) const;
  VisualEncoderState encode(ForwardContext& ctx, std::span<const ObjectImage> objects, bool use_depth) const;

 private:
  struct Layer {
    LayerNorm attention_norm;
    SelfAttention attention;
    LayerNorm ffn_norm;
    FeedForward ffn;
  };

  std::size_t crop_size_;
  std::size_t patch_size_;
  std::size_t max_objects_;
  Linear rgb_projection_;
  Linear depth_projection_;
  Tensor* position_embedding_;
  std::vector<Layer> layers_;
};

}  // namespace morelab

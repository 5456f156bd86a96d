#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "morelab/config.hpp"
#include "morelab/geometry.hpp"
#include "morelab/layers.hpp"

namespace morelab {

/// Normalized box descriptor [x_center, y_center, w, h, area], all in [0, 1].
struct PositionFeature {
  double x_center = 0.0;
  double y_center = 0.0;
  double width = 0.0;
  double height = 0.0;
  double area = 0.0;

  std::array<double, 5> values() const { return {x_center, y_center, width, height, area}; }
};

PositionFeature position_feature(const BBox& bbox, int image_width, int image_height);

/// pooled + P^loc W^loc + b^loc per object row; returns `pooled` itself when
/// the position feature is disabled.
Var position_fuse(Tape& tape, Var pooled, std::span<const PositionFeature> features, const Linear& projection,
                  bool enabled);

/// Agg(x_v): each text row attends over visual rows with weights
/// softmax(x_t x_v^T) (no scaling). Returns n x d.
Var correlation_aggregate(Var text, Var visual);

struct StreamPair {
  Var text;
  Var visual;
};

/// One fusion layer: prefix-guided attention followed by correlation-aware
/// fusion. Text stays post-norm and visual pre-norm, as in the unimodal encoders.
class FusionLayer {
 public:
  FusionLayer(ParameterStore& store, const std::string& prefix, const ModelConfig& config, Rng& rng);

  /// Text: plain self-attention. Visual: queries from the visual stream, keys
  /// and values [visual ; text] using the text-side projections for the text
  /// prefix. Padded text positions are masked for both.
  StreamPair prefix_guided(ForwardContext& ctx, Var text, Var visual, const std::vector<bool>* text_valid) const;
  /// Text: LN(ReLU(x_t W1 + b1 + Agg W3) W2 + b2) + x_t.
  /// Visual: FFN(LN(x_v)) + x_v.
  StreamPair correlation_fused(ForwardContext& ctx, Var text, Var visual) const;
  StreamPair operator()(ForwardContext& ctx, Var text, Var visual, const std::vector<bool>* text_valid) const;

  SelfAttention& text_attention() { return text_attention_; }
  Linear& caf_w3() { return caf_w3_; }

 private:
  SelfAttention text_attention_;
  LayerNorm text_attention_norm_;
  LayerNorm visual_attention_norm_;
  Linear visual_query_;
  Linear visual_key_;
  Linear visual_value_;
  Linear visual_output_;
  Linear caf_w1_;
  Linear caf_w3_;
  Linear caf_w2_;
  LayerNorm caf_norm_;
  LayerNorm visual_ffn_norm_;
  FeedForward visual_ffn_;
  std::size_t heads_;
};

struct MultimodalState {
  std::vector<Var> text;    // per layer 0..L_M, n x d
  std::vector<Var> visual;  // per layer 0..L_M, m x d
};

class FusionEncoder {
 public:
  FusionEncoder(ParameterStore& store, const ModelConfig& config, Rng& rng);
  MultimodalState encode(ForwardContext& ctx, Var text, Var visual, const std::vector<bool>* text_valid) const;
  std::vector<FusionLayer>& layers() { return layers_; }

 private:
  std::vector<FusionLayer> layers_;
};

/// Two affine layers with a GELU in between; dropout on the input while training.
struct Mlp {
  Linear hidden;
  Linear output;

  static Mlp create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                    std::size_t out, Rng& rng);
  Var operator()(ForwardContext& ctx, Var x) const;
};

struct FullHead {
  Linear merge;  // W^m, b^m: 2d -> d
  Mlp mlp;       // [h_<s>, m_k] -> labels
};

/// m_k = [h_v(k), h_t(<o>)] W^m + b^m and logits = MLP([h_t(<s>), m_k]).
/// Without an attribute marker the h_t(<o>) slot is zero.
Var classify_full(ForwardContext& ctx, const MultimodalState& state, std::size_t object,
                  std::size_t entity_marker, std::optional<std::size_t> attribute_marker, const FullHead& head);

/// logits = MLP([t_h, v_t]) over 1 x d entity and object embeddings.
Var classify_baseline(ForwardContext& ctx, Var entity, Var object, const Mlp& mlp);

/// Index of the largest score; ties go to the lowest index.
std::size_t argmax(std::span<const double> scores);

}  // namespace morelab

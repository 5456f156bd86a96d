#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "morelab/config.hpp"
#include "morelab/data_gen.hpp"
#include "morelab/fusion.hpp"
#include "morelab/grad_check.hpp"
#include "morelab/text_encoder.hpp"
#include "morelab/visual_encoder.hpp"

namespace morelab {

struct CandidatePair {
  std::size_t entity = 0;
  std::size_t object = 0;
  std::size_t label = 0;
  TextInput text;
};

/// Model-ready view of an instance: crops, position features and one text
/// input per (entity, object) pair.
struct PreparedInstance {
  std::string id;
  Cell cell = Cell::kOneOne;
  std::size_t num_entities = 0;
  std::vector<ObjectImage> objects;
  std::vector<PositionFeature> positions;
  std::vector<CandidatePair> pairs;
};

/// Captions are only placed in the text when the attribute feature is on.
PreparedInstance prepare_instance(const Instance& instance, const Vocabulary& vocab, const RelationSchema& schema,
                                  const ModelConfig& config);
std::vector<PreparedInstance> prepare_all(const std::vector<Instance>& instances, const Vocabulary& vocab,
                                          const RelationSchema& schema, const ModelConfig& config);

class MoreFormer {
 public:
  explicit MoreFormer(const ModelConfig& config);
  MoreFormer(MoreFormer&&) noexcept = default;
  MoreFormer& operator=(MoreFormer&&) noexcept = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return *store_; }
  const ParameterStore& parameters() const { return *store_; }

  /// Position-fused pooled object rows (m x d). Shared by every pair of an instance.
  Var visual_stream(ForwardContext& ctx, const PreparedInstance& instance) const;
  /// 1 x num_labels logits of one candidate pair.
  Var pair_logits(ForwardContext& ctx, const CandidatePair& pair, Var visual) const;
  /// Inference scores for every pair of an instance, in pair order.
  std::vector<std::vector<double>> scores(const PreparedInstance& instance) const;
  std::vector<std::size_t> predict(const PreparedInstance& instance) const;
  /// Mean cross-entropy over every pair of an instance.
  Var instance_loss(ForwardContext& ctx, const PreparedInstance& instance) const;

  /// Checkpoint with the model config embedded in the manifest.
  void save(const std::filesystem::path& stem) const;
  static MoreFormer load(const std::filesystem::path& stem);

  TextEncoder& text_encoder() { return *text_; }
  VisualEncoder& visual_encoder() { return *visual_; }
  FusionEncoder& fusion_encoder() { return *fusion_; }

 private:
  ModelConfig config_;
  std::unique_ptr<ParameterStore> store_;
  std::unique_ptr<TextEncoder> text_;
  std::unique_ptr<VisualEncoder> visual_;
  std::unique_ptr<FusionEncoder> fusion_;
  Linear position_;
  std::optional<FullHead> head_;
  std::optional<Mlp> baseline_;
};

/// Hand-built scenes for gradient checks. "small" has one entity, two objects
/// and 12-token pair inputs; "medium" has two entities and three objects.
Instance gradcheck_instance(const std::string& size = "small");

/// Analytic vs central-difference gradients of instance_loss with respect to
/// every model parameter. The vocabulary is the instance's own words, so
/// `config.vocab_size` is overridden.
GradCheckResult model_grad_check(ModelConfig config, const Instance& instance, const RelationSchema& schema,
                                 double h = 1e-5);

}  // namespace morelab

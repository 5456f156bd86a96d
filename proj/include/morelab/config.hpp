#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace morelab {

/// Which of the position (P), attribute (A) and depth (D) features are used.
struct FeatureFlags {
  bool position = true;
  bool attribute = true;
  bool depth = true;

  /// Parses "p,a,d" style lists; "none" or "" disables everything.
  static FeatureFlags parse(const std::string& spec);
  std::string to_string() const;
  bool operator==(const FeatureFlags&) const = default;
};

enum class HeadKind { kFull, kBaseline };

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t hidden = 64;  // shared d_t == d_v
  std::size_t heads = 4;
  std::size_t ffn = 128;
  std::size_t text_layers = 4;
  std::size_t visual_layers = 4;
  std::size_t fusion_layers = 3;
  std::size_t max_tokens = 96;
  std::size_t max_objects = 10;
  std::size_t crop_size = 64;
  std::size_t patch_size = 16;
  std::size_t num_labels = 22;
  double ln_eps = 1e-5;
  FeatureFlags features;
  HeadKind head = HeadKind::kFull;
  std::uint64_t init_seed = 0;

  std::size_t patches_per_object() const { return (crop_size / patch_size) * (crop_size / patch_size); }
  /// Throws InputError on inconsistent settings.
  void validate() const;

  /// Small dimensions used for tests and desk-scale experiments.
  static ModelConfig toy(std::size_t vocab_size);
  /// Smallest useful dimensions, sized for exhaustive gradient checks.
  static ModelConfig tiny(std::size_t vocab_size);

  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

}  // namespace morelab

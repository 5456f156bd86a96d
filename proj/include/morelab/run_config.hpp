#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "morelab/config.hpp"
#include "morelab/data_gen.hpp"
#include "morelab/train_eval.hpp"

namespace morelab {

/// Everything a command needs, merged from defaults, an INI file and flags.
///
///   [run]        seed, data, out
///   [generator]  train, dev, test, objects_max, relations, zipf, image_size,
///                min_box, max_box, multi_object_p
///   [model]      preset (toy | tiny | base), hidden, heads, ffn, text_layers,
///                visual_layers, fusion_layers, max_tokens, crop_size,
///                patch_size, head (full | baseline), init_seed
///   [train]      features, lr, batch, dropout, weight_decay, beta1, beta2,
///                eps, epochs, threads
struct RunConfig {
  std::uint64_t seed = 7;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;

  SplitSizes sizes;
  GeneratorConfig generator;
  std::size_t relations = 21;
  double zipf = 1.0;

  std::string preset = "toy";
  ModelConfig model = ModelConfig::toy(0);
  TrainConfig train;

  /// Overlays keys found in an INI file. Unknown sections or keys and
  /// malformed values are InputErrors; an unreadable file is an IoError.
  void load_ini(const std::filesystem::path& path);
  void load_ini_string(const std::string& text);
  /// Fully resolved configuration in the same INI layout.
  std::string to_ini() const;
  /// Selects a dimension preset, keeping the feature flags and head.
  void apply_preset(const std::string& name);

  RelationSchema schema() const { return RelationSchema::make_default(zipf, relations); }
  /// Model config for a vocabulary, with the train features copied in.
  ModelConfig model_for(std::size_t vocab_size) const;
  void validate() const;
};

}  // namespace morelab

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "morelab/geometry.hpp"
#include "morelab/raster.hpp"
#include "morelab/rng.hpp"
#include "morelab/text_encoder.hpp"

namespace morelab {

/// Ordered relation labels with `none` last, plus sampling weights for the
/// non-none labels.
struct RelationSchema {
  std::vector<std::string> labels;
  std::vector<double> weights;

  /// rel_01..rel_NN followed by none, with Zipf weights 1 / rank^exponent.
  static RelationSchema make_default(double zipf_exponent = 1.0, std::size_t relations = 21);

  std::size_t size() const { return labels.size(); }
  std::size_t num_relations() const { return labels.size() - 1; }
  std::size_t none_index() const { return labels.size() - 1; }
  /// Throws SchemaError for unknown labels.
  std::size_t index(const std::string& label) const;
  void validate() const;
};

/// Entity/object cardinality cell of an instance.
enum class Cell : std::uint8_t { kOneOne = 0, kOneMany = 1, kManyOne = 2, kManyMany = 3 };
inline constexpr std::array<Cell, 4> kAllCells{Cell::kOneOne, Cell::kOneMany, Cell::kManyOne, Cell::kManyMany};
std::string to_string(Cell cell);
Cell cell_of(std::size_t entities, std::size_t objects);

struct SceneObject {
  BBox bbox;
  int z_rank = 1;  // 1..m, larger = nearer
  std::string color;
  std::string shape;
  std::string category;
};

struct SceneEntity {
  std::vector<std::string> mention;  // tokens
  std::string category;
};

struct GoldTriple {
  std::size_t entity_id = 0;
  std::size_t object_id = 0;
  std::string relation;
  bool operator==(const GoldTriple&) const = default;
};

struct SceneSpec {
  int width = 64;
  int height = 64;
  std::vector<SceneObject> objects;
  std::vector<SceneEntity> entities;
  std::vector<GoldTriple> gold;  // one triple per (entity, object) pair, none included

  void validate() const;
};

struct GeneratorConfig {
  int image_size = 64;
  /// Instance shares of cells (1,1), (1,>1), (>1,1), (>1,>1).
  std::array<double, 4> cell_proportions{0.222, 0.397, 0.121, 0.26};
  /// Fraction of none pairs per cell, same order.
  std::array<double, 4> none_ratio{0.05, 0.741, 0.3311, 0.809};
  /// Weights for 2, 3, 4, ... entities in multi-entity texts.
  std::vector<double> multi_entity_weights{0.74, 0.21, 0.05};
  /// Multi-object scenes draw 2 + Binomial(max_objects - 2, p) objects.
  double multi_object_p = 0.4075;
  std::size_t max_objects = 10;
  int min_box = 10;
  int max_box = 28;

  void validate() const;
};

// Word lists of the closed generator vocabulary.
const std::vector<std::string>& categories();
const std::vector<std::string>& shapes();
/// Two colours per category; colour i belongs to category i / 2.
const std::vector<std::string>& colors();
std::array<double, 3> color_rgb(const std::string& color);
const std::vector<std::string>& entity_names(const std::string& category);
const std::vector<std::string>& filler_words();
Vocabulary generator_vocabulary();

/// Quadrant of the box centre: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
int quadrant(const BBox& box, int width, int height);
/// True when the object sits in the nearer half of the scene ordering (2z > m).
bool is_near(int z_rank, std::size_t num_objects);
/// The deterministic rule: none unless entity and object categories agree;
/// otherwise a label fixed by the object's shape, quadrant and depth half.
std::string relation_rule(const SceneSpec& scene, std::size_t entity, std::size_t object,
                          const RelationSchema& schema);
std::size_t relation_index(std::size_t shape, int quadrant, bool near, const RelationSchema& schema);

SceneSpec generate_scene(std::uint64_t seed, const RelationSchema& schema, const GeneratorConfig& config);

/// Filled rectangles painted in increasing z order over a grey background,
/// plus the depth raster from depth_provider.
std::pair<Raster, Raster> render(const SceneSpec& scene);
inline constexpr double kBackgroundGray = 128.0 / 255.0;

/// "a {color} {shape} {category}".
std::vector<std::string> caption_provider(const SceneObject& object);

struct EntityMention {
  TokenSpan span;
  std::size_t id = 0;
  std::string category;
};

struct InstanceObject {
  BBox bbox;
  int z_rank = 1;
  std::vector<std::string> caption;
  std::string color;
  std::string shape;
  std::string category;
};

struct Instance {
  std::string id;
  int width = 64;
  int height = 64;
  std::vector<std::string> title;
  std::vector<EntityMention> entities;
  std::vector<InstanceObject> objects;
  std::vector<GoldTriple> gold;
  Raster rgb;
  Raster depth;
  std::string rgb_path;
  std::string depth_path;

  Cell cell() const { return cell_of(entities.size(), objects.size()); }
  SceneSpec scene() const;
  /// Gold relation of a pair; none when absent.
  const std::string& gold_relation(std::size_t entity, std::size_t object) const;
};

/// Scene + title + captions + rasters for one derived seed.
Instance generate_instance(std::uint64_t seed, const std::string& id, const RelationSchema& schema,
                           const GeneratorConfig& config);

struct Corpus {
  std::vector<Instance> train;
  std::vector<Instance> dev;
  std::vector<Instance> test;
};

struct SplitSizes {
  std::size_t train = 2000;
  std::size_t dev = 250;
  std::size_t test = 400;
};

/// Splits a total instance count with the 15,486 / 1,742 / 3,036 ratio.
SplitSizes split_by_reference_ratio(std::size_t total);

Corpus generate_corpus(std::uint64_t seed, const SplitSizes& sizes, const RelationSchema& schema,
                       const GeneratorConfig& config);

/// Writes train/dev/test.jsonl, rasters/, vocab.txt, schema.json and stats.json
/// under `dir`. Returns the stats manifest as JSON text.
std::string write_corpus(const Corpus& corpus, const RelationSchema& schema, const std::filesystem::path& dir);
std::string generate_dataset(std::uint64_t seed, const SplitSizes& sizes, const RelationSchema& schema,
                             const GeneratorConfig& config, const std::filesystem::path& dir);

std::string instance_to_json(const Instance& instance);
/// Parses one JSONL line; rasters are loaded from `base_dir` when `load_rasters`.
Instance instance_from_json(const std::string& line, const std::filesystem::path& base_dir, bool load_rasters);
std::vector<Instance> read_split(const std::filesystem::path& jsonl, bool load_rasters = true);
void write_split(const std::vector<Instance>& instances, const std::filesystem::path& jsonl);
Corpus read_corpus(const std::filesystem::path& dir, bool load_rasters = true);
RelationSchema read_schema(const std::filesystem::path& dir);
void write_schema(const RelationSchema& schema, const std::filesystem::path& path);

/// Corpus statistics (cells, none ratios, relation histogram, means) as JSON.
std::string corpus_stats(const std::vector<Instance>& instances, const RelationSchema& schema);

}  // namespace morelab

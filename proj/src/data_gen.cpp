#include "morelab/data_gen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "morelab/errors.hpp"
#include "morelab/visual_encoder.hpp"

namespace morelab {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr std::size_t kQuadrants = 4;

char digit(std::size_t v) { return static_cast<char>('0' + v); }

std::string two_digit(std::size_t v) { return std::string{digit(v / 10), digit(v % 10)}; }

std::string padded(std::size_t v, std::size_t width) {
  std::string s = std::to_string(v);
  if (s.size() < width) s.insert(0, width - s.size(), '0');
  return s;
}

template <typename T>
const T& pick(const std::vector<T>& items, Rng& rng) {
  return items[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(items.size()) - 1))];
}

std::size_t index_of(const std::vector<std::string>& items, const std::string& value, const char* what) {
  const auto it = std::find(items.begin(), items.end(), value);
  if (it == items.end()) throw SchemaError(std::string("unknown ") + what + " '" + value + "'");
  return static_cast<std::size_t>(it - items.begin());
}

// Shared tuples carry the same label at both depth halves so that exactly
// `relations` labels cover shapes * quadrants * 2 tuples. They take the rarest
// labels; the frequent ones alternate near/far and cycle through shapes, so
// each of position, attributes and depth alone shifts the most likely label.
std::size_t shared_tuples(const RelationSchema& schema) {
  const std::size_t per_depth = shapes().size() * kQuadrants;
  const std::size_t r = schema.num_relations();
  if (r < per_depth || r > 2 * per_depth) {
    throw SchemaError("relation rule needs between " + std::to_string(per_depth) + " and " +
                      std::to_string(2 * per_depth) + " relations, got " + std::to_string(r));
  }
  return 2 * per_depth - r;
}

BBox sample_box(int quad, const GeneratorConfig& config, Rng& rng) {
  const int size = config.image_size;
  const int half = size / 2;
  BBox box;
  box.w = static_cast<int>(rng.uniform_int(config.min_box, config.max_box));
  box.h = static_cast<int>(rng.uniform_int(config.min_box, config.max_box));
  auto place = [&](int extent, bool high) {
    // Integer range keeping the centre at least one pixel inside the half.
    if (!high) {
      const int hi = static_cast<int>(std::floor(half - extent / 2.0 - 1.0));
      return static_cast<int>(rng.uniform_int(0, hi));
    }
    const int lo = static_cast<int>(std::ceil(half + 1.0 - extent / 2.0));
    return static_cast<int>(rng.uniform_int(lo, size - extent));
  };
  box.x = place(box.w, (quad & 1) != 0);
  box.y = place(box.h, (quad & 2) != 0);
  return box;
}

std::size_t sample_entity_count(Cell cell, const GeneratorConfig& config, Rng& rng) {
  if (cell == Cell::kOneOne || cell == Cell::kOneMany) return 1;
  return 2 + rng.categorical(config.multi_entity_weights);
}

std::size_t sample_object_count(Cell cell, const GeneratorConfig& config, Rng& rng) {
  if (cell == Cell::kOneOne || cell == Cell::kManyOne) return 1;
  std::size_t m = 2;
  for (std::size_t i = 2; i < config.max_objects; ++i) m += rng.bernoulli(config.multi_object_p) ? 1 : 0;
  return m;
}

// (entity match probability, object match probability) for a cell.
std::pair<double, double> match_rates(Cell cell, const GeneratorConfig& config) {
  const double match = 1.0 - config.none_ratio[static_cast<std::size_t>(cell)];
  switch (cell) {
    case Cell::kOneOne:
    case Cell::kOneMany:
      return {1.0, match};
    case Cell::kManyOne:
      return {match, 1.0};
    case Cell::kManyMany:
      return {std::sqrt(match), std::sqrt(match)};
  }
  return {1.0, match};
}

std::vector<std::string> make_title(const std::vector<SceneEntity>& entities, std::vector<TokenSpan>& spans,
                                    Rng& rng) {
  static const std::vector<std::string> openers{"breaking", "today", "watch", "exclusive", "live"};
  static const std::vector<std::string> connectors{"and", "with", "meets", "joins", "after", "beside"};
  static const std::vector<std::string> verbs{"visits", "opens", "announces", "wins", "unveils", "hosts",
                                              "praises", "leaves", "signs", "celebrates"};
  static const std::vector<std::string> tails{"summit", "deal",   "talks",  "crisis", "plan",   "report",
                                              "market", "rally",  "event",  "show",   "festival", "match",
                                              "trade",  "season", "budget", "record", "week",   "city"};
  std::vector<std::string> title;
  if (rng.bernoulli(0.3)) title.push_back(pick(openers, rng));
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (i > 0) title.push_back(pick(connectors, rng));
    const std::size_t begin = title.size();
    title.insert(title.end(), entities[i].mention.begin(), entities[i].mention.end());
    spans.push_back({begin, title.size()});
  }
  title.push_back(pick(verbs, rng));
  const auto extra = rng.uniform_int(1, 3);
  for (std::int64_t i = 0; i < extra; ++i) title.push_back(pick(tails, rng));
  return title;
}

Json bbox_json(const BBox& b) { return Json::array({b.x, b.y, b.w, b.h}); }

BBox bbox_from(const Json& j) {
  if (!j.is_array() || j.size() != 4) throw SchemaError("bbox must be [x, y, w, h]");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---------------------------------------------------------------- schema

RelationSchema RelationSchema::make_default(double zipf_exponent, std::size_t relations) {
  if (relations == 0) throw SchemaError("schema needs at least one relation");
  if (!(zipf_exponent >= 0.0) || !std::isfinite(zipf_exponent)) throw SchemaError("zipf exponent must be >= 0");
  RelationSchema schema;
  for (std::size_t i = 1; i <= relations; ++i) {
    schema.labels.push_back("rel_" + (i < 100 ? two_digit(i) : std::to_string(i)));
    schema.weights.push_back(1.0 / std::pow(static_cast<double>(i), zipf_exponent));
  }
  schema.labels.push_back("none");
  return schema;
}

std::size_t RelationSchema::index(const std::string& label) const {
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw SchemaError("unknown relation label '" + label + "'");
  return static_cast<std::size_t>(it - labels.begin());
}

void RelationSchema::validate() const {
  if (labels.size() < 2) throw SchemaError("schema needs at least one relation plus none");
  if (labels.back() != "none") throw SchemaError("none must be the last label");
  if (weights.size() != num_relations()) throw SchemaError("one weight per non-none label required");
  std::set<std::string> seen(labels.begin(), labels.end());
  if (seen.size() != labels.size()) throw SchemaError("duplicate relation labels");
  for (double w : weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw SchemaError("relation weights must be positive");
}

std::string to_string(Cell cell) {
  switch (cell) {
    case Cell::kOneOne:
      return "ent=1,obj=1";
    case Cell::kOneMany:
      return "ent=1,obj>1";
    case Cell::kManyOne:
      return "ent>1,obj=1";
    case Cell::kManyMany:
      return "ent>1,obj>1";
  }
  return "?";
}

Cell cell_of(std::size_t entities, std::size_t objects) {
  if (entities == 0 || objects == 0) throw EmptySceneError("instance needs at least one entity and one object");
  if (entities == 1) return objects == 1 ? Cell::kOneOne : Cell::kOneMany;
  return objects == 1 ? Cell::kManyOne : Cell::kManyMany;
}

void SceneSpec::validate() const {
  if (objects.empty() || objects.size() > 10) throw EmptySceneError("scene needs 1..10 objects");
  if (entities.empty()) throw EmptySceneError("scene needs at least one entity");
  for (const auto& o : objects) validate_bbox(o.bbox, width, height);
  std::set<std::pair<std::size_t, std::size_t>> pairs;
  for (const auto& t : gold) {
    if (t.entity_id >= entities.size() || t.object_id >= objects.size())
      throw IndexError("gold triple references unknown ids");
    if (!pairs.insert({t.entity_id, t.object_id}).second) throw SchemaError("duplicate gold triple for a pair");
  }
}

void GeneratorConfig::validate() const {
  if (image_size < 8 || image_size % 2 != 0) throw InputError("image size must be even and >= 8");
  if (max_objects < 2 || max_objects > 10) throw InputError("max objects must be in [2, 10]");
  if (min_box < 1 || max_box < min_box || max_box > image_size / 2 - 2)
    throw InputError("box sizes must satisfy 1 <= min <= max <= image/2 - 2");
  double total = 0.0;
  for (double p : cell_proportions) {
    if (!(p >= 0.0)) throw InputError("cell proportions must be non-negative");
    total += p;
  }
  if (!(total > 0.0)) throw InputError("cell proportions must not all be zero");
  for (double r : none_ratio)
    if (!(r >= 0.0 && r < 1.0)) throw InputError("none ratios must be in [0, 1)");
  if (multi_entity_weights.empty()) throw InputError("multi-entity weights must not be empty");
  if (!(multi_object_p >= 0.0 && multi_object_p <= 1.0)) throw InputError("multi-object p must be in [0, 1]");
}

// ---------------------------------------------------------------- word lists

const std::vector<std::string>& categories() {
  static const std::vector<std::string> v{"person", "building", "vehicle", "animal", "food", "flag"};
  return v;
}

const std::vector<std::string>& shapes() {
  static const std::vector<std::string> v{"round", "square", "tall"};
  return v;
}

const std::vector<std::string>& colors() {
  static const std::vector<std::string> v{"red",  "orange", "yellow", "brown",  "green", "olive",
                                          "cyan", "blue",   "purple", "pink",   "white", "black"};
  return v;
}

std::array<double, 3> color_rgb(const std::string& color) {
  // Byte-valued colours keep rendered rasters exactly representable as k / 255.
  static const std::map<std::string, std::array<int, 3>> table{
      {"red", {217, 26, 26}},   {"orange", {242, 140, 26}}, {"yellow", {242, 230, 38}}, {"brown", {140, 89, 38}},
      {"green", {26, 179, 51}}, {"olive", {128, 128, 26}},  {"cyan", {26, 204, 217}},   {"blue", {26, 51, 230}},
      {"purple", {140, 38, 191}}, {"pink", {242, 128, 191}}, {"white", {250, 250, 250}}, {"black", {13, 13, 13}}};
  const auto it = table.find(color);
  if (it == table.end()) throw SchemaError("unknown color '" + color + "'");
  return {it->second[0] / 255.0, it->second[1] / 255.0, it->second[2] / 255.0};
}

const std::vector<std::string>& entity_names(const std::string& category) {
  static const std::map<std::string, std::vector<std::string>> pools{
      {"person",
       {"biden", "macron", "merkel", "obama", "putin", "modi", "trudeau", "sunak", "lula", "kishida", "zelensky",
        "ardern"}},
      {"building",
       {"louvre", "kremlin", "pentagon", "colosseum", "acropolis", "alhambra", "parthenon", "versailles",
        "reichstag", "capitol", "westminster", "guggenheim"}},
      {"vehicle",
       {"tesla", "boeing", "airbus", "ferrari", "toyota", "volvo", "porsche", "ducati", "harley", "yamaha",
        "scania", "bugatti"}},
      {"animal",
       {"panda", "tiger", "koala", "lion", "dolphin", "eagle", "giraffe", "zebra", "falcon", "penguin", "wolf",
        "bison"}},
      {"food",
       {"sushi", "pizza", "paella", "ramen", "tacos", "kimchi", "croissant", "burger", "falafel", "pasta", "curry",
        "baklava"}},
      {"flag",
       {"france", "brazil", "japan", "kenya", "canada", "mexico", "india", "norway", "chile", "egypt", "peru",
        "italy"}}};
  const auto it = pools.find(category);
  if (it == pools.end()) throw SchemaError("unknown category '" + category + "'");
  return it->second;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> v{
      "breaking", "today",  "watch",  "exclusive", "live",   "and",    "with",     "meets",  "joins",
      "after",    "beside", "visits", "opens",     "announces", "wins", "unveils", "hosts", "praises",
      "leaves",   "signs",  "celebrates", "summit", "deal",   "talks",  "crisis",   "plan",   "report",
      "market",   "rally",  "event",  "show",      "festival", "match", "trade",   "season", "budget",
      "record",   "week",   "city",   "a"};
  return v;
}

Vocabulary generator_vocabulary() {
  Vocabulary vocab;
  for (const auto& w : filler_words()) vocab.add(w);
  for (const auto& w : categories()) vocab.add(w);
  for (const auto& w : shapes()) vocab.add(w);
  for (const auto& w : colors()) vocab.add(w);
  for (const auto& c : categories())
    for (const auto& w : entity_names(c)) vocab.add(w);
  return vocab;
}

// ---------------------------------------------------------------- rule g

int quadrant(const BBox& box, int width, int height) {
  const int qx = box.center_x() >= width / 2.0 ? 1 : 0;
  const int qy = box.center_y() >= height / 2.0 ? 1 : 0;
  return qx + 2 * qy;
}

bool is_near(int z_rank, std::size_t num_objects) { return 2 * static_cast<std::size_t>(z_rank) > num_objects; }

std::size_t relation_index(std::size_t shape, int quad, bool near, const RelationSchema& schema) {
  const std::size_t per_depth = shapes().size() * kQuadrants;
  const std::size_t shared = shared_tuples(schema);
  if (shape >= shapes().size() || quad < 0 || quad >= static_cast<int>(kQuadrants))
    throw InputError("relation_index: shape or quadrant out of range");
  // Quadrant-major, so the most frequent labels already span every shape.
  const std::size_t idx = static_cast<std::size_t>(quad) * shapes().size() + shape;
  const std::size_t split = per_depth - shared;
  if (idx >= split) return 2 * split + (idx - split);
  return 2 * idx + (near ? 0 : 1);
}

std::string relation_rule(const SceneSpec& scene, std::size_t entity, std::size_t object,
                          const RelationSchema& schema) {
  if (entity >= scene.entities.size() || object >= scene.objects.size())
    throw IndexError("relation_rule: id out of range");
  const auto& e = scene.entities[entity];
  const auto& o = scene.objects[object];
  if (e.category != o.category) return schema.labels[schema.none_index()];
  const std::size_t shape = index_of(shapes(), o.shape, "shape");
  const int quad = quadrant(o.bbox, scene.width, scene.height);
  return schema.labels[relation_index(shape, quad, is_near(o.z_rank, scene.objects.size()), schema)];
}

// ---------------------------------------------------------------- scenes

SceneSpec generate_scene(std::uint64_t seed, const RelationSchema& schema, const GeneratorConfig& config) {
  schema.validate();
  config.validate();
  Rng rng(seed);
  const auto& cats = categories();

  const Cell cell = static_cast<Cell>(rng.categorical(config.cell_proportions));
  const std::size_t k = sample_entity_count(cell, config, rng);
  const std::size_t m = sample_object_count(cell, config, rng);
  const auto [entity_rate, object_rate] = match_rates(cell, config);

  SceneSpec scene;
  scene.width = scene.height = config.image_size;

  const std::size_t primary = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cats.size()) - 1));
  std::set<std::string> used_names;
  std::set<std::string> entity_categories;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t c = primary;
    if (!rng.bernoulli(entity_rate)) {
      c = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(cats.size()) - 2));
      if (c >= primary) ++c;
    }
    const auto& pool = entity_names(cats[c]);
    std::string name;
    do {
      name = pick(pool, rng);
    } while (used_names.count(name) != 0);
    used_names.insert(name);
    scene.entities.push_back({{name}, cats[c]});
    entity_categories.insert(cats[c]);
  }

  std::vector<std::string> free_categories;
  for (const auto& c : cats)
    if (entity_categories.count(c) == 0) free_categories.push_back(c);

  std::vector<int> z(m);
  std::iota(z.begin(), z.end(), 1);
  rng.shuffle(std::span<int>(z));

  shared_tuples(schema);  // rejects relation counts the rule cannot cover
  const bool primary_mentioned = entity_categories.count(cats[primary]) != 0;

  for (std::size_t j = 0; j < m; ++j) {
    SceneObject obj;
    obj.z_rank = z[j];
    const bool matched = rng.bernoulli(object_rate);
    obj.category = matched ? cats[primary] : pick(free_categories, rng);
    std::size_t shape = 0;
    int quad = 0;
    if (matched && primary_mentioned) {
      // Label first (long-tailed), then a uniformly chosen tuple producing it.
      const bool near = is_near(obj.z_rank, m);
      std::vector<double> weights(schema.num_relations(), 0.0);
      for (std::size_t s = 0; s < shapes().size(); ++s)
        for (int q = 0; q < static_cast<int>(kQuadrants); ++q) {
          const std::size_t l = relation_index(s, q, near, schema);
          weights[l] = schema.weights[l];
        }
      const std::size_t label = rng.categorical(weights);
      std::vector<std::pair<std::size_t, int>> tuples;
      for (std::size_t s = 0; s < shapes().size(); ++s)
        for (int q = 0; q < static_cast<int>(kQuadrants); ++q)
          if (relation_index(s, q, near, schema) == label) tuples.emplace_back(s, q);
      std::tie(shape, quad) = pick(tuples, rng);
    } else {
      shape = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(shapes().size()) - 1));
      quad = static_cast<int>(rng.uniform_int(0, kQuadrants - 1));
    }
    obj.shape = shapes()[shape];
    const std::size_t cat_index = index_of(cats, obj.category, "category");
    obj.color = colors()[2 * cat_index + static_cast<std::size_t>(rng.uniform_int(0, 1))];
    obj.bbox = sample_box(quad, config, rng);
    scene.objects.push_back(std::move(obj));
  }

  for (std::size_t e = 0; e < k; ++e)
    for (std::size_t o = 0; o < m; ++o) scene.gold.push_back({e, o, relation_rule(scene, e, o, schema)});
  return scene;
}

std::pair<Raster, Raster> render(const SceneSpec& scene) {
  const auto h = static_cast<std::size_t>(scene.height);
  const auto w = static_cast<std::size_t>(scene.width);
  Raster rgb(3, h, w, kBackgroundGray);
  std::vector<std::size_t> order(scene.objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scene.objects[a].z_rank < scene.objects[b].z_rank; });
  std::vector<DepthLayer> layers;
  for (std::size_t i : order) {
    const auto& o = scene.objects[i];
    validate_bbox(o.bbox, scene.width, scene.height);
    const auto c = color_rgb(o.color);
    for (int y = o.bbox.y; y < o.bbox.y + o.bbox.h; ++y)
      for (int x = o.bbox.x; x < o.bbox.x + o.bbox.w; ++x)
        for (std::size_t ch = 0; ch < 3; ++ch)
          rgb.at(ch, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = c[ch];
    layers.push_back({o.bbox, o.z_rank});
  }
  return {std::move(rgb), depth_provider(layers, scene.width, scene.height)};
}

std::vector<std::string> caption_provider(const SceneObject& object) {
  return {"a", object.color, object.shape, object.category};
}

// ---------------------------------------------------------------- instances

SceneSpec Instance::scene() const {
  SceneSpec s;
  s.width = width;
  s.height = height;
  for (const auto& o : objects) s.objects.push_back({o.bbox, o.z_rank, o.color, o.shape, o.category});
  for (const auto& e : entities) {
    if (e.span.end > title.size() || e.span.begin >= e.span.end) throw SpanError("entity span out of range");
    s.entities.push_back({{title.begin() + static_cast<std::ptrdiff_t>(e.span.begin),
                           title.begin() + static_cast<std::ptrdiff_t>(e.span.end)},
                          e.category});
  }
  s.gold = gold;
  return s;
}

const std::string& Instance::gold_relation(std::size_t entity, std::size_t object) const {
  static const std::string none = "none";
  for (const auto& t : gold)
    if (t.entity_id == entity && t.object_id == object) return t.relation;
  return none;
}

Instance generate_instance(std::uint64_t seed, const std::string& id, const RelationSchema& schema,
                           const GeneratorConfig& config) {
  const SceneSpec scene = generate_scene(seed, schema, config);
  Rng rng(mix_seed(seed, 0x7469746c65ULL));
  Instance inst;
  inst.id = id;
  inst.width = scene.width;
  inst.height = scene.height;
  std::vector<TokenSpan> spans;
  inst.title = make_title(scene.entities, spans, rng);
  for (std::size_t i = 0; i < scene.entities.size(); ++i)
    inst.entities.push_back({spans[i], i, scene.entities[i].category});
  for (const auto& o : scene.objects)
    inst.objects.push_back({o.bbox, o.z_rank, caption_provider(o), o.color, o.shape, o.category});
  inst.gold = scene.gold;
  auto [rgb, depth] = render(scene);
  inst.rgb = std::move(rgb);
  inst.depth = std::move(depth);
  return inst;
}

SplitSizes split_by_reference_ratio(std::size_t total) {
  constexpr double kTrain = 15486.0, kDev = 1742.0, kTest = 3036.0;
  constexpr double kAll = kTrain + kDev + kTest;
  SplitSizes s;
  s.dev = static_cast<std::size_t>(std::llround(static_cast<double>(total) * kDev / kAll));
  s.test = static_cast<std::size_t>(std::llround(static_cast<double>(total) * kTest / kAll));
  s.train = total - s.dev - s.test;
  return s;
}

Corpus generate_corpus(std::uint64_t seed, const SplitSizes& sizes, const RelationSchema& schema,
                       const GeneratorConfig& config) {
  if (sizes.train == 0 || sizes.dev == 0 || sizes.test == 0) throw InputError("split sizes must be >= 1");
  Corpus corpus;
  const std::array<std::pair<const char*, std::size_t>, 3> plan{
      {{"train", sizes.train}, {"dev", sizes.dev}, {"test", sizes.test}}};
  std::array<std::vector<Instance>*, 3> out{&corpus.train, &corpus.dev, &corpus.test};
  for (std::size_t s = 0; s < plan.size(); ++s) {
    const std::uint64_t split_seed = mix_seed(seed, s + 1);
    out[s]->reserve(plan[s].second);
    for (std::size_t i = 0; i < plan[s].second; ++i) {
      const std::string id = std::string(plan[s].first) + "-" + padded(i, 6);
      out[s]->push_back(generate_instance(mix_seed(split_seed, i), id, schema, config));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------- serialization

std::string instance_to_json(const Instance& inst) {
  Json j;
  j["id"] = inst.id;
  j["title"] = inst.title;
  Json ents = Json::array();
  for (const auto& e : inst.entities)
    ents.push_back({{"span", {e.span.begin, e.span.end}}, {"id", e.id}, {"category", e.category}});
  j["entities"] = ents;
  Json objs = Json::array();
  for (const auto& o : inst.objects)
    objs.push_back({{"bbox", bbox_json(o.bbox)},
                    {"z_rank", o.z_rank},
                    {"caption", o.caption},
                    {"color", o.color},
                    {"shape", o.shape},
                    {"category", o.category}});
  j["objects"] = objs;
  Json gold = Json::array();
  for (const auto& t : inst.gold)
    gold.push_back({{"entity_id", t.entity_id}, {"object_id", t.object_id}, {"relation", t.relation}});
  j["gold_triples"] = gold;
  j["image"] = {{"width", inst.width}, {"height", inst.height}};
  j["rgb"] = inst.rgb_path;
  j["depth"] = inst.depth_path;
  return j.dump();
}

Instance instance_from_json(const std::string& line, const fs::path& base_dir, bool load_rasters) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("malformed instance line: ") + e.what());
  }
  try {
    Instance inst;
    inst.id = j.at("id").get<std::string>();
    inst.title = j.at("title").get<std::vector<std::string>>();
    for (const auto& e : j.at("entities")) {
      const auto span = e.at("span");
      inst.entities.push_back({{span.at(0).get<std::size_t>(), span.at(1).get<std::size_t>()},
                               e.at("id").get<std::size_t>(),
                               e.value("category", std::string{})});
    }
    for (const auto& o : j.at("objects")) {
      inst.objects.push_back({bbox_from(o.at("bbox")), o.at("z_rank").get<int>(),
                              o.at("caption").get<std::vector<std::string>>(), o.value("color", std::string{}),
                              o.value("shape", std::string{}), o.value("category", std::string{})});
    }
    for (const auto& t : j.at("gold_triples"))
      inst.gold.push_back({t.at("entity_id").get<std::size_t>(), t.at("object_id").get<std::size_t>(),
                           t.at("relation").get<std::string>()});
    inst.width = j.at("image").at("width").get<int>();
    inst.height = j.at("image").at("height").get<int>();
    inst.rgb_path = j.at("rgb").get<std::string>();
    inst.depth_path = j.at("depth").get<std::string>();
    if (load_rasters) {
      inst.rgb = read_raster(base_dir / inst.rgb_path);
      inst.depth = read_raster(base_dir / inst.depth_path);
    }
    return inst;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("instance field error: ") + e.what());
  }
}

void write_split(const std::vector<Instance>& instances, const fs::path& jsonl) {
  std::string text;
  for (const auto& inst : instances) {
    text += instance_to_json(inst);
    text += '\n';
  }
  write_text(jsonl, text);
}

std::vector<Instance> read_split(const fs::path& jsonl, bool load_rasters) {
  std::ifstream in(jsonl);
  if (!in) throw IoError("cannot open " + jsonl.string());
  std::vector<Instance> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(instance_from_json(line, jsonl.parent_path(), load_rasters));
    } catch (const SchemaError& e) {
      throw SchemaError(jsonl.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_schema(const RelationSchema& schema, const fs::path& path) {
  Json j{{"labels", schema.labels}, {"weights", schema.weights}};
  write_text(path, j.dump(2) + "\n");
}

RelationSchema read_schema(const fs::path& dir) {
  const fs::path path = fs::is_directory(dir) ? dir / "schema.json" : dir;
  try {
    const Json j = Json::parse(read_text(path));
    RelationSchema s;
    s.labels = j.at("labels").get<std::vector<std::string>>();
    s.weights = j.at("weights").get<std::vector<double>>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

std::string corpus_stats(const std::vector<Instance>& instances, const RelationSchema& schema) {
  std::array<std::size_t, 4> cell_instances{}, cell_pairs{}, cell_none{};
  std::vector<std::size_t> histogram(schema.size(), 0);
  std::size_t objects = 0, entities = 0, pairs = 0;
  for (const auto& inst : instances) {
    const auto c = static_cast<std::size_t>(inst.cell());
    ++cell_instances[c];
    objects += inst.objects.size();
    entities += inst.entities.size();
    for (std::size_t e = 0; e < inst.entities.size(); ++e)
      for (std::size_t o = 0; o < inst.objects.size(); ++o) {
        const std::size_t label = schema.index(inst.gold_relation(e, o));
        ++histogram[label];
        ++cell_pairs[c];
        ++pairs;
        if (label == schema.none_index()) ++cell_none[c];
      }
  }
  const double n = static_cast<double>(std::max<std::size_t>(instances.size(), 1));
  Json cells = Json::object();
  for (Cell cell : kAllCells) {
    const auto c = static_cast<std::size_t>(cell);
    cells[to_string(cell)] = {
        {"instances", cell_instances[c]},
        {"proportion", static_cast<double>(cell_instances[c]) / n},
        {"pairs", cell_pairs[c]},
        {"none", cell_none[c]},
        {"none_ratio", cell_pairs[c] ? static_cast<double>(cell_none[c]) / static_cast<double>(cell_pairs[c]) : 0.0}};
  }
  Json hist = Json::object();
  for (std::size_t l = 0; l < schema.size(); ++l) hist[schema.labels[l]] = histogram[l];
  const Json j{{"instances", instances.size()},
               {"pairs", pairs},
               {"facts", pairs - histogram[schema.none_index()]},
               {"mean_objects", static_cast<double>(objects) / n},
               {"mean_entities", static_cast<double>(entities) / n},
               {"cells", cells},
               {"relations", hist}};
  return j.dump();
}

std::string write_corpus(const Corpus& corpus, const RelationSchema& schema, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "rasters", ec);
  if (ec) throw IoError("cannot create " + (dir / "rasters").string() + ": " + ec.message());
  const std::array<std::pair<const char*, const std::vector<Instance>*>, 3> splits{
      {{"train", &corpus.train}, {"dev", &corpus.dev}, {"test", &corpus.test}}};
  Json stats = Json::object();
  std::vector<Instance> all;
  for (const auto& [name, items] : splits) {
    std::vector<Instance> stored = *items;
    for (auto& inst : stored) {
      inst.rgb_path = "rasters/" + inst.id + ".rgb.bin";
      inst.depth_path = "rasters/" + inst.id + ".depth.bin";
      write_raster(inst.rgb, dir / inst.rgb_path);
      write_raster(inst.depth, dir / inst.depth_path);
    }
    write_split(stored, dir / (std::string(name) + ".jsonl"));
    stats[name] = Json::parse(corpus_stats(*items, schema));
    all.insert(all.end(), items->begin(), items->end());
  }
  stats["overall"] = Json::parse(corpus_stats(all, schema));
  generator_vocabulary().save(dir / "vocab.txt");
  write_schema(schema, dir / "schema.json");
  const std::string text = stats.dump(2) + "\n";
  write_text(dir / "stats.json", text);
  return text;
}

std::string generate_dataset(std::uint64_t seed, const SplitSizes& sizes, const RelationSchema& schema,
                             const GeneratorConfig& config, const fs::path& dir) {
  return write_corpus(generate_corpus(seed, sizes, schema, config), schema, dir);
}

Corpus read_corpus(const fs::path& dir, bool load_rasters) {
  Corpus c;
  c.train = read_split(dir / "train.jsonl", load_rasters);
  c.dev = read_split(dir / "dev.jsonl", load_rasters);
  c.test = read_split(dir / "test.jsonl", load_rasters);
  return c;
}

}  // namespace morelab

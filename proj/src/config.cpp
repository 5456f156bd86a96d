#include "morelab/config.hpp"

#include <sstream>

#include "json.hpp"
#include "morelab/errors.hpp"

namespace morelab {

FeatureFlags FeatureFlags::parse(const std::string& spec) {
  FeatureFlags f{false, false, false};
  if (spec.empty() || spec == "none") return f;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "p" || item == "P" || item == "position") {
      f.position = true;
    } else if (item == "a" || item == "A" || item == "attribute") {
      f.attribute = true;
    } else if (item == "d" || item == "D" || item == "depth") {
      f.depth = true;
    } else if (!item.empty()) {
      throw InputError("unknown feature '" + item + "' (expected p, a, d)");
    }
  }
  return f;
}

std::string FeatureFlags::to_string() const {
  std::string out;
  auto append = [&](bool on, const char* s) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += s;
  };
  append(position, "p");
  append(attribute, "a");
  append(depth, "d");
  return out.empty() ? "none" : out;
}

void ModelConfig::validate() const {
  if (vocab_size == 0) throw InputError("model config: vocab_size must be positive");
  if (hidden == 0 || heads == 0 || hidden % heads != 0) {
    throw InputError("model config: hidden size " + std::to_string(hidden) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (patch_size == 0 || crop_size % patch_size != 0) {
    throw InputError("model config: crop size " + std::to_string(crop_size) + " not divisible by patch size " +
                     std::to_string(patch_size));
  }
  if (num_labels < 2) throw InputError("model config: need at least two labels");
  if (max_objects == 0 || max_objects > 10) throw InputError("model config: max_objects must lie in [1, 10]");
  if (max_tokens < 8 || max_tokens > 96) throw InputError("model config: max_tokens must lie in [8, 96]");
  if (!(ln_eps > 0.0)) throw InputError("model config: ln_eps must be positive");
}

ModelConfig ModelConfig::toy(std::size_t vocab_size) {
  ModelConfig c;
  c.vocab_size = vocab_size;
  c.hidden = 16;
  c.heads = 2;
  c.ffn = 32;
  c.text_layers = 1;
  c.visual_layers = 1;
  c.fusion_layers = 2;
  c.crop_size = 16;
  c.patch_size = 8;
  return c;
}

ModelConfig ModelConfig::tiny(std::size_t vocab_size) {
  ModelConfig c = toy(vocab_size);
  c.hidden = 8;
  c.ffn = 12;
  c.crop_size = 8;
  c.patch_size = 4;
  return c;
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["vocab_size"] = vocab_size;
  j["hidden"] = hidden;
  j["heads"] = heads;
  j["ffn"] = ffn;
  j["text_layers"] = text_layers;
  j["visual_layers"] = visual_layers;
  j["fusion_layers"] = fusion_layers;
  j["max_tokens"] = max_tokens;
  j["max_objects"] = max_objects;
  j["crop_size"] = crop_size;
  j["patch_size"] = patch_size;
  j["num_labels"] = num_labels;
  j["ln_eps"] = ln_eps;
  j["features"] = features.to_string();
  j["head"] = head == HeadKind::kFull ? "full" : "baseline";
  j["init_seed"] = init_seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ModelConfig c;
  c.vocab_size = j.at("vocab_size");
  c.hidden = j.at("hidden");
  c.heads = j.at("heads");
  c.ffn = j.at("ffn");
  c.text_layers = j.at("text_layers");
  c.visual_layers = j.at("visual_layers");
  c.fusion_layers = j.at("fusion_layers");
  c.max_tokens = j.at("max_tokens");
  c.max_objects = j.at("max_objects");
  c.crop_size = j.at("crop_size");
  c.patch_size = j.at("patch_size");
  c.num_labels = j.at("num_labels");
  c.ln_eps = j.at("ln_eps");
  c.features = FeatureFlags::parse(j.at("features").get<std::string>());
  c.head = j.at("head").get<std::string>() == "baseline" ? HeadKind::kBaseline : HeadKind::kFull;
  c.init_seed = j.value("init_seed", std::uint64_t{0});
  return c;
}

}  // namespace morelab

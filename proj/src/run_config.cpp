#include "morelab/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "morelab/errors.hpp"

namespace morelab {
namespace {

namespace pt = boost::property_tree;

const std::set<std::string>& known_keys(const std::string& section) {
  static const std::map<std::string, std::set<std::string>> keys{
      {"run", {"seed", "data", "out"}},
      {"generator",
       {"train", "dev", "test", "objects_max", "relations", "zipf", "image_size", "min_box", "max_box",
        "multi_object_p"}},
      {"model",
       {"preset", "hidden", "heads", "ffn", "text_layers", "visual_layers", "fusion_layers", "max_tokens",
        "crop_size", "patch_size", "head", "init_seed"}},
      {"train",
       {"features", "lr", "batch", "dropout", "weight_decay", "beta1", "beta2", "eps", "epochs", "threads"}},
  };
  const auto it = keys.find(section);
  if (it == keys.end()) throw InputError("config: unknown section [" + section + "]");
  return it->second;
}

template <typename T>
void read(const pt::ptree& tree, const std::string& key, T& out) {
  const auto node = tree.get_child_optional(pt::ptree::path_type(key, '.'));
  if (!node) return;
  const std::string text = node->data();
  std::istringstream in(text);
  T value{};
  if constexpr (std::is_unsigned_v<T>) {
    if (text.find('-') != std::string::npos) throw InputError("config: " + key + " must be non-negative");
  }
  if (!(in >> value) || !(in >> std::ws).eof()) throw InputError("config: bad value '" + text + "' for " + key);
  out = value;
}

// Shortest text that reads back to the same double.
std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void RunConfig::apply_preset(const std::string& name) {
  ModelConfig next;
  if (name == "toy") {
    next = ModelConfig::toy(0);
  } else if (name == "tiny") {
    next = ModelConfig::tiny(0);
  } else if (name == "base") {
    next = ModelConfig{};
  } else {
    throw InputError("config: unknown model preset '" + name + "' (toy, tiny, base)");
  }
  next.head = model.head;
  next.init_seed = model.init_seed;
  next.max_objects = model.max_objects;
  model = next;
  preset = name;
}

void RunConfig::load_ini(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  load_ini_string(ss.str());
}

void RunConfig::load_ini_string(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw InputError("config: key '" + section + "' outside a section");
    const auto& keys = known_keys(section);
    for (const auto& kv : body)
      if (!keys.count(kv.first)) throw InputError("config: unknown key " + section + "." + kv.first);
  }

  read(tree, "run.seed", seed);
  if (tree.get_optional<std::string>("run.data")) data_dir = tree.get<std::string>("run.data");
  if (tree.get_optional<std::string>("run.out")) out_dir = tree.get<std::string>("run.out");

  read(tree, "generator.train", sizes.train);
  read(tree, "generator.dev", sizes.dev);
  read(tree, "generator.test", sizes.test);
  read(tree, "generator.objects_max", generator.max_objects);
  model.max_objects = generator.max_objects;
  read(tree, "generator.relations", relations);
  read(tree, "generator.zipf", zipf);
  read(tree, "generator.image_size", generator.image_size);
  read(tree, "generator.min_box", generator.min_box);
  read(tree, "generator.max_box", generator.max_box);
  read(tree, "generator.multi_object_p", generator.multi_object_p);

  if (const auto p = tree.get_optional<std::string>("model.preset")) apply_preset(*p);
  read(tree, "model.hidden", model.hidden);
  read(tree, "model.heads", model.heads);
  read(tree, "model.ffn", model.ffn);
  read(tree, "model.text_layers", model.text_layers);
  read(tree, "model.visual_layers", model.visual_layers);
  read(tree, "model.fusion_layers", model.fusion_layers);
  read(tree, "model.max_tokens", model.max_tokens);
  read(tree, "model.crop_size", model.crop_size);
  read(tree, "model.patch_size", model.patch_size);
  read(tree, "model.init_seed", model.init_seed);
  if (const auto h = tree.get_optional<std::string>("model.head")) {
    if (*h == "full") {
      model.head = HeadKind::kFull;
    } else if (*h == "baseline") {
      model.head = HeadKind::kBaseline;
    } else {
      throw InputError("config: model.head must be full or baseline");
    }
  }

  if (const auto f = tree.get_optional<std::string>("train.features")) train.features = FeatureFlags::parse(*f);
  read(tree, "train.lr", train.lr);
  read(tree, "train.batch", train.batch_size);
  read(tree, "train.dropout", train.dropout);
  read(tree, "train.weight_decay", train.weight_decay);
  read(tree, "train.beta1", train.beta1);
  read(tree, "train.beta2", train.beta2);
  read(tree, "train.eps", train.eps);
  read(tree, "train.epochs", train.epochs);
  read(tree, "train.threads", train.threads);
}

std::string RunConfig::to_ini() const {
  std::ostringstream out;
  out << "[run]\n"
      << "seed = " << seed << '\n'
      << "data = " << data_dir.string() << '\n'
      << "out = " << out_dir.string() << "\n\n";
  out << "[generator]\n"
      << "train = " << sizes.train << '\n'
      << "dev = " << sizes.dev << '\n'
      << "test = " << sizes.test << '\n'
      << "objects_max = " << generator.max_objects << '\n'
      << "relations = " << relations << '\n'
      << "zipf = " << fmt(zipf) << '\n'
      << "image_size = " << generator.image_size << '\n'
      << "min_box = " << generator.min_box << '\n'
      << "max_box = " << generator.max_box << '\n'
      << "multi_object_p = " << fmt(generator.multi_object_p) << "\n\n";
  out << "[model]\n"
      << "preset = " << preset << '\n'
      << "hidden = " << model.hidden << '\n'
      << "heads = " << model.heads << '\n'
      << "ffn = " << model.ffn << '\n'
      << "text_layers = " << model.text_layers << '\n'
      << "visual_layers = " << model.visual_layers << '\n'
      << "fusion_layers = " << model.fusion_layers << '\n'
      << "max_tokens = " << model.max_tokens << '\n'
      << "crop_size = " << model.crop_size << '\n'
      << "patch_size = " << model.patch_size << '\n'
      << "head = " << (model.head == HeadKind::kFull ? "full" : "baseline") << '\n'
      << "init_seed = " << model.init_seed << "\n\n";
  out << "[train]\n"
      << "features = " << train.features.to_string() << '\n'
      << "lr = " << fmt(train.lr) << '\n'
      << "batch = " << train.batch_size << '\n'
      << "dropout = " << fmt(train.dropout) << '\n'
      << "weight_decay = " << fmt(train.weight_decay) << '\n'
      << "beta1 = " << fmt(train.beta1) << '\n'
      << "beta2 = " << fmt(train.beta2) << '\n'
      << "eps = " << fmt(train.eps) << '\n'
      << "epochs = " << train.epochs << '\n'
      << "threads = " << train.threads << '\n';
  return out.str();
}

ModelConfig RunConfig::model_for(std::size_t vocab_size) const {
  ModelConfig c = model;
  c.vocab_size = vocab_size;
  c.num_labels = relations + 1;
  c.features = train.features;
  c.max_objects = generator.max_objects;
  return c;
}

void RunConfig::validate() const {
  generator.validate();
  train.validate();
  schema().validate();
  model_for(1).validate();
}

}  // namespace morelab

#include "morelab/parameters.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "json.hpp"

#include "morelab/errors.hpp"

namespace morelab {

Tensor& ParameterStore::add(const std::string& name, Shape shape, Init init, Rng& rng) {
  if (contains(name)) throw InputError("duplicate parameter " + name);
  Tensor t(shape);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      for (double& v : t.data()) v = 1.0;
      break;
    case Init::kXavier: {
      const double fan_in = shape.size() >= 2 ? static_cast<double>(shape[0]) : 1.0;
      const double fan_out = static_cast<double>(shape.back());
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : t.data()) v = rng.uniform(-limit, limit);
      break;
    }
    case Init::kNormal002:
      for (double& v : t.data()) v = rng.normal(0.0, 0.02);
      break;
  }
  t.set_requires_grad(true);
  index_.emplace(name, tensors_.size());
  names_.push_back(name);
  tensors_.push_back(std::move(t));
  return tensors_.back();
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InputError("unknown parameter " + name);
  return tensors_[it->second];
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InputError("unknown parameter " + name);
  return tensors_[it->second];
}

std::vector<Tensor*> ParameterStore::all() {
  std::vector<Tensor*> out;
  for (Tensor& t : tensors_) out.push_back(&t);
  return out;
}

std::size_t ParameterStore::num_scalars() const {
  std::size_t n = 0;
  for (const Tensor& t : tensors_) n += t.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (Tensor& t : tensors_) t.clear_grad();
}

std::vector<std::vector<double>> ParameterStore::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(tensors_.size());
  for (const Tensor& t : tensors_) out.push_back(t.storage());
  return out;
}

void ParameterStore::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != tensors_.size()) throw DimensionError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].size() != tensors_[i].size()) throw DimensionError("restore: size mismatch for " + names_[i]);
    tensors_[i].storage() = values[i];
  }
}

void write_u32_le(std::ostream& os, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  os.write(bytes, 4);
}

std::uint32_t read_u32_le(std::istream& is) {
  unsigned char bytes[4];
  if (!is.read(reinterpret_cast<char*>(bytes), 4)) throw IoError("unexpected end of binary stream");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
  return v;
}

void write_f64_le(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  os.write(bytes, 8);
}

double read_f64_le(std::istream& is) {
  unsigned char bytes[8];
  if (!is.read(reinterpret_cast<char*>(bytes), 8)) throw IoError("unexpected end of binary stream");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

namespace {

std::filesystem::path manifest_path(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".manifest.json");
}
std::filesystem::path blob_path(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".bin");
}

nlohmann::json read_manifest(const std::filesystem::path& stem) {
  std::ifstream in(manifest_path(stem));
  if (!in) throw IoError("cannot open checkpoint manifest " + manifest_path(stem).string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest " + manifest_path(stem).string() + ": " + e.what());
  }
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& stem, const std::string& extra_json) {
  nlohmann::json manifest;
  manifest["format"] = "morelab-checkpoint-v1";
  manifest["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < store.size(); ++i) {
    manifest["params"].push_back({{"name", store.name(i)}, {"shape", store.at(i).shape()}});
  }
  manifest["extra"] = extra_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(extra_json);
  {
    std::ofstream out(manifest_path(stem));
    if (!out) throw IoError("cannot write checkpoint manifest " + manifest_path(stem).string());
    out << manifest.dump(2) << '\n';
  }
  std::ofstream blob(blob_path(stem), std::ios::binary);
  if (!blob) throw IoError("cannot write checkpoint blob " + blob_path(stem).string());
  for (std::size_t i = 0; i < store.size(); ++i) {
    for (double v : store.at(i).data()) write_f64_le(blob, v);
  }
  if (!blob) throw IoError("write failed for " + blob_path(stem).string());
}

std::string read_checkpoint_extra(const std::filesystem::path& stem) { return read_manifest(stem)["extra"].dump(); }

std::string load_checkpoint(ParameterStore& store, const std::filesystem::path& stem) {
  const nlohmann::json manifest = read_manifest(stem);
  const auto& params = manifest.at("params");
  if (params.size() != store.size()) {
    throw IoError("checkpoint has " + std::to_string(params.size()) + " parameters, model expects " +
                  std::to_string(store.size()));
  }
  std::ifstream blob(blob_path(stem), std::ios::binary);
  if (!blob) throw IoError("cannot open checkpoint blob " + blob_path(stem).string());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const std::string name = params[i].at("name").get<std::string>();
    const Shape shape = params[i].at("shape").get<Shape>();
    if (name != store.name(i) || shape != store.at(i).shape()) {
      throw IoError("checkpoint entry " + name + shape_string(shape) + " does not match model parameter " +
                    store.name(i) + shape_string(store.at(i).shape()));
    }
    for (double& v : store.at(i).data()) v = read_f64_le(blob);
  }
  if (blob.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in " + blob_path(stem).string());
  return manifest["extra"].dump();
}

}  // namespace morelab

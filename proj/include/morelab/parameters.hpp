#pragma once

#include <cstddef>
#include <deque>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "morelab/rng.hpp"
#include "morelab/tensor.hpp"

namespace morelab {

enum class Init { kZeros, kOnes, kXavier, kNormal002 };

/// Named, ordered parameter tensors. Addresses stay valid for the lifetime of
/// the store, so layers may keep raw pointers into it.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Tensor& add(const std::string& name, Shape shape, Init init, Rng& rng);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& at(std::size_t i) { return tensors_[i]; }
  const Tensor& at(std::size_t i) const { return tensors_[i]; }
  std::vector<Tensor*> all();
  std::size_t num_scalars() const;

  void zero_grad();
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  std::deque<Tensor> tensors_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Checkpoint layout: `<stem>.manifest.json` lists {name, shape} in order and
/// `<stem>.bin` holds every parameter as little-endian f64, concatenated in
/// manifest order. `extra` is stored verbatim in the manifest.
void save_checkpoint(const ParameterStore& store, const std::filesystem::path& stem, const std::string& extra_json);
/// Loads values into an already-shaped store; names and shapes must match.
/// Returns the manifest's `extra` field serialized as JSON.
std::string load_checkpoint(ParameterStore& store, const std::filesystem::path& stem);
std::string read_checkpoint_extra(const std::filesystem::path& stem);

void write_f64_le(std::ostream& os, double v);
double read_f64_le(std::istream& is);
void write_u32_le(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32_le(std::istream& is);

}  // namespace morelab

#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace morelab {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Every tensor can be viewed as a matrix of `rows() x cols()` where `cols()`
/// is the last dimension; row-wise ops (softmax, layer_norm) use that view.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor from_values(std::initializer_list<double> values);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }
  std::size_t rows() const noexcept { return cols() == 0 ? 0 : data_.size() / cols(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<double> row(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  /// Scalar value of a single-element tensor.
  double item() const;

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  const std::optional<std::vector<double>>& grad() const noexcept { return grad_; }
  std::vector<double>& grad_or_zeros();
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  bool all_finite() const;
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor& other) const { return shape_ == other.shape_ && data_ == other.data_; }

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
};

}  // namespace morelab

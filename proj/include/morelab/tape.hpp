#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <unordered_map>
#include <vector>

#include "morelab/tensor.hpp"

namespace morelab {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Reverse-mode gradient tape.
///
/// Values live in insertion order, so every node's inputs precede it and a
/// single reverse sweep visits each node once. A non-recording tape only
/// evaluates values (inference, finite differences).
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t output)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var constant(Tensor value);

  /// Registers `param` as a leaf. Repeated calls return the same Var; gradients
  /// are added into `param.grad` at the end of backward().
  Var leaf(Tensor& param);

  /// Records an op output. `backward` is dropped when no input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return values_[id]; }
  bool needs_grad(std::size_t id) const { return needs_grad_[id]; }

  /// Gradient buffer of `id`; empty span if nothing flowed into it.
  std::span<const double> grad(std::size_t id) const;
  std::span<const double> grad(Var v) const { return grad(v.id); }
  /// Mutable gradient buffer, allocated on first use.
  std::vector<double>& grad_mut(std::size_t id);

  void backward(Var loss);

  std::size_t num_values() const noexcept { return values_.size(); }
  std::size_t num_nodes() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    std::vector<std::size_t> inputs;
    std::size_t output;
    BackwardFn backward;
  };

  std::size_t push(Tensor value, bool needs_grad);

  bool record_;
  std::deque<Tensor> values_;
  std::deque<std::vector<double>> grads_;
  std::vector<bool> needs_grad_;
  std::vector<Node> nodes_;
  std::vector<std::pair<std::size_t, Tensor*>> bindings_;
  std::unordered_map<const Tensor*, std::size_t> leaf_ids_;
};

}  // namespace morelab

#include "morelab/tape.hpp"

#include "morelab/errors.hpp"

namespace morelab {

const Tensor& Var::value() const { return tape->value(id); }

std::size_t Tape::push(Tensor value, bool needs_grad) {
  values_.push_back(std::move(value));
  grads_.emplace_back();
  needs_grad_.push_back(needs_grad);
  return values_.size() - 1;
}

Var Tape::constant(Tensor value) { return Var{this, push(std::move(value), false)}; }

Var Tape::leaf(Tensor& param) {
  if (auto it = leaf_ids_.find(&param); it != leaf_ids_.end()) return Var{this, it->second};
  const bool track = record_ && param.requires_grad();
  const std::size_t id = push(param, track);
  leaf_ids_.emplace(&param, id);
  if (track) bindings_.emplace_back(id, &param);
  return Var{this, id};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  bool any = false;
  if (record_) {
    for (const Var& v : inputs) any = any || needs_grad_[v.id];
  }
  const std::size_t id = push(std::move(value), any);
  if (any) {
    Node node;
    node.inputs.reserve(inputs.size());
    for (const Var& v : inputs) node.inputs.push_back(v.id);
    node.output = id;
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
  }
  return Var{this, id};
}

std::span<const double> Tape::grad(std::size_t id) const { return grads_[id]; }

std::vector<double>& Tape::grad_mut(std::size_t id) {
  auto& g = grads_[id];
  if (g.empty()) g.assign(values_[id].size(), 0.0);
  return g;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw InputError("backward called with a Var from another tape");
  if (values_[loss.id].size() != 1) {
    throw DimensionError("backward requires a scalar loss, got " + shape_string(values_[loss.id].shape()));
  }
  if (!record_) throw InputError("backward on a non-recording tape");
  grad_mut(loss.id)[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (grads_[it->output].empty()) continue;
    it->backward(*this, it->output);
  }
  for (auto& [id, param] : bindings_) {
    const auto& g = grads_[id];
    if (g.empty()) continue;
    auto& dst = param->grad_or_zeros();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
}

}  // namespace morelab

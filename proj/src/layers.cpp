#include "morelab/layers.hpp"

#include <cmath>

#include "morelab/errors.hpp"

namespace morelab {

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                      bool with_bias) {
  Linear l;
  l.weight = &store.add(name + ".weight", {in, out}, Init::kXavier, rng);
  if (with_bias) l.bias = &store.add(name + ".bias", {out}, Init::kZeros, rng);
  return l;
}

Var Linear::operator()(Tape& tape, Var x) const {
  Var y = ops::matmul(x, tape.leaf(*weight));
  return bias ? ops::add_bias(y, tape.leaf(*bias)) : y;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t dim, double eps, Rng& rng) {
  LayerNorm ln;
  ln.gamma = &store.add(name + ".gamma", {dim}, Init::kOnes, rng);
  ln.beta = &store.add(name + ".beta", {dim}, Init::kZeros, rng);
  ln.eps = eps;
  return ln;
}

Var LayerNorm::operator()(Tape& tape, Var x) const {
  return ops::layer_norm(x, tape.leaf(*gamma), tape.leaf(*beta), eps);
}

Var activate(Var x, Activation a) { return a == Activation::kRelu ? ops::relu(x) : ops::gelu(x); }

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t hidden,
                                Activation act, Rng& rng) {
  FeedForward f;
  f.in = Linear::create(store, name + ".in", dim, hidden, rng);
  f.out = Linear::create(store, name + ".out", hidden, dim, rng);
  f.activation = act;
  return f;
}

Var FeedForward::operator()(Tape& tape, Var x) const { return out(tape, activate(in(tape, x), activation)); }

Var multi_head_attention(ForwardContext& ctx, Var q, Var k, Var v, std::size_t heads,
                         const std::vector<bool>* key_valid) {
  const std::size_t d = q.cols();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("attention width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  if (k.cols() != d || v.cols() != d || k.rows() != v.rows()) {
    throw DimensionError("attention: q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) + ", v " +
                         shape_string(v.shape()));
  }
  const std::size_t dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> contexts;
  contexts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = ops::slice_cols(q, h * dh, dh);
    Var kh = ops::slice_cols(k, h * dh, dh);
    Var vh = ops::slice_cols(v, h * dh, dh);
    Var scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), scale);
    Var weights = key_valid ? ops::masked_softmax(scores, *key_valid) : ops::softmax(scores);
    if (ctx.attention_log) ctx.attention_log->push_back(weights.value());
    contexts.push_back(ops::matmul(weights, vh));
  }
  return heads == 1 ? contexts.front() : ops::concat_cols(contexts);
}

SelfAttention SelfAttention::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                    std::size_t heads, Rng& rng) {
  SelfAttention a;
  a.query = Linear::create(store, name + ".query", dim, dim, rng);
  a.key = Linear::create(store, name + ".key", dim, dim, rng);
  a.value = Linear::create(store, name + ".value", dim, dim, rng);
  a.output = Linear::create(store, name + ".output", dim, dim, rng);
  a.heads = heads;
  return a;
}

Var SelfAttention::operator()(ForwardContext& ctx, Var x, const std::vector<bool>* key_valid) const {
  Tape& t = ctx.tape;
  Var context = multi_head_attention(ctx, query(t, x), key(t, x), value(t, x), heads, key_valid);
  return output(t, context);
}

}  // namespace morelab

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "morelab/ops.hpp"
#include "morelab/parameters.hpp"

namespace morelab {

/// Per-forward settings shared by every layer.
struct ForwardContext {
  Tape& tape;
  bool training = false;
  double dropout = 0.0;
  Rng* rng = nullptr;
  /// When set, attention layers append their softmax weights here (one
  /// tensor per head, in call order).
  std::vector<Tensor>* attention_log = nullptr;
};

struct Linear {
  Tensor* weight = nullptr;  // in x out
  Tensor* bias = nullptr;    // out, may be null

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       bool with_bias = true);
  Var operator()(Tape& tape, Var x) const;
};

struct LayerNorm {
  Tensor* gamma = nullptr;
  Tensor* beta = nullptr;
  double eps = 1e-5;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t dim, double eps, Rng& rng);
  Var operator()(Tape& tape, Var x) const;
};

enum class Activation { kGelu, kRelu };

struct FeedForward {
  Linear in;
  Linear out;
  Activation activation = Activation::kGelu;

  static FeedForward create(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t hidden,
                            Activation act, Rng& rng);
  Var operator()(Tape& tape, Var x) const;
};

/// Scaled dot-product attention over pre-projected q [nq x d], k/v [nk x d],
/// split into `heads` column blocks. Keys with key_valid[j] == false receive
/// zero weight. Returns the concatenated per-head contexts [nq x d].
Var multi_head_attention(ForwardContext& ctx, Var q, Var k, Var v, std::size_t heads,
                         const std::vector<bool>* key_valid);

struct SelfAttention {
  Linear query;
  Linear key;
  Linear value;
  Linear output;
  std::size_t heads = 1;

  static SelfAttention create(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t heads,
                              Rng& rng);
  Var operator()(ForwardContext& ctx, Var x, const std::vector<bool>* key_valid) const;
};

Var activate(Var x, Activation a);

}  // namespace morelab

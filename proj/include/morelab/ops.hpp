#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "morelab/rng.hpp"
#include "morelab/tape.hpp"

// Differentiable tensor operations. Every op records a backward rule on the
// tape of its inputs. No implicit broadcasting: bias rows and scalars have
// dedicated ops.
namespace morelab::ops {

Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// x[..., n] + bias[n] for every row.
Var add_bias(Var x, Var bias);
Var scale(Var x, double factor);

Var relu(Var x);
Var gelu(Var x);

/// Row-wise softmax over the last axis, max-subtracted.
Var softmax(Var x);
/// Softmax where columns with `key_valid[j] == false` get exactly zero weight.
Var masked_softmax(Var x, const std::vector<bool>& key_valid);

Var layer_norm(Var x, Var gamma, Var beta, double eps);

/// Stacks along rows; rank-1 inputs count as one row.
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var x, std::size_t start, std::size_t count);
Var slice_cols(Var x, std::size_t start, std::size_t count);
Var gather_rows(Var table, std::span<const std::size_t> ids);

/// Mean over the first axis of an s x d tensor, returns shape [d].
Var avg_pool(Var x);
Var sum(Var x);

/// Mean negative log-likelihood of `targets` under row-wise softmax(logits).
Var cross_entropy(Var logits, std::span<const std::size_t> targets);

/// Inverted dropout: kept units are scaled by 1/(1-rate).
Var dropout(Var x, double rate, Rng& rng);

}  // namespace morelab::ops

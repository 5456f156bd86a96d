#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "morelab/tape.hpp"

namespace morelab {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Scalar function of the parameters, built on the supplied tape via Tape::leaf.
using ScalarFn = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients of `f` with central differences of step `h`
/// for every coordinate of every parameter. The error per coordinate is
/// |analytic - numeric| / max(1, |analytic|). Throws EvaluationError when f is
/// not finite.
GradCheckResult grad_check(const ScalarFn& f, std::span<Tensor* const> params, double h = 1e-5);

struct OpGradReport {
  std::string name;
  double max_rel_error = 0.0;
};

/// Checks every differentiable op on `trials` seeded random inputs. Each op
/// output is reduced with fixed random weights so every coordinate matters.
std::vector<OpGradReport> op_gradient_suite(std::size_t trials = 100, std::uint64_t seed = 2024);

}  // namespace morelab

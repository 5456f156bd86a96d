#include "morelab/grad_check.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <vector>

#include "morelab/errors.hpp"
#include "morelab/ops.hpp"
#include "morelab/rng.hpp"

namespace morelab {
namespace {

double evaluate(const ScalarFn& f) {
  Tape tape(false);
  const double v = f(tape).value().item();
  if (!std::isfinite(v)) throw EvaluationError("grad_check: function value is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, std::span<Tensor* const> params, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw InputError("grad_check: step must lie in [1e-7, 1e-3]");

  std::vector<bool> saved_flags;
  for (Tensor* p : params) {
    saved_flags.push_back(p->requires_grad());
    p->set_requires_grad(true);
    p->clear_grad();
  }
  {
    Tape tape(true);
    Var loss = f(tape);
    if (!std::isfinite(loss.value().item())) throw EvaluationError("grad_check: function value is not finite");
    tape.backward(loss);
  }

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    const std::vector<double> analytic = p.grad() ? *p.grad() : std::vector<double>(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + h;
      const double up = evaluate(f);
      p[i] = orig - h;
      const double down = evaluate(f);
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      ++result.coordinates;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = pi;
        result.worst_index = i;
      }
    }
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    params[pi]->clear_grad();
    params[pi]->set_requires_grad(saved_flags[pi]);
  }
  return result;
}

namespace {

using OpFn = std::function<Var(Tape&, std::vector<Var>&)>;

struct OpCase {
  const char* name;
  std::vector<Shape> shapes;
  OpFn op;
};

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.normal();
  return t;
}

double op_error(const OpFn& op, std::vector<Tensor>& inputs, Rng& rng) {
  Tensor probe;
  {
    Tape t(false);
    std::vector<Var> vs;
    for (auto& in : inputs) vs.push_back(t.leaf(in));
    probe = random_tensor(op(t, vs).shape(), rng);
  }
  std::vector<Tensor*> params;
  for (auto& in : inputs) params.push_back(&in);
  const auto r = grad_check(
      [&](Tape& t) {
        std::vector<Var> vs;
        for (auto& in : inputs) vs.push_back(t.leaf(in));
        return ops::sum(ops::mul(op(t, vs), t.constant(probe)));
      },
      params, 1e-6);
  return r.max_rel_error;
}

}  // namespace

std::vector<OpGradReport> op_gradient_suite(std::size_t trials, std::uint64_t seed) {
  const std::vector<OpCase> cases = {
      {"matmul", {{3, 4}, {4, 2}}, [](Tape&, std::vector<Var>& v) { return ops::matmul(v[0], v[1]); }},
      {"transpose", {{3, 4}}, [](Tape&, std::vector<Var>& v) { return ops::transpose(v[0]); }},
      {"add", {{2, 3}, {2, 3}}, [](Tape&, std::vector<Var>& v) { return ops::add(v[0], v[1]); }},
      {"sub", {{2, 3}, {2, 3}}, [](Tape&, std::vector<Var>& v) { return ops::sub(v[0], v[1]); }},
      {"mul", {{2, 3}, {2, 3}}, [](Tape&, std::vector<Var>& v) { return ops::mul(v[0], v[1]); }},
      {"add_bias", {{3, 4}, {4}}, [](Tape&, std::vector<Var>& v) { return ops::add_bias(v[0], v[1]); }},
      {"scale", {{2, 2}}, [](Tape&, std::vector<Var>& v) { return ops::scale(v[0], -1.7); }},
      {"relu", {{3, 3}}, [](Tape&, std::vector<Var>& v) { return ops::relu(v[0]); }},
      {"gelu", {{3, 3}}, [](Tape&, std::vector<Var>& v) { return ops::gelu(v[0]); }},
      {"softmax", {{3, 5}}, [](Tape&, std::vector<Var>& v) { return ops::softmax(v[0]); }},
      {"masked_softmax", {{3, 4}},
       [](Tape&, std::vector<Var>& v) { return ops::masked_softmax(v[0], {true, false, true, true}); }},
      {"layer_norm", {{3, 5}, {5}, {5}},
       [](Tape&, std::vector<Var>& v) { return ops::layer_norm(v[0], v[1], v[2], 1e-5); }},
      {"concat_rows", {{2, 3}, {1, 3}, {3}}, [](Tape&, std::vector<Var>& v) { return ops::concat_rows(v); }},
      {"concat_cols", {{2, 3}, {2, 1}}, [](Tape&, std::vector<Var>& v) { return ops::concat_cols(v); }},
      {"slice_rows", {{4, 3}}, [](Tape&, std::vector<Var>& v) { return ops::slice_rows(v[0], 1, 2); }},
      {"slice_cols", {{3, 5}}, [](Tape&, std::vector<Var>& v) { return ops::slice_cols(v[0], 2, 3); }},
      {"gather_rows", {{5, 3}},
       [](Tape&, std::vector<Var>& v) {
         const std::vector<std::size_t> ids{4, 0, 4, 2};
         return ops::gather_rows(v[0], ids);
       }},
      {"avg_pool", {{6, 4}}, [](Tape&, std::vector<Var>& v) { return ops::avg_pool(v[0]); }},
      {"sum", {{3, 2}}, [](Tape&, std::vector<Var>& v) { return ops::sum(v[0]); }},
      {"cross_entropy", {{3, 4}},
       [](Tape&, std::vector<Var>& v) {
         const std::vector<std::size_t> targets{1, 3, 0};
         return ops::cross_entropy(v[0], targets);
       }},
      {"dropout", {{4, 4}},
       [](Tape&, std::vector<Var>& v) {
         Rng fixed(99);
         return ops::dropout(v[0], 0.5, fixed);
       }},
  };
  Rng rng(seed);
  std::vector<OpGradReport> out;
  for (const auto& c : cases) {
    OpGradReport r{c.name, 0.0};
    for (std::size_t trial = 0; trial < trials; ++trial) {
      std::vector<Tensor> inputs;
      for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng));
      r.max_rel_error = std::max(r.max_rel_error, op_error(c.op, inputs, rng));
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace morelab

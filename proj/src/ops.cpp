#include "morelab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "morelab/errors.hpp"

namespace morelab::ops {
namespace {

Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr) throw InputError("operands recorded on different tapes");
  return *a.tape;
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

// out[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  Tensor out({m, n});
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return tape.record(std::move(out), {a, b}, [ai = a.id, bi = b.id, m, k, n](Tape& t, std::size_t o) {
    const double* g = t.grad(o).data();
    const double* A = t.value(ai).data().data();
    const double* B = t.value(bi).data().data();
    if (t.needs_grad(ai)) {
      // dA = dC * B^T
      double* ga = t.grad_mut(ai).data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (t.needs_grad(bi)) {
      // dB = A^T * dC
      double* gb = t.grad_mut(bi).data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  require_rank2(av, "transpose");
  const std::size_t r = av.shape()[0], c = av.shape()[1];
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  return a.tape->record(std::move(out), {a}, [ai = a.id, r, c](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    auto& ga = t.grad_mut(ai);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Var add(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return tape.record(std::move(out), {a, b}, [ai = a.id, bi = b.id](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    for (std::size_t id : {ai, bi}) {
      if (!t.needs_grad(id)) continue;
      auto& gi = t.grad_mut(id);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return tape.record(std::move(out), {a, b}, [ai = a.id, bi = b.id](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    if (t.needs_grad(ai)) {
      auto& ga = t.grad_mut(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad_mut(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  auto bd = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  return tape.record(std::move(out), {a, b}, [ai = a.id, bi = b.id](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    if (t.needs_grad(ai)) {
      auto bv = t.value(bi).data();
      auto& ga = t.grad_mut(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(bi)) {
      auto av = t.value(ai).data();
      auto& gb = t.grad_mut(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_bias(Var x, Var bias) {
  Tape& tape = same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not match rows of " +
                         shape_string(xv.shape()));
  }
  Tensor out = xv;
  const std::size_t n = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  return tape.record(std::move(out), {x, bias}, [xi = x.id, bi = bias.id, n](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    if (t.needs_grad(xi)) {
      auto& gx = t.grad_mut(xi);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad_mut(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  return x.tape->record(std::move(out), {x}, [xi = x.id, factor](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    auto& gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return x.tape->record(std::move(out), {x}, [xi = x.id](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    auto xv = t.value(xi).data();
    auto& gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += g[i];
    }
  });
}

Var gelu(Var x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  Tensor out = x.value();
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return x.tape->record(std::move(out), {x}, [xi = x.id](Tape& t, std::size_t o) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    auto g = t.grad(o);
    auto xv = t.value(xi).data();
    auto& gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

namespace {

Var softmax_impl(Var x, const std::vector<bool>* key_valid) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  if (n == 0) throw DimensionError("softmax over an empty axis");
  if (key_valid && key_valid->size() != n) {
    throw DimensionError("masked_softmax: mask length " + std::to_string(key_valid->size()) + " vs " +
                         std::to_string(n) + " columns");
  }
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    auto in = xv.row(r);
    auto dst = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    bool any_valid = false, finite = true;
    for (std::size_t j = 0; j < n; ++j) {
      if (key_valid && !(*key_valid)[j]) continue;
      any_valid = true;
      finite = finite && std::isfinite(in[j]);
      mx = std::max(mx, in[j]);
    }
    if (!any_valid) throw InputError("softmax row has no valid entries");
    if (!finite) {
      // Non-finite scores propagate as NaN so callers can detect divergence.
      std::ranges::fill(dst, std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = (!key_valid || (*key_valid)[j]) ? std::exp(in[j] - mx) : 0.0;
      dst[j] = e;
      total += e;
    }
    for (std::size_t j = 0; j < n; ++j) dst[j] /= total;
  }
  return x.tape->record(std::move(out), {x}, [xi = x.id, n](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    auto y = t.value(o).data();
    auto& gx = t.grad_mut(xi);
    for (std::size_t base = 0; base < y.size(); base += n) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[base + j] * y[base + j];
      for (std::size_t j = 0; j < n; ++j) gx[base + j] += y[base + j] * (g[base + j] - dot);
    }
  });
}

}  // namespace

Var softmax(Var x) { return softmax_impl(x, nullptr); }

Var masked_softmax(Var x, const std::vector<bool>& key_valid) { return softmax_impl(x, &key_valid); }

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape& tape = same_tape(x, gamma);
  same_tape(x, beta);
  if (!(eps > 0.0)) throw InputError("layer_norm: eps must be positive");
  const Tensor& xv = x.value();
  const std::size_t d = xv.cols();
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("layer_norm: gamma/beta " + shape_string(gamma.value().shape()) + " vs width of " +
                         shape_string(xv.shape()));
  }
  const std::size_t rows = xv.rows();
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  Tensor out(xv.shape());
  auto gv = gamma.value().data();
  auto bv = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = xv.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (in[j] - mean) * inv;
      xhat[r * d + j] = h;
      out[r * d + j] = gv[j] * h + bv[j];
    }
  }
  return tape.record(
      std::move(out), {x, gamma, beta},
      [xi = x.id, gi = gamma.id, bi = beta.id, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape& t, std::size_t o) {
        auto g = t.grad(o);
        const std::size_t rows = inv_std.size();
        if (t.needs_grad(gi)) {
          auto& gg = t.grad_mut(gi);
          for (std::size_t i = 0; i < g.size(); ++i) gg[i % d] += g[i] * xhat[i];
        }
        if (t.needs_grad(bi)) {
          auto& gb = t.grad_mut(bi);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i % d] += g[i];
        }
        if (t.needs_grad(xi)) {
          auto gamma_v = t.value(gi).data();
          auto& gx = t.grad_mut(xi);
          const double dd = static_cast<double>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gamma_v[j];
              sum_dh += dh;
              sum_dh_h += dh * xhat[r * d + j];
            }
            for (std::size_t j = 0; j < d; ++j) {
              const double dh = g[r * d + j] * gamma_v[j];
              gx[r * d + j] += inv_std[r] / dd * (dd * dh - sum_dh - xhat[r * d + j] * sum_dh_h);
            }
          }
        }
      });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape& tape = *parts.front().tape;
  const std::size_t c = parts.front().value().cols();
  std::size_t total_rows = 0;
  for (const Var& p : parts) {
    if (p.tape != &tape) throw InputError("operands recorded on different tapes");
    const Tensor& v = p.value();
    if (v.rank() > 2 || v.cols() != c) {
      throw DimensionError("concat_rows: " + shape_string(v.shape()) + " does not have " + std::to_string(c) +
                           " columns");
    }
    total_rows += v.rows();
  }
  std::vector<double> data;
  data.reserve(total_rows * c);
  std::vector<std::size_t> offsets;
  for (const Var& p : parts) {
    offsets.push_back(data.size());
    auto d = p.value().data();
    data.insert(data.end(), d.begin(), d.end());
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  return tape.record(Tensor({total_rows, c}, std::move(data)), parts,
                     [ids, offsets](Tape& t, std::size_t o) {
                       auto g = t.grad(o);
                       for (std::size_t k = 0; k < ids.size(); ++k) {
                         if (!t.needs_grad(ids[k])) continue;
                         auto& gi = t.grad_mut(ids[k]);
                         for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[offsets[k] + i];
                       }
                     });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape& tape = *parts.front().tape;
  const std::size_t r = parts.front().value().rows();
  std::size_t total_cols = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    if (p.tape != &tape) throw InputError("operands recorded on different tapes");
    const Tensor& v = p.value();
    if (v.rank() > 2 || v.rows() != r) {
      throw DimensionError("concat_cols: " + shape_string(v.shape()) + " does not have " + std::to_string(r) +
                           " rows");
    }
    widths.push_back(v.cols());
    total_cols += v.cols();
  }
  Tensor out({r, total_cols});
  std::size_t col0 = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out.at(i, col0 + j) = v.at(i, j);
    col0 += widths[k];
  }
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  return tape.record(std::move(out), parts, [ids, widths, r, total_cols](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.needs_grad(ids[k])) {
        auto& gi = t.grad_mut(ids[k]);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gi[i * widths[k] + j] += g[i * total_cols + c0 + j];
      }
      c0 += widths[k];
    }
  });
}

Var slice_rows(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  if (start + count > xv.rows()) {
    throw IndexError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + shape_string(xv.shape()));
  }
  const std::size_t c = xv.cols();
  auto d = xv.data().subspan(start * c, count * c);
  Tensor out({count, c}, std::vector<double>(d.begin(), d.end()));
  return x.tape->record(std::move(out), {x}, [xi = x.id, start, c](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    auto& gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[start * c + i] += g[i];
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
  const Tensor& xv = x.value();
  const std::size_t c = xv.cols();
  if (start + count > c) {
    throw IndexError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + shape_string(xv.shape()));
  }
  const std::size_t r = xv.rows();
  Tensor out({r, count});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out.at(i, j) = xv[i * c + start + j];
  return x.tape->record(std::move(out), {x}, [xi = x.id, start, count, c, r](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    auto& gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * c + start + j] += g[i * count + j];
  });
}

Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const Tensor& tv = table.value();
  const std::size_t c = tv.cols();
  Tensor out({ids.size(), c});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw IndexError("gather_rows: id " + std::to_string(ids[i]) + " outside table " + shape_string(tv.shape()));
    }
    std::copy_n(tv.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * c), c,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return table.tape->record(std::move(out), {table},
                            [ti = table.id, idx = std::vector<std::size_t>(ids.begin(), ids.end()), c](
                                Tape& t, std::size_t o) {
                              auto g = t.grad(o);
                              auto& gt = t.grad_mut(ti);
                              for (std::size_t i = 0; i < idx.size(); ++i)
                                for (std::size_t j = 0; j < c; ++j) gt[idx[i] * c + j] += g[i * c + j];
                            });
}

Var avg_pool(Var x) {
  const Tensor& xv = x.value();
  const std::size_t s = xv.rank() <= 1 ? (xv.size() == 0 ? 0 : 1) : xv.shape()[0];
  if (s == 0) throw EmptyPoolError("avg_pool over zero rows");
  const std::size_t d = xv.size() / s;
  Tensor out({d});
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += xv[i * d + j];
  const double inv = 1.0 / static_cast<double>(s);
  for (double& v : out.data()) v *= inv;
  return x.tape->record(std::move(out), {x}, [xi = x.id, s, d, inv](Tape& t, std::size_t o) {
    auto g = t.grad(o);
    auto& gx = t.grad_mut(xi);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += g[j] * inv;
  });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape->record(Tensor::scalar(total), {x}, [xi = x.id](Tape& t, std::size_t o) {
    const double g = t.grad(o)[0];
    auto& gx = t.grad_mut(xi);
    for (double& v : gx) v += g;
  });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
  const Tensor& lv = logits.value();
  const std::size_t k = lv.cols();
  const std::size_t b = lv.rows();
  if (targets.size() != b) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(b) + " rows");
  }
  if (b == 0) throw DimensionError("cross_entropy: empty batch");
  std::vector<double> probs(lv.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) {
    if (targets[r] >= k) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) + " outside [0, " +
                       std::to_string(k) + ")");
    }
    auto in = lv.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(in[j] - mx);
    const double log_z = mx + std::log(total);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(in[j] - log_z);
    loss += log_z - in[targets[r]];
  }
  loss /= static_cast<double>(b);
  return logits.tape->record(
      Tensor::scalar(loss), {logits},
      [li = logits.id, probs = std::move(probs), tg = std::vector<std::size_t>(targets.begin(), targets.end()), k,
       b](Tape& t, std::size_t o) {
        const double g = t.grad(o)[0] / static_cast<double>(b);
        auto& gl = t.grad_mut(li);
        for (std::size_t r = 0; r < b; ++r) {
          for (std::size_t j = 0; j < k; ++j) gl[r * k + j] += g * probs[r * k + j];
          gl[r * k + tg[r]] -= g;
        }
      });
}

Var dropout(Var x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw InputError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  Tensor mask(x.value().shape());
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask.data()) m = rng.uniform() < rate ? 0.0 : keep;
  return mul(x, x.tape->constant(std::move(mask)));
}

}  // namespace morelab::ops

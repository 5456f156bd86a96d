#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>

#include "doctest.h"
#include "morelab/errors.hpp"
#include "morelab/grad_check.hpp"
#include "morelab/ops.hpp"
#include "morelab/parameters.hpp"
#include "test_util.hpp"

using namespace morelab;
using morelab::testing::max_abs_diff;
using morelab::testing::random_tensor;

TEST_CASE("matmul examples") {
  Tape tape;
  auto eye = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  auto b = tape.constant(Tensor::from_rows({{3, 4}, {5, 6}}));
  CHECK(ops::matmul(eye, b).value() == b.value());

  auto x = tape.constant(Tensor({2, 3}, 1.0));
  auto y = tape.constant(Tensor({3, 4}, 1.0));
  CHECK(ops::matmul(x, y).shape() == Shape{2, 4});

  auto p = tape.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  auto q = tape.constant(Tensor::from_rows({{5, 6}, {7, 8}}));
  CHECK(ops::matmul(p, q).value() == Tensor::from_rows({{19, 22}, {43, 50}}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  auto a = tape.constant(Tensor({2, 3}));
  auto b = tape.constant(Tensor({4, 5}));
  try {
    ops::matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  Tape tape;
  CHECK(ops::softmax(tape.constant(Tensor::from_values({0, 0}))).value() == Tensor::from_values({0.5, 0.5}));
  auto big = ops::softmax(tape.constant(Tensor::from_values({1000, 0}))).value();
  CHECK(std::abs(big[0] - 1.0) < 1e-12);
  CHECK(std::abs(big[1]) < 1e-12);
  auto s = ops::softmax(tape.constant(Tensor::from_values({1, 2, 3}))).value();
  CHECK(s[0] == doctest::Approx(0.09003057317038046).epsilon(1e-12));
  CHECK(s[1] == doctest::Approx(0.24472847105479767).epsilon(1e-12));
  CHECK(s[2] == doctest::Approx(0.6652409557748219).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one and stay in [0,1]") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    Tape tape;
    auto y = ops::softmax(tape.constant(random_tensor({4, 7}, rng, 10.0))).value();
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double total = 0.0;
      for (double v : y.row(r)) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        total += v;
      }
      CHECK(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("masked softmax gives exact zeros") {
  Tape tape;
  auto y = ops::masked_softmax(tape.constant(Tensor::from_rows({{1, 2, 3}})), {true, false, true}).value();
  CHECK(y[1] == 0.0);
  CHECK(y[0] + y[2] == doctest::Approx(1.0));
}

TEST_CASE("softmax propagates non-finite scores as NaN") {
  Tape tape;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  auto y = ops::softmax(tape.constant(Tensor::from_rows({{1, nan, 3}, {1, 2, 3}, {inf, 0, 0}}))).value();
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(std::isnan(y.at(0, j)));
    CHECK(std::isnan(y.at(2, j)));
  }
  CHECK(y.at(1, 0) + y.at(1, 1) + y.at(1, 2) == doctest::Approx(1.0));
  // A masked-out NaN is ignored.
  auto z = ops::masked_softmax(tape.constant(Tensor::from_rows({{1, nan, 1}})), {true, false, true}).value();
  CHECK(z[0] == 0.5);
  CHECK(z[1] == 0.0);
  CHECK_THROWS_AS(ops::masked_softmax(tape.constant(Tensor::from_rows({{1, 2}})), {false, false}), InputError);
}

TEST_CASE("layer_norm examples") {
  Tape tape;
  auto ones = tape.constant(Tensor({3}, 1.0));
  auto zeros = tape.constant(Tensor({3}, 0.0));
  auto c = ops::layer_norm(tape.constant(Tensor::from_rows({{5, 5, 5}})), ones, zeros, 1e-5).value();
  for (double v : c.data()) CHECK(v == 0.0);

  auto one2 = tape.constant(Tensor({2}, 1.0));
  auto zero2 = tape.constant(Tensor({2}, 0.0));
  auto y = ops::layer_norm(tape.constant(Tensor::from_rows({{1, 3}})), one2, zero2, 1e-300).value();
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-12));

  Rng rng(3);
  auto beta = Tensor::from_values({0.1, -0.2, 0.3});
  auto z = ops::layer_norm(tape.constant(random_tensor({4, 3}, rng)), zeros, tape.constant(beta), 1e-5).value();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t j = 0; j < 3; ++j) CHECK(z.at(r, j) == beta[j]);
}

TEST_CASE("avg_pool") {
  Tape tape;
  auto c = ops::avg_pool(tape.constant(Tensor({5, 3}, 2.5))).value();
  CHECK(c == Tensor::from_values({2.5, 2.5, 2.5}));
  CHECK(ops::avg_pool(tape.constant(Tensor::from_rows({{0, 2}, {2, 0}}))).value() == Tensor::from_values({1, 1}));

  Rng rng(5);
  Tensor x = random_tensor({6, 4}, rng);
  auto pooled = ops::avg_pool(tape.constant(x)).value();
  for (std::size_t j = 0; j < 4; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < 6; ++i) acc += x.at(i, j);
    CHECK(std::abs(pooled[j] - acc / 6.0) < 1e-12);
  }
  CHECK_THROWS_AS(ops::avg_pool(tape.constant(Tensor({0, 4}))), EmptyPoolError);
}

TEST_CASE("cross_entropy examples") {
  Tape tape;
  const std::vector<std::size_t> t0{0};
  auto uniform = ops::cross_entropy(tape.constant(Tensor({1, 22}, 0.0)), t0);
  CHECK(uniform.value().item() == doctest::Approx(3.091042453358316).epsilon(1e-12));

  Tensor confident({1, 5}, 0.0);
  confident[3] = 50.0;
  const std::vector<std::size_t> t3{3};
  CHECK(ops::cross_entropy(tape.constant(confident), t3).value().item() < 1e-12);

  const std::vector<std::size_t> t2{2};
  auto l = ops::cross_entropy(tape.constant(Tensor::from_rows({{1, 2, 3}})), t2);
  CHECK(l.value().item() == doctest::Approx(0.4076059644443803).epsilon(1e-12));

  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(ops::cross_entropy(tape.constant(Tensor::from_rows({{1, 2, 3}})), bad), IndexError);
}

TEST_CASE("grad_check on x^2") {
  Tensor x = Tensor::from_values({3.0});
  std::vector<Tensor*> params{&x};
  auto r = grad_check([&](Tape& t) {
    auto v = t.leaf(x);
    return ops::sum(ops::mul(v, v));
  }, params, 1e-5);
  CHECK(r.max_rel_error < 1e-8);

  Tensor y = Tensor::from_values({1.0});
  std::vector<Tensor*> py{&y};
  CHECK_THROWS_AS(grad_check([&](Tape& t) { return ops::scale(t.leaf(y), std::nan("")); }, py), EvaluationError);
  CHECK_THROWS_AS(grad_check([&](Tape& t) { return t.leaf(y); }, py, 1e-2), InputError);
}

TEST_CASE("grad_check on a linear + softmax + cross-entropy layer") {
  Rng rng(21);
  Tensor x = random_tensor({4, 5}, rng);
  Tensor w = random_tensor({5, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  const std::vector<std::size_t> targets{0, 2, 1, 2};
  std::vector<Tensor*> params{&w, &b};
  auto r = grad_check([&](Tape& t) {
    auto logits = ops::add_bias(ops::matmul(t.constant(x), t.leaf(w)), t.leaf(b));
    return ops::cross_entropy(logits, targets);
  }, params, 1e-5);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("every op matches central differences over 100 seeded trials") {
  const auto reports = op_gradient_suite(100, 2024);
  CHECK(reports.size() >= 21);
  for (const auto& r : reports) {
    INFO(r.name);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("matmul associativity on random chains") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Tape t(false);
    auto a = t.constant(random_tensor({3, 4}, rng));
    auto b = t.constant(random_tensor({4, 5}, rng));
    auto c = t.constant(random_tensor({5, 2}, rng));
    auto left = ops::matmul(ops::matmul(a, b), c).value();
    auto right = ops::matmul(a, ops::matmul(b, c)).value();
    CHECK(max_abs_diff(left, right) < 1e-9);
  }
}

TEST_CASE("backward leaves disjoint subgraphs untouched") {
  Rng rng(4);
  Tensor a = random_tensor({2, 2}, rng);
  Tensor b = random_tensor({2, 2}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  Tape tape;
  auto la = ops::sum(ops::mul(tape.leaf(a), tape.leaf(a)));
  auto lb = ops::sum(ops::relu(tape.leaf(b)));
  (void)lb;
  tape.backward(la);
  REQUIRE(a.grad());
  CHECK(!b.grad());
  CHECK(tape.grad(tape.leaf(b)).empty());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((*a.grad())[i] == doctest::Approx(2 * a[i]));
}

TEST_CASE("forward ops keep finite inputs finite") {
  Rng rng(17);
  Tape t(false);
  auto x = t.constant(random_tensor({4, 6}, rng, 30.0));
  auto g = t.constant(Tensor({6}, 1.0));
  auto b = t.constant(Tensor({6}, 0.0));
  CHECK(ops::softmax(x).value().all_finite());
  CHECK(ops::gelu(x).value().all_finite());
  CHECK(ops::layer_norm(x, g, b, 1e-5).value().all_finite());
}

TEST_CASE("checkpoint round-trips bit-exactly") {
  auto dir = morelab::testing::temp_dir("ckpt");
  Rng rng(1);
  ParameterStore store;
  store.add("a.weight", {3, 4}, Init::kXavier, rng);
  store.add("a.bias", {4}, Init::kNormal002, rng);
  store.get("a.bias")[0] = -0.0;
  store.get("a.bias")[1] = 1e-310;
  save_checkpoint(store, dir / "model", R"({"note":"x"})");

  ParameterStore other;
  Rng rng2(2);
  other.add("a.weight", {3, 4}, Init::kZeros, rng2);
  other.add("a.bias", {4}, Init::kZeros, rng2);
  CHECK(load_checkpoint(other, dir / "model") == R"({"note":"x"})");
  for (std::size_t i = 0; i < store.size(); ++i) {
    CHECK(std::memcmp(store.at(i).data().data(), other.at(i).data().data(), store.at(i).size() * 8) == 0);
  }
  save_checkpoint(other, dir / "again", R"({"note":"x"})");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(dir / "model.bin") == slurp(dir / "again.bin"));
  CHECK(slurp(dir / "model.manifest.json") == slurp(dir / "again.manifest.json"));
  CHECK(std::filesystem::file_size(dir / "model.bin") == 16 * 8);

  ParameterStore wrong;
  wrong.add("a.weight", {4, 3}, Init::kZeros, rng2);
  wrong.add("a.bias", {4}, Init::kZeros, rng2);
  CHECK_THROWS_AS(load_checkpoint(wrong, dir / "model"), IoError);
}

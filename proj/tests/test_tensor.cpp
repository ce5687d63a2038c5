#include <doctest.h>

#include <cmath>

#include "visor/tape.hpp"
#include "visor/tensor.hpp"

using namespace visor;

TEST_CASE("tensor shape and data agree") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.shape() == Shape{2, 3});
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), Error);
  CHECK_THROWS_AS(Tensor({0, 2}), Error);
}

TEST_CASE("add is componentwise") {
  Tape tape;
  Var a = tape.input(Tensor({2}, {1.0, 2.0}));
  Var b = tape.input(Tensor({2}, {3.0, 4.0}));
  Var c = tape.add(a, b);
  CHECK(tape.value(c).at(0) == 4.0);
  CHECK(tape.value(c).at(1) == 6.0);
}

TEST_CASE("matmul by identity returns the input") {
  Tape tape;
  Tensor eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i * 3 + i) = 1.0;
  Tensor a({3, 4});
  for (std::int64_t i = 0; i < a.size(); ++i) a.at(i) = 0.25 * static_cast<double>(i) - 1.0;
  Var m = tape.matmul(tape.input(eye), tape.input(a.clone()));
  for (std::int64_t i = 0; i < a.size(); ++i) CHECK(tape.value(m).at(i) == a.at(i));
}

TEST_CASE("softmax of a constant row is uniform") {
  Tape tape;
  Var x = tape.input(Tensor({3}, {0.0, 0.0, 0.0}));
  Var y = tape.softmax(x);
  for (int i = 0; i < 3; ++i) CHECK(tape.value(y).at(i) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("shape mismatch errors name the op and shapes") {
  Tape tape;
  Var a = tape.input(Tensor({2, 3}));
  Var b = tape.input(Tensor({4, 2}));
  CHECK_THROWS_WITH_AS(tape.matmul(a, b), doctest::Contains("matmul"), Error);
  CHECK_THROWS_WITH_AS(tape.add(a, b), doctest::Contains("[2,3]"), Error);
}

TEST_CASE("non-finite forward values are a hard error") {
  Tape tape;
  Var x = tape.input(Tensor({2}, {1e308, 1e308}));
  CHECK_THROWS_WITH_AS(tape.mul(x, x), doctest::Contains("non-finite"), Error);
}

TEST_CASE("backward at the minimum of a quadratic is zero") {
  Tape tape;
  Tensor c({4}, {0.5, -1.0, 2.0, 0.0});
  Var x = tape.input(c.clone());
  Var loss = tape.sse(x, tape.constant(c.clone()));
  Gradients grads = tape.backward(loss);
  for (int i = 0; i < 4; ++i) CHECK(grads.grad(x).at(i) == 0.0);
}

TEST_CASE("backward of a linear function is the constant slope") {
  Tape tape;
  Var x = tape.input(Tensor({3}, {5.0, -2.0, 7.5}));
  Var loss = tape.sum(tape.mul_scalar(x, 2.0));
  Gradients grads = tape.backward(loss);
  for (int i = 0; i < 3; ++i) CHECK(grads.grad(x).at(i) == 2.0);
}

TEST_CASE("d(loss)/d(loss) is one and fan-out accumulates") {
  Tape tape;
  Var x = tape.input(Tensor({2}, {1.0, 2.0}));
  Var y = tape.add(x, x);  // two consumers of x
  Var loss = tape.sum(y);
  Gradients grads = tape.backward(loss);
  CHECK(grads.grad(loss).at(0) == 1.0);
  CHECK(grads.grad(x).at(0) == 2.0);
}

TEST_CASE("backward requires a scalar loss") {
  Tape tape;
  Var x = tape.input(Tensor({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(x), Error);
}

TEST_CASE("finite_difference_check on a quadratic is exact to rounding") {
  auto f = [](const Tensor& x) {
    Scalar s = 0;
    for (std::int64_t i = 0; i < x.size(); ++i) s += x.at(i) * x.at(i);
    return s;
  };
  Tensor x({2}, {1.0, 2.0});
  Tensor g({2}, {2.0, 4.0});
  const std::vector<std::int64_t> coords = {0, 1};
  CHECK(finite_difference_check(f, x, g, coords, 1e-3) < 1e-6);
}

TEST_CASE("finite_difference_check rejects out-of-range coordinates") {
  auto f = [](const Tensor& x) { return x.at(0); };
  Tensor x({2}, {1.0, 2.0});
  Tensor g({2}, {1.0, 0.0});
  const std::vector<std::int64_t> coords = {5};
  CHECK_THROWS_WITH_AS(finite_difference_check(f, x, g, coords, 1e-3),
                       doctest::Contains("out of range"), Error);
}

TEST_CASE("slice extracts a rectangular region and concat restores it") {
  Tape tape;
  Tensor m({3, 4});
  for (std::int64_t i = 0; i < m.size(); ++i) m.at(i) = static_cast<double>(i);
  Var x = tape.input(m);
  Var top = tape.slice(x, {0, 0}, {1, 4});
  Var rest = tape.slice(x, {1, 0}, {2, 4});
  Var merged = tape.concat({top, rest}, 0);
  for (std::int64_t i = 0; i < m.size(); ++i) CHECK(tape.value(merged).at(i) == m.at(i));
  CHECK_THROWS_AS(tape.slice(x, {0, 2}, {1, 3}), Error);
}

TEST_CASE("embedding validates token ids") {
  Tape tape;
  Var table = tape.input(Tensor({4, 2}));
  CHECK_THROWS_WITH_AS(tape.embedding(table, {0, 4}), doctest::Contains("out of range"), Error);
}

TEST_CASE("pick selects one column per row") {
  Tape tape;
  Tensor m({2, 3}, {1, 2, 3, 4, 5, 6});
  Var x = tape.input(m);
  Var picked = tape.pick(x, {2, 0});
  CHECK(tape.value(picked).at(0) == 3.0);
  CHECK(tape.value(picked).at(1) == 4.0);
}

TEST_CASE("forward values are deterministic") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tape tape;
    Var a = tape.input(Tensor::randn({8, 8}, rng, 1.0));
    Var b = tape.input(Tensor::randn({8, 8}, rng, 1.0));
    Var y = tape.sum(tape.gelu(tape.matmul(a, b)));
    return tape.value(y).item();
  };
  const double v1 = run();
  const double v2 = run();
  CHECK(std::memcmp(&v1, &v2, sizeof(double)) == 0);
}

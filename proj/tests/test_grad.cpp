#include <doctest.h>

#include <cstring>
#include <functional>
#include <random>
#include <vector>

#include "visor/tape.hpp"

using namespace visor;

namespace {

// Builds a scalar-valued graph from leaf x, returns the loss Var.
using GraphBuilder = std::function<Var(Tape&, Var)>;

// Checks analytic vs central-difference gradients of builder at a random x.
double max_fd_error(const GraphBuilder& builder, const Shape& x_shape, std::uint64_t seed,
                    Scalar scale = 1.0) {
  std::mt19937_64 rng(seed);
  Tensor x0 = Tensor::randn(x_shape, rng, scale);

  Tape tape;
  Var x = tape.input(x0.clone());
  Var loss = builder(tape, x);
  Gradients grads = tape.backward(loss);
  const Tensor analytic = grads.grad(x);

  auto f = [&builder](const Tensor& probe) {
    Tape t;
    Var px = t.input(probe.clone());
    return t.value(builder(t, px)).item();
  };
  std::vector<std::int64_t> coords;
  for (std::int64_t i = 0; i < x0.size(); ++i) coords.push_back(i);
  return finite_difference_check(f, x0, analytic, coords, 1e-4);
}

void check_primitive(const char* name, const GraphBuilder& builder, const Shape& x_shape) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    INFO(name << " seed " << seed);
    CHECK(max_fd_error(builder, x_shape, seed) < 1e-3);
  }
}

}  // namespace

TEST_CASE("gradient oracle: every primitive matches finite differences") {
  std::mt19937_64 aux_rng(424242);
  const Tensor w = Tensor::randn({4, 5}, aux_rng, 1.0);
  const Tensor m2 = Tensor::randn({3, 4}, aux_rng, 1.0);
  const Tensor gain = Tensor::randn({5}, aux_rng, 0.3);
  const Tensor bias = Tensor::randn({5}, aux_rng, 0.3);
  const Tensor target = Tensor::randn({3, 4}, aux_rng, 1.0);
  const Tensor row = Tensor::randn({4}, aux_rng, 1.0);
  const Tensor ln_base = Tensor::randn({3, 4}, aux_rng, 1.0);

  check_primitive("add", [&](Tape& t, Var x) {
    return t.mean(t.gelu(t.add(x, t.constant(target.clone()))));
  }, {3, 4});
  check_primitive("add_broadcast_row", [&](Tape& t, Var x) {
    return t.mean(t.gelu(t.add(x, t.constant(row.clone()))));
  }, {3, 4});
  check_primitive("add_broadcast_scalar", [&](Tape& t, Var x) {
    return t.mean(t.gelu(t.add(x, t.constant(Tensor::scalar(0.7)))));
  }, {3, 4});
  check_primitive("sub", [&](Tape& t, Var x) {
    return t.mean(t.gelu(t.sub(x, t.constant(target.clone()))));
  }, {3, 4});
  check_primitive("mul", [&](Tape& t, Var x) {
    return t.mean(t.mul(x, t.constant(target.clone())));
  }, {3, 4});
  check_primitive("mul_row_rhs_grad", [&](Tape& t, Var x) {
    Var base = t.constant(target.clone());
    return t.mean(t.gelu(t.mul(base, t.reshape(x, {4}))));
  }, {4});
  check_primitive("add_scalar", [&](Tape& t, Var x) { return t.mean(t.add_scalar(x, 2.5)); },
                  {3, 4});
  check_primitive("mul_scalar", [&](Tape& t, Var x) { return t.mean(t.mul_scalar(x, -1.5)); },
                  {3, 4});
  check_primitive("matmul_lhs", [&](Tape& t, Var x) {
    return t.mean(t.gelu(t.matmul(x, t.constant(w.clone()))));
  }, {3, 4});
  check_primitive("matmul_rhs", [&](Tape& t, Var x) {
    return t.mean(t.gelu(t.matmul(t.constant(m2.clone()), x)));
  }, {4, 5});
  check_primitive("transpose", [&](Tape& t, Var x) {
    return t.mean(t.gelu(t.transpose(x)));
  }, {3, 4});
  check_primitive("gelu", [&](Tape& t, Var x) { return t.mean(t.gelu(x)); }, {3, 4});
  check_primitive("layer_norm", [&](Tape& t, Var x) {
    Var y = t.layer_norm(x, t.constant(gain.clone()), t.constant(bias.clone()), 1e-5);
    return t.mean(t.gelu(y));
  }, {3, 5});
  check_primitive("layer_norm_gain", [&](Tape& t, Var x) {
    Var y = t.layer_norm(t.constant(ln_base.clone()), x, t.constant(row.clone()), 1e-5);
    return t.mean(t.gelu(y));
  }, {4});
  check_primitive("softmax", [&](Tape& t, Var x) {
    return t.mean(t.mul(t.softmax(x), t.constant(target.clone())));
  }, {3, 4});
  check_primitive("log_softmax", [&](Tape& t, Var x) {
    return t.mean(t.mul(t.log_softmax(x), t.constant(target.clone())));
  }, {3, 4});
  check_primitive("embedding", [&](Tape& t, Var x) {
    return t.mean(t.gelu(t.embedding(x, {0, 2, 1, 2})));
  }, {3, 4});
  check_primitive("slice", [&](Tape& t, Var x) {
    return t.mean(t.gelu(t.slice(x, {1, 1}, {2, 2})));
  }, {3, 4});
  check_primitive("concat", [&](Tape& t, Var x) {
    Var a = t.slice(x, {0, 0}, {1, 4});
    Var b = t.slice(x, {1, 0}, {2, 4});
    return t.mean(t.gelu(t.concat({b, a}, 0)));
  }, {3, 4});
  check_primitive("reshape", [&](Tape& t, Var x) {
    return t.mean(t.gelu(t.reshape(x, {4, 3})));
  }, {3, 4});
  check_primitive("mean", [&](Tape& t, Var x) { return t.mean(t.gelu(x)); }, {3, 4});
  check_primitive("sum", [&](Tape& t, Var x) { return t.sum(t.gelu(x)); }, {3, 4});
  check_primitive("sse", [&](Tape& t, Var x) {
    return t.sse(x, t.constant(target.clone()));
  }, {3, 4});
  check_primitive("pick", [&](Tape& t, Var x) {
    return t.sum(t.pick(t.log_softmax(x), {1, 3, 0}));
  }, {3, 4});
}

TEST_CASE("gradient oracle: random 3-layer MLP matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    std::mt19937_64 rng(seed * 1000 + 7);
    const Tensor w1 = Tensor::randn({6, 8}, rng, 0.5);
    const Tensor w2 = Tensor::randn({8, 8}, rng, 0.5);
    const Tensor w3 = Tensor::randn({8, 4}, rng, 0.5);
    const Tensor target = Tensor::randn({5, 4}, rng, 1.0);

    auto builder = [&](Tape& t, Var x) {
      Var h1 = t.gelu(t.matmul(x, t.constant(w1.clone())));
      Var h2 = t.gelu(t.matmul(h1, t.constant(w2.clone())));
      Var out = t.matmul(h2, t.constant(w3.clone()));
      return t.sse(out, t.constant(target.clone()));
    };

    Tensor x0 = Tensor::randn({5, 6}, rng, 1.0);
    Tape tape;
    Var x = tape.input(x0.clone());
    Var loss = builder(tape, x);
    const Tensor analytic = tape.backward(loss).grad(x);

    auto f = [&](const Tensor& probe) {
      Tape t;
      return t.value(builder(t, t.input(probe.clone()))).item();
    };
    // 100 random coordinates, central differences with step 1e-3
    std::vector<std::int64_t> coords;
    std::uniform_int_distribution<std::int64_t> pick(0, x0.size() - 1);
    for (int i = 0; i < 100; ++i) coords.push_back(pick(rng));
    CHECK(finite_difference_check(f, x0, analytic, coords, 1e-3) < 1e-3);
  }
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(314);
  const Tensor w = Tensor::randn({4, 4}, rng, 0.7);
  const Tensor x0 = Tensor::randn({2, 4}, rng, 1.0);
  const Scalar a = 1.7, b = -0.4;

  auto grad_of = [&](Scalar ca, Scalar cb) {
    Tape t;
    Var x = t.input(x0.clone());
    Var h = t.matmul(x, t.constant(w.clone()));
    Var f = t.sum(t.gelu(h));
    Var g = t.mean(t.mul(h, h));
    Var loss = t.add(t.mul_scalar(f, ca), t.mul_scalar(g, cb));
    return t.backward(loss).grad(x).clone();
  };

  const Tensor combined = grad_of(a, b);
  const Tensor gf = grad_of(1.0, 0.0);
  const Tensor gg = grad_of(0.0, 1.0);
  for (std::int64_t i = 0; i < combined.size(); ++i) {
    CHECK(combined.at(i) == doctest::Approx(a * gf.at(i) + b * gg.at(i)).epsilon(1e-6));
  }
}

TEST_CASE("gradients are bit-identical across runs") {
  auto run = [] {
    std::mt19937_64 rng(2024);
    Tape t;
    Var x = t.input(Tensor::randn({6, 6}, rng, 1.0));
    Var w = t.input(Tensor::randn({6, 6}, rng, 1.0));
    Var loss = t.sum(t.gelu(t.matmul(x, w)));
    return t.backward(loss).grad(x).clone();
  };
  const Tensor g1 = run();
  const Tensor g2 = run();
  CHECK(std::memcmp(g1.data(), g2.data(), sizeof(Scalar) * static_cast<std::size_t>(g1.size())) ==
        0);
}

TEST_CASE("no-grad tapes refuse backward") {
  Tape t(false);
  Var x = t.input(Tensor({2}, {1.0, 2.0}));
  Var loss = t.sum(x);
  CHECK_THROWS_AS(t.backward(loss), Error);
}

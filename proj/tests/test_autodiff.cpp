#include <cmath>

#include "contilearn/ops.hpp"
#include "contilearn/optim.hpp"
#include "contilearn/rng.hpp"
#include "doctest.h"
#include "testutil.hpp"

using namespace contilearn;
using testutil::fd_max_rel_error;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, bool requires_grad = true,
                     double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("matmul identity and small products") {
  Rng rng(1);
  Tensor a = random_tensor({3, 3}, rng, false);
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tensor out = matmul(nullptr, eye, a);
  CHECK(testutil::bitwise_equal(out.data(), a.data()));

  Tensor row = Tensor::from_data({1, 2}, {1.0, 2.0});
  Tensor col = Tensor::from_data({2, 1}, {3.0, 4.0});
  CHECK(matmul(nullptr, row, col).scalar_value() == doctest::Approx(11.0).epsilon(1e-15));

  Tensor bad = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(matmul(nullptr, bad, bad), DimensionError);
}

TEST_CASE("matmul gradient matches central finite differences") {
  Rng rng(2);
  Tensor a = random_tensor({4, 3}, rng);
  Tensor b = random_tensor({3, 2}, rng);
  const double err = fd_max_rel_error(
      {a, b}, [&](Tape* t) { return sum(t, matmul(t, a, b)); });
  CHECK(err < 1e-6);
}

TEST_CASE("relu forward and gated backward") {
  Tensor x = Tensor::from_data({3}, {-1.0, 0.0, 2.0});
  Tensor y = relu(nullptr, x);
  CHECK(y.data() == std::vector<double>{0.0, 0.0, 2.0});

  Tensor zeros = Tensor::zeros({4});
  CHECK(relu(nullptr, zeros).data() == std::vector<double>(4, 0.0));

  // inputs bounded away from the kink
  Rng rng(3);
  Tensor in = Tensor::zeros({2, 6}, true);
  for (double& v : in.data()) {
    const double mag = rng.uniform(0.25, 1.0);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  const double err = fd_max_rel_error({in}, [&](Tape* t) { return sum(t, relu(t, in)); });
  CHECK(err < 1e-6);
}

TEST_CASE("group_norm degenerate cases") {
  Tensor gamma = Tensor::full({4}, 1.0);
  Tensor beta = Tensor::zeros({4});
  Tensor constant = Tensor::full({1, 4}, 3.25);
  Tensor out = group_norm(nullptr, constant, 2, gamma, beta, 1e-5);
  for (double v : out.data()) CHECK(v == 0.0);

  Rng rng(4);
  Tensor x = random_tensor({2, 4}, rng, false);
  Tensor gamma0 = Tensor::zeros({4});
  Tensor beta_vals = Tensor::from_data({4}, {0.5, -1.0, 2.0, 0.0});
  Tensor out2 = group_norm(nullptr, x, 2, gamma0, beta_vals, 1e-5);
  for (int64_t r = 0; r < 2; ++r)
    for (int64_t c = 0; c < 4; ++c) CHECK(out2.at(r, c) == beta_vals.data()[size_t(c)]);

  CHECK_THROWS_AS(group_norm(nullptr, x, 3, gamma, beta, 1e-5), ConfigError);
}

TEST_CASE("group_norm gradient matches finite differences") {
  Rng rng(5);
  Tensor x = random_tensor({4, 8}, rng);
  Tensor gamma = random_tensor({8}, rng, true, 0.5, 1.5);
  Tensor beta = random_tensor({8}, rng);
  const double err = fd_max_rel_error(
      {x, gamma, beta}, [&](Tape* t) { return sum(t, group_norm(t, x, 2, gamma, beta, 1e-5)); });
  CHECK(err < 1e-5);
}

TEST_CASE("cross_entropy values, stability, and gradient") {
  Tensor uniform = Tensor::zeros({1, 3});
  CHECK(cross_entropy(nullptr, uniform, {1}).scalar_value() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));

  Tensor extreme = Tensor::from_data({1, 2}, {1000.0, 0.0});
  const double stable = cross_entropy(nullptr, extreme, {0}).scalar_value();
  CHECK(std::isfinite(stable));
  CHECK(stable >= 0.0);
  CHECK(stable < 1e-10);

  CHECK_THROWS_AS(cross_entropy(nullptr, uniform, {3}), DataError);
  CHECK_THROWS_AS(cross_entropy(nullptr, uniform, {-1}), DataError);

  Rng rng(6);
  Tensor logits = random_tensor({5, 4}, rng);
  std::vector<int> labels = {0, 3, 1, 2, 2};
  const double err =
      fd_max_rel_error({logits}, [&](Tape* t) { return cross_entropy(t, logits, labels); });
  CHECK(err < 1e-6);

  // nonnegativity across random draws
  for (int trial = 0; trial < 20; ++trial) {
    Tensor l = random_tensor({3, 5}, rng, false, -4.0, 4.0);
    std::vector<int> y = {int(rng.uniform_int(5)), int(rng.uniform_int(5)), int(rng.uniform_int(5))};
    CHECK(cross_entropy(nullptr, l, y).scalar_value() >= 0.0);
  }
}

TEST_CASE("backward populates leaf gradients") {
  Tensor theta = Tensor::from_data({3}, {0.5, -0.25, 2.0}, true);
  {
    Tape tape;
    Tensor loss = sum(&tape, theta);
    tape.backward(loss);
    CHECK(theta.grad() == std::vector<double>{1.0, 1.0, 1.0});
    theta.zero_grad();
  }
  {
    Tensor t2 = Tensor::from_data({2}, {1.0, 2.0}, true);
    Tape tape;
    Tensor loss = scale(&tape, sum(&tape, mul(&tape, t2, t2)), 0.5);
    tape.backward(loss);
    CHECK(t2.grad() == std::vector<double>{1.0, 2.0});
  }
}

TEST_CASE("backward usage errors") {
  Tensor detached = Tensor::from_data({}, {1.0}, true);
  Tape tape;
  CHECK_THROWS_AS(tape.backward(detached), UsageError);

  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tape tape2;
  Tensor loss = sum(&tape2, x);
  tape2.backward(loss);
  CHECK_THROWS_AS(tape2.backward(loss), UsageError);  // one replay per tape
}

TEST_CASE("composite mlp loss gradient vs finite differences") {
  Rng rng(7);
  Tensor x = random_tensor({5, 6}, rng, false);
  Tensor w1 = random_tensor({6, 8}, rng, true, -0.5, 0.5);
  Tensor b1 = random_tensor({8}, rng, true, -0.1, 0.1);
  Tensor gamma = random_tensor({8}, rng, true, 0.8, 1.2);
  Tensor beta = random_tensor({8}, rng, true, -0.1, 0.1);
  Tensor w2 = random_tensor({8, 3}, rng, true, -0.5, 0.5);
  Tensor b2 = random_tensor({3}, rng, true, -0.1, 0.1);
  std::vector<int> labels = {0, 2, 1, 1, 0};
  auto forward = [&](Tape* t) {
    Tensor h = add_bias(t, matmul(t, x, w1), b1);
    h = relu(t, group_norm(t, h, 2, gamma, beta, 1e-5));
    Tensor logits = add_bias(t, matmul(t, h, w2), b2);
    return cross_entropy(t, logits, labels);
  };
  const double err = fd_max_rel_error({w1, b1, gamma, beta, w2, b2}, forward);
  CHECK(err < 1e-4);
}

TEST_CASE("sgd_step") {
  SUBCASE("lr=0 is the bitwise identity") {
    Rng rng(8);
    Tensor p = random_tensor({5}, rng);
    const std::vector<double> before = p.data();
    Tape tape;
    Tensor loss = sum(&tape, mul(&tape, p, p));
    tape.backward(loss);
    SgdConfig cfg;
    cfg.learning_rate = 0.0;
    cfg.momentum = 0.9;
    SgdOptimizer opt({p}, cfg);
    opt.step();
    CHECK(testutil::bitwise_equal(p.data(), before));
  }
  SUBCASE("single scalar step") {
    Tensor p = Tensor::from_data({1}, {1.0}, true);
    p.grad()[0] = 1.0;
    SgdConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.0;
    SgdOptimizer opt({p}, cfg);
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(0.9).epsilon(1e-15));
    CHECK(p.grad() == std::vector<double>{0.0});  // zeroed after the step
  }
  SUBCASE("ten steps on the quadratic 0.5*theta^2") {
    Tensor p = Tensor::from_data({1}, {1.0}, true);
    SgdConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.momentum = 0.0;
    SgdOptimizer opt({p}, cfg);
    double oracle = 1.0;
    for (int i = 0; i < 10; ++i) {
      Tape tape;
      Tensor loss = scale(&tape, sum(&tape, mul(&tape, p, p)), 0.5);
      tape.backward(loss);
      opt.step();
      oracle = oracle - 0.1 * oracle;  // same recurrence, independent arithmetic
    }
    CHECK(p.data()[0] == oracle);
    CHECK(p.data()[0] == doctest::Approx(0.3486784401).epsilon(1e-12));
  }
  SUBCASE("missing gradient is a usage error") {
    Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
    SgdConfig cfg;
    cfg.learning_rate = 0.1;
    SgdOptimizer opt({p}, cfg);
    CHECK_THROWS_AS(opt.step(), UsageError);
  }
  SUBCASE("weight decay enters the update") {
    Tensor p = Tensor::from_data({1}, {2.0}, true);
    p.grad()[0] = 0.0;
    SgdConfig cfg;
    cfg.learning_rate = 0.5;
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.1;
    SgdOptimizer opt({p}, cfg);
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(2.0 - 0.5 * 0.1 * 2.0).epsilon(1e-15));
  }
}

TEST_CASE("randomized gradient checks across every op") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t m = 2 + int64_t(rng.uniform_int(3));
    const int64_t k = 2 + int64_t(rng.uniform_int(3));
    const int64_t n = 2 + int64_t(rng.uniform_int(3));
    Tensor a = random_tensor({m, k}, rng);
    Tensor b = random_tensor({k, n}, rng);
    Tensor bias = random_tensor({n}, rng);
    Tensor gamma = random_tensor({n * 2}, rng, true, 0.5, 1.5);
    Tensor beta = random_tensor({n * 2}, rng);
    Tensor gx = random_tensor({m, n * 2}, rng);
    Tensor other = random_tensor({m, k}, rng);
    std::vector<int> labels;
    for (int64_t i = 0; i < m; ++i) labels.push_back(int(rng.uniform_int(uint64_t(n))));

    const double e1 = fd_max_rel_error(
        {a, b, bias}, [&](Tape* t) { return sum(t, add_bias(t, matmul(t, a, b), bias)); });
    const double e2 = fd_max_rel_error(
        {gx, gamma, beta},
        [&](Tape* t) { return sum(t, group_norm(t, gx, 2, gamma, beta, 1e-5)); });
    const double e3 = fd_max_rel_error(
        {a, b}, [&](Tape* t) { return cross_entropy(t, matmul(t, a, b), labels); });
    const double e4 =
        fd_max_rel_error({a, other}, [&](Tape* t) { return mse(t, a, other); });
    const double e5 = fd_max_rel_error({a, other}, [&](Tape* t) {
      return sum(t, mul(t, sub(t, a, other), add(t, a, other)));
    });
    std::vector<double> ref(a.data().size()), w(a.data().size());
    for (size_t i = 0; i < ref.size(); ++i) {
      ref[i] = rng.uniform(-1.0, 1.0);
      w[i] = rng.uniform(0.0, 2.0);
    }
    const double e6 =
        fd_max_rel_error({a}, [&](Tape* t) { return quadratic_penalty(t, a, ref, w); });
    for (double e : {e1, e2, e3, e4, e5, e6}) CHECK(e < 1e-4);
  }
}

TEST_CASE("forward pass is deterministic and finite-checked") {
  Rng rng(10);
  Tensor a = random_tensor({4, 4}, rng, false);
  Tensor b = random_tensor({4, 4}, rng, false);
  Tensor c1 = matmul(nullptr, a, b);
  Tensor c2 = matmul(nullptr, a, b);
  CHECK(testutil::bitwise_equal(c1.data(), c2.data()));

  Tensor huge = Tensor::full({2, 2}, 1e308);
  CHECK_THROWS_AS(matmul(nullptr, huge, huge), NumericError);
}

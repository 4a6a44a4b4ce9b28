#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "nsesum/tensor.hpp"

using namespace nsesum;

namespace {

std::vector<double> rand_vec(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(static_cast<size_t>(n));
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("forward op examples") {
  Tape::active().reset();
  SECTION("matmul hand linear algebra") {
    Tensor a = Tensor::matrix(2, 2, {1, 2, 3, 4});
    Tensor b = Tensor::matrix(2, 1, {1, 1});
    Tensor c = matmul(a, b);
    REQUIRE(c.at(0, 0) == 3.0);
    REQUIRE(c.at(1, 0) == 7.0);
  }
  SECTION("sigmoid and tanh identity cases") {
    REQUIRE(sigmoid_t(Tensor::scalar(0.0)).item() == 0.5);
    REQUIRE(tanh_t(Tensor::scalar(0.0)).item() == 0.0);
  }
  SECTION("outer vs brute-force double loop") {
    Tensor a = Tensor::vector({1, 2});
    Tensor b = Tensor::vector({3, 4});
    Tensor o = outer(a, b);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) REQUIRE(o.at(i, j) == a.at(i) * b.at(j));
    REQUIRE(o.at(0, 0) == 3.0);
    REQUIRE(o.at(1, 1) == 8.0);
  }
  SECTION("shape mismatch reports both shapes") {
    Tensor a = Tensor::matrix(2, 3, std::vector<double>(6, 0.0));
    Tensor b = Tensor::matrix(2, 3, std::vector<double>(6, 0.0));
    REQUIRE_THROWS_WITH(matmul(a, b),
                        Catch::Matchers::ContainsSubstring("[2x3]"));
    REQUIRE_THROWS_AS(add(a, Tensor::vector({1, 2})), std::invalid_argument);
  }
  SECTION("non-finite input rejected") {
    Tensor a = Tensor::vector({1.0, std::nan("")});
    REQUIRE_THROWS_AS(tanh_t(a), std::invalid_argument);
  }
}

TEST_CASE("masked_softmax examples and properties") {
  Tape::active().reset();
  SECTION("uniform case") {
    Tensor z = masked_softmax(Tensor::vector({0, 0, 0}), {1, 1, 1});
    for (int i = 0; i < 3; ++i) REQUIRE(z.at(i) == Catch::Approx(1.0 / 3));
  }
  SECTION("exp/sum oracle at high precision") {
    Tensor z = masked_softmax(Tensor::vector({1, 0}), {1, 1});
    const double e1 = std::exp(1.0), e0 = 1.0;
    REQUIRE(z.at(0) == Catch::Approx(e1 / (e1 + e0)).epsilon(1e-10));
    REQUIRE(std::abs(z.at(0) - 0.73106) < 1e-4);
    REQUIRE(std::abs(z.at(1) - 0.26894) < 1e-4);
  }
  SECTION("symmetry under masking") {
    Tensor z = masked_softmax(Tensor::vector({5, 5, 5}), {1, 0, 1});
    REQUIRE(z.at(0) == 0.5);
    REQUIRE(z.at(1) == 0.0);
    REQUIRE(z.at(2) == 0.5);
  }
  SECTION("all masked rejected") {
    REQUIRE_THROWS_AS(masked_softmax(Tensor::vector({1, 2}), {0, 0}),
                      std::invalid_argument);
  }
  SECTION("probability vector property") {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 50; ++rep) {
      const int n = 1 + static_cast<int>(rng() % 9);
      std::vector<uint8_t> mask(static_cast<size_t>(n));
      int live = 0;
      for (auto& m : mask) live += (m = rng() % 2);
      if (live == 0) mask[0] = 1;
      Tensor z = masked_softmax(Tensor::vector(rand_vec(n, rng)), mask);
      double s = 0.0;
      for (int i = 0; i < n; ++i) {
        REQUIRE(z.at(i) >= 0.0);
        if (!mask[i]) REQUIRE(z.at(i) == 0.0);
        s += z.at(i);
      }
      REQUIRE(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("backward examples") {
  SECTION("quadratic derivative") {
    Tape::active().reset();
    Tensor a = Tensor::vector({1, 2}, true);
    backward(sum(mul(a, a)));
    REQUIRE(a.grad()[0] == Catch::Approx(2.0));
    REQUIRE(a.grad()[1] == Catch::Approx(4.0));
  }
  SECTION("sigmoid derivative at zero") {
    Tape::active().reset();
    Tensor w = Tensor::vector({0.0}, true);
    Tensor x = Tensor::vector({1.0});
    backward(sigmoid_t(matmul(w, x)));
    REQUIRE(w.grad()[0] == Catch::Approx(0.25));
  }
  SECTION("non-scalar loss rejected") {
    Tape::active().reset();
    Tensor a = Tensor::vector({1, 2}, true);
    REQUIRE_THROWS_AS(backward(mul(a, a)), std::invalid_argument);
  }
  SECTION("second backward without reset rejected") {
    Tape::active().reset();
    Tensor a = Tensor::vector({1, 2}, true);
    Tensor loss = sum(mul(a, a));
    backward(loss);
    REQUIRE_THROWS_AS(backward(loss), std::runtime_error);
  }
  SECTION("random 3-layer composition vs finite differences") {
    std::mt19937_64 rng(11);
    Tensor w1 = Tensor::matrix(3, 4, rand_vec(12, rng));
    Tensor w2 = Tensor::matrix(3, 3, rand_vec(9, rng));
    auto f = [&](const Tensor& x) {
      return sum(sigmoid_t(matmul(w2, tanh_t(matmul(w1, x)))));
    };
    const double err = grad_check(f, Tensor::vector(rand_vec(4, rng)), 1e-5);
    REQUIRE(err < 1e-4);
  }
}

TEST_CASE("grad_check examples") {
  SECTION("linear function") {
    auto f = [](const Tensor& x) { return sum(x); };
    REQUIRE(grad_check(f, Tensor::vector({0.3, -0.7, 2.0})) < 1e-10);
  }
  SECTION("masked_softmax then NLL") {
    auto f = [](const Tensor& x) {
      return neg_log_pick(masked_softmax(x, {1, 1, 0, 1}), 1);
    };
    std::mt19937_64 rng(3);
    REQUIRE(grad_check(f, Tensor::vector(rand_vec(4, rng))) < 1e-4);
  }
}

TEST_CASE("primitive gradients match finite differences on random inputs") {
  std::mt19937_64 rng(2024);
  int checked = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 2 + static_cast<int>(rng() % 4);
    Tensor other = Tensor::vector(rand_vec(n, rng));
    Tensor mat = Tensor::matrix(n, n, rand_vec(n * n, rng));
    std::vector<std::function<Tensor(const Tensor&)>> fns = {
        [&](const Tensor& x) { return sum(mul(x, other)); },
        [&](const Tensor& x) { return sum(add(x, other)); },
        [&](const Tensor& x) { return sum(tanh_t(x)); },
        [&](const Tensor& x) { return sum(sigmoid_t(x)); },
        [&](const Tensor& x) { return sum(matmul(mat, x)); },
        [&](const Tensor& x) { return sum(matmul(x, mat)); },
        [&](const Tensor& x) { return sum(outer(x, other)); },
        [&](const Tensor& x) { return sum(concat(x, other)); },
        [&](const Tensor& x) { return sum(slice(x, 1, n - 1)); },
        [&](const Tensor& x) { return sum(add_rowwise(mat, x)); },
        [&](const Tensor& x) { return entropy(masked_softmax(x, std::vector<uint8_t>(n, 1))); },
    };
    const auto& f = fns[rep % fns.size()];
    REQUIRE(grad_check(f, Tensor::vector(rand_vec(n, rng))) < 1e-4);
    ++checked;
  }
  REQUIRE(checked == 100);
}

TEST_CASE("gradient accumulation is additive") {
  // duplicated-parameter oracle: y = sum(a*b) + sum(a*c) vs a used once
  Tape::active().reset();
  Tensor a = Tensor::vector({0.5, -0.25, 1.5}, true);
  Tensor b = Tensor::vector({1, 2, 3});
  Tensor c = Tensor::vector({-2, 0.5, 4});
  backward(add(sum(mul(a, b)), sum(mul(a, c))));
  for (int i = 0; i < 3; ++i)
    REQUIRE(a.grad()[i] == Catch::Approx(b.at(i) + c.at(i)));
}

TEST_CASE("backward order determinism") {
  // the same dag built with branches created in either order gives the
  // same gradients
  auto build = [](bool swap) {
    Tape::active().reset();
    Tensor a = Tensor::vector({0.3, -0.8}, true);
    Tensor left, right;
    if (swap) {
      right = sigmoid_t(a);
      left = tanh_t(a);
    } else {
      left = tanh_t(a);
      right = sigmoid_t(a);
    }
    backward(sum(mul(left, right)));
    return a.grad();
  };
  const auto g1 = build(false);
  const auto g2 = build(true);
  REQUIRE(g1 == g2);
}

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "nsesum/layers.hpp"

using namespace nsesum;

namespace {

Tensor rand_point(int n, Rng& rng) {
  return uniform_tensor(n, 1, -1.0, 1.0, rng, false);
}

}  // namespace

TEST_CASE("lstm_step examples") {
  Rng rng(5);
  SECTION("all-zero weights give zero state") {
    LstmCell cell(3, 2, rng);
    cell.weights() = Tensor::zeros_matrix(8, 5, true);
    cell.bias() = Tensor::zeros_vector(8, true);
    Tape::active().reset();
    LstmState s = cell.step(Tensor::vector({0.7, -0.3, 1.1}),
                            cell.initial_state());
    for (int i = 0; i < 2; ++i) {
      REQUIRE(s.h.at(i) == 0.0);
      REQUIRE(s.c.at(i) == 0.0);
    }
  }
  SECTION("scalar hand evaluation") {
    // single-dim cell with hand-set gate weights; evaluate the gate
    // equations directly
    LstmCell cell(1, 1, rng);
    // rows: input, forget, output, candidate; cols: [x, h]
    cell.weights() = Tensor::matrix(4, 2, {0.5, 0.0,   // i
                                           -0.3, 0.0,  // f
                                           0.2, 0.0,   // o
                                           1.0, 0.0},  // g
                                    true);
    cell.bias() = Tensor::vector({0.1, 0.2, -0.1, 0.0}, true);
    Tape::active().reset();
    const double x = 0.8, c0 = 0.4;
    LstmState st{Tensor::zeros_vector(1), Tensor::vector({c0})};
    LstmState out = cell.step(Tensor::vector({x}), st);
    auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
    const double i = sig(0.5 * x + 0.1);
    const double f = sig(-0.3 * x + 0.2);
    const double o = sig(0.2 * x - 0.1);
    const double g = std::tanh(1.0 * x);
    const double c1 = f * c0 + i * g;
    REQUIRE(out.c.at(0) == Catch::Approx(c1).epsilon(1e-12));
    REQUIRE(out.h.at(0) == Catch::Approx(o * std::tanh(c1)).epsilon(1e-12));
  }
  SECTION("gradient of sum(h') w.r.t. weights matches finite differences") {
    LstmCell cell(2, 2, rng);
    const Tensor x = rand_point(2, rng);
    auto f = [&](const Tensor& w) {
      cell.weights() = reshape(w, 8, 4);
      LstmState st{Tensor::vector({0.1, -0.2}), Tensor::vector({0.3, 0.2})};
      LstmState out = cell.step(x, st);
      return sum(out.h);
    };
    Rng r2(9);
    REQUIRE(grad_check(f, uniform_tensor(32, 1, -0.5, 0.5, r2, false)) < 1e-4);
  }
  SECTION("dimension mismatch rejected") {
    LstmCell cell(3, 2, rng);
    REQUIRE_THROWS_AS(cell.step(Tensor::vector({1.0}), cell.initial_state()),
                      std::invalid_argument);
  }
  SECTION("determinism") {
    LstmCell cell(2, 3, rng);
    Tape::active().reset();
    const Tensor x = Tensor::vector({0.2, -0.9});
    LstmState a = cell.step(x, cell.initial_state());
    LstmState b = cell.step(x, cell.initial_state());
    REQUIRE(a.h.value() == b.h.value());
    REQUIRE(a.c.value() == b.c.value());
  }
}

TEST_CASE("dot_attention examples") {
  Tape::active().reset();
  SECTION("identical rows give uniform weights") {
    Tensor mem = Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2});
    Tensor z = dot_attention(mem, Tensor::vector({0.5, -0.5}), {1, 1, 1});
    for (int i = 0; i < 3; ++i) REQUIRE(z.at(i) == Catch::Approx(1.0 / 3));
  }
  SECTION("exp/sum oracle") {
    Tensor mem = Tensor::matrix(2, 2, {1, 0, 0, 1});
    Tensor z = dot_attention(mem, Tensor::vector({1, 0}), {1, 1});
    REQUIRE(std::abs(z.at(0) - 0.73106) < 1e-4);
    REQUIRE(std::abs(z.at(1) - 0.26894) < 1e-4);
  }
  SECTION("one of two identical slots masked") {
    Tensor mem = Tensor::matrix(2, 2, {3, 3, 3, 3});
    Tensor z = dot_attention(mem, Tensor::vector({1, 1}), {1, 0});
    REQUIRE(z.at(0) == 1.0);
    REQUIRE(z.at(1) == 0.0);
  }
  SECTION("empty memory rejected") {
    Tensor mem = Tensor::matrix(0, 2, {});
    REQUIRE_THROWS_AS(dot_attention(mem, Tensor::vector({1, 1}), {}),
                      std::invalid_argument);
  }
}

TEST_CASE("additive_attention examples") {
  Rng rng(17);
  SECTION("zero v gives uniform weights") {
    AdditiveAttention attn(2, rng);
    attn.v() = Tensor::zeros_vector(2, true);
    Tape::active().reset();
    Tensor mem = Tensor::matrix(3, 2, {1, 2, -1, 0, 4, 4});
    Tensor z = attn(mem, Tensor::vector({0.3, 0.1}), {1, 1, 1});
    for (int i = 0; i < 3; ++i) REQUIRE(z.at(i) == Catch::Approx(1.0 / 3));
  }
  SECTION("scalar parameter oracle") {
    AdditiveAttention attn(1, rng);
    const double v = 0.7, w = -0.4, u = 0.9, b = 0.2, o = 0.5;
    attn.v() = Tensor::vector({v}, true);
    attn.w() = Tensor::matrix(1, 1, {w}, true);
    attn.u() = Tensor::matrix(1, 1, {u}, true);
    attn.b() = Tensor::vector({b}, true);
    Tape::active().reset();
    Tensor mem = Tensor::matrix(2, 1, {0.6, -1.2});
    Tensor z = attn(mem, Tensor::vector({o}), {1, 1});
    auto logit = [&](double m) { return v * std::tanh(w * m + u * o + b); };
    const double l0 = logit(0.6), l1 = logit(-1.2);
    const double e0 = std::exp(l0), e1 = std::exp(l1);
    REQUIRE(z.at(0) == Catch::Approx(e0 / (e0 + e1)).epsilon(1e-12));
    REQUIRE(z.at(1) == Catch::Approx(e1 / (e0 + e1)).epsilon(1e-12));
  }
  SECTION("gradients w.r.t. all parameters match finite differences") {
    const int d = 2;
    Tensor mem = uniform_matrix(3, d, -1, 1, rng, false);
    Tensor key = rand_point(d, rng);
    // pack (v, W, U, b) into one flat point and scatter into the head
    auto f = [&](const Tensor& p) {
      AdditiveAttention attn(d, rng);
      attn.v() = slice(p, 0, d);
      attn.w() = reshape(slice(p, 2, d * d), d, d);
      attn.u() = reshape(slice(p, 6, d * d), d, d);
      attn.b() = slice(p, 10, d);
      Tensor z = attn(mem, key, {1, 1, 1});
      return neg_log_pick(z, 0);
    };
    REQUIRE(grad_check(f, rand_point(12, rng)) < 1e-4);
  }
  SECTION("shape mismatch rejected") {
    AdditiveAttention attn(2, rng);
    REQUIRE_THROWS_AS(attn(Tensor::matrix(2, 3, std::vector<double>(6, 0.0)),
                           Tensor::vector({1, 1}), {1, 1}),
                      std::invalid_argument);
  }
}

TEST_CASE("attention heads always return probability vectors") {
  Rng rng(23);
  AdditiveAttention attn(3, rng);
  for (int rep = 0; rep < 30; ++rep) {
    const int k = 1 + static_cast<int>(rng() % 6);
    Tensor mem = uniform_matrix(k, 3, -2, 2, rng, false);
    Tensor key = rand_point(3, rng);
    std::vector<uint8_t> mask(static_cast<size_t>(k), 0);
    mask[rng() % k] = 1;
    for (auto& m : mask) m = m || (rng() % 2);
    for (const Tensor& z : {dot_attention(mem, key, mask), attn(mem, key, mask)}) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) {
        REQUIRE(z.at(i) >= 0.0);
        if (!mask[i]) REQUIRE(z.at(i) == 0.0);
        s += z.at(i);
      }
      REQUIRE(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("embedding lookup gradient equals dense one-hot matmul oracle") {
  Rng rng(31);
  EmbeddingTable table(5, 3, rng);
  Tape::active().reset();
  // id 2 occurs twice: its grad row is the sum of both upstream grads
  const std::vector<int> ids = {2, 4, 2};
  Tensor rows = table.lookup(ids);
  Tensor weights = Tensor::vector({1.0, 2.0, 3.0});
  backward(sum(matmul(weights, rows)));

  // oracle: one-hot selection matrix times table
  std::vector<double> expected(15, 0.0);
  for (size_t r = 0; r < ids.size(); ++r)
    for (int j = 0; j < 3; ++j)
      expected[static_cast<size_t>(ids[r]) * 3 + j] += weights.at(static_cast<int>(r));
  REQUIRE(table.table().grad() == expected);
}

TEST_CASE("mlp layer dims validated") {
  Rng rng(41);
  Mlp mlp({3, 4, 2}, rng);
  REQUIRE(mlp.forward(Tensor::vector({1, 2, 3})).rows() == 2);
  REQUIRE_THROWS_AS(mlp.forward(Tensor::vector({1, 2})), std::invalid_argument);
}

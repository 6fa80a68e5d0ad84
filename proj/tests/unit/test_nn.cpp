#include <cmath>
#include <random>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "tabforge/error.hpp"
#include "tabforge/nn/ops.hpp"
#include "tabforge/nn/param_store.hpp"
#include "tabforge/nn/tape.hpp"

using namespace tabforge;
using namespace tabforge::nn;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t(r, c);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

void check_close(const Tensor& a, const Tensor& b, double tol) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(tol));
}

}  // namespace

TEST_CASE("dense_forward") {
  check_close(dense_forward({{1, 2}}, Tensor::identity(2), {{0, 0}}), {{1, 2}}, 1e-15);
  check_close(dense_forward({{0, 0}}, {{7, -1}, {2, 5}}, {{3, 4}}), {{3, 4}}, 1e-15);
  check_close(dense_forward({{1, 1}}, {{1, 2}, {3, 4}}, {{0, 0}}), {{4, 6}}, 1e-15);
  CHECK_THROWS_AS(dense_forward({{1, 2, 3}}, Tensor::identity(2), {{0, 0}}), DimensionError);
  CHECK_THROWS_AS(dense_forward({{1, 2}}, Tensor::identity(2), {{0, 0, 0}}), DimensionError);
}

TEST_CASE("layer_norm") {
  const Tensor out = layer_norm({{5, 5, 5}}, {{1, 1, 1}}, {{0, 0, 0}});
  for (double v : out.data()) CHECK(v == 0.0);
  check_close(layer_norm({{1, -1}}, {{1, 1}}, {{0, 0}}, 1e-15), {{1, -1}}, 1e-12);
  check_close(layer_norm({{0, 2}}, {{2, 2}}, {{1, 1}}, 0.0), {{-1, 3}}, 1e-15);
  CHECK_THROWS_AS(layer_norm({{0, 2}}, {{2, 2, 2}}, {{1, 1}}), DimensionError);
}

TEST_CASE("self_attention") {
  SUBCASE("single token attends to itself") {
    const Tensor h{{0.3, -1.2}};
    const Tensor wq{{0.5, 1.0}, {-2.0, 0.1}};
    const Tensor wk{{1.5, 0.2}, {0.7, -0.4}};
    const Tensor wv{{2.0, 0.0}, {1.0, 3.0}};
    CHECK(attention_weights(h, wq, wk)(0, 0) == 1.0);
    check_close(self_attention(h, wq, wk, wv), matmul(h, wv), 1e-15);
  }
  SUBCASE("zero logits average the values") {
    const Tensor h{{1, 2}, {3, 4}, {-1, 0}};
    const Tensor zero(2, 2);
    const Tensor wv{{1, 0.5}, {-1, 2}};
    const Tensor v = matmul(h, wv);
    const Tensor out = self_attention(h, zero, zero, wv);
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 2; ++c) {
        CHECK(out(r, c) == doctest::Approx((v(0, c) + v(1, c) + v(2, c)) / 3.0).epsilon(1e-14));
      }
    }
  }
  SUBCASE("two scalar tokens, hand evaluated softmax") {
    // Q = K = V = H = [1, 2]^T, d = 1: rows mix with softmax([1,2]) and softmax([2,4]).
    const Tensor out = self_attention({{1}, {2}}, {{1}}, {{1}}, {{1}});
    const double e = std::exp(1.0);
    CHECK(out(0, 0) == doctest::Approx((1 + 2 * e) / (1 + e)).epsilon(1e-14));
    CHECK(out(1, 0) == doctest::Approx((1 + 2 * e * e) / (1 + e * e)).epsilon(1e-14));
  }
  SUBCASE("rows sum to one") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t m = 1 + trial % 6;
      const Tensor w = attention_weights(random_tensor(rng, m, 4, 3.0), random_tensor(rng, 4, 4),
                                         random_tensor(rng, 4, 4));
      for (std::size_t r = 0; r < m; ++r) {
        double s = 0.0;
        for (double p : w.row_span(r)) s += p;
        CHECK(std::abs(s - 1.0) < 1e-12);
      }
    }
  }
  CHECK_THROWS_AS(self_attention({{1, 2}}, Tensor::identity(3), Tensor::identity(2),
                                 Tensor::identity(2)),
                  DimensionError);
}

TEST_CASE("backward basics") {
  ParamStore store;
  store.add("w", Tensor{{1.7}});
  store.add("unused", Tensor{{2.0, 3.0}});

  SUBCASE("linear loss") {
    Tape tape;
    const Var loss = tape.matmul(tape.param(store, "w"), tape.constant(Tensor{{3.0}}));
    tape.backward(loss);
    const Gradients g = tape.parameter_gradients(store);
    CHECK(g[0][0] == 3.0);
    CHECK(g[1][0] == 0.0);
    CHECK(g[1][1] == 0.0);
  }
  SUBCASE("constant loss") {
    Tape tape;
    tape.param(store, "w");
    const Var loss = tape.constant(Tensor{{4.0}});
    tape.backward(loss);
    for (const Tensor& g : tape.parameter_gradients(store)) {
      for (double v : g.data()) CHECK(v == 0.0);
    }
  }
  SUBCASE("no forward pass") {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(Var{}), StateError);
  }
  SUBCASE("backward twice") {
    Tape tape;
    const Var loss = tape.scale(tape.param(store, "w"), 2.0);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), StateError);
  }
}

TEST_CASE("two-layer network matches finite differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    ParamStore store;
    store.add("w1", random_tensor(rng, 3, 5));
    store.add("b1", random_tensor(rng, 1, 5));
    store.add("w2", random_tensor(rng, 5, 2));
    store.add("b2", random_tensor(rng, 1, 2));
    const Tensor x = random_tensor(rng, 4, 3);
    const Tensor y = random_tensor(rng, 4, 2);
    const auto build = [&](Tape& t, const ParamStore& s) {
      Var h = t.relu(t.add_bias(t.matmul(t.constant(x), t.param(s, "w1")), t.param(s, "b1")));
      Var out = t.add_bias(t.matmul(h, t.param(s, "w2")), t.param(s, "b2"));
      return t.mse(out, y);
    };
    const auto result = testing::check_gradients(build, store);
    INFO(result.worst_parameter);
    CHECK(result.max_relative_error < 1e-4);
  }
}

// One scalar probe per layer type: loss = mse(layer(params), random target).
TEST_CASE("every layer type passes gradient checks on 20 random configurations") {
  std::mt19937_64 rng(2024);
  using Build = std::function<Var(Tape&, const ParamStore&)>;
  struct Case {
    const char* name;
    std::function<std::pair<ParamStore, Build>()> make;
  };
  const std::vector<Case> cases = {
      {"dense",
       [&] {
         ParamStore s;
         const std::size_t n = 1 + rng() % 4, k = 1 + rng() % 4, m = 1 + rng() % 4;
         s.add("x", random_tensor(rng, n, k));
         s.add("w", random_tensor(rng, k, m));
         s.add("b", random_tensor(rng, 1, m));
         Tensor y = random_tensor(rng, n, m);
         return std::pair{s, Build([y](Tape& t, const ParamStore& p) {
                            return t.mse(t.add_bias(t.matmul(t.param(p, "x"), t.param(p, "w")),
                                                    t.param(p, "b")),
                                         y);
                          })};
       }},
      {"layer_norm",
       [&] {
         ParamStore s;
         const std::size_t n = 1 + rng() % 4, k = 2 + rng() % 4;
         s.add("x", random_tensor(rng, n, k, 2.0));
         s.add("g", random_tensor(rng, 1, k));
         s.add("b", random_tensor(rng, 1, k));
         Tensor y = random_tensor(rng, n, k);
         return std::pair{s, Build([y](Tape& t, const ParamStore& p) {
                            return t.mse(t.layer_norm(t.param(p, "x"), t.param(p, "g"),
                                                      t.param(p, "b"), kLayerNormEps),
                                         y);
                          })};
       }},
      {"attention",
       [&] {
         ParamStore s;
         const std::size_t groups = 1 + rng() % 3, m = 1 + rng() % 4, d = 1 + rng() % 4;
         s.add("h", random_tensor(rng, groups * m, d));
         s.add("wq", random_tensor(rng, d, d));
         s.add("wk", random_tensor(rng, d, d));
         s.add("wv", random_tensor(rng, d, d));
         Tensor y = random_tensor(rng, groups * m, d);
         const double sc = 1.0 / std::sqrt(static_cast<double>(d));
         return std::pair{s, Build([y, m, sc](Tape& t, const ParamStore& p) {
                            Var h = t.param(p, "h");
                            Var out = t.attention(t.matmul(h, t.param(p, "wq")),
                                                  t.matmul(h, t.param(p, "wk")),
                                                  t.matmul(h, t.param(p, "wv")), m, sc);
                            return t.mse(out, y);
                          })};
       }},
      {"activations",
       [&] {
         ParamStore s;
         const std::size_t n = 1 + rng() % 4, k = 1 + rng() % 4;
         s.add("x", random_tensor(rng, n, k));
         s.add("z", random_tensor(rng, n, k));
         Tensor y = random_tensor(rng, n, k);
         return std::pair{s, Build([y](Tape& t, const ParamStore& p) {
                            Var x = t.param(p, "x");
                            Var z = t.param(p, "z");
                            Var a = t.add(t.relu(x), t.silu(z));
                            Var b = t.mul(t.exp(t.scale(x, 0.5)), t.sub(a, z));
                            return t.mse(b, y);
                          })};
       }},
      {"tokens",
       [&] {
         ParamStore s;
         const std::size_t batch = 1 + rng() % 3, d = 1 + rng() % 3;
         s.add("c0", random_tensor(rng, batch, d));
         s.add("c1", random_tensor(rng, batch, d));
         s.add("c2", random_tensor(rng, batch, d));
         Tensor y = random_tensor(rng, batch, 3 * d);
         Tensor y1 = random_tensor(rng, batch, d);
         return std::pair{s, Build([y, y1, batch, d](Tape& t, const ParamStore& p) {
                            std::vector<Var> cols{t.param(p, "c0"), t.param(p, "c1"),
                                                  t.param(p, "c2")};
                            Var stacked = t.stack_tokens(cols);
                            Var flat = t.reshape(stacked, batch, 3 * d);
                            Var one = t.take_token(t.silu(stacked), 1, 3);
                            return t.add(t.mse(flat, y), t.mse(one, y1));
                          })};
       }},
      {"cross_entropy",
       [&] {
         ParamStore s;
         const std::size_t n = 1 + rng() % 5, c = 2 + rng() % 3;
         s.add("logits", random_tensor(rng, n, c, 2.0));
         std::vector<int> labels(n);
         for (auto& l : labels) l = static_cast<int>(rng() % c);
         return std::pair{s, Build([labels](Tape& t, const ParamStore& p) {
                            return t.softmax_cross_entropy(t.param(p, "logits"), labels);
                          })};
       }},
      {"kl",
       [&] {
         ParamStore s;
         const std::size_t n = 1 + rng() % 4, k = 1 + rng() % 4;
         s.add("mu", random_tensor(rng, n, k));
         s.add("ls", random_tensor(rng, n, k, 0.5));
         return std::pair{s, Build([](Tape& t, const ParamStore& p) {
                            return t.kl_standard_normal(t.param(p, "mu"), t.param(p, "ls"));
                          })};
       }},
  };
  for (const auto& c : cases) {
    for (int trial = 0; trial < 20; ++trial) {
      auto [store, build] = c.make();
      const auto result = testing::check_gradients(build, store);
      INFO(c.name << " trial " << trial << " worst " << result.worst_parameter);
      CHECK(result.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("adam_step") {
  const AdamConfig cfg{.lr = 0.01};
  SUBCASE("zero gradient leaves parameters unchanged and decays moments") {
    ParamStore store;
    store.add("p", Tensor{{1.0, -2.0}});
    store.first_moment(0) = Tensor{{0.5, 0.5}};
    store.second_moment(0) = Tensor{{0.25, 0.25}};
    store.set_step(3);
    ParamStore fresh;
    fresh.add("p", Tensor{{1.0, -2.0}});
    adam_step(fresh, {Tensor(1, 2)}, cfg);
    CHECK(fresh.value(0) == Tensor{{1.0, -2.0}});
    CHECK(fresh.step() == 1);

    adam_step(store, {Tensor(1, 2)}, cfg);
    CHECK(store.first_moment(0)[0] == doctest::Approx(0.45));
    CHECK(store.second_moment(0)[0] == doctest::Approx(0.25 * 0.999));
    CHECK(store.step() == 4);
  }
  SUBCASE("first step moves by lr * sign(g)") {
    for (double g : {3.0, -0.2, 1e-3}) {
      ParamStore store;
      store.add("p", Tensor{{0.0}});
      adam_step(store, {Tensor{{g}}}, cfg);
      const double expected = -cfg.lr * (g > 0 ? 1.0 : -1.0) * (std::abs(g) / (std::abs(g) + cfg.eps));
      CHECK(store.value(0)[0] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  SUBCASE("quadratic loss decreases every step") {
    ParamStore store;
    store.add("p", Tensor{{3.0, -4.0}});
    const auto loss = [&] {
      const auto& p = store.value(0);
      return p[0] * p[0] + 2.0 * p[1] * p[1];
    };
    double prev = loss();
    for (int i = 0; i < 100; ++i) {
      const auto& p = store.value(0);
      adam_step(store, {Tensor{{2.0 * p[0], 4.0 * p[1]}}}, cfg);
      const double now = loss();
      CHECK(now < prev);
      prev = now;
    }
  }
  SUBCASE("non-finite gradient") {
    ParamStore store;
    store.add("decoder.w", Tensor{{1.0}});
    try {
      adam_step(store, {Tensor{{NAN}}}, cfg);
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("decoder.w") != std::string::npos);
    }
    CHECK(store.value(0)[0] == 1.0);
  }
}

TEST_CASE("silu_forward does not depend on buffer alignment") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal(0.0, 4.0);
  std::vector<double> x(203);
  for (double& v : x) v = normal(rng);
  std::vector<double> ref_out(x.size()), ref_sig(x.size());
  silu_forward(x, ref_out, ref_sig);
  for (std::size_t shift = 1; shift < 8; ++shift) {
    std::vector<double> in(x.size() + shift), out(in.size()), sig(in.size());
    std::copy(x.begin(), x.end(), in.begin() + static_cast<std::ptrdiff_t>(shift));
    silu_forward(std::span(in).subspan(shift), std::span(out).subspan(shift),
                 std::span(sig).subspan(shift));
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(out[shift + i] == ref_out[i]);
      CHECK(sig[shift + i] == ref_sig[i]);
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(ref_out[i] == doctest::Approx(x[i] / (1.0 + std::exp(-x[i]))).epsilon(1e-14));
  }
}

#include <cmath>
#include <cstring>

#include "biacl/autodiff.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace biacl;
using testutil::fd_gradient;
using testutil::max_rel_err;

namespace {

Tensor rnd(Rng& rng, std::vector<int64_t> shape, double lo = -1.0, double hi = 1.0) {
  return random_uniform(rng, shape, lo, hi);
}

// Reduce an arbitrary rank-2 value to a scalar through fixed random
// projections so every coordinate of every input influences the loss.
Value project_to_scalar(Graph& g, Value out, Rng& rng) {
  const auto& sh = out.shape();
  if (sh.size() == 1) {
    // weight the coordinates, collapse through a smooth norm
    Value weighted = mul(out, g.constant(rnd(rng, {sh[0]}, 0.5, 1.5)));
    return l2_norm(weighted);
  }
  Value r1 = g.constant(rnd(rng, {sh[1], 1}));
  Value col = matmul(out, r1);               // [m,1]
  Value r2 = g.constant(rnd(rng, {1, sh[0]}));
  return matmul(r2, col);                    // [1,1]
}

}  // namespace

TEST_CASE("tensor basics and shape rendering") {
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(shape_str(t.shape) == "[2 x 3]");
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), std::invalid_argument);
  CHECK(Tensor::row({3.0, 4.0}).l2() == doctest::Approx(5.0));
}

TEST_CASE("matmul forward shape and values") {
  Graph g;
  Value a = g.leaf(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  Value b = g.leaf(Tensor({3, 2}, {7, 8, 9, 10, 11, 12}));
  Value c = matmul(a, b);
  CHECK(c.shape() == std::vector<int64_t>{2, 2});
  CHECK(c.tensor().at(0, 0) == doctest::Approx(58));
  CHECK(c.tensor().at(1, 1) == doctest::Approx(154));
}

TEST_CASE("shape mismatch reports both shapes") {
  Graph g;
  Value a = g.leaf(Tensor::zeros({2, 3}));
  Value b = g.leaf(Tensor::zeros({4, 2}));
  try {
    matmul(a, b);
    FAIL("expected shape error");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2 x 3]") != std::string::npos);
    CHECK(msg.find("[4 x 2]") != std::string::npos);
  }
}

TEST_CASE("non-finite inputs are rejected") {
  Graph g;
  Tensor bad = Tensor::zeros({2});
  bad.at(1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(g.leaf(bad), std::invalid_argument);
  bad.at(1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(g.constant(bad), std::invalid_argument);
}

TEST_CASE("softmax rows sum to one and log_softmax agrees") {
  Rng rng(7);
  Graph g;
  Value x = g.leaf(rnd(rng, {4, 6}, -3, 3));
  Value sm = softmax(x);
  Value lsm = log_softmax(x);
  for (int64_t i = 0; i < 4; ++i) {
    double s = 0;
    for (int64_t j = 0; j < 6; ++j) {
      s += sm.tensor().at(i, j);
      CHECK(std::log(sm.tensor().at(i, j)) ==
            doctest::Approx(lsm.tensor().at(i, j)).epsilon(1e-12));
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy limits: uniform logits give ln V, confident logits give ~0") {
  Graph g;
  Value uniform = g.leaf(Tensor::zeros({3, 8}));
  Value ce = cross_entropy(uniform, {0, 5, 7});
  CHECK(ce.tensor().at(0) == doctest::Approx(std::log(8.0)).epsilon(1e-12));

  Tensor conf = Tensor::zeros({2, 4});
  conf.at(0, 1) = 50.0;
  conf.at(1, 3) = 50.0;
  Value ce2 = cross_entropy(g.leaf(conf), {1, 3});
  CHECK(ce2.tensor().at(0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("kl divergence of identical rows is zero and is asymmetric otherwise") {
  Rng rng(11);
  Graph g;
  Tensor p = rnd(rng, {3, 5}, -2, 2);
  Value kl0 = kl_divergence(g.leaf(p), g.leaf(p));
  CHECK(kl0.tensor().at(0) == doctest::Approx(0.0).epsilon(1e-14));

  Tensor q = rnd(rng, {3, 5}, -2, 2);
  Value ab = kl_divergence(g.leaf(p), g.leaf(q));
  Value ba = kl_divergence(g.leaf(q), g.leaf(p));
  CHECK(ab.tensor().at(0) > 0.0);
  CHECK(ab.tensor().at(0) != doctest::Approx(ba.tensor().at(0)));
}

TEST_CASE("cosine similarity endpoints") {
  Graph g;
  Value v = g.leaf(Tensor::row({1, 2, 2}));
  Value w = g.leaf(Tensor::row({-1, -2, -2}));
  Value o = g.leaf(Tensor::row({2, -1, 0}));
  CHECK(cosine_similarity(v, v).tensor().at(0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(cosine_similarity(v, w).tensor().at(0) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(cosine_similarity(v, o).tensor().at(0) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK_THROWS_AS(cosine_similarity(v, g.leaf(Tensor::row({0, 0, 0}))), std::invalid_argument);
}

TEST_CASE("embedding looks up rows; mean_rows and l2_norm basic values") {
  Graph g;
  Value table = g.leaf(Tensor({3, 2}, {1, 2, 3, 4, 5, 6}));
  Value e = embedding(table, {2, 0, 2});
  CHECK(e.tensor().at(0, 0) == 5);
  CHECK(e.tensor().at(1, 1) == 2);
  CHECK(e.tensor().at(2, 1) == 6);

  Value m = mean_rows(g.leaf(Tensor({2, 2}, {1, 2, 3, 4})));
  CHECK(m.tensor().at(0) == doctest::Approx(2.0));
  CHECK(m.tensor().at(1) == doctest::Approx(3.0));

  CHECK(l2_norm(g.leaf(Tensor::row({3, 4}))).tensor().at(0) == doctest::Approx(5.0));
}

TEST_CASE("layer_norm normalizes each row") {
  Rng rng(3);
  Graph g;
  Value x = g.leaf(rnd(rng, {3, 16}, -2, 2));
  Value gain = g.leaf(Tensor::full({16}, 1.0));
  Value bias = g.leaf(Tensor::zeros({16}));
  Value y = layer_norm(x, gain, bias);
  for (int64_t i = 0; i < 3; ++i) {
    double mu = 0, var = 0;
    for (int64_t j = 0; j < 16; ++j) mu += y.tensor().at(i, j);
    mu /= 16;
    for (int64_t j = 0; j < 16; ++j) {
      double d = y.tensor().at(i, j) - mu;
      var += d * d;
    }
    var /= 16;
    CHECK(mu == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps in the denominator skews slightly
  }
}

// ---- gradient oracle: every op against central finite differences ---------

namespace {

// Builds loss(x) for a given op wiring and returns (autodiff grad, fd grad).
struct GradCheck {
  Tensor x;
  std::function<Value(Graph&, Value)> wire;  // op under test + scalarization
  uint64_t seed = 99;

  void run(double tol = 1e-6) {
    Tensor ad;
    {
      Graph g;
      Value xin = g.leaf(x);
      Rng prj(seed);
      Value loss = wire_with_projection(g, xin, prj);
      g.backward(loss);
      ad = g.grad(xin);
    }
    auto f = [&]() {
      Graph g;
      Value xin = g.leaf(x);
      Rng prj(seed);
      Value loss = wire_with_projection(g, xin, prj);
      return loss.tensor().at(0);
    };
    Tensor fd = fd_gradient(f, x);
    CHECK(max_rel_err(ad, fd) < tol);
  }

  Value wire_with_projection(Graph& g, Value xin, Rng& prj) {
    Value out = wire(g, xin);
    if (out.tensor().is_scalar()) return out;
    return project_to_scalar(g, out, prj);
  }
};

}  // namespace

TEST_CASE("finite differences: matmul, transpose, add, mul, scale") {
  Rng rng(21);
  GradCheck c;

  c.x = rnd(rng, {3, 4});
  Tensor b = rnd(rng, {4, 5});
  c.wire = [&](Graph& g, Value x) { return matmul(x, g.constant(b)); };
  c.run();

  c.wire = [&](Graph& g, Value x) { return transpose(matmul(x, g.constant(b))); };
  c.run();

  Tensor a2 = rnd(rng, {3, 4});
  c.wire = [&](Graph& g, Value x) { return add(x, g.constant(a2)); };
  c.run();
  c.wire = [&](Graph& g, Value x) { return mul(x, g.constant(a2)); };
  c.run();
  c.wire = [&](Graph& g, Value x) { (void)g; return scale(x, -2.5); };
  c.run();

  // row-broadcast add/mul, gradient wrt the broadcast row
  c.x = rnd(rng, {4});
  Tensor big = rnd(rng, {3, 4});
  c.wire = [&](Graph& g, Value x) { return add(g.constant(big), x); };
  c.run();
  c.wire = [&](Graph& g, Value x) { return mul(g.constant(big), x); };
  c.run();
}

TEST_CASE("finite differences: exp, log, silu, softmax, log_softmax") {
  Rng rng(22);
  GradCheck c;
  c.x = rnd(rng, {3, 5}, -1.5, 1.5);
  c.wire = [&](Graph& g, Value x) { (void)g; return vexp(x); };
  c.run();
  c.wire = [&](Graph& g, Value x) { (void)g; return silu(x); };
  c.run();
  c.wire = [&](Graph& g, Value x) { (void)g; return softmax(x); };
  c.run();
  c.wire = [&](Graph& g, Value x) { (void)g; return log_softmax(x); };
  c.run();

  c.x = rnd(rng, {3, 5}, 0.5, 3.0);  // positive domain for log
  c.wire = [&](Graph& g, Value x) { (void)g; return vlog(x); };
  c.run();
}

TEST_CASE("finite differences: layer_norm wrt input, gain and bias") {
  Rng rng(23);
  Tensor x0 = rnd(rng, {4, 6});
  Tensor g0 = rnd(rng, {6}, 0.5, 1.5);
  Tensor b0 = rnd(rng, {6});

  GradCheck c;
  c.x = x0;
  c.wire = [&](Graph& g, Value x) {
    return layer_norm(x, g.constant(g0), g.constant(b0));
  };
  c.run();

  c.x = g0;
  c.wire = [&](Graph& g, Value x) {
    return layer_norm(g.leaf(x0), x, g.constant(b0));
  };
  c.run();

  c.x = b0;
  c.wire = [&](Graph& g, Value x) {
    return layer_norm(g.leaf(x0), g.constant(g0), x);
  };
  c.run();
}

TEST_CASE("finite differences: embedding, concat, slice, mean_rows, l2_norm") {
  Rng rng(24);
  GradCheck c;

  c.x = rnd(rng, {5, 3});
  c.wire = [&](Graph& g, Value x) { (void)g; return embedding(x, {4, 0, 4, 2}); };
  c.run();

  Tensor other = rnd(rng, {2, 3});
  c.wire = [&](Graph& g, Value x) { return concat_rows(x, g.constant(other)); };
  c.run();

  Tensor wide = rnd(rng, {5, 2});
  c.wire = [&](Graph& g, Value x) { return concat_cols(x, g.constant(wide)); };
  c.run();

  c.wire = [&](Graph& g, Value x) { (void)g; return slice_cols(x, 1, 3); };
  c.run();

  c.wire = [&](Graph& g, Value x) { (void)g; return mean_rows(x); };
  c.run();

  c.wire = [&](Graph& g, Value x) { (void)g; return l2_norm(x); };
  c.run();
}

TEST_CASE("finite differences: cross_entropy, kl_divergence, cosine, attention") {
  Rng rng(25);
  GradCheck c;

  c.x = rnd(rng, {4, 7}, -2, 2);
  c.wire = [&](Graph& g, Value x) { (void)g; return cross_entropy(x, {1, 6, 0, 3}); };
  c.run();

  Tensor q_logits = rnd(rng, {4, 7}, -2, 2);
  c.wire = [&](Graph& g, Value x) { return kl_divergence(x, g.leaf(q_logits)); };
  c.run();
  c.wire = [&](Graph& g, Value x) { return kl_divergence(g.leaf(q_logits), x); };
  c.run();

  c.x = rnd(rng, {6});
  Tensor v2 = rnd(rng, {6});
  c.wire = [&](Graph& g, Value x) { return cosine_similarity(x, g.constant(v2)); };
  c.run();

  // attention: gradient wrt q, k, v separately, causal and not
  Tensor q0 = rnd(rng, {3, 4});
  Tensor k0 = rnd(rng, {3, 4});
  Tensor vv0 = rnd(rng, {3, 4});
  for (bool causal : {false, true}) {
    c.x = q0;
    c.wire = [&, causal](Graph& g, Value x) {
      return scaled_dot_attention(x, g.constant(k0), g.constant(vv0), causal);
    };
    c.run();
    c.x = k0;
    c.wire = [&, causal](Graph& g, Value x) {
      return scaled_dot_attention(g.constant(q0), x, g.constant(vv0), causal);
    };
    c.run();
    c.x = vv0;
    c.wire = [&, causal](Graph& g, Value x) {
      return scaled_dot_attention(g.constant(q0), g.constant(k0), x, causal);
    };
    c.run();
  }
}

TEST_CASE("cross-entropy gradient equals (softmax - onehot) / n") {
  Rng rng(31);
  Graph g;
  Tensor logits = rnd(rng, {3, 5}, -2, 2);
  Value x = g.leaf(logits);
  std::vector<int> targets = {2, 0, 4};
  Value loss = cross_entropy(x, targets);
  g.backward(loss);
  Tensor grad = g.grad(x);

  Graph g2;
  Value sm = softmax(g2.leaf(logits));
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 5; ++j) {
      double expect = (sm.tensor().at(i, j) - (targets[static_cast<size_t>(i)] == j ? 1.0 : 0.0)) / 3.0;
      CHECK(grad.at(i, j) == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("softmax input gradient rows sum to zero") {
  Rng rng(32);
  Graph g;
  Value x = g.leaf(rnd(rng, {5, 9}, -3, 3));
  Value out = softmax(x);
  Rng prj(5);
  Value loss = project_to_scalar(g, out, prj);
  g.backward(loss);
  Tensor grad = g.grad(x);
  for (int64_t i = 0; i < 5; ++i) {
    double s = 0;
    for (int64_t j = 0; j < 9; ++j) s += grad.at(i, j);
    CHECK(std::fabs(s) < 1e-12);
  }
}

TEST_CASE("unreachable parameters get zero gradients") {
  Graph g;
  Value used = g.parameter(Tensor::row({1, 2}), 0);
  Value unused = g.parameter(Tensor::row({3, 4}), 1);
  (void)unused;
  Value loss = l2_norm(used);
  auto grads = g.backward(loss);
  REQUIRE(grads.count(0) == 1);
  REQUIRE(grads.count(1) == 1);
  CHECK(grads.at(1).at(0) == 0.0);
  CHECK(grads.at(1).at(1) == 0.0);
  CHECK(grads.at(0).at(0) != 0.0);

  // loss with no parameter path at all
  Value c = g.constant(Tensor::row({5, 6}));
  auto grads2 = g.backward(l2_norm(c));
  CHECK(grads2.at(0).at(0) == 0.0);
  CHECK(grads2.at(1).at(1) == 0.0);
}

TEST_CASE("non-scalar loss is rejected") {
  Graph g;
  Value x = g.parameter(Tensor::zeros({2, 2}), 0);
  CHECK_THROWS_AS(g.backward(x), std::invalid_argument);
}

TEST_CASE("backward is deterministic: identical graphs give bit-identical gradients") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Graph g;
    Value x = g.parameter(random_uniform(rng, {4, 6}, -1, 1), 0);
    Value w = g.parameter(random_uniform(rng, {6, 6}, -1, 1), 1);
    Value y = silu(matmul(x, w));
    Value ln = layer_norm(y, g.parameter(Tensor::full({6}, 1.0), 2),
                          g.parameter(Tensor::zeros({6}), 3));
    Value loss = cross_entropy(ln, {0, 1, 2, 3});
    return g.backward(loss);
  };
  auto a = run(77);
  auto b = run(77);
  REQUIRE(a.size() == b.size());
  for (auto& [id, ga] : a) {
    const Tensor& gb = b.at(id);
    REQUIRE(ga.data.size() == gb.data.size());
    CHECK(std::memcmp(ga.data.data(), gb.data.data(), ga.data.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("generic apply dispatcher mirrors the typed builders") {
  Rng rng(41);
  Graph g;
  Value a = g.leaf(rnd(rng, {2, 3}));
  Value b = g.leaf(rnd(rng, {3, 2}));
  Value via_apply = apply(OpKind::kMatMul, {a, b});
  Value direct = matmul(a, b);
  CHECK(via_apply.tensor().data == direct.tensor().data);

  Value table = g.leaf(rnd(rng, {4, 3}));
  Value ids = g.constant(Tensor::row({2, 0}));
  Value e = apply(OpKind::kEmbedding, {table, ids});
  CHECK(e.tensor().at(0, 0) == table.tensor().at(2, 0));

  Value logits = g.leaf(rnd(rng, {2, 4}));
  Value targets = g.constant(Tensor::row({1, 3}));
  Value ce = apply(OpKind::kCrossEntropy, {logits, targets});
  CHECK(ce.tensor().is_scalar());

  CHECK_THROWS_AS(apply(OpKind::kScale, {a}), std::invalid_argument);
}

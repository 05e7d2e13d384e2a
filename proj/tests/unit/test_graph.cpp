#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "annealkd/errors.hpp"
#include "annealkd/graph.hpp"
#include "doctest.h"

using namespace annealkd;
using autograd::Graph;
using autograd::NodeId;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  Tensor t(std::move(shape));
  for (Real& v : t.values()) v = static_cast<Real>(dist(rng));
  return t;
}

// Direct seven-loop convolution used as a reference.
Tensor naive_conv(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const std::size_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Tensor out(Shape{n, o, ho, wo});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t f = 0; f < o; ++f)
      for (std::size_t i = 0; i < ho; ++i)
        for (std::size_t j = 0; j < wo; ++j) {
          double acc = 0;
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long s = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (r < 0 || s < 0 || r >= static_cast<long>(h) || s >= static_cast<long>(wd)) continue;
                acc += x[((b * c + ch) * h + static_cast<std::size_t>(r)) * wd + static_cast<std::size_t>(s)] *
                       w[((f * c + ch) * k + u) * k + v];
              }
          out[((b * o + f) * ho + i) * wo + j] = static_cast<Real>(acc);
        }
  return out;
}

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("add") {
    Graph g;
    NodeId a = g.constant(Tensor::vector({1, 2}));
    NodeId b = g.constant(Tensor::vector({3, 4}));
    CHECK(g.value(g.add(a, b)) == Tensor::vector({4, 6}));
  }

  TEST_CASE("sigmoid of zero") {
    Graph g;
    CHECK(g.value(g.sigmoid(g.constant(Tensor::scalar(0)))).item() == Real(0.5));
  }

  TEST_CASE("softmax of equal logits is uniform") {
    Graph g;
    NodeId s = g.softmax(g.constant(Tensor(Shape{1, 3}, Real(0))));
    for (Real v : g.value(s).values()) CHECK(v == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("matmul shape") {
    Graph g;
    NodeId m = g.matmul(g.constant(Tensor(Shape{2, 3}, Real(1))), g.constant(Tensor(Shape{3, 4}, Real(1))));
    CHECK(g.value(m).shape() == Shape{2, 4});
    CHECK(g.value(m)[0] == 3);
  }

  TEST_CASE("shape errors name the operation") {
    Graph g;
    NodeId a = g.constant(Tensor(Shape{2, 3}));
    NodeId b = g.constant(Tensor(Shape{2, 3}));
    try {
      g.matmul(a, b);
      FAIL("matmul accepted mismatched operands");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    }
    CHECK_THROWS_AS(g.add(a, g.constant(Tensor(Shape{3, 2}))), ShapeError);
  }

  TEST_CASE("non-positive temperature is rejected") {
    Graph g;
    NodeId x = g.constant(Tensor(Shape{1, 2}));
    CHECK_THROWS_AS(g.softmax(x, 0), InvalidArgument);
    CHECK_THROWS_AS(g.log_softmax(x, -1), InvalidArgument);
  }

  TEST_CASE("mse backward") {
    Graph g;
    NodeId p = g.parameter(Tensor(Shape{1, 1}, Real(3)));
    NodeId loss = g.mse(p, g.constant(Tensor(Shape{1, 1}, Real(0))));
    CHECK(g.value(loss).item() == 9);
    CHECK(g.backward(loss).at(p).item() == 6);
  }

  TEST_CASE("gradient of a sum is all ones") {
    Graph g;
    NodeId p = g.parameter(Tensor(Shape{2, 3}, Real(0.25)));
    auto grads = g.backward(g.sum(p));
    for (Real v : grads.at(p).values()) CHECK(v == 1);
  }

  TEST_CASE("non-scalar loss is rejected") {
    Graph g;
    NodeId p = g.parameter(Tensor::vector({1, 2}));
    CHECK_THROWS_AS(g.backward(p), ShapeError);
  }

  TEST_CASE("unused parameters get exact zeros") {
    Graph g;
    NodeId used = g.parameter(Tensor::vector({1, 2}));
    NodeId unused = g.parameter(Tensor::vector({5, 6, 7}));
    auto grads = g.backward(g.sum(used));
    REQUIRE(grads.count(unused) == 1);
    for (Real v : grads.at(unused).values()) CHECK(v == 0);
    CHECK(grads.at(unused).shape() == Shape{3});
  }

  TEST_CASE("constants receive no gradient") {
    Graph g;
    NodeId c = g.constant(Tensor::vector({1, 2}));
    NodeId p = g.parameter(Tensor::vector({1, 2}));
    auto grads = g.backward(g.sum(g.add(c, p)));
    CHECK(grads.count(c) == 0);
    CHECK(grads.size() == 1);
  }

  TEST_CASE("non-finite forward value raises a numeric error") {
    Graph g;
    NodeId big = g.constant(Tensor::scalar(std::numeric_limits<Real>::max()));
    CHECK_THROWS_AS(g.scale(big, 10), NumericError);
  }

  TEST_CASE("every node reads only earlier nodes") {
    std::mt19937_64 rng(3);
    Graph g;
    NodeId x = g.constant(random_tensor({4, 3}, rng));
    NodeId w = g.parameter(random_tensor({3, 5}, rng));
    NodeId h = g.sigmoid(g.matmul(x, w));
    NodeId loss = g.cross_entropy(g.relu(h), std::vector<std::size_t>{0, 1, 2, 4});
    g.backward(loss);
    for (std::uint32_t i = 0; i < g.size(); ++i) {
      for (NodeId in : g.node(NodeId{i}).inputs) CHECK(in.index < i);
    }
  }

  TEST_CASE("softmax rows sum to one for random logits") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
      Graph g;
      const Real t = static_cast<Real>(0.5 + trial * 0.3);
      NodeId s = g.softmax(g.constant(random_tensor({5, 7}, rng, 4.0)), t);
      const Tensor& v = g.value(s);
      for (std::size_t r = 0; r < 5; ++r) {
        double total = 0;
        for (std::size_t c = 0; c < 7; ++c) {
          CHECK(v[r * 7 + c] >= 0);
          total += v[r * 7 + c];
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
      }
    }
  }

  TEST_CASE("log_softmax is invariant to a per-row shift") {
    std::mt19937_64 rng(5);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor shifted = x;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += Real(7);
    Graph g;
    const Tensor& a = g.value(g.log_softmax(g.constant(x), 2));
    const Tensor& b = g.value(g.log_softmax(g.constant(shifted), 2));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-5));
  }

  TEST_CASE("kl divergence of identical distributions is zero") {
    std::mt19937_64 rng(9);
    Graph g;
    NodeId lp = g.log_softmax(g.constant(random_tensor({3, 4}, rng)));
    CHECK(g.value(g.kl_divergence(lp, lp)).item() == doctest::Approx(0.0));
  }

  TEST_CASE("cross entropy rejects bad labels") {
    Graph g;
    NodeId x = g.constant(Tensor(Shape{2, 3}));
    CHECK_THROWS_AS(g.cross_entropy(x, std::vector<std::size_t>{0, 3}), InvalidArgument);
    CHECK_THROWS_AS(g.cross_entropy(x, std::vector<std::size_t>{0}), ShapeError);
  }

  TEST_CASE("conv2d matches a direct convolution") {
    std::mt19937_64 rng(21);
    for (std::size_t stride : {1u, 2u}) {
      for (std::size_t pad : {0u, 1u}) {
        Tensor x = random_tensor({2, 3, 7, 6}, rng);
        Tensor w = random_tensor({4, 3, 3, 3}, rng);
        Graph g;
        const Tensor& y = g.value(g.conv2d(g.constant(x), g.constant(w), {stride, pad}));
        Tensor ref = naive_conv(x, w, stride, pad);
        REQUIRE(y.shape() == ref.shape());
        for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-4));
      }
    }
  }

  TEST_CASE("conv2d rejects channel mismatch") {
    Graph g;
    CHECK_THROWS_AS(g.conv2d(g.constant(Tensor(Shape{1, 3, 4, 4})), g.constant(Tensor(Shape{2, 2, 3, 3})), {}),
                    ShapeError);
  }

  TEST_CASE("max pooling picks the window maximum and routes the gradient to it") {
    Graph g;
    std::vector<Real> v(16);
    for (std::size_t i = 0; i < 16; ++i) v[i] = static_cast<Real>(i);
    NodeId x = g.parameter(Tensor(Shape{1, 1, 4, 4}, v));
    NodeId pooled = g.max_pool2d(x);
    CHECK(g.value(pooled).values() == std::vector<Real>{5, 7, 13, 15});
    auto grads = g.backward(g.sum(pooled));
    const Tensor& dx = grads.at(x);
    double total = 0;
    for (Real d : dx.values()) total += d;
    CHECK(total == 4);
    CHECK(dx[5] == 1);
    CHECK(dx[15] == 1);
    CHECK(dx[0] == 0);
  }

  TEST_CASE("global average pooling and reshape") {
    Graph g;
    NodeId x = g.constant(Tensor(Shape{2, 3, 2, 2}, Real(2)));
    NodeId p = g.global_avg_pool(x);
    CHECK(g.value(p).shape() == Shape{2, 3});
    CHECK(g.value(p)[0] == 2);
    CHECK(g.value(g.reshape(x, {2, 12})).shape() == Shape{2, 12});
    CHECK_THROWS_AS(g.reshape(x, {5}), ShapeError);
  }

  TEST_CASE("batch norm output has zero mean per channel") {
    std::mt19937_64 rng(4);
    Graph g;
    NodeId x = g.constant(random_tensor({4, 2, 3, 3}, rng, 3.0));
    NodeId y = g.batch_norm(x, g.parameter(Tensor(Shape{2}, Real(1))), g.parameter(Tensor(Shape{2}, Real(0))),
                            Real(1e-5));
    const Tensor& v = g.value(y);
    for (std::size_t c = 0; c < 2; ++c) {
      double total = 0;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t i = 0; i < 9; ++i) total += v[(n * 2 + c) * 9 + i];
      CHECK(total / 36 == doctest::Approx(0.0).epsilon(1e-5).scale(1));
    }
  }

  TEST_CASE("forward values are deterministic") {
    auto build = [] {
      std::mt19937_64 rng(8);
      Graph g;
      NodeId x = g.constant(random_tensor({6, 4}, rng));
      NodeId w = g.parameter(random_tensor({4, 3}, rng));
      NodeId loss = g.mean(g.sigmoid(g.matmul(x, w)));
      return std::pair{g.value(loss).item(), g.backward(loss).at(w)};
    };
    auto a = build();
    auto b = build();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
  }
}

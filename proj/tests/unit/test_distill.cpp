#include <cmath>
#include <random>
#include <vector>

#include "annealkd/distill.hpp"
#include "annealkd/errors.hpp"
#include "annealkd/graph.hpp"
#include "doctest.h"

using namespace annealkd;
using autograd::Graph;
using autograd::NodeId;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sd);
  Tensor t(std::move(shape));
  for (Real& v : t.values()) v = static_cast<Real>(dist(rng));
  return t;
}

// Reference KL(softmax(t/T) || softmax(s/T)) averaged over rows.
double kl_oracle(const Tensor& s, const Tensor& t, double temperature) {
  const std::size_t n = s.dim(0), c = s.dim(1);
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> p(c), q(c);
    double zp = 0, zq = 0;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(t[r * c + j] / temperature);
      q[j] = std::exp(s[r * c + j] / temperature);
      zp += p[j];
      zq += q[j];
    }
    for (std::size_t j = 0; j < c; ++j) total += p[j] / zp * std::log((p[j] / zp) / (q[j] / zq));
  }
  return total / static_cast<double>(n);
}

double ce_oracle(const Tensor& s, const std::vector<std::size_t>& labels) {
  const std::size_t n = s.dim(0), c = s.dim(1);
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    double z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(double(s[r * c + j]));
    total += std::log(z) - s[r * c + labels[r]];
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("distill") {
  TEST_CASE("annealing factor endpoints and monotonicity") {
    CHECK(distill::annealing_factor(1, 10) == 1.0);
    CHECK(distill::annealing_factor(10, 10) == 0.1);
    CHECK(distill::annealing_factor(1, 1) == 1.0);
    for (int t = 2; t <= 10; ++t) {
      CHECK(distill::annealing_factor(t, 10) < distill::annealing_factor(t - 1, 10));
    }
    CHECK_THROWS_AS(distill::annealing_factor(0, 10), InvalidArgument);
    CHECK_THROWS_AS(distill::annealing_factor(11, 10), InvalidArgument);
  }

  TEST_CASE("schedule temperatures descend to one") {
    distill::AnnealingSchedule s;
    s.tau_max = 4;
    s.epochs_per_temperature = 3;
    CHECK(s.temperatures() == std::vector<int>{4, 3, 2, 1});
    CHECK(s.stage_one_epochs() == 12);
    s.tau_max = 10;
    s.epochs_per_temperature = 16;
    CHECK(s.stage_one_epochs() == 160);
  }

  TEST_CASE("schedule validation") {
    distill::AnnealingSchedule s;
    s.tau_max = 0;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.tau_max = 3;
    s.epochs_per_temperature = 0;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.epochs_per_temperature = 1;
    s.fine_tune_epochs = -1;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s.fine_tune_epochs = 0;
    CHECK_NOTHROW(s.validate());
  }

  TEST_CASE("vanilla KD configuration checks") {
    CHECK_THROWS_AS((distill::VanillaKDConfig{0.0, 0.5}.validate()), InvalidArgument);
    CHECK_THROWS_AS((distill::VanillaKDConfig{1.0, 1.5}.validate()), InvalidArgument);
    CHECK_THROWS_AS((distill::VanillaKDConfig{1.0, -0.1}.validate()), InvalidArgument);
    CHECK_NOTHROW((distill::VanillaKDConfig{4.0, 1.0}.validate()));
  }

  TEST_CASE("annealing loss value and gradient") {
    const Tensor zs = random_tensor({4, 3}, 1);
    const Tensor zt = random_tensor({4, 3}, 2, 3.0);
    const double phi = 0.3;
    double expected = 0;
    for (std::size_t i = 0; i < zs.size(); ++i) {
      const double d = double(zs[i]) - phi * double(static_cast<Real>(zt[i]));
      expected += d * d;
    }
    expected /= 4;
    Graph g;
    NodeId s = g.parameter(zs);
    NodeId loss = distill::annealing_kd_loss(g, s, zt, static_cast<Real>(phi));
    CHECK(g.value(loss).item() == doctest::Approx(expected).epsilon(1e-5));
    CHECK(distill::annealing_kd_loss(zs, zt, phi) == doctest::Approx(expected).epsilon(1e-5));
    const auto grads = g.backward(loss);
    const Tensor& grad = grads.at(s);
    for (std::size_t i = 0; i < zs.size(); ++i) {
      const double analytic = 2.0 * (double(zs[i]) - double(static_cast<Real>(phi)) * zt[i]) / 4.0;
      CHECK(grad[i] == doctest::Approx(analytic).epsilon(1e-4));
    }
  }

  TEST_CASE("annealing loss is zero when the student matches the scaled teacher") {
    const Tensor zt = random_tensor({5, 2}, 3);
    Tensor zs = zt;
    for (Real& v : zs.values()) v *= Real(0.5);
    CHECK(distill::annealing_kd_loss(zs, zt, 0.5) == doctest::Approx(0.0));
  }

  TEST_CASE("losses are non-negative") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Tensor zs = random_tensor({3, 4}, seed, 2.0);
      const Tensor zt = random_tensor({3, 4}, seed + 100, 2.0);
      const std::vector<std::size_t> labels{0, 3, 1};
      CHECK(distill::annealing_kd_loss(zs, zt, 0.7) >= 0);
      CHECK(distill::vanilla_kd_loss(zs, zt, labels, {2.0, 0.5}) >= 0);
      CHECK(distill::annealing_kl_loss(zs, zt, 3.0) >= -1e-7);
    }
  }

  TEST_CASE("vanilla KD matches the reference formula") {
    const Tensor zs = random_tensor({4, 5}, 7);
    const Tensor zt = random_tensor({4, 5}, 8, 2.0);
    const std::vector<std::size_t> labels{1, 4, 0, 2};
    for (double t : {1.0, 2.0, 4.0}) {
      for (double lambda : {0.0, 0.3, 1.0}) {
        const double expected = (1 - lambda) * ce_oracle(zs, labels) + lambda * t * t * kl_oracle(zs, zt, t);
        CHECK(distill::vanilla_kd_loss(zs, zt, labels, {t, lambda}) == doctest::Approx(expected).epsilon(1e-4));
      }
    }
  }

  TEST_CASE("vanilla KD is invariant to shifting teacher logits per row") {
    const Tensor zs = random_tensor({3, 4}, 9);
    const Tensor zt = random_tensor({3, 4}, 10);
    Tensor shifted = zt;
    for (std::size_t r = 0; r < 3; ++r)
      for (std::size_t c = 0; c < 4; ++c) shifted[r * 4 + c] += static_cast<Real>(r + 2);
    const std::vector<std::size_t> labels{0, 1, 2};
    CHECK(distill::vanilla_kd_loss(zs, zt, labels, {3.0, 0.7}) ==
          doctest::Approx(distill::vanilla_kd_loss(zs, shifted, labels, {3.0, 0.7})).epsilon(1e-5));
  }

  TEST_CASE("vanilla KD with lambda zero is cross entropy") {
    const Tensor zs = random_tensor({4, 3}, 11);
    const Tensor zt = random_tensor({4, 3}, 12);
    const std::vector<std::size_t> labels{0, 1, 2, 0};
    CHECK(distill::vanilla_kd_loss(zs, zt, labels, {2.0, 0.0}) ==
          doctest::Approx(distill::cross_entropy_loss(zs, labels)).epsilon(1e-6));
  }

  TEST_CASE("teacher logits never receive a gradient") {
    const Tensor zt = random_tensor({2, 3}, 13);
    Graph g;
    NodeId s = g.parameter(random_tensor({2, 3}, 14));
    NodeId loss = distill::vanilla_kd_loss(g, s, zt, std::vector<std::size_t>{0, 2}, {2.0, 0.5});
    auto grads = g.backward(loss);
    CHECK(grads.size() == 1);
    CHECK(grads.count(s) == 1);
  }

  TEST_CASE("regression fit loss") {
    CHECK(distill::regression_fit_loss(Tensor(Shape{1, 1}, Real(0)), Tensor(Shape{1, 1}, Real(2))) == 4);
    CHECK(distill::regression_fit_loss(Tensor(Shape{1, 2}, std::vector<Real>{1, 3}), Tensor(Shape{1, 2})) == 10);
    CHECK(distill::regression_fit_loss(Tensor(Shape{2, 1}, std::vector<Real>{1, 3}), Tensor(Shape{2, 1})) == 5);
  }

  TEST_CASE("regression KD interpolates the two targets") {
    const Tensor zs = random_tensor({6, 1}, 15);
    const Tensor zt = random_tensor({6, 1}, 16);
    const Tensor y = random_tensor({6, 1}, 17);
    const double fit = distill::regression_fit_loss(zs, y);
    const double match = distill::regression_fit_loss(zs, zt);
    CHECK(distill::regression_kd_loss(zs, zt, y, {1.0, 0.25}) ==
          doctest::Approx(0.75 * fit + 0.25 * match).epsilon(1e-5));
  }

  TEST_CASE("KL ablation at temperature one on identical logits is zero") {
    const Tensor z = random_tensor({3, 4}, 18);
    CHECK(distill::annealing_kl_loss(z, z, 1.0) == doctest::Approx(0.0));
    const Tensor single = random_tensor({3, 1}, 19);
    CHECK(distill::annealing_kl_loss(single, single, 2.0) == doctest::Approx(0.0));
  }

  TEST_CASE("KL ablation scales by the squared temperature") {
    const Tensor zs = random_tensor({3, 4}, 20);
    const Tensor zt = random_tensor({3, 4}, 21);
    CHECK(distill::annealing_kl_loss(zs, zt, 3.0) == doctest::Approx(9.0 * kl_oracle(zs, zt, 3.0)).epsilon(1e-4));
  }
}
